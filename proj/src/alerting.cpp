#include "rssm/alerting.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "rssm/errors.hpp"

namespace rssm {

namespace {
constexpr double kPredictionFloor = 1e-12;
}

double kl_gate(const Vec& gamma_t, const Vec& gamma_prev, const TransitionMatrix& pi) {
    if (gamma_t.size() != gamma_prev.size() || gamma_t.size() != pi.probabilities.rows())
        throw ValidationError("kl_gate: dimension mismatch");
    Vec predicted = pi.probabilities.transpose() * gamma_prev;
    double kl = 0.0;
    for (Eigen::Index s = 0; s < gamma_t.size(); ++s) {
        if (gamma_t(s) == 0.0) continue;
        kl += gamma_t(s) * std::log(gamma_t(s) / std::max(predicted(s), kPredictionFloor));
    }
    return kl;
}

int argmax_lowest_tie(const Vec& v) {
    int best = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i)
        if (v(i) > v(best)) best = static_cast<int>(i);
    return best;
}

std::optional<AlertRecord> build_alert(double timestamp, const Vec& gamma_t, double kl,
                                       double entropy, const TransitionMatrix& pi,
                                       const GateConfig& config,
                                       const std::vector<std::string>& labels) {
    if (!(kl > config.tau_kl)) return std::nullopt;

    const std::vector<std::string>& names =
        labels.empty() ? default_regime_labels() : labels;
    auto label_of = [&names](int s) {
        return s < static_cast<int>(names.size()) ? names[s] : ("Regime" + std::to_string(s));
    };

    AlertRecord rec;
    rec.timestamp = timestamp;
    rec.stage_posterior = gamma_t;
    rec.kl_score = kl;
    rec.elbo_entropy = entropy;
    rec.predicted_posterior = predict_regime(gamma_t, pi, 1);
    rec.current_stage_index = argmax_lowest_tie(gamma_t);
    rec.predicted_stage_index = argmax_lowest_tie(rec.predicted_posterior);
    rec.current_stage = label_of(rec.current_stage_index);
    rec.predicted_stage = label_of(rec.predicted_stage_index);
    return rec;
}

double calibrate_tau(std::vector<double> kl_samples, double quantile) {
    if (kl_samples.empty()) throw ValidationError("calibrate_tau: no samples");
    std::sort(kl_samples.begin(), kl_samples.end());
    double pos = quantile * static_cast<double>(kl_samples.size() - 1);
    std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    std::size_t hi = std::min(lo + 1, kl_samples.size() - 1);
    double frac = pos - static_cast<double>(lo);
    double tau = kl_samples[lo] * (1.0 - frac) + kl_samples[hi] * frac;
    // The gate is strict; an all-zero calibration stream still needs tau > 0.
    return std::max(tau, kPredictionFloor);
}

std::string alert_to_json(const AlertRecord& alert) {
    nlohmann::json j;
    j["timestamp"] = alert.timestamp;
    j["stage_posterior"] = std::vector<double>(alert.stage_posterior.data(),
                                               alert.stage_posterior.data() +
                                                   alert.stage_posterior.size());
    j["kl_score"] = alert.kl_score;
    j["elbo_entropy"] = alert.elbo_entropy;
    j["current_stage"] = alert.current_stage;
    j["predicted_stage"] = alert.predicted_stage;
    j["predicted_posterior"] = std::vector<double>(alert.predicted_posterior.data(),
                                                   alert.predicted_posterior.data() +
                                                       alert.predicted_posterior.size());
    return j.dump();
}

void write_alert_jsonl(const std::string& path, const std::vector<AlertRecord>& alerts) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open for writing: " + path);
    for (const auto& a : alerts) out << alert_to_json(a) << "\n";
}

std::vector<AlertRecord> read_alert_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open alerts file: " + path);
    std::vector<AlertRecord> alerts;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ValidationError("alerts line " + std::to_string(row) + ": " + e.what());
        }
        AlertRecord a;
        a.timestamp = j.at("timestamp").get<double>();
        auto sp = j.at("stage_posterior").get<std::vector<double>>();
        a.stage_posterior = Eigen::Map<Vec>(sp.data(), sp.size());
        a.kl_score = j.at("kl_score").get<double>();
        a.elbo_entropy = j.at("elbo_entropy").get<double>();
        a.current_stage = j.at("current_stage").get<std::string>();
        a.predicted_stage = j.at("predicted_stage").get<std::string>();
        auto pp = j.at("predicted_posterior").get<std::vector<double>>();
        a.predicted_posterior = Eigen::Map<Vec>(pp.data(), pp.size());
        a.current_stage_index = argmax_lowest_tie(a.stage_posterior);
        a.predicted_stage_index = argmax_lowest_tie(a.predicted_posterior);
        alerts.push_back(std::move(a));
    }
    return alerts;
}

}  // namespace rssm
