#include "rssm/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "rssm/errors.hpp"

namespace rssm {

namespace {

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double xlogy(double x, double y) { return x == 0.0 ? 0.0 : x * std::log(y); }

}  // namespace

ScenarioData generate_scenario(const ScenarioScript& script, const SwitchingModel& model) {
    if (script.segments.empty()) throw ValidationError("generate_scenario: empty script");
    auto report = validate_model(model);
    if (!report.empty()) throw ValidationError("generate_scenario: invalid model");
    const int k = model.regime_count();

    ScenarioData data;
    Mat identity_pi = Mat::Identity(k, k);
    std::size_t global_t = 0;

    for (std::size_t seg = 0; seg < script.segments.size(); ++seg) {
        const auto& segment = script.segments[seg];
        if (segment.regime < 0 || segment.regime >= k)
            throw ValidationError("generate_scenario: segment regime out of range");
        if (segment.windows < 1) throw ValidationError("generate_scenario: segment duration must be >= 1");

        // Pin the regime by sampling from a copy with an identity chain and a
        // one-hot start. Later segments continue the latent path: the pinned
        // model's initial state is one dynamics step from the last latent.
        SwitchingModel pinned = model;
        pinned.pi = TransitionMatrix(identity_pi);
        pinned.initial_regime_dist = Vec::Zero(k);
        pinned.initial_regime_dist(segment.regime) = 1.0;
        pinned.control_input.reset();
        if (seg > 0) {
            const RegimeParams& rp = model.regimes[segment.regime];
            pinned.initial_state_mean =
                rp.transition_matrix_a * data.latents.back() + model.control_at(global_t);
            pinned.initial_state_cov = rp.process_noise_q;
        }

        SampledTrajectory traj;
        if (seg == 0) {
            traj = sample_trajectory(pinned, segment.windows, script.seed);
        } else {
            RandomStream rng = RandomStream(script.seed).split(seg);
            traj = sample_trajectory(pinned, segment.windows, rng);
        }
        for (std::size_t t = 0; t < segment.windows; ++t) {
            data.observations.push_back(traj.observations[t]);
            data.truth_regimes.push_back(segment.regime);
            data.latents.push_back(traj.latents[t]);
            ++global_t;
        }
    }

    for (const auto& inj : script.injections) {
        if (inj.window >= data.observations.size()) continue;
        for (int dim : inj.dims) {
            if (dim >= 0 && dim < data.observations[inj.window].size())
                data.observations[inj.window](dim) += inj.magnitude;
        }
    }
    return data;
}

namespace {

/// Single-regime anomaly baseline: one Kalman filter, squared Mahalanobis
/// innovation score, quantile-calibrated threshold, no stage attribution.
DetectionResult run_baseline(const std::vector<Vec>& observations, const SwitchingModel& model,
                             const DetectionConfig& config) {
    SwitchingModel single = model;
    if (single.regime_count() > 1) {
        single.regimes = {model.regimes[0]};
        single.pi = TransitionMatrix(Mat::Ones(1, 1));
        single.initial_regime_dist = Vec::Ones(1);
    }

    DetectionResult out;
    out.adapted_model = single;
    GaussianState state(single.initial_state_mean, single.initial_state_cov);
    const RegimeParams& rp = single.regimes[0];

    std::vector<double> calibration_scores;
    std::optional<double> tau = config.tau_kl;
    std::vector<double> per_obs_ms;
    per_obs_ms.reserve(observations.size());

    for (std::size_t t = 0; t < observations.size(); ++t) {
        auto start = std::chrono::steady_clock::now();
        FilterStepResult r = t == 0 ? update_step(state, observations[t], rp)
                                    : filter_step(state, observations[t], Vec::Zero(single.latent_dim()), rp);
        state = r.updated;
        auto llt = cholesky_with_retry(r.innovation_cov);
        if (!llt) throw NumericalError("baseline innovation covariance not invertible", t);
        double score = r.innovation.dot(llt->solve(r.innovation));
        per_obs_ms.push_back(std::chrono::duration<double, std::milli>(
                                 std::chrono::steady_clock::now() - start)
                                 .count());

        BeliefState b;
        b.window_id = t;
        b.gamma = Vec::Ones(1);
        b.state_mean = state.mean;
        b.state_cov = state.covariance;
        b.regime_innovations = {r.innovation};
        b.kl_score = score;
        b.entropy = 0.0;
        out.beliefs.push_back(std::move(b));

        bool calibrating = !tau && t < config.calibration_windows;
        if (calibrating) {
            calibration_scores.push_back(score);
            continue;
        }
        if (!tau) {
            if (calibration_scores.empty())
                throw ValidationError("baseline: no threshold and no calibration samples");
            // Squared-Mahalanobis scores are thin-tailed; a small headroom
            // over the quantile suffices.
            tau = 1.5 * calibrate_tau(calibration_scores, config.tau_quantile);
        }
        if (score > *tau) {
            AlertRecord a;
            a.timestamp = static_cast<double>(t) * config.window_seconds;
            a.stage_posterior = Vec::Ones(1);
            a.kl_score = score;
            a.elbo_entropy = 0.0;
            a.current_stage = "Anomaly";
            a.predicted_stage = "Anomaly";
            a.predicted_posterior = Vec::Ones(1);
            out.alerts.push_back(std::move(a));
        }
    }

    out.tau_used = tau.value_or(0.0);
    double mean = std::accumulate(per_obs_ms.begin(), per_obs_ms.end(), 0.0) /
                  static_cast<double>(per_obs_ms.size());
    double var = 0.0;
    for (double v : per_obs_ms) var += (v - mean) * (v - mean);
    out.latency.mean_ms = mean;
    out.latency.stddev_ms = std::sqrt(var / static_cast<double>(per_obs_ms.size()));
    return out;
}

}  // namespace

DetectionResult run_detection(const std::vector<Vec>& observations, const SwitchingModel& model,
                              const DetectionConfig& config,
                              const ParamSnapshotSink& snapshot_sink) {
    if (observations.empty()) throw ValidationError("run_detection: no observations");
    auto report = validate_model(model);
    if (!report.empty()) throw ValidationError("run_detection: invalid model");
    if (config.window_batch < 1) throw ValidationError("run_detection: window_batch must be >= 1");

    if (config.single_regime_baseline) return run_baseline(observations, model, config);

    const int k = model.regime_count();
    SwitchingModel current = model;

    Vec pi0 = config.inference.initial_regime_dist.value_or(
        Vec::Constant(k, 1.0 / static_cast<double>(k)));

    DetectionResult out;
    out.beliefs.reserve(observations.size());

    GaussianState carry_state(current.initial_state_mean, current.initial_state_cov);
    Vec carry_gamma = pi0;
    Mat carry_smoothed_cov;  // last smoothed covariance of the previous batch
    bool first_batch = true;

    std::vector<double> calibration_scores;
    std::optional<double> tau = config.tau_kl;
    std::vector<double> per_obs_ms;
    per_obs_ms.reserve(observations.size());

    InferenceConfig inf_config = config.inference;
    inf_config.initial_regime_dist.reset();  // init passed explicitly per batch

    for (std::size_t batch_start = 0; batch_start < observations.size();
         batch_start += config.window_batch) {
        auto batch_begin_time = std::chrono::steady_clock::now();
        const std::size_t batch_len =
            std::min(config.window_batch, observations.size() - batch_start);
        std::vector<Vec> slice(observations.begin() + batch_start,
                               observations.begin() + batch_start + batch_len);

        InferenceInit init;
        init.state = carry_state;
        init.apply_dynamics_at_first = !first_batch;
        init.regime_dist =
            first_batch ? pi0 : predict_regime(carry_gamma, current.pi, 1);

        VariationalResult res;
        try {
            res = infer(current, slice, std::nullopt, inf_config, init);
        } catch (const NumericalError& e) {
            throw NumericalError(std::string("detection stream failed: ") + e.what(),
                                 e.time_index() ? *e.time_index() + batch_start
                                                : std::optional<std::size_t>(batch_start));
        }

        // Per-step beliefs, KL scores, running chain entropy over this batch.
        double running_entropy = 0.0;
        for (Eigen::Index s = 0; s < k; ++s)
            running_entropy -= xlogy(res.posteriors.gamma(0, s), res.posteriors.gamma(0, s));

        for (std::size_t i = 0; i < batch_len; ++i) {
            const std::size_t t = batch_start + i;
            Vec gamma_t = res.posteriors.gamma.row(static_cast<Eigen::Index>(i)).transpose();

            double kl;
            if (t == 0) {
                // No transition before the first observation: predict with the prior.
                kl = 0.0;
                for (Eigen::Index s = 0; s < k; ++s) {
                    if (gamma_t(s) == 0.0) continue;
                    kl += gamma_t(s) * std::log(gamma_t(s) / std::max(pi0(s), 1e-12));
                }
            } else {
                const Vec& prev = i == 0 ? carry_gamma
                                         : Vec(res.posteriors.gamma.row(static_cast<Eigen::Index>(i - 1))
                                                   .transpose());
                kl = kl_gate(gamma_t, prev, current.pi);
            }

            if (i > 0) {
                const Mat& x = res.posteriors.xi[i - 1];
                for (Eigen::Index a = 0; a < k; ++a) {
                    double denom = std::max(res.posteriors.gamma(static_cast<Eigen::Index>(i - 1), a),
                                            config.em.division_floor);
                    for (Eigen::Index b = 0; b < k; ++b)
                        running_entropy -= xlogy(x(a, b), x(a, b) / denom);
                }
            }

            BeliefState belief;
            belief.window_id = t;
            belief.gamma = gamma_t;
            if (i > 0) belief.xi = res.posteriors.xi[i - 1];
            belief.state_mean = res.smoothed_states[i].mean;
            belief.state_cov = res.smoothed_states[i].covariance;
            belief.regime_innovations = res.bank_innovations[i];
            belief.kl_score = kl;
            belief.entropy = running_entropy;
            out.beliefs.push_back(std::move(belief));

            const bool calibrating = !tau && t < config.calibration_windows;
            if (calibrating) {
                calibration_scores.push_back(kl);
                continue;
            }
            if (!tau) {
                if (calibration_scores.empty())
                    throw ValidationError("run_detection: no gate threshold and no calibration samples");
                tau = config.tau_headroom * calibrate_tau(calibration_scores, config.tau_quantile);
            }

            double timestamp = static_cast<double>(t) * config.window_seconds;
            if (config.kl_gate_enabled) {
                GateConfig gate{*tau};
                auto alert = build_alert(timestamp, gamma_t, kl, running_entropy, current.pi,
                                         gate, current.regime_labels);
                if (alert) out.alerts.push_back(std::move(*alert));
            } else {
                // Ungated variant: alert whenever the current or predicted
                // stage leaves Normal.
                Vec predicted = predict_regime(gamma_t, current.pi, 1);
                if (argmax_lowest_tie(gamma_t) != 0 || argmax_lowest_tie(predicted) != 0) {
                    AlertRecord a;
                    a.timestamp = timestamp;
                    a.stage_posterior = gamma_t;
                    a.kl_score = kl;
                    a.elbo_entropy = running_entropy;
                    a.predicted_posterior = predicted;
                    a.current_stage_index = argmax_lowest_tie(gamma_t);
                    a.predicted_stage_index = argmax_lowest_tie(predicted);
                    const auto& labels = current.regime_labels.empty() ? default_regime_labels()
                                                                       : current.regime_labels;
                    a.current_stage = labels[a.current_stage_index];
                    a.predicted_stage = labels[a.predicted_stage_index];
                    out.alerts.push_back(std::move(a));
                }
            }
        }

        // Online M-step over the batch, in step order; parameters swap in for
        // the next batch (snapshot isolation at the batch boundary).
        if (config.adapt_parameters) {
            for (std::size_t i = 0; i < batch_len; ++i) {
                Vec gamma_t = res.posteriors.gamma.row(static_cast<Eigen::Index>(i)).transpose();
                if (i > 0) {
                    Vec gamma_prev =
                        res.posteriors.gamma.row(static_cast<Eigen::Index>(i - 1)).transpose();
                    current.pi =
                        update_transition(current.pi, res.posteriors.xi[i - 1], gamma_prev, config.em);
                }
                for (int s = 0; s < k; ++s) {
                    current.regimes[s].observation_noise_r = update_obs_noise(
                        current.regimes[s].observation_noise_r, gamma_t(s),
                        res.bank_innovations[i][s], current.regimes[s].observation_matrix_c,
                        res.bank_filtered_cov[i][s], config.em);
                }
                const bool has_prev = i > 0 || !first_batch;
                if (!has_prev) continue;
                const Mat& p_prev =
                    i > 0 ? res.smoothed_states[i - 1].covariance : carry_smoothed_cov;
                for (int s = 0; s < k; ++s) {
                    if (config.em.classical_q_update) {
                        const Vec& mean_prev =
                            i > 0 ? res.smoothed_states[i - 1].mean : carry_state.mean;
                        Vec d = res.smoothed_states[i].mean - res.a_eff[i] * mean_prev;
                        Mat second = d * d.transpose() + res.smoothed_states[i].covariance +
                                     res.a_eff[i] * p_prev * res.a_eff[i].transpose();
                        if (i > 0)
                            second -= res.lag_one_cov[i - 1] * res.a_eff[i].transpose() +
                                      res.a_eff[i] * res.lag_one_cov[i - 1].transpose();
                        current.regimes[s].process_noise_q = update_proc_noise_classical(
                            current.regimes[s].process_noise_q, gamma_t(s), second, config.em);
                    } else {
                        current.regimes[s].process_noise_q = update_proc_noise(
                            current.regimes[s].process_noise_q, gamma_t(s),
                            res.smoothed_states[i].covariance, p_prev, res.a_eff[i], config.em);
                    }
                }
            }
        }

        carry_state = res.smoothed_states.back();
        carry_gamma = res.posteriors.gamma.row(static_cast<Eigen::Index>(batch_len - 1)).transpose();
        carry_smoothed_cov = res.smoothed_states.back().covariance;
        first_batch = false;
        out.elbo_final = res.elbo_trace.back();

        double batch_ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - batch_begin_time)
                              .count();
        for (std::size_t i = 0; i < batch_len; ++i)
            per_obs_ms.push_back(batch_ms / static_cast<double>(batch_len));

        if (config.save_params_every && snapshot_sink) {
            std::size_t cadence = *config.save_params_every;
            std::size_t before = batch_start / cadence;
            std::size_t after = (batch_start + batch_len) / cadence;
            if (after > before) snapshot_sink(batch_start + batch_len, current);
        }
    }

    out.adapted_model = current;
    out.tau_used = tau.value_or(0.0);
    double mean = std::accumulate(per_obs_ms.begin(), per_obs_ms.end(), 0.0) /
                  static_cast<double>(per_obs_ms.size());
    double var = 0.0;
    for (double v : per_obs_ms) var += (v - mean) * (v - mean);
    out.latency.mean_ms = mean;
    out.latency.stddev_ms = std::sqrt(var / static_cast<double>(per_obs_ms.size()));
    return out;
}

EvaluationReport evaluate(const std::vector<BeliefState>& beliefs,
                          const std::vector<AlertRecord>& alerts,
                          const std::vector<int>& truth_regimes, double window_seconds,
                          const EvaluationOptions& options) {
    if (truth_regimes.empty()) throw ValidationError("evaluate: empty ground truth");
    if (beliefs.size() != truth_regimes.size())
        throw ValidationError("evaluate: belief stream and ground truth are not aligned");

    const std::size_t n = truth_regimes.size();
    EvaluationReport rep;

    // Windows carrying at least one alert.
    std::vector<bool> alerted(n, false);
    for (const auto& a : alerts) {
        auto w = static_cast<std::size_t>(std::llround(a.timestamp / window_seconds));
        if (w < n) alerted[w] = true;
    }

    std::vector<int> predicted(n, 0);
    if (options.has_stage_attribution) {
        for (std::size_t t = 0; t < n; ++t) predicted[t] = argmax_lowest_tie(beliefs[t].gamma);
    } else {
        for (std::size_t t = 0; t < n; ++t) predicted[t] = alerted[t] ? 1 : 0;
    }

    auto f1_binary = [&](auto truth_positive, auto pred_positive) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t t = 0; t < n; ++t) {
            bool truth_p = truth_positive(t);
            bool pred_p = pred_positive(t);
            if (truth_p && pred_p) ++tp;
            if (!truth_p && pred_p) ++fp;
            if (truth_p && !pred_p) ++fn;
        }
        if (tp == 0) return 0.0;
        double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
        return 2.0 * precision * recall / (precision + recall);
    };

    rep.f1_aggregate = f1_binary([&](std::size_t t) { return truth_regimes[t] != 0; },
                                 [&](std::size_t t) { return predicted[t] != 0; });

    std::vector<int> classes;
    for (int r : truth_regimes)
        if (r != 0 && std::find(classes.begin(), classes.end(), r) == classes.end())
            classes.push_back(r);
    std::sort(classes.begin(), classes.end());
    for (int c : classes) {
        rep.f1_per_class.emplace_back(
            c, f1_binary([&](std::size_t t) { return truth_regimes[t] == c; },
                         [&](std::size_t t) { return predicted[t] == c; }));
    }

    std::size_t normal_windows = 0, normal_alerted = 0;
    for (std::size_t t = 0; t < n; ++t) {
        if (truth_regimes[t] == 0) {
            ++normal_windows;
            if (alerted[t]) ++normal_alerted;
        }
    }
    rep.false_positive_rate =
        normal_windows > 0 ? static_cast<double>(normal_alerted) / static_cast<double>(normal_windows)
                           : 0.0;

    if (options.has_stage_attribution) {
        std::size_t correct = 0;
        for (std::size_t t = 0; t < n; ++t)
            if (predicted[t] == truth_regimes[t]) ++correct;
        rep.stage_attribution_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    }

    // Early detection margin: onset of the targeted segment minus the first
    // attack-implicating alert at or before it.
    std::optional<std::size_t> onset;
    for (std::size_t t = 0; t < n; ++t) {
        if (truth_regimes[t] >= options.onset_min_regime) {
            onset = t;
            break;
        }
    }
    if (onset) {
        double onset_time = static_cast<double>(*onset) * window_seconds;
        std::optional<double> first_alert;
        for (const auto& a : alerts) {
            bool implicates = a.current_stage_index != 0 || a.predicted_stage_index != 0;
            if (!implicates || a.timestamp > onset_time) continue;
            if (!first_alert || a.timestamp < *first_alert) first_alert = a.timestamp;
        }
        if (first_alert) rep.early_detection_margin_seconds = onset_time - *first_alert;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// File plumbing

void write_belief_csv(const std::string& path, const std::vector<BeliefState>& beliefs) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open for writing: " + path);
    const Eigen::Index k = beliefs.empty() ? 0 : beliefs[0].gamma.size();
    out << "window_id";
    for (Eigen::Index s = 0; s < k; ++s) out << ",gamma_" << s;
    out << ",kl,entropy\n";
    for (const auto& b : beliefs) {
        out << b.window_id;
        for (Eigen::Index s = 0; s < k; ++s) out << "," << fmt_double(b.gamma(s));
        out << "," << fmt_double(b.kl_score) << "," << fmt_double(b.entropy) << "\n";
    }
}

std::vector<BeliefState> read_belief_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open beliefs file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("beliefs csv: empty file");
    std::size_t gamma_cols = 0;
    {
        std::istringstream hs(line);
        std::string col;
        while (std::getline(hs, col, ','))
            if (col.rfind("gamma_", 0) == 0) ++gamma_cols;
    }
    if (gamma_cols == 0) throw ValidationError("beliefs csv: no gamma columns in header");
    std::vector<BeliefState> beliefs;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string tok;
        std::vector<std::string> f;
        while (std::getline(ls, tok, ',')) f.push_back(tok);
        if (f.size() != gamma_cols + 3)
            throw ValidationError("beliefs csv row " + std::to_string(row) + ": wrong field count");
        BeliefState b;
        b.window_id = std::stoull(f[0]);
        b.gamma = Vec(gamma_cols);
        for (std::size_t s = 0; s < gamma_cols; ++s) b.gamma(s) = std::stod(f[1 + s]);
        b.kl_score = std::stod(f[1 + gamma_cols]);
        b.entropy = std::stod(f[2 + gamma_cols]);
        beliefs.push_back(std::move(b));
    }
    return beliefs;
}

void write_truth_csv(const std::string& path, const std::vector<int>& truth) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open for writing: " + path);
    out << "window_id,regime\n";
    for (std::size_t t = 0; t < truth.size(); ++t) out << t << "," << truth[t] << "\n";
}

std::vector<int> read_truth_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open truth file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("truth csv: empty file");
    std::vector<int> truth;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto comma = line.find(',');
        if (comma == std::string::npos) throw ValidationError("truth csv: malformed row");
        truth.push_back(std::stoi(line.substr(comma + 1)));
    }
    return truth;
}

std::string report_to_json(const EvaluationReport& report) {
    nlohmann::json j;
    j["f1_aggregate"] = report.f1_aggregate;
    nlohmann::json per_class = nlohmann::json::object();
    for (const auto& [regime, f1] : report.f1_per_class)
        per_class[std::to_string(regime)] = f1;
    j["f1_per_class"] = std::move(per_class);
    j["false_positive_rate"] = report.false_positive_rate;
    if (report.stage_attribution_accuracy)
        j["stage_attribution_accuracy"] = *report.stage_attribution_accuracy;
    else
        j["stage_attribution_accuracy"] = nullptr;
    if (report.early_detection_margin_seconds)
        j["early_detection_margin_seconds"] = *report.early_detection_margin_seconds;
    else
        j["early_detection_margin_seconds"] = nullptr;
    j["latency_ms"] = {{"mean", report.latency.mean_ms}, {"stddev", report.latency.stddev_ms}};
    j["elbo_final"] = report.elbo_final;
    return j.dump(2);
}

ScenarioScript script_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("scenario json: ") + e.what());
    }
    ScenarioScript script;
    script.seed = j.value("seed", 0ULL);
    if (!j.contains("segments") || !j["segments"].is_array() || j["segments"].empty())
        throw ValidationError("scenario json: missing segments");
    for (const auto& seg : j["segments"]) {
        ScenarioScript::Segment s;
        s.regime = seg.at("regime").get<int>();
        s.windows = seg.at("windows").get<std::size_t>();
        script.segments.push_back(s);
    }
    if (j.contains("injections")) {
        for (const auto& inj : j["injections"]) {
            ScenarioScript::Injection i;
            i.window = inj.at("window").get<std::size_t>();
            i.magnitude = inj.at("magnitude").get<double>();
            i.dims = inj.at("dims").get<std::vector<int>>();
            script.injections.push_back(std::move(i));
        }
    }
    return script;
}

ScenarioScript load_script(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open scenario script: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return script_from_json(buf.str());
}

}  // namespace rssm
