#include "rssm/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "rssm/errors.hpp"

namespace rssm {

namespace {

constexpr double kRowSumTolerance = 1e-12;

Mat normalize_rows(Mat m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        double s = m.row(i).sum();
        if (s > 0.0) m.row(i) /= s;
    }
    return m;
}

}  // namespace

RegimeParams::RegimeParams(Mat a, Mat c, Mat q, Mat r)
    : transition_matrix_a(std::move(a)),
      observation_matrix_c(std::move(c)),
      process_noise_q(floor_psd(std::move(q))),
      observation_noise_r(floor_psd(std::move(r))) {}

TransitionMatrix::TransitionMatrix(Mat probs) : probabilities(normalize_rows(std::move(probs))) {}

Vec SwitchingModel::control_at(std::size_t t) const {
    if (control_input && t < control_input->size()) return (*control_input)[t];
    return Vec::Zero(latent_dim());
}

std::vector<ModelViolation> validate_model(const SwitchingModel& model) {
    std::vector<ModelViolation> report;
    auto add = [&report](std::string code, std::string message) {
        report.push_back({std::move(code), std::move(message)});
    };

    const int k = model.regime_count();
    if (k == 0) {
        add("no_regimes", "model has no regimes");
        return report;
    }
    const Eigen::Index n = model.regimes[0].latent_dim();
    const Eigen::Index m = model.regimes[0].obs_dim();

    for (int s = 0; s < k; ++s) {
        const RegimeParams& rp = model.regimes[s];
        std::string tag = "regime " + std::to_string(s);
        if (rp.latent_dim() != n || rp.obs_dim() != m ||
            rp.transition_matrix_a.cols() != n || rp.observation_matrix_c.cols() != n ||
            rp.process_noise_q.rows() != n || rp.process_noise_q.cols() != n ||
            rp.observation_noise_r.rows() != m || rp.observation_noise_r.cols() != m) {
            add("dimension_mismatch", tag + ": matrix dimensions inconsistent");
            continue;
        }
        if (!all_finite(rp.transition_matrix_a) || !all_finite(rp.observation_matrix_c) ||
            !all_finite(rp.process_noise_q) || !all_finite(rp.observation_noise_r)) {
            add("non_finite_entry", tag + ": non-finite parameter entry");
            continue;
        }
        if ((rp.process_noise_q - rp.process_noise_q.transpose()).cwiseAbs().maxCoeff() > 0.0)
            add("covariance_not_symmetric", tag + ": Q not symmetric");
        if ((rp.observation_noise_r - rp.observation_noise_r.transpose()).cwiseAbs().maxCoeff() > 0.0)
            add("covariance_not_symmetric", tag + ": R not symmetric");
        Eigen::SelfAdjointEigenSolver<Mat> q_eigs(symmetrize(rp.process_noise_q));
        if (q_eigs.eigenvalues().minCoeff() < -1e-12)
            add("covariance_not_psd", tag + ": Q has a negative eigenvalue");
        Eigen::SelfAdjointEigenSolver<Mat> r_eigs(symmetrize(rp.observation_noise_r));
        if (r_eigs.eigenvalues().minCoeff() < kCovarianceFloor * 0.5)
            add("covariance_not_psd", tag + ": R smallest eigenvalue below the regularisation floor");
    }

    if (model.pi.probabilities.rows() != k || model.pi.probabilities.cols() != k) {
        add("dimension_mismatch", "pi is not K x K");
    } else {
        if (!all_finite(model.pi.probabilities)) add("non_finite_entry", "pi has non-finite entries");
        for (int i = 0; i < k; ++i) {
            double row_sum = model.pi.probabilities.row(i).sum();
            if (std::abs(row_sum - 1.0) > kRowSumTolerance)
                add("pi_row_not_stochastic",
                    "pi row " + std::to_string(i) + " sums to " + std::to_string(row_sum));
            if (model.pi.probabilities.row(i).minCoeff() < 0.0 ||
                model.pi.probabilities.row(i).maxCoeff() > 1.0)
                add("pi_entry_out_of_range", "pi row " + std::to_string(i) + " has entries outside [0, 1]");
        }
    }

    if (model.initial_regime_dist.size() != k) {
        add("dimension_mismatch", "initial_regime_dist length != K");
    } else if (std::abs(model.initial_regime_dist.sum() - 1.0) > kRowSumTolerance ||
               model.initial_regime_dist.minCoeff() < 0.0) {
        add("initial_regime_dist_invalid", "initial regime distribution does not sum to 1");
    }

    if (model.initial_state_mean.size() != n) add("dimension_mismatch", "initial_state_mean length != n");
    if (model.initial_state_cov.rows() != n || model.initial_state_cov.cols() != n) {
        add("dimension_mismatch", "initial_state_cov is not n x n");
    } else {
        Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(model.initial_state_cov));
        if (es.eigenvalues().minCoeff() < -1e-12)
            add("covariance_not_psd", "initial_state_cov has a negative eigenvalue");
        if ((model.initial_state_cov - model.initial_state_cov.transpose()).cwiseAbs().maxCoeff() > 0.0)
            add("covariance_not_symmetric", "initial_state_cov not symmetric");
    }
    if (!all_finite(model.initial_state_mean)) add("non_finite_entry", "initial_state_mean non-finite");

    if (model.control_input) {
        for (std::size_t t = 0; t < model.control_input->size(); ++t) {
            if ((*model.control_input)[t].size() != n) {
                add("dimension_mismatch", "control input at step " + std::to_string(t) + " has wrong length");
                break;
            }
        }
    }
    return report;
}

namespace {

std::string report_to_string(const std::vector<ModelViolation>& report) {
    std::ostringstream os;
    os << "invalid model:";
    for (const auto& v : report) os << " [" << v.code << "] " << v.message << ";";
    return os.str();
}

}  // namespace

SampledTrajectory sample_trajectory(const SwitchingModel& model, std::size_t steps,
                                    std::uint64_t seed) {
    RandomStream rng(seed);
    return sample_trajectory(model, steps, rng);
}

SampledTrajectory sample_trajectory(const SwitchingModel& model, std::size_t steps,
                                    RandomStream& rng) {
    if (steps < 1) throw ValidationError("sample_trajectory requires steps >= 1");
    auto report = validate_model(model);
    if (!report.empty()) throw ValidationError(report_to_string(report));

    const Eigen::Index n = model.latent_dim();
    const Eigen::Index m = model.obs_dim();

    // Square-root factors; eigenvalues at the covariance floor are treated as
    // exactly degenerate so that zero-noise configurations sample exact zeros.
    Mat init_sqrt = degenerate_aware_sqrt(model.initial_state_cov);
    std::vector<Mat> q_sqrt;
    std::vector<Mat> r_sqrt;
    q_sqrt.reserve(model.regimes.size());
    r_sqrt.reserve(model.regimes.size());
    for (const auto& rp : model.regimes) {
        q_sqrt.push_back(degenerate_aware_sqrt(rp.process_noise_q));
        r_sqrt.push_back(degenerate_aware_sqrt(rp.observation_noise_r));
    }

    SampledTrajectory traj;
    traj.regimes.resize(steps);
    traj.latents.resize(steps);
    traj.observations.resize(steps);

    for (std::size_t t = 0; t < steps; ++t) {
        int s;
        if (t == 0) {
            s = rng.categorical(model.initial_regime_dist);
        } else {
            s = rng.categorical(model.pi.row(traj.regimes[t - 1]));
        }
        traj.regimes[t] = s;
        const RegimeParams& rp = model.regimes[s];
        if (t == 0) {
            traj.latents[0] = model.initial_state_mean + init_sqrt * rng.gaussian_vector(n);
        } else {
            traj.latents[t] = rp.transition_matrix_a * traj.latents[t - 1] + model.control_at(t) +
                              q_sqrt[s] * rng.gaussian_vector(n);
        }
        traj.observations[t] =
            rp.observation_matrix_c * traj.latents[t] + r_sqrt[s] * rng.gaussian_vector(m);
    }
    return traj;
}

std::vector<std::string> default_regime_labels() {
    return {"Normal", "Reconnaissance", "LateralMovement", "Exfiltration"};
}

SwitchingModel default_killchain_model(int k, Eigen::Index latent_dim, Eigen::Index obs_dim) {
    if (k != 4) throw ValidationError("default_killchain_model requires k == 4");
    if (latent_dim < 4 || obs_dim < 4)
        throw ValidationError("default_killchain_model requires latent_dim >= 4 and obs_dim >= 4");

    const Eigen::Index n = latent_dim;
    const Eigen::Index m = obs_dim;

    // Latent dimensions are split into four behavioural groups: inter-arrival
    // timing, port diversity, payload/volume, stateful behaviour. Observation
    // dimensions map group-wise onto the latents that drive them.
    auto group_of_latent = [n](Eigen::Index i) { return static_cast<int>((i * 4) / n); };
    auto group_of_obs = [m](Eigen::Index i) { return static_cast<int>((i * 4) / m); };

    std::vector<std::vector<Eigen::Index>> latents_in_group(4);
    for (Eigen::Index i = 0; i < n; ++i) latents_in_group[group_of_latent(i)].push_back(i);

    Mat stable_a = Mat::Zero(n, n);
    for (int g = 0; g < 4; ++g) {
        const auto& dims = latents_in_group[g];
        for (std::size_t j = 0; j < dims.size(); ++j) {
            stable_a(dims[j], dims[j]) = 0.80;
            if (j + 1 < dims.size()) {
                // Weak rotation inside the group keeps modes coupled but stable.
                stable_a(dims[j], dims[j + 1]) = 0.10;
                stable_a(dims[j + 1], dims[j]) = -0.10;
            }
        }
    }

    Mat c = Mat::Zero(m, n);
    for (Eigen::Index i = 0; i < m; ++i) {
        const auto& dims = latents_in_group[group_of_obs(i)];
        c(i, dims[0]) = 1.0;
        if (dims.size() > 1) {
            double w = 0.6 - 0.25 * static_cast<double>(i % 4);
            c(i, dims[1]) = w;
        }
    }

    const double base_q = 0.05;
    const double base_r = 0.10;
    const double elevation = 10.0;

    Mat q_normal = base_q * Mat::Identity(n, n);

    Mat q_recon = q_normal;
    for (Eigen::Index i : latents_in_group[1]) q_recon(i, i) *= elevation;

    Mat q_lateral = q_normal;
    for (Eigen::Index i : latents_in_group[3]) q_lateral(i, i) *= elevation;

    Mat a_exfil = stable_a;
    // One unstable mode on the first payload/volume latent: sustained growth.
    Eigen::Index growth_dim = latents_in_group[2][0];
    a_exfil.row(growth_dim).setZero();
    a_exfil.col(growth_dim).setZero();
    a_exfil(growth_dim, growth_dim) = 1.05;

    Mat r = base_r * Mat::Identity(m, m);

    SwitchingModel model;
    model.regimes.push_back(RegimeParams(stable_a, c, q_normal, r));
    model.regimes.push_back(RegimeParams(stable_a, c, q_recon, r));
    model.regimes.push_back(RegimeParams(stable_a, c, q_lateral, r));
    model.regimes.push_back(RegimeParams(a_exfil, c, q_normal, r));

    Mat pi(4, 4);
    pi << 0.92, 0.07, 0.01, 0.00,
          0.05, 0.78, 0.15, 0.02,
          0.00, 0.03, 0.72, 0.25,
          0.02, 0.00, 0.04, 0.94;
    model.pi = TransitionMatrix(pi);

    model.initial_regime_dist = Vec::Zero(4);
    model.initial_regime_dist(0) = 1.0;  // scenarios start in Normal
    model.initial_state_mean = Vec::Zero(n);
    model.initial_state_cov = Mat::Identity(n, n);
    model.regime_labels = default_regime_labels();
    return model;
}

namespace {

using nlohmann::json;

json matrix_to_json(const Mat& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

json vector_to_json(const Vec& v) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
    return arr;
}

Mat matrix_from_json(const json& j, const char* what) {
    if (!j.is_array() || j.empty() || !j[0].is_array())
        throw ValidationError(std::string("model json: ") + what + " must be a nested array");
    Mat m(j.size(), j[0].size());
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (j[i].size() != static_cast<std::size_t>(m.cols()))
            throw ValidationError(std::string("model json: ragged rows in ") + what);
        for (std::size_t c = 0; c < j[i].size(); ++c) m(i, c) = j[i][c].get<double>();
    }
    return m;
}

Vec vector_from_json(const json& j, const char* what) {
    if (!j.is_array()) throw ValidationError(std::string("model json: ") + what + " must be an array");
    Vec v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) v(i) = j[i].get<double>();
    return v;
}

}  // namespace

std::string model_to_json(const SwitchingModel& model) {
    json j;
    j["k"] = model.regime_count();
    j["n"] = model.latent_dim();
    j["m"] = model.obs_dim();
    json regimes = json::array();
    for (const auto& rp : model.regimes) {
        json r;
        r["A"] = matrix_to_json(rp.transition_matrix_a);
        r["C"] = matrix_to_json(rp.observation_matrix_c);
        r["Q"] = matrix_to_json(rp.process_noise_q);
        r["R"] = matrix_to_json(rp.observation_noise_r);
        regimes.push_back(std::move(r));
    }
    j["regimes"] = std::move(regimes);
    j["pi"] = matrix_to_json(model.pi.probabilities);
    j["initial_regime_dist"] = vector_to_json(model.initial_regime_dist);
    j["initial_state_mean"] = vector_to_json(model.initial_state_mean);
    j["initial_state_cov"] = matrix_to_json(model.initial_state_cov);
    if (!model.regime_labels.empty()) j["labels"] = model.regime_labels;
    if (model.control_input) {
        json controls = json::array();
        for (const auto& u : *model.control_input) controls.push_back(vector_to_json(u));
        j["control_input"] = std::move(controls);
    }
    return j.dump(2);
}

SwitchingModel model_from_json(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("model json: parse error: ") + e.what());
    }
    SwitchingModel model;
    if (!j.contains("regimes") || !j["regimes"].is_array() || j["regimes"].empty())
        throw ValidationError("model json: missing regimes array");
    for (const auto& r : j["regimes"]) {
        model.regimes.push_back(RegimeParams(matrix_from_json(r.at("A"), "A"),
                                             matrix_from_json(r.at("C"), "C"),
                                             matrix_from_json(r.at("Q"), "Q"),
                                             matrix_from_json(r.at("R"), "R")));
    }
    model.pi = TransitionMatrix(matrix_from_json(j.at("pi"), "pi"));
    model.initial_regime_dist = vector_from_json(j.at("initial_regime_dist"), "initial_regime_dist");
    model.initial_state_mean = vector_from_json(j.at("initial_state_mean"), "initial_state_mean");
    model.initial_state_cov = floor_psd(matrix_from_json(j.at("initial_state_cov"), "initial_state_cov"));
    if (j.contains("labels")) model.regime_labels = j["labels"].get<std::vector<std::string>>();
    if (j.contains("control_input")) {
        std::vector<Vec> controls;
        for (const auto& u : j["control_input"]) controls.push_back(vector_from_json(u, "control_input"));
        model.control_input = std::move(controls);
    }
    return model;
}

void save_model(const SwitchingModel& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open for writing: " + path);
    out << model_to_json(model) << "\n";
}

SwitchingModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open model file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return model_from_json(buf.str());
}

}  // namespace rssm
