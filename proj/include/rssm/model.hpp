#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rssm/linalg.hpp"
#include "rssm/random.hpp"

namespace rssm {

/// One linear-Gaussian regime: latent dynamics A, emission C, process noise Q,
/// observation noise R. Construction symmetrises Q and R and floors their
/// eigenvalues at kCovarianceFloor, so stored covariances always admit a
/// Cholesky factorisation.
struct RegimeParams {
    Mat transition_matrix_a;   // n x n
    Mat observation_matrix_c;  // m x n
    Mat process_noise_q;       // n x n
    Mat observation_noise_r;   // m x m

    RegimeParams() = default;
    RegimeParams(Mat a, Mat c, Mat q, Mat r);

    Eigen::Index latent_dim() const { return transition_matrix_a.rows(); }
    Eigen::Index obs_dim() const { return observation_matrix_c.rows(); }
};

/// Row-stochastic regime transition matrix; rows are source regimes,
/// columns destinations. Rows are renormalised on construction.
struct TransitionMatrix {
    Mat probabilities;  // K x K

    TransitionMatrix() = default;
    explicit TransitionMatrix(Mat probs);

    int regime_count() const { return static_cast<int>(probabilities.rows()); }
    Vec row(int s) const { return probabilities.row(s).transpose(); }
};

/// The full generative switching model: K regimes, Markov chain over them,
/// and the initial distributions of the discrete and continuous states.
/// Immutable after construction; safe to share across concurrent readers.
struct SwitchingModel {
    std::vector<RegimeParams> regimes;
    TransitionMatrix pi;
    Vec initial_regime_dist;                 // length K
    Vec initial_state_mean;                  // length n
    Mat initial_state_cov;                   // n x n, symmetric PSD (floored)
    std::optional<std::vector<Vec>> control_input;  // optional u_t sequence
    std::vector<std::string> regime_labels;  // used by alert records

    int regime_count() const { return static_cast<int>(regimes.size()); }
    Eigen::Index latent_dim() const { return regimes.empty() ? 0 : regimes[0].latent_dim(); }
    Eigen::Index obs_dim() const { return regimes.empty() ? 0 : regimes[0].obs_dim(); }

    /// Control input at step t (0-based); zero vector when none configured.
    Vec control_at(std::size_t t) const;
};

/// Ground-truth container for synthetic evaluation.
struct SampledTrajectory {
    std::vector<int> regimes;       // length T
    std::vector<Vec> latents;       // length T, each n
    std::vector<Vec> observations;  // length T, each m
};

/// One invariant violation found by validate_model. Violations are data,
/// not failures.
struct ModelViolation {
    std::string code;     // machine-readable, e.g. "pi_row_not_stochastic"
    std::string message;  // human-readable detail
};

std::vector<ModelViolation> validate_model(const SwitchingModel& model);

/// Draws (s_{1:T}, x_{1:T}, y_{1:T}) from the generative model.
/// Deterministic given the seed. Rejects invalid models with the
/// validation report in the error message.
SampledTrajectory sample_trajectory(const SwitchingModel& model, std::size_t steps,
                                    std::uint64_t seed);

/// Same draw from an already-positioned stream (used for scripted scenarios).
SampledTrajectory sample_trajectory(const SwitchingModel& model, std::size_t steps,
                                    RandomStream& rng);

/// Preset four-regime kill-chain model. Regime 0 is stable and mean-reverting,
/// regime 1 has elevated process noise on the port-diversity latents, regime 2
/// on the stateful-behaviour latents, regime 3 carries one unstable mode
/// (eigenvalue 1.05) on the volume latents. The transition matrix is the
/// learned kill-chain structure (persistent diagonal, forward-chain mass).
/// Requires k == 4, latent_dim >= 4, obs_dim >= 4.
SwitchingModel default_killchain_model(int k, Eigen::Index latent_dim, Eigen::Index obs_dim);

/// Default labels for the four kill-chain regimes. The label of regime 2 is
/// configurable via SwitchingModel::regime_labels.
std::vector<std::string> default_regime_labels();

/// JSON (de)serialisation of the full parameter set. Schema: dims explicit,
/// matrices as nested row-major arrays.
std::string model_to_json(const SwitchingModel& model);
SwitchingModel model_from_json(const std::string& json_text);
void save_model(const SwitchingModel& model, const std::string& path);
SwitchingModel load_model(const std::string& path);

}  // namespace rssm
