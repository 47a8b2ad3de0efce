#pragma once

#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include "rssm/hmm.hpp"
#include "rssm/kalman.hpp"
#include "rssm/model.hpp"

namespace rssm {

/// Controls for the variational loop. Convergence is declared on the
/// absolute ELBO difference only.
struct InferenceConfig {
    double tolerance_epsilon = 1e-4;
    std::size_t k_max = 15;
    double division_floor = 1e-6;
    /// Regime prior used to initialise the loop and the forward pass;
    /// defaults to the model's initial distribution when unset.
    std::optional<Vec> initial_regime_dist;
};

/// Initial continuous/discrete state for a window. When chained from a
/// previous window the dynamics apply at the first step; for a fresh
/// sequence the first step is a pure measurement update of the prior.
struct InferenceInit {
    GaussianState state;
    Vec regime_dist;
    bool apply_dynamics_at_first = false;
};

struct VariationalResult {
    RegimePosteriors posteriors;
    std::vector<GaussianState> smoothed_states;  // x_{t|T}, P_{t|T}
    std::vector<Mat> lag_one_cov;                // Cov(x_{t+1}, x_t | y), length T-1
    std::vector<double> elbo_trace;
    std::size_t iterations = 0;
    bool converged = false;

    /// Per-step effective dynamics of the final iteration (entry 0 unused).
    std::vector<Mat> a_eff;
    /// Pre-loop parallel filter bank products, kept for the online M-step:
    /// per-regime predictive innovations, filtered covariances, and emission
    /// log-likelihoods.
    Mat bank_log_lik;                                 // T x K
    std::vector<std::vector<Vec>> bank_innovations;   // [t][s], each m
    std::vector<std::vector<Mat>> bank_filtered_cov;  // [t][s], each n x n
};

/// Regime-weighted effective dynamics: A_eff is the posterior-weighted mean
/// of the regime dynamics; Q_eff adds the between-regime spread of the
/// dynamics propagated through the previous smoothed covariance. Output is
/// symmetrised and eigenvalue-floored.
std::pair<Mat, Mat> effective_params(const Vec& gamma_t, const std::vector<RegimeParams>& regimes,
                                     const Mat& p_prev_smoothed);

/// Evidence lower bound of the factorised posterior (q(x), q(s)) described
/// by the smoothed states and the regime posteriors: expected observation
/// likelihood, expected dynamics likelihood plus the Gaussian chain entropy,
/// and the discrete prior terms plus the Markov chain entropy. All
/// expectations are closed-form in the smoothed moments.
double elbo(const SwitchingModel& model, const RegimePosteriors& posteriors,
            const std::vector<GaussianState>& smoothed, const std::vector<Mat>& lag_one,
            const std::vector<Vec>& observations,
            const std::optional<std::vector<Vec>>& controls = std::nullopt,
            const Vec* pi0_override = nullptr);

/// Coordinate-ascent switching inference: initialise the regime posterior
/// from the prior, run the K parallel filters once, then alternate the
/// effective-parameter Kalman smoother with a forward-backward pass over
/// the expected emission/dynamics scores until the ELBO change falls below
/// tolerance or k_max is reached.
VariationalResult infer(const SwitchingModel& model, const std::vector<Vec>& observations,
                        const std::optional<std::vector<Vec>>& controls,
                        const InferenceConfig& config,
                        const std::optional<InferenceInit>& init = std::nullopt);

}  // namespace rssm
