#pragma once

#include <cstdint>
#include <vector>

#include "rssm/kalman.hpp"
#include "rssm/model.hpp"

namespace rssm {

/// Per-step Gaussian mixture over the latent state, one component per
/// regime path. Component weights are the normalised path posteriors and
/// are shared across steps.
struct GaussianMixtureMarginal {
    std::vector<double> weights;
    std::vector<Vec> means;
    std::vector<Mat> covariances;
};

/// Exact posterior obtained by enumerating all K^T regime paths.
struct ExactPosterior {
    std::vector<double> path_log_weights;  // K^T entries, prior + likelihood
    Mat exact_gamma;                       // T x K
    double exact_log_evidence = 0.0;
    std::vector<GaussianMixtureMarginal> exact_state_marginals;  // length T
};

/// Runs the exact regime-conditioned filter+smoother along every regime
/// path, combines with the path prior, and marginalises. Path weights are
/// held in log space; combination is by log-sum-exp only. Rejects inputs
/// where K^T exceeds max_paths.
ExactPosterior enumerate_exact(const SwitchingModel& model, const std::vector<Vec>& observations,
                               std::uint64_t max_paths = 1'000'000);

}  // namespace rssm
