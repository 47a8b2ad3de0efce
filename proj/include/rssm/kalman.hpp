#pragma once

#include <vector>

#include "rssm/linalg.hpp"
#include "rssm/model.hpp"

namespace rssm {

/// Gaussian belief over the latent state.
struct GaussianState {
    Vec mean;        // n
    Mat covariance;  // n x n, symmetric PSD

    GaussianState() = default;
    GaussianState(Vec m, Mat cov) : mean(std::move(m)), covariance(std::move(cov)) {}
};

/// One predict+update step of the regime-conditioned Kalman filter.
struct FilterStepResult {
    GaussianState predicted;
    GaussianState updated;
    Vec innovation;      // m
    Mat innovation_cov;  // m x m, symmetric PD
    Mat gain;            // n x m
    double log_likelihood = 0.0;  // log N(y; C x_pred, S)
};

/// Measurement update only: treats `predicted` as the prior at this step
/// (used at t = 1 where the generative model places x_1 ~ N(mu0, Sigma0)
/// with no dynamics applied).
FilterStepResult update_step(const GaussianState& predicted, const Vec& y,
                             const RegimeParams& params);

/// Full predict+update: mean A x + u, covariance A P A^T + Q, then the
/// measurement update in Joseph form. The innovation covariance is solved
/// by Cholesky with a single jitter retry; failure raises NumericalError.
FilterStepResult filter_step(const GaussianState& prior, const Vec& y, const Vec& u,
                             const RegimeParams& params);

/// Filter products for one step, as consumed by the smoother.
struct FilteredPair {
    GaussianState predicted;
    GaussianState updated;
};

struct SmootherResult {
    std::vector<GaussianState> smoothed;  // length T
    /// lag_one[t-1] = Cov(x_t, x_{t-1} | y_{1:T}) for t in [1, T).
    std::vector<Mat> lag_one;  // length T-1
};

/// RTS backward pass. transition[t] is the dynamics matrix that propagated
/// step t-1 to step t (entry 0 is unused). The last smoothed state equals
/// the last filtered state exactly.
SmootherResult rts_smooth(const std::vector<FilteredPair>& filtered,
                          const std::vector<Mat>& transition);

/// One step of the K parallel regime-conditioned filters from a shared prior.
/// Results are independent across regimes; errors are tagged with the regime.
std::vector<FilterStepResult> run_filter_bank(const GaussianState& prior, const Vec& y,
                                              const Vec& u, const SwitchingModel& model);

}  // namespace rssm
