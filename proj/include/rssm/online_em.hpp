#pragma once

#include "rssm/linalg.hpp"
#include "rssm/model.hpp"

namespace rssm {

/// Exponential-forgetting online M-step configuration. eta in (0, 1)
/// operationally; eta = 0 is admitted so the no-update limit is testable.
struct OnlineEmConfig {
    double eta = 0.01;
    double division_floor = 1e-6;
    /// Replaces the process-noise bracket with the full expected
    /// second-moment form (see update_proc_noise_classical).
    bool classical_q_update = false;
};

/// Pi update from one pairwise marginal: each row blends toward
/// xi_t(s, .) / gamma_prev(s), then rows are renormalised. Rows with no
/// posterior mass are left unchanged by the renormalisation.
TransitionMatrix update_transition(const TransitionMatrix& pi, const Mat& xi_t,
                                   const Vec& gamma_prev, const OnlineEmConfig& config);

/// Observation-noise update from one step's per-regime predictive innovation
/// and filtered covariance. Result is symmetrised and eigenvalue-floored.
Mat update_obs_noise(const Mat& r_s, double gamma_t_s, const Vec& innovation, const Mat& c_s,
                     const Mat& p_filt, const OnlineEmConfig& config);

/// Process-noise update from the smoothed covariances, as printed:
/// bracket = P_t|T - A_eff P_{t-1|T} A_eff^T (can be indefinite; flooring
/// is mandatory).
Mat update_proc_noise(const Mat& q_s, double gamma_t_s, const Mat& p_smooth_t,
                      const Mat& p_smooth_prev, const Mat& a_eff, const OnlineEmConfig& config);

/// Classical variant: the bracket is the full expected dynamics residual
/// second moment E[(x_t - A_eff x_{t-1} - u)(...)^T], which adds the mean
/// residual and lag-one cross terms. Selected by classical_q_update.
Mat update_proc_noise_classical(const Mat& q_s, double gamma_t_s, const Mat& expected_residual_sq,
                                const OnlineEmConfig& config);

}  // namespace rssm
