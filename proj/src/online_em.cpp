#include "rssm/online_em.hpp"

#include "rssm/errors.hpp"

namespace rssm {

TransitionMatrix update_transition(const TransitionMatrix& pi, const Mat& xi_t,
                                   const Vec& gamma_prev, const OnlineEmConfig& config) {
    const Eigen::Index k = pi.probabilities.rows();
    if (xi_t.rows() != k || xi_t.cols() != k || gamma_prev.size() != k)
        throw ValidationError("update_transition: dimension mismatch");
    Mat next(k, k);
    for (Eigen::Index i = 0; i < k; ++i) {
        double denom = gamma_prev(i) + config.division_floor;
        next.row(i) = (1.0 - config.eta) * pi.probabilities.row(i) +
                      (config.eta / denom) * xi_t.row(i);
    }
    return TransitionMatrix(next);  // row renormalisation happens here
}

Mat update_obs_noise(const Mat& r_s, double gamma_t_s, const Vec& innovation, const Mat& c_s,
                     const Mat& p_filt, const OnlineEmConfig& config) {
    double denom = gamma_t_s + config.division_floor;
    Mat correction = gamma_t_s *
                     (innovation * innovation.transpose() +
                      c_s * p_filt * c_s.transpose()) /
                     denom;
    return floor_psd((1.0 - config.eta) * r_s + config.eta * correction);
}

Mat update_proc_noise(const Mat& q_s, double gamma_t_s, const Mat& p_smooth_t,
                      const Mat& p_smooth_prev, const Mat& a_eff, const OnlineEmConfig& config) {
    double denom = gamma_t_s + config.division_floor;
    Mat bracket = p_smooth_t - a_eff * p_smooth_prev * a_eff.transpose();
    return floor_psd((1.0 - config.eta) * q_s + (config.eta * gamma_t_s / denom) * bracket);
}

Mat update_proc_noise_classical(const Mat& q_s, double gamma_t_s, const Mat& expected_residual_sq,
                                const OnlineEmConfig& config) {
    double denom = gamma_t_s + config.division_floor;
    return floor_psd((1.0 - config.eta) * q_s +
                     (config.eta * gamma_t_s / denom) * expected_residual_sq);
}

}  // namespace rssm
