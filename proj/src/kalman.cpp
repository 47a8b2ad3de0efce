#include "rssm/kalman.hpp"

#include <cmath>
#include <numbers>

#include "rssm/errors.hpp"

namespace rssm {

FilterStepResult update_step(const GaussianState& predicted, const Vec& y,
                             const RegimeParams& params) {
    const Mat& c = params.observation_matrix_c;
    const Mat& r = params.observation_noise_r;
    const Eigen::Index m = c.rows();

    FilterStepResult res;
    res.predicted = predicted;
    res.innovation = y - c * predicted.mean;
    res.innovation_cov = symmetrize(c * predicted.covariance * c.transpose() + r);

    auto llt = cholesky_with_retry(res.innovation_cov);
    if (!llt) throw NumericalError("innovation covariance not invertible");

    // Gain via the Cholesky solve: K = P C^T S^{-1}.
    Mat cp = c * predicted.covariance;  // m x n
    res.gain = llt->solve(cp).transpose();

    res.updated.mean = predicted.mean + res.gain * res.innovation;
    // Joseph form keeps the posterior covariance symmetric PSD under rounding.
    Mat i_kc = Mat::Identity(predicted.covariance.rows(), predicted.covariance.rows()) - res.gain * c;
    res.updated.covariance = symmetrize(i_kc * predicted.covariance * i_kc.transpose() +
                                        res.gain * r * res.gain.transpose());

    double quad = res.innovation.dot(llt->solve(res.innovation));
    res.log_likelihood = -0.5 * (static_cast<double>(m) * std::log(2.0 * std::numbers::pi) +
                                 log_det_from_llt(*llt) + quad);
    if (!std::isfinite(res.log_likelihood))
        throw NumericalError("non-finite emission log-likelihood");
    return res;
}

FilterStepResult filter_step(const GaussianState& prior, const Vec& y, const Vec& u,
                             const RegimeParams& params) {
    GaussianState predicted;
    predicted.mean = params.transition_matrix_a * prior.mean + u;
    predicted.covariance = symmetrize(params.transition_matrix_a * prior.covariance *
                                          params.transition_matrix_a.transpose() +
                                      params.process_noise_q);
    return update_step(predicted, y, params);
}

SmootherResult rts_smooth(const std::vector<FilteredPair>& filtered,
                          const std::vector<Mat>& transition) {
    const std::size_t steps = filtered.size();
    if (steps == 0) throw ValidationError("rts_smooth: empty input");
    if (transition.size() != steps)
        throw ValidationError("rts_smooth: transition sequence not aligned with filtered states");

    SmootherResult res;
    res.smoothed.resize(steps);
    if (steps > 1) res.lag_one.resize(steps - 1);
    res.smoothed[steps - 1] = filtered[steps - 1].updated;

    for (std::size_t t = steps - 1; t-- > 0;) {
        const GaussianState& filt = filtered[t].updated;
        const GaussianState& pred_next = filtered[t + 1].predicted;
        auto llt = cholesky_with_retry(pred_next.covariance);
        if (!llt) throw NumericalError("predicted covariance not invertible in smoother", t + 1);

        // J_t = P_{t|t} A_{t+1}^T P_{t+1|t}^{-1}
        Mat gain = llt->solve(transition[t + 1] * filt.covariance).transpose();

        const GaussianState& next = res.smoothed[t + 1];
        res.smoothed[t].mean = filt.mean + gain * (next.mean - pred_next.mean);
        res.smoothed[t].covariance = floor_psd(
            filt.covariance + gain * (next.covariance - pred_next.covariance) * gain.transpose());
        // Cov(x_{t+1}, x_t | y_{1:T}) = P_{t+1|T} J_t^T
        res.lag_one[t] = next.covariance * gain.transpose();
    }
    return res;
}

std::vector<FilterStepResult> run_filter_bank(const GaussianState& prior, const Vec& y,
                                              const Vec& u, const SwitchingModel& model) {
    std::vector<FilterStepResult> results;
    results.reserve(model.regimes.size());
    for (int s = 0; s < model.regime_count(); ++s) {
        try {
            results.push_back(filter_step(prior, y, u, model.regimes[s]));
        } catch (const NumericalError& e) {
            throw NumericalError(e.what(), e.time_index(), s, e.iteration());
        }
    }
    return results;
}

}  // namespace rssm
