#include "rssm/hmm.hpp"

#include <cmath>

#include "rssm/errors.hpp"

namespace rssm {

RegimePosteriors forward_backward(const Mat& log_lik, const TransitionMatrix& pi,
                                  const Vec& pi0) {
    const Eigen::Index steps = log_lik.rows();
    const Eigen::Index k = log_lik.cols();
    if (steps < 1) throw ValidationError("forward_backward: empty likelihood matrix");
    if (pi.probabilities.rows() != k || pi0.size() != k)
        throw ValidationError("forward_backward: dimension mismatch between log_lik, pi, pi0");
    if (!all_finite(log_lik)) throw ValidationError("forward_backward: non-finite log-likelihood");
    if (std::abs(pi0.sum() - 1.0) > 1e-9 || pi0.minCoeff() < 0.0)
        throw ValidationError("forward_backward: pi0 is not a probability vector");

    const Mat& trans = pi.probabilities;

    // Per-step max shift: emissions enter as exp(log_lik - shift), which is the
    // log-space retry built in up front. scale[t] is the pre-normalisation mass
    // of the forward weights.
    Vec shift(steps);
    Mat lik(steps, k);
    for (Eigen::Index t = 0; t < steps; ++t) {
        shift(t) = log_lik.row(t).maxCoeff();
        lik.row(t) = (log_lik.row(t).array() - shift(t)).exp();
    }

    Mat alpha(steps, k);
    Vec scale(steps);
    alpha.row(0) = lik.row(0).array() * pi0.transpose().array();
    scale(0) = alpha.row(0).sum();
    if (!(scale(0) > 0.0)) throw NumericalError("forward pass underflowed to zero", 0);
    alpha.row(0) /= scale(0);
    for (Eigen::Index t = 1; t < steps; ++t) {
        alpha.row(t) = (alpha.row(t - 1) * trans).array() * lik.row(t).array();
        scale(t) = alpha.row(t).sum();
        if (!(scale(t) > 0.0)) throw NumericalError("forward pass underflowed to zero", t);
        alpha.row(t) /= scale(t);
    }

    Mat beta = Mat::Ones(steps, k);
    for (Eigen::Index t = steps - 2; t >= 0; --t) {
        Vec weighted = (lik.row(t + 1).array() * beta.row(t + 1).array()).matrix().transpose();
        beta.row(t) = (trans * weighted).transpose() / scale(t + 1);
    }

    RegimePosteriors post;
    post.gamma.resize(steps, k);
    for (Eigen::Index t = 0; t < steps; ++t) {
        Vec g = (alpha.row(t).array() * beta.row(t).array()).matrix().transpose();
        post.gamma.row(t) = (g / g.sum()).transpose();
    }

    if (steps > 1) post.xi.reserve(steps - 1);
    for (Eigen::Index t = 1; t < steps; ++t) {
        Mat x(k, k);
        for (Eigen::Index i = 0; i < k; ++i)
            for (Eigen::Index j = 0; j < k; ++j)
                x(i, j) = alpha(t - 1, i) * trans(i, j) * lik(t, j) * beta(t, j);
        double total = x.sum();
        if (!(total > 0.0)) throw NumericalError("pairwise marginal underflowed to zero", t);
        post.xi.push_back(x / total);
    }

    post.log_evidence = scale.array().log().sum() + shift.sum();
    return post;
}

Vec predict_regime(const Vec& gamma_t, const TransitionMatrix& pi, int tau) {
    if (tau < 1) throw ValidationError("predict_regime: tau must be >= 1");
    if (std::abs(gamma_t.sum() - 1.0) > 1e-9 || gamma_t.minCoeff() < -1e-12)
        throw ValidationError("predict_regime: gamma is not a probability vector");
    Vec v = gamma_t;
    for (int i = 0; i < tau; ++i) v = pi.probabilities.transpose() * v;
    double s = v.sum();
    if (s > 0.0) v /= s;
    return v;
}

}  // namespace rssm
