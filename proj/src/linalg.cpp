#include "rssm/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rssm {

Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

Mat floor_psd(const Mat& m, double floor) {
    Mat sym = symmetrize(m);
    Eigen::SelfAdjointEigenSolver<Mat> es(sym);
    Vec vals = es.eigenvalues();
    bool needs_fix = false;
    for (Eigen::Index i = 0; i < vals.size(); ++i) {
        if (vals(i) < floor) {
            vals(i) = floor;
            needs_fix = true;
        }
    }
    if (!needs_fix) return sym;
    return symmetrize(es.eigenvectors() * vals.asDiagonal() * es.eigenvectors().transpose());
}

bool all_finite(const Mat& m) { return m.allFinite(); }
bool all_finite(const Vec& v) { return v.allFinite(); }

std::optional<Eigen::LLT<Mat>> cholesky_with_retry(const Mat& m) {
    Eigen::LLT<Mat> llt(m);
    if (llt.info() == Eigen::Success) return llt;
    Mat jittered = m + kCholeskyJitter * Mat::Identity(m.rows(), m.cols());
    Eigen::LLT<Mat> retry(jittered);
    if (retry.info() == Eigen::Success) return retry;
    return std::nullopt;
}

double log_det_from_llt(const Eigen::LLT<Mat>& llt) {
    return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

double spectral_radius(const Mat& a) {
    Eigen::EigenSolver<Mat> es(a, /*computeEigenvectors=*/false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

double log_sum_exp(std::span<const double> log_weights) {
    double max_w = -std::numeric_limits<double>::infinity();
    for (double w : log_weights) max_w = std::max(max_w, w);
    if (!std::isfinite(max_w)) return max_w;  // all -inf (or empty)
    double sum = 0.0;
    for (double w : log_weights) sum += std::exp(w - max_w);
    return max_w + std::log(sum);
}

Mat degenerate_aware_sqrt(const Mat& m, double floor) {
    Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m));
    Vec vals = es.eigenvalues();
    Vec scale(vals.size());
    for (Eigen::Index i = 0; i < vals.size(); ++i) {
        scale(i) = vals(i) > floor ? std::sqrt(vals(i)) : 0.0;
    }
    return es.eigenvectors() * scale.asDiagonal();
}

}  // namespace rssm
