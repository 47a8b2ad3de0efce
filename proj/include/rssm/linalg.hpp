#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <vector>

namespace rssm {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Eigenvalue floor applied to every covariance after construction or update.
inline constexpr double kCovarianceFloor = 1e-9;

/// Jitter added to a Cholesky factorisation on its single retry.
inline constexpr double kCholeskyJitter = 1e-9;

/// (M + M^T)/2.
Mat symmetrize(const Mat& m);

/// Symmetrise and clamp eigenvalues to at least `floor`. Keeps every
/// covariance usable by downstream Cholesky solves.
Mat floor_psd(const Mat& m, double floor = kCovarianceFloor);

/// True when every entry is finite.
bool all_finite(const Mat& m);
bool all_finite(const Vec& v);

/// Cholesky factor of a symmetric matrix with one jitter retry
/// (adds kCholeskyJitter * I once). Returns std::nullopt if the retry
/// also fails; callers attach position context to the failure.
std::optional<Eigen::LLT<Mat>> cholesky_with_retry(const Mat& m);

/// log|M| from an already-computed Cholesky factor.
double log_det_from_llt(const Eigen::LLT<Mat>& llt);

/// Spectral radius (largest eigenvalue magnitude, general real matrix).
double spectral_radius(const Mat& a);

/// Order-robust log(sum(exp(w))) over possibly -inf entries.
double log_sum_exp(std::span<const double> log_weights);

/// A square root factor L of a floored covariance with L L^T = M on the
/// non-degenerate eigenspace: eigenvalues at or below the floor are treated
/// as exactly degenerate and contribute no noise.
Mat degenerate_aware_sqrt(const Mat& m, double floor = kCovarianceFloor);

}  // namespace rssm
