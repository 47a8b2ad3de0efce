// Independent ground truth for the Kalman-path code: exact inference in a
// (possibly time-varying) linear-Gaussian chain by building the full joint
// Gaussian of (x_{1:T}, y_{1:T}) and conditioning on y. Deliberately naive
// O((Tn + Tm)^3) algebra; never reuses the recursive filter/smoother path.
#pragma once

#include <vector>

#include "rssm/linalg.hpp"

namespace rssm::testing {

struct DenseStepModel {
    Mat a;  // n x n (ignored at t = 0)
    Mat c;  // m x n
    Mat q;  // n x n (ignored at t = 0)
    Mat r;  // m x m
    Vec u;  // n (ignored at t = 0)
};

struct DenseResult {
    std::vector<Vec> means;          // smoothed E[x_t | y]
    std::vector<Mat> covariances;    // smoothed Cov(x_t | y)
    std::vector<Mat> lag_one;        // Cov(x_{t+1}, x_t | y), length T-1
    double log_evidence = 0.0;       // log N(y; mean_y, cov_y)
};

inline DenseResult dense_condition(const Vec& mu0, const Mat& sigma0,
                                   const std::vector<DenseStepModel>& steps,
                                   const std::vector<Vec>& observations) {
    const std::size_t horizon = steps.size();
    const Eigen::Index n = mu0.size();
    const Eigen::Index m = steps[0].c.rows();
    const Eigen::Index nx = static_cast<Eigen::Index>(horizon) * n;
    const Eigen::Index ny = static_cast<Eigen::Index>(horizon) * m;

    // Prior over the stacked latent path.
    Vec mean_x(nx);
    Mat cov_x = Mat::Zero(nx, nx);
    mean_x.segment(0, n) = mu0;
    cov_x.block(0, 0, n, n) = sigma0;
    for (std::size_t t = 1; t < horizon; ++t) {
        const Mat& a = steps[t].a;
        Eigen::Index rt = static_cast<Eigen::Index>(t) * n;
        mean_x.segment(rt, n) = a * mean_x.segment(rt - n, n) + steps[t].u;
        // Cross blocks against every earlier step, then the new diagonal.
        for (std::size_t s = 0; s < t; ++s) {
            Eigen::Index cs = static_cast<Eigen::Index>(s) * n;
            Mat cross = a * cov_x.block(rt - n, cs, n, n);
            cov_x.block(rt, cs, n, n) = cross;
            cov_x.block(cs, rt, n, n) = cross.transpose();
        }
        cov_x.block(rt, rt, n, n) =
            a * cov_x.block(rt - n, rt - n, n, n) * a.transpose() + steps[t].q;
    }

    // Joint with stacked observations y = C_blk x + noise.
    Mat c_blk = Mat::Zero(ny, nx);
    Mat r_blk = Mat::Zero(ny, ny);
    Vec y_stack(ny);
    for (std::size_t t = 0; t < horizon; ++t) {
        Eigen::Index rt = static_cast<Eigen::Index>(t) * m;
        Eigen::Index ct = static_cast<Eigen::Index>(t) * n;
        c_blk.block(rt, ct, m, n) = steps[t].c;
        r_blk.block(rt, rt, m, m) = steps[t].r;
        y_stack.segment(rt, m) = observations[t];
    }
    Vec mean_y = c_blk * mean_x;
    Mat cov_y = c_blk * cov_x * c_blk.transpose() + r_blk;
    Mat cov_xy = cov_x * c_blk.transpose();

    Eigen::LLT<Mat> llt(symmetrize(cov_y));
    Vec diff = y_stack - mean_y;
    Vec solved = llt.solve(diff);
    Mat gain = llt.solve(cov_xy.transpose()).transpose();  // cov_xy cov_y^{-1}

    Vec post_mean = mean_x + gain * diff;
    Mat post_cov = cov_x - gain * cov_xy.transpose();

    DenseResult out;
    out.means.resize(horizon);
    out.covariances.resize(horizon);
    if (horizon > 1) out.lag_one.resize(horizon - 1);
    for (std::size_t t = 0; t < horizon; ++t) {
        Eigen::Index rt = static_cast<Eigen::Index>(t) * n;
        out.means[t] = post_mean.segment(rt, n);
        out.covariances[t] = post_cov.block(rt, rt, n, n);
        if (t > 0) out.lag_one[t - 1] = post_cov.block(rt, rt - n, n, n);
    }
    double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    out.log_evidence = -0.5 * (static_cast<double>(ny) * std::log(2.0 * 3.14159265358979323846) +
                               log_det + diff.dot(solved));
    return out;
}

}  // namespace rssm::testing
