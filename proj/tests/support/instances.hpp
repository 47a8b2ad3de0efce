// Random instance generators shared by the unit and acceptance suites.
#pragma once

#include <cstdint>
#include <vector>

#include "rssm/model.hpp"
#include "rssm/random.hpp"

#include "dense_oracle.hpp"

namespace rssm::testing {

inline Mat random_matrix(RandomStream& rng, Eigen::Index rows, Eigen::Index cols,
                         double scale = 1.0) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.gaussian();
    return m;
}

/// Random SPD matrix with eigenvalues roughly in [lo, hi].
inline Mat random_spd(RandomStream& rng, Eigen::Index dim, double lo = 0.2, double hi = 1.5) {
    Mat g = random_matrix(rng, dim, dim);
    Mat spd = g * g.transpose() / static_cast<double>(dim);
    Eigen::SelfAdjointEigenSolver<Mat> es(spd);
    Vec vals = es.eigenvalues();
    double vmin = vals.minCoeff(), vmax = vals.maxCoeff();
    for (Eigen::Index i = 0; i < dim; ++i)
        vals(i) = lo + (hi - lo) * (vmax > vmin ? (vals(i) - vmin) / (vmax - vmin) : 0.5);
    return symmetrize(es.eigenvectors() * vals.asDiagonal() * es.eigenvectors().transpose());
}

/// Random dynamics matrix scaled to the requested spectral radius.
inline Mat random_dynamics(RandomStream& rng, Eigen::Index dim, double radius = 0.9) {
    Mat a = random_matrix(rng, dim, dim, 1.0);
    double rho = spectral_radius(a);
    if (rho > 0.0) a *= radius / rho;
    return a;
}

inline TransitionMatrix random_stochastic(RandomStream& rng, int k, double persistence = 0.0) {
    Mat pi(k, k);
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) pi(i, j) = 0.05 + rng.uniform();
        pi(i, i) += persistence;
    }
    return TransitionMatrix(pi);
}

inline Vec random_simplex(RandomStream& rng, int k) {
    Vec v(k);
    for (int i = 0; i < k; ++i) v(i) = 0.05 + rng.uniform();
    return v / v.sum();
}

/// Random switching model with stable-ish distinguishable regimes.
inline SwitchingModel random_switching_model(RandomStream& rng, int k, Eigen::Index n,
                                             Eigen::Index m) {
    SwitchingModel model;
    for (int s = 0; s < k; ++s) {
        double radius = 0.3 + 0.6 * rng.uniform();
        Mat a = random_dynamics(rng, n, radius);
        Mat c = random_matrix(rng, m, n);
        Mat q = random_spd(rng, n, 0.05, 0.5 + 0.8 * rng.uniform());
        Mat r = random_spd(rng, m, 0.05, 0.4);
        model.regimes.push_back(RegimeParams(a, c, q, r));
    }
    model.pi = random_stochastic(rng, k, 2.0);
    model.initial_regime_dist = random_simplex(rng, k);
    model.initial_state_mean = Vec::Zero(n);
    model.initial_state_cov = Mat::Identity(n, n);
    return model;
}

/// Random single-regime LDS wrapped as a K=1 switching model.
inline SwitchingModel random_lds(RandomStream& rng, Eigen::Index n, Eigen::Index m) {
    return random_switching_model(rng, 1, n, m);
}

/// Random switching model in the kill-chain mould: a shared emission map,
/// regimes separated by their dynamics (spectral radius) and process noise
/// scale, a persistent chain, and a decisive starting distribution.
inline SwitchingModel random_shared_emission_model(RandomStream& rng, int k, Eigen::Index n,
                                                   Eigen::Index m) {
    SwitchingModel model;
    Mat c = random_matrix(rng, m, n);
    Mat r = random_spd(rng, m, 0.02, 0.1);
    for (int s = 0; s < k; ++s) {
        double radius = 0.25 + 0.9 * static_cast<double>(s) / std::max(1, k - 1);
        Mat a = random_dynamics(rng, n, radius + 0.1 * rng.uniform());
        double q_scale = 0.05 * std::pow(4.0, s % 3);
        Mat q = random_spd(rng, n, 0.5 * q_scale, 1.5 * q_scale);
        model.regimes.push_back(RegimeParams(a, c, q, r));
    }
    Mat pi = Mat::Constant(k, k, 0.1 / std::max(1, k - 1));
    for (int i = 0; i < k; ++i) pi(i, i) = 0.9;
    model.pi = TransitionMatrix(pi);
    model.initial_regime_dist = Vec::Constant(k, 0.1 / std::max(1, k - 1));
    model.initial_regime_dist(rng.categorical(Vec::Ones(k))) = 0.9;
    model.initial_regime_dist /= model.initial_regime_dist.sum();
    model.initial_state_mean = Vec::Zero(n);
    model.initial_state_cov = Mat::Identity(n, n);
    return model;
}

/// Dense-oracle step models for a fixed regime path through a switching model.
inline std::vector<DenseStepModel> steps_for_path(const SwitchingModel& model,
                                                  const std::vector<int>& path) {
    std::vector<DenseStepModel> steps;
    steps.reserve(path.size());
    for (std::size_t t = 0; t < path.size(); ++t) {
        const RegimeParams& rp = model.regimes[path[t]];
        steps.push_back({rp.transition_matrix_a, rp.observation_matrix_c, rp.process_noise_q,
                         rp.observation_noise_r, model.control_at(t)});
    }
    return steps;
}

}  // namespace rssm::testing
