#include <doctest.h>

#include <cmath>
#include <numbers>

#include "rssm/errors.hpp"
#include "rssm/kalman.hpp"

#include "support/dense_oracle.hpp"
#include "support/instances.hpp"

using namespace rssm;
using rssm::testing::dense_condition;
using rssm::testing::DenseStepModel;

namespace {

RegimeParams scalar_params(double a, double c, double q, double r) {
    return RegimeParams(Mat::Constant(1, 1, a), Mat::Constant(1, 1, c), Mat::Constant(1, 1, q),
                        Mat::Constant(1, 1, r));
}

/// Filter a sequence (measurement update at t=0, predict+update after).
std::vector<FilteredPair> filter_sequence(const GaussianState& prior,
                                          const std::vector<Vec>& ys, const RegimeParams& rp) {
    std::vector<FilteredPair> out;
    GaussianState state = prior;
    for (std::size_t t = 0; t < ys.size(); ++t) {
        FilterStepResult r = t == 0 ? update_step(state, ys[t], rp)
                                    : filter_step(state, ys[t], Vec::Zero(prior.mean.size()), rp);
        out.push_back({r.predicted, r.updated});
        state = r.updated;
    }
    return out;
}

}  // namespace

TEST_SUITE("kalman") {

TEST_CASE("perfect observation is a fixpoint") {
    RegimeParams rp(Mat::Identity(2, 2), Mat::Identity(2, 2), Mat::Zero(2, 2), Mat::Zero(2, 2));
    Vec y(2);
    y << 1.5, -0.3;
    GaussianState prior(y, Mat::Identity(2, 2));
    auto res = filter_step(prior, y, Vec::Zero(2), rp);
    CHECK(res.innovation.cwiseAbs().maxCoeff() == 0.0);
    CHECK((res.updated.mean - y).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("scalar step matches the hand recursion") {
    // A=1, C=1, Q=1, R=1, prior N(0,1), y=2:
    // predicted N(0,2), S=3, K=2/3, mean 4/3, var 2/3.
    auto rp = scalar_params(1, 1, 1, 1);
    GaussianState prior(Vec::Zero(1), Mat::Identity(1, 1));
    Vec y = Vec::Constant(1, 2.0);
    auto res = filter_step(prior, y, Vec::Zero(1), rp);
    CHECK(res.predicted.mean(0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(res.predicted.covariance(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(res.innovation_cov(0, 0) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(res.gain(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(res.updated.mean(0) == doctest::Approx(4.0 / 3.0).epsilon(1e-12));
    CHECK(res.updated.covariance(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    double expected_ll = -0.5 * (std::log(2.0 * std::numbers::pi) + std::log(3.0) + 4.0 / 3.0);
    CHECK(res.log_likelihood == doctest::Approx(expected_ll).epsilon(1e-12));
}

TEST_CASE("control input shifts the predicted mean") {
    auto rp = scalar_params(1, 1, 0.5, 0.5);
    GaussianState prior(Vec::Constant(1, 1.0), Mat::Identity(1, 1));
    Vec u = Vec::Constant(1, 3.0);
    auto res = filter_step(prior, Vec::Constant(1, 4.0), u, rp);
    CHECK(res.predicted.mean(0) == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(res.innovation(0) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("smoother with a single step returns the filtered state") {
    auto rp = scalar_params(0.7, 1, 0.2, 0.3);
    GaussianState prior(Vec::Zero(1), Mat::Identity(1, 1));
    auto filtered = filter_sequence(prior, {Vec::Constant(1, 1.0)}, rp);
    auto sm = rts_smooth(filtered, {Mat::Identity(1, 1)});
    CHECK(sm.smoothed[0].mean(0) == filtered[0].updated.mean(0));
    CHECK(sm.smoothed[0].covariance(0, 0) == filtered[0].updated.covariance(0, 0));
    CHECK(sm.lag_one.empty());
}

TEST_CASE("static latent: smoothed means equal, covariances non-increasing backward") {
    RegimeParams rp(Mat::Identity(2, 2), Mat::Identity(2, 2), Mat::Zero(2, 2),
                    0.5 * Mat::Identity(2, 2));
    Vec y(2);
    y << 0.8, -1.1;
    std::vector<Vec> ys(6, y);
    GaussianState prior(Vec::Zero(2), Mat::Identity(2, 2));
    auto filtered = filter_sequence(prior, ys, rp);
    std::vector<Mat> trans(6, Mat::Identity(2, 2));
    auto sm = rts_smooth(filtered, trans);
    // Q is floored at 1e-9, so traces can drift by a few ulp of the floor.
    for (std::size_t t = 0; t + 1 < 6; ++t) {
        CHECK((sm.smoothed[t].mean - sm.smoothed[t + 1].mean).cwiseAbs().maxCoeff() < 1e-9);
        CHECK(sm.smoothed[t].covariance.trace() <= sm.smoothed[t + 1].covariance.trace() + 1e-7);
    }
}

TEST_CASE("filter and smoother match dense conditioning on random systems") {
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        RandomStream rng(800 + seed);
        Eigen::Index n = 1 + static_cast<Eigen::Index>(rng.uniform() * 3);
        Eigen::Index m = 1 + static_cast<Eigen::Index>(rng.uniform() * 3);
        std::size_t horizon = 2 + static_cast<std::size_t>(rng.uniform() * 6);
        auto model = rssm::testing::random_lds(rng, n, m);
        auto traj = sample_trajectory(model, horizon, 9000 + seed);

        const RegimeParams& rp = model.regimes[0];
        GaussianState prior(model.initial_state_mean, model.initial_state_cov);
        auto filtered = filter_sequence(prior, traj.observations, rp);
        std::vector<Mat> trans(horizon, rp.transition_matrix_a);
        auto sm = rts_smooth(filtered, trans);

        auto steps = rssm::testing::steps_for_path(model, std::vector<int>(horizon, 0));
        auto dense = dense_condition(model.initial_state_mean, model.initial_state_cov, steps,
                                     traj.observations);

        for (std::size_t t = 0; t < horizon; ++t) {
            CHECK((sm.smoothed[t].mean - dense.means[t]).cwiseAbs().maxCoeff() < 1e-8);
            CHECK((sm.smoothed[t].covariance - dense.covariances[t]).cwiseAbs().maxCoeff() < 1e-8);
            // Smoothing never loses information relative to filtering.
            CHECK(sm.smoothed[t].covariance.trace() <=
                  filtered[t].updated.covariance.trace() + 1e-10);
        }
        for (std::size_t t = 0; t + 1 < horizon; ++t)
            CHECK((sm.lag_one[t] - dense.lag_one[t]).cwiseAbs().maxCoeff() < 1e-8);

        // Filter log-evidence equals the dense marginal likelihood.
        double ll = 0.0;
        GaussianState state = prior;
        for (std::size_t t = 0; t < horizon; ++t) {
            auto r = t == 0 ? update_step(state, traj.observations[t], rp)
                            : filter_step(state, traj.observations[t], Vec::Zero(n), rp);
            ll += r.log_likelihood;
            state = r.updated;
        }
        CHECK(ll == doctest::Approx(dense.log_evidence).epsilon(1e-9));
    }
}

TEST_CASE("joseph update keeps covariances symmetric and PSD over many random steps") {
    RandomStream rng(2024);
    const int steps = 100000;
    Eigen::Index n = 3, m = 2;
    auto model = rssm::testing::random_switching_model(rng, 1, n, m);
    const RegimeParams& rp = model.regimes[0];
    GaussianState state(Vec::Zero(n), Mat::Identity(n, n));
    double worst_asym = 0.0;
    for (int t = 0; t < steps; ++t) {
        Vec y = rssm::testing::random_matrix(rng, m, 1, 2.0);
        auto res = filter_step(state, y, Vec::Zero(n), rp);
        worst_asym = std::max(worst_asym, (res.updated.covariance -
                                           res.updated.covariance.transpose())
                                              .cwiseAbs()
                                              .maxCoeff());
        state = res.updated;
    }
    CHECK(worst_asym <= 1e-10);
    Eigen::SelfAdjointEigenSolver<Mat> es(state.covariance);
    CHECK(es.eigenvalues().minCoeff() >= -1e-12);
}

TEST_CASE("bank over identical regimes returns identical results") {
    RandomStream rng(55);
    auto model = rssm::testing::random_switching_model(rng, 1, 2, 2);
    model.regimes.push_back(model.regimes[0]);
    model.regimes.push_back(model.regimes[0]);
    model.pi = TransitionMatrix(Mat::Ones(3, 3));
    model.initial_regime_dist = Vec::Constant(3, 1.0 / 3.0);
    GaussianState prior(Vec::Zero(2), Mat::Identity(2, 2));
    Vec y(2);
    y << 0.4, -0.9;
    auto bank = run_filter_bank(prior, y, Vec::Zero(2), model);
    REQUIRE(bank.size() == 3);
    for (int s = 1; s < 3; ++s) {
        CHECK(bank[s].log_likelihood == bank[0].log_likelihood);
        CHECK((bank[s].updated.mean - bank[0].updated.mean).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("tighter innovation covariance wins at zero innovation") {
    SwitchingModel model;
    Mat a = 0.5 * Mat::Identity(1, 1), c = Mat::Identity(1, 1);
    Mat q = 0.1 * Mat::Identity(1, 1);
    model.regimes.push_back(RegimeParams(a, c, q, 0.1 * Mat::Identity(1, 1)));
    model.regimes.push_back(RegimeParams(a, c, q, 10.0 * Mat::Identity(1, 1)));
    model.pi = TransitionMatrix(Mat::Ones(2, 2));
    model.initial_regime_dist = Vec::Constant(2, 0.5);
    model.initial_state_mean = Vec::Zero(1);
    model.initial_state_cov = Mat::Identity(1, 1);
    GaussianState prior(Vec::Zero(1), Mat::Identity(1, 1));
    // Observation exactly at both predicted means (A shared): innovation 0.
    auto bank = run_filter_bank(prior, Vec::Zero(1), Vec::Zero(1), model);
    CHECK(bank[0].log_likelihood > bank[1].log_likelihood);
}

TEST_CASE("growth-regime observations are attributed to the growth regime") {
    auto model = default_killchain_model(4, 8, 17);
    int hits = 0;
    const int draws = 1000;
    for (int i = 0; i < draws; ++i) {
        // Hold regime 3 for a while so the latent leaves the Normal equilibrium.
        SwitchingModel pinned = model;
        pinned.pi = TransitionMatrix(Mat::Identity(4, 4));
        pinned.initial_regime_dist = Vec::Zero(4);
        pinned.initial_regime_dist(3) = 1.0;
        auto traj = sample_trajectory(pinned, 40, 5000 + static_cast<std::uint64_t>(i));

        // Track the trajectory with the true-regime filter, then bank the last step.
        GaussianState state(model.initial_state_mean, model.initial_state_cov);
        const RegimeParams& rp = model.regimes[3];
        for (std::size_t t = 0; t + 1 < 40; ++t) {
            auto r = t == 0 ? update_step(state, traj.observations[t], rp)
                            : filter_step(state, traj.observations[t], Vec::Zero(8), rp);
            state = r.updated;
        }
        auto bank = run_filter_bank(state, traj.observations[39], Vec::Zero(8), model);
        int best = 0;
        for (int s = 1; s < 4; ++s)
            if (bank[s].log_likelihood > bank[best].log_likelihood) best = s;
        hits += best == 3 ? 1 : 0;
    }
    CHECK(hits >= 900);
}

}  // TEST_SUITE kalman
