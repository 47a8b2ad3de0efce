#include <doctest.h>

#include "rssm/errors.hpp"
#include "rssm/hmm.hpp"
#include "rssm/model.hpp"

#include "support/instances.hpp"
#include "support/path_enum_oracle.hpp"

using namespace rssm;
using rssm::testing::enumerate_discrete;

TEST_SUITE("hmm") {

TEST_CASE("full symmetry yields uniform posteriors") {
    Mat log_lik = Mat::Constant(8, 2, -1.7);
    TransitionMatrix pi(Mat::Constant(2, 2, 0.5));
    Vec pi0 = Vec::Constant(2, 0.5);
    auto post = forward_backward(log_lik, pi, pi0);
    for (Eigen::Index t = 0; t < 8; ++t) {
        CHECK(post.gamma(t, 0) == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(post.gamma(t, 1) == doctest::Approx(0.5).epsilon(1e-12));
    }
}

TEST_CASE("absorbing chain from certainty stays put") {
    RandomStream rng(3);
    Mat log_lik = rssm::testing::random_matrix(rng, 10, 2, 2.0);
    TransitionMatrix pi(Mat::Identity(2, 2));
    Vec pi0(2);
    pi0 << 1.0, 0.0;
    auto post = forward_backward(log_lik, pi, pi0);
    for (Eigen::Index t = 0; t < 10; ++t) {
        CHECK(post.gamma(t, 0) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(post.gamma(t, 1) == doctest::Approx(0.0).epsilon(1e-12));
    }
}

TEST_CASE("matches exhaustive path enumeration") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        RandomStream rng(100 + seed);
        int k = 2 + static_cast<int>(rng.uniform() * 2.999);  // 2..4
        Eigen::Index horizon = 6;
        Mat log_lik = rssm::testing::random_matrix(rng, horizon, k, 2.0);
        TransitionMatrix pi = rssm::testing::random_stochastic(rng, k);
        Vec pi0 = rssm::testing::random_simplex(rng, k);

        auto post = forward_backward(log_lik, pi, pi0);
        auto exact = enumerate_discrete(log_lik, pi, pi0);

        CHECK((post.gamma - exact.gamma).cwiseAbs().maxCoeff() < 1e-10);
        REQUIRE(post.xi.size() == exact.xi.size());
        for (std::size_t t = 0; t < post.xi.size(); ++t)
            CHECK((post.xi[t] - exact.xi[t]).cwiseAbs().maxCoeff() < 1e-10);
        CHECK(post.log_evidence == doctest::Approx(exact.log_evidence).epsilon(1e-10));
    }
}

TEST_CASE("posterior consistency invariants hold on random instances") {
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        RandomStream rng(5000 + seed);
        int k = 2 + static_cast<int>(rng.uniform() * 2.999);
        Eigen::Index horizon = 1 + static_cast<Eigen::Index>(rng.uniform() * 50);
        Mat log_lik = rssm::testing::random_matrix(rng, horizon, k, 3.0);
        TransitionMatrix pi = rssm::testing::random_stochastic(rng, k);
        Vec pi0 = rssm::testing::random_simplex(rng, k);
        auto post = forward_backward(log_lik, pi, pi0);

        for (Eigen::Index t = 0; t < horizon; ++t)
            CHECK(std::abs(post.gamma.row(t).sum() - 1.0) < 1e-10);
        CHECK(post.xi.size() == static_cast<std::size_t>(horizon - 1));
        for (std::size_t t = 0; t < post.xi.size(); ++t) {
            CHECK(std::abs(post.xi[t].sum() - 1.0) < 1e-10);
            Vec row_marg = post.xi[t].rowwise().sum();
            Vec col_marg = post.xi[t].colwise().sum().transpose();
            CHECK((row_marg - post.gamma.row(t).transpose()).cwiseAbs().maxCoeff() < 1e-8);
            CHECK((col_marg - post.gamma.row(t + 1).transpose()).cwiseAbs().maxCoeff() < 1e-8);
        }
    }
}

TEST_CASE("per-step likelihood shifts leave the posteriors unchanged") {
    RandomStream rng(77);
    Mat log_lik = rssm::testing::random_matrix(rng, 12, 3, 2.0);
    TransitionMatrix pi = rssm::testing::random_stochastic(rng, 3);
    Vec pi0 = rssm::testing::random_simplex(rng, 3);
    auto base = forward_backward(log_lik, pi, pi0);

    Mat shifted = log_lik;
    for (Eigen::Index t = 0; t < 12; ++t) shifted.row(t).array() += 50.0 * rng.gaussian();
    auto moved = forward_backward(shifted, pi, pi0);

    CHECK((base.gamma - moved.gamma).cwiseAbs().maxCoeff() < 1e-10);
    for (std::size_t t = 0; t < base.xi.size(); ++t)
        CHECK((base.xi[t] - moved.xi[t]).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("single-step edge: xi empty, gamma proportional to prior times likelihood") {
    Mat log_lik(1, 2);
    log_lik << std::log(0.4), std::log(0.1);
    TransitionMatrix pi(Mat::Constant(2, 2, 0.5));
    Vec pi0(2);
    pi0 << 0.25, 0.75;
    auto post = forward_backward(log_lik, pi, pi0);
    CHECK(post.xi.empty());
    double z = 0.25 * 0.4 + 0.75 * 0.1;
    CHECK(post.gamma(0, 0) == doctest::Approx(0.25 * 0.4 / z).epsilon(1e-12));
    CHECK(post.log_evidence == doctest::Approx(std::log(z)).epsilon(1e-12));
}

TEST_CASE("predict_regime: identity, preset row, semigroup, validity") {
    auto model = default_killchain_model(4, 8, 17);

    Vec gamma(4);
    gamma << 0.4, 0.3, 0.2, 0.1;
    TransitionMatrix identity(Mat::Identity(4, 4));
    CHECK((predict_regime(gamma, identity, 5) - gamma).cwiseAbs().maxCoeff() < 1e-15);

    Vec one_hot = Vec::Zero(4);
    one_hot(0) = 1.0;
    Vec pred = predict_regime(one_hot, model.pi, 1);
    CHECK(pred(0) == doctest::Approx(0.92).epsilon(1e-12));
    CHECK(pred(1) == doctest::Approx(0.07).epsilon(1e-12));
    CHECK(pred(2) == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(pred(3) == doctest::Approx(0.00).epsilon(1e-12));

    Vec three = predict_regime(gamma, model.pi, 3);
    Vec chained = predict_regime(predict_regime(predict_regime(gamma, model.pi, 1), model.pi, 1),
                                 model.pi, 1);
    CHECK((three - chained).cwiseAbs().maxCoeff() < 1e-12);

    RandomStream rng(11);
    for (int i = 0; i < 200; ++i) {
        Vec g = rssm::testing::random_simplex(rng, 4);
        Vec p = predict_regime(g, model.pi, 1 + static_cast<int>(rng.uniform() * 6));
        CHECK(p.minCoeff() >= 0.0);
        CHECK(std::abs(p.sum() - 1.0) < 1e-12);
    }
}

TEST_CASE("rejects invalid input") {
    Mat log_lik = Mat::Zero(3, 2);
    log_lik(1, 0) = std::numeric_limits<double>::infinity();
    TransitionMatrix pi(Mat::Constant(2, 2, 0.5));
    Vec pi0 = Vec::Constant(2, 0.5);
    CHECK_THROWS_AS(forward_backward(log_lik, pi, pi0), ValidationError);
    CHECK_THROWS_AS(predict_regime(Vec::Constant(2, 0.7), pi, 1), ValidationError);
}

}  // TEST_SUITE hmm
