#include "rssm/vsipc.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "rssm/errors.hpp"

namespace rssm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;  // log(2*pi)

double xlogy(double x, double y) {
    if (x == 0.0) return 0.0;  // 0 * log 0 = 0 convention
    return x * std::log(y);
}

/// Cached solve data for one regime's noise covariances.
struct RegimeSolves {
    Eigen::LLT<Mat> r_llt;
    double r_log_det = 0.0;
    Eigen::LLT<Mat> q_llt;
    double q_log_det = 0.0;
};

std::vector<RegimeSolves> precompute_solves(const SwitchingModel& model) {
    std::vector<RegimeSolves> out;
    out.reserve(model.regimes.size());
    for (int s = 0; s < model.regime_count(); ++s) {
        const RegimeParams& rp = model.regimes[s];
        auto r_llt = cholesky_with_retry(rp.observation_noise_r);
        auto q_llt = cholesky_with_retry(rp.process_noise_q);
        if (!r_llt || !q_llt)
            throw NumericalError("regime noise covariance not factorisable", std::nullopt, s);
        out.push_back({*r_llt, log_det_from_llt(*r_llt), *q_llt, log_det_from_llt(*q_llt)});
    }
    return out;
}

/// Expected per-regime log scores under q(x): the observation part
/// E[log p(y_t | x_t, s)] for every t, and the dynamics part
/// E[log p(x_t | x_{t-1}, s)] for t >= 1 (or t >= 0 when the window is
/// chained from a previous posterior). These feed both the discrete pass
/// and the ELBO.
struct ExpectedScores {
    Mat obs;  // T x K
    Mat dyn;  // T x K; row t holds the transition into t (row 0 zero unless chained)
};

/// Smoothed belief of the carried pre-window state for a chained window,
/// with its cross-covariance to the first in-window state.
struct ChainedBoundary {
    GaussianState prev;  // carried state smoothed against this window's data
    Mat cross;           // Cov(x_0, x_prev | window)
};

ExpectedScores expected_scores(const SwitchingModel& model,
                               const std::vector<RegimeSolves>& solves,
                               const std::vector<GaussianState>& smoothed,
                               const std::vector<Mat>& lag_one,
                               const std::vector<Vec>& observations,
                               const std::optional<std::vector<Vec>>& controls,
                               const ChainedBoundary* boundary) {
    const std::size_t steps = observations.size();
    const int k = model.regime_count();
    const double n = static_cast<double>(model.latent_dim());
    const double m = static_cast<double>(model.obs_dim());

    ExpectedScores sc;
    sc.obs.resize(steps, k);
    sc.dyn = Mat::Zero(steps, k);

    for (std::size_t t = 0; t < steps; ++t) {
        const Vec& mean_t = smoothed[t].mean;
        const Mat& cov_t = smoothed[t].covariance;
        for (int s = 0; s < k; ++s) {
            const RegimeParams& rp = model.regimes[s];
            Vec resid = observations[t] - rp.observation_matrix_c * mean_t;
            Mat cpct = rp.observation_matrix_c * cov_t * rp.observation_matrix_c.transpose();
            double quad = resid.dot(solves[s].r_llt.solve(resid));
            double trace = solves[s].r_llt.solve(cpct).trace();
            sc.obs(t, s) = -0.5 * (m * kLog2Pi + solves[s].r_log_det + quad + trace);
        }

        const bool has_prev = t > 0 || boundary != nullptr;
        if (!has_prev) continue;
        const Vec& prev_mean = t > 0 ? smoothed[t - 1].mean : boundary->prev.mean;
        const Mat& prev_cov = t > 0 ? smoothed[t - 1].covariance : boundary->prev.covariance;
        const Mat& cross = t > 0 ? lag_one[t - 1] : boundary->cross;
        Vec u = controls && t < controls->size() ? (*controls)[t] : Vec::Zero(model.latent_dim());
        for (int s = 0; s < k; ++s) {
            const Mat& a = model.regimes[s].transition_matrix_a;
            Vec d = mean_t - a * prev_mean - u;
            Mat second = d * d.transpose() + cov_t + a * prev_cov * a.transpose() -
                         cross * a.transpose() - a * cross.transpose();
            double term = solves[s].q_llt.solve(second).trace();
            sc.dyn(t, s) = -0.5 * (n * kLog2Pi + solves[s].q_log_det + term);
        }
    }
    return sc;
}

/// Entropy of the smoothed Gaussian chain, from the marginal and lag-one
/// covariances: H = sum_t 0.5 [n log(2 pi e) + log |Cov(x_t | x_{t-1})|].
double gaussian_chain_entropy(const std::vector<GaussianState>& smoothed,
                              const std::vector<Mat>& lag_one) {
    const double n = static_cast<double>(smoothed[0].mean.size());
    double entropy = 0.0;
    for (std::size_t t = 0; t < smoothed.size(); ++t) {
        Mat cond = smoothed[t].covariance;
        if (t > 0) {
            auto prev_llt = cholesky_with_retry(smoothed[t - 1].covariance);
            if (!prev_llt) throw NumericalError("smoothed covariance not factorisable", t - 1);
            cond -= lag_one[t - 1] * prev_llt->solve(lag_one[t - 1].transpose());
        }
        auto llt = cholesky_with_retry(floor_psd(cond));
        if (!llt) throw NumericalError("conditional covariance not factorisable", t);
        entropy += 0.5 * (n * (kLog2Pi + 1.0) + log_det_from_llt(*llt));
    }
    return entropy;
}

/// Entropy of the Markov regime chain described by (gamma, xi).
double regime_chain_entropy(const RegimePosteriors& post, double division_floor) {
    double h = 0.0;
    for (Eigen::Index s = 0; s < post.gamma.cols(); ++s)
        h -= xlogy(post.gamma(0, s), post.gamma(0, s));
    for (std::size_t t = 0; t < post.xi.size(); ++t) {
        const Mat& x = post.xi[t];
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            double denom = std::max(post.gamma(t, i), division_floor);
            for (Eigen::Index j = 0; j < x.cols(); ++j)
                h -= xlogy(x(i, j), x(i, j) / denom);
        }
    }
    return h;
}

double discrete_prior_terms(const RegimePosteriors& post, const TransitionMatrix& pi,
                            const Vec& pi0) {
    double total = 0.0;
    for (Eigen::Index s = 0; s < post.gamma.cols(); ++s)
        total += xlogy(post.gamma(0, s), pi0(s));
    for (const Mat& x : post.xi) {
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            for (Eigen::Index j = 0; j < x.cols(); ++j)
                total += xlogy(x(i, j), pi.probabilities(i, j));
    }
    return total;
}

/// E[log p(x_1)] under q, against the model prior N(mu0, Sigma0). Skipped
/// when the window chains from a previous posterior (the carried state plays
/// the role of the prior and its contribution telescopes across windows).
double initial_state_term(const SwitchingModel& model, const GaussianState& first) {
    auto llt = cholesky_with_retry(model.initial_state_cov);
    if (!llt) throw NumericalError("initial state covariance not factorisable");
    const double n = static_cast<double>(model.latent_dim());
    Vec d = first.mean - model.initial_state_mean;
    double quad = d.dot(llt->solve(d));
    double trace = llt->solve(first.covariance).trace();
    return -0.5 * (n * kLog2Pi + log_det_from_llt(*llt) + quad + trace);
}

double elbo_from_scores(const SwitchingModel& model, const RegimePosteriors& post,
                        const ExpectedScores& scores,
                        const std::vector<GaussianState>& smoothed,
                        const std::vector<Mat>& lag_one, const Vec& pi0,
                        double division_floor, bool chained) {
    double term_obs = (post.gamma.array() * scores.obs.array()).sum();
    double term_dyn = (post.gamma.array() * scores.dyn.array()).sum();
    double term_cont = term_dyn + gaussian_chain_entropy(smoothed, lag_one);
    if (!chained) term_cont += initial_state_term(model, smoothed[0]);
    double term_disc = discrete_prior_terms(post, model.pi, pi0) +
                       regime_chain_entropy(post, division_floor);
    return term_obs + term_cont + term_disc;
}

/// Per-regime cached products for the exact structured continuous update.
struct RegimeInfoCache {
    Mat q_inv;        // Q_s^{-1}
    Mat q_inv_a;      // Q_s^{-1} A_s
    Mat a_q_inv_a;    // A_s^T Q_s^{-1} A_s
    Mat c_r_inv;      // C_s^T R_s^{-1}
    Mat c_r_inv_c;    // C_s^T R_s^{-1} C_s
};

std::vector<RegimeInfoCache> precompute_info(const SwitchingModel& model,
                                             const std::vector<RegimeSolves>& solves) {
    std::vector<RegimeInfoCache> out;
    out.reserve(model.regimes.size());
    const Eigen::Index n = model.latent_dim();
    for (int s = 0; s < model.regime_count(); ++s) {
        const RegimeParams& rp = model.regimes[s];
        RegimeInfoCache cache;
        cache.q_inv = symmetrize(solves[s].q_llt.solve(Mat::Identity(n, n)));
        cache.q_inv_a = solves[s].q_llt.solve(rp.transition_matrix_a);
        cache.a_q_inv_a = symmetrize(rp.transition_matrix_a.transpose() * cache.q_inv_a);
        Mat r_inv_c = solves[s].r_llt.solve(rp.observation_matrix_c);
        cache.c_r_inv = r_inv_c.transpose();
        cache.c_r_inv_c = symmetrize(rp.observation_matrix_c.transpose() * r_inv_c);
        out.push_back(std::move(cache));
    }
    return out;
}

/// Condition a Gaussian on added information (precision U, info vector v):
/// P+ = (I + P U)^{-1} P, m+ = m + P+ (v - U m). U is PSD so I + P U is
/// always invertible.
GaussianState info_update(const GaussianState& g, const Mat& precision, const Vec& info_vec) {
    const Eigen::Index n = g.mean.size();
    Mat shifted = Mat::Identity(n, n) + g.covariance * precision;
    Eigen::PartialPivLU<Mat> lu(shifted);
    GaussianState out;
    out.covariance = symmetrize(lu.solve(g.covariance));
    out.mean = g.mean + out.covariance * (info_vec - precision * g.mean);
    return out;
}

/// Exact coordinate update of q(x) given q(s): the expected joint under the
/// regime posterior is a Gaussian chain with precision-weighted
/// pseudo-dynamics (A_bar, Q_bar) plus a PSD residual potential Delta on the
/// predecessor of every transition. Executed as a modified forward filter
/// and RTS backward pass.
struct ContinuousPass {
    std::vector<GaussianState> smoothed;
    std::vector<Mat> lag_one;     // Cov(x_{t+1}, x_t | y), length T-1
    std::vector<Mat> a_moment;    // per-step gamma-weighted mean dynamics (for the M-step)
    std::optional<ChainedBoundary> boundary;  // set for chained windows
};

ContinuousPass continuous_step(const SwitchingModel& model,
                               const std::vector<RegimeInfoCache>& cache, const Mat& gamma,
                               const std::vector<Vec>& observations,
                               const std::optional<std::vector<Vec>>& controls,
                               const GaussianState& start, bool chained, std::size_t iteration) {
    const std::size_t steps = observations.size();
    const int k = model.regime_count();
    const Eigen::Index n = model.latent_dim();

    auto control_at = [&](std::size_t t) -> Vec {
        if (controls && t < controls->size()) return (*controls)[t];
        return Vec::Zero(n);
    };

    std::vector<GaussianState> pre_pred(steps);   // Delta-updated belief feeding step t+1
    std::vector<GaussianState> predicted(steps);
    std::vector<GaussianState> updated(steps);
    std::vector<Mat> a_bar(steps, Mat::Identity(n, n));
    GaussianState chain_pre;  // Delta-updated carried state of a chained window

    ContinuousPass out;
    out.a_moment.assign(steps, Mat::Identity(n, n));

    GaussianState state = start;
    for (std::size_t t = 0; t < steps; ++t) {
        Vec g = gamma.row(static_cast<Eigen::Index>(t)).transpose();

        if (t > 0 || chained) {
            Mat j_bar = Mat::Zero(n, n);
            Mat b = Mat::Zero(n, n);
            Mat grow = Mat::Zero(n, n);
            Mat a_mom = Mat::Zero(n, n);
            for (int s = 0; s < k; ++s) {
                j_bar += g(s) * cache[s].q_inv;
                b += g(s) * cache[s].q_inv_a;
                grow += g(s) * cache[s].a_q_inv_a;
                a_mom += g(s) * model.regimes[s].transition_matrix_a;
            }
            out.a_moment[t] = a_mom;
            auto j_llt = cholesky_with_retry(j_bar);
            if (!j_llt)
                throw NumericalError("effective dynamics precision not factorisable", t,
                                     std::nullopt, iteration);
            Mat q_bar = symmetrize(j_llt->solve(Mat::Identity(n, n)));
            Mat a_step = q_bar * b;
            Mat delta = floor_psd(grow - symmetrize(b.transpose() * q_bar * b), 0.0);

            GaussianState pre = info_update(state, delta, Vec::Zero(n));
            if (t > 0) pre_pred[t - 1] = pre;
            else chain_pre = pre;

            predicted[t].mean = a_step * pre.mean + control_at(t);
            predicted[t].covariance = symmetrize(a_step * pre.covariance * a_step.transpose() + q_bar);
            a_bar[t] = a_step;
        } else {
            predicted[t] = state;
        }

        Mat u_info = Mat::Zero(n, n);
        Vec v_info = Vec::Zero(n);
        for (int s = 0; s < k; ++s) {
            u_info += g(s) * cache[s].c_r_inv_c;
            v_info += g(s) * (cache[s].c_r_inv * observations[t]);
        }
        updated[t] = info_update(predicted[t], u_info, v_info);
        if (!all_finite(updated[t].mean))
            throw NumericalError("filtered mean is not finite", t, std::nullopt, iteration);
        state = updated[t];
    }

    out.smoothed.resize(steps);
    if (steps > 1) out.lag_one.resize(steps - 1);
    out.smoothed[steps - 1] = updated[steps - 1];
    for (std::size_t t = steps - 1; t-- > 0;) {
        auto llt = cholesky_with_retry(predicted[t + 1].covariance);
        if (!llt)
            throw NumericalError("predicted covariance not invertible in smoother", t + 1,
                                 std::nullopt, iteration);
        Mat gain = llt->solve(a_bar[t + 1] * pre_pred[t].covariance).transpose();
        out.smoothed[t].mean =
            pre_pred[t].mean + gain * (out.smoothed[t + 1].mean - predicted[t + 1].mean);
        out.smoothed[t].covariance = floor_psd(
            pre_pred[t].covariance +
            gain * (out.smoothed[t + 1].covariance - predicted[t + 1].covariance) * gain.transpose());
        out.lag_one[t] = out.smoothed[t + 1].covariance * gain.transpose();
    }

    if (chained) {
        // Smooth the carried state against this window's evidence so the
        // boundary score sees the same joint the in-window steps do.
        auto llt = cholesky_with_retry(predicted[0].covariance);
        if (!llt)
            throw NumericalError("predicted covariance not invertible at window boundary", 0,
                                 std::nullopt, iteration);
        Mat gain = llt->solve(a_bar[0] * chain_pre.covariance).transpose();
        ChainedBoundary boundary;
        boundary.prev.mean =
            chain_pre.mean + gain * (out.smoothed[0].mean - predicted[0].mean);
        boundary.prev.covariance = floor_psd(
            chain_pre.covariance +
            gain * (out.smoothed[0].covariance - predicted[0].covariance) * gain.transpose());
        boundary.cross = out.smoothed[0].covariance * gain.transpose();
        out.boundary = std::move(boundary);
    }
    return out;
}

}  // namespace

std::pair<Mat, Mat> effective_params(const Vec& gamma_t, const std::vector<RegimeParams>& regimes,
                                     const Mat& p_prev_smoothed) {
    const Eigen::Index n = regimes[0].latent_dim();
    Mat a_eff = Mat::Zero(n, n);
    for (std::size_t s = 0; s < regimes.size(); ++s)
        a_eff += gamma_t(static_cast<Eigen::Index>(s)) * regimes[s].transition_matrix_a;
    Mat q_eff = Mat::Zero(n, n);
    for (std::size_t s = 0; s < regimes.size(); ++s) {
        double w = gamma_t(static_cast<Eigen::Index>(s));
        const Mat& a_s = regimes[s].transition_matrix_a;
        q_eff += w * regimes[s].process_noise_q;
        Mat diff = a_s - a_eff;
        q_eff += w * diff * p_prev_smoothed * diff.transpose();
    }
    return {a_eff, floor_psd(q_eff)};
}

double elbo(const SwitchingModel& model, const RegimePosteriors& posteriors,
            const std::vector<GaussianState>& smoothed, const std::vector<Mat>& lag_one,
            const std::vector<Vec>& observations,
            const std::optional<std::vector<Vec>>& controls, const Vec* pi0_override) {
    auto solves = precompute_solves(model);
    ExpectedScores scores =
        expected_scores(model, solves, smoothed, lag_one, observations, controls, nullptr);
    Vec pi0 = pi0_override ? *pi0_override : model.initial_regime_dist;
    return elbo_from_scores(model, posteriors, scores, smoothed, lag_one, pi0, 1e-6, false);
}

VariationalResult infer(const SwitchingModel& model, const std::vector<Vec>& observations,
                        const std::optional<std::vector<Vec>>& controls,
                        const InferenceConfig& config,
                        const std::optional<InferenceInit>& init) {
    const std::size_t steps = observations.size();
    if (steps < 1) throw ValidationError("infer: empty observation sequence");
    auto report = validate_model(model);
    if (!report.empty()) throw ValidationError("infer: invalid model");
    if (config.tolerance_epsilon <= 0.0 || config.k_max < 1 || config.division_floor <= 0.0)
        throw ValidationError("infer: invalid inference configuration");

    const int k = model.regime_count();
    const Eigen::Index n = model.latent_dim();

    GaussianState start(model.initial_state_mean, model.initial_state_cov);
    Vec pi0 = config.initial_regime_dist.value_or(model.initial_regime_dist);
    bool chained = false;
    if (init) {
        start = init->state;
        pi0 = init->regime_dist;
        chained = init->apply_dynamics_at_first;
    }
    if (pi0.size() != k) throw ValidationError("infer: initial regime distribution has wrong length");

    auto control_at = [&](std::size_t t) -> Vec {
        if (controls && t < controls->size()) return (*controls)[t];
        return Vec::Zero(n);
    };

    VariationalResult out;

    // Parallel bank pass: each regime filters the whole window from the
    // shared starting state under its own parameters.
    out.bank_log_lik.resize(steps, k);
    out.bank_innovations.assign(steps, std::vector<Vec>(k));
    out.bank_filtered_cov.assign(steps, std::vector<Mat>(k));
    {
        std::vector<GaussianState> bank_state(k, start);
        for (std::size_t t = 0; t < steps; ++t) {
            for (int s = 0; s < k; ++s) {
                try {
                    FilterStepResult r =
                        (t == 0 && !chained)
                            ? update_step(bank_state[s], observations[t], model.regimes[s])
                            : filter_step(bank_state[s], observations[t], control_at(t),
                                          model.regimes[s]);
                    out.bank_log_lik(t, s) = r.log_likelihood;
                    out.bank_innovations[t][s] = r.innovation;
                    out.bank_filtered_cov[t][s] = r.updated.covariance;
                    bank_state[s] = r.updated;
                } catch (const NumericalError& e) {
                    throw NumericalError(e.what(), t, s);
                }
            }
        }
    }

    auto solves = precompute_solves(model);
    auto info_cache = precompute_info(model, solves);

    // gamma^(0): the prior at every step.
    RegimePosteriors post;
    post.gamma = Mat::Zero(steps, k);
    for (std::size_t t = 0; t < steps; ++t) post.gamma.row(t) = pi0.transpose();

    std::vector<GaussianState> smoothed;
    std::vector<Mat> lag_one;
    double prev_elbo = -std::numeric_limits<double>::infinity();
    out.converged = false;

    for (std::size_t iter = 1; iter <= config.k_max; ++iter) {
        // --- Continuous pass: exact structured update of q(x) given q(s).
        ContinuousPass pass = continuous_step(model, info_cache, post.gamma, observations,
                                              controls, start, chained, iter);
        smoothed = std::move(pass.smoothed);
        lag_one = std::move(pass.lag_one);
        out.a_eff = std::move(pass.a_moment);

        // --- Discrete pass. The first iteration is seeded by the parallel
        // bank's predictive log-likelihoods (the flat-prior smoothed states
        // carry no regime signal yet); later iterations use the expected
        // emission+dynamics scores of the current continuous posterior, which
        // makes the pass an exact coordinate update.
        ExpectedScores scores =
            expected_scores(model, solves, smoothed, lag_one, observations, controls,
                            pass.boundary ? &*pass.boundary : nullptr);
        try {
            post = forward_backward(iter == 1 ? out.bank_log_lik : (scores.obs + scores.dyn),
                                    model.pi, pi0);
        } catch (const NumericalError& e) {
            throw NumericalError(e.what(), e.time_index(), e.regime(), iter);
        }

        double value = elbo_from_scores(model, post, scores, smoothed, lag_one, pi0,
                                        config.division_floor, chained);
        if (!std::isfinite(value)) throw NumericalError("ELBO is not finite", std::nullopt, std::nullopt, iter);
        out.elbo_trace.push_back(value);
        out.iterations = iter;

        if (std::abs(value - prev_elbo) <= config.tolerance_epsilon) {
            out.converged = true;
            break;
        }
        prev_elbo = value;
    }

    out.posteriors = std::move(post);
    out.smoothed_states = std::move(smoothed);
    out.lag_one_cov = std::move(lag_one);
    return out;
}

}  // namespace rssm
