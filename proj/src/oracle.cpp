#include "rssm/oracle.hpp"

#include <cmath>
#include <limits>

#include "rssm/errors.hpp"

namespace rssm {

ExactPosterior enumerate_exact(const SwitchingModel& model, const std::vector<Vec>& observations,
                               std::uint64_t max_paths) {
    const std::size_t steps = observations.size();
    if (steps == 0) throw ValidationError("enumerate_exact: no observations");
    auto report = validate_model(model);
    if (!report.empty()) throw ValidationError("enumerate_exact: invalid model");

    const int k = model.regime_count();
    double path_count_f = std::pow(static_cast<double>(k), static_cast<double>(steps));
    if (path_count_f > static_cast<double>(max_paths))
        throw ValidationError("enumerate_exact: K^T = " + std::to_string(path_count_f) +
                              " paths exceed the cap of " + std::to_string(max_paths));
    const std::uint64_t path_count = static_cast<std::uint64_t>(path_count_f + 0.5);

    ExactPosterior out;
    out.path_log_weights.resize(path_count);
    out.exact_gamma = Mat::Zero(steps, k);
    out.exact_state_marginals.resize(steps);
    for (auto& mm : out.exact_state_marginals) {
        mm.weights.reserve(path_count);
        mm.means.reserve(path_count);
        mm.covariances.reserve(path_count);
    }

    std::vector<int> path(steps);
    std::vector<FilteredPair> filtered(steps);
    std::vector<Mat> transitions(steps);

    for (std::uint64_t p = 0; p < path_count; ++p) {
        // Decode path index: most significant digit = step 0.
        std::uint64_t rem = p;
        for (std::size_t t = steps; t-- > 0;) {
            path[t] = static_cast<int>(rem % k);
            rem /= k;
        }

        double log_prior = std::log(model.initial_regime_dist(path[0]));
        double log_lik = 0.0;
        bool dead_path = !std::isfinite(log_prior);

        for (std::size_t t = 0; t < steps && !dead_path; ++t) {
            const RegimeParams& rp = model.regimes[path[t]];
            if (t == 0) {
                GaussianState prior(model.initial_state_mean, model.initial_state_cov);
                filtered[0].predicted = prior;
                auto res = update_step(prior, observations[0], rp);
                filtered[0].updated = res.updated;
                transitions[0] = Mat::Identity(model.latent_dim(), model.latent_dim());
                log_lik += res.log_likelihood;
            } else {
                log_prior += std::log(model.pi.probabilities(path[t - 1], path[t]));
                if (!std::isfinite(log_prior)) {
                    dead_path = true;
                    break;
                }
                auto res = filter_step(filtered[t - 1].updated, observations[t],
                                       model.control_at(t), rp);
                filtered[t].predicted = res.predicted;
                filtered[t].updated = res.updated;
                transitions[t] = rp.transition_matrix_a;
                log_lik += res.log_likelihood;
            }
        }

        if (dead_path) {
            out.path_log_weights[p] = -std::numeric_limits<double>::infinity();
            // Zero-weight components still materialise so the mixture size is
            // exactly K^T; their states are the path smoothed through wherever
            // the prior died, which is fine at weight zero. Use the prior.
            for (std::size_t t = 0; t < steps; ++t) {
                out.exact_state_marginals[t].means.push_back(model.initial_state_mean);
                out.exact_state_marginals[t].covariances.push_back(model.initial_state_cov);
            }
            continue;
        }

        out.path_log_weights[p] = log_prior + log_lik;
        SmootherResult sm = rts_smooth(filtered, transitions);
        for (std::size_t t = 0; t < steps; ++t) {
            out.exact_state_marginals[t].means.push_back(sm.smoothed[t].mean);
            out.exact_state_marginals[t].covariances.push_back(sm.smoothed[t].covariance);
        }
    }

    out.exact_log_evidence = log_sum_exp(out.path_log_weights);
    if (!std::isfinite(out.exact_log_evidence))
        throw NumericalError("enumerate_exact: log evidence is not finite");

    // Normalised path posteriors -> gamma and mixture weights.
    std::vector<double> weights(path_count);
    for (std::uint64_t p = 0; p < path_count; ++p) {
        double lw = out.path_log_weights[p] - out.exact_log_evidence;
        weights[p] = std::isfinite(lw) ? std::exp(lw) : 0.0;
    }
    for (std::uint64_t p = 0; p < path_count; ++p) {
        std::uint64_t rem = p;
        for (std::size_t t = steps; t-- > 0;) {
            out.exact_gamma(t, rem % k) += weights[p];
            rem /= k;
        }
    }
    for (Eigen::Index t = 0; t < out.exact_gamma.rows(); ++t)
        out.exact_gamma.row(t) /= out.exact_gamma.row(t).sum();
    for (auto& mm : out.exact_state_marginals) mm.weights = weights;

    return out;
}

}  // namespace rssm
