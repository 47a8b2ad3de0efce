#pragma once

#include <vector>

#include "rssm/linalg.hpp"
#include "rssm/model.hpp"

namespace rssm {

/// Smoothed discrete posteriors from one forward-backward pass.
struct RegimePosteriors {
    Mat gamma;            // T x K, rows sum to 1
    std::vector<Mat> xi;  // T-1 entries, K x K; xi[t] is the (t -> t+1) pairwise
                          // marginal: rows marginalise to gamma row t, columns
                          // to gamma row t+1
    double log_evidence = 0.0;
};

/// Forward-backward over per-step per-regime emission log-likelihoods,
/// computed with per-step scaling (scaling constants accumulate into
/// log_evidence and are reused by the backward pass). Emission scores are
/// max-shifted per step before exponentiation, so the pass is invariant to
/// per-step constants added to log_lik.
RegimePosteriors forward_backward(const Mat& log_lik, const TransitionMatrix& pi,
                                  const Vec& pi0);

/// tau-step-ahead regime forecast: (Pi^T)^tau gamma, renormalised.
Vec predict_regime(const Vec& gamma_t, const TransitionMatrix& pi, int tau);

}  // namespace rssm
