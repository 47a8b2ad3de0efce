#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rssm/hmm.hpp"
#include "rssm/linalg.hpp"
#include "rssm/model.hpp"

namespace rssm {

/// Structured kill-chain alert.
struct AlertRecord {
    double timestamp = 0.0;
    Vec stage_posterior;      // gamma_t, sums to 1
    double kl_score = 0.0;    // >= 0
    double elbo_entropy = 0.0;
    std::string current_stage;    // argmax of stage_posterior, ties to lower index
    std::string predicted_stage;  // argmax of the one-step forecast
    Vec predicted_posterior;      // Pi^T gamma_t
    int current_stage_index = 0;
    int predicted_stage_index = 0;
};

struct GateConfig {
    double tau_kl = 1.0;  // > 0
};

/// KL divergence between the realised posterior and its one-step Markov
/// prediction from the previous posterior. Zero when the posterior moved
/// exactly as the chain predicted; large when a transition the model did
/// not anticipate occurred. Natural log; prediction floored at 1e-12.
double kl_gate(const Vec& gamma_t, const Vec& gamma_prev, const TransitionMatrix& pi);

/// Builds an alert iff kl exceeds the gate threshold. Stage labels come
/// from `labels` (defaults used when empty); argmax ties break toward the
/// lower regime index.
std::optional<AlertRecord> build_alert(double timestamp, const Vec& gamma_t, double kl,
                                       double entropy, const TransitionMatrix& pi,
                                       const GateConfig& config,
                                       const std::vector<std::string>& labels = {});

/// Gate threshold from calibration samples: the given quantile of the
/// observed KL scores (default the 99.5th percentile).
double calibrate_tau(std::vector<double> kl_samples, double quantile = 0.995);

/// JSON-lines serialisation, one object per alert, fields exactly:
/// timestamp, stage_posterior, kl_score, elbo_entropy, current_stage,
/// predicted_stage, predicted_posterior.
std::string alert_to_json(const AlertRecord& alert);
void write_alert_jsonl(const std::string& path, const std::vector<AlertRecord>& alerts);
std::vector<AlertRecord> read_alert_jsonl(const std::string& path);

int argmax_lowest_tie(const Vec& v);

}  // namespace rssm
