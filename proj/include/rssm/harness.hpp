#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rssm/alerting.hpp"
#include "rssm/model.hpp"
#include "rssm/online_em.hpp"
#include "rssm/vsipc.hpp"

namespace rssm {

/// Scripted ground-truth scenario: regime segments plus benign additive
/// observation shifts at given windows.
struct ScenarioScript {
    struct Segment {
        int regime = 0;
        std::size_t windows = 1;
    };
    struct Injection {
        std::size_t window = 0;
        double magnitude = 0.0;
        std::vector<int> dims;
    };
    std::vector<Segment> segments;
    std::vector<Injection> injections;
    std::uint64_t seed = 0;
};

struct ScenarioData {
    std::vector<Vec> observations;
    std::vector<int> truth_regimes;
    std::vector<Vec> latents;
};

/// Samples observations with the regime track forced by the script
/// (overriding the transition matrix), then applies the injections.
/// A single segment with no injections reproduces sample_trajectory on the
/// pinned-regime model bit-exactly. Deterministic given the script seed.
ScenarioData generate_scenario(const ScenarioScript& script, const SwitchingModel& model);

/// Per-step pipeline output.
struct BeliefState {
    std::size_t window_id = 0;
    Vec gamma;                       // regime posterior
    Mat xi;                          // pairwise marginal into this step (empty at stream start)
    Vec state_mean;                  // smoothed latent mean
    Mat state_cov;                   // smoothed latent covariance
    std::vector<Vec> regime_innovations;  // per-regime predictive innovations
    double kl_score = 0.0;
    double entropy = 0.0;  // discrete-posterior entropy H(q(s_1:t)) within the batch
};

struct LatencyStats {
    double mean_ms = 0.0;
    double stddev_ms = 0.0;
};

struct DetectionConfig {
    InferenceConfig inference;
    OnlineEmConfig em;
    GateConfig gate;
    /// When unset, tau is calibrated from the KL scores collected over the
    /// calibration windows: headroom * quantile. The headroom covers the gap
    /// between the bulk's edge and the heavy posterior-flicker tail; a plain
    /// quantile is exceeded by (1 - quantile) of clean windows by definition.
    std::optional<double> tau_kl;
    double tau_quantile = 0.995;
    double tau_headroom = 8.0;
    std::size_t window_batch = 60;
    std::size_t calibration_windows = 600;
    double window_seconds = 1.0;
    bool adapt_parameters = true;   // online EM on/off (static ablation)
    bool kl_gate_enabled = true;    // gate off -> alert on any non-Normal stage
    bool single_regime_baseline = false;  // anomaly filter: K=1, Mahalanobis scoring
    std::optional<std::size_t> save_params_every;  // snapshot cadence in windows
};

struct DetectionResult {
    std::vector<BeliefState> beliefs;
    std::vector<AlertRecord> alerts;
    SwitchingModel adapted_model;
    double elbo_final = 0.0;
    LatencyStats latency;
    double tau_used = 0.0;
};

/// Parameter snapshot callback: (window index, model at that point).
using ParamSnapshotSink = std::function<void(std::size_t, const SwitchingModel&)>;

/// Streaming pipeline: processes observations in batches of window_batch
/// steps; per batch runs the variational pass, emits per-step beliefs and
/// KL-gated alerts, then applies the online M-step updates from the batch's
/// posteriors. Parameters carry forward across batches (snapshot isolation
/// at batch boundaries).
DetectionResult run_detection(const std::vector<Vec>& observations, const SwitchingModel& model,
                              const DetectionConfig& config,
                              const ParamSnapshotSink& snapshot_sink = nullptr);

struct EvaluationReport {
    double f1_aggregate = 0.0;                     // attack-vs-normal, per window
    std::vector<std::pair<int, double>> f1_per_class;  // (regime, one-vs-rest F1)
    double false_positive_rate = 0.0;              // alerted Normal windows / Normal windows
    std::optional<double> stage_attribution_accuracy;
    std::optional<double> early_detection_margin_seconds;
    LatencyStats latency;
    double elbo_final = 0.0;
};

struct EvaluationOptions {
    /// Ground-truth onset used by the early-detection margin: the first
    /// window whose regime index is >= this value. 1 = any non-Normal
    /// segment; 2 = the intrusion core of a staged scenario.
    int onset_min_regime = 1;
    bool has_stage_attribution = true;
};

EvaluationReport evaluate(const std::vector<BeliefState>& beliefs,
                          const std::vector<AlertRecord>& alerts,
                          const std::vector<int>& truth_regimes, double window_seconds,
                          const EvaluationOptions& options = {});

/// Belief CSV: window_id, gamma columns, kl, entropy.
void write_belief_csv(const std::string& path, const std::vector<BeliefState>& beliefs);
std::vector<BeliefState> read_belief_csv(const std::string& path);

void write_truth_csv(const std::string& path, const std::vector<int>& truth);
std::vector<int> read_truth_csv(const std::string& path);

std::string report_to_json(const EvaluationReport& report);

/// Scenario script JSON: {"seed": .., "segments": [{"regime", "windows"}..],
/// "injections": [{"window", "magnitude", "dims"}..]}.
ScenarioScript script_from_json(const std::string& text);
ScenarioScript load_script(const std::string& path);

}  // namespace rssm
