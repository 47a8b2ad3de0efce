#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rssm/linalg.hpp"

namespace rssm {

inline constexpr int kFeatureCount = 17;

/// Pre-extracted flow record, one per CSV row. Optional payload and
/// direction columns may be absent; features depending on them fall back
/// to zero for the window.
struct FlowRecord {
    double timestamp = 0.0;  // epoch seconds, fractional
    std::string src_ip;
    std::string dst_ip;
    int src_port = 0;
    int dst_port = 0;
    std::string protocol;
    std::uint64_t packet_count = 0;
    std::uint64_t byte_count = 0;
    std::uint64_t syn_count = 0;
    std::uint64_t ack_count = 0;
    bool failed = false;
    double duration = 0.0;
    std::uint64_t dns_query_count = 0;
    std::uint64_t icmp_count = 0;
    std::uint64_t fragment_count = 0;
    std::optional<std::string> http_method;
    std::optional<bool> inbound;  // direction: true = inbound, false = outbound
    std::optional<std::vector<double>> payload_length_values;
    std::optional<std::array<std::uint64_t, 256>> payload_byte_histogram;
};

/// Standardised observation for one window.
struct ObservationVector {
    Vec values;  // length 17, finite
    double window_start = 0.0;
    std::size_t window_id = 0;
};

/// Welford running statistics for the 17 feature dimensions.
struct NormalizerState {
    std::uint64_t count = 0;
    Vec running_mean = Vec::Zero(kFeatureCount);
    Vec running_m2 = Vec::Zero(kFeatureCount);  // sum of squared deviations
    bool frozen = false;
    std::optional<double> tau_kl;  // persisted alert threshold, when calibrated

    /// Population variance with the division floor applied.
    Vec variance(double floor = 1e-6) const;
};

struct FlowWindow {
    std::size_t window_id = 0;
    double window_start = 0.0;
    std::vector<FlowRecord> records;
};

/// Assigns time-ordered records to windows of width window_seconds aligned
/// to the first record's timestamp. Default stride equals the width
/// (tumbling); a smaller stride yields overlapping windows. Empty windows
/// are emitted (they still produce an observation). Rejects out-of-order
/// input at the first offending record.
std::vector<FlowWindow> window_flows(const std::vector<FlowRecord>& records,
                                     double window_seconds,
                                     std::optional<double> stride = std::nullopt);

/// Raw 17-dimensional feature vector for one window group. Degenerate
/// windows produce the defined-zero vector; entropies are in bits.
Vec extract_features(const FlowWindow& window, double window_seconds);

/// Z-scores a raw vector against the normaliser. While calibrating the
/// statistics are updated first and the score uses the current statistics;
/// once frozen it is a pure transform. Variance is floored at 1e-6.
std::pair<ObservationVector, NormalizerState> normalize(const Vec& raw,
                                                        const NormalizerState& state,
                                                        bool calibrating,
                                                        std::size_t window_id = 0,
                                                        double window_start = 0.0);

/// CSV input: fixed documented header, one FlowRecord per row.
std::vector<FlowRecord> read_flow_csv(const std::string& path);
std::vector<FlowRecord> parse_flow_csv(std::istream& in);

/// Observation CSV: window_id, window_start, d1..d17.
void write_observation_csv(const std::string& path, const std::vector<ObservationVector>& obs);
std::vector<ObservationVector> read_observation_csv(const std::string& path);

/// Normaliser persistence (JSON).
std::string normalizer_to_json(const NormalizerState& state);
NormalizerState normalizer_from_json(const std::string& text);
void save_normalizer(const NormalizerState& state, const std::string& path);
NormalizerState load_normalizer(const std::string& path);

/// Full featurisation pipeline: window, extract, normalise. The first
/// `calibration_windows` windows update the statistics, after which they
/// freeze.
struct FeaturizeResult {
    std::vector<ObservationVector> observations;
    NormalizerState normalizer;
};
FeaturizeResult featurize(const std::vector<FlowRecord>& records, double window_seconds,
                          std::size_t calibration_windows,
                          std::optional<double> stride = std::nullopt);

}  // namespace rssm
