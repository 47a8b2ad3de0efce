#include "rssm/feov.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "rssm/errors.hpp"

namespace rssm {

namespace {

double entropy_bits(const std::map<std::string, std::uint64_t>& counts) {
    std::uint64_t total = 0;
    for (const auto& [_, c] : counts) total += c;
    if (total == 0) return 0.0;
    double h = 0.0;
    for (const auto& [_, c] : counts) {
        if (c == 0) continue;
        double p = static_cast<double>(c) / static_cast<double>(total);
        h -= p * std::log2(p);
    }
    return h;
}

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

Vec NormalizerState::variance(double floor) const {
    Vec var = Vec::Constant(kFeatureCount, floor);
    if (count > 0) {
        for (int i = 0; i < kFeatureCount; ++i)
            var(i) = std::max(running_m2(i) / static_cast<double>(count), floor);
    }
    return var;
}

std::vector<FlowWindow> window_flows(const std::vector<FlowRecord>& records,
                                     double window_seconds, std::optional<double> stride_opt) {
    if (window_seconds <= 0.0) throw ValidationError("window_flows: window width must be positive");
    double stride = stride_opt.value_or(window_seconds);
    if (stride <= 0.0) throw ValidationError("window_flows: stride must be positive");

    for (std::size_t i = 1; i < records.size(); ++i) {
        if (records[i].timestamp < records[i - 1].timestamp)
            throw ValidationError("window_flows: records not sorted by timestamp at index " +
                                  std::to_string(i));
    }
    if (records.empty()) return {};

    const double t0 = records.front().timestamp;
    const double t_last = records.back().timestamp;
    const std::size_t last_window = static_cast<std::size_t>(std::floor((t_last - t0) / stride));

    std::vector<FlowWindow> windows(last_window + 1);
    for (std::size_t w = 0; w <= last_window; ++w) {
        windows[w].window_id = w;
        windows[w].window_start = t0 + static_cast<double>(w) * stride;
    }
    for (const FlowRecord& r : records) {
        double offset = r.timestamp - t0;
        // Window w covers [w*stride, w*stride + width).
        long hi = static_cast<long>(std::floor(offset / stride));
        long lo = std::max<long>(0, static_cast<long>(std::floor((offset - window_seconds) / stride)));
        for (long w = lo; w <= hi && w <= static_cast<long>(last_window); ++w) {
            double start = static_cast<double>(w) * stride;
            if (offset >= start && offset < start + window_seconds)
                windows[static_cast<std::size_t>(w)].records.push_back(r);
        }
    }
    return windows;
}

Vec extract_features(const FlowWindow& window, double window_seconds) {
    Vec d = Vec::Zero(kFeatureCount);
    const auto& recs = window.records;
    if (window_seconds <= 0.0) throw ValidationError("extract_features: window width must be positive");
    if (recs.empty()) return d;

    // Group 1: inter-arrival statistics over record timestamps, bytes per
    // packet, mean flow duration.
    std::vector<double> times;
    times.reserve(recs.size());
    for (const auto& r : recs) times.push_back(r.timestamp);
    std::sort(times.begin(), times.end());
    if (times.size() >= 2) {
        std::vector<double> gaps(times.size() - 1);
        for (std::size_t i = 1; i < times.size(); ++i) gaps[i - 1] = times[i] - times[i - 1];
        double mean = 0.0;
        for (double g : gaps) mean += g;
        mean /= static_cast<double>(gaps.size());
        double var = 0.0;
        for (double g : gaps) var += (g - mean) * (g - mean);
        var /= static_cast<double>(gaps.size());
        d(0) = mean;
        d(1) = var;
    }
    std::uint64_t total_bytes = 0, total_packets = 0;
    double total_duration = 0.0;
    for (const auto& r : recs) {
        total_bytes += r.byte_count;
        total_packets += r.packet_count;
        total_duration += r.duration;
    }
    if (total_packets > 0) d(2) = static_cast<double>(total_bytes) / static_cast<double>(total_packets);
    d(3) = total_duration / static_cast<double>(recs.size());

    // Group 2: destination-port entropy, distinct destination count, protocol
    // entropy, SYN/ACK ratio.
    std::map<std::string, std::uint64_t> port_counts, proto_counts, dip;
    std::uint64_t syn = 0, ack = 0;
    for (const auto& r : recs) {
        ++port_counts[std::to_string(r.dst_port)];
        ++proto_counts[r.protocol];
        ++dip[r.dst_ip];
        syn += r.syn_count;
        ack += r.ack_count;
    }
    d(4) = entropy_bits(port_counts);
    d(5) = static_cast<double>(dip.size());
    d(6) = entropy_bits(proto_counts);
    d(7) = ack > 0 ? static_cast<double>(syn) / static_cast<double>(ack)
                   : static_cast<double>(syn);

    // Group 3: payload byte entropy, payload length variance, directional
    // byte/packet ratios, fragment rate.
    std::array<std::uint64_t, 256> hist{};
    bool have_hist = false;
    std::vector<double> plens;
    for (const auto& r : recs) {
        if (r.payload_byte_histogram) {
            have_hist = true;
            for (std::size_t b = 0; b < 256; ++b) hist[b] += (*r.payload_byte_histogram)[b];
        }
        if (r.payload_length_values)
            plens.insert(plens.end(), r.payload_length_values->begin(),
                         r.payload_length_values->end());
    }
    if (have_hist) {
        std::uint64_t total = 0;
        for (auto c : hist) total += c;
        if (total > 0) {
            double h = 0.0;
            for (auto c : hist) {
                if (c == 0) continue;
                double p = static_cast<double>(c) / static_cast<double>(total);
                h -= p * std::log2(p);
            }
            d(8) = h;
        }
    }
    if (plens.size() >= 2) {
        double mean = 0.0;
        for (double v : plens) mean += v;
        mean /= static_cast<double>(plens.size());
        double var = 0.0;
        for (double v : plens) var += (v - mean) * (v - mean);
        d(9) = var / static_cast<double>(plens.size());
    }
    std::uint64_t in_bytes = 0, out_bytes = 0, in_pkts = 0, out_pkts = 0;
    bool have_direction = false;
    std::uint64_t fragments = 0;
    for (const auto& r : recs) {
        fragments += r.fragment_count;
        if (!r.inbound) continue;
        have_direction = true;
        if (*r.inbound) {
            in_bytes += r.byte_count;
            in_pkts += r.packet_count;
        } else {
            out_bytes += r.byte_count;
            out_pkts += r.packet_count;
        }
    }
    if (have_direction) {
        d(10) = out_bytes > 0 ? static_cast<double>(in_bytes) / static_cast<double>(out_bytes)
                              : static_cast<double>(in_bytes);
        d(11) = out_pkts > 0 ? static_cast<double>(in_pkts) / static_cast<double>(out_pkts)
                             : static_cast<double>(in_pkts);
    }
    d(12) = static_cast<double>(fragments) / window_seconds;

    // Group 4: failure, DNS, ICMP rates per second and HTTP method entropy.
    std::uint64_t failures = 0, dns = 0, icmp = 0;
    std::map<std::string, std::uint64_t> methods;
    for (const auto& r : recs) {
        failures += r.failed ? 1 : 0;
        dns += r.dns_query_count;
        icmp += r.icmp_count;
        if (r.http_method) ++methods[*r.http_method];
    }
    d(13) = static_cast<double>(failures) / window_seconds;
    d(14) = static_cast<double>(dns) / window_seconds;  // DGA weight fixed to 1
    d(15) = static_cast<double>(icmp) / window_seconds;
    d(16) = entropy_bits(methods);

    return d;
}

std::pair<ObservationVector, NormalizerState> normalize(const Vec& raw,
                                                        const NormalizerState& state,
                                                        bool calibrating,
                                                        std::size_t window_id,
                                                        double window_start) {
    if (raw.size() != kFeatureCount) throw ValidationError("normalize: raw vector must have 17 entries");
    NormalizerState next = state;
    if (calibrating && !state.frozen) {
        next.count += 1;
        Vec delta = raw - next.running_mean;
        next.running_mean += delta / static_cast<double>(next.count);
        next.running_m2 += delta.cwiseProduct(raw - next.running_mean);
    } else {
        next.frozen = true;
    }
    Vec var = next.variance();
    ObservationVector obs;
    obs.window_id = window_id;
    obs.window_start = window_start;
    obs.values = (raw - next.running_mean).cwiseQuotient(var.cwiseSqrt());
    return {obs, next};
}

FeaturizeResult featurize(const std::vector<FlowRecord>& records, double window_seconds,
                          std::size_t calibration_windows, std::optional<double> stride) {
    FeaturizeResult out;
    auto windows = window_flows(records, window_seconds, stride);
    out.observations.reserve(windows.size());
    for (const auto& w : windows) {
        Vec raw = extract_features(w, window_seconds);
        bool calibrating = w.window_id < calibration_windows;
        auto [obs, next] = normalize(raw, out.normalizer, calibrating, w.window_id, w.window_start);
        out.normalizer = next;
        out.observations.push_back(std::move(obs));
    }
    if (!out.normalizer.frozen && out.observations.size() >= calibration_windows)
        out.normalizer.frozen = true;
    return out;
}

// ---------------------------------------------------------------------------
// CSV / JSON plumbing

namespace {

const char* kFlowHeader =
    "timestamp,src_ip,dst_ip,src_port,dst_port,protocol,packet_count,byte_count,"
    "syn_count,ack_count,failed,duration,dns_query_count,icmp_count,fragment_count,"
    "http_method,direction,payload_lengths,payload_histogram";

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    std::istringstream in(line);
    while (std::getline(in, cur, sep)) parts.push_back(cur);
    if (!line.empty() && line.back() == sep) parts.push_back("");
    return parts;
}

std::array<std::uint64_t, 256> parse_histogram(const std::string& field, std::size_t row) {
    std::array<std::uint64_t, 256> hist{};
    auto tokens = split(field, ';');
    bool run_length = field.find(':') != std::string::npos;
    if (run_length) {
        // offset:length:count runs
        for (const auto& tok : tokens) {
            if (tok.empty()) continue;
            auto parts = split(tok, ':');
            if (parts.size() != 3)
                throw ValidationError("flow csv row " + std::to_string(row) +
                                      ": histogram run must be offset:length:count");
            std::size_t offset = std::stoul(parts[0]);
            std::size_t length = std::stoul(parts[1]);
            std::uint64_t count = std::stoull(parts[2]);
            if (offset + length > 256)
                throw ValidationError("flow csv row " + std::to_string(row) +
                                      ": histogram run exceeds 256 bins");
            for (std::size_t b = offset; b < offset + length; ++b) hist[b] = count;
        }
    } else {
        if (tokens.size() != 256)
            throw ValidationError("flow csv row " + std::to_string(row) +
                                  ": histogram must have 256 counts or use runs");
        for (std::size_t b = 0; b < 256; ++b) hist[b] = std::stoull(tokens[b]);
    }
    return hist;
}

}  // namespace

std::vector<FlowRecord> parse_flow_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("flow csv: empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kFlowHeader)
        throw ValidationError("flow csv: unexpected header; expected: " + std::string(kFlowHeader));

    std::vector<FlowRecord> records;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto f = split(line, ',');
        if (f.size() != 19)
            throw ValidationError("flow csv row " + std::to_string(row) + ": expected 19 fields, got " +
                                  std::to_string(f.size()));
        try {
            FlowRecord r;
            r.timestamp = std::stod(f[0]);
            r.src_ip = f[1];
            r.dst_ip = f[2];
            r.src_port = std::stoi(f[3]);
            r.dst_port = std::stoi(f[4]);
            r.protocol = f[5];
            r.packet_count = std::stoull(f[6]);
            r.byte_count = std::stoull(f[7]);
            r.syn_count = std::stoull(f[8]);
            r.ack_count = std::stoull(f[9]);
            r.failed = f[10] == "1" || f[10] == "true";
            r.duration = std::stod(f[11]);
            r.dns_query_count = std::stoull(f[12]);
            r.icmp_count = std::stoull(f[13]);
            r.fragment_count = std::stoull(f[14]);
            if (!f[15].empty()) r.http_method = f[15];
            if (!f[16].empty()) {
                if (f[16] != "in" && f[16] != "out")
                    throw ValidationError("direction must be 'in', 'out', or empty");
                r.inbound = (f[16] == "in");
            }
            if (!f[17].empty()) {
                std::vector<double> lens;
                for (const auto& tok : split(f[17], ';'))
                    if (!tok.empty()) lens.push_back(std::stod(tok));
                r.payload_length_values = std::move(lens);
            }
            if (!f[18].empty()) r.payload_byte_histogram = parse_histogram(f[18], row);
            if (r.src_port < 0 || r.src_port > 65535 || r.dst_port < 0 || r.dst_port > 65535)
                throw ValidationError("port out of range");
            if (!std::isfinite(r.timestamp)) throw ValidationError("non-finite timestamp");
            records.push_back(std::move(r));
        } catch (const ValidationError&) {
            throw;
        } catch (const std::exception& e) {
            throw ValidationError("flow csv row " + std::to_string(row) + ": " + e.what());
        }
    }
    return records;
}

std::vector<FlowRecord> read_flow_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open flow csv: " + path);
    return parse_flow_csv(in);
}

void write_observation_csv(const std::string& path, const std::vector<ObservationVector>& obs) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open for writing: " + path);
    const Eigen::Index dims = obs.empty() ? kFeatureCount : obs[0].values.size();
    out << "window_id,window_start";
    for (Eigen::Index i = 1; i <= dims; ++i) out << ",d" << i;
    out << "\n";
    for (const auto& o : obs) {
        out << o.window_id << "," << fmt_double(o.window_start);
        for (Eigen::Index i = 0; i < o.values.size(); ++i) out << "," << fmt_double(o.values(i));
        out << "\n";
    }
}

std::vector<ObservationVector> read_observation_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open observation csv: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("observation csv: empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::size_t dims = split(line, ',').size() - 2;
    if (dims < 1 || split(line, ',')[0] != "window_id")
        throw ValidationError("observation csv: unexpected header");
    std::vector<ObservationVector> obs;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto f = split(line, ',');
        if (f.size() != 2 + dims)
            throw ValidationError("observation csv row " + std::to_string(row) +
                                  ": expected " + std::to_string(2 + dims) + " fields");
        try {
            ObservationVector o;
            o.window_id = std::stoull(f[0]);
            o.window_start = std::stod(f[1]);
            o.values = Vec(dims);
            for (std::size_t i = 0; i < dims; ++i) o.values(i) = std::stod(f[2 + i]);
            obs.push_back(std::move(o));
        } catch (const std::exception& e) {
            throw ValidationError("observation csv row " + std::to_string(row) + ": " + e.what());
        }
    }
    return obs;
}

std::string normalizer_to_json(const NormalizerState& state) {
    nlohmann::json j;
    j["count"] = state.count;
    j["frozen"] = state.frozen;
    j["mean"] = std::vector<double>(state.running_mean.data(),
                                    state.running_mean.data() + kFeatureCount);
    j["m2"] = std::vector<double>(state.running_m2.data(), state.running_m2.data() + kFeatureCount);
    if (state.tau_kl) j["tau_kl"] = *state.tau_kl;
    return j.dump(2);
}

NormalizerState normalizer_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("normalizer json: ") + e.what());
    }
    NormalizerState s;
    s.count = j.at("count").get<std::uint64_t>();
    s.frozen = j.at("frozen").get<bool>();
    auto mean = j.at("mean").get<std::vector<double>>();
    auto m2 = j.at("m2").get<std::vector<double>>();
    if (mean.size() != kFeatureCount || m2.size() != kFeatureCount)
        throw ValidationError("normalizer json: mean/m2 must have 17 entries");
    for (int i = 0; i < kFeatureCount; ++i) {
        s.running_mean(i) = mean[i];
        s.running_m2(i) = m2[i];
    }
    if (j.contains("tau_kl")) s.tau_kl = j["tau_kl"].get<double>();
    return s;
}

void save_normalizer(const NormalizerState& state, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open for writing: " + path);
    out << normalizer_to_json(state) << "\n";
}

NormalizerState load_normalizer(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open normalizer file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return normalizer_from_json(buf.str());
}

}  // namespace rssm
