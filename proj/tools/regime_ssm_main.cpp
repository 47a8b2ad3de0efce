// regime-ssm: streaming kill-chain regime detection over flow telemetry.
// Subcommands: preset, simulate, featurize, detect, evaluate, oracle, ablate.
// Exit codes: 0 success, 2 validation failure, 3 numerical failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rssm/errors.hpp"
#include "rssm/feov.hpp"
#include "rssm/harness.hpp"
#include "rssm/model.hpp"
#include "rssm/oracle.hpp"

namespace {

using namespace rssm;

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

SwitchingModel resolve_model(const std::string& spec) {
    if (spec == "killchain") return default_killchain_model(4, 8, 17);
    SwitchingModel model = load_model(spec);
    auto report = validate_model(model);
    if (!report.empty()) {
        std::ostringstream os;
        os << "model failed validation:";
        for (const auto& v : report) os << "\n  [" << v.code << "] " << v.message;
        throw ValidationError(os.str());
    }
    return model;
}

std::vector<Vec> observation_values(const std::vector<ObservationVector>& obs) {
    std::vector<Vec> values;
    values.reserve(obs.size());
    for (const auto& o : obs) values.push_back(o.values);
    return values;
}

void write_trajectory_csv(const std::string& path, const SampledTrajectory& traj) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open for writing: " + path);
    const Eigen::Index n = traj.latents.empty() ? 0 : traj.latents[0].size();
    const Eigen::Index m = traj.observations.empty() ? 0 : traj.observations[0].size();
    out << "step,regime";
    for (Eigen::Index i = 0; i < n; ++i) out << ",x_" << i;
    for (Eigen::Index i = 0; i < m; ++i) out << ",y_" << i;
    out << "\n";
    for (std::size_t t = 0; t < traj.regimes.size(); ++t) {
        out << t << "," << traj.regimes[t];
        for (Eigen::Index i = 0; i < n; ++i) out << "," << fmt_double(traj.latents[t](i));
        for (Eigen::Index i = 0; i < m; ++i) out << "," << fmt_double(traj.observations[t](i));
        out << "\n";
    }
}

void write_observations_as_csv(const std::string& path, const std::vector<Vec>& obs,
                               double window_seconds) {
    std::vector<ObservationVector> rows;
    rows.reserve(obs.size());
    for (std::size_t t = 0; t < obs.size(); ++t) {
        ObservationVector o;
        o.window_id = t;
        o.window_start = static_cast<double>(t) * window_seconds;
        o.values = obs[t];
        rows.push_back(std::move(o));
    }
    write_observation_csv(path, rows);
}

DetectionConfig load_detection_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("config json: ") + e.what());
    }
    DetectionConfig cfg;
    if (j.contains("inference")) {
        const auto& inf = j["inference"];
        cfg.inference.tolerance_epsilon = inf.value("tolerance", cfg.inference.tolerance_epsilon);
        cfg.inference.k_max = inf.value("max_iterations", cfg.inference.k_max);
        cfg.inference.division_floor = inf.value("division_floor", cfg.inference.division_floor);
        if (inf.contains("initial_regime_dist") && inf["initial_regime_dist"].is_array()) {
            auto v = inf["initial_regime_dist"].get<std::vector<double>>();
            cfg.inference.initial_regime_dist = Eigen::Map<Vec>(v.data(), v.size());
        }
    }
    if (j.contains("online_em")) {
        const auto& em = j["online_em"];
        cfg.em.eta = em.value("eta", cfg.em.eta);
        cfg.em.division_floor = em.value("division_floor", cfg.em.division_floor);
        cfg.em.classical_q_update = em.value("classical_q_update", cfg.em.classical_q_update);
        if (!(cfg.em.eta > 0.0 && cfg.em.eta < 1.0))
            throw ValidationError("config: online_em.eta must lie in (0, 1)");
    }
    if (j.contains("gate")) {
        const auto& g = j["gate"];
        if (g.contains("tau_kl") && !g["tau_kl"].is_null()) cfg.tau_kl = g["tau_kl"].get<double>();
        cfg.tau_quantile = g.value("calibration_quantile", cfg.tau_quantile);
    }
    if (j.contains("detection")) {
        const auto& d = j["detection"];
        cfg.window_batch = d.value("window_batch", cfg.window_batch);
        cfg.calibration_windows = d.value("calibration_windows", cfg.calibration_windows);
        cfg.window_seconds = d.value("window_seconds", cfg.window_seconds);
        cfg.adapt_parameters = d.value("adapt", cfg.adapt_parameters);
        cfg.kl_gate_enabled = d.value("kl_gate", cfg.kl_gate_enabled);
        cfg.single_regime_baseline = d.value("single_regime", cfg.single_regime_baseline);
    }
    return cfg;
}

int run(int argc, char** argv) {
    CLI::App app{"regime-ssm: switching state-space kill-chain detection"};
    app.require_subcommand(1);

    // --- preset
    auto* preset = app.add_subcommand("preset", "write the built-in kill-chain model");
    std::string preset_out = "model.json";
    Eigen::Index preset_n = 8, preset_m = 17;
    preset->add_option("--out", preset_out, "output model JSON path");
    preset->add_option("--latent-dim", preset_n, "latent dimension (default 8)");
    preset->add_option("--obs-dim", preset_m, "observation dimension (default 17)");

    // --- simulate
    auto* simulate = app.add_subcommand("simulate", "sample a trajectory or scripted scenario");
    std::string sim_model = "killchain", sim_out = "traj.csv", sim_script, sim_obs_out, sim_truth_out;
    std::size_t sim_steps = 1000;
    std::uint64_t sim_seed = 0;
    double sim_window = 1.0;
    simulate->add_option("--model", sim_model, "model JSON path or 'killchain'");
    simulate->add_option("--steps", sim_steps, "trajectory length (ignored with --script)");
    simulate->add_option("--seed", sim_seed, "random seed");
    simulate->add_option("--out", sim_out, "trajectory CSV output");
    simulate->add_option("--script", sim_script, "scenario script JSON (scripted regimes)");
    simulate->add_option("--obs-out", sim_obs_out, "also write observations CSV");
    simulate->add_option("--truth-out", sim_truth_out, "write ground-truth regime CSV");
    simulate->add_option("--window", sim_window, "window seconds for observation timestamps");

    // --- featurize
    auto* featurize_cmd = app.add_subcommand("featurize", "flow CSV -> standardised observations");
    std::string feat_in, feat_out = "obs.csv", feat_norm_out;
    double feat_window = 1.0;
    std::optional<double> feat_stride;
    std::size_t feat_calibrate = 3600;
    featurize_cmd->add_option("--in", feat_in, "flow records CSV")->required();
    featurize_cmd->add_option("--window", feat_window, "window width in seconds");
    featurize_cmd->add_option("--stride", feat_stride, "window stride (default = width)");
    featurize_cmd->add_option("--calibrate", feat_calibrate, "calibration windows");
    featurize_cmd->add_option("--out", feat_out, "observations CSV output");
    featurize_cmd->add_option("--save-norm", feat_norm_out, "persist normaliser state JSON");

    // --- detect
    auto* detect = app.add_subcommand("detect", "streaming inference, alerting, adaptation");
    std::string det_model = "killchain", det_obs, det_beliefs = "beliefs.csv",
                det_alerts = "alerts.jsonl", det_config, det_params_out, det_norm,
                det_report_out, det_model_out;
    std::optional<double> det_tau;
    std::optional<std::size_t> det_save_every;
    detect->add_option("--model", det_model, "model JSON path or 'killchain'");
    detect->add_option("--obs", det_obs, "observations CSV")->required();
    detect->add_option("--config", det_config, "config JSON covering all module configs");
    detect->add_option("--tau", det_tau, "KL gate threshold (overrides calibration)");
    detect->add_option("--beliefs-out", det_beliefs, "beliefs CSV output");
    detect->add_option("--alerts-out", det_alerts, "alerts JSON-lines output");
    detect->add_option("--save-params", det_save_every, "snapshot parameters every N windows");
    detect->add_option("--params-out", det_params_out, "snapshot directory (default '.')");
    detect->add_option("--model-out", det_model_out, "write the adapted model JSON");
    detect->add_option("--norm", det_norm, "normaliser JSON; calibrated tau is persisted into it");
    detect->add_option("--report-out", det_report_out, "write latency/elbo summary JSON");

    // --- evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "score beliefs/alerts against ground truth");
    std::string ev_beliefs, ev_alerts, ev_truth, ev_out = "report.json";
    double ev_window = 1.0;
    int ev_onset_min = 1;
    bool ev_no_stages = false;
    eval_cmd->add_option("--beliefs", ev_beliefs, "beliefs CSV")->required();
    eval_cmd->add_option("--alerts", ev_alerts, "alerts JSON-lines")->required();
    eval_cmd->add_option("--truth", ev_truth, "ground-truth regime CSV")->required();
    eval_cmd->add_option("--window", ev_window, "window seconds");
    eval_cmd->add_option("--onset-min-regime", ev_onset_min,
                         "regime index that defines the attack onset for the detection margin");
    eval_cmd->add_flag("--no-stage-attribution", ev_no_stages,
                       "score a stageless (single-regime) run");
    eval_cmd->add_option("--out", ev_out, "evaluation report JSON");

    // --- oracle
    auto* oracle_cmd = app.add_subcommand("oracle", "exact brute-force posterior on tiny inputs");
    std::string or_model, or_obs, or_out = "exact.json";
    std::uint64_t or_cap = 1'000'000;
    bool or_paths = false;
    oracle_cmd->add_option("--model", or_model, "model JSON path or 'killchain'")->required();
    oracle_cmd->add_option("--obs", or_obs, "observations CSV")->required();
    oracle_cmd->add_option("--out", or_out, "exact posterior JSON");
    oracle_cmd->add_option("--max-paths", or_cap, "path-count cap (fails fast above it)");
    oracle_cmd->add_flag("--include-paths", or_paths, "include per-path log weights");

    // --- ablate
    auto* ablate = app.add_subcommand("ablate", "run full/static/no-gate/single-regime variants");
    std::string ab_model = "killchain", ab_script, ab_out = "ablation.json", ab_config;
    ablate->add_option("--model", ab_model, "model JSON path or 'killchain'");
    ablate->add_option("--script", ab_script, "scenario script JSON")->required();
    ablate->add_option("--config", ab_config, "config JSON");
    ablate->add_option("--out", ab_out, "ablation report JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (preset->parsed()) {
        save_model(default_killchain_model(4, preset_n, preset_m), preset_out);
        std::cout << "wrote " << preset_out << "\n";
        return 0;
    }

    if (simulate->parsed()) {
        SwitchingModel model = resolve_model(sim_model);
        if (!sim_script.empty()) {
            ScenarioScript script = load_script(sim_script);
            if (sim_seed != 0) script.seed = sim_seed;
            ScenarioData data = generate_scenario(script, model);
            SampledTrajectory traj{data.truth_regimes, data.latents, data.observations};
            write_trajectory_csv(sim_out, traj);
            if (!sim_obs_out.empty()) write_observations_as_csv(sim_obs_out, data.observations, sim_window);
            if (!sim_truth_out.empty()) write_truth_csv(sim_truth_out, data.truth_regimes);
            std::cout << "simulated " << data.observations.size() << " scripted windows\n";
        } else {
            SampledTrajectory traj = sample_trajectory(model, sim_steps, sim_seed);
            write_trajectory_csv(sim_out, traj);
            if (!sim_obs_out.empty()) write_observations_as_csv(sim_obs_out, traj.observations, sim_window);
            if (!sim_truth_out.empty()) write_truth_csv(sim_truth_out, traj.regimes);
            std::cout << "simulated " << sim_steps << " steps\n";
        }
        return 0;
    }

    if (featurize_cmd->parsed()) {
        auto records = read_flow_csv(feat_in);
        FeaturizeResult result = featurize(records, feat_window, feat_calibrate, feat_stride);
        write_observation_csv(feat_out, result.observations);
        if (!feat_norm_out.empty()) save_normalizer(result.normalizer, feat_norm_out);
        std::cout << "featurized " << records.size() << " records into "
                  << result.observations.size() << " windows\n";
        return 0;
    }

    if (detect->parsed()) {
        SwitchingModel model = resolve_model(det_model);
        auto obs = observation_values(read_observation_csv(det_obs));
        DetectionConfig cfg = det_config.empty() ? DetectionConfig{} : load_detection_config(det_config);
        if (det_tau) cfg.tau_kl = det_tau;
        if (det_save_every) cfg.save_params_every = det_save_every;
        std::optional<NormalizerState> norm;
        if (!det_norm.empty()) {
            norm = load_normalizer(det_norm);
            if (norm->tau_kl && !cfg.tau_kl) cfg.tau_kl = norm->tau_kl;
        }

        std::string params_dir = det_params_out.empty() ? "." : det_params_out;
        ParamSnapshotSink sink;
        if (cfg.save_params_every) {
            sink = [&params_dir](std::size_t window, const SwitchingModel& m) {
                char name[64];
                std::snprintf(name, sizeof(name), "/params_%08zu.json", window);
                save_model(m, params_dir + name);
            };
        }

        DetectionResult result = run_detection(obs, model, cfg, sink);
        write_belief_csv(det_beliefs, result.beliefs);
        write_alert_jsonl(det_alerts, result.alerts);
        if (!det_model_out.empty()) save_model(result.adapted_model, det_model_out);
        if (norm && !norm->tau_kl) {
            norm->tau_kl = result.tau_used;
            save_normalizer(*norm, det_norm);
        }
        if (!det_report_out.empty()) {
            nlohmann::json j;
            j["observations"] = obs.size();
            j["alerts"] = result.alerts.size();
            j["tau_kl"] = result.tau_used;
            j["elbo_final"] = result.elbo_final;
            j["latency_ms"] = {{"mean", result.latency.mean_ms},
                               {"stddev", result.latency.stddev_ms}};
            std::ofstream out(det_report_out);
            if (!out) throw ValidationError("cannot open for writing: " + det_report_out);
            out << j.dump(2) << "\n";
        }
        std::cout << "processed " << obs.size() << " observations, " << result.alerts.size()
                  << " alerts (tau=" << result.tau_used << ")\n";
        return 0;
    }

    if (eval_cmd->parsed()) {
        auto beliefs = read_belief_csv(ev_beliefs);
        auto alerts = read_alert_jsonl(ev_alerts);
        auto truth = read_truth_csv(ev_truth);
        EvaluationOptions options;
        options.onset_min_regime = ev_onset_min;
        options.has_stage_attribution = !ev_no_stages;
        EvaluationReport report = evaluate(beliefs, alerts, truth, ev_window, options);
        std::ofstream out(ev_out);
        if (!out) throw ValidationError("cannot open for writing: " + ev_out);
        out << report_to_json(report) << "\n";
        std::cout << "f1=" << report.f1_aggregate << " fpr=" << report.false_positive_rate << "\n";
        return 0;
    }

    if (oracle_cmd->parsed()) {
        SwitchingModel model = resolve_model(or_model);
        auto obs = observation_values(read_observation_csv(or_obs));
        ExactPosterior exact = enumerate_exact(model, obs, or_cap);
        nlohmann::json j;
        j["log_evidence"] = exact.exact_log_evidence;
        j["component_count"] = exact.path_log_weights.size();
        nlohmann::json gamma = nlohmann::json::array();
        for (Eigen::Index t = 0; t < exact.exact_gamma.rows(); ++t) {
            nlohmann::json row = nlohmann::json::array();
            for (Eigen::Index s = 0; s < exact.exact_gamma.cols(); ++s)
                row.push_back(exact.exact_gamma(t, s));
            gamma.push_back(std::move(row));
        }
        j["gamma"] = std::move(gamma);
        if (or_paths) j["path_log_weights"] = exact.path_log_weights;
        std::ofstream out(or_out);
        if (!out) throw ValidationError("cannot open for writing: " + or_out);
        out << j.dump(2) << "\n";
        std::cout << "enumerated " << exact.path_log_weights.size() << " paths\n";
        return 0;
    }

    if (ablate->parsed()) {
        SwitchingModel model = resolve_model(ab_model);
        ScenarioScript script = load_script(ab_script);
        ScenarioData data = generate_scenario(script, model);
        DetectionConfig base = ab_config.empty() ? DetectionConfig{} : load_detection_config(ab_config);

        auto run_variant = [&](bool adapt, bool gate, bool single) {
            DetectionConfig cfg = base;
            cfg.adapt_parameters = adapt;
            cfg.kl_gate_enabled = gate;
            cfg.single_regime_baseline = single;
            DetectionResult det = run_detection(data.observations, model, cfg);
            EvaluationOptions options;
            options.has_stage_attribution = !single;
            EvaluationReport rep =
                evaluate(det.beliefs, det.alerts, data.truth_regimes, cfg.window_seconds, options);
            rep.latency = det.latency;
            rep.elbo_final = det.elbo_final;
            return rep;
        };

        EvaluationReport full = run_variant(true, true, false);
        EvaluationReport static_params = run_variant(false, true, false);
        EvaluationReport no_gate = run_variant(true, false, false);
        EvaluationReport single = run_variant(true, true, true);

        nlohmann::json j;
        j["full"] = nlohmann::json::parse(report_to_json(full));
        j["static_parameters"] = nlohmann::json::parse(report_to_json(static_params));
        j["no_kl_gate"] = nlohmann::json::parse(report_to_json(no_gate));
        j["single_regime"] = nlohmann::json::parse(report_to_json(single));
        j["orderings"] = {
            {"full_saa_ge_static",
             full.stage_attribution_accuracy.value_or(0.0) >=
                 static_params.stage_attribution_accuracy.value_or(0.0)},
            {"no_gate_fpr_ge_full", no_gate.false_positive_rate >= full.false_positive_rate},
            {"single_regime_has_no_saa", !single.stage_attribution_accuracy.has_value()},
        };
        std::ofstream out(ab_out);
        if (!out) throw ValidationError("cannot open for writing: " + ab_out);
        out << j.dump(2) << "\n";
        std::cout << "ablation written to " << ab_out << "\n";
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const rssm::ValidationError& e) {
        std::cerr << "validation failure: " << e.what() << "\n";
        return 2;
    } catch (const rssm::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
