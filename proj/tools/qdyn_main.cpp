#include "qdyn/blp.hpp"
#include "qdyn/sweep.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

using namespace qdyn;
using nlohmann::json;

namespace {

json load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw validation_error("cannot read config file: " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw validation_error(std::string("config is not valid JSON: ") + e.what());
    }
}

// Model knobs shared by the single-point subcommands; rates are in units of J
// (j_coupling is pinned to 1), times in 1/J.
struct ModelFlags {
    int n_spins = 1;
    double gamma = 1.0;
    double delta = 0.0;
    double lambda = 0.0;
    double nbar = 0.0;
    double width = 0.0;

    void attach(CLI::App* cmd) {
        cmd->add_option("--n", n_spins, "peripheral spins N");
        cmd->add_option("--gamma", gamma, "bath rate gamma/J");
        cmd->add_option("--delta", delta, "detuning Delta/J");
        cmd->add_option("--lambda", lambda, "XY anisotropy in [-1, 1]");
        cmd->add_option("--nbar", nbar, "thermal bath occupation");
        cmd->add_option("--width", width, "Lorentzian bath width/J (0 = flat bath)");
    }

    ModelParams params() const {
        ModelParams p;
        p.n_spins = n_spins;
        p.gamma = gamma;
        p.detuning = delta;
        p.anisotropy = lambda;
        p.nbar = nbar;
        if (width > 0.0) p.spectrum = Spectrum::lorentzian(width);
        return p;
    }
};

BlochAngles parse_state(const std::string& text) {
    const auto comma = text.find(',');
    if (comma == std::string::npos)
        throw validation_error("--state expects 'theta,phi', got: " + text);
    try {
        return {std::stod(text.substr(0, comma)), std::stod(text.substr(comma + 1))};
    } catch (const std::exception&) {
        throw validation_error("--state expects two numbers, got: " + text);
    }
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream out(path);
    if (!out) throw validation_error("cannot open output file: " + path);
    out << text;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dissipative spin-star simulator: central-spin dynamics and the trace-distance "
                 "non-Markovianity measure"};
    app.require_subcommand(1);
    int exit_code = 0;

    // ------------------------------- sweep ----------------------------------
    auto* sweep_cmd = app.add_subcommand("sweep", "evaluate the measure over a parameter grid");
    std::string cfg_path, out_override, jsonl_override, backend_override, strategy_override;
    int workers_override = 0, resolution_override = 0;
    double tmax_override = 0.0;
    bool timing = false;
    sweep_cmd->add_option("--config", cfg_path, "JSON sweep description")->required();
    sweep_cmd->add_option("--out", out_override, "CSV output path (overrides config)");
    sweep_cmd->add_option("--jsonl", jsonl_override, "JSON-lines mirror path (overrides config)");
    sweep_cmd->add_option("--workers", workers_override, "worker threads (overrides config)");
    sweep_cmd->add_option("--backend", backend_override, "engine|flat|lorentzian");
    sweep_cmd->add_option("--strategy", strategy_override, "candidates|grid|hybrid");
    sweep_cmd->add_option("--resolution", resolution_override, "grid-search points per angle");
    sweep_cmd->add_option("--tmax", tmax_override, "fixed time horizon in 1/J (0 = adaptive)");
    sweep_cmd->add_flag("--timing", timing, "record real wall times (breaks byte-determinism)");
    sweep_cmd->callback([&] {
        sweep::SweepSpec spec = sweep::SweepSpec::from_json(load_config(cfg_path));
        if (sweep_cmd->count("--out")) spec.csv_path = out_override;
        if (sweep_cmd->count("--jsonl")) spec.jsonl_path = jsonl_override;
        if (sweep_cmd->count("--workers")) spec.workers = workers_override;
        if (sweep_cmd->count("--backend")) spec.backend = sweep::parse_backend(backend_override);
        if (sweep_cmd->count("--strategy"))
            spec.strategy.kind = sweep::parse_strategy(strategy_override);
        if (sweep_cmd->count("--resolution")) spec.strategy.resolution = resolution_override;
        if (sweep_cmd->count("--tmax")) spec.t_max = tmax_override;
        if (timing) spec.timing = true;
        const auto rows = sweep::run_sweep(spec);
        std::cerr << "sweep: " << rows.size() << " points -> " << spec.csv_path << '\n';
    });

    // --------------------------------- nm -----------------------------------
    auto* nm_cmd = app.add_subcommand("nm", "measure one parameter point");
    ModelFlags nm_model;
    nm_model.attach(nm_cmd);
    std::string nm_backend = "engine", nm_strategy = "candidates", nm_out, nm_flows_path;
    int nm_resolution = 25;
    double nm_tmax = 0.0;
    bool nm_oracle = false;
    nm_cmd->add_option("--backend", nm_backend, "engine|flat|lorentzian");
    nm_cmd->add_option("--strategy", nm_strategy, "candidates|grid|hybrid");
    nm_cmd->add_option("--resolution", nm_resolution, "grid-search points per angle");
    nm_cmd->add_option("--tmax", nm_tmax, "fixed time horizon in 1/J (0 = adaptive)");
    nm_cmd->add_option("--out", nm_out, "write the JSON report here instead of stdout");
    nm_cmd->add_option("--flows", nm_flows_path, "CSV dump of the winning pair's flows");
    nm_cmd->add_flag("--oracle", nm_oracle, "also cross-check against the brute-force reference");
    nm_cmd->callback([&] {
        const ModelParams params = nm_model.params();
        blp::Strategy strategy{sweep::parse_strategy(nm_strategy), nm_resolution};
        blp::GridSpec grid;
        grid.t_max = nm_tmax;
        const auto res =
            blp::nm_measure(params, strategy, sweep::parse_backend(nm_backend), grid);

        json report{{"backend", sweep::backend_name(res.backend)},
                    {"strategy", sweep::strategy_name(strategy.kind)},
                    {"nm", res.value},
                    {"pair",
                     {{"theta1", res.pair.first.theta},
                      {"phi1", res.pair.first.phi},
                      {"theta2", res.pair.second.theta},
                      {"phi2", res.pair.second.phi}}},
                    {"markovian", res.value < 1e-4},
                    {"n_plus", res.flows.inflow.empty() ? 0.0 : res.flows.inflow.back()},
                    {"n_minus", res.flows.outflow.empty() ? 0.0 : res.flows.outflow.back()},
                    {"final_ratio", res.flows.ratio.empty() ? 0.0 : res.flows.ratio.back()},
                    {"samples", res.flows.times.size()},
                    {"warnings", res.warnings}};
        if (nm_oracle) {
            const auto check = sweep::cross_check(
                params, sweep::time_grid(nm_tmax > 0.0 ? nm_tmax : 10.0 / params.j_coupling, 41));
            report["oracle"] = {{"engine_discrepancy", check.engine_discrepancy},
                                {"kernel_checked", check.kernel_checked},
                                {"kernel_discrepancy", check.kernel_discrepancy},
                                {"pass", check.pass}};
            if (!check.pass) exit_code = 3;
        }
        write_text(nm_out, report.dump(2) + "\n");
        if (!nm_flows_path.empty()) {
            std::string text = "time,inflow,outflow,ratio\n";
            char buf[160];
            for (size_t i = 0; i < res.flows.times.size(); ++i) {
                std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", res.flows.times[i],
                              res.flows.inflow[i], res.flows.outflow[i], res.flows.ratio[i]);
                text += buf;
            }
            write_text(nm_flows_path, text);
        }
    });

    // ----------------------------- trajectories -----------------------------
    auto* traj_cmd = app.add_subcommand("trajectories", "export central-spin Bloch trajectories");
    ModelFlags traj_model;
    traj_model.attach(traj_cmd);
    std::vector<std::string> traj_states;
    std::string traj_out;
    double traj_tmax = 10.0;
    int traj_samples = 201;
    traj_cmd->add_option("--state", traj_states,
                         "initial state as 'theta,phi' (repeatable; default |+x>, |-x>)");
    traj_cmd->add_option("--tmax", traj_tmax, "time horizon in 1/J");
    traj_cmd->add_option("--samples", traj_samples, "samples on [0, tmax]");
    traj_cmd->add_option("--out", traj_out, "CSV path (default stdout)");
    traj_cmd->callback([&] {
        const ModelParams params = traj_model.params();
        std::vector<BlochAngles> states;
        for (const auto& s : traj_states) states.push_back(parse_state(s));
        if (states.empty()) states = {{M_PI / 2, 0.0}, {M_PI / 2, M_PI}};
        const auto records = sweep::export_trajectories(
            params, states, sweep::time_grid(traj_tmax, traj_samples));
        std::ostringstream text;
        sweep::write_trajectory_csv(text, params, records);
        write_text(traj_out, text.str());
    });

    // ------------------------------ crosscheck ------------------------------
    auto* check_cmd =
        app.add_subcommand("crosscheck", "compare fast paths against the brute-force reference");
    ModelFlags check_model;
    check_model.attach(check_cmd);
    double check_tmax = 10.0;
    int check_samples = 41;
    std::string check_backend;
    check_cmd->add_option("--tmax", check_tmax, "time horizon in 1/J");
    check_cmd->add_option("--samples", check_samples, "comparison times on (0, tmax]");
    check_cmd->add_option("--backend", check_backend,
                          "require a specific fast path (flat forces the kernel check)");
    check_cmd->callback([&] {
        const bool require_kernel = check_backend == "flat";
        if (!check_backend.empty()) sweep::parse_backend(check_backend);
        const auto report = sweep::cross_check(
            check_model.params(), sweep::time_grid(check_tmax, check_samples), require_kernel);
        json out{{"engine_discrepancy", report.engine_discrepancy},
                 {"kernel_checked", report.kernel_checked},
                 {"kernel_discrepancy", report.kernel_discrepancy},
                 {"tolerance", report.tolerance},
                 {"pass", report.pass}};
        std::cout << out.dump(2) << '\n';
        if (!report.pass) exit_code = 3;
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const validation_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const numerical_error& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    }
    return exit_code;
}
