#include "qdyn/sweep.hpp"

#include "qdyn/engine.hpp"
#include "qdyn/kernels.hpp"
#include "qdyn/oracle.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <ostream>
#include <set>
#include <thread>

namespace qdyn::sweep {

namespace {

using nlohmann::json;

std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

const std::set<std::string> kAxisNames = {"delta", "gamma", "n_spins", "lambda", "nbar"};

void apply_axis(ModelParams& p, const std::string& name, double value) {
    if (name == "delta") {
        p.detuning = value;
    } else if (name == "gamma") {
        p.gamma = value;
    } else if (name == "lambda") {
        p.anisotropy = value;
    } else if (name == "nbar") {
        p.nbar = value;
    } else if (name == "n_spins") {
        const double r = std::round(value);
        if (std::abs(value - r) > 1e-9 || r < 1)
            throw validation_error("n_spins axis values must be positive integers");
        p.n_spins = static_cast<int>(r);
    } else {
        throw validation_error("unknown sweep axis: " + name);
    }
}

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!allowed.count(key)) throw validation_error("unknown key '" + key + "' in " + where);
    }
}

ModelParams params_from_json(const json& j) {
    reject_unknown_keys(
        j, {"n_spins", "j_coupling", "anisotropy", "detuning", "gamma", "nbar", "spectrum"},
        "base params");
    ModelParams p;
    p.n_spins = j.value("n_spins", p.n_spins);
    p.j_coupling = j.value("j_coupling", p.j_coupling);
    p.anisotropy = j.value("anisotropy", p.anisotropy);
    p.detuning = j.value("detuning", p.detuning);
    p.gamma = j.value("gamma", p.gamma);
    p.nbar = j.value("nbar", p.nbar);
    if (j.contains("spectrum")) {
        const json& s = j.at("spectrum");
        reject_unknown_keys(s, {"kind", "width", "offset"}, "spectrum");
        const std::string kind = s.value("kind", "flat");
        if (kind == "flat") {
            p.spectrum = Spectrum::flat();
        } else if (kind == "lorentzian") {
            p.spectrum = Spectrum::lorentzian(s.value("width", 0.0), s.value("offset", 0.0));
        } else {
            throw validation_error("spectrum kind must be flat or lorentzian");
        }
    }
    return p;
}

json params_to_json(const ModelParams& p) {
    json j{{"n_spins", p.n_spins},   {"j_coupling", p.j_coupling}, {"anisotropy", p.anisotropy},
           {"detuning", p.detuning}, {"gamma", p.gamma},           {"nbar", p.nbar}};
    json s{{"kind", p.spectrum.kind == Spectrum::Kind::Flat ? "flat" : "lorentzian"}};
    if (p.spectrum.kind == Spectrum::Kind::Lorentzian) {
        s["width"] = p.spectrum.width;
        s["offset"] = p.spectrum.offset;
    }
    j["spectrum"] = std::move(s);
    return j;
}

constexpr const char* kCsvColumns =
    "index,n_spins,j_coupling,anisotropy,detuning,gamma,nbar,spectrum,bath_width,"
    "nm,theta1,phi1,theta2,phi2,markovian,wall_time_s,error";

std::string csv_row(const SweepRow& r) {
    const ModelParams& p = r.params;
    std::string line = std::to_string(r.index) + ',' + std::to_string(p.n_spins) + ','
                       + g17(p.j_coupling) + ',' + g17(p.anisotropy) + ',' + g17(p.detuning) + ','
                       + g17(p.gamma) + ',' + g17(p.nbar) + ','
                       + (p.spectrum.kind == Spectrum::Kind::Flat ? "flat" : "lorentzian") + ','
                       + g17(p.spectrum.width) + ',';
    if (r.error.empty()) {
        line += g17(r.nm_value) + ',' + g17(r.pair.first.theta) + ',' + g17(r.pair.first.phi) + ','
                + g17(r.pair.second.theta) + ',' + g17(r.pair.second.phi) + ','
                + (r.markovian ? "1" : "0") + ',';
    } else {
        line += ",,,,,,";
    }
    line += g17(r.wall_time_s) + ',' + r.error;
    return line;
}

json row_to_json(const SweepRow& r) {
    json j{{"index", r.index},
           {"params", params_to_json(r.params)},
           {"wall_time_s", r.wall_time_s},
           {"error", r.error}};
    if (r.error.empty()) {
        j["nm"] = r.nm_value;
        j["pair"] = {{"theta1", r.pair.first.theta},
                     {"phi1", r.pair.first.phi},
                     {"theta2", r.pair.second.theta},
                     {"phi2", r.pair.second.phi}};
        j["markovian"] = r.markovian;
    } else {
        j["nm"] = nullptr;
        j["pair"] = nullptr;
        j["markovian"] = nullptr;
    }
    return j;
}

SweepRow compute_point(const SweepSpec& spec, size_t index) {
    SweepRow row;
    row.index = index;
    row.params = spec.point(index);
    const auto t0 = std::chrono::steady_clock::now();
    try {
        blp::GridSpec grid;
        grid.t_max = spec.t_max;
        const auto res = blp::nm_measure(row.params, spec.strategy, spec.backend, grid);
        row.nm_value = res.value;
        row.pair = res.pair;
        row.markovian = res.value < spec.mk_eps;
    } catch (const validation_error&) {
        row.error = "validation";
    } catch (const numerical_error&) {
        row.error = "numerical";
    }
    if (spec.timing)
        row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                              .count();
    return row;
}

}  // namespace

blp::Backend parse_backend(const std::string& name) {
    if (name == "engine") return blp::Backend::Engine;
    if (name == "flat") return blp::Backend::FlatKernel;
    if (name == "lorentzian") return blp::Backend::LorentzianKernel;
    throw validation_error("backend must be engine, flat, or lorentzian");
}

std::string backend_name(blp::Backend backend) {
    switch (backend) {
        case blp::Backend::Engine: return "engine";
        case blp::Backend::FlatKernel: return "flat";
        case blp::Backend::LorentzianKernel: return "lorentzian";
    }
    throw validation_error("unknown backend value");
}

blp::Strategy::Kind parse_strategy(const std::string& name) {
    if (name == "candidates") return blp::Strategy::Kind::CandidateSet;
    if (name == "grid") return blp::Strategy::Kind::GridSearch;
    if (name == "hybrid") return blp::Strategy::Kind::Hybrid;
    throw validation_error("strategy must be candidates, grid, or hybrid");
}

std::string strategy_name(blp::Strategy::Kind kind) {
    switch (kind) {
        case blp::Strategy::Kind::CandidateSet: return "candidates";
        case blp::Strategy::Kind::GridSearch: return "grid";
        case blp::Strategy::Kind::Hybrid: return "hybrid";
    }
    throw validation_error("unknown strategy value");
}

std::vector<double> time_grid(double t_max, int count) {
    if (!(t_max > 0.0) || !std::isfinite(t_max)) throw validation_error("t_max must be > 0");
    if (count < 2) throw validation_error("time grid needs at least 2 samples");
    std::vector<double> t(count);
    for (int i = 0; i < count; ++i) t[i] = t_max * i / (count - 1);
    return t;
}

void SweepSpec::validate() const {
    if (axes.empty()) throw validation_error("sweep needs at least one axis");
    std::set<std::string> seen;
    for (const auto& axis : axes) {
        if (!kAxisNames.count(axis.name))
            throw validation_error("unknown sweep axis: " + axis.name);
        if (!seen.insert(axis.name).second)
            throw validation_error("duplicate sweep axis: " + axis.name);
        if (axis.values.empty()) throw validation_error("axis " + axis.name + " has no values");
        for (double v : axis.values)
            if (!std::isfinite(v))
                throw validation_error("axis " + axis.name + " has a non-finite value");
    }
    if (csv_path.empty()) throw validation_error("sweep needs an output path");
    if (workers < 0) throw validation_error("workers must be >= 0");
    if (!(mk_eps > 0.0)) throw validation_error("mk_eps must be > 0");
    if (t_max < 0.0 || !std::isfinite(t_max)) throw validation_error("t_max must be >= 0");
    if (strategy.kind != blp::Strategy::Kind::CandidateSet && strategy.resolution < 2)
        throw validation_error("grid resolution must be >= 2");

    // Backend validity over the whole swept region, not just the base point.
    const auto axis_or_base = [&](const std::string& name, double base_value) {
        for (const auto& axis : axes)
            if (axis.name == name) return axis.values;
        return std::vector<double>{base_value};
    };
    if (backend == blp::Backend::FlatKernel || backend == blp::Backend::LorentzianKernel) {
        for (double v : axis_or_base("lambda", base.anisotropy))
            if (v != 0.0)
                throw validation_error("amplitude-kernel backends require lambda = 0");
    }
    if (backend == blp::Backend::LorentzianKernel) {
        for (double v : axis_or_base("nbar", base.nbar))
            if (v != 0.0) throw validation_error("Lorentzian backend requires nbar = 0");
        if (base.spectrum.kind != Spectrum::Kind::Lorentzian)
            throw validation_error("Lorentzian backend requires a Lorentzian spectrum");
    } else if (base.spectrum.kind != Spectrum::Kind::Flat) {
        throw validation_error("engine and flat backends require a flat spectrum");
    }
}

size_t SweepSpec::grid_size() const {
    size_t n = 1;
    for (const auto& axis : axes) n *= axis.values.size();
    return n;
}

ModelParams SweepSpec::point(size_t index) const {
    ModelParams p = base;
    size_t stride = grid_size();
    for (const auto& axis : axes) {
        stride /= axis.values.size();
        apply_axis(p, axis.name, axis.values[(index / stride) % axis.values.size()]);
    }
    return p;
}

SweepSpec SweepSpec::from_json(const json& config) {
    reject_unknown_keys(config,
                        {"axes", "base", "backend", "strategy", "resolution", "out", "jsonl",
                         "workers", "t_max", "mk_eps", "timing"},
                        "sweep config");
    SweepSpec spec;
    if (config.contains("base")) spec.base = params_from_json(config.at("base"));
    if (!config.contains("axes") || !config.at("axes").is_array())
        throw validation_error("sweep config needs an 'axes' array");
    for (const json& a : config.at("axes")) {
        reject_unknown_keys(a, {"name", "values", "min", "max", "count"}, "axis");
        AxisSpec axis;
        axis.name = a.value("name", "");
        if (a.contains("values")) {
            axis.values = a.at("values").get<std::vector<double>>();
        } else {
            const double lo = a.value("min", 0.0), hi = a.value("max", 0.0);
            const int count = a.value("count", 0);
            if (count < 1) throw validation_error("axis range needs count >= 1");
            for (int i = 0; i < count; ++i)
                axis.values.push_back(count == 1 ? lo : lo + (hi - lo) * i / (count - 1));
        }
        spec.axes.push_back(std::move(axis));
    }
    spec.backend = parse_backend(config.value("backend", "engine"));
    spec.strategy.kind = parse_strategy(config.value("strategy", "candidates"));
    spec.strategy.resolution = config.value("resolution", 25);
    spec.csv_path = config.value("out", "");
    spec.jsonl_path = config.value("jsonl", "");
    spec.workers = config.value("workers", 0);
    spec.t_max = config.value("t_max", 0.0);
    spec.mk_eps = config.value("mk_eps", 1e-4);
    spec.timing = config.value("timing", false);
    return spec;
}

json SweepSpec::to_json() const {
    json axes_json = json::array();
    for (const auto& axis : axes)
        axes_json.push_back({{"name", axis.name}, {"values", axis.values}});
    return json{{"axes", std::move(axes_json)},
                {"base", params_to_json(base)},
                {"backend", backend_name(backend)},
                {"strategy", strategy_name(strategy.kind)},
                {"resolution", strategy.resolution},
                {"t_max", t_max},
                {"mk_eps", mk_eps},
                {"timing", timing}};
}

std::vector<SweepRow> run_sweep(const SweepSpec& spec) {
    spec.validate();
    const size_t total = spec.grid_size();

    std::ofstream csv(spec.csv_path);
    if (!csv) throw validation_error("cannot open output file: " + spec.csv_path);
    std::ofstream jsonl;
    if (!spec.jsonl_path.empty()) {
        jsonl.open(spec.jsonl_path);
        if (!jsonl) throw validation_error("cannot open output file: " + spec.jsonl_path);
    }

    unsigned hw = std::thread::hardware_concurrency();
    const int n_workers =
        spec.workers > 0 ? spec.workers : static_cast<int>(hw > 0 ? hw : 1);

    std::vector<SweepRow> rows(total);
    std::vector<char> ready(total, 0);
    std::atomic<size_t> next{0};
    std::mutex mu;
    std::condition_variable cv;

    const auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= total) return;
            SweepRow row = compute_point(spec, i);
            {
                std::lock_guard<std::mutex> lock(mu);
                rows[i] = std::move(row);
                ready[i] = 1;
            }
            cv.notify_one();
        }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);

    // single ordered sink: rows land in grid order no matter who finishes first
    csv << "# " << to_string(spec.to_json()) << '\n' << kCsvColumns << '\n';
    if (jsonl.is_open()) jsonl << json{{"spec", spec.to_json()}}.dump() << '\n';
    for (size_t k = 0; k < total; ++k) {
        std::unique_lock<std::mutex> lock(mu);
        cv.wait(lock, [&] { return ready[k] != 0; });
        lock.unlock();
        csv << csv_row(rows[k]) << '\n';
        csv.flush();
        if (jsonl.is_open()) {
            jsonl << row_to_json(rows[k]).dump() << '\n';
            jsonl.flush();
        }
    }
    for (auto& t : pool) t.join();
    return rows;
}

void write_sweep_csv(std::ostream& out, const SweepSpec& spec, const std::vector<SweepRow>& rows) {
    out << "# " << to_string(spec.to_json()) << '\n' << kCsvColumns << '\n';
    for (const auto& row : rows) out << csv_row(row) << '\n';
}

void write_sweep_jsonl(std::ostream& out, const SweepSpec& spec,
                       const std::vector<SweepRow>& rows) {
    out << json{{"spec", spec.to_json()}}.dump() << '\n';
    for (const auto& row : rows) out << row_to_json(row).dump() << '\n';
}

std::vector<TrajectoryRecord> export_trajectories(const ModelParams& params,
                                                  const std::vector<BlochAngles>& initial_states,
                                                  const std::vector<double>& times) {
    params.validate();
    if (initial_states.empty()) throw validation_error("trajectories need an initial state");
    if (times.empty()) throw validation_error("trajectories need a time grid");
    for (size_t i = 0; i < times.size(); ++i) {
        if (!std::isfinite(times[i]) || times[i] < 0.0)
            throw validation_error("trajectory times must be finite and >= 0");
        if (i > 0 && times[i] <= times[i - 1])
            throw validation_error("trajectory times must increase");
    }

    const engine::CentralSpinEvolution evolution(params, std::max(times.back(), 1e-12));
    std::vector<TrajectoryRecord> records;
    records.reserve(initial_states.size() * times.size());
    for (size_t s = 0; s < initial_states.size(); ++s) {
        const QubitState initial = bloch_to_state(initial_states[s]);
        for (double t : times) {
            const QubitState st = evolution.state(initial, t);
            const Eigen::Vector3d v = bloch_vector(st);
            if (v.squaredNorm() > 1.0 + 1e-9)
                throw numerical_error("Bloch vector left the unit ball");
            TrajectoryRecord rec;
            rec.state_index = static_cast<int>(s);
            rec.theta0 = initial_states[s].theta;
            rec.phi0 = initial_states[s].phi;
            rec.time = t;
            rec.x = v.x();
            rec.y = v.y();
            rec.z = v.z();
            rec.purity = purity(st);
            records.push_back(rec);
        }
    }
    return records;
}

void write_trajectory_csv(std::ostream& out, const ModelParams& params,
                          const std::vector<TrajectoryRecord>& records) {
    out << "# " << to_string(json{{"params", params_to_json(params)}}) << '\n';
    out << "state_index,theta0,phi0,time,x,y,z,purity\n";
    for (const auto& r : records) {
        out << r.state_index << ',' << g17(r.theta0) << ',' << g17(r.phi0) << ',' << g17(r.time)
            << ',' << g17(r.x) << ',' << g17(r.y) << ',' << g17(r.z) << ',' << g17(r.purity)
            << '\n';
    }
}

CrossCheckReport cross_check(const ModelParams& params, const std::vector<double>& t_list,
                             bool require_kernel) {
    params.validate();
    if (params.n_spins > kOracleCap)
        throw validation_error("brute-force cross-check is capped at n_spins <= "
                               + std::to_string(kOracleCap));
    if (t_list.empty() || t_list.front() < 0.0)
        throw validation_error("cross-check needs a non-negative time list");
    for (size_t i = 1; i < t_list.size(); ++i)
        if (t_list[i] <= t_list[i - 1]) throw validation_error("time list must increase");

    const bool kernel_ok = params.anisotropy == 0.0 && params.nbar == 0.0
                           && params.spectrum.kind == Spectrum::Kind::Flat;
    if (require_kernel && !kernel_ok)
        throw validation_error(
            "flat kernel outside its validity domain (needs lambda = 0, nbar = 0, flat bath)");

    const std::vector<BlochAngles> probes{{2.0, 0.8}, {M_PI / 2, 0.0}, {1.0, 4.0}};
    const engine::CentralSpinEvolution evolution(params, std::max(t_list.back(), 1e-12));
    const auto kernel_params =
        kernel_ok ? kernels::AmplitudeKernelParams::from_model(params)
                  : kernels::AmplitudeKernelParams{};

    CrossCheckReport report;
    report.kernel_checked = kernel_ok;
    for (const auto& probe : probes) {
        const QubitState initial = bloch_to_state(probe);
        const auto reference = oracle::evolve_central(params, initial, t_list);
        for (size_t i = 0; i < t_list.size(); ++i) {
            const QubitState eng = evolution.state(initial, t_list[i]);
            report.engine_discrepancy =
                std::max(report.engine_discrepancy, trace_distance(eng, reference[i]));
            if (kernel_ok) {
                const QubitState ker = kernels::amplitude_map_state(
                    probe, kernels::amplitude_flat(kernel_params, t_list[i]));
                report.kernel_discrepancy =
                    std::max(report.kernel_discrepancy, trace_distance(ker, reference[i]));
            }
        }
    }
    report.pass = report.engine_discrepancy < report.tolerance
                  && (!kernel_ok || report.kernel_discrepancy < report.tolerance);
    return report;
}

}  // namespace qdyn::sweep
