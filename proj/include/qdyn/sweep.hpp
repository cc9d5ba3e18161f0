#pragma once

#include "qdyn/blp.hpp"
#include "qdyn/core.hpp"

#include <json.hpp>

#include <iosfwd>
#include <string>
#include <vector>

namespace qdyn::sweep {

// Largest star the dense-oracle cross check will attempt.
inline constexpr int kOracleCap = 8;

// One sweep axis: which model knob varies and the values it takes, in grid
// order. Rates are in units of J, matching the CLI convention j_coupling = 1.
struct AxisSpec {
    std::string name;  // delta | gamma | n_spins | lambda | nbar
    std::vector<double> values;
};

// Declarative description of a parameter sweep. Axes nest left-to-right
// (first axis slowest); every grid point inherits `base` with the axis
// fields substituted.
struct SweepSpec {
    std::vector<AxisSpec> axes;
    ModelParams base{};
    blp::Backend backend{blp::Backend::Engine};
    blp::Strategy strategy{blp::Strategy::Kind::CandidateSet, 25};
    std::string csv_path;
    std::string jsonl_path;  // empty disables the mirror
    int workers{0};          // 0 picks the hardware concurrency
    double t_max{0.0};       // 0 keeps the adaptive horizon
    double mk_eps{1e-4};     // Markovian-flag threshold on the measure
    bool timing{false};      // real wall times (breaks byte-determinism)

    void validate() const;
    size_t grid_size() const;
    ModelParams point(size_t index) const;

    static SweepSpec from_json(const nlohmann::json& config);
    nlohmann::json to_json() const;  // header echo: axes + knobs, not paths
};

// One computed grid point; `error` holds "validation" or "numerical" when the
// point failed, with the value fields left empty in the output.
struct SweepRow {
    size_t index{0};
    ModelParams params{};
    double nm_value{0.0};
    blp::PairAngles pair{};
    bool markovian{false};
    double wall_time_s{0.0};
    std::string error;
};

// Bloch-sphere sample of the central spin for one initial state.
struct TrajectoryRecord {
    int state_index{0};
    double theta0{0.0};
    double phi0{0.0};
    double time{0.0};
    double x{0.0}, y{0.0}, z{0.0};
    double purity{1.0};
};

// Discrepancies between the fast paths and the brute-force reference.
struct CrossCheckReport {
    double engine_discrepancy{0.0};
    bool kernel_checked{false};
    double kernel_discrepancy{0.0};
    double tolerance{1e-6};
    bool pass{false};
};

// Evaluates every grid point (worker pool, index-ordered single writer),
// writes the CSV (and optional JSON-lines mirror) incrementally, and returns
// the rows. Per-point errors are recorded in-row; the sweep continues.
std::vector<SweepRow> run_sweep(const SweepSpec& spec);

// Serializes rows plus a '#'-prefixed JSON header echoing the sweep description.
void write_sweep_csv(std::ostream& out, const SweepSpec& spec, const std::vector<SweepRow>& rows);
void write_sweep_jsonl(std::ostream& out, const SweepSpec& spec,
                       const std::vector<SweepRow>& rows);

// Central-spin Bloch trajectories for each initial state over `times`.
std::vector<TrajectoryRecord> export_trajectories(const ModelParams& params,
                                                  const std::vector<BlochAngles>& initial_states,
                                                  const std::vector<double>& times);
void write_trajectory_csv(std::ostream& out, const ModelParams& params,
                          const std::vector<TrajectoryRecord>& records);

// Max trace-distance discrepancy of the engine (and, where valid, the flat
// kernel) against the full-Hilbert-space reference over `t_list`.
// `require_kernel` turns "kernel not applicable" into a validation error.
CrossCheckReport cross_check(const ModelParams& params, const std::vector<double>& t_list,
                             bool require_kernel = false);

// Name <-> enum plumbing shared by config parsing and the CLI.
blp::Backend parse_backend(const std::string& name);
std::string backend_name(blp::Backend backend);
blp::Strategy::Kind parse_strategy(const std::string& name);
std::string strategy_name(blp::Strategy::Kind kind);

// Uniform grid helper: count samples from 0 to t_max inclusive.
std::vector<double> time_grid(double t_max, int count);

}  // namespace qdyn::sweep
