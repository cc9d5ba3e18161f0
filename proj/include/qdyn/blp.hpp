// blp.hpp - trace-distance information flow: D(t) sampling with extremum
// refinement, monotonic partitioning, inflow/outflow/ratio bookkeeping, and
// maximization of the distinguishability gain over initial state pairs.

#pragma once

#include "qdyn/core.hpp"

#include <string>
#include <vector>

namespace qdyn::blp {

// Evolution route for D(t). The kernel backends are closed forms restricted
// to isotropic coupling (FlatKernel additionally treats nbar > 0 as a
// heuristic; LorentzianKernel requires a vacuum Lorentzian bath).
enum class Backend { Engine, FlatKernel, LorentzianKernel };

struct PairAngles {
    BlochAngles first;
    BlochAngles second;
};

// Sampling controls; zeros pick policy defaults. t_max = 0 integrates until
// the distance envelope settles below 1e-5 or the 200/J cap. dt_min and
// slope_eps default to 1e-4/J and 1e-9 * max(D).
struct GridSpec {
    double t_max{0.0};
    double dt{0.0};
    double dt_min{0.0};
    double slope_eps{0.0};
};

struct TraceDistanceSeries {
    Backend provenance{Backend::Engine};
    PairAngles pair;
    std::vector<double> times;   // sorted; base grid plus refined samples
    std::vector<double> values;  // D(t), in [0, 1]
    bool settled{true};          // envelope froze before the horizon cap
};

// Maximal run of one monotonic direction; endpoints are series samples.
struct Interval {
    double t_begin{0.0};
    double t_end{0.0};
    double d_begin{0.0};
    double d_end{0.0};
    bool rising{false};
};

struct MonotonicityPartition {
    TraceDistanceSeries series;
    std::vector<Interval> intervals;  // tile [t0, t_max], tags alternate
    double slope_eps{0.0};
};

// Cumulative information flows on the series grid. inflow - outflow
// telescopes to D(tau) - D(0) exactly; ratio = inflow/outflow (0 while
// nothing has flowed out).
struct NmFlows {
    std::vector<double> times;
    std::vector<double> inflow;
    std::vector<double> outflow;
    std::vector<double> ratio;
};

struct Strategy {
    enum class Kind { CandidateSet, GridSearch, Hybrid };
    Kind kind{Kind::CandidateSet};
    int resolution{25};  // grid points per angle for GridSearch/Hybrid
};

struct NmResult {
    double value{0.0};  // total distinguishability gain over rising intervals
    PairAngles pair;    // winning initial pair
    Backend backend{Backend::Engine};
    NmFlows flows;      // flows of the winning pair
    std::vector<std::string> warnings;
};

// Pure-state optimum cross-check: grid scan versus the two analytic
// candidate pairs, plus sampled mixed-state pairs that must not win.
struct OptimalPairReport {
    PairAngles candidate_pair;
    double candidate_value{0.0};
    PairAngles grid_pair;
    double grid_value{0.0};
    double tolerance{0.0};
    bool candidate_wins{false};
    double best_mixed_value{0.0};
    bool mixed_below_optimum{false};
};

// Evolves both initial states through the chosen backend and samples their
// trace distance; extrema are re-sampled until bracketed within dt_min.
TraceDistanceSeries sample_trace_distance(const ModelParams& params, const PairAngles& pair,
                                          Backend backend, const GridSpec& grid = {});

// Splits the series into alternating rising/falling intervals; gaps with
// |slope| below slope_eps join their neighbor. slope_eps <= 0 uses
// 1e-9 * max(D).
MonotonicityPartition partition_monotonicity(const TraceDistanceSeries& series,
                                             double slope_eps = 0.0);

NmFlows nm_flows(const MonotonicityPartition& partition);

// Maximizes the total gain over initial pairs: the two analytic candidates,
// a (theta1, theta2, dphi) grid reduced by axial symmetry, or grid plus
// local derivative-free refinement.
NmResult nm_measure(const ModelParams& params, const Strategy& strategy,
                    Backend backend = Backend::Engine, const GridSpec& grid = {});

OptimalPairReport optimal_pair_check(const ModelParams& params,
                                     Backend backend = Backend::Engine, int resolution = 25,
                                     int mixed_samples = 1000);

}  // namespace qdyn::blp
