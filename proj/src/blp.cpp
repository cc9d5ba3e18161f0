#include "qdyn/blp.hpp"

#include "qdyn/engine.hpp"
#include "qdyn/kernels.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <random>
#include <tuple>

namespace qdyn::blp {

namespace {

constexpr double kCapOverJ = 200.0;    // horizon cap, units of 1/J
constexpr double kEnvelopeEps = 1e-5;  // settle threshold on the envelope
constexpr double kBlockOverJ = 20.0;   // settle observation window

// Difference data of an initial pair: populations/coherence for the
// amplitude backends, dual coefficients for the engine.
struct PairDiff {
    double dpop{0.0};
    cd dcoh{0.0};
    Eigen::Vector4cd dc = Eigen::Vector4cd::Zero();
};

double distance_from_coeff_diff(const Eigen::Vector4cd& dc) {
    const double d = 0.5 * dc[1].real();
    const cd c = 0.5 * (dc[2] + std::conj(dc[3]));
    return std::sqrt(d * d + std::norm(c));
}

// Shared per-parameter-point context: the evolution (or amplitude cache) is
// built once and reused across every candidate pair.
class Sampler {
public:
    Sampler(const ModelParams& params, Backend backend, const GridSpec& grid)
        : params_(params), backend_(backend) {
        params_.validate();
        if (grid.t_max < 0.0 || grid.dt < 0.0 || grid.dt_min < 0.0 || grid.slope_eps < 0.0
            || !std::isfinite(grid.t_max + grid.dt + grid.dt_min))
            throw validation_error("grid spec fields must be finite and >= 0");
        dt_min_ = grid.dt_min > 0.0 ? grid.dt_min : 1e-4 / params_.j_coupling;
        const double cap = grid.t_max > 0.0 ? grid.t_max : kCapOverJ / params_.j_coupling;

        if (backend_ == Backend::Engine) {
            if (grid.t_max > 0.0)
                evolution_ = std::make_shared<engine::CentralSpinEvolution>(params_, grid.t_max,
                                                                            grid.dt);
            else
                evolution_ = std::make_shared<engine::CentralSpinEvolution>(
                    engine::CentralSpinEvolution::adaptive(params_, cap, kEnvelopeEps));
            base_grid_ = evolution_->grid();
            settled_ = evolution_->settled();
            return;
        }

        kernel_ = kernels::AmplitudeKernelParams::from_model(params_);
        if (backend_ == Backend::FlatKernel) {
            if (params_.spectrum.kind != Spectrum::Kind::Flat)
                throw validation_error("flat-kernel backend requires a flat spectrum");
        } else {
            if (params_.spectrum.kind != Spectrum::Kind::Lorentzian)
                throw validation_error("Lorentzian backend requires a Lorentzian spectrum");
        }

        // Base step resolving the collective oscillation and every rate.
        double rate = kernel_.coupling + 0.5 * std::abs(cd(kernel_.g_rate, kernel_.detuning))
                      + 0.5 * kernel_.width;
        rate = std::max(rate, 1e-6);
        double dt = grid.dt > 0.0 ? grid.dt : 0.25 / rate;
        dt = std::min(dt, cap / 64.0);

        const long block = std::max<long>(
            1, static_cast<long>(std::ceil(kBlockOverJ / params_.j_coupling / dt)));
        const long cap_steps = static_cast<long>(std::ceil(cap / dt - 1e-9));
        base_grid_.push_back(0.0);
        g_cache_.push_back(cd(1.0));
        settled_ = grid.t_max > 0.0;  // explicit horizon: settle policy off
        double window_max = 0.0;
        for (long i = 1; i <= cap_steps; ++i) {
            const double t = static_cast<double>(i) * dt;
            const cd g = amplitude(t);
            base_grid_.push_back(t);
            g_cache_.push_back(g);
            window_max = std::max(window_max, std::abs(g));
            if (grid.t_max <= 0.0 && i % block == 0) {
                if (window_max < kEnvelopeEps) {
                    settled_ = true;
                    break;
                }
                window_max = 0.0;
            }
        }
    }

    const ModelParams& params() const { return params_; }
    bool settled() const { return settled_; }
    double dt_min() const { return dt_min_; }

    PairDiff pair_diff(const Mat2& rho1, const Mat2& rho2) const {
        PairDiff d;
        if (backend_ == Backend::Engine) {
            d.dc = engine::central_coefficients(QubitState{rho1}, params_.nbar)
                   - engine::central_coefficients(QubitState{rho2}, params_.nbar);
        } else {
            d.dpop = (rho1(0, 0) - rho2(0, 0)).real();
            d.dcoh = rho1(0, 1) - rho2(0, 1);
        }
        return d;
    }

    double at_node(const PairDiff& d, int node) const {
        if (backend_ == Backend::Engine)
            return distance_from_coeff_diff(evolution_->map_at(node) * d.dc);
        return kernel_distance(d, g_cache_[node]);
    }

    double at(const PairDiff& d, double t) const {
        if (backend_ == Backend::Engine)
            return distance_from_coeff_diff(evolution_->map(t) * d.dc);
        return kernel_distance(d, amplitude(t));
    }

    TraceDistanceSeries run(const Mat2& rho1, const Mat2& rho2, const PairAngles& tag) const {
        const PairDiff d = pair_diff(rho1, rho2);
        // t -> D(t); the map keeps merged samples sorted and deduplicated
        std::map<double, double> samples;
        for (size_t i = 0; i < base_grid_.size(); ++i)
            samples.emplace(base_grid_[i], at_node(d, static_cast<int>(i)));

        refine_extrema(d, samples);

        TraceDistanceSeries s;
        s.provenance = backend_;
        s.pair = tag;
        s.settled = settled_;
        s.times.reserve(samples.size());
        s.values.reserve(samples.size());
        for (const auto& [t, v] : samples) {
            s.times.push_back(t);
            s.values.push_back(v);
        }
        return s;
    }

private:
    cd amplitude(double t) const {
        return backend_ == Backend::FlatKernel ? kernels::amplitude_flat(kernel_, t)
                                               : kernels::amplitude_lorentzian(kernel_, t);
    }

    double kernel_distance(const PairDiff& d, cd g) const {
        const double m2 = std::norm(g);
        return std::sqrt(m2 * m2 * d.dpop * d.dpop + m2 * std::norm(d.dcoh));
    }

    // Golden-section sweep of each slope sign change until the bracket is
    // tighter than dt_min; every evaluation joins the series.
    void refine_extrema(const PairDiff& d, std::map<double, double>& samples) const {
        const double gold = 0.5 * (std::sqrt(5.0) - 1.0);
        for (size_t i = 0; i + 2 < base_grid_.size(); ++i) {
            const double v0 = samples.at(base_grid_[i]);
            const double v1 = samples.at(base_grid_[i + 1]);
            const double v2 = samples.at(base_grid_[i + 2]);
            const bool peak = v1 > v0 && v1 >= v2;
            const bool valley = v1 < v0 && v1 <= v2;
            if (!peak && !valley) continue;

            double a = base_grid_[i], b = base_grid_[i + 2];
            double x1 = b - gold * (b - a), x2 = a + gold * (b - a);
            double f1 = at(d, x1), f2 = at(d, x2);
            samples.emplace(x1, f1);
            samples.emplace(x2, f2);
            for (int iter = 0; iter < 200 && (b - a) > dt_min_; ++iter) {
                const bool keep_left = peak ? (f1 > f2) : (f1 < f2);
                if (keep_left) {
                    b = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = b - gold * (b - a);
                    f1 = at(d, x1);
                    samples.emplace(x1, f1);
                } else {
                    a = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = a + gold * (b - a);
                    f2 = at(d, x2);
                    samples.emplace(x2, f2);
                }
            }
        }
    }

    ModelParams params_;
    Backend backend_;
    std::shared_ptr<engine::CentralSpinEvolution> evolution_;
    kernels::AmplitudeKernelParams kernel_;
    std::vector<double> base_grid_;
    std::vector<cd> g_cache_;
    bool settled_{true};
    double dt_min_{1e-4};
};

std::tuple<double, double, double, double> pair_key(const PairAngles& p) {
    return {p.first.theta, p.first.phi, p.second.theta, p.second.phi};
}

struct PairEvaluation {
    double value{0.0};
    NmFlows flows;
    bool ratio_ok{true};
};

PairEvaluation evaluate_pair(const Sampler& sampler, const PairAngles& pair) {
    const TraceDistanceSeries series =
        sampler.run(bloch_to_state(pair.first).rho, bloch_to_state(pair.second).rho, pair);
    const MonotonicityPartition part = partition_monotonicity(series);
    PairEvaluation ev;
    ev.flows = nm_flows(part);
    ev.value = ev.flows.inflow.empty() ? 0.0 : ev.flows.inflow.back();
    for (double r : ev.flows.ratio)
        if (r > 1.0 + 1e-9) ev.ratio_ok = false;
    return ev;
}

std::array<PairAngles, 2> analytic_candidates() {
    return {PairAngles{{M_PI / 2, 0.0}, {M_PI / 2, M_PI}}, PairAngles{{M_PI, 0.0}, {0.0, 0.0}}};
}

std::vector<PairAngles> grid_pairs(int resolution) {
    if (resolution < 2) throw validation_error("grid resolution must be >= 2");
    std::vector<PairAngles> out;
    const int n = resolution;
    for (int i = 0; i < n; ++i) {
        const double th1 = M_PI * i / (n - 1);
        for (int j = i; j < n; ++j) {  // exchange symmetry of the pair
            const double th2 = M_PI * j / (n - 1);
            for (int k = 0; k < n; ++k) {
                const double dphi = M_PI * k / (n - 1);  // azimuthal symmetry
                out.push_back({{th1, 0.0}, {th2, dphi}});
            }
        }
    }
    return out;
}

struct BestTracker {
    bool has{false};
    double value{0.0};
    PairAngles pair;
    PairEvaluation eval;

    void offer(const PairAngles& p, PairEvaluation&& e) {
        if (!has || e.value > value
            || (e.value == value && pair_key(p) < pair_key(pair))) {
            has = true;
            value = e.value;
            pair = p;
            eval = std::move(e);
        }
    }
};

// Derivative-free simplex descent on (theta1, theta2, dphi) in [0, pi]^3.
PairAngles nelder_mead_refine(const Sampler& sampler, const PairAngles& seed, double step) {
    using Vec = std::array<double, 3>;
    const auto clamp_vec = [](Vec x) {
        for (double& c : x) c = std::clamp(c, 0.0, M_PI);
        return x;
    };
    const auto to_pair = [](const Vec& x) {
        return PairAngles{{x[0], 0.0}, {x[1], x[2]}};
    };
    const auto f = [&](const Vec& x) { return -evaluate_pair(sampler, to_pair(x)).value; };

    std::array<Vec, 4> xs;
    xs[0] = clamp_vec({seed.first.theta, seed.second.theta, seed.second.phi});
    for (int i = 1; i < 4; ++i) {
        Vec v = xs[0];
        v[i - 1] += (v[i - 1] + step <= M_PI) ? step : -step;
        xs[i] = clamp_vec(v);
    }
    std::array<double, 4> fs;
    for (int i = 0; i < 4; ++i) fs[i] = f(xs[i]);

    for (int iter = 0; iter < 120; ++iter) {
        std::array<int, 4> order{0, 1, 2, 3};
        std::sort(order.begin(), order.end(), [&](int a, int b) { return fs[a] < fs[b]; });
        std::array<Vec, 4> tx;
        std::array<double, 4> tf;
        for (int i = 0; i < 4; ++i) {
            tx[i] = xs[order[i]];
            tf[i] = fs[order[i]];
        }
        xs = tx;
        fs = tf;

        double spread = 0.0;
        for (int i = 1; i < 4; ++i)
            for (int c = 0; c < 3; ++c) spread = std::max(spread, std::abs(xs[i][c] - xs[0][c]));
        if (spread < 1e-5) break;

        Vec centroid{0, 0, 0};
        for (int i = 0; i < 3; ++i)
            for (int c = 0; c < 3; ++c) centroid[c] += xs[i][c] / 3.0;

        const auto blend = [&](double coeff) {
            Vec v;
            for (int c = 0; c < 3; ++c) v[c] = centroid[c] + coeff * (centroid[c] - xs[3][c]);
            return clamp_vec(v);
        };

        const Vec xr = blend(1.0);
        const double fr = f(xr);
        if (fr < fs[0]) {
            const Vec xe = blend(2.0);
            const double fe = f(xe);
            if (fe < fr) {
                xs[3] = xe;
                fs[3] = fe;
            } else {
                xs[3] = xr;
                fs[3] = fr;
            }
        } else if (fr < fs[2]) {
            xs[3] = xr;
            fs[3] = fr;
        } else {
            const Vec xc = blend(fr < fs[3] ? 0.5 : -0.5);
            const double fc = f(xc);
            if (fc < std::min(fr, fs[3])) {
                xs[3] = xc;
                fs[3] = fc;
            } else {
                for (int i = 1; i < 4; ++i) {
                    for (int c = 0; c < 3; ++c) xs[i][c] = 0.5 * (xs[i][c] + xs[0][c]);
                    fs[i] = f(xs[i]);
                }
            }
        }
    }
    int best = 0;
    for (int i = 1; i < 4; ++i)
        if (fs[i] < fs[best]) best = i;
    return to_pair(xs[best]);
}

}  // namespace

TraceDistanceSeries sample_trace_distance(const ModelParams& params, const PairAngles& pair,
                                          Backend backend, const GridSpec& grid) {
    const Sampler sampler(params, backend, grid);
    return sampler.run(bloch_to_state(pair.first).rho, bloch_to_state(pair.second).rho, pair);
}

MonotonicityPartition partition_monotonicity(const TraceDistanceSeries& series,
                                             double slope_eps) {
    const size_t n = series.times.size();
    if (n < 3) throw validation_error("series needs at least 3 samples");
    if (series.values.size() != n) throw validation_error("series times/values length mismatch");

    double scale = 0.0;
    for (double v : series.values) scale = std::max(scale, std::abs(v));
    const double eps = slope_eps > 0.0 ? slope_eps : 1e-9 * scale;

    // Tag each gap, then fill plateaus from the previous (or next) direction.
    std::vector<int> tag(n - 1, 0);
    for (size_t i = 0; i + 1 < n; ++i) {
        const double slope = (series.values[i + 1] - series.values[i])
                             / (series.times[i + 1] - series.times[i]);
        tag[i] = slope > eps ? 1 : (slope < -eps ? -1 : 0);
    }
    int last = 0;
    for (size_t i = 0; i + 1 < n; ++i) {
        if (tag[i] == 0)
            tag[i] = last;
        else
            last = tag[i];
    }
    for (size_t i = n - 1; i-- > 0;)
        if (tag[i] == 0) tag[i] = (i + 1 < n - 1) ? tag[i + 1] : 0;

    MonotonicityPartition part;
    part.series = series;
    part.slope_eps = eps;
    size_t start = 0;
    for (size_t i = 1; i <= n - 1; ++i) {
        if (i == n - 1 || tag[i] != tag[start]) {
            Interval iv;
            iv.t_begin = series.times[start];
            iv.t_end = series.times[i];
            iv.d_begin = series.values[start];
            iv.d_end = series.values[i];
            iv.rising = tag[start] > 0;  // all-plateau series counts as falling
            part.intervals.push_back(iv);
            start = i;
        }
    }
    return part;
}

NmFlows nm_flows(const MonotonicityPartition& partition) {
    const auto& times = partition.series.times;
    const auto& values = partition.series.values;
    NmFlows f;
    f.times = times;
    f.inflow.assign(times.size(), 0.0);
    f.outflow.assign(times.size(), 0.0);
    f.ratio.assign(times.size(), 0.0);

    size_t iv = 0;
    double in = 0.0, out = 0.0;
    for (size_t k = 1; k < times.size(); ++k) {
        while (iv + 1 < partition.intervals.size() && times[k] > partition.intervals[iv].t_end)
            ++iv;
        const double dd = values[k] - values[k - 1];
        if (partition.intervals[iv].rising)
            in += dd;
        else
            out -= dd;
        f.inflow[k] = in;
        f.outflow[k] = out;
        f.ratio[k] = out > 0.0 ? in / out : 0.0;
    }
    return f;
}

NmResult nm_measure(const ModelParams& params, const Strategy& strategy, Backend backend,
                    const GridSpec& grid) {
    const Sampler sampler(params, backend, grid);

    BestTracker best;
    if (strategy.kind == Strategy::Kind::CandidateSet) {
        for (const auto& pair : analytic_candidates())
            best.offer(pair, evaluate_pair(sampler, pair));
    } else {
        for (const auto& pair : grid_pairs(strategy.resolution))
            best.offer(pair, evaluate_pair(sampler, pair));
        if (strategy.kind == Strategy::Kind::Hybrid) {
            const double step = 0.5 * M_PI / (strategy.resolution - 1);
            const PairAngles refined = nelder_mead_refine(sampler, best.pair, step);
            best.offer(refined, evaluate_pair(sampler, refined));
        }
    }

    NmResult result;
    result.value = best.value;
    result.pair = best.pair;
    result.backend = backend;
    result.flows = std::move(best.eval.flows);
    if (!sampler.settled())
        result.warnings.push_back("time horizon capped before the distance envelope settled");
    if (!best.eval.ratio_ok)
        result.warnings.push_back("return ratio exceeded 1 for the winning pair");
    return result;
}

OptimalPairReport optimal_pair_check(const ModelParams& params, Backend backend, int resolution,
                                     int mixed_samples) {
    if (params.nbar != 0.0 || params.anisotropy != 0.0)
        throw validation_error("optimal-pair check applies to isotropic vacuum dynamics");

    const Sampler sampler(params, backend, {});

    OptimalPairReport report;
    BestTracker cand;
    for (const auto& pair : analytic_candidates()) cand.offer(pair, evaluate_pair(sampler, pair));
    report.candidate_pair = cand.pair;
    report.candidate_value = cand.value;

    BestTracker gridb;
    for (const auto& pair : grid_pairs(resolution)) gridb.offer(pair, evaluate_pair(sampler, pair));
    report.grid_pair = gridb.pair;
    report.grid_value = gridb.value;

    report.tolerance = std::max(1e-6, 1e-6 * report.grid_value);
    report.candidate_wins = report.grid_value <= report.candidate_value + report.tolerance;

    // Random mixed pairs must stay below the pure optimum.
    std::mt19937_64 rng(20259);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const auto random_mixed = [&]() {
        const double z = 2.0 * u01(rng) - 1.0;
        const double phi = 2.0 * M_PI * u01(rng);
        const double r = std::cbrt(u01(rng));
        const double s = std::sqrt(1.0 - z * z);
        const Eigen::Vector3d v(r * s * std::cos(phi), r * s * std::sin(phi), r * z);
        Mat2 rho = 0.5 * (identity2() + v.x() * sigma_x() + v.y() * sigma_y() + v.z() * sigma_z());
        return rho;
    };
    double best_mixed = 0.0;
    const PairAngles tag{{0.0, 0.0}, {0.0, 0.0}};
    for (int i = 0; i < mixed_samples; ++i) {
        const Mat2 r1 = random_mixed(), r2 = random_mixed();
        const auto series = sampler.run(r1, r2, tag);
        const auto flows = nm_flows(partition_monotonicity(series));
        if (!flows.inflow.empty()) best_mixed = std::max(best_mixed, flows.inflow.back());
    }
    report.best_mixed_value = best_mixed;
    const double pure_best = std::max(report.candidate_value, report.grid_value);
    report.mixed_below_optimum = best_mixed <= pure_best + report.tolerance;
    return report;
}

}  // namespace qdyn::blp
