#include "qdyn/engine.hpp"

#include <json.hpp>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>

namespace qdyn::engine {

namespace {

// Multinomial built up one slot at a time; exact in double for the sizes here.
double multinomial(const std::array<int, 4>& counts) {
    double result = 1.0;
    int placed = 0;
    for (int k = 0; k < 4; ++k) {
        for (int i = 1; i <= counts[k]; ++i) {
            ++placed;
            result = result * placed / i;
        }
    }
    return std::round(result);
}

std::map<std::array<int, 4>, int> class_index_map(const std::vector<DampingClass>& classes) {
    std::map<std::array<int, 4>, int> idx;
    for (int i = 0; i < static_cast<int>(classes.size()); ++i) idx[classes[i].counts] = i;
    return idx;
}

// Trace tables of a coupling operator B in the damping basis:
//   left(r, n)  = Tr[dual_r B elem_n]   (B multiplies from the left)
//   right(r, n) = Tr[dual_r elem_n B]
struct TraceTables {
    Eigen::Matrix4cd left;
    Eigen::Matrix4cd right;
};

TraceTables trace_tables(const DampingBasis& basis, const Mat2& b) {
    TraceTables t;
    for (int r = 0; r < 4; ++r)
        for (int n = 0; n < 4; ++n) {
            t.left(r, n) = (basis.duals[r] * b * basis.elements[n].matrix).trace();
            t.right(r, n) = (basis.duals[r] * basis.elements[n].matrix * b).trace();
        }
    return t;
}

// Composite coefficient vector for (central coefficients) x (ground
// periphery): class (n1, n2, 0, 0) carries beta^{n2} with
// beta = -2 nbar / (2 nbar + 1), every other class starts empty.
CoefficientVector composite_from_central(const Eigen::Vector4cd& central,
                                         const std::vector<DampingClass>& classes, double nbar) {
    const double s = 2.0 * nbar + 1.0;
    const double beta = -(s - 1.0) / s;
    CoefficientVector c = CoefficientVector::Zero(4 * static_cast<int>(classes.size()));
    for (int k = 0; k < static_cast<int>(classes.size()); ++k) {
        const auto& q = classes[k].counts;
        if (q[2] != 0 || q[3] != 0) continue;
        const double weight = std::pow(beta, q[1]);
        for (int n = 0; n < 4; ++n) c[4 * k + n] = central[n] * weight;
    }
    return c;
}

// Largest |eigenvalue| estimate by power iteration; sets the time step that
// keeps local interpolation error small.
double spectral_radius_estimate(const Eigen::MatrixXcd& m) {
    std::mt19937_64 rng(12345);
    std::normal_distribution<double> dist(0.0, 1.0);
    Eigen::VectorXcd v(m.rows());
    for (int i = 0; i < v.size(); ++i) v[i] = cd(dist(rng), dist(rng));
    v.normalize();
    double rho = 0.0;
    for (int it = 0; it < 40; ++it) {
        Eigen::VectorXcd w = m * v;
        const double norm = w.norm();
        if (norm < 1e-300) return 0.0;
        rho = norm;
        v = w / norm;
    }
    return rho;
}

}  // namespace

double class_multiplicity(const DampingClass& c) { return multinomial(c.counts); }

std::vector<DampingClass> enumerate_classes(int n_spins) {
    if (n_spins < 1) throw validation_error("n_spins must be >= 1");
    std::vector<DampingClass> classes;
    for (int n1 = n_spins; n1 >= 0; --n1)
        for (int n2 = n_spins - n1; n2 >= 0; --n2)
            for (int n3 = n_spins - n1 - n2; n3 >= 0; --n3)
                classes.push_back({{n1, n2, n3, n_spins - n1 - n2 - n3}});
    return classes;
}

GeneratorMatrix build_generator(const ModelParams& params) {
    params.validate();
    if (params.spectrum.kind != Spectrum::Kind::Flat)
        throw validation_error("class-reduced generator requires a flat spectrum");

    GeneratorMatrix gen;
    gen.params = params;
    gen.classes = enumerate_classes(params.n_spins);
    const auto index_of = class_index_map(gen.classes);
    const int n_classes = static_cast<int>(gen.classes.size());
    gen.m = Eigen::MatrixXcd::Zero(4 * n_classes, 4 * n_classes);

    const DampingBasis basis = single_spin_damping_basis(params.gamma, params.nbar);
    const double wx = 0.5 * params.j_coupling * (1.0 + params.anisotropy);
    const double wy = 0.5 * params.j_coupling * (1.0 - params.anisotropy);
    const std::array<std::pair<double, TraceTables>, 2> bonds = {
        std::make_pair(wx, trace_tables(basis, sigma_x())),
        std::make_pair(wy, trace_tables(basis, sigma_y()))};

    const double s = 2.0 * params.nbar + 1.0;
    const cd im(0.0, 1.0);

    for (int kq = 0; kq < n_classes; ++kq) {
        const auto& q = gen.classes[kq].counts;

        // Free peripheral evolution: dissipative eigenvalues plus detuning
        // phases of the raising/lowering content. Diagonal in every index.
        const cd diag = -params.gamma * s * (q[1] + 0.5 * (q[2] + q[3]))
                        - im * params.detuning * static_cast<double>(q[2] - q[3]);
        for (int r = 0; r < 4; ++r) gen.m(4 * kq + r, 4 * kq + r) += diag;

        // Bond terms: a site holding element kp in the row class connects to
        // column classes that differ by kp -> k at one site. The 4x4 central
        // block is a fixed combination of the trace tables.
        for (int kp = 0; kp < 4; ++kp) {
            if (q[kp] == 0) continue;
            for (int k = 0; k < 4; ++k) {
                auto p = q;
                --p[kp];
                ++p[k];
                const int kcol = index_of.at(p);
                Eigen::Matrix4cd block = Eigen::Matrix4cd::Zero();
                for (const auto& [w, tables] : bonds)
                    block += w * (tables.left(kp, k) * tables.left
                                  - tables.right(kp, k) * tables.right);
                gen.m.block<4, 4>(4 * kq, 4 * kcol) += -im * static_cast<double>(q[kp]) * block;
            }
        }
    }
    return gen;
}

Eigen::Vector4cd central_coefficients(const QubitState& s, double nbar) {
    const DampingBasis basis = single_spin_damping_basis(1.0, nbar);
    Eigen::Vector4cd c;
    for (int n = 0; n < 4; ++n) c[n] = (basis.duals[n] * s.rho).trace();
    return c;
}

QubitState state_from_central_coefficients(const Eigen::Vector4cd& c, double nbar) {
    const DampingBasis basis = single_spin_damping_basis(1.0, nbar);
    Mat2 rho = Mat2::Zero();
    for (int n = 0; n < 4; ++n) rho += c[n] * basis.elements[n].matrix;
    rho = 0.5 * (rho + rho.adjoint()).eval();
    const Eigen::SelfAdjointEigenSolver<Mat2> es(rho);
    if (es.eigenvalues().minCoeff() < -1e-8)
        throw numerical_error("reconstructed central state lost positivity");
    return QubitState{rho};
}

CoefficientVector initial_coefficients(const QubitState& central, int n_spins, double gamma,
                                       double nbar) {
    central.require_valid();
    if (gamma < 0.0 || nbar < 0.0) throw validation_error("gamma and nbar must be nonnegative");
    const auto classes = enumerate_classes(n_spins);
    return composite_from_central(central_coefficients(central, nbar), classes, nbar);
}

std::vector<CoefficientVector> propagate(const GeneratorMatrix& gen, const CoefficientVector& c0,
                                         const std::vector<double>& times) {
    if (c0.size() != gen.dim()) throw validation_error("coefficient vector does not match generator");
    if (!std::is_sorted(times.begin(), times.end()))
        throw validation_error("times must be sorted ascending");
    for (double t : times)
        if (!(t >= 0.0) || !std::isfinite(t)) throw validation_error("times must be finite and >= 0");

    std::vector<CoefficientVector> out;
    out.reserve(times.size());
    std::map<double, Eigen::MatrixXcd> step_cache;
    CoefficientVector state = c0;
    double prev = 0.0;
    for (double t : times) {
        const double dt = t - prev;
        if (dt > 0.0) {
            auto it = step_cache.find(dt);
            if (it == step_cache.end())
                it = step_cache.emplace(dt, (gen.m * dt).exp().eval()).first;
            state = it->second * state;
            prev = t;
        }
        if (!state.allFinite()) throw numerical_error("coefficient propagation diverged");
        out.push_back(state);
    }
    return out;
}

QubitState reduced_state(const CoefficientVector& c, double /*gamma*/, double nbar) {
    if (c.size() < 4 || c.size() % 4 != 0)
        throw validation_error("coefficient vector has invalid layout");
    return state_from_central_coefficients(c.head<4>(), nbar);
}

void dump_generator(const GeneratorMatrix& gen, const std::string& path) {
    nlohmann::json j;
    j["version"] = 1;
    j["params"] = {{"n_spins", gen.params.n_spins},
                   {"j_coupling", gen.params.j_coupling},
                   {"anisotropy", gen.params.anisotropy},
                   {"detuning", gen.params.detuning},
                   {"gamma", gen.params.gamma},
                   {"nbar", gen.params.nbar}};
    nlohmann::json cls = nlohmann::json::array();
    for (const auto& c : gen.classes) cls.push_back(c.counts);
    j["classes"] = std::move(cls);
    nlohmann::json entries = nlohmann::json::array();
    for (int r = 0; r < gen.dim(); ++r)
        for (int col = 0; col < gen.dim(); ++col)
            entries.push_back({gen.m(r, col).real(), gen.m(r, col).imag()});
    j["entries"] = std::move(entries);
    std::ofstream out(path);
    if (!out) throw validation_error("cannot open generator dump path: " + path);
    out << j.dump();
}

GeneratorMatrix load_generator(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw validation_error("cannot open generator file: " + path);
    nlohmann::json j;
    in >> j;
    if (j.at("version").get<int>() != 1)
        throw validation_error("unsupported generator file version");
    GeneratorMatrix gen;
    const auto& p = j.at("params");
    gen.params.n_spins = p.at("n_spins").get<int>();
    gen.params.j_coupling = p.at("j_coupling").get<double>();
    gen.params.anisotropy = p.at("anisotropy").get<double>();
    gen.params.detuning = p.at("detuning").get<double>();
    gen.params.gamma = p.at("gamma").get<double>();
    gen.params.nbar = p.at("nbar").get<double>();
    for (const auto& c : j.at("classes")) {
        DampingClass dc;
        for (int k = 0; k < 4; ++k) dc.counts[k] = c.at(k).get<int>();
        gen.classes.push_back(dc);
    }
    const int dim = 4 * static_cast<int>(gen.classes.size());
    const auto& entries = j.at("entries");
    if (static_cast<int>(entries.size()) != dim * dim)
        throw validation_error("generator entry count does not match class list");
    gen.m.resize(dim, dim);
    int pos = 0;
    for (int r = 0; r < dim; ++r)
        for (int col = 0; col < dim; ++col, ++pos)
            gen.m(r, col) = cd(entries[pos][0].get<double>(), entries[pos][1].get<double>());
    return gen;
}

CentralSpinEvolution::CentralSpinEvolution(const ModelParams& params, double t_max, double dt) {
    if (!(t_max > 0.0) || !std::isfinite(t_max)) throw validation_error("t_max must be positive");
    build(params, t_max, dt, 0.0, false, 0.0);
}

CentralSpinEvolution CentralSpinEvolution::adaptive(const ModelParams& params, double t_cap,
                                                    double settle_eps, double block_span) {
    if (!(t_cap > 0.0) || !std::isfinite(t_cap)) throw validation_error("t_cap must be positive");
    CentralSpinEvolution ev;
    ev.build(params, t_cap, 0.0, settle_eps, true, block_span);
    return ev;
}

void CentralSpinEvolution::build(const ModelParams& params, double t_max, double dt,
                                 double settle_eps, bool adaptive_stop, double block_span) {
    params_ = params;
    const GeneratorMatrix gen = build_generator(params);

    if (dt <= 0.0) {
        const double rho = spectral_radius_estimate(gen.m);
        dt = 0.2 / std::max(1.3 * rho, 1e-12);
    }
    if (block_span <= 0.0) block_span = 20.0 / params.j_coupling;
    dt = std::min(dt, t_max / 64.0);
    if (adaptive_stop) dt = std::min(dt, block_span / 16.0);
    dt_ = dt;

    // Columns of U: composite vectors seeded with central unit coefficients.
    const int dim = gen.dim();
    Eigen::MatrixXcd u(dim, 4);
    for (int n = 0; n < 4; ++n) {
        Eigen::Vector4cd e = Eigen::Vector4cd::Zero();
        e[n] = 1.0;
        u.col(n) = composite_from_central(e, gen.classes, params.nbar);
    }
    const Eigen::MatrixXcd step = (gen.m * dt).exp();

    const long n_steps = static_cast<long>(std::ceil(t_max / dt - 1e-9));
    const long steps_per_block = std::max<long>(1, static_cast<long>(std::ceil(block_span / dt)));

    grid_.clear();
    maps_.clear();
    grid_.reserve(n_steps + 1);
    maps_.reserve(n_steps + 1);
    grid_.push_back(0.0);
    maps_.push_back(u.topRows<4>());

    settled_ = !adaptive_stop;
    Eigen::Matrix4d block_lo = maps_[0].cwiseAbs(), block_hi = block_lo;
    for (long i = 1; i <= n_steps; ++i) {
        u = step * u;
        if (!u.allFinite()) throw numerical_error("evolution map diverged");
        grid_.push_back(static_cast<double>(i) * dt);
        maps_.push_back(u.topRows<4>());

        if (adaptive_stop) {
            // Track the entrywise range of the map over the current block;
            // a flat block means the dynamics has effectively frozen.
            const Eigen::Matrix4d a = maps_.back().cwiseAbs();
            block_lo = block_lo.cwiseMin(a);
            block_hi = block_hi.cwiseMax(a);
            if (i % steps_per_block == 0) {
                if ((block_hi - block_lo).maxCoeff() < settle_eps && i >= 8) {
                    settled_ = true;
                    break;
                }
                block_lo = a;
                block_hi = a;
            }
        }
    }
}

Eigen::Matrix4cd CentralSpinEvolution::map(double t) const {
    if (!(t >= 0.0) || !std::isfinite(t)) throw validation_error("time must be finite and >= 0");
    if (t > grid_.back() * (1.0 + 1e-12) + 1e-300)
        throw validation_error("time beyond the evolution horizon");
    t = std::min(t, grid_.back());

    const long n = static_cast<long>(grid_.size());
    const long nearest = std::lround(t / dt_);
    if (nearest >= 0 && nearest < n && std::abs(t - grid_[nearest]) < 1e-12 * std::max(1.0, t))
        return maps_[nearest];

    // Degree-7 barycentric interpolation on the 8 nodes around t.
    long j0 = std::clamp(static_cast<long>(std::floor(t / dt_)) - 3, 0L, n - 8);
    static const double bary[8] = {1, -7, 21, -35, 35, -21, 7, -1};
    Eigen::Matrix4cd num = Eigen::Matrix4cd::Zero();
    double den = 0.0;
    for (int j = 0; j < 8; ++j) {
        const double d = t - grid_[j0 + j];
        const double w = bary[j] / d;
        num += w * maps_[j0 + j];
        den += w;
    }
    return num / den;
}

QubitState CentralSpinEvolution::state(const QubitState& initial, double t) const {
    const Eigen::Vector4cd c = map(t) * central_coefficients(initial, params_.nbar);
    return state_from_central_coefficients(c, params_.nbar);
}

QubitState CentralSpinEvolution::state_at(const QubitState& initial, int node) const {
    const Eigen::Vector4cd c = maps_.at(node) * central_coefficients(initial, params_.nbar);
    return state_from_central_coefficients(c, params_.nbar);
}

}  // namespace qdyn::engine
