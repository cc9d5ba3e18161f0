// engine.hpp - exact reduced dynamics via damping-basis expansion: peripheral
// operator products collapse into permutation classes, the class-reduced
// generator is exponentiated, and the central state is read off the
// all-stationary class. Scales polynomially in N.

#pragma once

#include "qdyn/core.hpp"

#include <Eigen/Dense>

#include <array>
#include <string>
#include <vector>

namespace qdyn::engine {

// Occupation counts (n1, n2, n3, n4) of the four single-spin eigenoperators
// across the N peripheral sites; n1+n2+n3+n4 = N.
struct DampingClass {
    std::array<int, 4> counts{0, 0, 0, 0};

    int total() const { return counts[0] + counts[1] + counts[2] + counts[3]; }
    bool operator==(const DampingClass& o) const { return counts == o.counts; }
};

// Number of site assignments represented by one class: N!/(n1!n2!n3!n4!).
double class_multiplicity(const DampingClass& c);

// All compositions of n_spins into 4 nonnegative parts, in decreasing
// lexicographic order of counts. The first class is the all-stationary one,
// so its coefficients carry the reduced central state. Count = C(N+3, 3).
std::vector<DampingClass> enumerate_classes(int n_spins);

// One representative coefficient per (central index, class) pair, laid out
// class-major: entry(class k, central n in 0..3) = c[4*k + n].
using CoefficientVector = Eigen::VectorXcd;

// Class-reduced generator. Immutable after build; shareable across threads.
struct GeneratorMatrix {
    ModelParams params;
    std::vector<DampingClass> classes;
    Eigen::MatrixXcd m;

    int dim() const { return static_cast<int>(m.rows()); }
    int index(int central, int class_idx) const { return 4 * class_idx + central; }
};

// Builds the generator for a memoryless (flat-spectrum) bath. Entries combine
// per-site trace tables of the coupling operators in the damping basis with
// class-transition combinatorics; the dissipative part is diagonal.
GeneratorMatrix build_generator(const ModelParams& params);

// Expansion coefficients of central (x) ground periphery. Only classes with
// no raising/lowering content are populated at t = 0.
CoefficientVector initial_coefficients(const QubitState& central, int n_spins, double gamma,
                                       double nbar);

// c(t) at the requested times (sorted, nonnegative) by stepping a dense
// scaling-and-squaring exponential of the generator.
std::vector<CoefficientVector> propagate(const GeneratorMatrix& gen, const CoefficientVector& c0,
                                         const std::vector<double>& times);

// Central state from the all-stationary-class coefficients (c must use the
// canonical class ordering). Hermitizes the reconstruction and flags
// positivity violations beyond 1e-8 as numerical_error.
QubitState reduced_state(const CoefficientVector& c, double gamma, double nbar);

// Same reconstruction from the 4 central coefficients alone.
QubitState state_from_central_coefficients(const Eigen::Vector4cd& c, double nbar);

// Dual-basis coefficients (1, <sz>+1/(2nbar+1), rho_{+-}, rho_{-+}) of a
// central state; the linear-input side of the cached evolution map.
Eigen::Vector4cd central_coefficients(const QubitState& s, double nbar);

// Versioned JSON round trip of a generator (debugging / reproducibility).
void dump_generator(const GeneratorMatrix& gen, const std::string& path);
GeneratorMatrix load_generator(const std::string& path);

// Cached linear map from initial central coefficients to evolved ones on a
// uniform time grid: column n of map_at(i) is the coefficient vector reached
// from central basis input n. Reduces per-initial-state evolution to 4x4
// algebra, which makes pair searches cheap.
class CentralSpinEvolution {
public:
    // Fixed horizon. dt <= 0 picks a step from the generator's spectral
    // radius so that degree-7 interpolation stays below ~1e-8.
    CentralSpinEvolution(const ModelParams& params, double t_max, double dt = 0.0);

    // Grows the horizon in blocks of block_span until every map entry stays
    // within settle_eps over one whole block, up to t_cap.
    static CentralSpinEvolution adaptive(const ModelParams& params, double t_cap,
                                         double settle_eps = 1e-5, double block_span = 0.0);

    const ModelParams& params() const { return params_; }
    double dt() const { return dt_; }
    double t_max() const { return grid_.empty() ? 0.0 : grid_.back(); }
    const std::vector<double>& grid() const { return grid_; }
    bool settled() const { return settled_; }

    const Eigen::Matrix4cd& map_at(int node) const { return maps_[node]; }
    // Degree-7 local polynomial interpolation between grid nodes.
    Eigen::Matrix4cd map(double t) const;

    QubitState state(const QubitState& initial, double t) const;
    QubitState state_at(const QubitState& initial, int node) const;

private:
    CentralSpinEvolution() = default;
    void build(const ModelParams& params, double t_max, double dt, double settle_eps,
               bool adaptive_stop, double block_span);

    ModelParams params_;
    double dt_{0.0};
    std::vector<double> grid_;
    std::vector<Eigen::Matrix4cd> maps_;
    bool settled_{true};
};

}  // namespace qdyn::engine
