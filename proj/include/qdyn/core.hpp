// core.hpp - shared numeric and domain types: qubit states, Bloch angles,
// model parameters, trace distance, and the single-spin damping basis.

#pragma once

#include <Eigen/Dense>

#include <array>
#include <complex>
#include <stdexcept>
#include <string>

namespace qdyn {

using cd = std::complex<double>;
using Mat2 = Eigen::Matrix2cd;

// Invalid input or configuration (CLI exit code 2).
class validation_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Numerical failure: lost accuracy, non-finite values (CLI exit code 3).
class numerical_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ------------------------------ Pauli algebra -------------------------------
// Basis order: index 0 = excited |+>, index 1 = ground |->, so that
// sigma_z = diag(1, -1) and sigma_minus |+> = |->.

Mat2 identity2();
Mat2 sigma_x();
Mat2 sigma_y();
Mat2 sigma_z();
Mat2 sigma_plus();   // |+><-|
Mat2 sigma_minus();  // |-><+|

// ------------------------------- Bloch angles -------------------------------

// Angles of |psi> = cos(theta/2)|-> + e^{i phi} sin(theta/2)|+>.
// theta = 0 is the ground state |->; theta = pi is the excited state |+>.
struct BlochAngles {
    double theta{0.0};  // [0, pi]
    double phi{0.0};    // [0, 2*pi)

    // Clamp/wrap into the canonical ranges.
    static BlochAngles normalized(double theta, double phi);
};

// -------------------------------- Qubit state -------------------------------

struct QubitState {
    Mat2 rho{Mat2::Zero()};

    QubitState() = default;
    explicit QubitState(const Mat2& m) : rho(m) {}

    bool is_valid(double tol = 1e-10) const;

    // Throws numerical_error when Hermiticity/trace/positivity are violated.
    void require_valid(double tol = 1e-10) const;
};

// Pure state with the given Bloch angles; purity is exactly 1.
QubitState bloch_to_state(const BlochAngles& angles);

// Half trace norm of the difference; a metric with values in [0, 1].
double trace_distance(const QubitState& a, const QubitState& b);

double purity(const QubitState& s);

// Bloch coordinates (x, y, z) = (<sx>, -<sy>, -<sz>), chosen so that
// bloch_to_state(theta, phi) sits at (sin t cos p, sin t sin p, cos t)
// with the ground state |-> at the north pole.
Eigen::Vector3d bloch_vector(const QubitState& s);

// ------------------------------ Model parameters ----------------------------

// Bath spectral density selector. Flat gives a memoryless local bath; the
// Lorentzian carries a finite correlation time 1/width.
struct Spectrum {
    enum class Kind { Flat, Lorentzian };
    Kind kind{Kind::Flat};
    double width{0.0};   // Lorentzian width (rate units)
    double offset{0.0};  // Lorentzian center offset; closed forms need 0

    static Spectrum flat() { return {}; }
    static Spectrum lorentzian(double width, double offset = 0.0) {
        return {Kind::Lorentzian, width, offset};
    }
};

// Physical knobs of the dissipative star. All energies/rates share one unit
// system (hbar = 1); choosing j_coupling = 1 expresses rates in units of J
// and times in 1/J.
struct ModelParams {
    int n_spins{1};          // N peripheral spins
    double j_coupling{1.0};  // J
    double anisotropy{0.0};  // XY anisotropy in [-1, 1] range of interest
    double detuning{0.0};    // peripheral minus central splitting
    double gamma{1.0};       // local bath rate, >= 0
    double nbar{0.0};        // thermal occupation, >= 0
    Spectrum spectrum{};

    // Throws validation_error when a field is out of range.
    void validate() const;
};

// ----------------------------- Damping basis --------------------------------

// Right eigenoperator of the single-spin thermal dissipator.
struct SigmaBasisElement {
    int tag{1};               // 1..4
    Mat2 matrix;              // mu^tag
    cd eigenvalue{0.0, 0.0};  // dissipator eigenvalue
};

// Right eigenoperators mu^1..mu^4 plus the dual (left) set satisfying
// Tr[dual^k mu^l] = delta_{kl}. Eigenvalues: 0, -gamma(2nbar+1), and the
// double -gamma(2nbar+1)/2.
struct DampingBasis {
    std::array<SigmaBasisElement, 4> elements;
    std::array<Mat2, 4> duals;
    double gamma{0.0};
    double nbar{0.0};
};

// Thermal amplitude-damping dissipator acting on a single-spin operator:
// gamma(nbar+1)(s- X s+ - {s+s-, X}/2) + gamma nbar (s+ X s- - {s-s+, X}/2).
Mat2 dissipator_apply(double gamma, double nbar, const Mat2& x);

DampingBasis single_spin_damping_basis(double gamma, double nbar);

}  // namespace qdyn
