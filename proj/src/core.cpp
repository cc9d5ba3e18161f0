#include "qdyn/core.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>

namespace qdyn {

namespace {
constexpr double kPi = 3.14159265358979323846;
const cd kI{0.0, 1.0};
}  // namespace

Mat2 identity2() { return Mat2::Identity(); }

Mat2 sigma_x() {
    Mat2 m;
    m << 0, 1, 1, 0;
    return m;
}

Mat2 sigma_y() {
    Mat2 m;
    m << 0, -kI, kI, 0;
    return m;
}

Mat2 sigma_z() {
    Mat2 m;
    m << 1, 0, 0, -1;
    return m;
}

Mat2 sigma_plus() {
    Mat2 m;
    m << 0, 1, 0, 0;
    return m;
}

Mat2 sigma_minus() {
    Mat2 m;
    m << 0, 0, 1, 0;
    return m;
}

BlochAngles BlochAngles::normalized(double theta, double phi) {
    theta = std::fmod(theta, 2.0 * kPi);
    if (theta < 0.0) theta += 2.0 * kPi;
    if (theta > kPi) {  // reflect through the pole and flip the azimuth
        theta = 2.0 * kPi - theta;
        phi += kPi;
    }
    phi = std::fmod(phi, 2.0 * kPi);
    if (phi < 0.0) phi += 2.0 * kPi;
    return {theta, phi};
}

bool QubitState::is_valid(double tol) const {
    if (!rho.allFinite()) return false;
    if ((rho - rho.adjoint()).cwiseAbs().maxCoeff() > tol) return false;
    if (std::abs(rho.trace() - cd{1.0, 0.0}) > tol) return false;
    Eigen::SelfAdjointEigenSolver<Mat2> es(0.5 * (rho + rho.adjoint()));
    return es.eigenvalues().minCoeff() >= -10.0 * tol;
}

void QubitState::require_valid(double tol) const {
    if (!is_valid(tol)) throw numerical_error("QubitState: invalid density matrix");
}

QubitState bloch_to_state(const BlochAngles& a) {
    const BlochAngles n = BlochAngles::normalized(a.theta, a.phi);
    Eigen::Vector2cd psi;
    // component order matches the basis: (excited |+>, ground |->)
    psi << std::exp(kI * n.phi) * std::sin(n.theta / 2.0), std::cos(n.theta / 2.0);
    return QubitState{psi * psi.adjoint()};
}

double trace_distance(const QubitState& a, const QubitState& b) {
    const Mat2 d = 0.5 * ((a.rho - b.rho) + (a.rho - b.rho).adjoint());
    Eigen::SelfAdjointEigenSolver<Mat2> es(d);
    return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

double purity(const QubitState& s) { return (s.rho * s.rho).trace().real(); }

Eigen::Vector3d bloch_vector(const QubitState& s) {
    const double x = (s.rho * sigma_x()).trace().real();
    const double y = (s.rho * sigma_y()).trace().real();
    const double z = (s.rho * sigma_z()).trace().real();
    return {x, -y, -z};
}

void ModelParams::validate() const {
    if (n_spins < 1) throw validation_error("ModelParams: n_spins must be >= 1");
    if (!(j_coupling == j_coupling)) throw validation_error("ModelParams: j_coupling is NaN");
    if (gamma < 0.0) throw validation_error("ModelParams: gamma must be >= 0");
    if (nbar < 0.0) throw validation_error("ModelParams: nbar must be >= 0");
    if (spectrum.kind == Spectrum::Kind::Lorentzian && spectrum.width <= 0.0)
        throw validation_error("ModelParams: Lorentzian width must be > 0");
}

Mat2 dissipator_apply(double gamma, double nbar, const Mat2& x) {
    const Mat2 sm = sigma_minus();
    const Mat2 sp = sigma_plus();
    const Mat2 down = sm * x * sp - 0.5 * (sp * sm * x + x * sp * sm);
    const Mat2 up = sp * x * sm - 0.5 * (sm * sp * x + x * sm * sp);
    return gamma * (nbar + 1.0) * down + gamma * nbar * up;
}

DampingBasis single_spin_damping_basis(double gamma, double nbar) {
    if (gamma < 0.0 || nbar < 0.0)
        throw validation_error("single_spin_damping_basis: gamma and nbar must be >= 0");

    const double s = 2.0 * nbar + 1.0;
    DampingBasis basis;
    basis.gamma = gamma;
    basis.nbar = nbar;

    basis.elements[0] = {1, 0.5 * (identity2() - sigma_z() / s), cd{0.0, 0.0}};
    basis.elements[1] = {2, 0.5 * sigma_z(), cd{-gamma * s, 0.0}};
    basis.elements[2] = {3, sigma_plus(), cd{-0.5 * gamma * s, 0.0}};
    basis.elements[3] = {4, sigma_minus(), cd{-0.5 * gamma * s, 0.0}};

    // Duals from the inverse of the vectorized basis: with columns
    // V[:,k] = vec(mu^k), the rows of V^{-1} are vec(dual^k transposed),
    // which makes Tr[dual^k mu^l] = delta_{kl} by construction.
    Eigen::Matrix4cd v;
    for (int k = 0; k < 4; ++k)
        v.col(k) = Eigen::Map<const Eigen::Vector4cd>(basis.elements[k].matrix.data());
    const Eigen::Matrix4cd vinv = v.inverse();
    for (int k = 0; k < 4; ++k) {
        const Eigen::Vector4cd row = vinv.row(k).transpose();
        basis.duals[k] = Eigen::Map<const Mat2>(row.data()).transpose();
    }
    return basis;
}

}  // namespace qdyn
