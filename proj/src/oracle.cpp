#include "qdyn/oracle.hpp"

#include <unsupported/Eigen/KroneckerProduct>

#include <algorithm>

namespace qdyn::oracle {

namespace {

void check_cap(int n_spins) {
    if (n_spins > kOracleCap)
        throw validation_error("oracle: n_spins exceeds the full-space cap of " +
                               std::to_string(kOracleCap));
}

// Bit mask selecting the local basis index of `site` within a basis index.
// Spin 0 owns the most significant bit; local value 1 means ground |->.
int site_mask(int site, int n_spins) { return 1 << (n_spins - site); }

}  // namespace

DenseOperator site_operator(const Mat2& m, int site, int n_spins) {
    const int total = n_spins + 1;
    if (site < 0 || site >= total) throw validation_error("site_operator: site out of range");
    DenseOperator out = DenseOperator::Identity(1, 1);
    for (int j = 0; j < total; ++j) {
        const Mat2 factor = (j == site) ? m : Mat2::Identity();
        out = Eigen::kroneckerProduct(out, factor).eval();
    }
    return out;
}

DenseOperator build_hamiltonian(const ModelParams& params) {
    params.validate();
    check_cap(params.n_spins);
    const int n = params.n_spins;
    const int dim = 1 << (n + 1);
    const double wx = 0.5 * params.j_coupling * (1.0 + params.anisotropy);
    const double wy = 0.5 * params.j_coupling * (1.0 - params.anisotropy);

    DenseOperator h = DenseOperator::Zero(dim, dim);
    const DenseOperator sx0 = site_operator(sigma_x(), 0, n);
    const DenseOperator sy0 = site_operator(sigma_y(), 0, n);
    for (int j = 1; j <= n; ++j) {
        h += 0.5 * params.detuning * site_operator(sigma_z(), j, n);
        h += wx * sx0 * site_operator(sigma_x(), j, n);
        h += wy * sy0 * site_operator(sigma_y(), j, n);
    }
    return h;
}

DenseOperator total_excitation_operator(int n_spins) {
    const int dim = 1 << (n_spins + 1);
    DenseOperator out = DenseOperator::Zero(dim, dim);
    for (int i = 0; i < dim; ++i) {
        int excited = 0;
        for (int j = 0; j <= n_spins; ++j)
            if ((i & site_mask(j, n_spins)) == 0) ++excited;
        out(i, i) = static_cast<double>(excited);
    }
    return out;
}

DenseState initial_full_state(const QubitState& central, int n_spins) {
    check_cap(n_spins);
    Mat2 ground;
    ground << 0, 0, 0, 1;
    DenseState out = central.rho;
    for (int j = 0; j < n_spins; ++j) out = Eigen::kroneckerProduct(out, ground).eval();
    return out;
}

QubitState reduced_central_state(const DenseState& full) {
    const int dim = static_cast<int>(full.rows());
    if (dim < 2 || full.cols() != dim || (dim & (dim - 1)) != 0)
        throw validation_error("reduced_central_state: bad state dimension");
    const int half = dim / 2;
    Mat2 rho = Mat2::Zero();
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
            rho(a, b) = full.block(a * half, b * half, half, half).trace();
    return QubitState{rho};
}

LiouvilleOperator::LiouvilleOperator(const ModelParams& params) {
    params.validate();
    check_cap(params.n_spins);
    n_ = params.n_spins;
    dim_ = 1 << (n_ + 1);
    h_ = build_hamiltonian(params);
    gamma_ = params.gamma;
    nbar_ = params.nbar;
    // induced-infinity norm of H plus the dissipator rates
    const double hnorm = h_.cwiseAbs().rowwise().sum().maxCoeff();
    norm_bound_ = 2.0 * hnorm + 2.0 * n_ * gamma_ * (2.0 * nbar_ + 1.0);
}

DenseState LiouvilleOperator::apply(const DenseState& rho) const {
    const cd img{0.0, 1.0};
    DenseState out = -img * (h_ * rho - rho * h_);

    const double rate_down = gamma_ * (nbar_ + 1.0);
    const double rate_up = gamma_ * nbar_;
    for (int j = 1; j <= n_; ++j) {
        const int mask = site_mask(j, n_);
        for (int a = 0; a < dim_; ++a) {
            const bool a_ground = (a & mask) != 0;
            for (int b = 0; b < dim_; ++b) {
                const bool b_ground = (b & mask) != 0;
                cd v{0.0, 0.0};
                // sandwich terms re-index by flipping the site bit on both sides
                if (a_ground && b_ground) v += rate_down * rho(a ^ mask, b ^ mask);
                if (!a_ground && !b_ground) v += rate_up * rho(a ^ mask, b ^ mask);
                // anticommutator halves count the excited/ground weight per side
                const double w_down = 0.5 * ((a_ground ? 0 : 1) + (b_ground ? 0 : 1));
                const double w_up = 0.5 * ((a_ground ? 1 : 0) + (b_ground ? 1 : 0));
                v -= (rate_down * w_down + rate_up * w_up) * rho(a, b);
                out(a, b) += v;
            }
        }
    }
    return out;
}

Eigen::MatrixXcd dense_liouvillian(const ModelParams& params) {
    const LiouvilleOperator op(params);
    const int d = op.dim();
    Eigen::MatrixXcd super(d * d, d * d);
    DenseState basis = DenseState::Zero(d, d);
    for (int col = 0; col < d; ++col) {
        for (int row = 0; row < d; ++row) {
            basis(row, col) = 1.0;
            const DenseState image = op.apply(basis);
            basis(row, col) = 0.0;
            super.col(col * d + row) = Eigen::Map<const Eigen::VectorXcd>(image.data(), d * d);
        }
    }
    return super;
}

std::vector<DenseState> evolve(const ModelParams& params, const DenseState& rho0,
                               const std::vector<double>& times, double tol) {
    const LiouvilleOperator op(params);
    const int d = op.dim();
    if (rho0.rows() != d || rho0.cols() != d)
        throw validation_error("evolve: initial state dimension mismatch");
    if (!std::is_sorted(times.begin(), times.end()) ||
        (!times.empty() && times.front() < 0.0))
        throw validation_error("evolve: times must be sorted and nonnegative");
    if (std::abs(rho0.trace() - cd{1.0, 0.0}) > 1e-8 ||
        (rho0 - rho0.adjoint()).cwiseAbs().maxCoeff() > 1e-8)
        throw validation_error("evolve: initial state must be Hermitian with unit trace");

    const auto apply_vec = [&op, d](const Eigen::VectorXcd& x) {
        const Eigen::Map<const DenseState> rho(x.data(), d, d);
        const DenseState image = op.apply(rho);
        return Eigen::VectorXcd(Eigen::Map<const Eigen::VectorXcd>(image.data(), d * d));
    };

    std::vector<DenseState> out;
    out.reserve(times.size());
    Eigen::VectorXcd state = Eigen::Map<const Eigen::VectorXcd>(rho0.data(), d * d);
    double t_now = 0.0;
    for (double t : times) {
        state = krylov_expmv(apply_vec, state, t - t_now, tol, op.norm_bound());
        t_now = t;
        out.emplace_back(Eigen::Map<const DenseState>(state.data(), d, d));
    }
    return out;
}

std::vector<QubitState> evolve_central(const ModelParams& params, const QubitState& central,
                                       const std::vector<double>& times, double tol) {
    const std::vector<DenseState> full =
        evolve(params, initial_full_state(central, params.n_spins), times, tol);
    std::vector<QubitState> out;
    out.reserve(full.size());
    for (const auto& f : full) out.push_back(reduced_central_state(f));
    return out;
}

}  // namespace qdyn::oracle
