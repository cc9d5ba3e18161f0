// oracle.hpp - brute-force ground truth: the full (N+1)-spin Hamiltonian and
// per-site thermal dissipators in the complete Hilbert space, propagated by an
// adaptive Krylov matrix exponential. Capped at small N by design.

#pragma once

#include "qdyn/core.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <vector>

namespace qdyn::oracle {

// Largest peripheral count the full-space route accepts (state dim 2^(N+1)).
inline constexpr int kOracleCap = 5;

using DenseOperator = Eigen::MatrixXcd;
using DenseState = Eigen::MatrixXcd;

// Site ordering: spin 0 is the most significant tensor factor, peripheral
// spins follow in order. Local basis order matches core: (|+>, |allowed->).
DenseOperator site_operator(const Mat2& m, int site, int n_spins);

// H = sum_j (eps_j/2) sz_j + (J/2) sum_j [(1+lambda) sx_0 sx_j
//   + (1-lambda) sy_0 sy_j], with eps_0 = 0 and eps_j = detuning.
// Throws validation_error beyond the cap; result is Hermitian.
DenseOperator build_hamiltonian(const ModelParams& params);

// Counts excited spins: sum_j (sz_j + 1)/2. Commutes with H at lambda = 0.
DenseOperator total_excitation_operator(int n_spins);

// central (x) |-><-|^{tensor N}
DenseState initial_full_state(const QubitState& central, int n_spins);

// Partial trace over all peripheral spins.
QubitState reduced_central_state(const DenseState& full);

// Matrix-free action of the full generator: -i[H, rho] + sum_j D_j(rho).
class LiouvilleOperator {
public:
    explicit LiouvilleOperator(const ModelParams& params);

    int n_spins() const { return n_; }
    int dim() const { return dim_; }
    const DenseOperator& hamiltonian() const { return h_; }

    DenseState apply(const DenseState& rho) const;

    // Coarse upper bound on the generator norm; seeds propagator step sizes.
    double norm_bound() const { return norm_bound_; }

private:
    int n_{0};
    int dim_{0};
    DenseOperator h_;
    double gamma_{0.0};
    double nbar_{0.0};
    double norm_bound_{0.0};
};

// Dense superoperator matrix (column-major vectorization), dimension 4^(N+1).
// Test/debug aid; only sensible for very small N.
Eigen::MatrixXcd dense_liouvillian(const ModelParams& params);

// Integrates the master equation from rho0 and returns the state at each
// requested time (sorted, nonnegative). tol is the relative accuracy per
// propagation substep; failures to meet it raise numerical_error.
std::vector<DenseState> evolve(const ModelParams& params, const DenseState& rho0,
                               const std::vector<double>& times, double tol = 1e-10);

// Convenience: start from central (x) ground periphery, return reduced states.
std::vector<QubitState> evolve_central(const ModelParams& params, const QubitState& central,
                                       const std::vector<double>& times, double tol = 1e-10);

// w = e^{tA} v for a linear operator given as a callable on vectors, via
// restarted Arnoldi with adaptive substeps. tol is relative local error;
// norm_bound seeds the first substep. Throws numerical_error when the step
// control cannot reach tol.
template <typename ApplyFn>
Eigen::VectorXcd krylov_expmv(const ApplyFn& apply, const Eigen::VectorXcd& v, double t,
                              double tol = 1e-10, double norm_bound = 1.0, int m = 30) {
    using Eigen::MatrixXcd;
    using Eigen::VectorXcd;

    const int n = static_cast<int>(v.size());
    m = std::min(m, n);
    VectorXcd w = v;
    if (t == 0.0) return w;
    double beta = w.norm();
    if (beta == 0.0) return w;

    double t_done = 0.0;
    double tau = (norm_bound > 0.0) ? std::min(t, 0.5 * m / norm_bound) : t;
    int rejections = 0;

    while (t_done < t) {
        tau = std::min(tau, t - t_done);

        // Arnoldi factorization A V_m = V_{m+1} H
        MatrixXcd vbasis(n, m + 1);
        MatrixXcd hess = MatrixXcd::Zero(m + 2, m + 2);
        vbasis.col(0) = w / beta;
        int mk = m;          // effective Krylov size
        bool happy = false;  // exact invariant subspace found
        for (int j = 0; j < m; ++j) {
            VectorXcd p = apply(vbasis.col(j));
            for (int i = 0; i <= j; ++i) {
                const cd hij = vbasis.col(i).dot(p);
                hess(i, j) = hij;
                p -= hij * vbasis.col(i);
            }
            const double hnext = p.norm();
            if (hnext < 1e-12 * std::max(1.0, norm_bound)) {
                mk = j + 1;
                happy = true;
                break;
            }
            hess(j + 1, j) = hnext;
            vbasis.col(j + 1) = p / hnext;
        }

        if (happy) {
            // The subspace is invariant: the projected exponential is exact
            // for the full remaining interval.
            tau = t - t_done;
            const MatrixXcd f = (tau * hess.topLeftCorner(mk, mk)).exp();
            w = beta * (vbasis.leftCols(mk) * f.col(0));
            beta = w.norm();
            t_done = t;
            break;
        }

        // Augmented exponential yields the local error estimate alongside
        // the propagated coefficients.
        hess(m, m + 1) = 1.0;
        const double avnorm = apply(vbasis.col(m)).norm();

        double err = 0.0;
        MatrixXcd f;
        f = (tau * hess).exp();
        const double err1 = std::abs(f(m, 0)) * beta;
        const double err2 = std::abs(f(m + 1, 0)) * beta * avnorm;
        if (err1 > 10.0 * err2)
            err = err2;
        else if (err1 > err2)
            err = err1 * err2 / (err1 - err2);
        else
            err = err1;

        const double tol_here = std::max(tol * beta, 1e-300);
        if (err <= tol_here || tau <= t * 1e-14) {
            if (tau <= t * 1e-14 && err > tol_here)
                throw numerical_error("krylov_expmv: step size underflow before reaching tolerance");
            w = beta * (vbasis.leftCols(m) * f.topLeftCorner(m, 1).eval());
            w += beta * f(m, 0) * vbasis.col(m);
            beta = w.norm();
            if (!std::isfinite(beta)) throw numerical_error("krylov_expmv: non-finite state");
            t_done += tau;
            rejections = 0;
            const double grow = std::pow(tol_here / std::max(err, 1e-300), 1.0 / m);
            tau *= std::min(2.0, std::max(0.5, 0.9 * grow));
        } else {
            if (++rejections > 60) throw numerical_error("krylov_expmv: too many step rejections");
            const double shrink = std::pow(tol_here / err, 1.0 / m);
            tau *= std::min(0.9, std::max(0.1, 0.9 * shrink));
        }
    }
    return w;
}

}  // namespace qdyn::oracle
