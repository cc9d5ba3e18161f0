#include "qdyn/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace qdyn::kernels {

namespace {

const cd kI(0.0, 1.0);

void check_time(double t) {
    if (!(t >= 0.0) || !std::isfinite(t)) throw validation_error("time must be finite and >= 0");
}

// Numerator of the Laplace-domain amplitude, shared by the residue sum and
// its confluent limits: Num(s) = (s + i*Delta)(s + i*Delta + width) + gamma*width/2.
cd lorentzian_numerator(const AmplitudeKernelParams& p, cd s) {
    const cd d = s + kI * p.detuning;
    return d * (d + p.width) + 0.5 * p.gamma * p.width;
}

cd lorentzian_numerator_d1(const AmplitudeKernelParams& p, cd s) {
    return 2.0 * (s + kI * p.detuning) + p.width;
}

// k-th derivative of h(s) = e^{st} Num(s); Num is quadratic so only three
// terms survive.
cd h_deriv(const AmplitudeKernelParams& p, cd s, double t, int k) {
    cd acc = std::pow(t, k) * lorentzian_numerator(p, s);
    if (k >= 1) acc += static_cast<double>(k) * std::pow(t, k - 1) * lorentzian_numerator_d1(p, s);
    // binom(k,2) * Num'' with Num'' = 2
    if (k >= 2) acc += static_cast<double>(k) * (k - 1) * std::pow(t, k - 2);
    return std::exp(s * t) * acc;
}

// First divided difference of h over a close pair, via the centered odd
// series (h(x+d) - h(x-d)) / 2d = sum_j h^(2j+1)(x) d^(2j) / (2j+1)!.
cd h_dd_pair_series(const AmplitudeKernelParams& p, cd a, cd b, double t) {
    const cd x = 0.5 * (a + b), d = 0.5 * (a - b);
    const cd d2 = d * d;
    cd term(1.0), fact(1.0), acc(0.0);
    for (int j = 0; j <= 4; ++j) {
        if (j > 0) {
            term *= d2;
            fact *= (2.0 * j) * (2.0 * j + 1.0);
        }
        acc += h_deriv(p, x, t, 2 * j + 1) * term / fact;
    }
    return acc;
}

// Second divided difference of h over three clustered nodes: centered series
// sum_{k>=2} h^(k)(m)/k! * (complete homogeneous of degree k-2 in offsets).
cd h_dd_triple_series(const AmplitudeKernelParams& p, const std::array<cd, 3>& nodes, double t) {
    const cd m = (nodes[0] + nodes[1] + nodes[2]) / 3.0;
    const cd w0 = nodes[0] - m, w1 = nodes[1] - m, w2 = nodes[2] - m;
    cd acc(0.0);
    double fact = 2.0;
    for (int k = 2; k <= 10; ++k) {
        const int d = k - 2;
        cd homog(0.0);
        for (int i = 0; i <= d; ++i)
            for (int j = 0; i + j <= d; ++j)
                homog += std::pow(w0, i) * std::pow(w1, j) * std::pow(w2, d - i - j);
        acc += h_deriv(p, m, t, k) * homog / fact;
        fact *= (k + 1);
    }
    return acc;
}

}  // namespace

AmplitudeKernelParams AmplitudeKernelParams::from_model(const ModelParams& m) {
    m.validate();
    if (m.anisotropy != 0.0)
        throw validation_error("amplitude kernels require isotropic coupling");
    AmplitudeKernelParams p;
    p.g_rate = m.gamma * (m.nbar + 0.5);
    p.detuning = m.detuning;
    p.coupling = m.j_coupling * std::sqrt(static_cast<double>(m.n_spins));
    p.gamma = m.gamma;
    if (m.spectrum.kind == Spectrum::Kind::Lorentzian) {
        if (m.nbar != 0.0)
            throw validation_error("the Lorentzian kernel requires a vacuum bath (nbar = 0)");
        p.width = m.spectrum.width;
        p.offset = m.spectrum.offset;
    }
    return p;
}

cd amplitude_flat(const AmplitudeKernelParams& p, double t) {
    check_time(t);
    if (p.coupling < 0.0 || p.g_rate < 0.0)
        throw validation_error("coupling and g_rate must be nonnegative");
    const cd a(p.g_rate, p.detuning);  // G + i*Delta
    const cd z = std::sqrt(0.25 * a * a - cd(p.coupling * p.coupling));

    // Both characteristic roots -a/2 +- z have nonpositive real part, so the
    // two-exponential form never overflows. Small |z t| would cancel
    // catastrophically there; switch to the series in (z t)^2 of
    // cosh(zt) + (a t / 2) sinh(zt)/(zt), accurate to ~1e-17 at |z t| = 0.1.
    if (std::abs(z) * t > 0.1) {
        const cd w = 0.5 * a / z;
        return 0.5 * ((1.0 + w) * std::exp((-0.5 * a + z) * t)
                      + (1.0 - w) * std::exp((-0.5 * a - z) * t));
    }
    const cd x2 = z * z * t * t;
    const cd ch = 1.0 + x2 * (0.5 + x2 * (1.0 / 24 + x2 * (1.0 / 720 + x2 / 40320.0)));
    const cd shc =
        1.0 + x2 * (1.0 / 6 + x2 * (1.0 / 120 + x2 * (1.0 / 5040 + x2 / 362880.0)));
    return std::exp(-0.5 * a * t) * (ch + 0.5 * a * t * shc);
}

CubicRoots cubic_roots(const AmplitudeKernelParams& p) {
    if (!(p.width > 0.0)) throw validation_error("Lorentzian kernel requires width > 0");
    if (p.offset != 0.0)
        throw validation_error("closed forms require zero bath offset");
    if (p.coupling < 0.0 || p.gamma < 0.0)
        throw validation_error("coupling and gamma must be nonnegative");

    const double c2 = p.coupling * p.coupling;  // J^2 N
    const cd a2 = 2.0 * kI * p.detuning + p.width;
    const cd a1 = c2 - p.detuning * p.detuning + kI * p.detuning * p.width
                  + 0.5 * p.width * p.gamma;
    const cd a0 = c2 * (p.width + kI * p.detuning);

    Eigen::Matrix3cd companion = Eigen::Matrix3cd::Zero();
    companion(1, 0) = 1.0;
    companion(2, 1) = 1.0;
    companion(0, 2) = -a0;
    companion(1, 2) = -a1;
    companion(2, 2) = -a2;
    const Eigen::ComplexEigenSolver<Eigen::Matrix3cd> es(companion);
    if (es.info() != Eigen::Success) throw numerical_error("cubic root solve failed");

    CubicRoots out;
    for (int i = 0; i < 3; ++i) out.roots[i] = es.eigenvalues()[i];
    std::sort(out.roots.begin(), out.roots.end(),
              [](cd a, cd b) { return std::real(a) != std::real(b) ? std::real(a) < std::real(b)
                                                                   : std::imag(a) < std::imag(b); });

    // Exactly coincident roots emerge from the eigensolver separated by
    // ~eps^(1/3) relative, so the cluster threshold must sit well above that.
    double scale = 0.0;
    for (const cd& r : out.roots) scale = std::max(scale, std::abs(r));
    scale = std::max(scale, 1e-300);
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j)
            if (std::abs(out.roots[i] - out.roots[j]) < 1e-4 * scale) out.degenerate = true;
    return out;
}

cd amplitude_lorentzian(const AmplitudeKernelParams& p, double t) {
    check_time(t);
    const CubicRoots cr = cubic_roots(p);
    const auto& a = cr.roots;

    if (!cr.degenerate) {
        cd g = 0.0;
        for (int i = 0; i < 3; ++i) {
            const cd dprime = (a[i] - a[(i + 1) % 3]) * (a[i] - a[(i + 2) % 3]);
            g += std::exp(a[i] * t) * lorentzian_numerator(p, a[i]) / dprime;
        }
        return g;
    }

    // Confluent limit: the residue sum is the second divided difference of
    // h(s) = e^{st} Num(s) over the roots; evaluate the clustered part by a
    // centered series instead of the cancellation-prone quotients.
    const double scale = std::max({std::abs(a[0]), std::abs(a[1]), std::abs(a[2]), 1e-300});
    const double thr = 1e-4 * scale;
    const double d01 = std::abs(a[0] - a[1]);
    const double d02 = std::abs(a[0] - a[2]);
    const double d12 = std::abs(a[1] - a[2]);

    if (d01 < thr && d02 < thr && d12 < thr) return h_dd_triple_series(p, a, t);

    // One close pair {x1, x2} and a separated node y:
    // h[x1, x2, y] = (h[x1, x2] - h[x2, y]) / (x1 - y).
    cd x1, x2, y;
    if (d01 < thr) {
        x1 = a[0];
        x2 = a[1];
        y = a[2];
    } else if (d02 < thr) {
        x1 = a[0];
        x2 = a[2];
        y = a[1];
    } else {
        x1 = a[1];
        x2 = a[2];
        y = a[0];
    }
    const auto h = [&](cd s) { return std::exp(s * t) * lorentzian_numerator(p, s); };
    const cd dd_pair = h_dd_pair_series(p, x1, x2, t);
    const cd dd_mixed = (h(x2) - h(y)) / (x2 - y);
    return (dd_pair - dd_mixed) / (x1 - y);
}

QubitState amplitude_map_state(const BlochAngles& angles, cd amplitude) {
    if (std::abs(amplitude) > 1.0 + 1e-9)
        throw validation_error("amplitude magnitude exceeds 1");
    const QubitState s0 = bloch_to_state(angles);
    Mat2 rho;
    const double pop = std::norm(amplitude) * s0.rho(0, 0).real();
    rho(0, 0) = pop;
    rho(1, 1) = 1.0 - pop;
    rho(0, 1) = amplitude * s0.rho(0, 1);
    rho(1, 0) = std::conj(rho(0, 1));
    return QubitState{rho};
}

double closed_form_trace_distance(const BlochAngles& a, const BlochAngles& b, cd amplitude) {
    if (std::abs(amplitude) > 1.0 + 1e-9)
        throw validation_error("amplitude magnitude exceeds 1");
    // Difference of the mapped states: +-sqrt(dp^2 + |dc|^2) eigenvalues.
    const double dp = 0.5 * std::norm(amplitude) * (std::cos(b.theta) - std::cos(a.theta));
    const cd dc = 0.5 * amplitude
                  * (std::exp(kI * a.phi) * std::sin(a.theta)
                     - std::exp(kI * b.phi) * std::sin(b.theta));
    return std::sqrt(dp * dp + std::norm(dc));
}

ModelParams scaling_map(const ModelParams& p) {
    p.validate();
    if (p.anisotropy != 0.0 || p.nbar != 0.0)
        throw validation_error("scaling map is valid only for isotropic vacuum dynamics");
    ModelParams out = p;
    out.n_spins = 1;
    out.j_coupling = p.j_coupling * std::sqrt(static_cast<double>(p.n_spins));
    return out;
}

}  // namespace qdyn::kernels
