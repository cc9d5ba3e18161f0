// kernels.hpp - closed-form single-excitation amplitude kernels (memoryless
// and Lorentzian-memory baths) and the trace distance of amplitude-mapped
// qubit pairs.

#pragma once

#include "qdyn/core.hpp"

#include <array>

namespace qdyn::kernels {

// Inputs of the amplitude kernels. The collective coupling J*sqrt(N) absorbs
// the peripheral count; g_rate = gamma*(nbar + 1/2) is the effective decay
// rate of the memoryless bath.
struct AmplitudeKernelParams {
    double g_rate{0.5};
    double detuning{0.0};
    double coupling{1.0};  // J*sqrt(N), >= 0
    double width{0.0};     // Lorentzian memory rate; > 0 for the structured bath
    double gamma{1.0};     // bare dissipation rate entering the memory kernel
    double offset{0.0};    // Lorentzian center offset; closed forms require 0

    // Maps model parameters (isotropic coupling only). The memoryless kernel
    // at nbar > 0 is exposed as a heuristic; the Lorentzian one requires a
    // vacuum bath.
    static AmplitudeKernelParams from_model(const ModelParams& p);
};

// Excited-state amplitude under a memoryless bath: the solution of
// g'' + (G + i*Delta) g' + coupling^2 g = 0 with g(0) = 1, g'(0) = 0.
cd amplitude_flat(const AmplitudeKernelParams& p, double t);

// Roots of the cubic characteristic polynomial of the Lorentzian-memory
// amplitude system. degenerate marks pairwise root spacing below 1e-6
// relative, where the partial-fraction form needs its confluent limit.
struct CubicRoots {
    std::array<cd, 3> roots{};
    bool degenerate{false};
};

CubicRoots cubic_roots(const AmplitudeKernelParams& p);

// Excited-state amplitude under a Lorentzian bath (memory rate width,
// vacuum): residue sum over the cubic roots, G(0) = 1.
cd amplitude_lorentzian(const AmplitudeKernelParams& p, double t);

// State reached from pure initial angles under the amplitude map
// (excited population -> |g|^2 p, coherence -> g c).
QubitState amplitude_map_state(const BlochAngles& angles, cd amplitude);

// Trace distance of the amplitude-mapped pair in closed form; equals
// trace_distance(amplitude_map_state(a), amplitude_map_state(b)).
double closed_form_trace_distance(const BlochAngles& a, const BlochAngles& b, cd amplitude);

// Collective-coupling reduction: isotropic vacuum dynamics of N spins equals
// the single-spin problem with J -> J*sqrt(N). Rejected when anisotropy or
// thermal occupation break the equivalence.
ModelParams scaling_map(const ModelParams& p);

}  // namespace qdyn::kernels
