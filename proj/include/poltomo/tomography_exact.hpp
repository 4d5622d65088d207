#pragma once

// Exact reconstruction of the fixed-J density blocks from rotated tomograms
// (group-integral kernel inversion) and the SU(2) Q function.

#include "poltomo/measurement.hpp"

#include <span>
#include <vector>

namespace poltomo {

// Nodes for the rotation-angle integral over [0, 2 pi) and the solid-angle
// integral over the sphere.
struct QuadratureScheme {
    std::vector<double> omega_nodes;
    std::vector<double> omega_weights;  // sum to 2 pi
    AngleGrid sphere;                   // full-sphere grid
    std::vector<Direction> sphere_nodes;
    std::vector<double> sphere_weights;  // sum to 4 pi

    // Uniform trapezoid in omega with n_omega nodes; Gauss-Legendre(n_theta)
    // x uniform(n_phi) on the sphere.
    static QuadratureScheme make(int n_omega, int n_theta, int n_phi);
    // Smallest scheme that makes the inversion exact for one spin:
    // n_omega = 2(2J+1), n_theta = 2J+1, n_phi = 2(2J)+1.
    static QuadratureScheme for_spin(SpinIndex spin);
};

std::vector<double> uniform_omega_nodes(int n);

struct ReconstructionOptions {
    bool hermitize = true;
    // Floor negative eigenvalues at zero and restore the trace; for noisy
    // sampled tomograms only.
    bool clip_negative = false;
};

struct BlockReconstruction {
    DensityBlock block;
    double hermiticity_residual = 0.0;  // max |rho - rho^dagger| before hermitization
    bool quadrature_warning = false;    // residual above 1e-6
};

// rho_J = (2J+1)/(4 pi^2) sum_omega w sin^2(omega/2) sum_n w_n
//         exp(-i omega n.J) sum_m w^J_m(n) exp(i m omega).
// tomograms[i] must be the tomogram at scheme.sphere_nodes[i].
BlockReconstruction reconstruct_block(std::span<const DiscreteTomogram> tomograms,
                                      const QuadratureScheme& scheme,
                                      const ReconstructionOptions& options = {});

// (2J+1)/(4 pi^2) int dw sin^2(w/2) e^{i m w} [cos(w/2) - i sin(w/2) cos chi]^{2J}
cplx kernel_matrix_element(SpinIndex spin, int two_m, double cos_chi,
                           std::span<const double> omega_nodes,
                           std::span<const double> omega_weights);

// Max |w_m(POVM trace) - w_m(Fourier transform of Tr(rho e^{i w n.J}))| with
// n_omega uniform nodes. Exact once n_omega >= 2J + 1.
double characteristic_check(const DensityBlock& block, const Direction& dir, int n_omega);

struct SphereFunction {
    SpinIndex spin{0};
    std::vector<Direction> directions;
    std::vector<double> values;
};

// Q(J, n) = <J,J|_n rho_J |J,J>_n; (2J+1)/(4 pi) int Q dn = Tr rho_J.
SphereFunction q_function(const DensityBlock& block, std::span<const Direction> directions);

// (2J+1)/(4 pi) sum_i w_i Q(n_i).
double q_normalization(const SphereFunction& q, std::span<const double> weights);

struct FullReconstruction {
    PolarizationState state;
    std::vector<double> trace_deficit;     // measured block weight - reconstructed trace
    std::vector<double> hermiticity_residual;
    bool empty = false;
};

FullReconstruction reconstruct_full(std::span<const BlockTomograms> blocks,
                                    const QuadratureScheme& scheme,
                                    const ReconstructionOptions& options = {});

}  // namespace poltomo
