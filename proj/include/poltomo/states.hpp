#pragma once

// Polarization states: block-diagonal density operators over the
// fixed-photon-number subspaces, and the Gaussian Stokes-fluctuation model
// used in place of an intense squeezed beam.

#include "poltomo/su2.hpp"

#include <cmath>
#include <optional>
#include <vector>

namespace poltomo {

struct DensityBlock {
    SpinIndex spin{0};
    CMatrix matrix;  // dim x dim, descending-m basis

    // Probability p_J = Tr rho_J.
    double weight() const { return matrix.trace().real(); }
};

// Throws NumericalError when the block is not Hermitian (1e-12) or has an
// eigenvalue below -1e-10, or when its weight leaves [0, 1].
void validate_block(const DensityBlock& block);

double min_eigenvalue(const CMatrix& hermitian);
double purity(const DensityBlock& block);

// Uhlmann fidelity (Tr sqrt(sqrt(a) b sqrt(a)))^2 of two positive matrices.
double fidelity(const CMatrix& a, const CMatrix& b);

class PolarizationState {
public:
    PolarizationState() = default;
    // Blocks must have strictly increasing 2J.
    explicit PolarizationState(std::vector<DensityBlock> blocks);

    const std::vector<DensityBlock>& blocks() const noexcept { return blocks_; }
    bool empty() const noexcept { return blocks_.empty(); }
    double trace() const;
    const DensityBlock* find(int two_j) const;

    // Trace within 1e-10 of one and every block valid.
    void validate() const;

private:
    std::vector<DensityBlock> blocks_;
};

// Projection of |alpha_H> (x) |alpha_V> onto the polarization sector.
// Blocks are kept in order of N = 2J until the cumulative Poisson weight
// exceeds 1 - 1e-8, then renormalized. Throws NumericalError when
// two_j_cutoff is reached first.
PolarizationState coherent_two_mode(cplx alpha_h, cplx alpha_v, int two_j_cutoff);

// Pure SU(2) coherent block |J,J>_n <J,J|_n with unit weight.
DensityBlock su2_coherent_block(SpinIndex spin, const Direction& dir);

DensityBlock maximally_mixed_block(SpinIndex spin, double weight = 1.0);

// Fluctuations of an intense beam as a 3D Gaussian over Stokes space.
// Mean in Stokes (J) units; covariance in shot-noise units where a coherent
// beam has unit variance along every direction.
struct GaussianStokesModel {
    Vec3 mean = Vec3::Zero();
    Mat3 covariance = Mat3::Identity();
    double photon_scale = 0.0;  // mean photon number 2 Jbar per window

    double marginal_variance(const Vec3& n) const { return n.dot(covariance * n); }
    // Length of one shot-noise unit in Stokes units, sqrt(Jbar / 2).
    double shot_noise_unit() const;
};

struct KerrSqueezingParams {
    double mean_photons = 1e11;
    double squeeze_db = 6.2;
    double antisqueeze_db = 0.0;
    double excess_noise_db = 0.0;
    // Principal squeezed axis; its component along the excitation axis is
    // projected out.
    Direction squeeze_axis{kPi / 2, 0.0};
    // Classical excitation; the default beam is excited along J2.
    Direction excitation_axis{kPi / 2, kPi / 2};
};

GaussianStokesModel kerr_squeezed_gaussian(const KerrSqueezingParams& params);

inline double db_to_variance(double db) { return std::pow(10.0, -db / 10.0); }
inline double variance_to_db(double variance) { return -10.0 * std::log10(variance); }

}  // namespace poltomo
