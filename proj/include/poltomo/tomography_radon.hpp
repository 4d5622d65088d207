#pragma once

// High-intensity reconstruction: sideband noise tomograms are treated as 1D
// marginals of a 3D quasidistribution over Stokes-fluctuation space and
// inverted by second-derivative filtering plus backprojection,
//
//   Q(r) = -(1 / 8 pi^2) int_{S^2} dn  f''_n(r . n).
//
// Coordinates are fluctuations about the classical mean, in shot-noise units.

#include "poltomo/measurement.hpp"
#include "poltomo/tomography_exact.hpp"

#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace poltomo {

// Samples on the uniform abscissa origin + i * step.
struct DensityProfile {
    double origin = 0.0;
    double step = 1.0;
    std::vector<double> values;

    double abscissa(std::size_t i) const { return origin + static_cast<double>(i) * step; }
};

struct FilteredTomogram {
    Direction dir;
    double origin = 0.0;
    double step = 1.0;
    std::vector<double> second_derivative;
    double smoothing_width = 0.0;

    double abscissa(std::size_t i) const { return origin + static_cast<double>(i) * step; }
};

// counts / (total * bin width) at the bin centres.
DensityProfile density_from_histogram(const HistogramTomogram& hist);

// Gaussian pre-smoothing (zero padded, width in abscissa units; 0 disables)
// followed by central second differences, one-sided at the ends.
FilteredTomogram filter_profile(const Direction& dir, const DensityProfile& density,
                                double smoothing_width);
FilteredTomogram filter_tomogram(const HistogramTomogram& hist, double smoothing_width);

struct GridSpec {
    std::array<int, 3> dims{201, 201, 201};
    Vec3 origin = Vec3::Constant(-6.0);
    Vec3 spacing = Vec3::Constant(0.06);

    // dims voxels per axis spanning [-half_extent, +half_extent].
    static GridSpec centered(std::array<int, 3> dims, const Vec3& half_extent);

    std::size_t voxels() const {
        return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    }
    double voxel_volume() const { return spacing.prod(); }
    Vec3 position(int ix, int iy, int iz) const {
        return origin + Vec3(ix * spacing.x(), iy * spacing.y(), iz * spacing.z());
    }
    void validate() const;
};

// Row-major with z fastest: index = (ix * Ny + iy) * Nz + iz.
struct VolumeGrid {
    GridSpec spec;
    std::vector<double> values;
    Vec3 classical_mean = Vec3::Zero();  // Stokes units, metadata only
    double photon_scale = 0.0;
    std::map<std::string, std::string> metadata;

    std::size_t index(int ix, int iy, int iz) const {
        return (static_cast<std::size_t>(ix) * spec.dims[1] + iy) * spec.dims[2] + iz;
    }
    double at(int ix, int iy, int iz) const { return values[index(ix, iy, iz)]; }
};

struct BackprojectionOptions {
    // Multiplies the -1/(8 pi^2) prefactor; see calibrate_backprojection_scale.
    double scale = 1.0;
};

struct BackprojectionResult {
    VolumeGrid volume;
    // Share of (voxel, direction) pairs whose projection r.n fell outside the
    // filtered abscissa and contributed zero.
    double out_of_support_fraction = 0.0;
};

// Sums w_n f''_n(r . n) with linear interpolation. Each voxel accumulates in
// the fixed direction order, so the volume is bit-identical for any thread count.
BackprojectionResult backproject(std::span<const FilteredTomogram> filtered,
                                 std::span<const double> sphere_weights, const GridSpec& grid,
                                 const BackprojectionOptions& options = {});

struct VolumeMoments {
    double mass = 0.0;
    Vec3 mean = Vec3::Zero();
    Mat3 covariance = Mat3::Zero();
    // Negative mass over positive mass (Radon artifacts).
    double negative_mass_fraction = 0.0;
};

VolumeMoments volume_moments(const VolumeGrid& grid);

// Eigen-decomposition of a covariance, eigenvalues ascending.
struct PrincipalAxes {
    Vec3 variances;
    Mat3 axes;  // columns
};
PrincipalAxes principal_axes(const Mat3& covariance);

struct IsocontourStats {
    Vec3 half_widths = Vec3::Zero();  // ascending, along the columns of axes
    Mat3 axes = Mat3::Identity();
    Vec3 center = Vec3::Zero();
    std::size_t voxel_count = 0;
};

// Voxels at or above level_fraction * max, treated as a solid ellipsoid:
// half-width = sqrt(5 lambda) for each eigenvalue lambda of the voxel-set
// covariance (with the h^2/12 cell correction).
IsocontourStats isocontour_level_stats(const VolumeGrid& grid, double level_fraction);

struct TangentGridSpec {
    int n_alpha = 101;
    int n_beta = 101;
    double half_range = 0.0;  // radians; 0 selects 6 shot-noise units mapped to angle
};

// Distribution over the unit Poincare sphere, on a gnomonic patch around the
// classical mean direction. alpha along e1, beta along e2.
struct TangentSphereMap {
    Vec3 center = Vec3::UnitZ();
    Vec3 e1 = Vec3::UnitX();
    Vec3 e2 = Vec3::UnitY();
    int n_alpha = 0;
    int n_beta = 0;
    double half_range = 0.0;
    std::vector<double> values;  // alpha-major, density per steradian
    double negative_mass_fraction = 0.0;
    double out_of_frame_fraction = 0.0;

    double step_alpha() const { return 2.0 * half_range / n_alpha; }
    double step_beta() const { return 2.0 * half_range / n_beta; }
    double alpha(int i) const { return -half_range + (i + 0.5) * step_alpha(); }
    double beta(int j) const { return -half_range + (j + 0.5) * step_beta(); }
    // Integral over the patch with exact gnomonic solid-angle cells.
    double integral() const;
};

// Sums Q over |S| (all J) for S = mean + shot_noise_unit * r and maps the
// result onto angles around the mean direction; unit integral over the patch.
TangentSphereMap sphere_sum_distribution(const VolumeGrid& grid, const TangentGridSpec& spec);

// ---------------------------------------------------------------- pipelines

struct RadonOptions {
    double smoothing_width = 0.0;
    GridSpec grid;
    BackprojectionOptions backprojection;
};

// Least-squares fit of var_n = n^T C n to the histogram variances (bin
// centres with the h^2/12 grouping correction). Cheap second-moment estimate
// used to size the grid and as a cross-check.
Mat3 projection_covariance(const HistogramTomogramSet& set);

// Filters every record of a full-sphere histogram set and backprojects it.
BackprojectionResult reconstruct_radon(const HistogramTomogramSet& full, const RadonOptions& options);

// Gaussian density with the given mean/variance on `points` samples over
// mean +- half_width_sigmas sigma.
DensityProfile gaussian_profile(double mean, double variance, double half_width_sigmas = 8.0,
                                int points = 2048);

// Noise-free reconstruction of the 3D Gaussian phantom N(mean, covariance)
// from its exact marginals on a full-sphere grid.
BackprojectionResult reconstruct_gaussian_phantom(const Vec3& mean, const Mat3& covariance,
                                                  const AngleGrid& grid, const RadonOptions& options,
                                                  int points = 2048);

// Scale that makes the isotropic unit Gaussian phantom reconstruct with unit
// mass on this grid/direction set.
double calibrate_backprojection_scale(const AngleGrid& grid, const RadonOptions& options);

// 2D slice through index `at` orthogonal to `axis` (0 = x, 1 = y, 2 = z);
// rows follow the lower remaining axis.
Eigen::MatrixXd volume_slice(const VolumeGrid& grid, int axis, int at);

}  // namespace poltomo
