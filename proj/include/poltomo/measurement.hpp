#pragma once

// Simulated Stokes measurement: rotated POVMs, exact tomograms, seeded
// count sampling, Gaussian sideband histograms, angle scans and the
// symmetry completion of quarter-sphere scans.

#include "poltomo/states.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace poltomo {

enum class Coverage { full_sphere, quarter_sphere };

// How sphere weights are assigned along theta.
//   cell:           each node owns the band between neighbouring midpoints
//                   (works for any sorted theta list, poles included)
//   gauss_legendre: Gauss-Legendre nodes/weights in cos(theta)
enum class ThetaRule { cell, gauss_legendre };

// Product grid of sphere angles (theta, phi). Records are stored
// theta-major: index = i_theta * phi.size() + i_phi.
//
// These are angles of the analysis direction n itself. Physical wave-plate
// settings map onto them by constant factors (half-wave plate angle x4 for
// theta, quarter-wave plate angle x4 for phi), so the 0-45 deg / 0-22.5 deg
// scan of a lab setup is the theta in [0, pi], phi in [0, pi/2] quarter here.
struct AngleGrid {
    std::vector<double> theta;
    std::vector<double> phi;
    Coverage coverage = Coverage::full_sphere;
    ThetaRule rule = ThetaRule::cell;

    std::size_t size() const noexcept { return theta.size() * phi.size(); }
    std::size_t index(std::size_t i_theta, std::size_t i_phi) const noexcept {
        return i_theta * phi.size() + i_phi;
    }
    Direction direction(std::size_t flat) const {
        return {theta[flat / phi.size()], phi[flat % phi.size()]};
    }
    std::vector<Direction> directions() const;

    // Quadrature weights of a full-sphere grid; they sum to 4 pi.
    std::vector<double> sphere_weights() const;

    // Throws CoverageError on unsorted / out-of-range / too-short axes.
    void validate() const;

    // theta_i = i pi / (n_theta - 1) (poles included), phi at the midpoints of
    // n_phi equal cells of [0, pi/2).
    static AngleGrid quarter(int n_theta = 65, int n_phi = 64);
    // Same theta; phi at the midpoints of n_phi equal cells of [0, 2 pi).
    static AngleGrid full(int n_theta, int n_phi);
    // Gauss-Legendre in cos(theta) x uniform phi = 2 pi j / n_phi.
    static AngleGrid gauss_legendre(int n_theta, int n_phi);
};

// Gauss-Legendre nodes and weights on [-1, 1], nodes ascending.
void gauss_legendre_rule(int n, std::vector<double>& nodes, std::vector<double>& weights);

struct DiscreteTomogram {
    std::optional<SpinIndex> spin;  // absent for total tomograms
    Direction dir;
    std::map<int, double> values;   // 2m -> probability

    double total() const;
    double moment(int order) const;  // sum m^order w_m
};

// Histogram on equal-width bins [lo, hi).
struct HistogramTomogram {
    Direction dir;
    double lo = 0.0;
    double hi = 1.0;
    std::vector<std::uint64_t> counts;
    std::uint64_t total_samples = 0;
    std::uint64_t clipped = 0;          // samples folded into the edge bins
    double shot_noise_variance = 1.0;   // calibration reference

    std::size_t bins() const noexcept { return counts.size(); }
    double bin_width() const { return (hi - lo) / static_cast<double>(counts.size()); }
    double center(std::size_t i) const { return lo + (static_cast<double>(i) + 0.5) * bin_width(); }
    std::vector<double> edges() const;
};

struct BlockTomograms {
    SpinIndex spin{0};
    std::vector<DiscreteTomogram> tomograms;  // grid order
};

struct DiscreteTomogramSet {
    AngleGrid grid;
    std::vector<BlockTomograms> blocks;       // per-J data
    std::vector<DiscreteTomogram> totals;     // optional total tomograms, grid order
    std::map<std::string, std::string> metadata;
};

struct HistogramTomogramSet {
    AngleGrid grid;
    std::vector<HistogramTomogram> records;   // grid order
    Vec3 classical_mean = Vec3::Zero();       // Stokes units
    double photon_scale = 0.0;
    std::map<std::string, std::string> metadata;
};

// Pi^J_m(n) = R(n) |J,m><J,m| R(n)^dagger.
CMatrix povm_element(SpinIndex spin, int two_m, const Direction& dir);

// w^J_m(n) = Tr(rho_J Pi^J_m(n)); zero tomogram when the block is absent.
DiscreteTomogram exact_tomogram(const PolarizationState& state, const Direction& dir,
                                SpinIndex spin);
DiscreteTomogram exact_tomogram(const DensityBlock& block, const Direction& dir);
DiscreteTomogram exact_tomogram(const DensityBlock& block, const Direction& dir,
                                const SpinRotator& rotator);

// w_m(n) = sum over J >= |m| of w^J_m(n).
DiscreteTomogram total_tomogram(const PolarizationState& state, const Direction& dir);

// Per-J (and total) exact tomograms of every block on every grid direction.
DiscreteTomogramSet exact_scan(const PolarizationState& state, const AngleGrid& grid,
                               bool with_totals = false);

// Stream seed derived from a master seed; independent of scheduling.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);
inline constexpr const char* kGeneratorName = "mt19937_64/splitmix64-streams";

// Multinomial draw of n_samples outcomes over the m-values; one bin per
// m-value spaced by the smallest label gap.
HistogramTomogram sample_counts(const DiscreteTomogram& tomogram, std::uint64_t n_samples,
                                std::uint64_t seed);

// Relative frequencies of a sampled histogram as a tomogram over 2m,
// scaled to total `weight`.
DiscreteTomogram empirical_tomogram(const HistogramTomogram& hist, std::optional<SpinIndex> spin,
                                    double weight);

struct SidebandOptions {
    int bins = 2048;
    double range_sigmas = 6.0;
    double efficiency = 1.0;  // scalar detection loss; 1 = lossless
};

// AC-coupled photocurrent-difference histogram along dir, in shot-noise units:
// x ~ Normal(0, eta n^T Sigma n + 1 - eta), binned over +-range_sigmas sigma
// around the sample mean. The classical mean stays in the set metadata.
HistogramTomogram gaussian_sideband_tomogram(const GaussianStokesModel& model, const Direction& dir,
                                             std::uint64_t n_samples, std::uint64_t seed,
                                             const SidebandOptions& options = {});

HistogramTomogramSet sideband_scan(const GaussianStokesModel& model, const AngleGrid& grid,
                                   std::uint64_t n_samples, std::uint64_t master_seed,
                                   const SidebandOptions& options = {});

// State symmetry used to fill the phi quadrants a quarter scan does not reach.
//   mirror_y: w(x, y, z) = w(x, -y, z), i.e. phi -> -phi
//   mirror_x: w(x, y, z) = w(-x, y, z), i.e. phi -> pi - phi
enum class ReflectionRule { none, mirror_x, mirror_y };

// Completes a quarter-sphere scan using w_m(-n) = w_{-m}(n) and the
// reflection rule. Full-sphere input is returned unchanged.
HistogramTomogramSet symmetrize_tomograms(const HistogramTomogramSet& partial, ReflectionRule rule);
DiscreteTomogramSet symmetrize_tomograms(const DiscreteTomogramSet& partial, ReflectionRule rule);

HistogramTomogram mirror_record(const HistogramTomogram& h, const Direction& dir);
DiscreteTomogram mirror_record(const DiscreteTomogram& t, const Direction& dir);

std::string to_string(Coverage c);
std::string to_string(ThetaRule r);
std::string to_string(ReflectionRule r);
Coverage parse_coverage(const std::string& s);
ThetaRule parse_theta_rule(const std::string& s);
ReflectionRule parse_reflection_rule(const std::string& s);

}  // namespace poltomo
