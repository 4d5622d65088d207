#include "poltomo/tomography_radon.hpp"

#include "poltomo/error.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

namespace poltomo {

DensityProfile density_from_histogram(const HistogramTomogram& hist) {
    if (hist.total_samples == 0) throw DomainError("histogram has no samples");
    DensityProfile p;
    p.step = hist.bin_width();
    p.origin = hist.center(0);
    p.values.resize(hist.bins());
    const double norm = 1.0 / (static_cast<double>(hist.total_samples) * p.step);
    for (std::size_t i = 0; i < hist.bins(); ++i) p.values[i] = static_cast<double>(hist.counts[i]) * norm;
    return p;
}

FilteredTomogram filter_profile(const Direction& dir, const DensityProfile& density,
                                double smoothing_width) {
    const std::size_t n = density.values.size();
    if (n < 5) throw DomainError("filter_tomogram: need at least 5 bins, got " + std::to_string(n));
    if (!(density.step > 0.0)) throw DomainError("filter_tomogram: abscissa step must be positive");
    if (!(smoothing_width >= 0.0) || !std::isfinite(smoothing_width))
        throw DomainError("filter_tomogram: smoothing width must be non-negative");

    std::vector<double> f = density.values;
    if (smoothing_width > 0.0) {
        const double ratio = smoothing_width / density.step;
        const auto half = static_cast<std::ptrdiff_t>(std::ceil(5.0 * ratio));
        std::vector<double> kernel(static_cast<std::size_t>(2 * half + 1));
        double ksum = 0.0;
        for (std::ptrdiff_t j = -half; j <= half; ++j) {
            const double u = static_cast<double>(j) / ratio;
            ksum += kernel[static_cast<std::size_t>(j + half)] = std::exp(-0.5 * u * u);
        }
        for (auto& k : kernel) k /= ksum;
        const auto len = static_cast<std::ptrdiff_t>(n);
        for (std::ptrdiff_t i = 0; i < len; ++i) {
            double acc = 0.0;
            const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, i - half);
            const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(len - 1, i + half);
            for (std::ptrdiff_t s = lo; s <= hi; ++s)
                acc += kernel[static_cast<std::size_t>(i - s + half)] * density.values[s];
            f[i] = acc;
        }
    }

    FilteredTomogram out{dir, density.origin, density.step, std::vector<double>(n), smoothing_width};
    const double inv_h2 = 1.0 / (density.step * density.step);
    auto& d2 = out.second_derivative;
    for (std::size_t i = 1; i + 1 < n; ++i) d2[i] = (f[i - 1] - 2.0 * f[i] + f[i + 1]) * inv_h2;
    d2[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) * inv_h2;
    d2[n - 1] = (2.0 * f[n - 1] - 5.0 * f[n - 2] + 4.0 * f[n - 3] - f[n - 4]) * inv_h2;
    return out;
}

FilteredTomogram filter_tomogram(const HistogramTomogram& hist, double smoothing_width) {
    return filter_profile(hist.dir, density_from_histogram(hist), smoothing_width);
}

GridSpec GridSpec::centered(std::array<int, 3> dims, const Vec3& half_extent) {
    GridSpec g;
    g.dims = dims;
    for (int a = 0; a < 3; ++a) {
        if (dims[a] < 2) throw DomainError("grid: need at least 2 voxels per axis");
        g.spacing(a) = 2.0 * half_extent(a) / (dims[a] - 1);
        g.origin(a) = -half_extent(a);
    }
    g.validate();
    return g;
}

void GridSpec::validate() const {
    for (int a = 0; a < 3; ++a) {
        if (dims[a] < 2) throw DomainError("grid: need at least 2 voxels per axis");
        if (!(spacing(a) > 0.0)) throw DomainError("grid: spacing must be positive");
    }
}

namespace {

// Backprojection line: f'' pre-multiplied by prefactor and sphere weight,
// stored as (value, slope) pairs so one interpolation reads one cache line.
struct ProjectionLine {
    Vec3 n;
    double origin = 0.0;
    double inv_step = 1.0;
    std::size_t samples = 0;
    int multiplicity = 1;  // 2 when an antipodal record was merged in
    std::vector<double> table;  // 2 * samples: p[i], p[i+1] - p[i]
};

bool mirrored_abscissa(const FilteredTomogram& a, const FilteredTomogram& b) {
    const std::size_t n = a.second_derivative.size();
    if (b.second_derivative.size() != n) return false;
    if (std::abs(a.step - b.step) > 1e-12 * a.step) return false;
    const double far = a.origin + static_cast<double>(n - 1) * a.step;
    return std::abs(b.origin + far) <= 1e-9 * a.step;
}

// Merges each direction with its antipode when both sampled f'' share a
// mirrored abscissa: w f''_n(s) + w' f''_{-n}(-s) is then one table.
std::vector<ProjectionLine> build_lines(std::span<const FilteredTomogram> filtered,
                                        std::span<const double> weights, double prefactor) {
    const std::size_t count = filtered.size();
    std::map<std::array<long long, 3>, std::vector<std::size_t>> by_dir;
    auto key = [](const Vec3& v) {
        return std::array<long long, 3>{std::llround(v.x() * 1e9), std::llround(v.y() * 1e9),
                                        std::llround(v.z() * 1e9)};
    };
    for (std::size_t d = 0; d < count; ++d) by_dir[key(filtered[d].dir.unit())].push_back(d);

    std::vector<char> used(count, 0);
    std::vector<ProjectionLine> lines;
    lines.reserve(count);
    for (std::size_t d = 0; d < count; ++d) {
        if (used[d]) continue;
        used[d] = 1;
        const auto& f = filtered[d];
        const std::size_t n = f.second_derivative.size();
        if (n < 2) throw DomainError("backproject: filtered tomogram too short");
        std::vector<double> p(n);
        for (std::size_t i = 0; i < n; ++i) p[i] = prefactor * weights[d] * f.second_derivative[i];

        bool merged = false;
        auto it = by_dir.find(key(-f.dir.unit()));
        if (it != by_dir.end()) {
            for (const std::size_t e : it->second) {
                if (used[e] || !mirrored_abscissa(f, filtered[e])) continue;
                used[e] = 1;
                const auto& g = filtered[e].second_derivative;
                for (std::size_t i = 0; i < n; ++i) p[i] += prefactor * weights[e] * g[n - 1 - i];
                merged = true;
                break;
            }
        }

        ProjectionLine l;
        l.n = f.dir.unit();
        l.origin = f.origin;
        l.inv_step = 1.0 / f.step;
        l.samples = n;
        l.multiplicity = merged ? 2 : 1;
        l.table.resize(2 * n);
        for (std::size_t i = 0; i < n; ++i) {
            l.table[2 * i] = p[i];
            l.table[2 * i + 1] = i + 1 < n ? p[i + 1] - p[i] : 0.0;
        }
        lines.push_back(std::move(l));
    }
    return lines;
}

}  // namespace

BackprojectionResult backproject(std::span<const FilteredTomogram> filtered,
                                 std::span<const double> sphere_weights, const GridSpec& grid,
                                 const BackprojectionOptions& options) {
    grid.validate();
    if (filtered.size() != sphere_weights.size())
        throw DomainError("backproject: weight count does not match the filtered tomograms");
    if (filtered.empty()) throw CoverageError("backproject: no directions");

    const double prefactor = -options.scale / (8.0 * kPi * kPi);
    const std::vector<ProjectionLine> lines = build_lines(filtered, sphere_weights, prefactor);

    const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];
    BackprojectionResult out;
    out.volume.spec = grid;
    out.volume.values.assign(grid.voxels(), 0.0);
    double* vol = out.volume.values.data();
    long long outside = 0;

#pragma omp parallel for schedule(dynamic) reduction(+ : outside)
    for (int ix = 0; ix < nx; ++ix) {
        const double x = grid.origin.x() + ix * grid.spacing.x();
        for (const ProjectionLine& l : lines) {
            const double* table = l.table.data();
            const auto last = static_cast<double>(l.samples - 1);
            const auto top = static_cast<long>(l.samples) - 1;
            // u(k) = (r.n - origin) / step along a z-line
            const double du = grid.spacing.z() * l.n.z() * l.inv_step;
            for (int iy = 0; iy < ny; ++iy) {
                const double y = grid.origin.y() + iy * grid.spacing.y();
                const double u0 =
                    (x * l.n.x() + y * l.n.y() + grid.origin.z() * l.n.z() - l.origin) * l.inv_step;
                int k_lo = 0, k_hi = nz - 1;
                if (du == 0.0) {
                    if (u0 < 0.0 || u0 > last) k_lo = 1, k_hi = 0;
                } else {
                    double a = -u0 / du, b = (last - u0) / du;
                    if (a > b) std::swap(a, b);
                    a = std::clamp(a, -1.0, double(nz));
                    b = std::clamp(b, -1.0, double(nz));
                    k_lo = std::max(0, static_cast<int>(std::ceil(a)));
                    k_hi = std::min(nz - 1, static_cast<int>(std::floor(b)));
                }
                if (k_hi < k_lo) {
                    outside += static_cast<long long>(l.multiplicity) * nz;
                    continue;
                }
                outside += static_cast<long long>(l.multiplicity) * (nz - (k_hi - k_lo + 1));
                double* row = vol + (static_cast<std::size_t>(ix) * ny + iy) * nz;
                for (int k = k_lo; k <= k_hi; ++k) {
                    const double u = u0 + k * du;
                    // u lies in [0, last] up to rounding; truncation keeps i in range.
                    long i = static_cast<long>(u);
                    i = i > top ? top : i;
                    const double* cell = table + 2 * i;
                    row[k] += cell[0] + (u - static_cast<double>(i)) * cell[1];
                }
            }
        }
    }
    out.out_of_support_fraction =
        static_cast<double>(outside) / (static_cast<double>(grid.voxels()) * filtered.size());
    return out;
}

VolumeMoments volume_moments(const VolumeGrid& grid) {
    const auto& s = grid.spec;
    double mass = 0.0, positive = 0.0, negative = 0.0;
    Vec3 first = Vec3::Zero();
    Mat3 second = Mat3::Zero();
    for (int ix = 0; ix < s.dims[0]; ++ix)
        for (int iy = 0; iy < s.dims[1]; ++iy)
            for (int iz = 0; iz < s.dims[2]; ++iz) {
                const double v = grid.at(ix, iy, iz);
                const Vec3 r = s.position(ix, iy, iz);
                mass += v;
                (v >= 0.0 ? positive : negative) += v;
                first += v * r;
                second += v * r * r.transpose();
            }
    if (!(mass > 0.0)) throw NumericalError("volume_moments: degenerate volume (non-positive mass)");
    VolumeMoments m;
    m.mass = mass * s.voxel_volume();
    m.mean = first / mass;
    m.covariance = second / mass - m.mean * m.mean.transpose();
    m.negative_mass_fraction = positive > 0.0 ? -negative / positive : 0.0;
    return m;
}

PrincipalAxes principal_axes(const Mat3& covariance) {
    Eigen::SelfAdjointEigenSolver<Mat3> solver(0.5 * (covariance + covariance.transpose()));
    return {solver.eigenvalues(), solver.eigenvectors()};
}

IsocontourStats isocontour_level_stats(const VolumeGrid& grid, double level_fraction) {
    if (!(level_fraction > 0.0 && level_fraction < 1.0))
        throw DomainError("isocontour_level_stats: level fraction must lie in (0, 1)");
    const double peak = *std::max_element(grid.values.begin(), grid.values.end());
    if (!(peak > 0.0)) throw NumericalError("isocontour_level_stats: empty level set");
    const double level = level_fraction * peak;

    const auto& s = grid.spec;
    std::size_t count = 0;
    Vec3 first = Vec3::Zero();
    Mat3 second = Mat3::Zero();
    for (int ix = 0; ix < s.dims[0]; ++ix)
        for (int iy = 0; iy < s.dims[1]; ++iy)
            for (int iz = 0; iz < s.dims[2]; ++iz) {
                if (grid.at(ix, iy, iz) < level) continue;
                const Vec3 r = s.position(ix, iy, iz);
                ++count;
                first += r;
                second += r * r.transpose();
            }
    if (count == 0) throw NumericalError("isocontour_level_stats: empty level set");

    IsocontourStats out;
    out.voxel_count = count;
    out.center = first / static_cast<double>(count);
    Mat3 cov = second / static_cast<double>(count) - out.center * out.center.transpose();
    cov.diagonal() += s.spacing.cwiseProduct(s.spacing) / 12.0;
    const PrincipalAxes pa = principal_axes(cov);
    out.half_widths = (5.0 * pa.variances.cwiseMax(0.0)).cwiseSqrt();
    out.axes = pa.axes;
    return out;
}

double TangentSphereMap::integral() const {
    double total = 0.0;
    for (int i = 0; i < n_alpha; ++i)
        for (int j = 0; j < n_beta; ++j) {
            const double ta = std::tan(alpha(i)), tb = std::tan(beta(j));
            const double jac = (1.0 + ta * ta) * (1.0 + tb * tb) /
                               std::pow(1.0 + ta * ta + tb * tb, 1.5);
            total += values[static_cast<std::size_t>(i) * n_beta + j] * jac * step_alpha() * step_beta();
        }
    return total;
}

TangentSphereMap sphere_sum_distribution(const VolumeGrid& grid, const TangentGridSpec& spec) {
    const double mean_len = grid.classical_mean.norm();
    if (!(mean_len > 0.0))
        throw DomainError("sphere_sum_distribution: zero classical mean has no zoom frame");
    if (spec.n_alpha < 1 || spec.n_beta < 1) throw DomainError("sphere_sum_distribution: empty map");
    const double unit = std::sqrt(0.25 * grid.photon_scale);
    if (!(unit > 0.0)) throw DomainError("sphere_sum_distribution: photon scale must be positive");

    TangentSphereMap map;
    map.center = grid.classical_mean / mean_len;
    int least = 0;
    map.center.cwiseAbs().minCoeff(&least);
    Vec3 ref = Vec3::Zero();
    ref(least) = 1.0;
    map.e1 = (ref - ref.dot(map.center) * map.center).normalized();
    map.e2 = map.e1.cross(map.center);
    map.n_alpha = spec.n_alpha;
    map.n_beta = spec.n_beta;
    map.half_range = spec.half_range;
    const auto& s = grid.spec;
    if (map.half_range <= 0.0) {
        const Vec3 far = s.origin.cwiseAbs().cwiseMax(
            (s.origin + s.spacing.cwiseProduct(Vec3(s.dims[0] - 1, s.dims[1] - 1, s.dims[2] - 1))).cwiseAbs());
        map.half_range = far.maxCoeff() * unit / mean_len;
    }
    map.values.assign(static_cast<std::size_t>(spec.n_alpha) * spec.n_beta, 0.0);

    double positive = 0.0, negative = 0.0, in_frame = 0.0, all = 0.0;
    const double inv_da = 1.0 / map.step_alpha(), inv_db = 1.0 / map.step_beta();
    for (int ix = 0; ix < s.dims[0]; ++ix)
        for (int iy = 0; iy < s.dims[1]; ++iy)
            for (int iz = 0; iz < s.dims[2]; ++iz) {
                const double v = grid.at(ix, iy, iz);
                all += v;
                (v >= 0.0 ? positive : negative) += v;
                const Vec3 stokes = grid.classical_mean + unit * s.position(ix, iy, iz);
                const double along = stokes.dot(map.center);
                const double a = std::atan2(stokes.dot(map.e1), along);
                const double b = std::atan2(stokes.dot(map.e2), along);
                const auto i = static_cast<long>(std::floor((a + map.half_range) * inv_da));
                const auto j = static_cast<long>(std::floor((b + map.half_range) * inv_db));
                if (i < 0 || j < 0 || i >= spec.n_alpha || j >= spec.n_beta) continue;
                map.values[static_cast<std::size_t>(i) * spec.n_beta + j] += v;
                in_frame += v;
            }
    map.negative_mass_fraction = positive > 0.0 ? -negative / positive : 0.0;
    map.out_of_frame_fraction = all != 0.0 ? 1.0 - in_frame / all : 0.0;

    // Convert bin masses to a density per steradian, then normalize.
    for (int i = 0; i < map.n_alpha; ++i)
        for (int j = 0; j < map.n_beta; ++j) {
            const double ta = std::tan(map.alpha(i)), tb = std::tan(map.beta(j));
            const double jac = (1.0 + ta * ta) * (1.0 + tb * tb) /
                               std::pow(1.0 + ta * ta + tb * tb, 1.5);
            map.values[static_cast<std::size_t>(i) * map.n_beta + j] /=
                jac * map.step_alpha() * map.step_beta();
        }
    const double total = map.integral();
    if (!(std::abs(total) > 0.0))
        throw NumericalError("sphere_sum_distribution: no mass inside the zoom frame");
    for (auto& v : map.values) v /= total;
    return map;
}

Mat3 projection_covariance(const HistogramTomogramSet& set) {
    if (set.records.size() < 6) throw CoverageError("projection_covariance: need at least 6 directions");
    Eigen::MatrixXd a(set.records.size(), 6);
    Eigen::VectorXd b(set.records.size());
    for (std::size_t i = 0; i < set.records.size(); ++i) {
        const auto& h = set.records[i];
        const Vec3 n = h.dir.unit();
        double total = 0.0, s1 = 0.0, s2 = 0.0;
        for (std::size_t k = 0; k < h.bins(); ++k) {
            const double c = static_cast<double>(h.counts[k]), x = h.center(k);
            total += c;
            s1 += c * x;
            s2 += c * x * x;
        }
        if (!(total > 0.0)) throw NumericalError("projection_covariance: empty histogram");
        const double mean = s1 / total;
        const double w = h.bin_width();
        b(i) = s2 / total - mean * mean - w * w / 12.0;
        a.row(i) << n.x() * n.x(), n.y() * n.y(), n.z() * n.z(), 2 * n.x() * n.y(), 2 * n.x() * n.z(),
            2 * n.y() * n.z();
    }
    const Eigen::VectorXd c = a.colPivHouseholderQr().solve(b);
    Mat3 out;
    out << c(0), c(3), c(4), c(3), c(1), c(5), c(4), c(5), c(2);
    return out;
}

BackprojectionResult reconstruct_radon(const HistogramTomogramSet& full, const RadonOptions& options) {
    if (full.grid.coverage != Coverage::full_sphere)
        throw CoverageError("reconstruct_radon: needs full-sphere data (run symmetrize first)");
    if (full.records.size() != full.grid.size())
        throw CoverageError("reconstruct_radon: record count does not match the grid");
    const auto weights = full.grid.sphere_weights();
    std::vector<FilteredTomogram> filtered(full.records.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(filtered.size()); ++i)
        filtered[i] = filter_tomogram(full.records[i], options.smoothing_width);
    BackprojectionResult r = backproject(filtered, weights, options.grid, options.backprojection);
    r.volume.classical_mean = full.classical_mean;
    r.volume.photon_scale = full.photon_scale;
    return r;
}

DensityProfile gaussian_profile(double mean, double variance, double half_width_sigmas, int points) {
    if (!(variance > 0.0)) throw NumericalError("gaussian_profile: variance must be positive");
    if (points < 5) throw DomainError("gaussian_profile: need at least 5 points");
    const double sigma = std::sqrt(variance);
    DensityProfile p;
    p.step = 2.0 * half_width_sigmas * sigma / (points - 1);
    p.origin = mean - half_width_sigmas * sigma;
    p.values.resize(static_cast<std::size_t>(points));
    const double norm = 1.0 / std::sqrt(2.0 * kPi * variance);
    for (int i = 0; i < points; ++i) {
        const double u = (p.abscissa(i) - mean) / sigma;
        p.values[i] = norm * std::exp(-0.5 * u * u);
    }
    return p;
}

BackprojectionResult reconstruct_gaussian_phantom(const Vec3& mean, const Mat3& covariance,
                                                  const AngleGrid& grid, const RadonOptions& options,
                                                  int points) {
    const auto weights = grid.sphere_weights();
    std::vector<FilteredTomogram> filtered(grid.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(grid.size()); ++i) {
        const Direction dir = grid.direction(i);
        const Vec3& n = dir.unit();
        filtered[i] = filter_profile(
            dir, gaussian_profile(n.dot(mean), n.dot(covariance * n), 8.0, points),
            options.smoothing_width);
    }
    return backproject(filtered, weights, options.grid, options.backprojection);
}

double calibrate_backprojection_scale(const AngleGrid& grid, const RadonOptions& options) {
    RadonOptions unit = options;
    unit.backprojection.scale = 1.0;
    const auto r = reconstruct_gaussian_phantom(Vec3::Zero(), Mat3::Identity(), grid, unit);
    const double mass = volume_moments(r.volume).mass;
    return 1.0 / mass;
}

Eigen::MatrixXd volume_slice(const VolumeGrid& grid, int axis, int at) {
    const auto& d = grid.spec.dims;
    if (axis < 0 || axis > 2) throw DomainError("volume_slice: axis must be 0, 1 or 2");
    if (at < 0 || at >= d[axis]) throw DomainError("volume_slice: index outside the grid");
    const int a = axis == 0 ? 1 : 0;
    const int b = axis == 2 ? 1 : 2;
    Eigen::MatrixXd out(d[a], d[b]);
    for (int i = 0; i < d[a]; ++i)
        for (int j = 0; j < d[b]; ++j) {
            int idx[3];
            idx[axis] = at;
            idx[a] = i;
            idx[b] = j;
            out(i, j) = grid.at(idx[0], idx[1], idx[2]);
        }
    return out;
}

}  // namespace poltomo
