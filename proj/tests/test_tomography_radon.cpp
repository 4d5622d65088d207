#include "poltomo/error.hpp"
#include "poltomo/pipeline.hpp"
#include "poltomo/tomography_radon.hpp"

#include <doctest.h>

#include <cmath>

using namespace poltomo;

namespace {

VolumeGrid gaussian_volume(const GridSpec& spec, const Vec3& mean, const Mat3& cov) {
    VolumeGrid g;
    g.spec = spec;
    g.values.resize(spec.voxels());
    const Mat3 inv = cov.inverse();
    const double norm = 1.0 / std::sqrt(std::pow(2 * kPi, 3) * cov.determinant());
    for (int i = 0; i < spec.dims[0]; ++i)
        for (int j = 0; j < spec.dims[1]; ++j)
            for (int k = 0; k < spec.dims[2]; ++k) {
                const Vec3 d = spec.position(i, j, k) - mean;
                g.values[g.index(i, j, k)] = norm * std::exp(-0.5 * d.dot(inv * d));
            }
    return g;
}

FilteredTomogram flat_filtered(const Direction& dir, double lo, double hi, int n) {
    FilteredTomogram f;
    f.dir = dir;
    f.origin = lo;
    f.step = (hi - lo) / (n - 1);
    f.second_derivative.assign(n, 1.0);
    return f;
}

}  // namespace

TEST_CASE("second derivative of an analytic Gaussian") {
    const auto p = gaussian_profile(0.0, 1.0, 8.0, 1601);  // bin width 0.01
    REQUIRE(p.step == doctest::Approx(0.01));
    const auto f = filter_profile(Direction::north_pole(), p, 0.0);
    REQUIRE(f.second_derivative.size() == p.values.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < p.values.size(); ++i) {
        const double x = p.abscissa(i);
        const double want = (x * x - 1.0) * p.values[i];
        worst = std::max(worst, std::abs(f.second_derivative[i] - want));
    }
    CHECK(worst < 1e-3);
}

TEST_CASE("filter limits and errors") {
    DensityProfile flat{-1.0, 0.1, std::vector<double>(21, 0.5)};
    const auto f = filter_profile(Direction::north_pole(), flat, 0.0);
    for (std::size_t i = 1; i + 1 < f.second_derivative.size(); ++i)
        CHECK(std::abs(f.second_derivative[i]) < 1e-12);

    const auto g = gaussian_profile(0.0, 1.0, 8.0, 801);
    const auto wide = filter_profile(Direction::north_pole(), g, 1e3);
    double peak = 0.0;
    for (double v : wide.second_derivative) peak = std::max(peak, std::abs(v));
    CHECK(peak < 1e-6);

    DensityProfile tiny{0.0, 0.1, std::vector<double>(4, 1.0)};
    CHECK_THROWS_AS(filter_profile(Direction::north_pole(), tiny, 0.0), DomainError);
    CHECK_THROWS_AS(filter_profile(Direction::north_pole(), flat, -0.1), DomainError);

    HistogramTomogram empty;
    empty.counts.assign(10, 0);
    CHECK_THROWS_AS(density_from_histogram(empty), DomainError);
}

TEST_CASE("histogram density normalization") {
    HistogramTomogram h;
    h.lo = -1.0;
    h.hi = 1.0;
    h.counts = {1, 2, 3, 4, 0};
    h.total_samples = 10;
    const auto d = density_from_histogram(h);
    CHECK(d.step == doctest::Approx(0.4));
    CHECK(d.origin == doctest::Approx(-0.8));
    double integral = 0.0;
    for (double v : d.values) integral += v * d.step;
    CHECK(integral == doctest::Approx(1.0));
}

TEST_CASE("volume moments of an analytic Gaussian") {
    Mat3 cov;
    cov << 0.5, 0.1, 0.0, 0.1, 0.8, -0.2, 0.0, -0.2, 1.2;
    const Vec3 mean(0.3, -0.2, 0.1);
    const auto g = gaussian_volume(GridSpec::centered({81, 81, 81}, Vec3::Constant(6.0)), mean, cov);
    const auto m = volume_moments(g);
    CHECK(m.mass == doctest::Approx(1.0).epsilon(1e-3));
    CHECK((m.mean - mean).norm() < 1e-2);
    CHECK((m.covariance - cov).cwiseAbs().maxCoeff() < 1e-2);
    CHECK(m.negative_mass_fraction == 0.0);

    const auto sym = gaussian_volume(GridSpec::centered({21, 21, 21}, Vec3::Constant(3.0)), Vec3::Zero(),
                                     Mat3::Identity());
    CHECK(volume_moments(sym).mean.norm() < 1e-12);

    VolumeGrid neg = sym;
    for (auto& v : neg.values) v = -v;
    CHECK_THROWS_AS(volume_moments(neg), NumericalError);
}

TEST_CASE("isocontour half widths") {
    const auto spec = GridSpec::centered({121, 121, 121}, Vec3::Constant(4.0));
    const auto unit = gaussian_volume(spec, Vec3::Zero(), Mat3::Identity());
    const auto s = isocontour_level_stats(unit, 0.5);
    const double hwhm = std::sqrt(2 * std::log(2.0));
    for (int a = 0; a < 3; ++a) CHECK(s.half_widths(a) == doctest::Approx(hwhm).epsilon(0.02));

    const auto scaled = gaussian_volume(spec, Vec3::Zero(), Mat3::Identity() * 2.25);
    const auto t = isocontour_level_stats(scaled, 0.5);
    for (int a = 0; a < 3; ++a) CHECK(t.half_widths(a) == doctest::Approx(1.5 * hwhm).epsilon(0.02));

    // 6.2 dB squeezed axis against a coherent one.
    const Mat3 sq = Vec3(db_to_variance(6.2), 1.0, 1.0).asDiagonal();
    const auto u = isocontour_level_stats(gaussian_volume(spec, Vec3::Zero(), sq), 0.5);
    CHECK(u.half_widths(0) / s.half_widths(0) == doctest::Approx(std::pow(10.0, -0.31)).epsilon(0.05));
    CHECK(std::abs(u.axes.col(0).x()) == doctest::Approx(1.0).epsilon(1e-6));

    CHECK_THROWS_AS(isocontour_level_stats(unit, 0.0), DomainError);
    CHECK_THROWS_AS(isocontour_level_stats(unit, 1.0), DomainError);
}

TEST_CASE("slices") {
    const auto g = gaussian_volume(GridSpec::centered({11, 13, 15}, Vec3::Constant(2.0)), Vec3::Zero(),
                                   Mat3::Identity());
    const auto xy = volume_slice(g, 2, 7);
    CHECK(xy.rows() == 11);
    CHECK(xy.cols() == 13);
    CHECK(xy(5, 6) == doctest::Approx(g.at(5, 6, 7)));
    CHECK(xy(0, 6) == doctest::Approx(xy(10, 6)));
    const auto yz = volume_slice(g, 0, 5);
    CHECK(yz.rows() == 13);
    CHECK(yz.cols() == 15);
    CHECK_THROWS_AS(volume_slice(g, 3, 0), DomainError);
    CHECK_THROWS_AS(volume_slice(g, 0, 11), DomainError);
}

TEST_CASE("isotropic phantom reconstructs the unit Gaussian") {
    RadonOptions opt;
    // 1 sigma ball at 0.05 spacing.
    opt.grid = GridSpec::centered({41, 41, 41}, Vec3::Constant(1.0));
    const auto dirs = AngleGrid::full(65, 256);
    const auto r = reconstruct_gaussian_phantom(Vec3::Zero(), Mat3::Identity(), dirs, opt);
    const auto truth = gaussian_volume(opt.grid, Vec3::Zero(), Mat3::Identity());
    double worst = 0.0;
    for (int i = 0; i < 41; ++i)
        for (int j = 0; j < 41; ++j)
            for (int k = 0; k < 41; ++k) {
                if (opt.grid.position(i, j, k).norm() > 1.0) continue;
                const double t = truth.at(i, j, k);
                worst = std::max(worst, std::abs(r.volume.at(i, j, k) - t) / t);
            }
    CHECK(worst < 0.03);
    CHECK(r.out_of_support_fraction == 0.0);
}

TEST_CASE("anisotropic phantom, mass and translation") {
    RadonOptions opt;
    opt.grid = GridSpec::centered({61, 61, 61}, Vec3(2.5, 10.3, 5.0));
    const auto dirs = AngleGrid::full(33, 128);
    const Mat3 cov = Vec3(0.24, 4.2, 1.0).asDiagonal();
    const auto r = reconstruct_gaussian_phantom(Vec3::Zero(), cov, dirs, opt);
    const auto m = volume_moments(r.volume);
    CHECK(m.mass == doctest::Approx(1.0).epsilon(0.02));
    for (int a = 0; a < 3; ++a) CHECK(m.covariance(a, a) == doctest::Approx(cov(a, a)).epsilon(0.05));

    const Vec3 shift(0.0, 0.0, 0.5);
    const auto moved = reconstruct_gaussian_phantom(shift, cov, dirs, opt);
    const auto mm = volume_moments(moved.volume);
    CHECK((mm.mean - m.mean - shift).norm() < 1e-2);
}

TEST_CASE("calibration scale is close to one") {
    RadonOptions opt;
    opt.grid = GridSpec::centered({41, 41, 41}, Vec3::Constant(5.0));
    const double s = calibrate_backprojection_scale(AngleGrid::full(17, 32), opt);
    CHECK(s == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("backprojection is linear") {
    const auto dirs = AngleGrid::full(9, 16);
    const auto weights = dirs.sphere_weights();
    const auto grid = GridSpec::centered({15, 15, 15}, Vec3::Constant(3.0));
    std::vector<FilteredTomogram> fa, fb, fm;
    for (std::size_t i = 0; i < dirs.size(); ++i) {
        const auto d = dirs.direction(i);
        auto pa = gaussian_profile(0.0, 1.0, 6.0, 301);
        auto pb = gaussian_profile(0.0, 1.0, 6.0, 301);
        for (std::size_t k = 0; k < pb.values.size(); ++k)
            pb.values[k] *= 1.0 + 0.3 * std::sin(pb.abscissa(k) + i);
        DensityProfile pm = pa;
        for (std::size_t k = 0; k < pm.values.size(); ++k) pm.values[k] = 0.25 * pa.values[k] + 0.75 * pb.values[k];
        fa.push_back(filter_profile(d, pa, 0.1));
        fb.push_back(filter_profile(d, pb, 0.1));
        fm.push_back(filter_profile(d, pm, 0.1));
    }
    const auto ra = backproject(fa, weights, grid).volume.values;
    const auto rb = backproject(fb, weights, grid).volume.values;
    const auto rm = backproject(fm, weights, grid).volume.values;
    for (std::size_t v = 0; v < rm.size(); ++v)
        CHECK(std::abs(rm[v] - (0.25 * ra[v] + 0.75 * rb[v])) < 1e-8);
}

TEST_CASE("backprojection is identical across thread counts") {
    RadonOptions opt;
    opt.grid = GridSpec::centered({21, 21, 21}, Vec3::Constant(4.0));
    opt.smoothing_width = 0.1;
    const auto dirs = AngleGrid::full(9, 16);
    const Mat3 cov = Vec3(0.5, 1.0, 2.0).asDiagonal();
    configure_threads(1);
    const auto a = reconstruct_gaussian_phantom(Vec3::Zero(), cov, dirs, opt).volume.values;
    configure_threads(3);
    const auto b = reconstruct_gaussian_phantom(Vec3::Zero(), cov, dirs, opt).volume.values;
    configure_threads(std::nullopt);
    CHECK(a == b);
}

TEST_CASE("out-of-support projections are counted per direction") {
    // z samples at -2, -1, 0, 1, 2 against an abscissa covering [-1, 1].
    GridSpec grid;
    grid.dims = {2, 2, 5};
    grid.origin = Vec3(0.0, 0.0, -2.0);
    grid.spacing = Vec3::Constant(1.0);
    const std::vector<FilteredTomogram> one{flat_filtered(Direction::north_pole(), -1.0, 1.0, 9)};
    const std::vector<double> w1{4 * kPi};
    CHECK(backproject(one, w1, grid).out_of_support_fraction == doctest::Approx(0.4));

    // An antipodal pair on a mirrored abscissa is merged internally.
    const std::vector<FilteredTomogram> pair{flat_filtered(Direction::north_pole(), -1.0, 1.0, 9),
                                             flat_filtered(Direction(kPi, 0.0), -1.0, 1.0, 9)};
    const std::vector<double> w2{2 * kPi, 2 * kPi};
    const auto r = backproject(pair, w2, grid);
    CHECK(r.out_of_support_fraction == doctest::Approx(0.4));
    const auto s = backproject(one, w1, grid);
    for (std::size_t v = 0; v < r.volume.values.size(); ++v)
        CHECK(r.volume.values[v] == doctest::Approx(s.volume.values[v]));

    CHECK_THROWS_AS(backproject(one, w2, grid), DomainError);
    CHECK_THROWS_AS(backproject(std::vector<FilteredTomogram>{}, std::vector<double>{}, grid), CoverageError);
    GridSpec bad = grid;
    bad.dims = {1, 2, 5};
    CHECK_THROWS_AS(backproject(one, w1, bad), DomainError);
}

TEST_CASE("projection covariance from sideband histograms") {
    GaussianStokesModel model;
    model.covariance = Vec3(0.24, 4.2, 1.0).asDiagonal();
    model.covariance(0, 2) = model.covariance(2, 0) = 0.2;
    const auto set = sideband_scan(model, AngleGrid::full(9, 16), 200000, 7);
    const Mat3 c = projection_covariance(set);
    CHECK((c - model.covariance).cwiseAbs().maxCoeff() < 0.05);

    HistogramTomogramSet few;
    few.records.resize(5);
    CHECK_THROWS_AS(projection_covariance(few), CoverageError);
}

TEST_CASE("radon reconstruction from sampled histograms") {
    GaussianStokesModel model;
    const auto quarter = sideband_scan(model, AngleGrid::quarter(17, 16), 100000, 3);
    CHECK_THROWS_AS(reconstruct_radon(quarter, {}), CoverageError);
    const auto full = symmetrize_tomograms(quarter, ReflectionRule::mirror_y);
    RadonOptions opt;
    opt.smoothing_width = 0.2;
    opt.grid = GridSpec::centered({41, 41, 41}, Vec3::Constant(5.5));
    const auto r = reconstruct_radon(full, opt);
    const auto m = volume_moments(r.volume);
    for (int a = 0; a < 3; ++a)
        CHECK(m.covariance(a, a) - 0.04 == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("sphere-summed distribution") {
    VolumeGrid g = gaussian_volume(GridSpec::centered({41, 41, 41}, Vec3::Constant(5.0)), Vec3::Zero(),
                                   Mat3::Identity());
    CHECK_THROWS_AS(sphere_sum_distribution(g, {}), DomainError);

    g.photon_scale = 1e6;
    g.classical_mean = Vec3(0.0, 5e5, 0.0);
    TangentGridSpec spec;
    spec.n_alpha = 41;
    spec.n_beta = 41;
    const auto map = sphere_sum_distribution(g, spec);
    CHECK(map.integral() == doctest::Approx(1.0).epsilon(1e-3));
    CHECK((map.center - Vec3::UnitY()).norm() < 1e-12);
    // Isotropic peak at the mean direction.
    int best = 0;
    for (std::size_t i = 1; i < map.values.size(); ++i)
        if (map.values[i] > map.values[best]) best = static_cast<int>(i);
    CHECK(best / map.n_beta == 20);
    CHECK(best % map.n_beta == 20);
    CHECK(map.values[19 * 41 + 20] == doctest::Approx(map.values[20 * 41 + 19]).epsilon(0.02));
    CHECK(map.negative_mass_fraction == 0.0);

    TangentGridSpec empty;
    empty.n_alpha = 0;
    CHECK_THROWS_AS(sphere_sum_distribution(g, empty), DomainError);
}
