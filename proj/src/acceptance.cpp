#include "poltomo/acceptance.hpp"

#include "poltomo/error.hpp"
#include "poltomo/pipeline.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <random>

namespace poltomo::acceptance {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

CMatrix random_density(SpinIndex spin, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    CMatrix a(spin.dim(), spin.dim());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = cplx(g(rng), g(rng));
    CMatrix rho = a * a.adjoint();
    return rho / rho.trace();
}

Direction random_direction(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    return {std::acos(1.0 - 2.0 * u(rng)), 2.0 * kPi * u(rng)};
}

double max_abs(const CMatrix& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

// ---------------------------------------------------------------- 1
void algebra(CriterionResult& r) {
    std::mt19937_64 rng(11);
    double worst = 0.0;
    const cplx i(0.0, 1.0);
    for (int tj = 1; tj <= 20; ++tj) {
        const SpinIndex spin(tj);
        const auto am = build_angular_momentum(spin);
        const CMatrix id = CMatrix::Identity(spin.dim(), spin.dim());
        worst = std::max(worst, max_abs(am.j1 * am.j2 - am.j2 * am.j1 - i * am.j3));
        worst = std::max(worst, max_abs(am.j2 * am.j3 - am.j3 * am.j2 - i * am.j1));
        worst = std::max(worst, max_abs(am.j3 * am.j1 - am.j1 * am.j3 - i * am.j2));
        const double j = spin.j();
        worst = std::max(worst, max_abs(am.j1 * am.j1 + am.j2 * am.j2 + am.j3 * am.j3 - j * (j + 1) * id));
        const SpinRotator rot(spin);
        for (int k = 0; k < 8; ++k) {
            const Direction d = random_direction(rng);
            const CMatrix u = rot.rotation(d);
            worst = std::max(worst, max_abs(u * u.adjoint() - id));
            CMatrix sum = CMatrix::Zero(spin.dim(), spin.dim());
            for (int m = 0; m < spin.dim(); ++m) sum += povm_element(spin, spin.two_m(m), d);
            worst = std::max(worst, max_abs(sum - id));
        }
    }
    r.passed = worst < 1e-10;
    r.detail = "max deviation " + fmt("%.2e", worst) + " over 2J=1..20 (limit 1e-10, < 10 s)";
}

// ---------------------------------------------------------------- 2
void roundtrip(CriterionResult& r) {
    std::mt19937_64 rng(22);
    double worst = 0.0;
    int failures = 0, cases = 0;
    for (int tj = 1; tj <= 12; ++tj) {
        const SpinIndex spin(tj);
        const auto scheme = QuadratureScheme::for_spin(spin);
        const SpinRotator rot(spin);
        for (int k = 0; k < 50; ++k) {
            const DensityBlock block{spin, random_density(spin, rng)};
            std::vector<DiscreteTomogram> tomos;
            tomos.reserve(scheme.sphere_nodes.size());
            for (const auto& d : scheme.sphere_nodes) tomos.push_back(exact_tomogram(block, d, rot));
            const double err = (reconstruct_block(tomos, scheme).block.matrix - block.matrix).norm();
            worst = std::max(worst, err);
            failures += err >= 1e-8;
            ++cases;
        }
    }
    r.passed = failures == 0;
    r.detail = std::to_string(cases) + " blocks, worst Frobenius error " + fmt("%.2e", worst) +
               " (limit 1e-8), " + std::to_string(failures) + " failures";
}

// ---------------------------------------------------------------- 3
void characteristic(CriterionResult& r) {
    std::mt19937_64 rng(33);
    double worst_ok = 0.0, weakest_failure = 1e300;
    for (int tj = 1; tj <= 8; ++tj) {
        const SpinIndex spin(tj);
        for (int k = 0; k < 5; ++k) {
            const DensityBlock block{spin, random_density(spin, rng)};
            const Direction d = random_direction(rng);
            for (int n = tj + 1; n <= tj + 4; ++n) worst_ok = std::max(worst_ok, characteristic_check(block, d, n));
            weakest_failure = std::min(weakest_failure, characteristic_check(block, d, tj));
        }
    }
    r.passed = worst_ok < 1e-10 && weakest_failure > 1e-6;
    r.detail = "residual " + fmt("%.2e", worst_ok) + " with >= 2J+1 nodes; smallest residual with 2J nodes " +
               fmt("%.2e", weakest_failure) + " (aliasing, expected failure)";
}

// ---------------------------------------------------------------- 4
void q_checks(CriterionResult& r) {
    std::mt19937_64 rng(44);
    double pointwise = 0.0, norm_err = 0.0;
    const AngleGrid grid = AngleGrid::gauss_legendre(48, 96);
    const auto dirs = grid.directions();
    const auto weights = grid.sphere_weights();
    for (int tj : {1, 2, 5, 10, 20}) {
        const SpinIndex spin(tj);
        const Direction n0 = random_direction(rng);
        const auto q = q_function(su2_coherent_block(spin, n0), dirs);
        for (std::size_t i = 0; i < dirs.size(); ++i) {
            const double want = std::pow(0.5 * (1.0 + dirs[i].unit().dot(n0.unit())), tj);
            pointwise = std::max(pointwise, std::abs(q.values[i] - want));
        }
        norm_err = std::max(norm_err, std::abs(q_normalization(q, weights) - 1.0));
    }
    r.passed = pointwise < 1e-10 && norm_err < 1e-6;
    r.detail = "pointwise " + fmt("%.2e", pointwise) + " (limit 1e-10), normalization " + fmt("%.2e", norm_err) +
               " (limit 1e-6)";
}

// Grid spanning +-5 sigma along each axis of a diagonal covariance.
GridSpec phantom_grid(const Mat3& cov, int n) {
    Vec3 half;
    for (int a = 0; a < 3; ++a) half(a) = 5.0 * std::sqrt(cov(a, a));
    return GridSpec::centered({n, n, n}, half);
}

// ---------------------------------------------------------------- 5
void phantom(CriterionResult& r) {
    const Mat3 cov = Vec3(0.24, 4.2, 1.0).asDiagonal();
    RadonOptions opts;
    opts.grid = phantom_grid(cov, 201);
    // 65 x 64 quarter scan completed by symmetry = 65 x 256 full-sphere directions.
    const auto rec = reconstruct_gaussian_phantom(Vec3::Zero(), cov, AngleGrid::full(65, 256), opts);
    const auto pa = principal_axes(volume_moments(rec.volume).covariance);
    const Vec3 want(0.24, 1.0, 4.2);
    const int axis_of[3] = {0, 2, 1};
    double var_err = 0.0, angle = 0.0;
    for (int k = 0; k < 3; ++k) {
        var_err = std::max(var_err, std::abs(pa.variances(k) / want(k) - 1.0));
        const double c = std::min(1.0, std::abs(pa.axes.col(k)(axis_of[k])));
        angle = std::max(angle, std::acos(c) * 180.0 / kPi);
    }
    r.passed = var_err < 0.05 && angle < 2.0;
    r.detail = "variances " + fmt("%.4f", pa.variances(0)) + " " + fmt("%.4f", pa.variances(1)) + " " +
               fmt("%.4f", pa.variances(2)) + ", worst relative error " + fmt("%.2e", var_err) +
               ", worst axis tilt " + fmt("%.3f", angle) + " deg, 201^3 voxels";
}

// Runs simulate -> symmetrize -> reconstruct -> analyze in `dir`.
void run_pipeline(const PipelineConfig& cfg, const fs::path& dir) {
    cmd_simulate(cfg, dir / "scan");
    cmd_symmetrize(cfg, dir / "scan", dir / "full");
    cmd_reconstruct(cfg, dir / "full", dir / "rec");
    cmd_analyze(cfg, dir / "rec", dir / "analysis");
}

nlohmann::json squeezed_config() {
    return {{"state", {{"model", "kerr_squeezed_gaussian"}, {"squeeze_db", 6.2}, {"antisqueeze_db", 6.2}}},
            {"scan", {{"grid", "quarter"}, {"n_theta", 33}, {"n_phi", 32}, {"samples", 100000}, {"seed", 2024},
                      {"reflection", "mirror_y"}}},
            {"reconstruction", {{"path", "radon"}, {"smoothing", 0.2}, {"dims", {101, 101, 101}}}}};
}

// ---------------------------------------------------------------- 6
void sampled(CriterionResult& r, const Options& o) {
    const fs::path dir = fs::path(o.work_dir) / "c6";
    const auto cfg = parse_config(squeezed_config());
    run_pipeline(cfg, dir);
    const auto vol = read_volume(dir / "rec" / "volume.ptv");
    const double s = parse_double(vol.metadata.at("smoothing_width"), "smoothing_width");
    const auto pa = principal_axes(volume_moments(vol).covariance);
    const double db = variance_to_db(pa.variances(0) - s * s);
    r.passed = std::abs(db - 6.2) <= 0.3;
    r.detail = "recovered " + fmt("%.3f", db) + " dB vs configured 6.2 dB (band +-0.3), 33x32 quarter scan, 1e5 "
               "samples per setting";
    if (!o.keep_files) fs::remove_all(dir);
}

// ---------------------------------------------------------------- 7
void hwhm(CriterionResult& r) {
    KerrSqueezingParams p;
    const auto model = kerr_squeezed_gaussian(p);
    const Vec3 axis = principal_axes(model.covariance).axes.col(0);
    const AngleGrid grid = AngleGrid::full(33, 128);
    auto width_along = [&](const Mat3& cov) {
        RadonOptions opts;
        opts.grid = phantom_grid(cov, 81);
        const auto rec = reconstruct_gaussian_phantom(Vec3::Zero(), cov, grid, opts);
        const auto iso = isocontour_level_stats(rec.volume, 0.5);
        double w2 = 0.0;
        for (int k = 0; k < 3; ++k) {
            const double c = axis.dot(iso.axes.col(k));
            w2 += c * c * iso.half_widths(k) * iso.half_widths(k);
        }
        return std::sqrt(w2);
    };
    const double coherent = width_along(Mat3::Identity());
    const double squeezed = width_along(model.covariance);
    const double ratio = squeezed / coherent, want = std::pow(10.0, -0.31);
    r.passed = std::abs(ratio / want - 1.0) < 0.05;
    r.detail = "HWHM " + fmt("%.4f", squeezed) + " / " + fmt("%.4f", coherent) + " = " + fmt("%.4f", ratio) +
               ", expected " + fmt("%.4f", want) + " (5%)";
}

// ---------------------------------------------------------------- 8
void ladder(CriterionResult& r) {
    const Mat3 cov = Vec3(0.24, 4.2, 1.0).asDiagonal();
    RadonOptions opts;
    opts.grid = phantom_grid(cov, 61);
    const int steps[3][2] = {{17, 64}, {33, 128}, {65, 256}};
    double err[3];
    for (int k = 0; k < 3; ++k) {
        const auto rec = reconstruct_gaussian_phantom(Vec3::Zero(), cov, AngleGrid::full(steps[k][0], steps[k][1]), opts);
        err[k] = (volume_moments(rec.volume).covariance - cov).norm() / cov.norm();
    }
    r.passed = err[1] < err[0] && err[2] < err[1];
    r.detail = "relative covariance error " + fmt("%.3e", err[0]) + " -> " + fmt("%.3e", err[1]) + " -> " +
               fmt("%.3e", err[2]) + " for (theta, phi) = 17x64, 33x128, 65x256";
}

// ---------------------------------------------------------------- 9
std::vector<fs::path> files_under(const fs::path& root) {
    std::vector<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file() && e.path().filename() != "timing.txt") out.push_back(fs::relative(e.path(), root));
    std::sort(out.begin(), out.end());
    return out;
}

// write -> read -> write must reproduce every pipeline file byte for byte.
std::string reencode_mismatches(const fs::path& run) {
    std::string bad;
    auto check = [&](const fs::path& p, const std::string& again) {
        if (read_file(p) != again) bad += p.string() + " does not re-encode identically; ";
    };
    for (const char* sub : {"scan", "full"}) {
        const fs::path d = run / sub;
        if (peek_tomogram_kind(d) == TomogramKind::histogram) {
            const auto set = read_histogram_set(d);
            check(d / "manifest.txt", encode_manifest(set));
            check(d / "records.txt", encode_records(set));
        } else {
            const auto set = read_discrete_set(d);
            check(d / "manifest.txt", encode_manifest(set));
            check(d / "records.txt", encode_records(set));
        }
    }
    if (fs::exists(run / "rec" / "volume.ptv"))
        check(run / "rec" / "volume.ptv", encode_volume(read_volume(run / "rec" / "volume.ptv")));
    if (fs::exists(run / "rec" / "blocks.txt")) {
        Metadata meta;
        const auto state = read_blocks(run / "rec" / "blocks.txt", &meta);
        check(run / "rec" / "blocks.txt", encode_blocks(state, meta));
    }
    for (const auto& e : fs::directory_iterator(run / "analysis"))
        if (e.path().filename().string().rfind("q_", 0) == 0) {
            Metadata meta;
            const auto q = read_sphere_function(e.path(), &meta);
            check(e.path(), encode_sphere_function(q, meta));
        }
    return bad;
}

void determinism(CriterionResult& r, const Options& o) {
    const fs::path dir = fs::path(o.work_dir) / "c9";
    fs::remove_all(dir);
    auto gauss = squeezed_config();
    gauss["scan"]["n_theta"] = 9;
    gauss["scan"]["n_phi"] = 8;
    gauss["scan"]["samples"] = 20000;
    gauss["reconstruction"]["dims"] = {41, 41, 41};
    const nlohmann::json discrete = {
        {"state", {{"model", "su2_coherent"}, {"two_j", 3}, {"direction", {{"theta", 0.7}, {"phi", 1.9}}}}},
        {"scan", {{"samples", 5000}, {"seed", 99}, {"totals", true}}},
        {"reconstruction", {{"path", "exact"}}}};

    const int threads = omp_get_max_threads();
    std::string mismatch;
    std::size_t compared = 0;
    for (const auto& [name, j] : {std::pair{"gaussian", gauss}, std::pair{"discrete", discrete}}) {
        const auto cfg = parse_config(j);
        omp_set_num_threads(1);
        run_pipeline(cfg, dir / name / "a");
        omp_set_num_threads(std::max(2, threads));
        run_pipeline(cfg, dir / name / "b");
        omp_set_num_threads(threads);
        const auto fa = files_under(dir / name / "a"), fb = files_under(dir / name / "b");
        if (fa != fb) mismatch += std::string(name) + ": different file sets; ";
        for (const auto& f : fa) {
            ++compared;
            if (read_file(dir / name / "a" / f) != read_file(dir / name / "b" / f))
                mismatch += std::string(name) + "/" + f.string() + " differs; ";
        }
        mismatch += reencode_mismatches(dir / name / "a");
    }
    r.passed = mismatch.empty() && compared > 0;
    r.detail = std::to_string(compared) + " files identical across runs with 1 and " +
               std::to_string(std::max(2, threads)) + " threads" + (mismatch.empty() ? "" : ": " + mismatch);
    if (!o.keep_files) fs::remove_all(dir);
}

}  // namespace

std::string format_line(const CriterionResult& r) {
    char head[96];
    std::snprintf(head, sizeof head, "[%s] criterion %d %-28s (%6.1f s) ", r.passed ? "PASS" : "FAIL", r.id,
                  r.name.c_str(), r.seconds);
    return head + r.detail;
}

std::vector<CriterionResult> run(const std::vector<int>& ids, const Options& options,
                                 const std::function<void(const CriterionResult&)>& sink) {
    struct Entry {
        int id;
        const char* name;
        std::function<void(CriterionResult&)> fn;
    };
    const std::vector<Entry> all = {
        {1, "algebra suite", algebra},
        {2, "exact inversion roundtrip", roundtrip},
        {3, "characteristic function", characteristic},
        {4, "Q function", q_checks},
        {5, "radon phantom accuracy", phantom},
        {6, "sampled end-to-end", [&](CriterionResult& r) { sampled(r, options); }},
        {7, "HWHM comparison", hwhm},
        {8, "convergence ladder", ladder},
        {9, "determinism", [&](CriterionResult& r) { determinism(r, options); }},
    };
    std::vector<CriterionResult> out;
    for (const auto& e : all) {
        if (!ids.empty() && std::find(ids.begin(), ids.end(), e.id) == ids.end()) continue;
        CriterionResult r;
        r.id = e.id;
        r.name = e.name;
        const auto t0 = Clock::now();
        try {
            e.fn(r);
            r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
            // Runtime limits belong to some criteria.
            if (e.id == 1 && r.seconds >= 10.0) r.passed = false;
            if (e.id == 2 && r.seconds >= 120.0) r.passed = false;
            if (e.id == 5 && r.seconds >= 300.0) r.passed = false;
            if (e.id == 6 && r.seconds >= 600.0) r.passed = false;
        } catch (const std::exception& ex) {
            r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
            r.passed = false;
            r.detail = std::string("error: ") + ex.what();
        }
        if (sink) sink(r);
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace poltomo::acceptance
