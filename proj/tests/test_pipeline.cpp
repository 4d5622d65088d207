#include "poltomo/error.hpp"
#include "poltomo/pipeline.hpp"

#include <doctest.h>

#include <filesystem>
#include <sstream>
#include <unistd.h>

using namespace poltomo;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name)
        : path(fs::temp_directory_path() / ("poltomo-pipe-" + name + "-" + std::to_string(::getpid()))) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

// Value of a "key<TAB>value" line.
std::string field(const fs::path& file, const std::string& key) {
    std::istringstream in(read_file(file));
    std::string line;
    while (std::getline(in, line))
        if (line.rfind(key + "\t", 0) == 0) return line.substr(key.size() + 1);
    return {};
}

PipelineConfig coherent_config() {
    return parse_config(json::parse(R"({
        "state": {"model": "su2_coherent", "two_j": 4, "direction": {"theta": 0.8, "phi": 0.3}},
        "scan": {"grid": "full", "n_theta": 4, "n_phi": 4, "samples": 1000, "seed": 7}
    })"));
}

}  // namespace

TEST_CASE("config parsing is strict") {
    CHECK_THROWS_AS(parse_config(json::parse(R"({"scan": {"sampels": 3}})")), ConfigError);
    CHECK_THROWS_AS(parse_config(json::parse(R"({"bogus": 1})")), ConfigError);
    CHECK_THROWS_AS(parse_config(json::parse(R"({"scan": {"samples": "many"}})")), ConfigError);
    CHECK_THROWS_AS(parse_config(json::parse(R"({"reconstruction": {"dims": [1, 5, 5]}})")), ConfigError);
    CHECK_THROWS_AS(parse_config(json::parse(R"({"scan": {"reflection": "sideways"}})")), ConfigError);

    const auto d = parse_config(json::object());
    CHECK_FALSE(d.state.specified);
    CHECK(d.reconstruction.path == "exact");
    CHECK(d.to_json().contains("state") == false);
}

TEST_CASE("overrides and hashes") {
    json j = json::object();
    apply_override(j, "scan.samples=500");
    apply_override(j, "reconstruction.path=radon");
    apply_override(j, "state.direction.theta=1.5");
    CHECK(j["scan"]["samples"] == 500);
    CHECK(j["reconstruction"]["path"] == "radon");
    CHECK(j["state"]["direction"]["theta"] == 1.5);
    CHECK_THROWS_AS(apply_override(j, "novalue"), ConfigError);

    const auto a = load_config(std::nullopt, {"scan.seed=3"});
    const auto b = load_config(std::nullopt, {"scan.seed=3"});
    const auto c = load_config(std::nullopt, {"scan.seed=4"});
    CHECK(a.hash() == b.hash());
    CHECK(a.hash() != c.hash());
    CHECK(a.hash().size() == 16);
    // Defaults written out explicitly hash the same as omitted ones.
    const auto e = load_config(std::nullopt, {"scan.seed=3", "reconstruction.smoothing=0.2"});
    CHECK(a.hash() == e.hash());
    // FNV-1a reference values.
    CHECK(fnv1a_hex("") == "cbf29ce484222325");
    CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
    CHECK_THROWS_AS(load_config(fs::path("/nonexistent/config.json"), {}), ConfigError);
}

TEST_CASE("thread configuration") {
    CHECK(configure_threads(2) == 2);
    CHECK_THROWS_AS(configure_threads(0), ConfigError);
    ::setenv("POLTOMO_THREADS", "3", 1);
    CHECK(configure_threads(std::nullopt) == 3);
    ::setenv("POLTOMO_THREADS", "lots", 1);
    CHECK_THROWS_AS(configure_threads(std::nullopt), ConfigError);
    ::unsetenv("POLTOMO_THREADS");
    configure_threads(1);
}

TEST_CASE("simulate writes counted records deterministically") {
    TempDir t("sim");
    const auto cfg = coherent_config();
    cmd_simulate(cfg, t.path / "a");
    const auto set = read_discrete_set(t.path / "a");
    REQUIRE(set.blocks.size() == 1);
    CHECK(set.blocks[0].tomograms.size() == 16);
    for (const auto& tom : set.blocks[0].tomograms) {
        double s = 0.0;
        for (const auto& [m, w] : tom.values) {
            const double n = w * 1000.0;
            CHECK(std::abs(n - std::round(n)) < 1e-9);
            s += w;
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK(set.metadata.at("config_hash") == cfg.hash());
    CHECK(set.metadata.at("seed") == "7");

    cmd_simulate(cfg, t.path / "b");
    CHECK(read_file(t.path / "a" / "records.txt") == read_file(t.path / "b" / "records.txt"));
    CHECK(read_file(t.path / "a" / "manifest.txt") == read_file(t.path / "b" / "manifest.txt"));

    PipelineConfig none;
    CHECK_THROWS_AS(cmd_simulate(none, t.path / "c"), ConfigError);
}

TEST_CASE("exact path end to end") {
    TempDir t("exact");
    auto cfg = coherent_config();
    cfg.scan.grid = "auto";
    cfg.scan.n_theta = cfg.scan.n_phi = 0;
    cfg.scan.samples = 0;
    cmd_simulate(cfg, t.path / "scan");
    const auto files = cmd_reconstruct(cfg, t.path / "scan", t.path / "rec");
    CHECK(files.size() == 3);
    CHECK(parse_double(field(t.path / "rec" / "report.txt", "max_frobenius_error"), "err") < 1e-8);

    const auto out = cmd_analyze(cfg, t.path / "rec", t.path / "ana");
    CHECK(fs::exists(t.path / "ana" / "stats.txt"));
    CHECK(fs::exists(t.path / "ana" / "q_4.txt"));
    const auto q = read_sphere_function(t.path / "ana" / "q_4.txt");
    double peak = 0.0;
    for (double v : q.values) peak = std::max(peak, v);
    CHECK(peak > 0.9);

    // Exact path on a non-GL grid is a coverage problem.
    auto bad = coherent_config();
    bad.scan.samples = 0;
    cmd_simulate(bad, t.path / "uniform");
    CHECK_THROWS_AS(cmd_reconstruct(bad, t.path / "uniform", t.path / "x"), CoverageError);

    // Radon path on discrete data names the required format.
    auto radon = cfg;
    radon.reconstruction.path = "radon";
    try {
        cmd_reconstruct(radon, t.path / "scan", t.path / "y");
        FAIL("expected a format error");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("histogram") != std::string::npos);
    }
    CHECK_THROWS_AS(cmd_reconstruct(cfg, t.path / "missing", t.path / "z"), FormatError);
}

TEST_CASE("radon path end to end on a coherent beam") {
    TempDir t("radon");
    auto cfg = parse_config(json::parse(R"({
        "state": {"model": "kerr_squeezed_gaussian", "squeeze_db": 0.0},
        "scan": {"grid": "quarter", "n_theta": 17, "n_phi": 16, "samples": 100000, "seed": 5},
        "reconstruction": {"path": "radon", "dims": [41, 41, 41], "smoothing": 0.2}
    })"));
    cmd_simulate(cfg, t.path / "q");
    CHECK_THROWS_AS(cmd_reconstruct(cfg, t.path / "q", t.path / "bad"), CoverageError);
    cmd_symmetrize(cfg, t.path / "q", t.path / "f");
    CHECK(read_histogram_set(t.path / "f").grid.coverage == Coverage::full_sphere);
    cmd_reconstruct(cfg, t.path / "f", t.path / "rec");
    const auto vol = read_volume(t.path / "rec" / "volume.ptv");
    CHECK(vol.metadata.at("config_hash") == cfg.hash());
    CHECK(vol.metadata.at("seed") == "5");
    const auto m = volume_moments(vol);
    for (int a = 0; a < 3; ++a) CHECK(m.covariance(a, a) - 0.04 == doctest::Approx(1.0).epsilon(0.05));

    cmd_analyze(cfg, t.path / "rec", t.path / "ana");
    for (const char* f : {"moments.txt", "hwhm.txt", "slice_xy.txt", "slice_xz.txt", "slice_yz.txt", "sphere_map.txt"})
        CHECK(fs::exists(t.path / "ana" / f));
}

TEST_CASE("analyze reports the Gaussian half width") {
    TempDir t("hwhm");
    VolumeGrid v;
    v.spec = GridSpec::centered({81, 81, 81}, Vec3::Constant(4.0));
    v.values.resize(v.spec.voxels());
    const Mat3 cov = Vec3(db_to_variance(6.2), 1.0, 1.0).asDiagonal();
    const Mat3 inv = cov.inverse();
    for (int i = 0; i < 81; ++i)
        for (int j = 0; j < 81; ++j)
            for (int k = 0; k < 81; ++k) {
                const Vec3 r = v.spec.position(i, j, k);
                v.values[v.index(i, j, k)] = std::exp(-0.5 * r.dot(inv * r));
            }
    v.metadata["smoothing_width"] = "0";
    write_volume(t.path / "volume.ptv", v);
    cmd_analyze(PipelineConfig{}, t.path / "volume.ptv", t.path / "ana");
    std::istringstream in(read_file(t.path / "ana" / "hwhm.txt"));
    std::string line;
    std::vector<double> widths;
    while (std::getline(in, line))
        if (!line.empty() && std::isdigit(static_cast<unsigned char>(line[0])) && line[1] == '\t')
            widths.push_back(parse_double(line.substr(2, line.find('\t', 2) - 2), "hw"));
    REQUIRE(widths.size() == 3);
    const double hwhm = std::sqrt(2 * std::log(2.0));
    CHECK(widths[0] == doctest::Approx(hwhm * std::pow(10.0, -0.31)).epsilon(0.02));
    CHECK(widths[2] == doctest::Approx(hwhm).epsilon(0.02));
}
