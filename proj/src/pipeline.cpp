#include "poltomo/pipeline.hpp"

#include "poltomo/error.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <set>

namespace poltomo {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- config

namespace {

// Reads an object while remembering which keys were looked at, so that typos
// surface as errors instead of silently falling back to defaults.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
    }

    const json* find(const std::string& key) {
        used_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() || it->is_null() ? nullptr : &*it;
    }

    template <class T>
    T get(const std::string& key, T fallback) {
        const json* v = find(key);
        if (!v) return fallback;
        try {
            return v->get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(where_ + "." + key + ": " + e.what());
        }
    }

    std::string path(const std::string& key) const { return where_ + "." + key; }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!used_.contains(it.key())) throw ConfigError("unknown config key " + where_ + "." + it.key());
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> used_;
};

cplx to_complex(const json& j, const std::string& where) {
    if (j.is_number()) return {j.get<double>(), 0.0};
    if (j.is_array() && j.size() == 2 && j[0].is_number() && j[1].is_number())
        return {j[0].get<double>(), j[1].get<double>()};
    throw ConfigError(where + ": expected a number or [re, im]");
}

Direction to_direction(const json& j, const std::string& where) {
    ObjectReader r(j, where);
    const double theta = r.get("theta", 0.0), phi = r.get("phi", 0.0);
    r.finish();
    try {
        return {theta, phi};
    } catch (const DomainError& e) {
        throw ConfigError(where + ": " + e.what());
    }
}

json direction_json(const Direction& d) { return {{"theta", d.theta()}, {"phi", d.phi()}}; }

Vec3 to_vec3(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 3) throw ConfigError(where + ": expected [x, y, z]");
    Vec3 v;
    for (int a = 0; a < 3; ++a) {
        if (!j[a].is_number()) throw ConfigError(where + ": expected numbers");
        v(a) = j[a].get<double>();
    }
    return v;
}

DensityBlock block_from_json(const json& j, const std::string& where) {
    ObjectReader r(j, where);
    const int two_j = r.get("two_j", -1);
    if (two_j < 0 || two_j > kDefaultMaxTwoJ) throw ConfigError(where + ".two_j: missing or out of range");
    const SpinIndex spin(two_j);
    CMatrix m = CMatrix::Zero(spin.dim(), spin.dim());
    auto fill = [&](const char* key, bool imag) {
        const json* v = r.find(key);
        if (!v) {
            if (!imag) throw ConfigError(r.path(key) + ": required");
            return;
        }
        if (!v->is_array() || v->size() != static_cast<std::size_t>(spin.dim()))
            throw ConfigError(r.path(key) + ": expected " + std::to_string(spin.dim()) + " rows");
        for (int i = 0; i < spin.dim(); ++i) {
            const json& row = (*v)[i];
            if (!row.is_array() || row.size() != static_cast<std::size_t>(spin.dim()))
                throw ConfigError(r.path(key) + ": row " + std::to_string(i) + " has the wrong length");
            for (int k = 0; k < spin.dim(); ++k) {
                if (!row[k].is_number()) throw ConfigError(r.path(key) + ": expected numbers");
                const double x = row[k].get<double>();
                m(i, k) += imag ? cplx(0.0, x) : cplx(x, 0.0);
            }
        }
    };
    fill("re", false);
    fill("im", true);
    r.finish();
    return {spin, std::move(m)};
}

json block_json(const DensityBlock& b) {
    json re = json::array(), im = json::array();
    for (Eigen::Index i = 0; i < b.matrix.rows(); ++i) {
        json rr = json::array(), ii = json::array();
        for (Eigen::Index k = 0; k < b.matrix.cols(); ++k) {
            rr.push_back(b.matrix(i, k).real());
            ii.push_back(b.matrix(i, k).imag());
        }
        re.push_back(rr);
        im.push_back(ii);
    }
    return {{"two_j", b.spin.two_j()}, {"re", re}, {"im", im}};
}

void parse_state(const json& j, StateConfig& s) {
    ObjectReader r(j, "state");
    s.model = r.get("model", s.model);
    static const std::set<std::string> models = {"coherent_two_mode", "su2_coherent",
                                                 "kerr_squeezed_gaussian", "explicit_blocks"};
    if (!models.contains(s.model)) throw ConfigError("state.model: unknown model '" + s.model + "'");
    // Only the keys of the chosen model are accepted.
    if (s.model == "coherent_two_mode") {
        if (auto* v = r.find("alpha_h")) s.alpha_h = to_complex(*v, "state.alpha_h");
        if (auto* v = r.find("alpha_v")) s.alpha_v = to_complex(*v, "state.alpha_v");
        s.two_j_cutoff = r.get("two_j_cutoff", s.two_j_cutoff);
        if (s.two_j_cutoff < 0 || s.two_j_cutoff > kDefaultMaxTwoJ)
            throw ConfigError("state.two_j_cutoff: out of range");
    } else if (s.model == "su2_coherent") {
        s.two_j = r.get("two_j", s.two_j);
        if (s.two_j < 0 || s.two_j > kDefaultMaxTwoJ) throw ConfigError("state.two_j: out of range");
        if (auto* v = r.find("direction")) s.direction = to_direction(*v, "state.direction");
    } else if (s.model == "kerr_squeezed_gaussian") {
        auto& k = s.kerr;
        k.mean_photons = r.get("mean_photons", k.mean_photons);
        k.squeeze_db = r.get("squeeze_db", k.squeeze_db);
        k.antisqueeze_db = r.get("antisqueeze_db", k.antisqueeze_db);
        k.excess_noise_db = r.get("excess_noise_db", k.excess_noise_db);
        if (auto* v = r.find("squeeze_axis")) k.squeeze_axis = to_direction(*v, "state.squeeze_axis");
        if (auto* v = r.find("excitation_axis")) k.excitation_axis = to_direction(*v, "state.excitation_axis");
    } else {
        const json* v = r.find("blocks");
        if (!v || !v->is_array() || v->empty()) throw ConfigError("state.blocks: expected a non-empty array");
        s.blocks.clear();
        for (std::size_t i = 0; i < v->size(); ++i)
            s.blocks.push_back(block_from_json((*v)[i], "state.blocks[" + std::to_string(i) + "]"));
    }
    r.finish();
}

void parse_scan(const json& j, ScanConfig& s) {
    ObjectReader r(j, "scan");
    s.grid = r.get("grid", s.grid);
    if (s.grid != "auto" && s.grid != "quarter" && s.grid != "full" && s.grid != "gauss_legendre")
        throw ConfigError("scan.grid: expected auto, quarter, full or gauss_legendre");
    s.n_theta = r.get("n_theta", s.n_theta);
    s.n_phi = r.get("n_phi", s.n_phi);
    if (s.n_theta < 0 || s.n_phi < 0) throw ConfigError("scan: negative angle count");
    s.samples = r.get("samples", s.samples);
    s.seed = r.get("seed", s.seed);
    s.sideband.bins = r.get("bins", s.sideband.bins);
    s.sideband.range_sigmas = r.get("range_sigmas", s.sideband.range_sigmas);
    s.sideband.efficiency = r.get("efficiency", s.sideband.efficiency);
    if (s.sideband.bins < 5) throw ConfigError("scan.bins: need at least 5 bins");
    if (!(s.sideband.range_sigmas > 0.0)) throw ConfigError("scan.range_sigmas: must be positive");
    if (!(s.sideband.efficiency > 0.0 && s.sideband.efficiency <= 1.0))
        throw ConfigError("scan.efficiency: must lie in (0, 1]");
    try {
        s.reflection = parse_reflection_rule(r.get("reflection", to_string(s.reflection)));
    } catch (const DomainError& e) {
        throw ConfigError(std::string("scan.reflection: ") + e.what());
    }
    s.totals = r.get("totals", s.totals);
    r.finish();
}

void parse_reconstruction(const json& j, ReconstructionConfig& c) {
    ObjectReader r(j, "reconstruction");
    c.path = r.get("path", c.path);
    if (c.path != "exact" && c.path != "radon") throw ConfigError("reconstruction.path: expected exact or radon");
    c.n_omega = r.get("n_omega", c.n_omega);
    if (c.n_omega < 0) throw ConfigError("reconstruction.n_omega: must be >= 0");
    c.clip_negative = r.get("clip_negative", c.clip_negative);
    c.smoothing = r.get("smoothing", c.smoothing);
    if (!(c.smoothing >= 0.0)) throw ConfigError("reconstruction.smoothing: must be >= 0");
    if (auto* v = r.find("dims")) {
        if (!v->is_array() || v->size() != 3) throw ConfigError("reconstruction.dims: expected [nx, ny, nz]");
        for (int a = 0; a < 3; ++a) {
            if (!(*v)[a].is_number_integer() || (*v)[a].get<int>() < 2)
                throw ConfigError("reconstruction.dims: need integers >= 2");
            c.dims[a] = (*v)[a].get<int>();
        }
    }
    if (auto* v = r.find("half_extent")) {
        c.half_extent = to_vec3(*v, "reconstruction.half_extent");
        if (!(c.half_extent->minCoeff() > 0.0)) throw ConfigError("reconstruction.half_extent: must be positive");
    } else {
        c.half_extent.reset();
    }
    c.extent_sigmas = r.get("extent_sigmas", c.extent_sigmas);
    if (!(c.extent_sigmas > 0.0)) throw ConfigError("reconstruction.extent_sigmas: must be positive");
    c.scale = r.get("scale", c.scale);
    if (!(c.scale > 0.0)) throw ConfigError("reconstruction.scale: must be positive");
    r.finish();
}

void parse_analysis(const json& j, AnalysisConfig& a) {
    ObjectReader r(j, "analysis");
    a.level = r.get("level", a.level);
    if (!(a.level > 0.0 && a.level < 1.0)) throw ConfigError("analysis.level: must lie in (0, 1)");
    a.sphere.n_alpha = r.get("sphere_n_alpha", a.sphere.n_alpha);
    a.sphere.n_beta = r.get("sphere_n_beta", a.sphere.n_beta);
    a.sphere.half_range = r.get("sphere_half_range", a.sphere.half_range);
    if (a.sphere.n_alpha < 1 || a.sphere.n_beta < 1 || a.sphere.half_range < 0.0)
        throw ConfigError("analysis: bad sphere map size");
    a.q_theta = r.get("q_theta", a.q_theta);
    a.q_phi = r.get("q_phi", a.q_phi);
    if (a.q_theta < 2 || a.q_phi < 1) throw ConfigError("analysis: bad Q grid size");
    r.finish();
}

}  // namespace

PipelineConfig parse_config(const json& j) {
    PipelineConfig cfg;
    ObjectReader r(j, "config");
    if (auto* v = r.find("state")) {
        parse_state(*v, cfg.state);
        cfg.state.specified = true;
    }
    if (auto* v = r.find("scan")) parse_scan(*v, cfg.scan);
    if (auto* v = r.find("reconstruction")) parse_reconstruction(*v, cfg.reconstruction);
    if (auto* v = r.find("analysis")) parse_analysis(*v, cfg.analysis);
    r.finish();
    return cfg;
}

json PipelineConfig::to_json() const {
    json st = {{"model", state.model}};
    if (state.model == "coherent_two_mode") {
        st["alpha_h"] = {state.alpha_h.real(), state.alpha_h.imag()};
        st["alpha_v"] = {state.alpha_v.real(), state.alpha_v.imag()};
        st["two_j_cutoff"] = state.two_j_cutoff;
    } else if (state.model == "su2_coherent") {
        st["two_j"] = state.two_j;
        st["direction"] = direction_json(state.direction);
    } else if (state.model == "kerr_squeezed_gaussian") {
        const auto& k = state.kerr;
        st["mean_photons"] = k.mean_photons;
        st["squeeze_db"] = k.squeeze_db;
        st["antisqueeze_db"] = k.antisqueeze_db;
        st["excess_noise_db"] = k.excess_noise_db;
        st["squeeze_axis"] = direction_json(k.squeeze_axis);
        st["excitation_axis"] = direction_json(k.excitation_axis);
    } else {
        json blocks = json::array();
        for (const auto& b : state.blocks) blocks.push_back(block_json(b));
        st["blocks"] = blocks;
    }
    json rec = {{"path", reconstruction.path},
                {"n_omega", reconstruction.n_omega},
                {"clip_negative", reconstruction.clip_negative},
                {"smoothing", reconstruction.smoothing},
                {"dims", reconstruction.dims},
                {"extent_sigmas", reconstruction.extent_sigmas},
                {"scale", reconstruction.scale}};
    if (reconstruction.half_extent) {
        const Vec3& h = *reconstruction.half_extent;
        rec["half_extent"] = {h.x(), h.y(), h.z()};
    } else {
        rec["half_extent"] = nullptr;
    }
    json out = {{"state", st},
            {"scan",
             {{"grid", scan.grid},
              {"n_theta", scan.n_theta},
              {"n_phi", scan.n_phi},
              {"samples", scan.samples},
              {"seed", scan.seed},
              {"bins", scan.sideband.bins},
              {"range_sigmas", scan.sideband.range_sigmas},
              {"efficiency", scan.sideband.efficiency},
              {"reflection", to_string(scan.reflection)},
              {"totals", scan.totals}}},
            {"reconstruction", rec},
            {"analysis",
             {{"level", analysis.level},
              {"sphere_n_alpha", analysis.sphere.n_alpha},
              {"sphere_n_beta", analysis.sphere.n_beta},
              {"sphere_half_range", analysis.sphere.half_range},
              {"q_theta", analysis.q_theta},
              {"q_phi", analysis.q_phi}}}};
    if (!state.specified) out.erase("state");
    return out;
}

std::string fnv1a_hex(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, h >>= 4) out[i] = digits[h & 0xf];
    return out;
}

std::string PipelineConfig::hash() const { return fnv1a_hex(to_json().dump()); }

void apply_override(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override '" + assignment + "': expected key.path=value");
    const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    json* node = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError("override '" + assignment + "': empty key component");
        if (node->is_null()) *node = json::object();
        if (!node->is_object()) throw ConfigError("override '" + assignment + "': " + part + " is not inside an object");
        node = &(*node)[part];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    *node = std::move(value);
}

PipelineConfig load_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides) {
    json j = json::object();
    if (file) {
        std::string text;
        try {
            text = read_file(*file);
        } catch (const FormatError&) {
            throw ConfigError("cannot read config file " + file->string());
        }
        try {
            j = json::parse(text);
        } catch (const json::parse_error& e) {
            throw ConfigError("config " + file->string() + ": " + e.what());
        }
    }
    for (const auto& o : overrides) apply_override(j, o);
    return parse_config(j);
}

int configure_threads(std::optional<int> requested) {
    if (!requested) {
        if (const char* env = std::getenv("POLTOMO_THREADS"); env && *env) {
            try {
                requested = static_cast<int>(parse_int(env, "POLTOMO_THREADS"));
            } catch (const FormatError& e) {
                throw ConfigError(e.what());
            }
        }
    }
    if (requested) {
        if (*requested < 1) throw ConfigError("thread count must be at least 1");
        omp_set_num_threads(*requested);
    }
    return omp_get_max_threads();
}

// ---------------------------------------------------------------- builders

PolarizationState build_state(const StateConfig& cfg) {
    if (cfg.model == "coherent_two_mode") return coherent_two_mode(cfg.alpha_h, cfg.alpha_v, cfg.two_j_cutoff);
    if (cfg.model == "su2_coherent") return PolarizationState({su2_coherent_block(SpinIndex(cfg.two_j), cfg.direction)});
    if (cfg.model == "explicit_blocks") {
        std::vector<DensityBlock> blocks = cfg.blocks;
        std::sort(blocks.begin(), blocks.end(),
                  [](const auto& a, const auto& b) { return a.spin.two_j() < b.spin.two_j(); });
        PolarizationState s;
        try {
            s = PolarizationState(std::move(blocks));
            s.validate();
        } catch (const Error& e) {
            throw ConfigError(std::string("state.blocks: ") + e.what());
        }
        return s;
    }
    throw ConfigError("state model '" + cfg.model + "' has no discrete polarization sector; use the radon path");
}

GaussianStokesModel build_gaussian(const StateConfig& cfg) {
    if (!cfg.gaussian()) throw ConfigError("state model '" + cfg.model + "' is not a Gaussian Stokes model");
    try {
        return kerr_squeezed_gaussian(cfg.kerr);
    } catch (const DomainError& e) {
        throw ConfigError(std::string("state: ") + e.what());
    }
}

AngleGrid build_scan_grid(const PipelineConfig& cfg) {
    const auto& s = cfg.scan;
    auto pick = [](int v, int fallback) { return v > 0 ? v : fallback; };
    try {
        if (s.grid == "quarter") return AngleGrid::quarter(pick(s.n_theta, 65), pick(s.n_phi, 64));
        if (s.grid == "full") return AngleGrid::full(pick(s.n_theta, 65), pick(s.n_phi, 256));
        if (s.grid == "gauss_legendre" || !cfg.state.gaussian()) {
            int tj = 1;
            if (s.grid == "auto" || s.n_theta == 0 || s.n_phi == 0) {
                const auto state = build_state(cfg.state);
                for (const auto& b : state.blocks()) tj = std::max(tj, b.spin.two_j());
            }
            return AngleGrid::gauss_legendre(pick(s.n_theta, tj + 1), pick(s.n_phi, 2 * tj + 1));
        }
        return AngleGrid::quarter(pick(s.n_theta, 65), pick(s.n_phi, 64));
    } catch (const CoverageError& e) {
        throw ConfigError(std::string("scan: ") + e.what());
    } catch (const DomainError& e) {
        throw ConfigError(std::string("scan: ") + e.what());
    }
}

// ---------------------------------------------------------------- commands

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

Metadata stamp(const PipelineConfig& cfg, const Metadata& input) {
    Metadata m;
    m["config_hash"] = cfg.hash();
    if (auto it = input.find("seed"); it != input.end()) m["seed"] = it->second;
    else m["seed"] = std::to_string(cfg.scan.seed);
    if (auto it = input.find("config_hash"); it != input.end()) m["input_config_hash"] = it->second;
    for (const char* key : {"generator", "state_model", "samples"})
        if (auto it = input.find(key); it != input.end()) m[key] = it->second;
    return m;
}

std::string vec_text(const Vec3& v) {
    return format_double(v.x()) + " " + format_double(v.y()) + " " + format_double(v.z());
}

std::string header_lines(const Metadata& meta) {
    std::string out;
    for (const auto& [k, v] : meta) out += k + "\t" + v + "\n";
    return out;
}

std::string maybe_double(double v) { return std::isfinite(v) ? format_double(v) : "undefined"; }

}  // namespace

std::vector<fs::path> cmd_simulate(const PipelineConfig& cfg, const fs::path& out_dir) {
    if (!cfg.state.specified) throw ConfigError("simulate: the config needs a state block");
    const AngleGrid grid = build_scan_grid(cfg);
    Metadata meta;
    meta["config_hash"] = cfg.hash();
    meta["seed"] = std::to_string(cfg.scan.seed);
    meta["state_model"] = cfg.state.model;
    meta["samples"] = std::to_string(cfg.scan.samples);

    if (cfg.state.gaussian()) {
        if (cfg.scan.samples == 0)
            throw ConfigError("scan.samples: the Gaussian model is measured by sampling; set samples > 0");
        const auto model = build_gaussian(cfg.state);
        auto set = sideband_scan(model, grid, cfg.scan.samples, cfg.scan.seed, cfg.scan.sideband);
        meta["generator"] = kGeneratorName;
        set.metadata = meta;
        write_tomogram_set(out_dir, set);
    } else {
        const auto state = build_state(cfg.state);
        auto set = exact_scan(state, grid, cfg.scan.totals);
        if (cfg.scan.samples > 0) {
            meta["generator"] = kGeneratorName;
            const std::size_t n = grid.size();
            auto resample = [&](DiscreteTomogram& t, std::uint64_t stream) {
                const double weight = t.total();
                if (!(weight > 0.0)) return;
                const auto hist = sample_counts(t, cfg.scan.samples, derive_seed(cfg.scan.seed, stream));
                t = empirical_tomogram(hist, t.spin, weight);
                t.dir = grid.direction(stream % n);
            };
            for (std::size_t b = 0; b < set.blocks.size(); ++b)
                for (std::size_t i = 0; i < n; ++i) resample(set.blocks[b].tomograms[i], b * n + i);
            for (std::size_t i = 0; i < set.totals.size(); ++i)
                resample(set.totals[i], set.blocks.size() * n + i);
        } else {
            meta["generator"] = "none";
        }
        set.metadata = meta;
        write_tomogram_set(out_dir, set);
    }
    return {out_dir / "manifest.txt", out_dir / "records.txt"};
}

std::vector<fs::path> cmd_symmetrize(const PipelineConfig& cfg, const fs::path& in_dir, const fs::path& out_dir) {
    const ReflectionRule rule = cfg.scan.reflection;
    if (peek_tomogram_kind(in_dir) == TomogramKind::histogram) {
        const auto in = read_histogram_set(in_dir);
        auto out = symmetrize_tomograms(in, rule);
        out.metadata = stamp(cfg, in.metadata);
        out.metadata["symmetrized"] = to_string(rule);
        write_tomogram_set(out_dir, out);
    } else {
        const auto in = read_discrete_set(in_dir);
        auto out = symmetrize_tomograms(in, rule);
        out.metadata = stamp(cfg, in.metadata);
        out.metadata["symmetrized"] = to_string(rule);
        write_tomogram_set(out_dir, out);
    }
    return {out_dir / "manifest.txt", out_dir / "records.txt"};
}

namespace {

std::vector<fs::path> reconstruct_exact(const PipelineConfig& cfg, const fs::path& in_dir, const fs::path& out_dir,
                                        std::string& timing) {
    auto t0 = Clock::now();
    const auto set = read_discrete_set(in_dir);
    timing += "read\t" + format_double(seconds_since(t0)) + "\n";
    if (set.grid.coverage != Coverage::full_sphere || set.grid.rule != ThetaRule::gauss_legendre)
        throw CoverageError("exact reconstruction needs a full-sphere Gauss-Legendre grid (scan.grid = "
                            "gauss_legendre or auto), got " + to_string(set.grid.coverage) + "/" +
                            to_string(set.grid.rule));
    int max_two_j = 0;
    for (const auto& b : set.blocks) max_two_j = std::max(max_two_j, b.spin.two_j());
    const int n_omega = cfg.reconstruction.n_omega > 0 ? cfg.reconstruction.n_omega : 2 * (max_two_j + 1);
    const auto scheme = QuadratureScheme::make(n_omega, static_cast<int>(set.grid.theta.size()),
                                               static_cast<int>(set.grid.phi.size()));

    t0 = Clock::now();
    ReconstructionOptions opts;
    opts.clip_negative = cfg.reconstruction.clip_negative;
    const auto rec = reconstruct_full(set.blocks, scheme, opts);
    timing += "reconstruct\t" + format_double(seconds_since(t0)) + "\n";

    const Metadata meta = stamp(cfg, set.metadata);
    std::string report = "# poltomo reconstruction report (exact path)\n" + header_lines(meta);
    report += "n_omega\t" + std::to_string(n_omega) + "\n";
    report += "n_theta\t" + std::to_string(set.grid.theta.size()) + "\n";
    report += "n_phi\t" + std::to_string(set.grid.phi.size()) + "\n";
    report += "blocks\t" + std::to_string(rec.state.blocks().size()) + "\n";
    if (rec.empty) report += "note\tno blocks in input\n";

    // Reference state from the config, when it has a discrete sector.
    std::optional<PolarizationState> truth;
    if (cfg.state.specified && !cfg.state.gaussian()) truth = build_state(cfg.state);
    report += "# 2J\ttrace\ttrace_deficit\thermiticity_residual\tquadrature_warning\tmin_eigenvalue\tpurity";
    report += truth ? "\tfrobenius_error\n" : "\n";
    double worst = 0.0;
    for (std::size_t i = 0; i < rec.state.blocks().size(); ++i) {
        const auto& b = rec.state.blocks()[i];
        report += std::to_string(b.spin.two_j()) + "\t" + format_double(b.weight()) + "\t" +
                  format_double(rec.trace_deficit[i]) + "\t" + format_double(rec.hermiticity_residual[i]) + "\t" +
                  (rec.hermiticity_residual[i] > 1e-6 ? "1" : "0") + "\t" + format_double(min_eigenvalue(b.matrix)) +
                  "\t" + format_double(purity(b));
        if (truth) {
            const DensityBlock* ref = truth->find(b.spin.two_j());
            const double err = ref ? (b.matrix - ref->matrix).norm() : b.matrix.norm();
            worst = std::max(worst, err);
            report += "\t" + format_double(err);
        }
        report += "\n";
    }
    if (truth) report += "max_frobenius_error\t" + format_double(worst) + "\n";

    // The quadrature is exact only above these node counts; below them the
    // outputs are kept for inspection but the run fails.
    std::string failure;
    if (static_cast<int>(set.grid.theta.size()) < max_two_j + 1 ||
        static_cast<int>(set.grid.phi.size()) < 2 * max_two_j + 1 || n_omega < max_two_j + 1)
        failure = "grid " + std::to_string(set.grid.theta.size()) + "x" + std::to_string(set.grid.phi.size()) +
                  " with n_omega " + std::to_string(n_omega) + " is below the exact quadrature bound for 2J=" +
                  std::to_string(max_two_j) + " (needs " + std::to_string(max_two_j + 1) + "x" +
                  std::to_string(2 * max_two_j + 1) + ")";
    for (std::size_t i = 0; i < rec.hermiticity_residual.size() && failure.empty(); ++i)
        if (rec.hermiticity_residual[i] > 1e-6)
            failure = "hermiticity residual " + format_double(rec.hermiticity_residual[i]) + " for 2J=" +
                      std::to_string(rec.state.blocks()[i].spin.two_j());
    report += "status\t" + (failure.empty() ? std::string("ok") : "failed: " + failure) + "\n";

    write_blocks(out_dir / "blocks.txt", rec.state, meta);
    write_file_atomic(out_dir / "report.txt", report);
    if (!failure.empty()) throw NumericalError("exact reconstruction: " + failure);
    return {out_dir / "blocks.txt", out_dir / "report.txt"};
}

std::vector<fs::path> reconstruct_radon_path(const PipelineConfig& cfg, const fs::path& in_dir,
                                             const fs::path& out_dir, std::string& timing) {
    auto t0 = Clock::now();
    const auto set = read_histogram_set(in_dir);
    timing += "read\t" + format_double(seconds_since(t0)) + "\n";
    for (std::size_t i = 0; i < set.records.size(); ++i)
        if (std::abs(set.records[i].shot_noise_variance - 1.0) > 1e-12)
            throw FormatError("record " + std::to_string(i) + " is calibrated to a shot-noise variance of " +
                              format_double(set.records[i].shot_noise_variance) +
                              "; the radon path needs histograms in shot-noise units (variance 1)");
    if (set.grid.coverage != Coverage::full_sphere)
        throw CoverageError("radon reconstruction needs full-sphere histograms; run symmetrize first");

    const Mat3 fitted = projection_covariance(set);
    const double s = cfg.reconstruction.smoothing;
    RadonOptions opts;
    opts.smoothing_width = s;
    opts.backprojection.scale = cfg.reconstruction.scale;
    Vec3 half;
    if (cfg.reconstruction.half_extent) {
        half = *cfg.reconstruction.half_extent;
    } else {
        for (int a = 0; a < 3; ++a) {
            const double var = fitted(a, a) + s * s;
            if (!(var > 0.0)) throw NumericalError("fitted projection variance is not positive");
            half(a) = cfg.reconstruction.extent_sigmas * std::sqrt(var);
        }
    }
    opts.grid = GridSpec::centered(cfg.reconstruction.dims, half);

    t0 = Clock::now();
    auto result = reconstruct_radon(set, opts);
    timing += "reconstruct\t" + format_double(seconds_since(t0)) + "\n";

    const Metadata meta = stamp(cfg, set.metadata);
    result.volume.metadata = meta;
    result.volume.metadata["smoothing_width"] = format_double(s);
    result.volume.metadata["units"] = "shot_noise";
    result.volume.metadata["directions"] = std::to_string(set.grid.size());

    const auto moments = volume_moments(result.volume);
    std::string report = "# poltomo reconstruction report (radon path)\n" + header_lines(meta);
    report += "directions\t" + std::to_string(set.grid.size()) + "\n";
    report += "smoothing_width\t" + format_double(s) + "\n";
    report += "dims\t" + std::to_string(opts.grid.dims[0]) + " " + std::to_string(opts.grid.dims[1]) + " " +
              std::to_string(opts.grid.dims[2]) + "\n";
    report += "half_extent\t" + vec_text(half) + "\n";
    report += "projection_covariance_fit\t";
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) report += (a || b ? " " : "") + format_double(fitted(a, b));
    report += "\n";
    report += "out_of_support_fraction\t" + format_double(result.out_of_support_fraction) + "\n";
    report += "mass\t" + format_double(moments.mass) + "\n";
    report += "negative_mass_fraction\t" + format_double(moments.negative_mass_fraction) + "\n";

    write_volume(out_dir / "volume.ptv", result.volume);
    write_file_atomic(out_dir / "report.txt", report);
    return {out_dir / "volume.ptv", out_dir / "report.txt"};
}

}  // namespace

std::vector<fs::path> cmd_reconstruct(const PipelineConfig& cfg, const fs::path& in_dir, const fs::path& out_dir) {
    const TomogramKind kind = peek_tomogram_kind(in_dir);
    const bool exact = cfg.reconstruction.path == "exact";
    if (exact && kind != TomogramKind::discrete)
        throw FormatError("reconstruction path 'exact' requires discrete per-J tomograms (kind = discrete); " +
                          in_dir.string() + " holds " + to_string(kind) + " tomograms");
    if (!exact && kind != TomogramKind::histogram)
        throw FormatError("reconstruction path 'radon' requires sideband histogram tomograms (kind = histogram); " +
                          in_dir.string() + " holds " + to_string(kind) + " tomograms");
    std::string timing = "# wall-clock seconds (not deterministic)\n";
    const auto t0 = Clock::now();
    auto files = exact ? reconstruct_exact(cfg, in_dir, out_dir, timing)
                       : reconstruct_radon_path(cfg, in_dir, out_dir, timing);
    timing += "total\t" + format_double(seconds_since(t0)) + "\n";
    timing += "threads\t" + std::to_string(omp_get_max_threads()) + "\n";
    write_file_atomic(out_dir / "timing.txt", timing);
    files.push_back(out_dir / "timing.txt");
    return files;
}

// ---------------------------------------------------------------- analysis

namespace {

std::string matrix_text(const Eigen::MatrixXd& m) {
    std::string out;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) out += ' ';
            out += format_double(m(i, j));
        }
        out += '\n';
    }
    return out;
}

// Covariance of a 2D slice treated as a weight map over its coordinates.
Eigen::Matrix2d slice_covariance(const Eigen::MatrixXd& s, double o0, double h0, double o1, double h1) {
    double mass = 0.0;
    Eigen::Vector2d first = Eigen::Vector2d::Zero();
    Eigen::Matrix2d second = Eigen::Matrix2d::Zero();
    for (Eigen::Index i = 0; i < s.rows(); ++i)
        for (Eigen::Index j = 0; j < s.cols(); ++j) {
            const Eigen::Vector2d r(o0 + i * h0, o1 + j * h1);
            mass += s(i, j);
            first += s(i, j) * r;
            second += s(i, j) * r * r.transpose();
        }
    if (!(mass > 0.0)) throw NumericalError("slice has non-positive mass");
    const Eigen::Vector2d mean = first / mass;
    return second / mass - mean * mean.transpose();
}

std::vector<fs::path> analyze_volume(const PipelineConfig& cfg, const VolumeGrid& vol, const fs::path& out_dir) {
    Metadata meta = stamp(cfg, vol.metadata);
    double s = 0.0;
    if (auto it = vol.metadata.find("smoothing_width"); it != vol.metadata.end())
        s = parse_double(it->second, "smoothing_width");

    const auto m = volume_moments(vol);
    const auto pa = principal_axes(m.covariance);
    std::string mo = "# poltomo volume moments (shot-noise units)\n" + header_lines(meta);
    mo += "mass\t" + format_double(m.mass) + "\n";
    mo += "mean\t" + vec_text(m.mean) + "\n";
    mo += "covariance\t";
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) mo += (a || b ? " " : "") + format_double(m.covariance(a, b));
    mo += "\n";
    mo += "smoothing_width\t" + format_double(s) + "\n";
    mo += "negative_mass_fraction\t" + format_double(m.negative_mass_fraction) + "\n";
    mo += "# axis\tvariance\tdeconvolved_variance\tnoise_db\tdirection\n";
    for (int a = 0; a < 3; ++a) {
        const double dv = pa.variances(a) - s * s;
        // Positive dB means squeezed below shot noise.
        mo += std::to_string(a) + "\t" + format_double(pa.variances(a)) + "\t" + format_double(dv) + "\t" +
              (dv > 0.0 ? format_double(variance_to_db(dv)) : std::string("undefined")) + "\t" +
              vec_text(pa.axes.col(a)) + "\n";
    }

    // Centre slices, one per axis, with their 2D covariance.
    std::vector<fs::path> files;
    static const char* names[3] = {"slice_yz.txt", "slice_xz.txt", "slice_xy.txt"};
    const auto& sp = vol.spec;
    mo += "# slice\tvariance_small\tvariance_large\twidth_ratio\tdeconvolved_width_ratio\n";
    for (int axis = 0; axis < 3; ++axis) {
        const int at = sp.dims[axis] / 2;
        const Eigen::MatrixXd slice = volume_slice(vol, axis, at);
        const int a = axis == 0 ? 1 : 0, b = axis == 2 ? 1 : 2;
        std::string text = "# poltomo volume slice\n" + header_lines(meta);
        text += "normal_axis\t" + std::to_string(axis) + "\n";
        text += "position\t" + format_double(sp.origin(axis) + at * sp.spacing(axis)) + "\n";
        text += "rows\taxis " + std::to_string(a) + " origin " + format_double(sp.origin(a)) + " step " +
                format_double(sp.spacing(a)) + " count " + std::to_string(slice.rows()) + "\n";
        text += "cols\taxis " + std::to_string(b) + " origin " + format_double(sp.origin(b)) + " step " +
                format_double(sp.spacing(b)) + " count " + std::to_string(slice.cols()) + "\n";
        text += matrix_text(slice);
        write_file_atomic(out_dir / names[axis], text);
        files.push_back(out_dir / names[axis]);
        try {
            Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(
                slice_covariance(slice, sp.origin(a), sp.spacing(a), sp.origin(b), sp.spacing(b)));
            const auto ev = es.eigenvalues();
            mo += std::string(names[axis]).substr(0, 8) + "\t" + format_double(ev(0)) + "\t" + format_double(ev(1)) +
                  "\t" + maybe_double(std::sqrt(ev(0) / ev(1))) + "\t" +
                  maybe_double(std::sqrt((ev(0) - s * s) / (ev(1) - s * s))) + "\n";
        } catch (const NumericalError&) {
            mo += std::string(names[axis]).substr(0, 8) + "\tundefined\tundefined\tundefined\tundefined\n";
        }
    }
    write_file_atomic(out_dir / "moments.txt", mo);
    files.push_back(out_dir / "moments.txt");

    const auto iso = isocontour_level_stats(vol, cfg.analysis.level);
    std::string hw = "# poltomo half widths at level fraction of the maximum\n" + header_lines(meta);
    hw += "level\t" + format_double(cfg.analysis.level) + "\n";
    hw += "voxels\t" + std::to_string(iso.voxel_count) + "\n";
    hw += "center\t" + vec_text(iso.center) + "\n";
    hw += "# axis\thalf_width\tdirection\n";
    for (int a = 0; a < 3; ++a)
        hw += std::to_string(a) + "\t" + format_double(iso.half_widths(a)) + "\t" + vec_text(iso.axes.col(a)) + "\n";
    write_file_atomic(out_dir / "hwhm.txt", hw);
    files.push_back(out_dir / "hwhm.txt");

    if (vol.photon_scale > 0.0 && vol.classical_mean.norm() > 0.0) {
        const auto map = sphere_sum_distribution(vol, cfg.analysis.sphere);
        std::string sm = "# poltomo distribution on the unit Poincare sphere (gnomonic patch, per steradian)\n" +
                         header_lines(meta);
        sm += "center\t" + vec_text(map.center) + "\n";
        sm += "e1\t" + vec_text(map.e1) + "\n";
        sm += "e2\t" + vec_text(map.e2) + "\n";
        sm += "half_range\t" + format_double(map.half_range) + "\n";
        sm += "integral\t" + format_double(map.integral()) + "\n";
        sm += "negative_mass_fraction\t" + format_double(map.negative_mass_fraction) + "\n";
        sm += "out_of_frame_fraction\t" + format_double(map.out_of_frame_fraction) + "\n";
        sm += "# alpha\tbeta\tdensity\n";
        for (int i = 0; i < map.n_alpha; ++i)
            for (int j = 0; j < map.n_beta; ++j)
                sm += format_double(map.alpha(i)) + "\t" + format_double(map.beta(j)) + "\t" +
                      format_double(map.values[static_cast<std::size_t>(i) * map.n_beta + j]) + "\n";
        write_file_atomic(out_dir / "sphere_map.txt", sm);
        files.push_back(out_dir / "sphere_map.txt");
    }
    return files;
}

std::vector<fs::path> analyze_blocks(const PipelineConfig& cfg, const PolarizationState& state, const Metadata& in_meta,
                                     const fs::path& out_dir) {
    const Metadata meta = stamp(cfg, in_meta);
    const AngleGrid grid = AngleGrid::full(cfg.analysis.q_theta, cfg.analysis.q_phi);
    const auto dirs = grid.directions();
    const auto weights = grid.sphere_weights();
    std::string st = "# poltomo density block statistics\n" + header_lines(meta);
    st += "trace\t" + format_double(state.trace()) + "\n";
    st += "# 2J\tweight\tpurity\tmin_eigenvalue\tmean_J\tq_normalization\tq_max\n";
    std::vector<fs::path> files;
    for (const auto& b : state.blocks()) {
        const auto am = build_angular_momentum(b.spin);
        const Vec3 mean_j((b.matrix * am.j1).trace().real(), (b.matrix * am.j2).trace().real(),
                          (b.matrix * am.j3).trace().real());
        const auto q = q_function(b, dirs);
        const double qmax = q.values.empty() ? 0.0 : *std::max_element(q.values.begin(), q.values.end());
        st += std::to_string(b.spin.two_j()) + "\t" + format_double(b.weight()) + "\t" + format_double(purity(b)) +
              "\t" + format_double(min_eigenvalue(b.matrix)) + "\t" + vec_text(mean_j) + "\t" +
              format_double(q_normalization(q, weights)) + "\t" + format_double(qmax) + "\n";
        const fs::path qp = out_dir / ("q_" + std::to_string(b.spin.two_j()) + ".txt");
        write_sphere_function(qp, q, meta);
        files.push_back(qp);
    }
    write_file_atomic(out_dir / "stats.txt", st);
    files.push_back(out_dir / "stats.txt");
    return files;
}

bool looks_like_volume(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    char magic[8] = {};
    in.read(magic, 8);
    return in.gcount() == 8 && std::equal(magic, magic + 8, kVolumeMagic);
}

}  // namespace

std::vector<fs::path> cmd_analyze(const PipelineConfig& cfg, const fs::path& input, const fs::path& out_dir) {
    fs::path file = input;
    if (fs::is_directory(input)) {
        if (fs::exists(input / "volume.ptv")) file = input / "volume.ptv";
        else if (fs::exists(input / "blocks.txt")) file = input / "blocks.txt";
        else throw FormatError(input.string() + ": holds neither volume.ptv nor blocks.txt");
    }
    if (!fs::exists(file)) throw FormatError("missing input " + file.string());
    if (looks_like_volume(file)) return analyze_volume(cfg, read_volume(file), out_dir);
    Metadata meta;
    const auto state = read_blocks(file, &meta);
    return analyze_blocks(cfg, state, meta, out_dir);
}

}  // namespace poltomo
