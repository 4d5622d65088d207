#include "poltomo/io.hpp"

#include "poltomo/error.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <system_error>
#include <unistd.h>

namespace poltomo {

namespace fs = std::filesystem;

std::string format_double(double x) {
    if (!std::isfinite(x)) throw DomainError("cannot serialize a non-finite value");
    std::array<char, 32> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x);
    if (ec != std::errc{}) throw DomainError("number formatting failed");
    return {buf.data(), end};
}

double parse_double(std::string_view s, std::string_view what) {
    double v = 0.0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || end != s.data() + s.size() || !std::isfinite(v))
        throw FormatError("bad number for " + std::string(what) + ": '" + std::string(s) + "'");
    return v;
}

std::int64_t parse_int(std::string_view s, std::string_view what) {
    std::int64_t v = 0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || end != s.data() + s.size())
        throw FormatError("bad integer for " + std::string(what) + ": '" + std::string(s) + "'");
    return v;
}

std::uint64_t parse_uint(std::string_view s, std::string_view what) {
    std::uint64_t v = 0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || end != s.data() + s.size())
        throw FormatError("bad count for " + std::string(what) + ": '" + std::string(s) + "'");
    return v;
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
    const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create directory " + dir.string() + ": " + ec.message());
    const fs::path tmp = dir / ("." + path.filename().string() + ".tmp" + std::to_string(::getpid()));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            out.close();
            fs::remove(tmp, ec);
            throw ConfigError("write failed for " + path.string());
        }
    }
    fs::rename(tmp, path, ec);
    if (ec) {
        std::error_code ignore;
        fs::remove(tmp, ignore);
        throw ConfigError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
    }
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

std::string to_string(TomogramKind k) {
    return k == TomogramKind::discrete ? "discrete" : "histogram";
}

namespace {

// Line reader over a text file that remembers where it is for error messages.
class LineReader {
public:
    LineReader(std::string text, std::string name) : text_(std::move(text)), name_(std::move(name)) {}

    // Next non-comment, non-empty line.
    std::optional<std::string_view> next() {
        while (pos_ < text_.size()) {
            const std::size_t end = std::min(text_.find('\n', pos_), text_.size());
            line_start_ = pos_;
            std::string_view line(text_.data() + pos_, end - pos_);
            pos_ = end + 1;
            ++line_no_;
            // Writers terminate every line, so a bare tail means a cut-off file.
            if (end == text_.size()) fail("truncated file (last line has no newline)");
            if (line.empty() || line.front() == '#') continue;
            return line;
        }
        line_start_ = text_.size();
        return std::nullopt;
    }

    std::string_view expect(std::string_view what) {
        auto l = next();
        if (!l) fail("unexpected end of file, expected " + std::string(what));
        return *l;
    }

    [[noreturn]] void fail(const std::string& msg) const {
        throw FormatError(name_ + ": line " + std::to_string(line_no_) + " (byte offset " +
                          std::to_string(line_start_) + "): " + msg);
    }

    // Re-throws parse errors from helpers with the current position attached.
    template <class F>
    auto guard(F&& f) const {
        try {
            return f();
        } catch (const FormatError& e) {
            fail(e.what());
        } catch (const DomainError& e) {
            fail(e.what());
        }
    }

private:
    std::string text_;
    std::string name_;
    std::size_t pos_ = 0;
    std::size_t line_start_ = 0;
    std::size_t line_no_ = 0;
};

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const std::size_t end = std::min(s.find(sep, start), s.size());
        if (end > start) out.push_back(s.substr(start, end - start));
        start = end + 1;
    }
    return out;
}

std::string join_doubles(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ' ';
        out += format_double(v[i]);
    }
    return out;
}

std::vector<double> parse_doubles(std::string_view s, std::string_view what) {
    std::vector<double> out;
    for (auto tok : split(s, ' ')) out.push_back(parse_double(tok, what));
    return out;
}

void check_meta_text(const std::string& s) {
    if (s.find_first_of("\n\r") != std::string::npos)
        throw DomainError("metadata may not contain line breaks: '" + s + "'");
}

void put_meta(std::string& out, const Metadata& meta) {
    for (const auto& [k, v] : meta) {
        check_meta_text(k);
        check_meta_text(v);
        if (k.empty() || k.find_first_of(" =\t") != std::string::npos)
            throw DomainError("bad metadata key '" + k + "'");
        out += "meta." + k + " = " + v + "\n";
    }
}

// key = value header, stopping at `end_header` or end of file.
std::map<std::string, std::string> read_header(LineReader& r, bool until_marker) {
    std::map<std::string, std::string> kv;
    while (auto l = until_marker ? std::optional(r.expect("end_header")) : r.next()) {
        if (until_marker && *l == "end_header") break;
        const std::size_t eq = l->find(" = ");
        if (eq == std::string_view::npos) r.fail("expected 'key = value'");
        std::string key(l->substr(0, eq));
        if (!kv.emplace(key, std::string(l->substr(eq + 3))).second) r.fail("duplicate key " + key);
    }
    return kv;
}

const std::string& require(const std::map<std::string, std::string>& kv, const std::string& key,
                           const std::string& file) {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(file + ": missing key '" + key + "'");
    return it->second;
}

Metadata extract_meta(const std::map<std::string, std::string>& kv) {
    Metadata meta;
    for (const auto& [k, v] : kv)
        if (k.rfind("meta.", 0) == 0) meta.emplace(k.substr(5), v);
    return meta;
}

void check_version(const std::map<std::string, std::string>& kv, const std::string& file) {
    const auto v = parse_int(require(kv, "format_version", file), "format_version");
    if (v != kFormatVersion)
        throw FormatError(file + ": format_version " + std::to_string(v) + " is not supported (reader is " +
                          std::to_string(kFormatVersion) + ")");
}

std::string grid_manifest(const AngleGrid& g) {
    std::string out;
    out += "coverage = " + to_string(g.coverage) + "\n";
    out += "theta_rule = " + to_string(g.rule) + "\n";
    out += "n_theta = " + std::to_string(g.theta.size()) + "\n";
    out += "n_phi = " + std::to_string(g.phi.size()) + "\n";
    out += "theta = " + join_doubles(g.theta) + "\n";
    out += "phi = " + join_doubles(g.phi) + "\n";
    out += "records_per_set = " + std::to_string(g.size()) + "\n";
    return out;
}

AngleGrid grid_from_manifest(const std::map<std::string, std::string>& kv, const std::string& file) {
    AngleGrid g;
    try {
        g.coverage = parse_coverage(require(kv, "coverage", file));
        g.rule = parse_theta_rule(require(kv, "theta_rule", file));
    } catch (const FormatError&) {
        throw;
    } catch (const Error& e) {
        throw FormatError(file + ": " + e.what());
    }
    g.theta = parse_doubles(require(kv, "theta", file), "theta");
    g.phi = parse_doubles(require(kv, "phi", file), "phi");
    if (static_cast<std::size_t>(parse_uint(require(kv, "n_theta", file), "n_theta")) != g.theta.size() ||
        static_cast<std::size_t>(parse_uint(require(kv, "n_phi", file), "n_phi")) != g.phi.size())
        throw FormatError(file + ": angle counts do not match the listed angles");
    try {
        g.validate();
    } catch (const Error& e) {
        throw FormatError(file + ": " + e.what());
    }
    return g;
}

std::string direction_fields(std::size_t idx, const Direction& d) {
    return std::to_string(idx) + "\t" + format_double(d.theta()) + "\t" + format_double(d.phi());
}

void check_direction(LineReader& r, const AngleGrid& grid, std::size_t expect_idx,
                     std::string_view idx, std::string_view th, std::string_view ph) {
    r.guard([&] {
        if (parse_uint(idx, "record index") != expect_idx)
            r.fail("record index " + std::string(idx) + " out of order, expected " +
                   std::to_string(expect_idx));
        const Direction want = grid.direction(expect_idx);
        const double t = parse_double(th, "theta"), p = parse_double(ph, "phi");
        if (std::abs(t - want.theta()) > 1e-12 || std::abs(p - want.phi()) > 1e-12)
            r.fail("record angles do not match grid node " + std::to_string(expect_idx));
        return 0;
    });
}

fs::path manifest_path(const fs::path& dir) { return dir / "manifest.txt"; }
fs::path records_path(const fs::path& dir) { return dir / "records.txt"; }

std::map<std::string, std::string> load_manifest(const fs::path& dir) {
    const fs::path p = manifest_path(dir);
    if (!fs::exists(p)) throw FormatError("missing manifest: " + p.string());
    LineReader r(read_file(p), p.string());
    auto kv = read_header(r, false);
    check_version(kv, p.string());
    return kv;
}

}  // namespace

TomogramKind peek_tomogram_kind(const fs::path& dir) {
    const auto kv = load_manifest(dir);
    const auto& kind = require(kv, "kind", manifest_path(dir).string());
    if (kind == "discrete") return TomogramKind::discrete;
    if (kind == "histogram") return TomogramKind::histogram;
    throw FormatError(manifest_path(dir).string() + ": unknown kind '" + kind + "'");
}

// ------------------------------------------------------------ discrete sets

std::string encode_manifest(const DiscreteTomogramSet& set) {
    std::string out = "# poltomo tomogram manifest\n";
    out += "format_version = " + std::to_string(kFormatVersion) + "\n";
    out += "kind = discrete\n";
    out += grid_manifest(set.grid);
    std::string blocks;
    for (const auto& b : set.blocks) blocks += (blocks.empty() ? "" : " ") + std::to_string(b.spin.two_j());
    out += "blocks = " + blocks + "\n";
    out += std::string("totals = ") + (set.totals.empty() ? "0" : "1") + "\n";
    put_meta(out, set.metadata);
    return out;
}

namespace {

void put_discrete(std::string& out, const std::string& label, std::size_t idx, const DiscreteTomogram& t) {
    out += label + "\t" + direction_fields(idx, t.dir);
    for (const auto& [two_m, w] : t.values) out += "\t" + std::to_string(two_m) + ":" + format_double(w);
    out += "\n";
}

DiscreteTomogram parse_discrete(LineReader& r, std::string_view line, const AngleGrid& grid,
                                std::size_t idx, std::optional<SpinIndex> spin,
                                const std::string& label) {
    const auto f = split(line, '\t');
    if (f.size() < 4) r.fail("record needs label, index, theta and phi");
    if (f[0] != label) r.fail("expected record label " + label + ", got " + std::string(f[0]));
    check_direction(r, grid, idx, f[1], f[2], f[3]);
    DiscreteTomogram t;
    t.spin = spin;
    t.dir = grid.direction(idx);
    for (std::size_t i = 4; i < f.size(); ++i) {
        const auto colon = f[i].find(':');
        if (colon == std::string_view::npos) r.fail("expected 2m:w pair, got '" + std::string(f[i]) + "'");
        r.guard([&] {
            const int two_m = static_cast<int>(parse_int(f[i].substr(0, colon), "2m"));
            if (spin && !spin->contains(two_m))
                r.fail("2m = " + std::to_string(two_m) + " outside the block");
            if (!t.values.emplace(two_m, parse_double(f[i].substr(colon + 1), "probability")).second)
                r.fail("duplicate 2m = " + std::to_string(two_m));
            return 0;
        });
    }
    return t;
}

}  // namespace

std::string encode_records(const DiscreteTomogramSet& set) {
    std::string out = "# label\tindex\ttheta\tphi\t2m:w ...\n";
    for (const auto& b : set.blocks) {
        if (b.tomograms.size() != set.grid.size())
            throw DomainError("block 2J=" + std::to_string(b.spin.two_j()) + " has " +
                              std::to_string(b.tomograms.size()) + " records for a grid of " +
                              std::to_string(set.grid.size()));
        for (std::size_t i = 0; i < b.tomograms.size(); ++i)
            put_discrete(out, std::to_string(b.spin.two_j()), i, b.tomograms[i]);
    }
    if (!set.totals.empty() && set.totals.size() != set.grid.size())
        throw DomainError("total tomograms do not cover the grid");
    for (std::size_t i = 0; i < set.totals.size(); ++i) put_discrete(out, "total", i, set.totals[i]);
    return out;
}

void write_tomogram_set(const fs::path& dir, const DiscreteTomogramSet& set) {
    const std::string records = encode_records(set);
    write_file_atomic(records_path(dir), records);
    write_file_atomic(manifest_path(dir), encode_manifest(set));
}

DiscreteTomogramSet read_discrete_set(const fs::path& dir) {
    const auto kv = load_manifest(dir);
    const std::string mname = manifest_path(dir).string();
    if (require(kv, "kind", mname) != "discrete")
        throw FormatError(mname + ": holds " + require(kv, "kind", mname) +
                          " tomograms; the exact path needs discrete per-J tomograms");
    DiscreteTomogramSet set;
    set.grid = grid_from_manifest(kv, mname);
    set.metadata = extract_meta(kv);
    std::vector<int> two_js;
    for (auto tok : split(require(kv, "blocks", mname), ' '))
        two_js.push_back(static_cast<int>(parse_int(tok, "blocks")));
    const bool totals = parse_uint(require(kv, "totals", mname), "totals") != 0;

    const fs::path rp = records_path(dir);
    if (!fs::exists(rp)) throw FormatError("missing records file: " + rp.string());
    LineReader r(read_file(rp), rp.string());
    for (int tj : two_js) {
        BlockTomograms b{r.guard([&] { return SpinIndex(tj); }), {}};
        for (std::size_t i = 0; i < set.grid.size(); ++i)
            b.tomograms.push_back(
                parse_discrete(r, r.expect("block record"), set.grid, i, b.spin, std::to_string(tj)));
        set.blocks.push_back(std::move(b));
    }
    if (totals)
        for (std::size_t i = 0; i < set.grid.size(); ++i)
            set.totals.push_back(parse_discrete(r, r.expect("total record"), set.grid, i, std::nullopt, "total"));
    if (r.next()) r.fail("more records than the manifest announces");
    return set;
}

// ----------------------------------------------------------- histogram sets

std::string encode_manifest(const HistogramTomogramSet& set) {
    std::string out = "# poltomo tomogram manifest\n";
    out += "format_version = " + std::to_string(kFormatVersion) + "\n";
    out += "kind = histogram\n";
    out += grid_manifest(set.grid);
    out += "units = shot_noise\n";
    out += "classical_mean = " + join_doubles({set.classical_mean.x(), set.classical_mean.y(),
                                               set.classical_mean.z()}) + "\n";
    out += "photon_scale = " + format_double(set.photon_scale) + "\n";
    put_meta(out, set.metadata);
    return out;
}

std::string encode_records(const HistogramTomogramSet& set) {
    if (set.records.size() != set.grid.size())
        throw DomainError("histogram set has " + std::to_string(set.records.size()) +
                          " records for a grid of " + std::to_string(set.grid.size()));
    std::string out =
        "# index\ttheta\tphi\tlo\thi\ttotal\tclipped\tshot_noise_variance\tbins\tcounts...\n";
    for (std::size_t i = 0; i < set.records.size(); ++i) {
        const auto& h = set.records[i];
        out += direction_fields(i, h.dir) + "\t" + format_double(h.lo) + "\t" + format_double(h.hi) +
               "\t" + std::to_string(h.total_samples) + "\t" + std::to_string(h.clipped) + "\t" +
               format_double(h.shot_noise_variance) + "\t" + std::to_string(h.counts.size()) + "\t";
        for (std::size_t k = 0; k < h.counts.size(); ++k) {
            if (k) out += ' ';
            out += std::to_string(h.counts[k]);
        }
        out += "\n";
    }
    return out;
}

void write_tomogram_set(const fs::path& dir, const HistogramTomogramSet& set) {
    const std::string records = encode_records(set);
    write_file_atomic(records_path(dir), records);
    write_file_atomic(manifest_path(dir), encode_manifest(set));
}

HistogramTomogramSet read_histogram_set(const fs::path& dir) {
    const auto kv = load_manifest(dir);
    const std::string mname = manifest_path(dir).string();
    if (require(kv, "kind", mname) != "histogram")
        throw FormatError(mname + ": holds " + require(kv, "kind", mname) +
                          " tomograms; the radon path needs histogram tomograms");
    if (require(kv, "units", mname) != "shot_noise")
        throw FormatError(mname + ": units '" + kv.at("units") + "' are not shot-noise units");
    HistogramTomogramSet set;
    set.grid = grid_from_manifest(kv, mname);
    set.metadata = extract_meta(kv);
    const auto mean = parse_doubles(require(kv, "classical_mean", mname), "classical_mean");
    if (mean.size() != 3) throw FormatError(mname + ": classical_mean needs 3 components");
    set.classical_mean = Vec3(mean[0], mean[1], mean[2]);
    set.photon_scale = parse_double(require(kv, "photon_scale", mname), "photon_scale");

    const fs::path rp = records_path(dir);
    if (!fs::exists(rp)) throw FormatError("missing records file: " + rp.string());
    LineReader r(read_file(rp), rp.string());
    for (std::size_t i = 0; i < set.grid.size(); ++i) {
        const auto f = split(r.expect("histogram record"), '\t');
        if (f.size() != 10) r.fail("histogram record needs 10 tab-separated fields");
        check_direction(r, set.grid, i, f[0], f[1], f[2]);
        HistogramTomogram h;
        h.dir = set.grid.direction(i);
        r.guard([&] {
            h.lo = parse_double(f[3], "lo");
            h.hi = parse_double(f[4], "hi");
            h.total_samples = parse_uint(f[5], "total");
            h.clipped = parse_uint(f[6], "clipped");
            h.shot_noise_variance = parse_double(f[7], "shot_noise_variance");
            const auto nbins = parse_uint(f[8], "bins");
            for (auto tok : split(f[9], ' ')) h.counts.push_back(parse_uint(tok, "count"));
            if (h.counts.size() != nbins) r.fail("bin count does not match the listed counts");
            if (!(h.hi > h.lo)) r.fail("empty histogram range");
            std::uint64_t sum = 0;
            for (auto c : h.counts) sum += c;
            if (sum != h.total_samples) r.fail("counts do not add up to the total");
            return 0;
        });
        set.records.push_back(std::move(h));
    }
    if (r.next()) r.fail("more records than the grid has nodes");
    return set;
}

// ------------------------------------------------------------ density blocks

std::string encode_blocks(const PolarizationState& state, const Metadata& meta) {
    std::string out = "# poltomo density blocks (descending-m basis, rows of re im pairs)\n";
    out += "format_version = " + std::to_string(kFormatVersion) + "\n";
    out += "blocks = " + std::to_string(state.blocks().size()) + "\n";
    put_meta(out, meta);
    out += "end_header\n";
    for (const auto& b : state.blocks()) {
        out += "block " + std::to_string(b.spin.two_j()) + "\n";
        for (Eigen::Index i = 0; i < b.matrix.rows(); ++i) {
            for (Eigen::Index j = 0; j < b.matrix.cols(); ++j) {
                if (j) out += ' ';
                out += format_double(b.matrix(i, j).real()) + " " + format_double(b.matrix(i, j).imag());
            }
            out += "\n";
        }
    }
    return out;
}

void write_blocks(const fs::path& path, const PolarizationState& state, const Metadata& meta) {
    write_file_atomic(path, encode_blocks(state, meta));
}

PolarizationState read_blocks(const fs::path& path, Metadata* meta) {
    LineReader r(read_file(path), path.string());
    const auto kv = read_header(r, true);
    check_version(kv, path.string());
    if (meta) *meta = extract_meta(kv);
    const auto n = parse_uint(require(kv, "blocks", path.string()), "blocks");
    std::vector<DensityBlock> blocks;
    for (std::uint64_t b = 0; b < n; ++b) {
        const auto head = r.expect("block header");
        if (head.rfind("block ", 0) != 0) r.fail("expected 'block <2J>'");
        const SpinIndex spin = r.guard([&] {
            return SpinIndex(static_cast<int>(parse_int(head.substr(6), "2J")));
        });
        CMatrix m(spin.dim(), spin.dim());
        for (int i = 0; i < spin.dim(); ++i) {
            const auto f = split(r.expect("matrix row"), ' ');
            if (f.size() != static_cast<std::size_t>(2 * spin.dim())) r.fail("matrix row has the wrong length");
            r.guard([&] {
                for (int j = 0; j < spin.dim(); ++j)
                    m(i, j) = cplx(parse_double(f[2 * j], "re"), parse_double(f[2 * j + 1], "im"));
                return 0;
            });
        }
        blocks.push_back({spin, std::move(m)});
    }
    if (r.next()) r.fail("trailing data after the last block");
    return r.guard([&] { return PolarizationState(std::move(blocks)); });
}

// ----------------------------------------------------------- sphere functions

std::string encode_sphere_function(const SphereFunction& q, const Metadata& meta) {
    if (q.directions.size() != q.values.size())
        throw DomainError("sphere function: direction/value count mismatch");
    std::string out = "# poltomo sphere function\n";
    out += "format_version = " + std::to_string(kFormatVersion) + "\n";
    out += "two_j = " + std::to_string(q.spin.two_j()) + "\n";
    out += "points = " + std::to_string(q.values.size()) + "\n";
    put_meta(out, meta);
    out += "end_header\n";
    out += "# theta\tphi\tvalue\n";
    for (std::size_t i = 0; i < q.values.size(); ++i)
        out += format_double(q.directions[i].theta()) + "\t" + format_double(q.directions[i].phi()) +
               "\t" + format_double(q.values[i]) + "\n";
    return out;
}

void write_sphere_function(const fs::path& path, const SphereFunction& q, const Metadata& meta) {
    write_file_atomic(path, encode_sphere_function(q, meta));
}

SphereFunction read_sphere_function(const fs::path& path, Metadata* meta) {
    LineReader r(read_file(path), path.string());
    const auto kv = read_header(r, true);
    check_version(kv, path.string());
    if (meta) *meta = extract_meta(kv);
    SphereFunction q;
    q.spin = r.guard([&] {
        return SpinIndex(static_cast<int>(parse_int(require(kv, "two_j", path.string()), "two_j")));
    });
    const auto n = parse_uint(require(kv, "points", path.string()), "points");
    for (std::uint64_t i = 0; i < n; ++i) {
        const auto f = split(r.expect("sample"), '\t');
        if (f.size() != 3) r.fail("sample needs theta, phi and value");
        r.guard([&] {
            q.directions.emplace_back(parse_double(f[0], "theta"), parse_double(f[1], "phi"));
            q.values.push_back(parse_double(f[2], "value"));
            return 0;
        });
    }
    if (r.next()) r.fail("more samples than announced");
    return q;
}

// ------------------------------------------------------------------ volumes

namespace {

constexpr std::size_t kVolumeHeader = 108;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xffu);
}
void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out += static_cast<char>((v >> (8 * i)) & 0xffu);
}
void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class ByteReader {
public:
    explicit ByteReader(std::string_view b) : b_(b) {}
    std::size_t offset() const { return pos_; }
    void need(std::size_t n, const char* what) const {
        if (b_.size() - pos_ < n)
            throw FormatError("volume: truncated at byte offset " + std::to_string(pos_) + " while reading " +
                              what);
    }
    std::uint64_t uint(int bytes, const char* what) {
        need(bytes, what);
        std::uint64_t v = 0;
        for (int i = 0; i < bytes; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
        pos_ += bytes;
        return v;
    }
    double f64(const char* what) { return std::bit_cast<double>(uint(8, what)); }
    std::string_view bytes(std::size_t n, const char* what) {
        need(n, what);
        auto s = b_.substr(pos_, n);
        pos_ += n;
        return s;
    }

private:
    std::string_view b_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string encode_volume(const VolumeGrid& grid) {
    grid.spec.validate();
    if (grid.values.size() != grid.spec.voxels())
        throw DomainError("volume: value count does not match the grid");
    std::string meta;
    for (const auto& [k, v] : grid.metadata) {
        check_meta_text(k);
        check_meta_text(v);
        if (k.empty() || k.find('=') != std::string::npos) throw DomainError("bad metadata key '" + k + "'");
        meta += k + "=" + v + "\n";
    }
    std::string out;
    out.reserve(kVolumeHeader + meta.size() + 8 * grid.values.size());
    out.append(kVolumeMagic, 8);
    put_u32(out, kFormatVersion);
    for (int d : grid.spec.dims) put_u32(out, static_cast<std::uint32_t>(d));
    for (int a = 0; a < 3; ++a) put_f64(out, grid.spec.origin(a));
    for (int a = 0; a < 3; ++a) put_f64(out, grid.spec.spacing(a));
    for (int a = 0; a < 3; ++a) put_f64(out, grid.classical_mean(a));
    put_f64(out, grid.photon_scale);
    put_u32(out, static_cast<std::uint32_t>(meta.size()));
    out += meta;
    for (double v : grid.values) put_f64(out, v);
    return out;
}

VolumeGrid decode_volume(std::string_view bytes) {
    ByteReader r(bytes);
    if (r.bytes(8, "magic") != std::string_view(kVolumeMagic, 8))
        throw FormatError("volume: bad magic at byte offset 0 (not a poltomo volume)");
    const auto version = r.uint(4, "version");
    if (version != static_cast<std::uint64_t>(kFormatVersion))
        throw FormatError("volume: format version " + std::to_string(version) + " at byte offset 8 is not supported");
    VolumeGrid g;
    for (int a = 0; a < 3; ++a) {
        const std::size_t at = r.offset();
        const auto d = static_cast<std::int32_t>(static_cast<std::uint32_t>(r.uint(4, "dims")));
        if (d < 1) throw FormatError("volume: bad dimension at byte offset " + std::to_string(at));
        g.spec.dims[a] = d;
    }
    for (int a = 0; a < 3; ++a) g.spec.origin(a) = r.f64("origin");
    for (int a = 0; a < 3; ++a) g.spec.spacing(a) = r.f64("spacing");
    for (int a = 0; a < 3; ++a) g.classical_mean(a) = r.f64("classical mean");
    g.photon_scale = r.f64("photon scale");
    try {
        g.spec.validate();
    } catch (const Error& e) {
        throw FormatError(std::string("volume: invalid header: ") + e.what());
    }
    const std::size_t meta_len = r.uint(4, "metadata length");
    const std::size_t meta_at = r.offset();
    const auto meta = r.bytes(meta_len, "metadata");
    std::size_t start = 0;
    while (start < meta.size()) {
        const std::size_t end = meta.find('\n', start);
        if (end == std::string_view::npos)
            throw FormatError("volume: unterminated metadata line at byte offset " +
                              std::to_string(meta_at + start));
        const auto line = meta.substr(start, end - start);
        const std::size_t eq = line.find('=');
        if (eq == std::string_view::npos || eq == 0)
            throw FormatError("volume: bad metadata line at byte offset " + std::to_string(meta_at + start));
        g.metadata.emplace(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)));
        start = end + 1;
    }
    const std::size_t n = g.spec.voxels();
    const std::size_t remaining = bytes.size() - r.offset();
    if (remaining != 8 * n)
        throw FormatError("volume: data section at byte offset " + std::to_string(r.offset()) + " holds " +
                          std::to_string(remaining) + " bytes, header promises " + std::to_string(8 * n));
    g.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) g.values[i] = r.f64("values");
    return g;
}

void write_volume(const fs::path& path, const VolumeGrid& grid) {
    write_file_atomic(path, encode_volume(grid));
}

VolumeGrid read_volume(const fs::path& path) { return decode_volume(read_file(path)); }

}  // namespace poltomo
