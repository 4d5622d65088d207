#include "poltomo/measurement.hpp"

#include "poltomo/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace poltomo {

// ---------------------------------------------------------------- grids

void gauss_legendre_rule(int n, std::vector<double>& nodes, std::vector<double>& weights) {
    if (n < 1) throw DomainError("gauss_legendre_rule: need at least one node");
    nodes.assign(n, 0.0);
    weights.assign(n, 0.0);
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double x = std::cos(kPi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        // Recompute the derivative at the converged node.
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= n; ++k) {
            const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
            p0 = p1;
            p1 = p2;
        }
        dp = n * (x * p1 - p0) / (x * x - 1.0);
        const double w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = x;
        nodes[i] = -x;
        weights[i] = weights[n - 1 - i] = w;
    }
    if (n % 2 == 1) nodes[n / 2] = 0.0;
}

std::vector<Direction> AngleGrid::directions() const {
    std::vector<Direction> out;
    out.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) out.push_back(direction(i));
    return out;
}

void AngleGrid::validate() const {
    if (theta.size() < 2 || phi.size() < 2)
        throw CoverageError("angle grid: need at least 2 points per axis");
    if (!std::is_sorted(theta.begin(), theta.end()) || !std::is_sorted(phi.begin(), phi.end()))
        throw CoverageError("angle grid: axes must be sorted");
    if (theta.front() < -1e-12 || theta.back() > kPi + 1e-12)
        throw CoverageError("angle grid: theta outside [0, pi]");
    if (phi.front() < -1e-12 || phi.back() >= 2.0 * kPi)
        throw CoverageError("angle grid: phi outside [0, 2 pi)");
}

std::vector<double> AngleGrid::sphere_weights() const {
    validate();
    if (coverage != Coverage::full_sphere)
        throw CoverageError("angle grid: sphere weights need full-sphere coverage");

    std::vector<double> w_theta(theta.size());
    if (rule == ThetaRule::gauss_legendre) {
        std::vector<double> x, w;
        gauss_legendre_rule(static_cast<int>(theta.size()), x, w);
        // theta ascending <=> cos(theta) descending.
        for (std::size_t i = 0; i < theta.size(); ++i) w_theta[i] = w[theta.size() - 1 - i];
    } else {
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double lo = i == 0 ? 0.0 : 0.5 * (theta[i - 1] + theta[i]);
            const double hi = i + 1 == theta.size() ? kPi : 0.5 * (theta[i] + theta[i + 1]);
            w_theta[i] = std::cos(lo) - std::cos(hi);
        }
    }

    const std::size_t np = phi.size();
    std::vector<double> w_phi(np);
    for (std::size_t j = 0; j < np; ++j) {
        const double prev = j == 0 ? phi[np - 1] - 2.0 * kPi : phi[j - 1];
        const double next = j + 1 == np ? phi[0] + 2.0 * kPi : phi[j + 1];
        w_phi[j] = 0.5 * (next - prev);
    }

    std::vector<double> out(size());
    for (std::size_t i = 0; i < theta.size(); ++i)
        for (std::size_t j = 0; j < np; ++j) out[index(i, j)] = w_theta[i] * w_phi[j];
    return out;
}

namespace {

std::vector<double> pole_to_pole(int n) {
    if (n < 2) throw DomainError("angle grid: need at least 2 theta values");
    std::vector<double> t(n);
    for (int i = 0; i < n; ++i) t[i] = kPi * i / (n - 1);
    t.back() = kPi;
    return t;
}

std::vector<double> midpoints(int n, double span) {
    if (n < 2) throw DomainError("angle grid: need at least 2 phi values");
    std::vector<double> p(n);
    for (int j = 0; j < n; ++j) p[j] = span * (j + 0.5) / n;
    return p;
}

}  // namespace

AngleGrid AngleGrid::quarter(int n_theta, int n_phi) {
    return {pole_to_pole(n_theta), midpoints(n_phi, 0.5 * kPi), Coverage::quarter_sphere,
            ThetaRule::cell};
}

AngleGrid AngleGrid::full(int n_theta, int n_phi) {
    return {pole_to_pole(n_theta), midpoints(n_phi, 2.0 * kPi), Coverage::full_sphere,
            ThetaRule::cell};
}

AngleGrid AngleGrid::gauss_legendre(int n_theta, int n_phi) {
    if (n_theta < 1 || n_phi < 1) throw DomainError("angle grid: empty quadrature");
    std::vector<double> x, w;
    gauss_legendre_rule(n_theta, x, w);
    AngleGrid g;
    g.theta.resize(n_theta);
    for (int i = 0; i < n_theta; ++i) g.theta[i] = std::acos(x[n_theta - 1 - i]);
    g.phi.resize(n_phi);
    for (int j = 0; j < n_phi; ++j) g.phi[j] = 2.0 * kPi * j / n_phi;
    g.coverage = Coverage::full_sphere;
    g.rule = ThetaRule::gauss_legendre;
    return g;
}

// ---------------------------------------------------------------- tomograms

double DiscreteTomogram::total() const {
    double t = 0.0;
    for (const auto& [two_m, w] : values) t += w;
    return t;
}

double DiscreteTomogram::moment(int order) const {
    double t = 0.0;
    for (const auto& [two_m, w] : values) t += std::pow(0.5 * two_m, order) * w;
    return t;
}

std::vector<double> HistogramTomogram::edges() const {
    std::vector<double> e(counts.size() + 1);
    const double n = static_cast<double>(counts.size());
    for (std::size_t i = 0; i <= counts.size(); ++i) e[i] = lo + (hi - lo) * (static_cast<double>(i) / n);
    e.back() = hi;
    return e;
}

CMatrix povm_element(SpinIndex spin, int two_m, const Direction& dir) {
    const CVector v = rotated_basis_state(spin, two_m, dir);
    return v * v.adjoint();
}

DiscreteTomogram exact_tomogram(const DensityBlock& block, const Direction& dir,
                                const SpinRotator& rotator) {
    const SpinIndex spin = block.spin;
    const CMatrix r = rotator.rotation(dir);
    const CMatrix rho_r = block.matrix * r;
    DiscreteTomogram t{spin, dir, {}};
    for (int k = 0; k < spin.dim(); ++k) {
        const double w = r.col(k).dot(rho_r.col(k)).real();  // <m|R^dag rho R|m>
        t.values[spin.two_m(k)] = w;
    }
    return t;
}

DiscreteTomogram exact_tomogram(const DensityBlock& block, const Direction& dir) {
    return exact_tomogram(block, dir, SpinRotator(block.spin));
}

DiscreteTomogram exact_tomogram(const PolarizationState& state, const Direction& dir,
                                SpinIndex spin) {
    if (const DensityBlock* b = state.find(spin.two_j())) return exact_tomogram(*b, dir);
    DiscreteTomogram t{spin, dir, {}};
    for (int k = 0; k < spin.dim(); ++k) t.values[spin.two_m(k)] = 0.0;
    return t;
}

DiscreteTomogram total_tomogram(const PolarizationState& state, const Direction& dir) {
    DiscreteTomogram out{std::nullopt, dir, {}};
    for (const auto& b : state.blocks()) {
        for (const auto& [two_m, w] : exact_tomogram(b, dir).values) out.values[two_m] += w;
    }
    return out;
}

DiscreteTomogramSet exact_scan(const PolarizationState& state, const AngleGrid& grid,
                               bool with_totals) {
    DiscreteTomogramSet set;
    set.grid = grid;
    const auto dirs = grid.directions();
    for (const auto& b : state.blocks()) {
        const SpinRotator rot(b.spin);
        BlockTomograms bt{b.spin, std::vector<DiscreteTomogram>(dirs.size())};
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(dirs.size()); ++i)
            bt.tomograms[i] = exact_tomogram(b, dirs[i], rot);
        set.blocks.push_back(std::move(bt));
    }
    if (with_totals) {
        set.totals.resize(dirs.size());
        for (std::size_t i = 0; i < dirs.size(); ++i) {
            DiscreteTomogram t{std::nullopt, dirs[i], {}};
            for (const auto& bt : set.blocks)
                for (const auto& [two_m, w] : bt.tomograms[i].values) t.values[two_m] += w;
            set.totals[i] = std::move(t);
        }
    }
    return set;
}

// ---------------------------------------------------------------- sampling

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    return mix(mix(master) ^ mix(stream + 0x632be59bd9b4e019ULL));
}

HistogramTomogram sample_counts(const DiscreteTomogram& tomogram, std::uint64_t n_samples,
                                std::uint64_t seed) {
    if (n_samples == 0) throw DomainError("sample_counts: n_samples must be positive");
    if (tomogram.values.empty()) throw DomainError("sample_counts: empty tomogram");
    const double total = tomogram.total();
    if (!(total > 0.0)) throw DomainError("sample_counts: tomogram has no probability mass");

    const int lo_label = tomogram.values.begin()->first;
    const int hi_label = tomogram.values.rbegin()->first;
    int gap = 0;
    for (auto it = std::next(tomogram.values.begin()); it != tomogram.values.end(); ++it)
        gap = std::gcd(gap, it->first - std::prev(it)->first);
    if (gap == 0) gap = 2;
    const std::size_t bins = static_cast<std::size_t>((hi_label - lo_label) / gap + 1);

    std::vector<double> probs(bins, 0.0);
    for (const auto& [two_m, w] : tomogram.values)
        probs[static_cast<std::size_t>((two_m - lo_label) / gap)] = std::max(w, 0.0) / total;

    HistogramTomogram h;
    h.dir = tomogram.dir;
    const double step = 0.5 * gap;
    h.lo = 0.5 * lo_label - 0.5 * step;
    h.hi = 0.5 * hi_label + 0.5 * step;
    h.counts.assign(bins, 0);
    h.total_samples = n_samples;

    std::mt19937_64 rng(seed);
    std::discrete_distribution<std::size_t> pick(probs.begin(), probs.end());
    for (std::uint64_t s = 0; s < n_samples; ++s) ++h.counts[pick(rng)];
    return h;
}

DiscreteTomogram empirical_tomogram(const HistogramTomogram& hist, std::optional<SpinIndex> spin,
                                    double weight) {
    DiscreteTomogram t{spin, hist.dir, {}};
    for (std::size_t i = 0; i < hist.bins(); ++i) {
        const int two_m = static_cast<int>(std::lround(2.0 * hist.center(i)));
        if (spin && !spin->contains(two_m)) continue;
        t.values[two_m] = weight * static_cast<double>(hist.counts[i]) /
                          static_cast<double>(hist.total_samples);
    }
    if (spin)
        for (int k = 0; k < spin->dim(); ++k) t.values.try_emplace(spin->two_m(k), 0.0);
    return t;
}

HistogramTomogram gaussian_sideband_tomogram(const GaussianStokesModel& model, const Direction& dir,
                                             std::uint64_t n_samples, std::uint64_t seed,
                                             const SidebandOptions& options) {
    if (options.bins < 2) throw DomainError("gaussian_sideband_tomogram: need at least 2 bins");
    if (n_samples == 0) throw DomainError("gaussian_sideband_tomogram: n_samples must be positive");
    const double eta = options.efficiency;
    if (!(eta > 0.0 && eta <= 1.0))
        throw DomainError("gaussian_sideband_tomogram: efficiency must lie in (0, 1]");
    const double variance = eta * model.marginal_variance(dir.unit()) + (1.0 - eta);
    if (!(variance > 0.0) || !std::isfinite(variance))
        throw NumericalError("gaussian_sideband_tomogram: degenerate marginal variance");
    const double sigma = std::sqrt(variance);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, sigma);
    std::vector<double> xs(n_samples);
    double sum = 0.0;
    for (auto& x : xs) {
        x = normal(rng);
        sum += x;
    }
    const double mean = sum / static_cast<double>(n_samples);

    HistogramTomogram h;
    h.dir = dir;
    h.lo = mean - options.range_sigmas * sigma;
    h.hi = mean + options.range_sigmas * sigma;
    h.counts.assign(static_cast<std::size_t>(options.bins), 0);
    h.total_samples = n_samples;
    h.shot_noise_variance = 1.0;
    const double inv_width = options.bins / (h.hi - h.lo);
    const auto last = static_cast<std::ptrdiff_t>(options.bins - 1);
    for (const double x : xs) {
        auto idx = static_cast<std::ptrdiff_t>(std::floor((x - h.lo) * inv_width));
        if (idx < 0 || idx > last) {
            ++h.clipped;
            idx = std::clamp<std::ptrdiff_t>(idx, 0, last);
        }
        ++h.counts[static_cast<std::size_t>(idx)];
    }
    return h;
}

HistogramTomogramSet sideband_scan(const GaussianStokesModel& model, const AngleGrid& grid,
                                   std::uint64_t n_samples, std::uint64_t master_seed,
                                   const SidebandOptions& options) {
    grid.validate();
    HistogramTomogramSet set;
    set.grid = grid;
    set.classical_mean = model.mean;
    set.photon_scale = model.photon_scale;
    set.records.resize(grid.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(grid.size()); ++i) {
        set.records[i] = gaussian_sideband_tomogram(model, grid.direction(i), n_samples,
                                                    derive_seed(master_seed, i), options);
    }
    return set;
}

// ---------------------------------------------------------------- symmetry

HistogramTomogram mirror_record(const HistogramTomogram& h, const Direction& dir) {
    HistogramTomogram out = h;
    out.dir = dir;
    out.lo = -h.hi;
    out.hi = -h.lo;
    std::reverse(out.counts.begin(), out.counts.end());
    return out;
}

DiscreteTomogram mirror_record(const DiscreteTomogram& t, const Direction& dir) {
    DiscreteTomogram out{t.spin, dir, {}};
    for (const auto& [two_m, w] : t.values) out.values[-two_m] = w;
    return out;
}

namespace {

struct SymmetryPlan {
    AngleGrid grid;
    std::vector<std::size_t> source;
    std::vector<char> antipodal;
};

SymmetryPlan plan_symmetry(const AngleGrid& quarter, ReflectionRule rule) {
    quarter.validate();
    if (rule == ReflectionRule::none)
        throw CoverageError("symmetrize: quarter-sphere data needs a reflection rule for the "
                            "missing phi quadrants");
    if (quarter.phi.back() > 0.5 * kPi + 1e-12)
        throw CoverageError("symmetrize: quarter-sphere phi values must lie in [0, pi/2]");
    const std::size_t nt = quarter.theta.size();
    for (std::size_t i = 0; i < nt; ++i) {
        if (std::abs(quarter.theta[i] + quarter.theta[nt - 1 - i] - kPi) > 1e-9)
            throw CoverageError("symmetrize: theta grid is not symmetric under theta -> pi - theta");
    }

    auto wrap = [](double p) {
        p = std::fmod(p, 2.0 * kPi);
        if (p < 0.0) p += 2.0 * kPi;
        if (2.0 * kPi - p < 1e-12) p = 0.0;
        return p;
    };
    auto reflect = [rule](double p) { return rule == ReflectionRule::mirror_y ? -p : kPi - p; };

    struct Candidate {
        double phi;
        int kind;  // 0 identity, 1 reflection, 2 antipode, 3 antipode of reflection
        std::size_t j;
    };
    std::vector<Candidate> cands;
    for (std::size_t j = 0; j < quarter.phi.size(); ++j) {
        const double p = quarter.phi[j];
        cands.push_back({wrap(p), 0, j});
        cands.push_back({wrap(reflect(p)), 1, j});
        cands.push_back({wrap(p + kPi), 2, j});
        cands.push_back({wrap(reflect(p) + kPi), 3, j});
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        return a.phi < b.phi || (a.phi == b.phi && a.kind < b.kind);
    });
    std::vector<Candidate> uniq;
    for (const auto& c : cands) {
        if (!uniq.empty() && c.phi - uniq.back().phi < 1e-10) {
            if (c.kind < uniq.back().kind) uniq.back() = c;
            continue;
        }
        uniq.push_back(c);
    }
    if (uniq.size() > 1 && uniq.back().phi > 2.0 * kPi - 1e-10) uniq.pop_back();

    SymmetryPlan plan;
    plan.grid.theta = quarter.theta;
    plan.grid.rule = quarter.rule;
    plan.grid.coverage = Coverage::full_sphere;
    for (const auto& c : uniq) plan.grid.phi.push_back(c.phi);

    const std::size_t nq = quarter.phi.size();
    plan.source.resize(plan.grid.size());
    plan.antipodal.resize(plan.grid.size());
    for (std::size_t i = 0; i < nt; ++i) {
        for (std::size_t k = 0; k < uniq.size(); ++k) {
            const bool anti = uniq[k].kind >= 2;
            const std::size_t src_theta = anti ? nt - 1 - i : i;
            plan.source[plan.grid.index(i, k)] = src_theta * nq + uniq[k].j;
            plan.antipodal[plan.grid.index(i, k)] = anti;
        }
    }
    return plan;
}

template <class Record>
std::vector<Record> apply_plan(const SymmetryPlan& plan, const std::vector<Record>& in) {
    std::vector<Record> out;
    out.reserve(plan.grid.size());
    for (std::size_t i = 0; i < plan.grid.size(); ++i) {
        const Record& src = in.at(plan.source[i]);
        const Direction dir = plan.grid.direction(i);
        if (plan.antipodal[i]) {
            out.push_back(mirror_record(src, dir));
        } else {
            Record r = src;
            r.dir = dir;
            out.push_back(std::move(r));
        }
    }
    return out;
}

}  // namespace

HistogramTomogramSet symmetrize_tomograms(const HistogramTomogramSet& partial, ReflectionRule rule) {
    if (partial.grid.coverage == Coverage::full_sphere) return partial;
    if (partial.records.size() != partial.grid.size())
        throw CoverageError("symmetrize: record count does not match the grid");
    const SymmetryPlan plan = plan_symmetry(partial.grid, rule);
    HistogramTomogramSet out = partial;
    out.grid = plan.grid;
    out.records = apply_plan(plan, partial.records);
    out.metadata["symmetrized"] = to_string(rule);
    return out;
}

DiscreteTomogramSet symmetrize_tomograms(const DiscreteTomogramSet& partial, ReflectionRule rule) {
    if (partial.grid.coverage == Coverage::full_sphere) return partial;
    const SymmetryPlan plan = plan_symmetry(partial.grid, rule);
    DiscreteTomogramSet out = partial;
    out.grid = plan.grid;
    for (auto& b : out.blocks) {
        if (b.tomograms.size() != partial.grid.size())
            throw CoverageError("symmetrize: record count does not match the grid");
        b.tomograms = apply_plan(plan, b.tomograms);
    }
    if (!partial.totals.empty()) {
        if (partial.totals.size() != partial.grid.size())
            throw CoverageError("symmetrize: record count does not match the grid");
        out.totals = apply_plan(plan, partial.totals);
    }
    out.metadata["symmetrized"] = to_string(rule);
    return out;
}

// ---------------------------------------------------------------- names

std::string to_string(Coverage c) {
    return c == Coverage::full_sphere ? "full_sphere" : "quarter_sphere";
}

std::string to_string(ThetaRule r) {
    return r == ThetaRule::cell ? "cell" : "gauss_legendre";
}

std::string to_string(ReflectionRule r) {
    switch (r) {
        case ReflectionRule::mirror_x: return "mirror_x";
        case ReflectionRule::mirror_y: return "mirror_y";
        default: return "none";
    }
}

Coverage parse_coverage(const std::string& s) {
    if (s == "full_sphere") return Coverage::full_sphere;
    if (s == "quarter_sphere") return Coverage::quarter_sphere;
    throw ConfigError("unknown coverage '" + s + "'");
}

ThetaRule parse_theta_rule(const std::string& s) {
    if (s == "cell") return ThetaRule::cell;
    if (s == "gauss_legendre") return ThetaRule::gauss_legendre;
    throw ConfigError("unknown theta rule '" + s + "'");
}

ReflectionRule parse_reflection_rule(const std::string& s) {
    if (s == "none") return ReflectionRule::none;
    if (s == "mirror_x") return ReflectionRule::mirror_x;
    if (s == "mirror_y") return ReflectionRule::mirror_y;
    throw ConfigError("unknown reflection rule '" + s + "'");
}

}  // namespace poltomo
