#include "poltomo/error.hpp"
#include "poltomo/tomography_exact.hpp"

#include <doctest.h>

#include <numeric>
#include <random>

using namespace poltomo;

namespace {

double max_abs(const CMatrix& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

CMatrix random_density(int dim, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    CMatrix a(dim, dim);
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) a(i, j) = cplx(g(rng), g(rng));
    CMatrix r = a * a.adjoint();
    return r / r.trace();
}

Direction random_dir(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    return {std::acos(1 - 2 * u(rng)), 2 * kPi * u(rng)};
}

std::vector<DiscreteTomogram> tomograms_on(const DensityBlock& b, const QuadratureScheme& s) {
    const SpinRotator rot(b.spin);
    std::vector<DiscreteTomogram> out;
    for (const auto& d : s.sphere_nodes) out.push_back(exact_tomogram(b, d, rot));
    return out;
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST_CASE("quadrature scheme sizes and weights") {
    const auto s = QuadratureScheme::for_spin(SpinIndex(4));
    CHECK(s.omega_nodes.size() == 10);
    CHECK(s.sphere.theta.size() == 5);
    CHECK(s.sphere.phi.size() == 9);
    CHECK(s.sphere_nodes.size() == 45);
    CHECK(sum(s.omega_weights) == doctest::Approx(2 * kPi).epsilon(1e-12));
    CHECK(std::abs(sum(s.sphere_weights) - 4 * kPi) < 1e-8);
    CHECK_THROWS_AS(uniform_omega_nodes(0), DomainError);
}

TEST_CASE("kernel closed forms") {
    const auto nodes = uniform_omega_nodes(8);
    const std::vector<double> w(nodes.size(), 2 * kPi / nodes.size());
    // sin^2(w/2) e^{iw/2} (cos(w/2) - i sin(w/2)) = sin^2(w/2)
    CHECK(std::abs(kernel_matrix_element(SpinIndex(1), 1, 1.0, nodes, w) - cplx(1 / (2 * kPi), 0)) < 1e-14);
    CHECK(std::abs(kernel_matrix_element(SpinIndex(0), 0, 0.3, nodes, w) - cplx(1 / (4 * kPi), 0)) < 1e-14);
    CHECK_THROWS_AS(kernel_matrix_element(SpinIndex(1), 1, 1.5, nodes, w), DomainError);

    const auto n6 = uniform_omega_nodes(14);
    const std::vector<double> w6(n6.size(), 2 * kPi / n6.size());
    for (double c : {-0.9, -0.2, 0.0, 0.4, 1.0}) {
        for (int two_m : {-6, -2, 0, 4, 6}) {
            const cplx k = kernel_matrix_element(SpinIndex(6), two_m, c, n6, w6);
            CHECK(std::abs(k.imag()) < 1e-14);
            const cplx flipped = kernel_matrix_element(SpinIndex(6), -two_m, -c, n6, w6);
            CHECK(std::abs(k - flipped) < 1e-14);
        }
    }
}

TEST_CASE("2J = 0 block reconstructs to its weight") {
    DensityBlock b{SpinIndex(0), CMatrix::Constant(1, 1, cplx(0.3, 0))};
    const auto s = QuadratureScheme::for_spin(b.spin);
    const auto r = reconstruct_block(tomograms_on(b, s), s);
    CHECK(std::abs(r.block.matrix(0, 0) - cplx(0.3, 0)) < 1e-14);
}

TEST_CASE("random mixed blocks reconstruct exactly") {
    std::mt19937_64 rng(11);
    for (int tj : {1, 2, 4, 7}) {
        DensityBlock b{SpinIndex(tj), random_density(tj + 1, rng)};
        const auto s = QuadratureScheme::for_spin(b.spin);
        const auto r = reconstruct_block(tomograms_on(b, s), s);
        CHECK(max_abs(r.block.matrix - b.matrix) < 1e-10);
        CHECK(r.hermiticity_residual < 1e-8);
        CHECK_FALSE(r.quadrature_warning);
    }
}

TEST_CASE("coherent 2J = 6 block has fidelity ~ 1") {
    std::mt19937_64 rng(3);
    const auto b = su2_coherent_block(SpinIndex(6), random_dir(rng));
    const auto s = QuadratureScheme::for_spin(b.spin);
    const auto r = reconstruct_block(tomograms_on(b, s), s);
    CHECK(fidelity(r.block.matrix, b.matrix) > 1 - 1e-8);
}

TEST_CASE("linear in the tomograms") {
    std::mt19937_64 rng(5);
    const SpinIndex spin(3);
    const auto s = QuadratureScheme::for_spin(spin);
    DensityBlock a{spin, random_density(4, rng)}, b{spin, random_density(4, rng)};
    DensityBlock mix{spin, 0.3 * a.matrix + 0.7 * b.matrix};
    const auto ra = reconstruct_block(tomograms_on(a, s), s);
    const auto rb = reconstruct_block(tomograms_on(b, s), s);
    const auto rm = reconstruct_block(tomograms_on(mix, s), s);
    CHECK(max_abs(rm.block.matrix - (0.3 * ra.block.matrix + 0.7 * rb.block.matrix)) < 1e-10);
}

TEST_CASE("too few nodes are detected") {
    const SpinIndex spin(4);
    std::mt19937_64 rng(9);
    DensityBlock b{spin, random_density(5, rng)};
    const auto full = QuadratureScheme::for_spin(spin);
    auto t = tomograms_on(b, full);
    t.pop_back();
    CHECK_THROWS_AS(reconstruct_block(t, full), CoverageError);

    // Tomograms on the wrong directions.
    const auto other = QuadratureScheme::make(10, 5, 10);
    CHECK_THROWS_AS(reconstruct_block(tomograms_on(b, other), full), CoverageError);

    // An under-resolved sphere rule gives a visibly wrong block.
    const auto coarse = QuadratureScheme::make(10, 3, 5);
    const auto r = reconstruct_block(tomograms_on(b, coarse), coarse);
    CHECK(max_abs(r.block.matrix - b.matrix) > 1e-4);
}

TEST_CASE("characteristic function check") {
    std::mt19937_64 rng(21);
    for (int tj : {2, 5}) {
        const SpinIndex spin(tj);
        DensityBlock mixed{spin, random_density(tj + 1, rng)};
        const auto pure = su2_coherent_block(spin, random_dir(rng));
        const auto d = random_dir(rng);
        CHECK(characteristic_check(mixed, d, tj + 1) < 1e-12);
        CHECK(characteristic_check(pure, d, 2 * (tj + 1)) < 1e-12);
        CHECK(characteristic_check(mixed, d, tj) > 1e-6);
    }
}

TEST_CASE("Q function") {
    const SpinIndex spin(4);
    const auto s = QuadratureScheme::for_spin(SpinIndex(8));

    const auto mixed = maximally_mixed_block(spin, 0.5);
    const auto qm = q_function(mixed, s.sphere_nodes);
    for (double v : qm.values) CHECK(v == doctest::Approx(0.5 / 5).epsilon(1e-12));
    CHECK(q_normalization(qm, s.sphere_weights) == doctest::Approx(0.5).epsilon(1e-10));

    std::mt19937_64 rng(8);
    const Direction center = random_dir(rng);
    const auto coh = su2_coherent_block(spin, center);
    const auto q = q_function(coh, s.sphere_nodes);
    for (std::size_t i = 0; i < q.values.size(); ++i) {
        const double c = center.unit().dot(s.sphere_nodes[i].unit());
        CHECK(q.values[i] == doctest::Approx(std::pow(0.5 * (1 + c), 4)).epsilon(1e-10));
        const CVector v = rotated_basis_state(spin, 4, s.sphere_nodes[i]);
        CHECK(std::abs(q.values[i] - (v.adjoint() * coh.matrix * v)(0, 0).real()) < 1e-12);
        CHECK(q.values[i] >= -1e-10);
    }
    CHECK(q_normalization(q, s.sphere_weights) == doctest::Approx(1.0).epsilon(1e-10));
    std::vector<double> short_w(3, 1.0);
    CHECK_THROWS_AS(q_normalization(q, short_w), DomainError);
}

TEST_CASE("full reconstruction of a two-mode coherent state") {
    const auto state = coherent_two_mode({1.0, 0.0}, {0.0, 0.0}, 16);
    const int max_tj = state.blocks().back().spin.two_j();
    const auto s = QuadratureScheme::for_spin(SpinIndex(max_tj));
    const auto scan = exact_scan(state, s.sphere);
    const auto r = reconstruct_full(scan.blocks, s);
    REQUIRE_FALSE(r.empty);
    REQUIRE(r.state.blocks().size() == state.blocks().size());
    double root = 0.0;
    for (std::size_t i = 0; i < state.blocks().size(); ++i) {
        const auto& want = state.blocks()[i].matrix;
        const auto& got = r.state.blocks()[i].matrix;
        CHECK(max_abs(got - want) < 1e-10);
        CHECK(std::abs(r.trace_deficit[i]) < 1e-10);
        root += std::sqrt(fidelity(got, want));
    }
    CHECK(root * root > 1 - 1e-6);
}

TEST_CASE("full reconstruction edge cases") {
    const auto s = QuadratureScheme::for_spin(SpinIndex(2));
    CHECK(reconstruct_full({}, s).empty);

    DensityBlock b = maximally_mixed_block(SpinIndex(2));
    BlockTomograms bt{b.spin, tomograms_on(b, s)};
    std::vector<BlockTomograms> dup{bt, bt};
    CHECK_THROWS_AS(reconstruct_full(dup, s), DomainError);
}

TEST_CASE("eigenvalue clipping keeps trace and positivity") {
    std::mt19937_64 rng(4);
    const SpinIndex spin(3);
    const auto s = QuadratureScheme::for_spin(spin);
    const auto pure = su2_coherent_block(spin, random_dir(rng));
    auto t = tomograms_on(pure, s);
    // Perturb the probabilities so the inversion leaves negative eigenvalues.
    std::normal_distribution<double> g(0.0, 0.02);
    for (auto& x : t)
        for (auto& [m, w] : x.values) w = std::max(0.0, w + g(rng));
    const auto raw = reconstruct_block(t, s);
    const auto clipped = reconstruct_block(t, s, {true, true});
    CHECK(min_eigenvalue(raw.block.matrix) < 0.0);
    CHECK(min_eigenvalue(clipped.block.matrix) >= -1e-12);
    CHECK(clipped.block.weight() == doctest::Approx(raw.block.weight()).epsilon(1e-10));
}
