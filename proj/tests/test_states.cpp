#include "poltomo/error.hpp"
#include "poltomo/states.hpp"

#include <doctest.h>

#include <random>

using namespace poltomo;

namespace {

double max_abs(const CMatrix& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

Vec3 mean_j(const DensityBlock& b) {
    const auto am = build_angular_momentum(b.spin);
    return {(b.matrix * am.j1).trace().real(), (b.matrix * am.j2).trace().real(),
            (b.matrix * am.j3).trace().real()};
}

}  // namespace

TEST_CASE("coherent two-mode: vacuum") {
    const auto s = coherent_two_mode(0.0, 0.0, 10);
    REQUIRE(s.blocks().size() == 1);
    CHECK(s.blocks()[0].spin.two_j() == 0);
    CHECK(s.blocks()[0].weight() == doctest::Approx(1.0));
}

TEST_CASE("coherent two-mode: block weights are Poissonian") {
    const cplx ah(1.2, 0.7), av(std::sqrt(4.0 - std::norm(ah)), 0.0);
    const auto s = coherent_two_mode(ah, av, 60);
    CHECK(std::abs(s.trace() - 1.0) < 1e-10);
    double kept = 0.0;
    for (const auto& b : s.blocks()) {
        const int n = b.spin.two_j();
        kept += std::exp(-4.0) * std::pow(4.0, n) / std::tgamma(n + 1.0);
    }
    for (const auto& b : s.blocks()) {
        const int n = b.spin.two_j();
        const double pmf = std::exp(-4.0) * std::pow(4.0, n) / std::tgamma(n + 1.0);
        CHECK(b.weight() == doctest::Approx(pmf / kept).epsilon(1e-12));
    }
    CHECK(kept > 1 - 1e-8);
    s.validate();
}

TEST_CASE("coherent two-mode: one empty mode gives highest-weight blocks") {
    const auto s = coherent_two_mode(1.0, 0.0, 40);
    for (const auto& b : s.blocks()) {
        CMatrix top = CMatrix::Zero(b.spin.dim(), b.spin.dim());
        top(0, 0) = b.weight();
        CHECK(max_abs(b.matrix - top) < 1e-12);
        // commutes with J3
        const auto am = build_angular_momentum(b.spin);
        CHECK(max_abs(b.matrix * am.j3 - am.j3 * b.matrix) < 1e-12);
    }
}

TEST_CASE("coherent two-mode: amplitudes and truncation error") {
    const cplx ah(0.8, -0.3), av(-0.4, 0.9);
    const auto s = coherent_two_mode(ah, av, 50);
    const DensityBlock* b = s.find(3);
    REQUIRE(b != nullptr);
    // amplitude for index k: ah^{N-k} av^k / sqrt((N-k)! k!)
    CVector psi(4);
    for (int k = 0; k < 4; ++k)
        psi(k) = std::pow(ah, 3 - k) * std::pow(av, k) / std::sqrt(std::tgamma(4.0 - k) * std::tgamma(k + 1.0));
    const CMatrix want = psi * psi.adjoint();
    const CMatrix got = b->matrix / b->weight();
    CHECK(max_abs(got - want / want.trace().real()) < 1e-12);
    CHECK_THROWS_AS(coherent_two_mode(3.0, 0.0, 5), NumericalError);
}

TEST_CASE("SU(2) coherent block") {
    const auto north = su2_coherent_block(SpinIndex(4), Direction::north_pole());
    CMatrix want = CMatrix::Zero(5, 5);
    want(0, 0) = 1.0;
    CHECK(max_abs(north.matrix - want) < 1e-14);

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 1);
    for (int t = 0; t < 10; ++t) {
        const auto b = su2_coherent_block(SpinIndex(1 + t), {kPi * u(rng), 2 * kPi * u(rng)});
        CHECK(purity(b) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(b.weight() == doctest::Approx(1.0));
        validate_block(b);
    }

    const Vec3 m = mean_j(su2_coherent_block(SpinIndex(10), {kPi / 2, 0.0}));
    CHECK(m.x() == doctest::Approx(5.0));
    CHECK(std::abs(m.y()) < 1e-12);
    CHECK(std::abs(m.z()) < 1e-12);
}

TEST_CASE("block validation and fidelity") {
    DensityBlock bad{SpinIndex(1), CMatrix::Zero(2, 2)};
    bad.matrix(0, 1) = 0.3;
    CHECK_THROWS_AS(validate_block(bad), NumericalError);
    DensityBlock neg{SpinIndex(1), CMatrix::Identity(2, 2)};
    neg.matrix(1, 1) = -0.1;
    CHECK_THROWS_AS(validate_block(neg), NumericalError);
    const auto mixed = maximally_mixed_block(SpinIndex(3));
    CHECK(purity(mixed) == doctest::Approx(0.25));
    CHECK(fidelity(mixed.matrix, mixed.matrix) == doctest::Approx(1.0));
    CHECK_THROWS(PolarizationState({maximally_mixed_block(SpinIndex(2), 0.5), maximally_mixed_block(SpinIndex(1), 0.5)}));
}

TEST_CASE("Kerr squeezed Gaussian model") {
    SUBCASE("0 dB is the coherent model") {
        KerrSqueezingParams p;
        p.squeeze_db = 0.0;
        const auto m = kerr_squeezed_gaussian(p);
        CHECK((m.covariance - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    }
    SUBCASE("6.2 dB squeezing level") {
        KerrSqueezingParams p;
        const auto m = kerr_squeezed_gaussian(p);
        CHECK(m.marginal_variance(p.squeeze_axis.unit()) == doctest::Approx(std::pow(10.0, -0.62)).epsilon(1e-12));
        CHECK(std::pow(10.0, -0.62) == doctest::Approx(0.2399).epsilon(1e-4));
        CHECK(m.mean.norm() == doctest::Approx(5e10));
        CHECK(std::abs(m.mean.dot(p.excitation_axis.unit()) - 5e10) < 1e-3);
        CHECK(m.shot_noise_unit() == doctest::Approx(std::sqrt(2.5e10)));
    }
    SUBCASE("antisqueezing and excess noise multiply on one axis") {
        KerrSqueezingParams p;
        p.antisqueeze_db = 3.0;
        p.excess_noise_db = 2.0;
        const auto m = kerr_squeezed_gaussian(p);
        const Vec3 anti = p.excitation_axis.unit().cross(p.squeeze_axis.unit());
        CHECK(m.marginal_variance(anti) == doctest::Approx(std::pow(10.0, 0.5)));
        CHECK(m.marginal_variance(p.excitation_axis.unit()) == doctest::Approx(1.0));
        Eigen::SelfAdjointEigenSolver<Mat3> es(m.covariance);
        CHECK(es.eigenvalues().minCoeff() > 0.0);
        CHECK((m.covariance - m.covariance.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    }
    SUBCASE("errors") {
        KerrSqueezingParams p;
        p.mean_photons = 0.0;
        CHECK_THROWS_AS(kerr_squeezed_gaussian(p), DomainError);
        p.mean_photons = 1.0;
        p.squeeze_axis = p.excitation_axis;
        CHECK_THROWS_AS(kerr_squeezed_gaussian(p), DomainError);
    }
    CHECK(variance_to_db(db_to_variance(6.2)) == doctest::Approx(6.2));
}
