#include "poltomo/su2.hpp"

#include "poltomo/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace poltomo {

SpinIndex::SpinIndex(int two_j, int max_two_j) : two_j_(two_j) {
    if (two_j < 0)
        throw DomainError("spin index: 2J must be non-negative, got " + std::to_string(two_j));
    if (two_j > max_two_j)
        throw DomainError("spin index: 2J = " + std::to_string(two_j) + " exceeds the limit " +
                          std::to_string(max_two_j));
}

bool SpinIndex::contains(int two_m) const noexcept {
    return two_m >= -two_j_ && two_m <= two_j_ && ((two_j_ - two_m) % 2 == 0);
}

int SpinIndex::index_of(int two_m) const {
    if (!contains(two_m))
        throw DomainError("2m = " + std::to_string(two_m) + " is not a label of spin 2J = " +
                          std::to_string(two_j_));
    return (two_j_ - two_m) / 2;
}

Direction::Direction(double theta, double phi) {
    constexpr double slack = 1e-12;
    if (!std::isfinite(theta) || !std::isfinite(phi))
        throw DomainError("direction: non-finite angle");
    if (theta < -slack || theta > kPi + slack)
        throw DomainError("direction: theta outside [0, pi]: " + std::to_string(theta));
    theta_ = std::clamp(theta, 0.0, kPi);
    phi_ = std::fmod(phi, 2.0 * kPi);
    if (phi_ < 0.0) phi_ += 2.0 * kPi;
    if (phi_ >= 2.0 * kPi) phi_ = 0.0;
    const double s = std::sin(theta_);
    n_ = Vec3(std::cos(phi_) * s, std::sin(phi_) * s, std::cos(theta_));
}

Direction Direction::from_vector(const Vec3& v) {
    const double r = v.norm();
    if (!(r > 0.0)) throw DomainError("direction: zero vector has no direction");
    const double theta = std::acos(std::clamp(v.z() / r, -1.0, 1.0));
    const double phi = std::atan2(v.y(), v.x());
    return {theta, phi};
}

Direction Direction::antipode() const {
    return {kPi - theta_, phi_ + kPi};
}

AngularMomentum build_angular_momentum(SpinIndex spin) {
    const int dim = spin.dim();
    const double j = spin.j();
    AngularMomentum out{CMatrix::Zero(dim, dim), CMatrix::Zero(dim, dim), CMatrix::Zero(dim, dim)};

    // J+ |J,m> = sqrt(J(J+1) - m(m+1)) |J,m+1>; index k-1 holds m+1.
    CMatrix raise = CMatrix::Zero(dim, dim);
    for (int k = 1; k < dim; ++k) {
        const double m = spin.m(k);
        raise(k - 1, k) = std::sqrt(j * (j + 1.0) - m * (m + 1.0));
    }
    const CMatrix lower = raise.adjoint();
    out.j1 = 0.5 * (raise + lower);
    out.j2 = cplx(0.0, -0.5) * (raise - lower);
    for (int k = 0; k < dim; ++k) out.j3(k, k) = spin.m(k);
    return out;
}

SpinRotator::SpinRotator(SpinIndex spin) : spin_(spin), gen_(build_angular_momentum(spin)) {
    Eigen::SelfAdjointEigenSolver<CMatrix> solver(gen_.j2);
    j2_vectors_ = solver.eigenvectors();
    j2_values_ = solver.eigenvalues();
}

CMatrix SpinRotator::rotation(const Direction& dir) const {
    const int dim = spin_.dim();
    Eigen::VectorXcd tilt(dim);
    for (int k = 0; k < dim; ++k) tilt(k) = std::polar(1.0, -dir.theta() * j2_values_(k));
    CMatrix r = j2_vectors_ * tilt.asDiagonal() * j2_vectors_.adjoint();
    for (int k = 0; k < dim; ++k) r.row(k) *= std::polar(1.0, -dir.phi() * spin_.m(k));
    return r;
}

CMatrix SpinRotator::axis_exponential(const Direction& dir, double omega) const {
    const int dim = spin_.dim();
    const CMatrix r = rotation(dir);
    Eigen::VectorXcd phases(dim);
    for (int k = 0; k < dim; ++k) phases(k) = std::polar(1.0, -omega * spin_.m(k));
    return r * phases.asDiagonal() * r.adjoint();
}

CMatrix rotation_matrix(SpinIndex spin, const Direction& dir) {
    return SpinRotator(spin).rotation(dir);
}

CVector rotated_basis_state(SpinIndex spin, int two_m, const Direction& dir) {
    const int k = spin.index_of(two_m);
    if (dir.theta() == 0.0) {
        // Exact canonical vector up to the exp(-i phi m) phase.
        CVector v = CVector::Zero(spin.dim());
        v(k) = std::polar(1.0, -dir.phi() * spin.m(k));
        return v;
    }
    return rotation_matrix(spin, dir).col(k);
}

CMatrix axis_projected_exponential(SpinIndex spin, const Direction& dir, double omega) {
    return SpinRotator(spin).axis_exponential(dir, omega);
}

}  // namespace poltomo
