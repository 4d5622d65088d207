#pragma once

// Finite-dimensional SU(2) machinery for the Stokes operators J1, J2, J3
// acting on a fixed-photon-number subspace N = 2J.
//
// Basis convention (used everywhere in the library): index k in [0, 2J]
// corresponds to m = J - k, i.e. index 0 is the highest-weight state |J,J>.
// Half-integers are carried as the integers 2J and 2m.

#include <Eigen/Dense>

#include <complex>

namespace poltomo {

using cplx = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr int kDefaultMaxTwoJ = 512;

class SpinIndex {
public:
    explicit SpinIndex(int two_j, int max_two_j = kDefaultMaxTwoJ);

    int two_j() const noexcept { return two_j_; }
    int dim() const noexcept { return two_j_ + 1; }
    double j() const noexcept { return 0.5 * two_j_; }

    // 2m of basis index k.
    int two_m(int k) const noexcept { return two_j_ - 2 * k; }
    double m(int k) const noexcept { return 0.5 * two_m(k); }

    bool contains(int two_m) const noexcept;
    // Basis index of 2m; throws DomainError when 2m is not a valid label.
    int index_of(int two_m) const;

    friend bool operator==(SpinIndex a, SpinIndex b) noexcept { return a.two_j_ == b.two_j_; }

private:
    int two_j_;
};

// Point on the Poincare sphere, n = (cos phi sin theta, sin phi sin theta, cos theta).
class Direction {
public:
    Direction() = default;
    // theta in [0, pi]; phi is wrapped into [0, 2 pi).
    Direction(double theta, double phi);

    static Direction north_pole() { return {0.0, 0.0}; }
    static Direction from_vector(const Vec3& v);

    double theta() const noexcept { return theta_; }
    double phi() const noexcept { return phi_; }
    const Vec3& unit() const noexcept { return n_; }
    Direction antipode() const;

private:
    double theta_ = 0.0;
    double phi_ = 0.0;
    Vec3 n_ = Vec3::UnitZ();
};

struct AngularMomentum {
    CMatrix j1;
    CMatrix j2;
    CMatrix j3;

    // n . J for an arbitrary 3-vector.
    CMatrix project(const Vec3& n) const { return n.x() * j1 + n.y() * j2 + n.z() * j3; }
};

AngularMomentum build_angular_momentum(SpinIndex spin);

// Caches the spectral decomposition of J2 so repeated rotations in one
// subspace cost two matrix products each.
class SpinRotator {
public:
    explicit SpinRotator(SpinIndex spin);

    SpinIndex spin() const noexcept { return spin_; }
    const AngularMomentum& generators() const noexcept { return gen_; }

    // R(n) = exp(-i phi J3) exp(-i theta J2); R(n) J3 R(n)^dagger = n . J.
    CMatrix rotation(const Direction& dir) const;
    // exp(-i omega n . J) = R(n) diag(exp(-i omega m)) R(n)^dagger.
    CMatrix axis_exponential(const Direction& dir, double omega) const;

private:
    SpinIndex spin_;
    AngularMomentum gen_;
    CMatrix j2_vectors_;
    Eigen::VectorXd j2_values_;
};

CMatrix rotation_matrix(SpinIndex spin, const Direction& dir);

// |J,m>_n = R(n)|J,m>: eigenvector of n . J with eigenvalue m, unit norm.
CVector rotated_basis_state(SpinIndex spin, int two_m, const Direction& dir);

CMatrix axis_projected_exponential(SpinIndex spin, const Direction& dir, double omega);

}  // namespace poltomo
