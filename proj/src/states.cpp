#include "poltomo/states.hpp"

#include "poltomo/error.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace poltomo {

namespace {

CMatrix psd_sqrt(const CMatrix& a) {
    Eigen::SelfAdjointEigenSolver<CMatrix> solver(0.5 * (a + a.adjoint()));
    Eigen::VectorXd roots = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return solver.eigenvectors() * roots.asDiagonal() * solver.eigenvectors().adjoint();
}

}  // namespace

double min_eigenvalue(const CMatrix& hermitian) {
    if (hermitian.size() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<CMatrix> solver(hermitian, Eigen::EigenvaluesOnly);
    return solver.eigenvalues().minCoeff();
}

void validate_block(const DensityBlock& block) {
    const int dim = block.spin.dim();
    if (block.matrix.rows() != dim || block.matrix.cols() != dim)
        throw NumericalError("density block: matrix is not " + std::to_string(dim) + "x" +
                             std::to_string(dim));
    const double herm = (block.matrix - block.matrix.adjoint()).cwiseAbs().maxCoeff();
    if (herm > 1e-12)
        throw NumericalError("density block 2J=" + std::to_string(block.spin.two_j()) +
                             ": not Hermitian (residual " + std::to_string(herm) + ")");
    const double floor = min_eigenvalue(block.matrix);
    if (floor < -1e-10)
        throw NumericalError("density block 2J=" + std::to_string(block.spin.two_j()) +
                             ": negative eigenvalue " + std::to_string(floor));
    const double w = block.weight();
    if (w < -1e-12 || w > 1.0 + 1e-10)
        throw NumericalError("density block: weight outside [0, 1]");
}

double purity(const DensityBlock& block) {
    return (block.matrix * block.matrix).trace().real();
}

double fidelity(const CMatrix& a, const CMatrix& b) {
    const CMatrix root = psd_sqrt(a);
    const CMatrix inner = root * b * root;
    Eigen::SelfAdjointEigenSolver<CMatrix> solver(0.5 * (inner + inner.adjoint()),
                                                 Eigen::EigenvaluesOnly);
    const double t = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    return t * t;
}

PolarizationState::PolarizationState(std::vector<DensityBlock> blocks) : blocks_(std::move(blocks)) {
    for (std::size_t i = 1; i < blocks_.size(); ++i) {
        if (blocks_[i].spin.two_j() <= blocks_[i - 1].spin.two_j())
            throw DomainError("polarization state: 2J values must be strictly increasing");
    }
}

double PolarizationState::trace() const {
    double t = 0.0;
    for (const auto& b : blocks_) t += b.weight();
    return t;
}

const DensityBlock* PolarizationState::find(int two_j) const {
    for (const auto& b : blocks_)
        if (b.spin.two_j() == two_j) return &b;
    return nullptr;
}

void PolarizationState::validate() const {
    for (const auto& b : blocks_) validate_block(b);
    if (std::abs(trace() - 1.0) > 1e-10)
        throw NumericalError("polarization state: trace " + std::to_string(trace()) + " != 1");
}

PolarizationState coherent_two_mode(cplx alpha_h, cplx alpha_v, int two_j_cutoff) {
    constexpr double kept_mass = 1.0 - 1e-8;
    const double mean_n = std::norm(alpha_h) + std::norm(alpha_v);
    const double log_h = std::log(std::abs(alpha_h));  // -inf for an empty mode
    const double log_v = std::log(std::abs(alpha_v));
    const double phase_h = std::arg(alpha_h);
    const double phase_v = std::arg(alpha_v);

    std::vector<DensityBlock> blocks;
    double cumulative = 0.0;
    for (int n = 0; n <= two_j_cutoff; ++n) {
        const double poisson =
            mean_n == 0.0 ? (n == 0 ? 1.0 : 0.0)
                          : std::exp(-mean_n + n * std::log(mean_n) - std::lgamma(n + 1.0));
        cumulative += poisson;

        const SpinIndex spin(n);
        // Index k holds n_H = n - k, n_V = k.
        Eigen::VectorXd log_mag(spin.dim());
        for (int k = 0; k < spin.dim(); ++k) {
            const double lh = (n - k) == 0 ? 0.0 : (n - k) * log_h;
            const double lv = k == 0 ? 0.0 : k * log_v;
            log_mag(k) = lh + lv - 0.5 * (std::lgamma(n - k + 1.0) + std::lgamma(k + 1.0));
        }
        const double top = log_mag.maxCoeff();
        CVector psi(spin.dim());
        for (int k = 0; k < spin.dim(); ++k) {
            const double mag = std::isfinite(log_mag(k)) ? std::exp(log_mag(k) - top) : 0.0;
            psi(k) = std::polar(mag, (n - k) * phase_h + k * phase_v);
        }
        psi.normalize();
        if (poisson > 0.0) blocks.push_back({spin, poisson * psi * psi.adjoint()});
        if (cumulative > kept_mass) {
            for (auto& b : blocks) b.matrix /= cumulative;
            return PolarizationState(std::move(blocks));
        }
    }
    throw NumericalError("coherent_two_mode: cutoff 2J=" + std::to_string(two_j_cutoff) +
                         " keeps only " + std::to_string(cumulative) +
                         " of the photon-number distribution (need > 1 - 1e-8)");
}

DensityBlock su2_coherent_block(SpinIndex spin, const Direction& dir) {
    const CVector v = rotated_basis_state(spin, spin.two_j(), dir);
    return {spin, v * v.adjoint()};
}

DensityBlock maximally_mixed_block(SpinIndex spin, double weight) {
    return {spin, CMatrix::Identity(spin.dim(), spin.dim()) * (weight / spin.dim())};
}

double GaussianStokesModel::shot_noise_unit() const {
    return std::sqrt(0.25 * photon_scale);
}

GaussianStokesModel kerr_squeezed_gaussian(const KerrSqueezingParams& p) {
    if (!(p.mean_photons > 0.0) || !std::isfinite(p.mean_photons))
        throw DomainError("kerr_squeezed_gaussian: mean photon number must be positive");
    if (!std::isfinite(p.squeeze_db) || !std::isfinite(p.antisqueeze_db) ||
        !std::isfinite(p.excess_noise_db))
        throw DomainError("kerr_squeezed_gaussian: dB values must be finite");

    const Vec3 bright = p.excitation_axis.unit();
    Vec3 squeezed = p.squeeze_axis.unit() - p.squeeze_axis.unit().dot(bright) * bright;
    if (squeezed.norm() < 1e-9)
        throw DomainError("kerr_squeezed_gaussian: squeeze axis is parallel to the excitation");
    squeezed.normalize();
    const Vec3 anti = bright.cross(squeezed);

    const double v_sq = db_to_variance(p.squeeze_db);
    const double v_anti = db_to_variance(-p.antisqueeze_db) * db_to_variance(-p.excess_noise_db);

    GaussianStokesModel model;
    model.photon_scale = p.mean_photons;
    model.mean = 0.5 * p.mean_photons * bright;
    model.covariance = v_sq * squeezed * squeezed.transpose() + v_anti * anti * anti.transpose() +
                       bright * bright.transpose();
    model.covariance = 0.5 * (model.covariance + model.covariance.transpose()).eval();
    return model;
}

}  // namespace poltomo
