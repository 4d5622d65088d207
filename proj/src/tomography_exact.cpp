#include "poltomo/tomography_exact.hpp"

#include "poltomo/error.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

namespace poltomo {

std::vector<double> uniform_omega_nodes(int n) {
    if (n < 1) throw DomainError("omega quadrature needs at least one node");
    std::vector<double> nodes(n);
    for (int i = 0; i < n; ++i) nodes[i] = 2.0 * kPi * i / n;
    return nodes;
}

QuadratureScheme QuadratureScheme::make(int n_omega, int n_theta, int n_phi) {
    QuadratureScheme s;
    s.omega_nodes = uniform_omega_nodes(n_omega);
    s.omega_weights.assign(n_omega, 2.0 * kPi / n_omega);
    s.sphere = AngleGrid::gauss_legendre(n_theta, n_phi);
    s.sphere_nodes = s.sphere.directions();
    s.sphere_weights = s.sphere.sphere_weights();
    return s;
}

QuadratureScheme QuadratureScheme::for_spin(SpinIndex spin) {
    const int tj = spin.two_j();
    return make(2 * (tj + 1), std::max(2, tj + 1), std::max(2, 2 * tj + 1));
}

BlockReconstruction reconstruct_block(std::span<const DiscreteTomogram> tomograms,
                                      const QuadratureScheme& scheme,
                                      const ReconstructionOptions& options) {
    if (tomograms.empty()) throw CoverageError("reconstruct_block: no tomograms");
    if (!tomograms.front().spin)
        throw DomainError("reconstruct_block: needs per-J tomograms, got a total tomogram");
    const SpinIndex spin = *tomograms.front().spin;
    const std::size_t n_nodes = scheme.sphere_nodes.size();
    if (tomograms.size() != n_nodes)
        throw CoverageError("reconstruct_block: " + std::to_string(tomograms.size()) +
                            " tomograms for " + std::to_string(n_nodes) + " sphere nodes");

    const int dim = spin.dim();
    for (std::size_t i = 0; i < n_nodes; ++i) {
        const auto& t = tomograms[i];
        if (!t.spin || !(*t.spin == spin))
            throw DomainError("reconstruct_block: inconsistent spin across tomograms");
        if ((t.dir.unit() - scheme.sphere_nodes[i].unit()).norm() > 1e-9)
            throw CoverageError("reconstruct_block: no tomogram at sphere node " + std::to_string(i));
        for (int k = 0; k < dim; ++k)
            if (!t.values.contains(spin.two_m(k)))
                throw CoverageError("reconstruct_block: tomogram " + std::to_string(i) +
                                    " is missing m-values");
    }

    const std::size_t n_omega = scheme.omega_nodes.size();
    std::vector<double> haar(n_omega);
    for (std::size_t a = 0; a < n_omega; ++a) {
        const double s = std::sin(0.5 * scheme.omega_nodes[a]);
        haar[a] = scheme.omega_weights[a] * s * s;
    }
    // e^{i m omega} for every basis index and node.
    CMatrix phase(n_omega, dim);
    for (std::size_t a = 0; a < n_omega; ++a)
        for (int k = 0; k < dim; ++k) phase(a, k) = std::polar(1.0, spin.m(k) * scheme.omega_nodes[a]);

    const SpinRotator rotator(spin);
    auto node_term = [&](std::size_t i) -> CMatrix {
        Eigen::VectorXd w(dim);
        for (int k = 0; k < dim; ++k) w(k) = tomograms[i].values.at(spin.two_m(k));
        // Characteristic function Tr(rho e^{i omega n.J}) on the omega nodes.
        const Eigen::VectorXcd chi = phase * w.cast<cplx>();
        Eigen::VectorXcd diag = Eigen::VectorXcd::Zero(dim);
        for (std::size_t a = 0; a < n_omega; ++a)
            diag += (haar[a] * chi(a)) * phase.row(a).adjoint();  // e^{-i m omega}
        const CMatrix r = rotator.rotation(scheme.sphere_nodes[i]);
        return scheme.sphere_weights[i] * (r * diag.asDiagonal() * r.adjoint());
    };

    // Fixed-size chunks summed in node order keep the result independent of
    // the thread count.
    constexpr std::size_t chunk = 16;
    const std::size_t n_chunks = (n_nodes + chunk - 1) / chunk;
    std::vector<CMatrix> partial(n_chunks, CMatrix::Zero(dim, dim));
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(n_chunks); ++c) {
        const std::size_t end = std::min(n_nodes, (c + 1) * chunk);
        for (std::size_t i = c * chunk; i < end; ++i) partial[c] += node_term(i);
    }
    CMatrix rho = CMatrix::Zero(dim, dim);
    for (const auto& p : partial) rho += p;
    rho *= dim / (4.0 * kPi * kPi);

    BlockReconstruction out;
    out.hermiticity_residual = dim > 0 ? (rho - rho.adjoint()).cwiseAbs().maxCoeff() : 0.0;
    out.quadrature_warning = out.hermiticity_residual > 1e-6;
    if (options.hermitize || options.clip_negative) rho = (0.5 * (rho + rho.adjoint())).eval();
    if (options.clip_negative) {
        const double trace = rho.trace().real();
        Eigen::SelfAdjointEigenSolver<CMatrix> solver(rho);
        Eigen::VectorXd ev = solver.eigenvalues().cwiseMax(0.0);
        if (ev.sum() > 0.0) ev *= std::max(trace, 0.0) / ev.sum();
        rho = solver.eigenvectors() * ev.cast<cplx>().asDiagonal() * solver.eigenvectors().adjoint();
    }
    out.block = {spin, std::move(rho)};
    return out;
}

cplx kernel_matrix_element(SpinIndex spin, int two_m, double cos_chi,
                           std::span<const double> omega_nodes,
                           std::span<const double> omega_weights) {
    if (!(std::abs(cos_chi) <= 1.0)) throw DomainError("kernel_matrix_element: |cos chi| > 1");
    if (omega_nodes.size() != omega_weights.size())
        throw DomainError("kernel_matrix_element: node/weight size mismatch");
    const double m = 0.5 * two_m;
    cplx sum = 0.0;
    for (std::size_t a = 0; a < omega_nodes.size(); ++a) {
        const double half = 0.5 * omega_nodes[a];
        const double s = std::sin(half);
        const cplx base(std::cos(half), -s * cos_chi);
        sum += omega_weights[a] * s * s * std::polar(1.0, m * omega_nodes[a]) *
               std::pow(base, spin.two_j());
    }
    return sum * (spin.dim() / (4.0 * kPi * kPi));
}

double characteristic_check(const DensityBlock& block, const Direction& dir, int n_omega) {
    const SpinIndex spin = block.spin;
    const DiscreteTomogram direct = exact_tomogram(block, dir);

    // e^{i omega n.J} from the spectral decomposition of n.J itself, not from R(n).
    const CMatrix generator = build_angular_momentum(spin).project(dir.unit());
    Eigen::SelfAdjointEigenSolver<CMatrix> solver(generator);
    const CMatrix& v = solver.eigenvectors();
    const CMatrix rho_v = v.adjoint() * block.matrix * v;

    const auto nodes = uniform_omega_nodes(n_omega);
    std::vector<cplx> chi(nodes.size());
    for (std::size_t a = 0; a < nodes.size(); ++a) {
        cplx c = 0.0;
        for (int k = 0; k < spin.dim(); ++k)
            c += rho_v(k, k) * std::polar(1.0, nodes[a] * solver.eigenvalues()(k));
        chi[a] = c;
    }

    double residual = 0.0;
    for (int k = 0; k < spin.dim(); ++k) {
        const double m = spin.m(k);
        cplx w = 0.0;
        for (std::size_t a = 0; a < nodes.size(); ++a) w += chi[a] * std::polar(1.0, -m * nodes[a]);
        w /= static_cast<double>(n_omega);
        residual = std::max(residual, std::abs(w - direct.values.at(spin.two_m(k))));
    }
    return residual;
}

SphereFunction q_function(const DensityBlock& block, std::span<const Direction> directions) {
    const SpinRotator rotator(block.spin);
    SphereFunction q{block.spin, {directions.begin(), directions.end()},
                     std::vector<double>(directions.size())};
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(directions.size()); ++i) {
        const CVector top = rotator.rotation(directions[i]).col(0);
        q.values[i] = top.dot(block.matrix * top).real();
    }
    return q;
}

double q_normalization(const SphereFunction& q, std::span<const double> weights) {
    if (weights.size() != q.values.size())
        throw DomainError("q_normalization: weight count does not match samples");
    double s = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * q.values[i];
    return s * q.spin.dim() / (4.0 * kPi);
}

FullReconstruction reconstruct_full(std::span<const BlockTomograms> blocks,
                                    const QuadratureScheme& scheme,
                                    const ReconstructionOptions& options) {
    FullReconstruction out;
    if (blocks.empty()) {
        out.empty = true;
        return out;
    }
    std::set<int> seen;
    for (const auto& b : blocks) {
        if (!seen.insert(b.spin.two_j()).second)
            throw DomainError("reconstruct_full: duplicate block 2J=" + std::to_string(b.spin.two_j()));
    }
    std::vector<const BlockTomograms*> order;
    for (const auto& b : blocks) order.push_back(&b);
    std::sort(order.begin(), order.end(),
              [](auto* a, auto* b) { return a->spin.two_j() < b->spin.two_j(); });

    std::vector<DensityBlock> rebuilt;
    for (const auto* b : order) {
        BlockReconstruction r = reconstruct_block(b->tomograms, scheme, options);
        const double measured = b->tomograms.front().total();
        out.trace_deficit.push_back(measured - r.block.weight());
        out.hermiticity_residual.push_back(r.hermiticity_residual);
        rebuilt.push_back(std::move(r.block));
    }
    out.state = PolarizationState(std::move(rebuilt));
    return out;
}

}  // namespace poltomo
