#pragma once

#include <optional>
#include <vector>

#include "mlspde/mesh.hpp"
#include "mlspde/sparse.hpp"

namespace mlspde {

/// Lowest-order Raviart-Thomas space: one degree of freedom per facet,
/// dof = integral of the normal flux over the facet (w.r.t. the facet's
/// global normal). The local->global map with orientation signs is the
/// mesh's cell_facets / cell_facet_signs incidence.
struct FluxSpace {
    const Mesh* mesh = nullptr;

    explicit FluxSpace(const Mesh& m) : mesh(&m) {}
    int n_dofs() const { return mesh->n_facets(); }
};

/// Piecewise-constant space: one dof per cell.
struct ScalarSpace {
    const Mesh* mesh = nullptr;

    explicit ScalarSpace(const Mesh& m) : mesh(&m) {}
    int n_dofs() const { return mesh->n_cells(); }
};

namespace detail {

/// Second moments of a simplex: integral of x_k * x_l over the cell.
inline double simplex_second_moment(const Mesh& m, int c, int k, int l)
{
    const auto& cv = m.cells[c];
    double sum_kl = 0.0, sum_k = 0.0, sum_l = 0.0;
    for (int v : cv) {
        sum_kl += m.vertices[v][k] * m.vertices[v][l];
        sum_k += m.vertices[v][k];
        sum_l += m.vertices[v][l];
    }
    const double np = static_cast<double>(cv.size()); // d+1
    return m.cell_volumes[c] / (np * (np + 1.0)) * (sum_kl + sum_k * sum_l);
}

} // namespace detail

/// Exact local RT0 mass matrix of one cell, in the global dof convention
/// (rows/cols ordered like cell_facets, orientation signs applied).
inline Eigen::MatrixXd local_flux_mass(const Mesh& m, int c)
{
    if (m.kind == CellKind::Box) {
        const int d = m.dim;
        Vec3 lo, hi;
        m.cell_bounding_box(c, lo, hi);
        const double vol = m.cell_volumes[c];
        Eigen::MatrixXd loc = Eigen::MatrixXd::Zero(2 * d, 2 * d);
        for (int a = 0; a < d; ++a) {
            const double h = hi[a] - lo[a];
            const double diag = h * h / (3.0 * vol);
            const double off = h * h / (6.0 * vol);
            loc(2 * a, 2 * a) = diag;
            loc(2 * a + 1, 2 * a + 1) = diag;
            loc(2 * a, 2 * a + 1) = off;
            loc(2 * a + 1, 2 * a) = off;
        }
        return loc;
    }

    // simplex: phi_i = sign_i/(d |tau|) (x - v_i), v_i the opposite vertex;
    // normalized so the integral of the normal flux over facet i is 1
    const int d = m.dim;
    const int nd = d + 1;
    const double vol = m.cell_volumes[c];
    Eigen::MatrixXd loc(nd, nd);
    const double coef = 1.0 / (d * vol);
    std::vector<double> m1(3, 0.0);
    for (int k = 0; k < d; ++k) m1[k] = vol * m.cell_centroids[c][k];
    for (int i = 0; i < nd; ++i) {
        const Vec3 vi = m.vertices[m.cells[c][i]];
        for (int j = i; j < nd; ++j) {
            const Vec3 vj = m.vertices[m.cells[c][j]];
            double integral = 0.0;
            for (int k = 0; k < d; ++k)
                integral += detail::simplex_second_moment(m, c, k, k) -
                            (vi[k] + vj[k]) * m1[k] + vi[k] * vj[k] * vol;
            const double v = m.cell_facet_signs[c][i] * m.cell_facet_signs[c][j] *
                             coef * coef * integral;
            loc(i, j) = v;
            loc(j, i) = v;
        }
    }
    return loc;
}

/// RT0 mass matrix, optionally weighted by a strictly positive per-cell
/// coefficient (for the Darcy operator the coefficient is 1/k).
inline SpMat assemble_flux_mass(const FluxSpace& space,
                                const std::optional<Vec>& coeff = std::nullopt)
{
    const Mesh& m = *space.mesh;
    if (coeff) {
        if (coeff->size() != m.n_cells())
            throw InvalidCoefficientError("coefficient size does not match cell count");
        for (int c = 0; c < m.n_cells(); ++c)
            if (!((*coeff)[c] > 0.0) || !std::isfinite((*coeff)[c]))
                throw InvalidCoefficientError("coefficient must be strictly positive");
    }
    std::vector<Triplet> trips;
    for (int c = 0; c < m.n_cells(); ++c) {
        const Eigen::MatrixXd loc = local_flux_mass(m, c);
        const double s = coeff ? (*coeff)[c] : 1.0;
        const auto& cf = m.cell_facets[c];
        for (std::size_t i = 0; i < cf.size(); ++i)
            for (std::size_t j = 0; j < cf.size(); ++j)
                trips.emplace_back(cf[i], cf[j], s * loc(i, j));
    }
    SpMat out(m.n_facets(), m.n_facets());
    out.setFromTriplets(trips.begin(), trips.end());
    return out;
}

/// Diagonal P0 mass matrix: entries are the cell volumes.
inline SpMat assemble_scalar_mass(const ScalarSpace& space)
{
    const Mesh& m = *space.mesh;
    SpMat out(m.n_cells(), m.n_cells());
    out.reserve(Eigen::VectorXi::Constant(m.n_cells(), 1));
    for (int c = 0; c < m.n_cells(); ++c)
        out.insert(c, c) = m.cell_volumes[c];
    out.makeCompressed();
    return out;
}

inline Vec scalar_mass_diagonal(const Mesh& m)
{
    Vec w(m.n_cells());
    for (int c = 0; c < m.n_cells(); ++c) w[c] = m.cell_volumes[c];
    return w;
}

/// Divergence matrix: row per cell, column per facet dof. With flux-integral
/// dofs the divergence theorem gives entries equal to the orientation signs.
inline SpMat assemble_divergence(const FluxSpace& flux, const ScalarSpace& scalar)
{
    if (flux.mesh != scalar.mesh)
        throw InvalidPairingError("divergence requires spaces on the same mesh");
    const Mesh& m = *flux.mesh;
    std::vector<Triplet> trips;
    for (int c = 0; c < m.n_cells(); ++c)
        for (std::size_t j = 0; j < m.cell_facets[c].size(); ++j)
            trips.emplace_back(c, m.cell_facets[c][j],
                               static_cast<double>(m.cell_facet_signs[c][j]));
    SpMat out(m.n_cells(), m.n_facets());
    out.setFromTriplets(trips.begin(), trips.end());
    return out;
}

/// Saddle-point block system {M, B^T; B, -kappa^2 W or 0} with right-hand
/// side pair. The sampler variant carries the -kappa^2 W block; the Darcy
/// variant has a zero lower-right block.
struct SaddleSystem {
    enum class Variant { Darcy, Sampler };

    Variant variant = Variant::Darcy;
    int level = 0;
    const Mesh* mesh = nullptr;

    SpMat M; // n_u x n_u
    SpMat B; // n_p x n_u
    Vec Wdiag;       // P0 mass diagonal (sampler variant)
    double kappa2 = 0.0;

    Vec rhs_u, rhs_p;

    std::vector<char> constrained; // essential-BC flux dofs
    Vec constrained_value;

    int n_u() const { return static_cast<int>(M.rows()); }
    int n_p() const { return static_cast<int>(B.rows()); }

    void init_constraints()
    {
        constrained.assign(n_u(), 0);
        constrained_value = Vec::Zero(n_u());
    }

    SpMat monolithic() const
    {
        std::vector<Triplet> trips;
        const int nu = n_u();
        for (int k = 0; k < M.outerSize(); ++k)
            for (SpMat::InnerIterator it(M, k); it; ++it)
                trips.emplace_back(it.row(), it.col(), it.value());
        for (int k = 0; k < B.outerSize(); ++k)
            for (SpMat::InnerIterator it(B, k); it; ++it) {
                trips.emplace_back(nu + it.row(), it.col(), it.value());
                trips.emplace_back(it.col(), nu + it.row(), it.value());
            }
        if (kappa2 != 0.0)
            for (int c = 0; c < n_p(); ++c)
                trips.emplace_back(nu + c, nu + c, -kappa2 * Wdiag[c]);
        SpMat out(nu + n_p(), nu + n_p());
        out.setFromTriplets(trips.begin(), trips.end());
        return out;
    }

    Vec monolithic_rhs() const
    {
        Vec b(n_u() + n_p());
        b.head(n_u()) = rhs_u;
        b.tail(n_p()) = rhs_p;
        return b;
    }

    /// Residual of the block equations for a candidate solution.
    double residual_norm(const Vec& u, const Vec& p) const
    {
        Vec ru = M * u + B.transpose() * p - rhs_u;
        Vec rp = B * u - rhs_p;
        if (kappa2 != 0.0) rp -= kappa2 * Wdiag.cwiseProduct(p);
        return std::sqrt(ru.squaredNorm() + rp.squaredNorm());
    }
};

/// Symmetric elimination of the essential normal-flux condition u.n = value
/// on a boundary patch: constrained rows/columns are zeroed, the diagonal is
/// set to one and the right-hand side absorbs the eliminated columns.
/// Idempotent for a fixed (marker, value).
inline void apply_essential_flux_bc(SaddleSystem& sys, const std::string& marker,
                                    double value)
{
    const Mesh& m = *sys.mesh;
    if (sys.constrained.empty()) sys.init_constraints();

    std::vector<int> dofs = m.facets_with_marker(marker);
    for (int f : dofs) {
        if (!m.is_boundary_facet(f))
            throw InvalidGeometryError("essential BC marker on interior facet");
        const int c = m.facet_cells[f][0];
        int sign = 1;
        for (std::size_t j = 0; j < m.cell_facets[c].size(); ++j)
            if (m.cell_facets[c][j] == f) sign = m.cell_facet_signs[c][j];
        // dof = integral of u . n_global; value is the outward flux density
        const double dofval = sign * value * m.facet_measures[f];
        sys.constrained[f] = 1;
        sys.constrained_value[f] = dofval;
    }

    // rebuild M and B with the constrained columns eliminated
    std::vector<Triplet> mt, bt;
    for (int k = 0; k < sys.M.outerSize(); ++k)
        for (SpMat::InnerIterator it(sys.M, k); it; ++it) {
            const int i = static_cast<int>(it.row());
            const int j = static_cast<int>(it.col());
            const bool ci = sys.constrained[i], cj = sys.constrained[j];
            if (!ci && !cj) {
                mt.emplace_back(i, j, it.value());
            } else if (!ci && cj) {
                sys.rhs_u[i] -= it.value() * sys.constrained_value[j];
            } // rows of constrained dofs are dropped entirely
        }
    for (int i = 0; i < sys.n_u(); ++i)
        if (sys.constrained[i]) {
            mt.emplace_back(i, i, 1.0);
            sys.rhs_u[i] = sys.constrained_value[i];
        }
    for (int k = 0; k < sys.B.outerSize(); ++k)
        for (SpMat::InnerIterator it(sys.B, k); it; ++it) {
            const int j = static_cast<int>(it.col());
            if (sys.constrained[j])
                sys.rhs_p[it.row()] -= it.value() * sys.constrained_value[j];
            else
                bt.emplace_back(it.row(), it.col(), it.value());
        }
    SpMat newM(sys.n_u(), sys.n_u());
    newM.setFromTriplets(mt.begin(), mt.end());
    sys.M = std::move(newM);
    SpMat newB(sys.n_p(), sys.n_u());
    newB.setFromTriplets(bt.begin(), bt.end());
    sys.B = std::move(newB);
}

/// Interlevel interpolations for one refinement step: P_u embeds the coarse
/// RT0 space in the fine one, P_theta injects cell values into children.
struct InterpolationPair {
    SpMat P_u;     // n_fine_facets x n_coarse_facets
    SpMat P_theta; // n_fine_cells  x n_coarse_cells
};

namespace detail {

/// Evaluates the coarse RT0 basis function of coarse facet `lf` (local index
/// in cell c, global orientation) at point x inside cell c.
inline Vec3 eval_rt0_basis(const Mesh& m, int c, int lf, const Vec3& x)
{
    if (m.kind == CellKind::Box) {
        Vec3 lo, hi;
        m.cell_bounding_box(c, lo, hi);
        const int axis = lf / 2;
        const bool high_side = (lf % 2) == 1;
        const double h = hi[axis] - lo[axis];
        const double area = m.cell_volumes[c] / h;
        Vec3 out{0, 0, 0};
        out[axis] = (high_side ? (x[axis] - lo[axis]) : (hi[axis] - x[axis])) /
                    (h * area);
        return out; // +axis dof convention, no orientation flip needed
    }
    const int sign = m.cell_facet_signs[c][lf];
    const int d = m.dim;
    const Vec3 vi = m.vertices[m.cells[c][lf]];
    return (sign / (d * m.cell_volumes[c])) * (x - vi);
}

} // namespace detail

/// Canonical interpolation operators of the nested hierarchy.
inline InterpolationPair build_interpolations(const Mesh& coarse, const Mesh& fine,
                                              const RefinementMap& map)
{
    if (static_cast<int>(map.cell_children.size()) != coarse.n_cells())
        throw InvalidPairingError("refinement map does not match coarse mesh");
    int nchild = 0;
    for (const auto& ch : map.cell_children) nchild += static_cast<int>(ch.size());
    if (nchild != fine.n_cells())
        throw InvalidPairingError("refinement map does not match fine mesh");

    InterpolationPair out;

    std::vector<Triplet> pt;
    for (int c = 0; c < coarse.n_cells(); ++c)
        for (int ch : map.cell_children[c]) pt.emplace_back(ch, c, 1.0);
    out.P_theta.resize(fine.n_cells(), coarse.n_cells());
    out.P_theta.setFromTriplets(pt.begin(), pt.end());

    // P_u entries: fine dof f applied to the coarse basis function of coarse
    // facet F. RT0 basis components are linear, so midpoint evaluation of the
    // normal flux on the fine facet is exact.
    std::vector<Triplet> pu;
    // last coarse facet that contributed to each fine facet: a fine facet is
    // visited more than once per basis function (two children share it, or the
    // coarse facet is shared by two cells) and the values coincide, so the
    // first visit wins
    std::vector<int> last_contrib(fine.n_facets(), -1);
    for (int c = 0; c < coarse.n_cells(); ++c) {
        for (std::size_t lf = 0; lf < coarse.cell_facets[c].size(); ++lf) {
            const int F = coarse.cell_facets[c][lf];
            for (int child : map.cell_children[c]) {
                for (int f : fine.cell_facets[child]) {
                    if (last_contrib[f] == F) continue;
                    const Vec3 mid = fine.facet_centroids[f];
                    const Vec3 phi =
                        detail::eval_rt0_basis(coarse, c, static_cast<int>(lf), mid);
                    const double val =
                        dot(phi, fine.facet_normals[f]) * fine.facet_measures[f];
                    if (std::abs(val) > 1e-12) {
                        pu.emplace_back(f, F, val);
                        last_contrib[f] = F;
                    }
                }
            }
        }
    }
    out.P_u.resize(fine.n_facets(), coarse.n_facets());
    out.P_u.setFromTriplets(pu.begin(), pu.end());
    return out;
}

} // namespace mlspde
