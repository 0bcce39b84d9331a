#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include "mlspde/errors.hpp"
#include "mlspde/fespace.hpp"
#include "mlspde/sparse.hpp"

namespace mlspde {

using LinOp = std::function<Vec(const Vec&)>;

inline LinOp identity_op()
{
    return [](const Vec& v) { return v; };
}

inline LinOp matrix_op(const SpMat& A)
{
    return [&A](const Vec& v) -> Vec { return A * v; };
}

/// Thrown when an iterative solver exhausts its iteration budget. Carries the
/// best iterate seen so far for diagnostics.
class ConvergenceError : public SolverError {
public:
    ConvergenceError(const std::string& what, Vec best, int iterations, double residual)
        : SolverError(what), best_iterate(std::move(best)), iterations(iterations),
          residual(residual)
    {
    }

    Vec best_iterate;
    int iterations;
    double residual;
};

struct IterResult {
    Vec x;
    int iterations = 0;
    double residual = 0.0;
};

// ---------------------------------------------------------------------------
// direct solve

inline Vec direct_solve(const SpMat& A, const Vec& b)
{
    Eigen::SparseLU<SpMat> lu;
    lu.compute(A);
    if (lu.info() != Eigen::Success)
        throw SolverError("direct_solve: factorization failed (singular matrix?)");
    return lu.solve(b);
}

inline Vec direct_solve(const SaddleSystem& sys)
{
    return direct_solve(sys.monolithic(), sys.monolithic_rhs());
}

/// Reusable factorization for repeated solves against the same operator.
class DirectSolver {
public:
    explicit DirectSolver(const SpMat& A)
    {
        lu_.compute(A);
        if (lu_.info() != Eigen::Success)
            throw SolverError("DirectSolver: factorization failed");
    }

    Vec solve(const Vec& b) const { return lu_.solve(b); }
    LinOp op() const
    {
        return [this](const Vec& v) { return solve(v); };
    }

private:
    Eigen::SparseLU<SpMat> lu_;
};

// ---------------------------------------------------------------------------
// Krylov solvers

struct IterControl {
    double rtol = 1e-6;
    double atol = 1e-12;
    int maxit = 1000;
};

/// Preconditioned conjugate gradients for SPD operators.
inline IterResult pcg(const LinOp& A, const Vec& b, const LinOp& precond,
                      const IterControl& ctl = {})
{
    const double target = std::max(ctl.rtol * b.norm(), ctl.atol);
    Vec x = Vec::Zero(b.size());
    Vec r = b;
    double rnorm = r.norm();
    if (rnorm <= target) return {x, 0, rnorm};

    Vec z = precond(r);
    Vec p = z;
    double rz = r.dot(z);
    Vec best = x;
    double best_res = rnorm;
    for (int it = 1; it <= ctl.maxit; ++it) {
        Vec Ap = A(p);
        const double pAp = p.dot(Ap);
        if (pAp <= 0.0)
            throw SolverError("pcg: operator not positive definite");
        const double alpha = rz / pAp;
        x += alpha * p;
        r -= alpha * Ap;
        rnorm = r.norm();
        if (rnorm < best_res) {
            best = x;
            best_res = rnorm;
        }
        if (rnorm <= target) return {x, it, rnorm};
        z = precond(r);
        const double rz_new = r.dot(z);
        p = z + (rz_new / rz) * p;
        rz = rz_new;
    }
    throw ConvergenceError("pcg: maximum iterations exceeded", best, ctl.maxit,
                           best_res);
}

inline IterResult pcg(const SpMat& A, const Vec& b, const LinOp& precond,
                      const IterControl& ctl = {})
{
    return pcg(matrix_op(A), b, precond, ctl);
}

/// Restarted GMRES with right preconditioning: solves A M^{-1} y = b, x = M^{-1} y.
inline IterResult gmres(const LinOp& A, const Vec& b, const LinOp& precond,
                        int restart = 50, const IterControl& ctl = {})
{
    const int n = static_cast<int>(b.size());
    const double target = std::max(ctl.rtol * b.norm(), ctl.atol);
    Vec x = Vec::Zero(n);
    Vec best = x;
    double best_res = b.norm();
    if (best_res <= target) return {x, 0, best_res};

    int total_it = 0;
    while (total_it < ctl.maxit) {
        Vec r = b - A(x);
        double beta = r.norm();
        if (beta <= target) return {x, total_it, beta};

        const int m = std::min(restart, ctl.maxit - total_it);
        Eigen::MatrixXd V(n, m + 1);
        Eigen::MatrixXd H = Eigen::MatrixXd::Zero(m + 1, m);
        Vec cs = Vec::Zero(m), sn = Vec::Zero(m);
        Vec g = Vec::Zero(m + 1);
        V.col(0) = r / beta;
        g[0] = beta;

        int k = 0;
        for (; k < m; ++k) {
            Vec w = A(precond(V.col(k)));
            for (int i = 0; i <= k; ++i) { // modified Gram-Schmidt
                H(i, k) = w.dot(V.col(i));
                w -= H(i, k) * V.col(i);
            }
            const double hnext = w.norm();
            H(k + 1, k) = hnext;
            if (hnext > 0.0) V.col(k + 1) = w / hnext;

            for (int i = 0; i < k; ++i) { // apply accumulated Givens rotations
                const double t = cs[i] * H(i, k) + sn[i] * H(i + 1, k);
                H(i + 1, k) = -sn[i] * H(i, k) + cs[i] * H(i + 1, k);
                H(i, k) = t;
            }
            const double denom = std::hypot(H(k, k), H(k + 1, k));
            cs[k] = H(k, k) / denom;
            sn[k] = H(k + 1, k) / denom;
            H(k, k) = denom;
            H(k + 1, k) = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] = cs[k] * g[k];
            ++total_it;
            if (std::abs(g[k + 1]) <= target || hnext == 0.0) {
                ++k;
                break;
            }
        }

        // solve the upper-triangular least-squares problem and update x
        Vec y = Vec::Zero(k);
        for (int i = k - 1; i >= 0; --i) {
            double s = g[i];
            for (int j = i + 1; j < k; ++j) s -= H(i, j) * y[j];
            y[i] = s / H(i, i);
        }
        Vec dz = Vec::Zero(n);
        for (int i = 0; i < k; ++i) dz += y[i] * V.col(i);
        x += precond(dz);

        const double res = (b - A(x)).norm();
        if (res < best_res) {
            best = x;
            best_res = res;
        }
        if (res <= target) return {x, total_it, res};
    }
    throw ConvergenceError("gmres: maximum iterations exceeded", best, total_it,
                           best_res);
}

inline IterResult gmres(const SpMat& A, const Vec& b, const LinOp& precond,
                        int restart = 50, const IterControl& ctl = {})
{
    return gmres(matrix_op(A), b, precond, restart, ctl);
}

// ---------------------------------------------------------------------------
// block-LDU preconditioner for Darcy saddle systems

enum class LduVariant { Full, Diagonal, Triangular };

/// Approximate block-LDU factorization of [[M, B^T], [B, 0]]. The velocity
/// block is inverted approximately by a fixed number of symmetric Gauss-Seidel
/// sweeps; the approximate Schur complement S = B diag(M)^{-1} B^T is solved by
/// a pluggable applicator (sparse direct by default).
class BlockLduPreconditioner {
public:
    BlockLduPreconditioner(const SaddleSystem& sys, int gs_sweeps = 3,
                           LinOp schur_solver = nullptr,
                           LduVariant variant = LduVariant::Full,
                           LinOp velocity_solver = nullptr)
        : n_u_(sys.n_u()), n_p_(sys.n_p()), B_(sys.B), gs_sweeps_(gs_sweeps),
          variant_(variant), velocity_(std::move(velocity_solver))
    {
        if (sys.variant != SaddleSystem::Variant::Darcy)
            throw ConfigError("block-LDU preconditioner expects a Darcy system");
        M_row_ = Eigen::SparseMatrix<double, Eigen::RowMajor>(sys.M);
        Vec dinv = sys.M.diagonal().cwiseInverse();
        S_ = B_ * SpMat(dinv.asDiagonal()) * SpMat(B_.transpose());
        if (schur_solver) {
            schur_ = std::move(schur_solver);
        } else {
            auto ldlt = std::make_shared<Eigen::SimplicialLDLT<SpMat>>();
            ldlt->compute(S_);
            if (ldlt->info() != Eigen::Success)
                throw SolverError("block-LDU: Schur complement factorization failed");
            schur_ = [ldlt](const Vec& v) -> Vec { return ldlt->solve(v); };
        }
    }

    const SpMat& schur_matrix() const { return S_; }

    /// Application of the inverse of the (approximate) LDU factorization.
    Vec apply(const Vec& r) const
    {
        const Vec r_u = r.head(n_u_);
        const Vec r_p = r.tail(n_p_);
        Vec x(n_u_ + n_p_);
        switch (variant_) {
        case LduVariant::Diagonal: {
            x.head(n_u_) = msolve(r_u);
            x.tail(n_p_) = schur_(r_p);
            break;
        }
        case LduVariant::Triangular: {
            Vec xu = msolve(r_u);
            x.head(n_u_) = xu;
            x.tail(n_p_) = -schur_(r_p - B_ * xu);
            break;
        }
        case LduVariant::Full: {
            Vec yu = msolve(r_u);
            Vec xp = -schur_(r_p - B_ * yu);
            x.head(n_u_) = yu - msolve(Vec(B_.transpose() * xp));
            x.tail(n_p_) = xp;
            break;
        }
        }
        return x;
    }

    LinOp op() const
    {
        return [this](const Vec& v) { return apply(v); };
    }

private:
    Vec msolve(const Vec& b) const
    {
        if (velocity_) return velocity_(b);
        Vec x = Vec::Zero(n_u_);
        for (int s = 0; s < gs_sweeps_; ++s) {
            gs_sweep(x, b, /*forward=*/true);
            gs_sweep(x, b, /*forward=*/false);
        }
        return x;
    }

    void gs_sweep(Vec& x, const Vec& b, bool forward) const
    {
        const int n = n_u_;
        for (int ii = 0; ii < n; ++ii) {
            const int i = forward ? ii : n - 1 - ii;
            double s = b[i];
            double diag = 0.0;
            for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator
                     it(M_row_, i);
                 it; ++it) {
                if (it.col() == i)
                    diag = it.value();
                else
                    s -= it.value() * x[it.col()];
            }
            x[i] = s / diag;
        }
    }

    int n_u_, n_p_;
    SpMat B_;
    Eigen::SparseMatrix<double, Eigen::RowMajor> M_row_;
    SpMat S_;
    int gs_sweeps_;
    LduVariant variant_;
    LinOp schur_;
    LinOp velocity_;
};

inline BlockLduPreconditioner build_block_ldu(const SaddleSystem& sys,
                                              int gs_sweeps = 3,
                                              LinOp schur_solver = nullptr,
                                              LduVariant variant = LduVariant::Full)
{
    return BlockLduPreconditioner(sys, gs_sweeps, std::move(schur_solver), variant);
}

/// Exact LDU: exact velocity solve and exact Schur complement. The
/// preconditioned operator is the identity, so GMRES converges in <= 2
/// iterations; used as a correctness witness for the factorization structure.
inline BlockLduPreconditioner build_exact_ldu(const SaddleSystem& sys)
{
    auto mlu = std::make_shared<Eigen::SparseLU<SpMat>>();
    mlu->compute(sys.M);
    if (mlu->info() != Eigen::Success)
        throw SolverError("exact LDU: velocity block factorization failed");
    LinOp vel = [mlu](const Vec& v) -> Vec { return mlu->solve(v); };

    // exact Schur complement B M^{-1} B^T, built densely (test-scale systems)
    const int np = sys.n_p();
    Eigen::MatrixXd S(np, np);
    Eigen::MatrixXd Bt = Eigen::MatrixXd(SpMat(sys.B.transpose()));
    for (int j = 0; j < np; ++j) S.col(j) = sys.B * mlu->solve(Vec(Bt.col(j)));
    auto sch = std::make_shared<Eigen::LDLT<Eigen::MatrixXd>>(S);
    LinOp schur = [sch](const Vec& v) -> Vec { return sch->solve(v); };

    return BlockLduPreconditioner(sys, 0, std::move(schur), LduVariant::Full,
                                  std::move(vel));
}

// ---------------------------------------------------------------------------
// hybridization of sampler saddle systems

enum class HybridSolveMode { Direct, Pcg };

/// Element-decoupled form of a sampler saddle system with facet Lagrange
/// multipliers. The flux and scalar unknowns are eliminated element-locally,
/// leaving the SPD reduced operator H = C (M + B^T (kappa^2 W)^{-1} B)^{-1} C^T
/// on the interior facet multipliers.
class HybridizedSystem {
public:
    HybridizedSystem(const SaddleSystem& sys, HybridSolveMode mode = HybridSolveMode::Direct)
        : sys_(&sys), mode_(mode)
    {
        if (sys.variant != SaddleSystem::Variant::Sampler)
            throw ConfigError("hybridize expects a sampler system");
        const Mesh& m = *sys.mesh;
        const int nf = m.n_facets();
        const auto is_con = [&sys](int f) {
            return !sys.constrained.empty() && sys.constrained[f];
        };

        // multipliers live on interior facets without an essential constraint
        mult_index_.assign(nf, -1);
        for (int f = 0; f < nf; ++f)
            if (m.facet_cells[f][1] >= 0 && !is_con(f)) mult_index_[f] = n_mult_++;

        if (sys.kappa2 <= 0.0) {
            bool all_constrained = true;
            for (int f = 0; f < nf; ++f)
                if (m.facet_cells[f][1] < 0 && !is_con(f)) all_constrained = false;
            if (all_constrained)
                throw SolverError(
                    "hybridize: kappa = 0 with pure essential BCs is singular");
        }

        elems_.resize(m.n_cells());
        std::vector<Triplet> htrips;
        for (int c = 0; c < m.n_cells(); ++c) {
            Element& e = elems_[c];
            e.facets = m.cell_facets[c];
            const int nd = static_cast<int>(e.facets.size());
            e.constrained.assign(nd, 0);
            for (int j = 0; j < nd; ++j)
                if (is_con(e.facets[j])) e.constrained[j] = 1;
            // the system carries post-elimination rhs vectors, so constrained
            // dofs are decoupled from the divergence rows (zero sign)
            e.signs.resize(nd);
            for (int j = 0; j < nd; ++j)
                e.signs[j] = e.constrained[j] ? 0.0 : m.cell_facet_signs[c][j];
            e.w = m.cell_volumes[c];

            Eigen::MatrixXd T = local_flux_mass(m, c);
            // B^T (kappa^2 W)^{-1} B contribution: rank-one in the sign vector
            if (sys.kappa2 > 0.0)
                for (int i = 0; i < nd; ++i)
                    for (int j = 0; j < nd; ++j)
                        T(i, j) += e.signs[i] * e.signs[j] / (sys.kappa2 * e.w);

            // eliminate constrained dofs symmetrically inside the element; the
            // rhs shift is already present in the system's post-BC rhs vectors
            for (int j = 0; j < nd; ++j) {
                if (!e.constrained[j]) continue;
                T.row(j).setZero();
                T.col(j).setZero();
                T(j, j) = 1.0;
            }
            e.bc_values = Eigen::VectorXd::Zero(nd);
            for (int j = 0; j < nd; ++j)
                if (e.constrained[j]) e.bc_values[j] = sys.constrained_value[e.facets[j]];

            e.Tinv.compute(T);
            if (e.Tinv.info() != Eigen::Success)
                throw SolverError("hybridize: element block factorization failed");

            // constraint rows: +1 in the lower-index cell copy, -1 in the higher
            for (int j = 0; j < nd; ++j) {
                const int f = e.facets[j];
                if (mult_index_[f] < 0) continue;
                const double coeff = (m.facet_cells[f][0] == c) ? 1.0 : -1.0;
                e.c_rows.push_back({j, mult_index_[f], coeff});
            }

            // element contribution C_e T_e^{-1} C_e^T
            if (!e.c_rows.empty()) {
                Eigen::MatrixXd Ct =
                    Eigen::MatrixXd::Zero(nd, static_cast<int>(e.c_rows.size()));
                for (std::size_t k = 0; k < e.c_rows.size(); ++k)
                    Ct(e.c_rows[k].local_dof, static_cast<int>(k)) = e.c_rows[k].coeff;
                Eigen::MatrixXd Hloc = Ct.transpose() * e.Tinv.solve(Ct);
                for (std::size_t a = 0; a < e.c_rows.size(); ++a)
                    for (std::size_t b = 0; b < e.c_rows.size(); ++b)
                        htrips.emplace_back(e.c_rows[a].mult, e.c_rows[b].mult,
                                            Hloc(static_cast<int>(a),
                                                 static_cast<int>(b)));
            }
        }

        H_.resize(n_mult_, n_mult_);
        H_.setFromTriplets(htrips.begin(), htrips.end());

        // diagonal rescaling by facet measures: a constant multiplier vector in
        // the rescaled system corresponds to a constant multiplier function
        scale_ = Vec::Ones(n_mult_);
        for (int f = 0; f < nf; ++f)
            if (mult_index_[f] >= 0) scale_[mult_index_[f]] = m.facet_measures[f];

        if (n_mult_ > 0) {
            SpMat Hs = SpMat(scale_.asDiagonal()) * H_ * SpMat(scale_.asDiagonal());
            if (mode_ == HybridSolveMode::Direct) {
                hs_ldlt_ = std::make_shared<Eigen::SimplicialLDLT<SpMat>>();
                hs_ldlt_->compute(Hs);
                if (hs_ldlt_->info() != Eigen::Success)
                    throw SolverError("hybridize: reduced system is singular");
            } else {
                hs_ic_ = std::make_shared<Eigen::IncompleteCholesky<double>>();
                hs_ic_->compute(Hs);
                if (hs_ic_->info() != Eigen::Success)
                    throw SolverError("hybridize: incomplete factorization failed");
                hs_mat_ = std::make_shared<SpMat>(std::move(Hs));
            }
        }
    }

    int n_multipliers() const { return n_mult_; }
    const SpMat& reduced_matrix() const { return H_; }

    /// Stopping criteria for the iterative reduced solve (Pcg mode).
    IterControl iter_control{1e-6, 1e-12, 10000};

    /// Solve for the given right-hand side; returns (u, theta). An optional
    /// multiplier warm start seeds the iterative reduced solve.
    std::pair<Vec, Vec> solve(const Vec& rhs_u, const Vec& rhs_p,
                              const Vec* lambda0 = nullptr) const
    {
        const Mesh& m = *sys_->mesh;
        const int nc = m.n_cells();

        // element right-hand sides r_e = f_u + B^T f_theta / (kappa^2 w) - bc terms
        std::vector<Eigen::VectorXd> r(nc);
        Vec g = Vec::Zero(n_mult_);
        for (int c = 0; c < nc; ++c) {
            const Element& e = elems_[c];
            const int nd = static_cast<int>(e.facets.size());
            Eigen::VectorXd re(nd);
            for (int j = 0; j < nd; ++j) {
                const int f = e.facets[j];
                re[j] = half_rhs(rhs_u, f);
                if (sys_->kappa2 > 0.0)
                    re[j] += e.signs[j] * rhs_p[c] / (sys_->kappa2 * e.w);
            }
            for (int j = 0; j < nd; ++j)
                if (e.constrained[j]) re[j] = e.bc_values[j];
            r[c] = re;
            Eigen::VectorXd Tr = e.Tinv.solve(re);
            for (const auto& row : e.c_rows) g[row.mult] += row.coeff * Tr[row.local_dof];
        }

        Vec lambda = Vec::Zero(n_mult_);
        if (n_mult_ > 0) {
            Vec gs = scale_.cwiseProduct(g);
            if (mode_ == HybridSolveMode::Direct) {
                lambda = scale_.cwiseProduct(Vec(hs_ldlt_->solve(gs)));
            } else {
                LinOp pre = [this](const Vec& v) -> Vec { return hs_ic_->solve(v); };
                // warm start enters through the initial residual shift
                Vec mu0 = Vec::Zero(n_mult_);
                if (lambda0 && lambda0->size() == n_mult_)
                    mu0 = lambda0->cwiseQuotient(scale_);
                Vec rhs = gs - *hs_mat_ * mu0;
                IterResult res = pcg(*hs_mat_, rhs, pre, iter_control);
                lambda = scale_.cwiseProduct(Vec(mu0 + res.x));
                last_iterations_ = res.iterations;
            }
        }

        // recovery
        Vec u = Vec::Zero(m.n_facets());
        Vec theta = Vec::Zero(nc);
        for (int c = 0; c < nc; ++c) {
            const Element& e = elems_[c];
            const int nd = static_cast<int>(e.facets.size());
            Eigen::VectorXd rhs = r[c];
            for (const auto& row : e.c_rows)
                rhs[row.local_dof] -= row.coeff * lambda[row.mult];
            Eigen::VectorXd ue = e.Tinv.solve(rhs);
            for (int j = 0; j < nd; ++j) {
                const int f = e.facets[j];
                if (m.facet_cells[f][0] == c) u[f] = ue[j]; // lower-index copy wins
            }
            if (sys_->kappa2 > 0.0) {
                double bu = 0.0;
                for (int j = 0; j < nd; ++j) bu += e.signs[j] * ue[j];
                theta[c] = (bu - rhs_p[c]) / (sys_->kappa2 * e.w);
            }
        }
        return {u, theta};
    }

    std::pair<Vec, Vec> solve() const { return solve(sys_->rhs_u, sys_->rhs_p); }

    int last_iterations() const { return last_iterations_; }

private:
    // split the assembled rhs on a shared facet evenly between the two copies;
    // the sum over copies is what enters the recovered global equations
    double half_rhs(const Vec& rhs_u, int f) const
    {
        const Mesh& m = *sys_->mesh;
        return m.facet_cells[f][1] >= 0 ? 0.5 * rhs_u[f] : rhs_u[f];
    }

    struct CRow {
        int local_dof;
        int mult;
        double coeff;
    };

    struct Element {
        std::vector<int> facets;
        std::vector<double> signs;
        std::vector<char> constrained;
        Eigen::VectorXd bc_values;
        double w = 0.0;
        Eigen::LDLT<Eigen::MatrixXd> Tinv;
        std::vector<CRow> c_rows;
    };

    const SaddleSystem* sys_;
    HybridSolveMode mode_;
    int n_mult_ = 0;
    std::vector<int> mult_index_;
    std::vector<Element> elems_;
    SpMat H_;
    Vec scale_;
    std::shared_ptr<Eigen::SimplicialLDLT<SpMat>> hs_ldlt_;
    std::shared_ptr<Eigen::IncompleteCholesky<double>> hs_ic_;
    std::shared_ptr<SpMat> hs_mat_;
    mutable int last_iterations_ = 0;
};

inline HybridizedSystem hybridize(const SaddleSystem& sys,
                                  HybridSolveMode mode = HybridSolveMode::Direct)
{
    return HybridizedSystem(sys, mode);
}

} // namespace mlspde
