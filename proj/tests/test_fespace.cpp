#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/SparseLU>

#include "mlspde/fespace.hpp"

using namespace mlspde;

namespace {

// Degree-2 exact quadrature oracle for RT0 mass entries on simplices,
// independent of the closed-form assembly path.
Eigen::MatrixXd quadrature_flux_mass(const Mesh& m, int c)
{
    const int d = m.dim;
    const int nd = d + 1;
    std::vector<std::vector<double>> bary;
    std::vector<double> wts;
    if (d == 2) {
        bary = {{0.5, 0.5, 0.0}, {0.0, 0.5, 0.5}, {0.5, 0.0, 0.5}};
        wts = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    } else {
        const double a = 0.5854101966249685, b = 0.1381966011250105;
        bary = {{a, b, b, b}, {b, a, b, b}, {b, b, a, b}, {b, b, b, a}};
        wts = {0.25, 0.25, 0.25, 0.25};
    }
    Eigen::MatrixXd loc = Eigen::MatrixXd::Zero(nd, nd);
    for (std::size_t q = 0; q < bary.size(); ++q) {
        Vec3 x{0, 0, 0};
        for (int i = 0; i < nd; ++i)
            x = x + bary[q][i] * m.vertices[m.cells[c][i]];
        std::vector<Vec3> phi(nd);
        for (int i = 0; i < nd; ++i) {
            const double coef =
                m.cell_facet_signs[c][i] / (d * m.cell_volumes[c]);
            phi[i] = coef * (x - m.vertices[m.cells[c][i]]);
        }
        for (int i = 0; i < nd; ++i)
            for (int j = 0; j < nd; ++j)
                loc(i, j) += wts[q] * m.cell_volumes[c] * dot(phi[i], phi[j]);
    }
    return loc;
}

} // namespace

TEST_CASE("unit-square RT0 mass matrix closed form")
{
    Mesh m = build_structured_mesh({{0, 0, 0}, {1, 1, 0}}, {1, 1, 1}, 2);
    FluxSpace rt(m);
    SpMat M = assemble_flux_mass(rt);
    Eigen::MatrixXd D = Eigen::MatrixXd(M);
    Eigen::MatrixXd ref(4, 4);
    ref << 1.0 / 3, 1.0 / 6, 0, 0,
           1.0 / 6, 1.0 / 3, 0, 0,
           0, 0, 1.0 / 3, 1.0 / 6,
           0, 0, 1.0 / 6, 1.0 / 3;
    CHECK((D - ref).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("flux mass is linear in the coefficient")
{
    Mesh m = build_simplicial_mesh({SimplicialSpec::Kind::UnitSquare, 3});
    FluxSpace rt(m);
    SpMat M1 = assemble_flux_mass(rt);
    Vec two = Vec::Constant(m.n_cells(), 2.0);
    SpMat M2 = assemble_flux_mass(rt, two);
    CHECK(max_abs(SpMat(M2 - SpMat(2.0 * M1))) < 1e-14);

    Vec bad = Vec::Constant(m.n_cells(), -1.0);
    CHECK_THROWS_AS(assemble_flux_mass(rt, bad), InvalidCoefficientError);
}

TEST_CASE("simplex flux mass matches quadrature oracle")
{
    // reference triangle
    Mesh tri = make_simplicial_mesh(2, {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}, {{0, 1, 2}});
    Eigen::MatrixXd loc = local_flux_mass(tri, 0);
    Eigen::MatrixXd orc = quadrature_flux_mass(tri, 0);
    CHECK((loc - orc).cwiseAbs().maxCoeff() < 1e-12);
    // SPD
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(loc);
    CHECK(es.eigenvalues().minCoeff() > 0.0);

    // every cell of a 3D mesh
    Mesh cube = build_simplicial_mesh({SimplicialSpec::Kind::UnitCube, 2});
    for (int c = 0; c < cube.n_cells(); ++c) {
        Eigen::MatrixXd l3 = local_flux_mass(cube, c);
        Eigen::MatrixXd o3 = quadrature_flux_mass(cube, c);
        CHECK((l3 - o3).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("scalar mass is the diagonal of cell volumes")
{
    Mesh m = build_structured_mesh({{0, 0, 0}, {1, 1, 0}}, {1, 1, 1}, 2);
    auto [fine, map] = uniform_refine(m);
    ScalarSpace p0(fine);
    SpMat W = assemble_scalar_mass(p0);
    for (int c = 0; c < 4; ++c) CHECK(W.coeff(c, c) == doctest::Approx(0.25).epsilon(1e-14));

    Mesh tri = build_simplicial_mesh({SimplicialSpec::Kind::UnitSquare, 1});
    SpMat Wt = assemble_scalar_mass(ScalarSpace(tri));
    CHECK(Wt.coeff(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(Wt.coeff(1, 1) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("divergence matrix entries are orientation signs")
{
    Mesh m = build_structured_mesh({{0, 0, 0}, {1, 1, 0}}, {1, 1, 1}, 2);
    SpMat B = assemble_divergence(FluxSpace(m), ScalarSpace(m));
    Eigen::RowVectorXd row = Eigen::RowVectorXd(B.row(0));
    Eigen::RowVectorXd ref(4);
    ref << -1, 1, -1, 1;
    CHECK((row - ref).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("divergence of a constant field sums to zero")
{
    Mesh m = build_simplicial_mesh({SimplicialSpec::Kind::UnitSquare, 2});
    SpMat B = assemble_divergence(FluxSpace(m), ScalarSpace(m));
    const Vec3 a{0.3, -1.2, 0.0};
    Vec u(m.n_facets());
    for (int f = 0; f < m.n_facets(); ++f)
        u[f] = dot(a, m.facet_normals[f]) * m.facet_measures[f];
    Vec div = B * u;
    CHECK(div.cwiseAbs().maxCoeff() < 1e-13); // constant fields are divergence free
}

TEST_CASE("mismatched meshes are rejected")
{
    Mesh a = build_simplicial_mesh({SimplicialSpec::Kind::UnitSquare, 1});
    Mesh b = build_simplicial_mesh({SimplicialSpec::Kind::UnitSquare, 2});
    CHECK_THROWS_AS(assemble_divergence(FluxSpace(a), ScalarSpace(b)),
                    InvalidPairingError);
}

TEST_CASE("interpolation operators: constants, uniform flow, Galerkin identity")
{
    for (bool structured : {true, false}) {
        Mesh coarse = structured
            ? build_structured_mesh({{0, 0, 0}, {1.5, 1.0, 0}}, {3, 2, 1}, 2)
            : build_simplicial_mesh({SimplicialSpec::Kind::UnitSquare, 2});
        auto [fine, map] = uniform_refine(coarse);
        InterpolationPair P = build_interpolations(coarse, fine, map);

        // P_theta . 1 = 1
        Vec ones = Vec::Ones(coarse.n_cells());
        Vec fones = P.P_theta * ones;
        CHECK((fones - Vec::Ones(fine.n_cells())).cwiseAbs().maxCoeff() < 1e-14);

        // uniform coarse flow interpolates to uniform fine flow
        const Vec3 a{0.7, -0.25, 0.0};
        Vec uc(coarse.n_facets()), uf_ref(fine.n_facets());
        for (int f = 0; f < coarse.n_facets(); ++f)
            uc[f] = dot(a, coarse.facet_normals[f]) * coarse.facet_measures[f];
        for (int f = 0; f < fine.n_facets(); ++f)
            uf_ref[f] = dot(a, fine.facet_normals[f]) * fine.facet_measures[f];
        Vec uf = P.P_u * uc;
        CHECK((uf - uf_ref).cwiseAbs().maxCoeff() < 1e-12);

        // Galerkin identity for the scalar mass
        SpMat Wf = assemble_scalar_mass(ScalarSpace(fine));
        SpMat Wc = assemble_scalar_mass(ScalarSpace(coarse));
        SpMat proj = P.P_theta.transpose() * Wf * P.P_theta;
        CHECK(max_abs(SpMat(proj - Wc)) < 1e-12);

        // commutation with the facet-integral dof scaling:
        // W_f^{-1} B_f P_u = P_theta W_c^{-1} B_c  (mean divergence commutes)
        SpMat Bf = assemble_divergence(FluxSpace(fine), ScalarSpace(fine));
        SpMat Bc = assemble_divergence(FluxSpace(coarse), ScalarSpace(coarse));
        Vec wf = scalar_mass_diagonal(fine), wc = scalar_mass_diagonal(coarse);
        SpMat lhs = SpMat(wf.cwiseInverse().asDiagonal()) * Bf * P.P_u;
        SpMat rhs = P.P_theta * SpMat(wc.cwiseInverse().asDiagonal()) * Bc;
        CHECK(max_abs(SpMat(lhs - rhs)) < 1e-12);

        // Galerkin form of the same identity
        SpMat Bgal = P.P_theta.transpose() * Bf * P.P_u;
        CHECK(max_abs(SpMat(Bgal - Bc)) < 1e-12);
    }
}

TEST_CASE("3D interpolations commute as well")
{
    Mesh coarse = build_simplicial_mesh({SimplicialSpec::Kind::UnitCube, 1});
    auto [fine, map] = uniform_refine(coarse);
    InterpolationPair P = build_interpolations(coarse, fine, map);
    SpMat Bf = assemble_divergence(FluxSpace(fine), ScalarSpace(fine));
    SpMat Bc = assemble_divergence(FluxSpace(coarse), ScalarSpace(coarse));
    CHECK(max_abs(SpMat(P.P_theta.transpose() * Bf * P.P_u - Bc)) < 1e-12);

    // Galerkin projection of the flux mass equals direct coarse assembly
    SpMat Mf = assemble_flux_mass(FluxSpace(fine));
    SpMat Mc = assemble_flux_mass(FluxSpace(coarse));
    SpMat proj = P.P_u.transpose() * Mf * P.P_u;
    CHECK(max_abs(SpMat(proj - Mc)) < 1e-11 * max_abs(Mc));
}

namespace {

SaddleSystem make_sampler_system(const Mesh& m, double kappa2)
{
    SaddleSystem sys;
    sys.variant = SaddleSystem::Variant::Sampler;
    sys.mesh = &m;
    sys.M = assemble_flux_mass(FluxSpace(m));
    sys.B = assemble_divergence(FluxSpace(m), ScalarSpace(m));
    sys.Wdiag = scalar_mass_diagonal(m);
    sys.kappa2 = kappa2;
    sys.rhs_u = Vec::Zero(m.n_facets());
    sys.rhs_p = Vec::Zero(m.n_cells());
    return sys;
}

} // namespace

TEST_CASE("essential flux BC: elimination, idempotency, solvability")
{
    Mesh m = build_structured_mesh({{0, 0, 0}, {1, 1, 0}}, {1, 1, 1}, 2);
    SaddleSystem sys = make_sampler_system(m, 2.0);
    sys.rhs_p = Vec::Constant(1, -0.7);

    for (const auto& name : {"x_lo", "x_hi", "y_lo", "y_hi"})
        apply_essential_flux_bc(sys, name, 0.0);

    SpMat M_once = sys.M;
    apply_essential_flux_bc(sys, "x_lo", 0.0); // idempotent
    CHECK(max_abs(SpMat(sys.M - M_once)) == 0.0);

    Eigen::SparseLU<SpMat> lu;
    SpMat A = sys.monolithic();
    lu.compute(A);
    REQUIRE(lu.info() == Eigen::Success);
    Vec x = lu.solve(sys.monolithic_rhs());
    // boundary flux dofs exactly zero
    for (int f = 0; f < 4; ++f) CHECK(x[f] == 0.0);
    // pressure determined by the kappa^2 W term: -kappa^2 |tau| p = rhs_p
    CHECK(x[4] == doctest::Approx(-0.7 / (-2.0 * 1.0)).epsilon(1e-14));

    CHECK_THROWS_AS(apply_essential_flux_bc(sys, "nope", 0.0), UnknownMarkerError);
}
