#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "mlspde/rng.hpp"
#include "mlspde/transfer.hpp"

using namespace mlspde;

TEST_CASE("bvh basics")
{
    Mesh one = build_structured_mesh({{0, 0, 0}, {1, 1, 0}}, {1, 1, 1}, 2);
    Bvh t1(one);
    CHECK(t1.nodes().size() == 1);
    CHECK(t1.nodes()[0].left < 0);
    CHECK(t1.query({0.2, 0.2, 0}, {0.3, 0.3, 0}) == std::vector<int>{0});

    Mesh grid = build_structured_mesh({{0, 0, 0}, {1, 1, 0}}, {8, 8, 1}, 2);
    BvhParams params;
    params.leaf_capacity = 4;
    Bvh t(grid, params);
    for (const auto& n : t.nodes())
        if (n.left < 0) CHECK(n.end - n.begin <= 4);

    // every element's box is inside its leaf box, and self-query finds it
    for (const auto& n : t.nodes()) {
        if (n.left >= 0) continue;
        for (int i = n.begin; i < n.end; ++i) {
            Vec3 lo, hi;
            t.element_box(t.element(i), lo, hi);
            for (int a = 0; a < 3; ++a) {
                CHECK(lo[a] >= n.lo[a] - 1e-15);
                CHECK(hi[a] <= n.hi[a] + 1e-15);
            }
        }
    }
    for (int c = 0; c < grid.n_cells(); ++c) {
        Vec3 lo, hi;
        t.element_box(c, lo, hi);
        auto hits = t.query(lo, hi);
        CHECK(std::find(hits.begin(), hits.end(), c) != hits.end());
    }
}

TEST_CASE("candidate pairs match the brute-force oracle")
{
    Mesh tri = build_simplicial_mesh({SimplicialSpec::Kind::UnitSquare, 5});
    Mesh box = build_structured_mesh({{-0.1, -0.1, 0}, {1.1, 1.1, 0}}, {6, 7, 1}, 2);
    Bvh ta(tri), tb(box);
    CandidatePairs got = find_candidate_pairs(ta, tb);

    std::set<std::pair<int, int>> brute;
    for (int i = 0; i < tri.n_cells(); ++i) {
        Vec3 alo, ahi;
        tri.cell_bounding_box(i, alo, ahi);
        for (int j = 0; j < box.n_cells(); ++j) {
            Vec3 blo, bhi;
            box.cell_bounding_box(j, blo, bhi);
            bool inter = true;
            for (int a = 0; a < 2; ++a)
                if (ahi[a] < blo[a] || bhi[a] < alo[a]) inter = false;
            if (inter) brute.insert({i, j});
        }
    }
    std::set<std::pair<int, int>> found;
    for (const auto& p : got.pairs) {
        CHECK(found.insert({p.cell_d, p.cell_dbar}).second); // no duplicates
        CHECK(p.cost >= 1.0);
    }
    CHECK(found == brute);

    // disjoint meshes produce an empty list
    Mesh far = build_structured_mesh({{5, 5, 0}, {6, 6, 0}}, {2, 2, 1}, 2);
    Bvh tf(far);
    CHECK(find_candidate_pairs(ta, tf).pairs.empty());

    // identical 2-cell meshes contain the diagonal
    Mesh two = build_simplicial_mesh({SimplicialSpec::Kind::UnitSquare, 1});
    Bvh u(two), v(two);
    auto self_pairs = find_candidate_pairs(u, v);
    std::set<std::pair<int, int>> sp;
    for (const auto& p : self_pairs.pairs) sp.insert({p.cell_d, p.cell_dbar});
    CHECK(sp.count({0, 0}) == 1);
    CHECK(sp.count({1, 1}) == 1);
}

TEST_CASE("workload balancing")
{
    CandidatePairs pairs;
    for (int i = 0; i < 4; ++i) pairs.pairs.push_back({i, i, 1.0});
    auto one = balance_workload(pairs, 1);
    REQUIRE(one.size() == 1);
    CHECK(one[0] == std::pair<int, int>{0, 4});

    auto two = balance_workload(pairs, 2);
    REQUIRE(two.size() == 2);
    CHECK(two[0] == std::pair<int, int>{0, 2});
    CHECK(two[1] == std::pair<int, int>{2, 4});

    // random costs: max chunk load <= mean + max single cost
    PhiloxStream rng(21, 0);
    for (int trial = 0; trial < 20; ++trial) {
        CandidatePairs rnd;
        const int n = 50 + static_cast<int>(rng.uniform() * 100);
        double total = 0.0, maxc = 0.0;
        for (int i = 0; i < n; ++i) {
            const double c = 1.0 + 99.0 * rng.uniform();
            rnd.pairs.push_back({i, i, c});
            total += c;
            maxc = std::max(maxc, c);
        }
        const int w = 1 + static_cast<int>(rng.uniform() * 8);
        auto chunks = balance_workload(rnd, w);
        int covered = 0;
        for (const auto& [b, e] : chunks) {
            double load = 0.0;
            for (int i = b; i < e; ++i) load += rnd.pairs[i].cost;
            CHECK(load <= total / w + maxc + 1e-9);
            covered += e - b;
        }
        CHECK(covered == n);
    }

    CHECK_THROWS_AS(balance_workload(pairs, 0), ConfigError);
}

TEST_CASE("clipping a triangle against boxes")
{
    Mesh tri = make_simplicial_mesh(2, {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}, {{0, 1, 2}});

    Mesh big = build_structured_mesh({{0, 0, 0}, {2, 2, 0}}, {1, 1, 1}, 2);
    CHECK(clip_cells(tri, 0, big, 0).measure() == doctest::Approx(0.5).epsilon(1e-12));

    Mesh half = build_structured_mesh({{0, 0, 0}, {0.5, 0.5, 0}}, {1, 1, 1}, 2);
    IntersectionComplex ic = clip_cells(tri, 0, half, 0);
    CHECK(ic.measure() == doctest::Approx(0.25).epsilon(1e-12));
    double wsum = 0.0;
    for (std::size_t i = 0; i < ic.weights.size(); ++i) wsum += ic.weights[i];
    CHECK(wsum == doctest::Approx(0.25).epsilon(1e-12));

    Mesh corner = build_structured_mesh({{0.5, 0.5, 0}, {1, 1, 0}}, {1, 1, 1}, 2);
    CHECK(clip_cells(tri, 0, corner, 0).measure() < 1e-12);

    // quadrature points integrate a linear function exactly when paired with
    // the sub-simplex rule (midpoint rule on each piece)
    double ix = 0.0;
    for (std::size_t i = 0; i < ic.points.size(); ++i)
        ix += ic.weights[i] * ic.points[i][0];
    // integral of x over [0,0.5]^2 (the box lies entirely in x+y<=1):
    // (0.5^2/2) * 0.5 = 0.0625
    CHECK(ix == doctest::Approx(0.0625).epsilon(1e-12));
}

TEST_CASE("clipping tetrahedra against boxes")
{
    Mesh tet = make_simplicial_mesh(
        3, {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, {{0, 1, 2, 3}});

    Mesh big = build_structured_mesh({{0, 0, 0}, {1, 1, 1}}, {1, 1, 1}, 3);
    CHECK(clip_cells(tet, 0, big, 0).measure() ==
          doctest::Approx(1.0 / 6.0).epsilon(1e-12));

    // half-space cut x <= 0.5: volume of the unit tet with x <= 0.5 is
    // 1/6 - (1/6)(1/2)^3 by similarity of the removed corner
    Mesh slab = build_structured_mesh({{0, 0, 0}, {0.5, 1, 1}}, {1, 1, 1}, 3);
    CHECK(clip_cells(tet, 0, slab, 0).measure() ==
          doctest::Approx(1.0 / 6.0 * (1.0 - 0.125)).epsilon(1e-12));

    // generic box: oracle by Monte Carlo is too loose, use additivity instead:
    // the four octant boxes partition the tet volume
    double sum = 0.0;
    for (int mask = 0; mask < 8; ++mask) {
        Vec3 lo = {mask & 1 ? 0.5 : 0.0, mask & 2 ? 0.5 : 0.0, mask & 4 ? 0.5 : 0.0};
        Vec3 hi = {lo[0] + 0.5, lo[1] + 0.5, lo[2] + 0.5};
        Mesh oct = build_structured_mesh({lo, hi}, {1, 1, 1}, 3);
        sum += clip_cells(tet, 0, oct, 0).measure();
    }
    CHECK(sum == doctest::Approx(1.0 / 6.0).epsilon(1e-12));

    // simplex-simplex clipping: a cell against itself
    CHECK(clip_cells(tet, 0, tet, 0).measure() ==
          doctest::Approx(1.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("coupling assembly on matching and non-matching meshes")
{
    // matching identical simplicial meshes: G = W, Pi = identity
    Mesh tri = build_simplicial_mesh({SimplicialSpec::Kind::UnitSquare, 3});
    Bvh ta(tri), tb(tri);
    TransferOperator op =
        assemble_coupling(tri, tri, find_candidate_pairs(ta, tb));
    SpMat W = SpMat(scalar_mass_diagonal(tri).asDiagonal());
    CHECK(max_abs(SpMat(op.G - W)) < 1e-12);
    SpMat I(tri.n_cells(), tri.n_cells());
    I.setIdentity();
    CHECK(max_abs(SpMat(op.Pi - I)) < 1e-12);
    CHECK(op.coverage.partially_covered.empty());

    // 2 triangles vs 1 quad
    Mesh two = build_simplicial_mesh({SimplicialSpec::Kind::UnitSquare, 1});
    Mesh quad = build_structured_mesh({{0, 0, 0}, {1, 1, 0}}, {1, 1, 1}, 2);
    Bvh t2(two), tq(quad);
    TransferOperator op2 = assemble_coupling(two, quad, find_candidate_pairs(t2, tq));
    CHECK(op2.G.coeff(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(op2.G.coeff(1, 0) == doctest::Approx(0.5).epsilon(1e-12));
    Vec c(1);
    c << 3.7;
    Vec s = op2.Pi * c;
    CHECK(s[0] == doctest::Approx(3.7).epsilon(1e-12));
    CHECK(s[1] == doctest::Approx(3.7).epsilon(1e-12));
}

TEST_CASE("coupling invariants on a non-matching pair")
{
    // unstructured D inside a larger structured Dbar
    Mesh d = build_simplicial_mesh({SimplicialSpec::Kind::LShape, 4});
    Mesh dbar = build_structured_mesh({{-0.25, -0.25, 0}, {1.25, 1.25, 0}}, {7, 5, 1}, 2);
    Bvh td(d), tdb(dbar);
    CandidatePairs pairs = find_candidate_pairs(td, tdb);
    TransferOperator op = assemble_coupling(d, dbar, pairs);

    // row sums equal cell volumes (D inside Dbar)
    Vec rowsum = op.G * Vec::Ones(dbar.n_cells());
    for (int c = 0; c < d.n_cells(); ++c)
        CHECK(rowsum[c] == doctest::Approx(d.cell_volumes[c]).epsilon(1e-10));

    // total intersection measure equals |D|
    double vol_d = 0.0;
    for (int c = 0; c < d.n_cells(); ++c) vol_d += d.cell_volumes[c];
    CHECK(op.coverage.total_intersection == doctest::Approx(vol_d).epsilon(1e-10));

    // partition of unity and conservation
    Vec ones = op.Pi * Vec::Ones(dbar.n_cells());
    CHECK((ones - Vec::Ones(d.n_cells())).cwiseAbs().maxCoeff() < 1e-10);
    PhiloxStream rng(17, 3);
    Vec sbar(dbar.n_cells());
    for (int i = 0; i < sbar.size(); ++i) sbar[i] = rng.normal();
    Vec w = scalar_mass_diagonal(d);
    const double lhs = w.dot(Vec(op.Pi * sbar));
    const double rhs = (Vec(op.G.transpose() * Vec::Ones(d.n_cells()))).dot(sbar);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));

    // assembly is identical under different worker counts
    TransferOperator op4 = assemble_coupling(d, dbar, pairs, 4);
    CHECK(max_abs(SpMat(op4.G - op.G)) == 0.0);

    // determinism of the whole pipeline
    TransferStageTimings tim;
    TransferOperator opp = build_transfer(d, dbar, 2, &tim);
    CHECK(max_abs(SpMat(opp.G - op.G)) == 0.0);
    CHECK(tim.seconds().size() == 5);
}

TEST_CASE("zero coverage is a hard error")
{
    Mesh d = build_simplicial_mesh({SimplicialSpec::Kind::UnitSquare, 2});
    Mesh dbar = build_structured_mesh({{0, 0, 0}, {0.4, 1, 0}}, {2, 2, 1}, 2);
    Bvh td(d), tdb(dbar);
    CHECK_THROWS_AS(assemble_coupling(d, dbar, find_candidate_pairs(td, tdb)),
                    InvalidGeometryError);
}

TEST_CASE("recursive coarsening equals direct coarse assembly")
{
    for (int dim : {2, 3}) {
        Mesh d0 = dim == 2 ? build_simplicial_mesh({SimplicialSpec::Kind::UnitSquare, 4})
                           : build_simplicial_mesh({SimplicialSpec::Kind::UnitCube, 2});
        Mesh db0 = dim == 2
            ? build_structured_mesh({{-0.2, -0.2, 0}, {1.2, 1.2, 0}}, {6, 6, 1}, 2)
            : build_structured_mesh({{-0.2, -0.2, -0.2}, {1.2, 1.2, 1.2}}, {4, 4, 4}, 3);

        // refine both families once; level 0 is fine, level 1 coarse
        auto [d1, dmap] = uniform_refine(d0);
        auto [db1, dbmap] = uniform_refine(db0);
        InterpolationPair pd = build_interpolations(d0, d1, dmap);
        InterpolationPair pdb = build_interpolations(db0, db1, dbmap);

        Bvh tf(d1), tbf(db1);
        TransferOperator fine = assemble_coupling(d1, db1, find_candidate_pairs(tf, tbf));
        TransferOperator coarse = coarsen_transfer(fine, pd.P_theta, pdb.P_theta, d0);

        Bvh tc(d0), tbc(db0);
        TransferOperator direct =
            assemble_coupling(d0, db0, find_candidate_pairs(tc, tbc));

        CHECK(max_abs(SpMat(coarse.G - direct.G)) < 1e-10);
        Vec ones = coarse.Pi * Vec::Ones(db0.n_cells());
        CHECK((ones - Vec::Ones(d0.n_cells())).cwiseAbs().maxCoeff() < 1e-10);

        // dimension mismatch is rejected
        CHECK_THROWS_AS(coarsen_transfer(fine, pdb.P_theta, pd.P_theta, d0),
                        InvalidPairingError);
    }
}
