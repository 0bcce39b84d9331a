#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "mlspde/errors.hpp"
#include "mlspde/fespace.hpp"
#include "mlspde/mesh.hpp"
#include "mlspde/sparse.hpp"

namespace mlspde {

// ---------------------------------------------------------------------------
// bounding volume hierarchy

struct BvhParams {
    int max_depth = 32;
    int leaf_capacity = 8;
};

namespace detail {

/// 63-bit Morton code from 21 bits per axis.
inline std::uint64_t morton_spread(std::uint64_t v)
{
    v &= 0x1fffff;
    v = (v | v << 32) & 0x1f00000000ffffULL;
    v = (v | v << 16) & 0x1f0000ff0000ffULL;
    v = (v | v << 8) & 0x100f00f00f00f00fULL;
    v = (v | v << 4) & 0x10c30c30c30c30c3ULL;
    v = (v | v << 2) & 0x1249249249249249ULL;
    return v;
}

inline std::uint64_t morton_code(const Vec3& p, const Vec3& lo, const Vec3& hi)
{
    std::uint64_t code = 0;
    for (int a = 0; a < 3; ++a) {
        const double ext = hi[a] - lo[a];
        double t = ext > 0.0 ? (p[a] - lo[a]) / ext : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const auto q = static_cast<std::uint64_t>(t * 2097151.0);
        code |= morton_spread(q) << a;
    }
    return code;
}

inline bool boxes_intersect(const Vec3& alo, const Vec3& ahi, const Vec3& blo,
                            const Vec3& bhi)
{
    for (int a = 0; a < 3; ++a)
        if (ahi[a] < blo[a] || bhi[a] < alo[a]) return false;
    return true;
}

} // namespace detail

/// Axis-aligned bounding volume hierarchy over the cells of a mesh. Elements
/// are linearized in Morton order and split at the median, so leaves group
/// spatially adjacent cells.
class Bvh {
public:
    struct Node {
        Vec3 lo, hi;
        int left = -1, right = -1; // children; leaf when left < 0
        int begin = 0, end = 0;    // element range (leaf)
    };

    explicit Bvh(const Mesh& mesh, BvhParams params = {}) : mesh_(&mesh), params_(params)
    {
        if (mesh.n_cells() == 0) throw InvalidMeshError("BVH of an empty mesh");
        const int nc = mesh.n_cells();
        boxes_lo_.resize(nc);
        boxes_hi_.resize(nc);
        order_.resize(nc);
        Vec3 rlo = {0, 0, 0}, rhi = {0, 0, 0};
        for (int c = 0; c < nc; ++c) {
            mesh.cell_bounding_box(c, boxes_lo_[c], boxes_hi_[c]);
            if (c == 0) {
                rlo = boxes_lo_[c];
                rhi = boxes_hi_[c];
            }
            for (int a = 0; a < 3; ++a) {
                rlo[a] = std::min(rlo[a], boxes_lo_[c][a]);
                rhi[a] = std::max(rhi[a], boxes_hi_[c][a]);
            }
            order_[c] = c;
        }
        std::vector<std::uint64_t> codes(nc);
        for (int c = 0; c < nc; ++c)
            codes[c] = detail::morton_code(mesh.cell_centroids[c], rlo, rhi);
        std::sort(order_.begin(), order_.end(), [&codes](int a, int b) {
            return codes[a] != codes[b] ? codes[a] < codes[b] : a < b;
        });
        morton_rank_.resize(nc);
        for (int i = 0; i < nc; ++i) morton_rank_[order_[i]] = i;
        build(0, nc, 0);
    }

    const Mesh& mesh() const { return *mesh_; }
    const std::vector<Node>& nodes() const { return nodes_; }
    int root() const { return 0; }
    int element(int slot) const { return order_[slot]; }
    int morton_rank(int cell) const { return morton_rank_[cell]; }
    void element_box(int cell, Vec3& lo, Vec3& hi) const
    {
        lo = boxes_lo_[cell];
        hi = boxes_hi_[cell];
    }

    /// All cells whose bounding box intersects the query box.
    std::vector<int> query(const Vec3& qlo, const Vec3& qhi) const
    {
        std::vector<int> out;
        std::vector<int> stack{0};
        while (!stack.empty()) {
            const Node& n = nodes_[stack.back()];
            stack.pop_back();
            if (!detail::boxes_intersect(n.lo, n.hi, qlo, qhi)) continue;
            if (n.left < 0) {
                for (int i = n.begin; i < n.end; ++i) {
                    const int c = order_[i];
                    if (detail::boxes_intersect(boxes_lo_[c], boxes_hi_[c], qlo, qhi))
                        out.push_back(c);
                }
            } else {
                stack.push_back(n.left);
                stack.push_back(n.right);
            }
        }
        std::sort(out.begin(), out.end());
        return out;
    }

private:
    int build(int begin, int end, int depth)
    {
        Node n;
        n.lo = boxes_lo_[order_[begin]];
        n.hi = boxes_hi_[order_[begin]];
        for (int i = begin; i < end; ++i) {
            const int c = order_[i];
            for (int a = 0; a < 3; ++a) {
                n.lo[a] = std::min(n.lo[a], boxes_lo_[c][a]);
                n.hi[a] = std::max(n.hi[a], boxes_hi_[c][a]);
            }
        }
        const int id = static_cast<int>(nodes_.size());
        nodes_.push_back(n);
        if (end - begin <= params_.leaf_capacity || depth >= params_.max_depth) {
            nodes_[id].begin = begin;
            nodes_[id].end = end;
            return id;
        }
        const int mid = begin + (end - begin) / 2;
        const int l = build(begin, mid, depth + 1);
        const int r = build(mid, end, depth + 1);
        nodes_[id].left = l;
        nodes_[id].right = r;
        return id;
    }

    const Mesh* mesh_;
    BvhParams params_;
    std::vector<Vec3> boxes_lo_, boxes_hi_;
    std::vector<int> order_;       // cells in Morton order
    std::vector<int> morton_rank_; // inverse of order_
    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// broad phase

struct CandidatePair {
    int cell_d;
    int cell_dbar;
    double cost; // product of the originating leaf sizes
};

struct CandidatePairs {
    std::vector<CandidatePair> pairs;
};

/// Dual-tree traversal: every cell pair whose bounding boxes intersect. Pairs
/// are annotated with the cost model s_p * s_q (sizes of the two leaves they
/// came from) and sorted by the Morton rank of the D-cell.
inline CandidatePairs find_candidate_pairs(const Bvh& a, const Bvh& b)
{
    CandidatePairs out;
    std::vector<std::pair<int, int>> stack{{a.root(), b.root()}};
    while (!stack.empty()) {
        auto [ia, ib] = stack.back();
        stack.pop_back();
        const Bvh::Node& na = a.nodes()[ia];
        const Bvh::Node& nb = b.nodes()[ib];
        if (!detail::boxes_intersect(na.lo, na.hi, nb.lo, nb.hi)) continue;
        const bool la = na.left < 0, lb = nb.left < 0;
        if (la && lb) {
            const double cost = static_cast<double>(na.end - na.begin) *
                                static_cast<double>(nb.end - nb.begin);
            for (int i = na.begin; i < na.end; ++i)
                for (int j = nb.begin; j < nb.end; ++j) {
                    const int cd = a.element(i), cb = b.element(j);
                    Vec3 dlo, dhi, blo, bhi;
                    a.element_box(cd, dlo, dhi);
                    b.element_box(cb, blo, bhi);
                    if (detail::boxes_intersect(dlo, dhi, blo, bhi))
                        out.pairs.push_back({cd, cb, cost});
                }
        } else if (lb ||
                   (!la && dot(na.hi - na.lo, na.hi - na.lo) >=
                               dot(nb.hi - nb.lo, nb.hi - nb.lo))) {
            stack.push_back({na.left, ib});
            stack.push_back({na.right, ib});
        } else {
            stack.push_back({ia, nb.left});
            stack.push_back({ia, nb.right});
        }
    }
    std::sort(out.pairs.begin(), out.pairs.end(),
              [&a](const CandidatePair& p, const CandidatePair& q) {
                  const int ra = a.morton_rank(p.cell_d), rb = a.morton_rank(q.cell_d);
                  if (ra != rb) return ra < rb;
                  return p.cell_dbar < q.cell_dbar;
              });
    return out;
}

/// Contiguous chunks of the Morton-ordered pair list such that every chunk's
/// summed cost stays within the largest single-pair cost of the mean.
inline std::vector<std::pair<int, int>> balance_workload(const CandidatePairs& pairs,
                                                         int n_workers)
{
    if (n_workers < 1) throw ConfigError("balance_workload: n_workers must be >= 1");
    const int n = static_cast<int>(pairs.pairs.size());
    std::vector<std::pair<int, int>> chunks;
    if (n == 0) return chunks;
    double total = 0.0;
    for (const auto& p : pairs.pairs) total += p.cost;

    int begin = 0;
    double used = 0.0;
    for (int w = 0; w < n_workers && begin < n; ++w) {
        const int remaining_chunks = n_workers - w;
        const double target = (total - used) / remaining_chunks;
        double load = 0.0;
        int end = begin;
        while (end < n && (load < target || end == begin)) {
            load += pairs.pairs[end].cost;
            ++end;
        }
        if (w == n_workers - 1) { // last worker takes the tail
            while (end < n) {
                load += pairs.pairs[end].cost;
                ++end;
            }
        }
        chunks.push_back({begin, end});
        used += load;
        begin = end;
    }
    return chunks;
}

// ---------------------------------------------------------------------------
// clipping

/// Simplicial complex of a cell-cell intersection together with a quadrature
/// rule (sub-cell centroids and measures) exact for piecewise constants.
struct IntersectionComplex {
    int dim = 0;
    std::vector<std::array<Vec3, 4>> simplices; // dim+1 vertices used
    std::vector<Vec3> points;
    std::vector<double> weights;

    double measure() const
    {
        double s = 0.0;
        for (double w : weights) s += w;
        return s;
    }
};

namespace detail {

constexpr double clip_tol = 1e-12;

struct HalfSpace {
    Vec3 n;
    double offset; // keep points with n . x <= offset
};

/// Outward half-spaces of a cell (box: 2d planes, simplex: d+1 planes).
inline std::vector<HalfSpace> cell_half_spaces(const Mesh& m, int c)
{
    std::vector<HalfSpace> hs;
    if (m.kind == CellKind::Box) {
        Vec3 lo, hi;
        m.cell_bounding_box(c, lo, hi);
        for (int a = 0; a < m.dim; ++a) {
            Vec3 n{0, 0, 0};
            n[a] = -1.0;
            hs.push_back({n, -lo[a]});
            n[a] = 1.0;
            hs.push_back({n, hi[a]});
        }
        return hs;
    }
    for (std::size_t j = 0; j < m.cell_facets[c].size(); ++j) {
        const int f = m.cell_facets[c][j];
        Vec3 n = m.cell_facet_signs[c][j] * m.facet_normals[f]; // outward of c
        hs.push_back({n, dot(n, m.facet_centroids[f])});
    }
    return hs;
}

/// Cell as a list of simplices (boxes are split; simplices pass through).
inline std::vector<std::array<Vec3, 4>> cell_simplices(const Mesh& m, int c)
{
    std::vector<std::array<Vec3, 4>> out;
    if (m.kind == CellKind::Simplex) {
        std::array<Vec3, 4> s{};
        for (int i = 0; i <= m.dim; ++i) s[i] = m.vertices[m.cells[c][i]];
        out.push_back(s);
        return out;
    }
    Vec3 lo, hi;
    m.cell_bounding_box(c, lo, hi);
    auto corner = [&](int mask) {
        Vec3 p = lo;
        for (int a = 0; a < m.dim; ++a)
            if (mask & (1 << a)) p[a] = hi[a];
        return p;
    };
    if (m.dim == 2) {
        out.push_back({corner(0), corner(1), corner(3), Vec3{}});
        out.push_back({corner(0), corner(3), corner(2), Vec3{}});
    } else {
        // Kuhn split along vertex permutations of the unit cube
        static const int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2},
                                        {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
        for (const auto& p : perms) {
            int mask = 0;
            std::array<Vec3, 4> s{};
            s[0] = corner(mask);
            for (int k = 0; k < 3; ++k) {
                mask |= 1 << p[k];
                s[k + 1] = corner(mask);
            }
            out.push_back(s);
        }
    }
    return out;
}

inline double simplex_measure(const std::array<Vec3, 4>& s, int dim)
{
    if (dim == 2) {
        const Vec3 a = s[1] - s[0], b = s[2] - s[0];
        return 0.5 * std::abs(a[0] * b[1] - a[1] * b[0]);
    }
    const Vec3 a = s[1] - s[0], b = s[2] - s[0], c = s[3] - s[0];
    const double det = a[0] * (b[1] * c[2] - b[2] * c[1]) -
                       a[1] * (b[0] * c[2] - b[2] * c[0]) +
                       a[2] * (b[0] * c[1] - b[1] * c[0]);
    return std::abs(det) / 6.0;
}

inline Vec3 edge_cut(const Vec3& p, double dp, const Vec3& q, double dq)
{
    const double t = dp / (dp - dq);
    return p + t * (q - p);
}

/// Clip a polygon (2D) by one half-space (Sutherland-Hodgman step).
inline std::vector<Vec3> clip_polygon(const std::vector<Vec3>& poly,
                                      const HalfSpace& h)
{
    std::vector<Vec3> out;
    const int n = static_cast<int>(poly.size());
    for (int i = 0; i < n; ++i) {
        const Vec3& p = poly[i];
        const Vec3& q = poly[(i + 1) % n];
        const double dp = dot(h.n, p) - h.offset;
        const double dq = dot(h.n, q) - h.offset;
        const bool pin = dp <= clip_tol, qin = dq <= clip_tol;
        if (pin) out.push_back(p);
        if (pin != qin) out.push_back(edge_cut(p, dp, q, dq));
    }
    return out;
}

/// Clip one tetrahedron by a half-space into at most three tetrahedra.
inline void clip_tet(const std::array<Vec3, 4>& t, const HalfSpace& h,
                     std::vector<std::array<Vec3, 4>>& out)
{
    std::array<double, 4> d;
    std::array<int, 4> in, ex;
    int ni = 0, ne = 0;
    for (int i = 0; i < 4; ++i) {
        d[i] = dot(h.n, t[i]) - h.offset;
        if (d[i] <= clip_tol)
            in[ni++] = i;
        else
            ex[ne++] = i;
    }
    auto cut = [&](int i, int j) { return edge_cut(t[i], d[i], t[j], d[j]); };
    switch (ni) {
    case 0:
        return;
    case 4:
        out.push_back(t);
        return;
    case 1: {
        const int a = in[0];
        out.push_back({t[a], cut(a, ex[0]), cut(a, ex[1]), cut(a, ex[2])});
        return;
    }
    case 3: {
        // frustum between triangle (a,b,c) and the cut triangle: a prism
        const int a = in[0], b = in[1], c = in[2], o = ex[0];
        const std::array<Vec3, 3> A = {t[a], t[b], t[c]};
        const std::array<Vec3, 3> B = {cut(a, o), cut(b, o), cut(c, o)};
        out.push_back({A[0], A[1], A[2], B[0]});
        out.push_back({A[1], A[2], B[0], B[1]});
        out.push_back({A[2], B[0], B[1], B[2]});
        return;
    }
    case 2: {
        // wedge: triangles around each kept vertex form a (skewed) prism
        const int a = in[0], b = in[1], o0 = ex[0], o1 = ex[1];
        const std::array<Vec3, 3> A = {t[a], cut(a, o0), cut(a, o1)};
        const std::array<Vec3, 3> B = {t[b], cut(b, o0), cut(b, o1)};
        out.push_back({A[0], A[1], A[2], B[0]});
        out.push_back({A[1], A[2], B[0], B[1]});
        out.push_back({A[2], B[0], B[1], B[2]});
        return;
    }
    }
}

} // namespace detail

/// Intersection of two cells from (possibly different) meshes: successive
/// half-space clipping of the first cell by the planes of the second, with the
/// result re-triangulated and equipped with a midpoint quadrature rule.
inline IntersectionComplex clip_cells(const Mesh& mesh_d, int cell_d,
                                      const Mesh& mesh_dbar, int cell_dbar)
{
    if (mesh_d.dim != mesh_dbar.dim)
        throw InvalidPairingError("clip_cells: dimension mismatch");
    IntersectionComplex out;
    out.dim = mesh_d.dim;
    const auto planes = detail::cell_half_spaces(mesh_dbar, cell_dbar);

    if (mesh_d.dim == 2) {
        // polygon pipeline: clip each triangle of the cell, fan from centroid
        for (const auto& tri : detail::cell_simplices(mesh_d, cell_d)) {
            std::vector<Vec3> poly(tri.begin(), tri.begin() + 3);
            for (const auto& h : planes) {
                poly = detail::clip_polygon(poly, h);
                if (poly.size() < 3) break;
            }
            if (poly.size() < 3) continue;
            Vec3 cen{0, 0, 0};
            for (const Vec3& p : poly) cen = cen + p;
            cen = (1.0 / static_cast<double>(poly.size())) * cen;
            for (std::size_t i = 0; i < poly.size(); ++i) {
                std::array<Vec3, 4> s = {cen, poly[i], poly[(i + 1) % poly.size()],
                                         Vec3{}};
                const double w = detail::simplex_measure(s, 2);
                if (w <= detail::clip_tol * detail::clip_tol) continue;
                out.simplices.push_back(s);
                out.weights.push_back(w);
                out.points.push_back((1.0 / 3.0) * (s[0] + s[1] + s[2]));
            }
        }
        return out;
    }

    // 3D: maintain a tetrahedron list through the plane clips
    std::vector<std::array<Vec3, 4>> tets = detail::cell_simplices(mesh_d, cell_d);
    for (const auto& h : planes) {
        std::vector<std::array<Vec3, 4>> next;
        for (const auto& t : tets) detail::clip_tet(t, h, next);
        tets.swap(next);
        if (tets.empty()) break;
    }
    for (const auto& t : tets) {
        const double w = detail::simplex_measure(t, 3);
        if (w <= detail::clip_tol * detail::clip_tol) continue;
        out.simplices.push_back(t);
        out.weights.push_back(w);
        out.points.push_back(0.25 * (t[0] + t[1] + t[2] + t[3]));
    }
    return out;
}

// ---------------------------------------------------------------------------
// coupling assembly

struct CoverageReport {
    Vec covered_measure;                 // per D-cell intersected measure
    std::vector<int> partially_covered;  // covered but not fully
    double total_intersection = 0.0;     // |D n Dbar|
};

struct TransferOperator {
    SpMat G;  // rows: D cells, cols: Dbar cells, entries |tau n taubar|
    SpMat Pi; // projection, rows normalized by covered measure
    int level = 0;
    CoverageReport coverage;
};

struct TransferStageTimings {
    double element_boxes = 0.0;
    double bvh_comparison = 0.0;
    double load_balancing = 0.0;
    double matching_rebalancing = 0.0;
    double computation = 0.0;

    static const std::array<const char*, 5>& stage_names()
    {
        static const std::array<const char*, 5> names = {
            "Element bounding volumes generation", "BVH comparison",
            "Load balancing", "Matching and rebalancing",
            "Computation: intersection and quadrature"};
        return names;
    }

    std::array<double, 5> seconds() const
    {
        return {element_boxes, bvh_comparison, load_balancing,
                matching_rebalancing, computation};
    }
};

/// Assemble the coupling matrix G and projection Pi from a candidate pair
/// list. Each pair is evaluated independently (an entry of G belongs to
/// exactly one pair), so the result is bitwise-stable under any worker count.
inline TransferOperator assemble_coupling(const Mesh& mesh_d, const Mesh& mesh_dbar,
                                          const CandidatePairs& pairs,
                                          int n_workers = 1)
{
    const int n = static_cast<int>(pairs.pairs.size());
    std::vector<double> measures(n, 0.0);

    const auto chunks = balance_workload(pairs, n_workers);
    auto run_chunk = [&](int begin, int end) {
        for (int k = begin; k < end; ++k) {
            const CandidatePair& p = pairs.pairs[k];
            measures[k] =
                clip_cells(mesh_d, p.cell_d, mesh_dbar, p.cell_dbar).measure();
        }
    };
    if (n_workers <= 1 || chunks.size() <= 1) {
        run_chunk(0, n);
    } else {
        std::vector<std::thread> threads;
        for (const auto& [b, e] : chunks) threads.emplace_back(run_chunk, b, e);
        for (auto& t : threads) t.join();
    }

    TransferOperator out;
    std::vector<Triplet> gt;
    Vec covered = Vec::Zero(mesh_d.n_cells());
    double total = 0.0;
    for (int k = 0; k < n; ++k) {
        if (measures[k] <= 0.0) continue;
        gt.emplace_back(pairs.pairs[k].cell_d, pairs.pairs[k].cell_dbar, measures[k]);
        covered[pairs.pairs[k].cell_d] += measures[k];
        total += measures[k];
    }
    out.G.resize(mesh_d.n_cells(), mesh_dbar.n_cells());
    out.G.setFromTriplets(gt.begin(), gt.end());
    out.coverage.covered_measure = covered;
    out.coverage.total_intersection = total;

    std::vector<Triplet> pt;
    for (int c = 0; c < mesh_d.n_cells(); ++c) {
        const double vol = mesh_d.cell_volumes[c];
        if (covered[c] <= detail::clip_tol * vol)
            throw InvalidGeometryError(
                "assemble_coupling: cell " + std::to_string(c) +
                " has zero covered measure (D not contained in Dbar?)");
        if (covered[c] < (1.0 - 1e-10) * vol)
            out.coverage.partially_covered.push_back(c);
    }
    for (const Triplet& t : gt)
        pt.emplace_back(t.row(), t.col(), t.value() / covered[t.row()]);
    out.Pi.resize(mesh_d.n_cells(), mesh_dbar.n_cells());
    out.Pi.setFromTriplets(pt.begin(), pt.end());
    return out;
}

/// Full broad-phase + clipping pipeline with per-stage wall-clock timings
/// mirroring the five phases of the search-and-transfer setup.
inline TransferOperator build_transfer(const Mesh& mesh_d, const Mesh& mesh_dbar,
                                       int n_workers = 1,
                                       TransferStageTimings* timings = nullptr,
                                       BvhParams params = {})
{
    using clock = std::chrono::steady_clock;
    auto tick = clock::now();
    auto lap = [&tick]() {
        const auto now = clock::now();
        const double s = std::chrono::duration<double>(now - tick).count();
        tick = now;
        return s;
    };

    Bvh tree_d(mesh_d, params);       // element boxes + hierarchy for D
    Bvh tree_dbar(mesh_dbar, params); // and for Dbar
    const double t_boxes = lap();

    CandidatePairs pairs = find_candidate_pairs(tree_d, tree_dbar);
    const double t_compare = lap();

    const auto chunks = balance_workload(pairs, n_workers);
    (void)chunks; // re-derived inside assemble_coupling with the same inputs
    const double t_balance = lap();

    // in-process realization: matching is the pair list itself, rebalancing
    // is a no-op (all data is shared); the stage is kept for the report
    const double t_match = lap();

    TransferOperator op = assemble_coupling(mesh_d, mesh_dbar, pairs, n_workers);
    const double t_compute = lap();

    if (timings) {
        timings->element_boxes = t_boxes;
        timings->bvh_comparison = t_compare;
        timings->load_balancing = t_balance;
        timings->matching_rebalancing = t_match;
        timings->computation = t_compute;
    }
    return op;
}

/// Recursive coarsening of the transfer operator:
/// G_{l+1} = P_theta^T G_l Pbar_theta, rows renormalized by covered measure.
inline TransferOperator coarsen_transfer(const TransferOperator& fine,
                                         const SpMat& P_theta,
                                         const SpMat& Pbar_theta,
                                         const Mesh& coarse_d)
{
    if (P_theta.rows() != fine.G.rows() || Pbar_theta.rows() != fine.G.cols())
        throw InvalidPairingError("coarsen_transfer: dimension mismatch");
    if (P_theta.cols() != coarse_d.n_cells())
        throw InvalidPairingError("coarsen_transfer: coarse mesh mismatch");

    TransferOperator out;
    out.level = fine.level + 1;
    out.G = P_theta.transpose() * fine.G * Pbar_theta;
    out.G.prune(0.0);

    Vec covered = Vec::Zero(coarse_d.n_cells());
    double total = 0.0;
    for (int k = 0; k < out.G.outerSize(); ++k)
        for (SpMat::InnerIterator it(out.G, k); it; ++it) {
            covered[it.row()] += it.value();
            total += it.value();
        }
    out.coverage.covered_measure = covered;
    out.coverage.total_intersection = total;

    std::vector<Triplet> pt;
    for (int c = 0; c < coarse_d.n_cells(); ++c) {
        const double vol = coarse_d.cell_volumes[c];
        if (covered[c] <= detail::clip_tol * vol)
            throw InvalidGeometryError("coarsen_transfer: uncovered coarse cell");
        if (covered[c] < (1.0 - 1e-10) * vol) out.coverage.partially_covered.push_back(c);
    }
    for (int k = 0; k < out.G.outerSize(); ++k)
        for (SpMat::InnerIterator it(out.G, k); it; ++it)
            pt.emplace_back(it.row(), it.col(), it.value() / covered[it.row()]);
    out.Pi.resize(out.G.rows(), out.G.cols());
    out.Pi.setFromTriplets(pt.begin(), pt.end());
    return out;
}

} // namespace mlspde
