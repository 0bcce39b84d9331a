#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mlspde/errors.hpp"

namespace mlspde {

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b)
{
    return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}
inline Vec3 operator-(const Vec3& a, const Vec3& b)
{
    return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}
inline Vec3 operator*(double s, const Vec3& a)
{
    return {s * a[0], s * a[1], s * a[2]};
}
inline double dot(const Vec3& a, const Vec3& b)
{
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}
inline Vec3 cross(const Vec3& a, const Vec3& b)
{
    return {a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0]};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

enum class CellKind { Box, Simplex };

/// Conforming mesh in d = 2 or 3: tensor-product cells (quads/hexes on
/// axis-aligned grids) or simplices (triangles/tets). Cells, facets and the
/// cell->facet incidence with orientation signs are built at construction;
/// meshes are immutable afterwards.
///
/// Facet orientation convention: every facet carries one global normal.
/// For structured meshes it points along the positive axis; for simplicial
/// meshes it points out of the lower-index adjacent cell (outward on the
/// boundary). cell_facet_signs[c][j] is +1 when the global normal of facet
/// j is outward for cell c.
struct Mesh {
    int dim = 0;
    CellKind kind = CellKind::Simplex;

    std::vector<Vec3> vertices;
    std::vector<std::vector<int>> cells;
    std::vector<std::vector<int>> facet_vertices;
    std::vector<std::array<int, 2>> facet_cells; // {lower, higher}; higher = -1 on boundary
    std::vector<std::vector<int>> cell_facets;
    std::vector<std::vector<int>> cell_facet_signs;

    std::vector<int> facet_marker; // index into marker_names, -1 if unmarked
    std::vector<std::string> marker_names;

    // geometry caches
    std::vector<double> cell_volumes;
    std::vector<double> facet_measures;
    std::vector<Vec3> facet_normals;
    std::vector<Vec3> cell_centroids;
    std::vector<Vec3> facet_centroids;

    // set for structured meshes only
    std::array<double, 3> box_lo{};
    std::array<double, 3> box_hi{};
    std::array<int, 3> cells_per_axis{};

    int n_vertices() const { return static_cast<int>(vertices.size()); }
    int n_cells() const { return static_cast<int>(cells.size()); }
    int n_facets() const { return static_cast<int>(facet_vertices.size()); }

    bool is_boundary_facet(int f) const { return facet_cells[f][1] < 0; }

    double total_volume() const
    {
        double v = 0.0;
        for (double cv : cell_volumes) v += cv;
        return v;
    }

    int marker_id(const std::string& name) const
    {
        for (std::size_t i = 0; i < marker_names.size(); ++i)
            if (marker_names[i] == name) return static_cast<int>(i);
        return -1;
    }

    std::vector<int> facets_with_marker(const std::string& name) const
    {
        const int id = marker_id(name);
        if (id < 0) throw UnknownMarkerError("unknown boundary marker: " + name);
        std::vector<int> out;
        for (int f = 0; f < n_facets(); ++f)
            if (facet_marker[f] == id) out.push_back(f);
        return out;
    }

    void cell_bounding_box(int c, Vec3& lo, Vec3& hi) const
    {
        lo = {1e300, 1e300, 1e300};
        hi = {-1e300, -1e300, -1e300};
        for (int v : cells[c])
            for (int k = 0; k < 3; ++k) {
                lo[k] = std::min(lo[k], vertices[v][k]);
                hi[k] = std::max(hi[k], vertices[v][k]);
            }
    }

    /// Cell containing x; ties on shared facets broken toward the lowest
    /// cell index. Returns -1 if x is outside the mesh.
    int locate_cell(const Vec3& x, double tol = 1e-12) const
    {
        for (int c = 0; c < n_cells(); ++c)
            if (cell_contains(c, x, tol)) return c;
        return -1;
    }

    bool cell_contains(int c, const Vec3& x, double tol = 1e-12) const
    {
        if (kind == CellKind::Box) {
            Vec3 lo, hi;
            cell_bounding_box(c, lo, hi);
            for (int k = 0; k < dim; ++k)
                if (x[k] < lo[k] - tol || x[k] > hi[k] + tol) return false;
            return true;
        }
        // barycentric test via signed sub-volumes
        const auto& cv = cells[c];
        const double vol = cell_volumes[c];
        for (std::size_t i = 0; i < cv.size(); ++i) {
            std::vector<Vec3> pts;
            for (std::size_t j = 0; j < cv.size(); ++j)
                pts.push_back(j == i ? x : vertices[cv[j]]);
            const double sub = signed_simplex_volume(pts, dim);
            const double ref = signed_simplex_volume_of_cell(c);
            if (sub * ref < -tol * std::abs(vol)) return false;
        }
        return true;
    }

    static double signed_simplex_volume(const std::vector<Vec3>& p, int d)
    {
        if (d == 2) {
            const Vec3 a = p[1] - p[0], b = p[2] - p[0];
            return 0.5 * (a[0] * b[1] - a[1] * b[0]);
        }
        const Vec3 a = p[1] - p[0], b = p[2] - p[0], c = p[3] - p[0];
        return dot(a, cross(b, c)) / 6.0;
    }

    double signed_simplex_volume_of_cell(int c) const
    {
        std::vector<Vec3> pts;
        for (int v : cells[c]) pts.push_back(vertices[v]);
        return signed_simplex_volume(pts, dim);
    }
};

namespace detail {

inline void compute_simplex_geometry(Mesh& m)
{
    const int nc = m.n_cells();
    m.cell_volumes.resize(nc);
    m.cell_centroids.resize(nc);
    for (int c = 0; c < nc; ++c) {
        std::vector<Vec3> pts;
        for (int v : m.cells[c]) pts.push_back(m.vertices[v]);
        const double sv = Mesh::signed_simplex_volume(pts, m.dim);
        m.cell_volumes[c] = std::abs(sv);
        Vec3 cen{0, 0, 0};
        for (const auto& p : pts) cen = cen + p;
        m.cell_centroids[c] = (1.0 / static_cast<double>(pts.size())) * cen;
    }

    const int nf = m.n_facets();
    m.facet_measures.resize(nf);
    m.facet_normals.resize(nf);
    m.facet_centroids.resize(nf);
    for (int f = 0; f < nf; ++f) {
        const auto& fv = m.facet_vertices[f];
        Vec3 cen{0, 0, 0};
        for (int v : fv) cen = cen + m.vertices[v];
        cen = (1.0 / static_cast<double>(fv.size())) * cen;
        m.facet_centroids[f] = cen;

        Vec3 n;
        if (m.dim == 2) {
            const Vec3 t = m.vertices[fv[1]] - m.vertices[fv[0]];
            m.facet_measures[f] = norm(t);
            n = {t[1], -t[0], 0.0};
        } else {
            const Vec3 a = m.vertices[fv[1]] - m.vertices[fv[0]];
            const Vec3 b = m.vertices[fv[2]] - m.vertices[fv[0]];
            const Vec3 cr = cross(a, b);
            m.facet_measures[f] = 0.5 * norm(cr);
            n = cr;
        }
        const double nn = norm(n);
        if (nn <= 0.0)
            throw InvalidMeshError("degenerate facet " + std::to_string(f));
        n = (1.0 / nn) * n;
        // orient out of the lower-index adjacent cell
        const int c0 = m.facet_cells[f][0];
        if (dot(n, cen - m.cell_centroids[c0]) < 0.0) n = -1.0 * n;
        m.facet_normals[f] = n;
    }

    // orientation signs: +1 when the global normal is outward for the cell
    m.cell_facet_signs.assign(nc, {});
    for (int c = 0; c < nc; ++c) {
        m.cell_facet_signs[c].resize(m.cell_facets[c].size());
        for (std::size_t j = 0; j < m.cell_facets[c].size(); ++j) {
            const int f = m.cell_facets[c][j];
            m.cell_facet_signs[c][j] = (m.facet_cells[f][0] == c) ? 1 : -1;
        }
    }
}

/// Builds facet connectivity for a simplicial mesh from cell vertex tuples.
inline void build_simplex_connectivity(Mesh& m)
{
    const int d = m.dim;
    std::map<std::vector<int>, int> facet_of;
    m.facet_vertices.clear();
    m.facet_cells.clear();
    m.cell_facets.assign(m.n_cells(), {});

    for (int c = 0; c < m.n_cells(); ++c) {
        const auto& cv = m.cells[c];
        for (int i = 0; i <= d; ++i) {
            std::vector<int> fv;
            for (int j = 0; j <= d; ++j)
                if (j != i) fv.push_back(cv[j]);
            std::vector<int> key = fv;
            std::sort(key.begin(), key.end());
            auto it = facet_of.find(key);
            int f;
            if (it == facet_of.end()) {
                f = m.n_facets();
                facet_of.emplace(key, f);
                m.facet_vertices.push_back(fv);
                m.facet_cells.push_back({c, -1});
            } else {
                f = it->second;
                if (m.facet_cells[f][1] != -1)
                    throw InvalidMeshError("facet shared by more than two cells");
                m.facet_cells[f][1] = c;
            }
            m.cell_facets[c].push_back(f);
        }
    }
    m.facet_marker.assign(m.n_facets(), -1);
}

inline int checked_marker_id(Mesh& m, const std::string& name)
{
    const int id = m.marker_id(name);
    if (id >= 0) return id;
    m.marker_names.push_back(name);
    return static_cast<int>(m.marker_names.size()) - 1;
}

} // namespace detail

/// Finalizes a simplicial mesh given vertices and cell tuples; checks cell
/// volumes and assigns boundary markers through `classify` (facet centroid ->
/// marker name; empty string leaves the facet unmarked).
inline Mesh make_simplicial_mesh(
    int dim,
    std::vector<Vec3> vertices,
    std::vector<std::vector<int>> cells,
    const std::function<std::string(const Vec3&)>& classify = {})
{
    Mesh m;
    m.dim = dim;
    m.kind = CellKind::Simplex;
    m.vertices = std::move(vertices);
    m.cells = std::move(cells);

    double scale = 0.0;
    for (const auto& v : m.vertices)
        scale = std::max({scale, std::abs(v[0]), std::abs(v[1]), std::abs(v[2])});

    detail::build_simplex_connectivity(m);
    detail::compute_simplex_geometry(m);

    const double voltol = 1e-14 * std::pow(std::max(scale, 1.0), dim);
    for (int c = 0; c < m.n_cells(); ++c)
        if (!(m.cell_volumes[c] > voltol))
            throw InvalidMeshError("degenerate cell " + std::to_string(c));

    if (classify) {
        for (int f = 0; f < m.n_facets(); ++f) {
            if (!m.is_boundary_facet(f)) continue;
            const std::string name = classify(m.facet_centroids[f]);
            if (!name.empty())
                m.facet_marker[f] = detail::checked_marker_id(m, name);
        }
    }
    return m;
}

/// Axis-aligned box descriptor.
struct Box {
    Vec3 lo{0, 0, 0};
    Vec3 hi{0, 0, 0};
};

namespace detail {

inline int structured_vertex(const std::array<int, 3>& n, int i, int j, int k)
{
    return i + (n[0] + 1) * (j + (n[1] + 1) * k);
}
inline int structured_cell(const std::array<int, 3>& n, int i, int j, int k)
{
    return i + n[0] * (j + n[1] * k);
}

/// Facet index in the fixed enumeration: axis-0 facets first, then axis 1,
/// then axis 2; within an axis, plane index fastest.
inline int structured_facet(const std::array<int, 3>& n, int dim, int axis,
                            int plane, int j, int k)
{
    std::array<int, 3> cnt{};
    cnt[0] = (n[0] + 1) * n[1] * (dim == 3 ? n[2] : 1);
    cnt[1] = n[0] * (n[1] + 1) * (dim == 3 ? n[2] : 1);
    cnt[2] = (dim == 3) ? n[0] * n[1] * (n[2] + 1) : 0;
    int base = 0;
    for (int a = 0; a < axis; ++a) base += cnt[a];
    if (axis == 0) return base + plane + (n[0] + 1) * (j + n[1] * k);
    if (axis == 1) return base + j + n[0] * (plane + (n[1] + 1) * k);
    return base + j + n[0] * (k + n[1] * plane);
}

} // namespace detail

/// Tensor-product grid of quads (d=2) or hexes (d=3) over an axis-aligned
/// box. Boundary patches are labeled "x_lo", "x_hi", "y_lo", ...
inline Mesh build_structured_mesh(const Box& box,
                                  const std::array<int, 3>& cells_per_axis,
                                  int dim)
{
    if (dim != 2 && dim != 3)
        throw InvalidGeometryError("structured mesh requires d in {2,3}");
    std::array<int, 3> n = cells_per_axis;
    if (dim == 2) n[2] = 1;
    std::array<double, 3> h{};
    for (int a = 0; a < dim; ++a) {
        if (n[a] < 1)
            throw InvalidGeometryError("cells_per_axis must be >= 1");
        if (!(box.hi[a] - box.lo[a] > 0.0))
            throw InvalidGeometryError("box extent must be positive");
        h[a] = (box.hi[a] - box.lo[a]) / n[a];
    }

    Mesh m;
    m.dim = dim;
    m.kind = CellKind::Box;
    m.box_lo = {box.lo[0], box.lo[1], box.lo[2]};
    m.box_hi = {box.hi[0], box.hi[1], box.hi[2]};
    m.cells_per_axis = n;

    const int nz = (dim == 3) ? n[2] : 0;
    for (int k = 0; k <= nz; ++k)
        for (int j = 0; j <= n[1]; ++j)
            for (int i = 0; i <= n[0]; ++i)
                m.vertices.push_back({box.lo[0] + i * h[0],
                                      box.lo[1] + j * h[1],
                                      dim == 3 ? box.lo[2] + k * h[2] : 0.0});

    const int kz = (dim == 3) ? n[2] : 1;
    for (int k = 0; k < kz; ++k)
        for (int j = 0; j < n[1]; ++j)
            for (int i = 0; i < n[0]; ++i) {
                std::vector<int> cv;
                const int kk = (dim == 3) ? 1 : 0;
                for (int dk = 0; dk <= (dim == 3 ? 1 : 0); ++dk)
                    for (int dj = 0; dj <= 1; ++dj)
                        for (int di = 0; di <= 1; ++di)
                            cv.push_back(detail::structured_vertex(n, i + di, j + dj,
                                                                   k + dk * kk));
                m.cells.push_back(cv);
            }

    // facets per axis
    const char* axis_names = "xyz";
    auto add_facet = [&](int axis, int plane, int j, int k) {
        std::vector<int> fv;
        if (axis == 0) {
            fv = {detail::structured_vertex(n, plane, j, k),
                  detail::structured_vertex(n, plane, j + 1, k)};
            if (dim == 3) {
                fv.push_back(detail::structured_vertex(n, plane, j + 1, k + 1));
                fv.push_back(detail::structured_vertex(n, plane, j, k + 1));
            }
        } else if (axis == 1) {
            fv = {detail::structured_vertex(n, j, plane, k),
                  detail::structured_vertex(n, j + 1, plane, k)};
            if (dim == 3) {
                fv.push_back(detail::structured_vertex(n, j + 1, plane, k + 1));
                fv.push_back(detail::structured_vertex(n, j, plane, k + 1));
            }
        } else {
            fv = {detail::structured_vertex(n, j, k, plane),
                  detail::structured_vertex(n, j + 1, k, plane),
                  detail::structured_vertex(n, j + 1, k + 1, plane),
                  detail::structured_vertex(n, j, k + 1, plane)};
        }
        int lo_cell = -1, hi_cell = -1;
        if (axis == 0) {
            if (plane > 0) lo_cell = detail::structured_cell(n, plane - 1, j, k);
            if (plane < n[0]) hi_cell = detail::structured_cell(n, plane, j, k);
        } else if (axis == 1) {
            if (plane > 0) lo_cell = detail::structured_cell(n, j, plane - 1, k);
            if (plane < n[1]) hi_cell = detail::structured_cell(n, j, plane, k);
        } else {
            if (plane > 0) lo_cell = detail::structured_cell(n, j, k, plane - 1);
            if (plane < n[2]) hi_cell = detail::structured_cell(n, j, k, plane);
        }
        // global normal is +axis: the lower cell is on the negative side
        if (lo_cell >= 0)
            m.facet_cells.push_back({lo_cell, hi_cell});
        else
            m.facet_cells.push_back({hi_cell, -1});
        m.facet_vertices.push_back(fv);

        int marker = -1;
        if (plane == 0)
            marker = detail::checked_marker_id(m, std::string(1, axis_names[axis]) + "_lo");
        else if ((axis == 0 && plane == n[0]) || (axis == 1 && plane == n[1]) ||
                 (axis == 2 && plane == n[2]))
            marker = detail::checked_marker_id(m, std::string(1, axis_names[axis]) + "_hi");
        m.facet_marker.push_back(marker);
    };

    const int kmax = (dim == 3) ? n[2] : 1;
    for (int k = 0; k < kmax; ++k)
        for (int j = 0; j < n[1]; ++j)
            for (int i = 0; i <= n[0]; ++i)
                add_facet(0, i, j, k);
    for (int k = 0; k < kmax; ++k)
        for (int j = 0; j <= n[1]; ++j)
            for (int i = 0; i < n[0]; ++i)
                add_facet(1, j, i, k);
    if (dim == 3)
        for (int k = 0; k <= n[2]; ++k)
            for (int j = 0; j < n[1]; ++j)
                for (int i = 0; i < n[0]; ++i)
                    add_facet(2, k, i, j);

    // cell->facet incidence, fixed local order (x_lo, x_hi, y_lo, y_hi, ...)
    m.cell_facets.assign(m.n_cells(), {});
    m.cell_facet_signs.assign(m.n_cells(), {});
    for (int k = 0; k < kmax; ++k)
        for (int j = 0; j < n[1]; ++j)
            for (int i = 0; i < n[0]; ++i) {
                const int c = detail::structured_cell(n, i, j, k);
                auto& cf = m.cell_facets[c];
                auto& cs = m.cell_facet_signs[c];
                cf.push_back(detail::structured_facet(n, dim, 0, i, j, k));
                cs.push_back(-1);
                cf.push_back(detail::structured_facet(n, dim, 0, i + 1, j, k));
                cs.push_back(1);
                cf.push_back(detail::structured_facet(n, dim, 1, j, i, k));
                cs.push_back(-1);
                cf.push_back(detail::structured_facet(n, dim, 1, j + 1, i, k));
                cs.push_back(1);
                if (dim == 3) {
                    cf.push_back(detail::structured_facet(n, dim, 2, k, i, j));
                    cs.push_back(-1);
                    cf.push_back(detail::structured_facet(n, dim, 2, k + 1, i, j));
                    cs.push_back(1);
                }
            }

    // geometry
    const double cellvol = [&] {
        double v = 1.0;
        for (int a = 0; a < dim; ++a) v *= h[a];
        return v;
    }();
    m.cell_volumes.assign(m.n_cells(), cellvol);
    m.cell_centroids.resize(m.n_cells());
    for (int c = 0; c < m.n_cells(); ++c) {
        Vec3 cen{0, 0, 0};
        for (int v : m.cells[c]) cen = cen + m.vertices[v];
        m.cell_centroids[c] = (1.0 / static_cast<double>(m.cells[c].size())) * cen;
    }
    m.facet_measures.resize(m.n_facets());
    m.facet_normals.resize(m.n_facets());
    m.facet_centroids.resize(m.n_facets());
    for (int f = 0; f < m.n_facets(); ++f) {
        Vec3 cen{0, 0, 0};
        for (int v : m.facet_vertices[f]) cen = cen + m.vertices[v];
        cen = (1.0 / static_cast<double>(m.facet_vertices[f].size())) * cen;
        m.facet_centroids[f] = cen;
        // identify the axis from the facet plane
        Vec3 lo = m.vertices[m.facet_vertices[f][0]];
        Vec3 hi = lo;
        for (int v : m.facet_vertices[f])
            for (int a = 0; a < 3; ++a) {
                lo[a] = std::min(lo[a], m.vertices[v][a]);
                hi[a] = std::max(hi[a], m.vertices[v][a]);
            }
        int axis = 0;
        double meas = 1.0;
        for (int a = 0; a < dim; ++a) {
            if (hi[a] - lo[a] < 1e-14 * std::max(1.0, std::abs(hi[a])))
                axis = a;
            else
                meas *= hi[a] - lo[a];
        }
        m.facet_measures[f] = meas;
        Vec3 nrm{0, 0, 0};
        nrm[axis] = 1.0;
        m.facet_normals[f] = nrm;
    }
    return m;
}

/// Simplicial mesh of an axis-aligned box via the Kuhn triangulation:
/// each grid cell splits into d! simplices, conforming across cells.
inline Mesh build_kuhn_mesh(const Box& box, const std::array<int, 3>& cells_per_axis,
                            int dim,
                            const std::function<std::string(const Vec3&)>& classify = {},
                            const std::function<bool(const Vec3&)>& keep_cell = {},
                            const std::function<Vec3(const Vec3&)>& map_coords = {})
{
    if (dim != 2 && dim != 3)
        throw InvalidGeometryError("simplicial box mesh requires d in {2,3}");
    std::array<int, 3> n = cells_per_axis;
    if (dim == 2) n[2] = 1;
    std::array<double, 3> h{};
    for (int a = 0; a < dim; ++a) {
        if (n[a] < 1) throw InvalidGeometryError("cells_per_axis must be >= 1");
        if (!(box.hi[a] - box.lo[a] > 0.0))
            throw InvalidGeometryError("box extent must be positive");
        h[a] = (box.hi[a] - box.lo[a]) / n[a];
    }

    std::vector<Vec3> verts;
    const int nz = (dim == 3) ? n[2] : 0;
    for (int k = 0; k <= nz; ++k)
        for (int j = 0; j <= n[1]; ++j)
            for (int i = 0; i <= n[0]; ++i) {
                Vec3 p{box.lo[0] + i * h[0], box.lo[1] + j * h[1],
                       dim == 3 ? box.lo[2] + k * h[2] : 0.0};
                verts.push_back(map_coords ? map_coords(p) : p);
            }

    std::vector<std::array<int, 3>> perms2 = {{0, 1, 0}, {1, 0, 0}};
    std::vector<std::array<int, 3>> perms3 = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2},
                                              {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    const auto& perms = (dim == 2) ? perms2 : perms3;

    std::vector<std::vector<int>> cells;
    const int kmax = (dim == 3) ? n[2] : 1;
    for (int k = 0; k < kmax; ++k)
        for (int j = 0; j < n[1]; ++j)
            for (int i = 0; i < n[0]; ++i) {
                if (keep_cell) {
                    const Vec3 cen{box.lo[0] + (i + 0.5) * h[0],
                                   box.lo[1] + (j + 0.5) * h[1],
                                   dim == 3 ? box.lo[2] + (k + 0.5) * h[2] : 0.0};
                    if (!keep_cell(cen)) continue;
                }
                for (const auto& perm : perms) {
                    std::array<int, 3> idx{i, j, k};
                    std::vector<int> cv;
                    cv.push_back(detail::structured_vertex(n, idx[0], idx[1], idx[2]));
                    for (int s = 0; s < dim; ++s) {
                        idx[perm[s]] += 1;
                        cv.push_back(detail::structured_vertex(n, idx[0], idx[1], idx[2]));
                    }
                    cells.push_back(cv);
                }
            }

    // drop unreferenced vertices (keep_cell may have removed cells)
    std::vector<int> remap(verts.size(), -1);
    std::vector<Vec3> used;
    for (auto& cv : cells)
        for (int& v : cv) {
            if (remap[v] < 0) {
                remap[v] = static_cast<int>(used.size());
                used.push_back(verts[v]);
            }
            v = remap[v];
        }
    return make_simplicial_mesh(dim, std::move(used), std::move(cells), classify);
}

/// Generator descriptor for build_simplicial_mesh.
struct SimplicialSpec {
    enum class Kind { UnitSquare, UnitCube, LShape, QuarterAnnulus, File };
    Kind kind = Kind::UnitSquare;
    int n = 1;              // grid cells per axis for the builtin generators
    std::string path;       // mesh file for Kind::File
    double r_inner = 0.5;   // quarter annulus
    double r_outer = 1.0;
    double height = 1.0;
    int layers = 1;
};

Mesh read_mesh_file(const std::string& path);

/// Builtin simplicial generators plus the external mesh-file reader.
inline Mesh build_simplicial_mesh(const SimplicialSpec& spec)
{
    using Kind = SimplicialSpec::Kind;
    const double tol = 1e-12;
    auto box_classify = [tol](const Box& b, int dim) {
        return [=](const Vec3& p) -> std::string {
            const char* ax = "xyz";
            for (int a = 0; a < dim; ++a) {
                if (std::abs(p[a] - b.lo[a]) < tol) return std::string(1, ax[a]) + "_lo";
                if (std::abs(p[a] - b.hi[a]) < tol) return std::string(1, ax[a]) + "_hi";
            }
            return "";
        };
    };

    switch (spec.kind) {
    case Kind::UnitSquare: {
        const Box b{{0, 0, 0}, {1, 1, 0}};
        return build_kuhn_mesh(b, {spec.n, spec.n, 1}, 2, box_classify(b, 2));
    }
    case Kind::UnitCube: {
        const Box b{{0, 0, 0}, {1, 1, 1}};
        return build_kuhn_mesh(b, {spec.n, spec.n, spec.n}, 3, box_classify(b, 3));
    }
    case Kind::LShape: {
        if (spec.n % 2 != 0)
            throw InvalidGeometryError("L-shape generator requires even n");
        const Box b{{0, 0, 0}, {1, 1, 0}};
        auto classify = [tol](const Vec3& p) -> std::string {
            if (std::abs(p[0]) < tol) return "x_lo";
            if (std::abs(p[1]) < tol) return "y_lo";
            if (std::abs(p[0] - 1.0) < tol) return "x_hi";
            if (std::abs(p[1] - 1.0) < tol) return "y_hi";
            if (std::abs(p[0] - 0.5) < tol) return "inner_x";
            if (std::abs(p[1] - 0.5) < tol) return "inner_y";
            return "";
        };
        auto keep = [](const Vec3& c) { return !(c[0] > 0.5 && c[1] > 0.5); };
        return build_kuhn_mesh(b, {spec.n, spec.n, 1}, 2, classify, keep);
    }
    case Kind::QuarterAnnulus: {
        // polyhedral approximation of a quarter cylinder shell: mesh the
        // (r, phi, z) box and map to Cartesian coordinates
        const double pi2 = 1.5707963267948966192313216916398;
        const Box b{{spec.r_inner, 0, 0}, {spec.r_outer, pi2, spec.height}};
        auto mapc = [](const Vec3& p) -> Vec3 {
            return {p[0] * std::cos(p[1]), p[0] * std::sin(p[1]), p[2]};
        };
        const double ri = spec.r_inner, ro = spec.r_outer, hz = spec.height;
        auto classify = [=](const Vec3& p) -> std::string {
            const double r = std::hypot(p[0], p[1]);
            if (std::abs(p[2]) < tol) return "z_lo";
            if (std::abs(p[2] - hz) < tol) return "z_hi";
            if (std::abs(p[0]) < tol) return "y_axis";
            if (std::abs(p[1]) < tol) return "x_axis";
            return r < 0.5 * (ri + ro) ? "inner" : "outer";
        };
        return build_kuhn_mesh(b, {spec.n, 2 * spec.n, std::max(1, spec.layers)}, 3,
                               classify, {}, mapc);
    }
    case Kind::File:
        return read_mesh_file(spec.path);
    }
    throw InvalidGeometryError("unknown simplicial generator");
}

/// Minimal ASCII mesh format:
///   dim n_vertices n_cells n_boundary_facets
///   <n_vertices lines of dim coordinates>
///   <n_cells lines of dim+1 vertex indices>
///   <n_boundary_facets lines: marker v0 v1 [v2]>
inline Mesh parse_mesh(std::istream& in)
{
    int dim = 0, nv = 0, nc = 0, nbf = 0;
    if (!(in >> dim >> nv >> nc >> nbf))
        throw InvalidMeshError("mesh file: bad header");
    if (dim != 2 && dim != 3)
        throw InvalidMeshError("mesh file: dim must be 2 or 3");
    std::vector<Vec3> verts(nv, Vec3{0, 0, 0});
    for (int i = 0; i < nv; ++i)
        for (int a = 0; a < dim; ++a)
            if (!(in >> verts[i][a]))
                throw InvalidMeshError("mesh file: bad vertex line");
    std::vector<std::vector<int>> cells(nc, std::vector<int>(dim + 1));
    for (int c = 0; c < nc; ++c)
        for (int j = 0; j <= dim; ++j) {
            if (!(in >> cells[c][j]) || cells[c][j] < 0 || cells[c][j] >= nv)
                throw InvalidMeshError("mesh file: bad cell line");
        }
    struct BFacet {
        std::string marker;
        std::vector<int> verts;
    };
    std::vector<BFacet> bfacets(nbf);
    for (int f = 0; f < nbf; ++f) {
        if (!(in >> bfacets[f].marker))
            throw InvalidMeshError("mesh file: bad boundary facet line");
        bfacets[f].verts.resize(dim);
        for (int j = 0; j < dim; ++j)
            if (!(in >> bfacets[f].verts[j]))
                throw InvalidMeshError("mesh file: bad boundary facet line");
    }

    Mesh m = make_simplicial_mesh(dim, std::move(verts), std::move(cells));
    std::map<std::vector<int>, int> facet_of;
    for (int f = 0; f < m.n_facets(); ++f) {
        std::vector<int> key = m.facet_vertices[f];
        std::sort(key.begin(), key.end());
        facet_of[key] = f;
    }
    for (auto& bf : bfacets) {
        std::sort(bf.verts.begin(), bf.verts.end());
        auto it = facet_of.find(bf.verts);
        if (it == facet_of.end() || !m.is_boundary_facet(it->second))
            throw InvalidMeshError("mesh file: boundary facet not found in mesh");
        m.facet_marker[it->second] = detail::checked_marker_id(m, bf.marker);
    }
    return m;
}

inline Mesh read_mesh_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw InvalidMeshError("cannot open mesh file: " + path);
    return parse_mesh(in);
}

inline void write_mesh(std::ostream& out, const Mesh& m)
{
    if (m.kind != CellKind::Simplex)
        throw InvalidMeshError("mesh file format supports simplicial meshes only");
    std::vector<int> bnd;
    for (int f = 0; f < m.n_facets(); ++f)
        if (m.is_boundary_facet(f)) bnd.push_back(f);
    out << m.dim << " " << m.n_vertices() << " " << m.n_cells() << " "
        << bnd.size() << "\n";
    out.precision(17);
    for (const auto& v : m.vertices) {
        for (int a = 0; a < m.dim; ++a) out << (a ? " " : "") << v[a];
        out << "\n";
    }
    for (const auto& c : m.cells) {
        for (std::size_t j = 0; j < c.size(); ++j) out << (j ? " " : "") << c[j];
        out << "\n";
    }
    for (int f : bnd) {
        const int mk = m.facet_marker[f];
        out << (mk >= 0 ? m.marker_names[mk] : std::string("boundary"));
        for (int v : m.facet_vertices[f]) out << " " << v;
        out << "\n";
    }
}

/// Parent-child tables produced by one uniform refinement step.
struct RefinementMap {
    std::vector<std::vector<int>> cell_children;
    std::vector<std::vector<int>> facet_children;
};

namespace detail {

/// Red refinement of a simplicial mesh; fine vertex provenance is tracked so
/// boundary markers and coarse-facet children can be recovered exactly.
inline std::pair<Mesh, RefinementMap> refine_simplicial(const Mesh& coarse)
{
    const int d = coarse.dim;
    std::vector<Vec3> fverts = coarse.vertices;
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
        auto key = std::minmax(a, b);
        auto it = midpoint.find(key);
        if (it != midpoint.end()) return it->second;
        const int id = static_cast<int>(fverts.size());
        fverts.push_back(0.5 * (coarse.vertices[a] + coarse.vertices[b]));
        midpoint.emplace(key, id);
        return id;
    };

    std::vector<std::vector<int>> fcells;
    RefinementMap map;
    map.cell_children.resize(coarse.n_cells());

    for (int c = 0; c < coarse.n_cells(); ++c) {
        const auto& v = coarse.cells[c];
        std::vector<std::vector<int>> children;
        if (d == 2) {
            const int m01 = mid(v[0], v[1]), m02 = mid(v[0], v[2]),
                      m12 = mid(v[1], v[2]);
            children = {{v[0], m01, m02},
                        {m01, v[1], m12},
                        {m02, m12, v[2]},
                        {m01, m12, m02}};
        } else {
            const int m01 = mid(v[0], v[1]), m02 = mid(v[0], v[2]),
                      m03 = mid(v[0], v[3]), m12 = mid(v[1], v[2]),
                      m13 = mid(v[1], v[3]), m23 = mid(v[2], v[3]);
            children = {{v[0], m01, m02, m03},
                        {m01, v[1], m12, m13},
                        {m02, m12, v[2], m23},
                        {m03, m13, m23, v[3]}};
            // inner octahedron: split around the shortest diagonal
            // (deterministic tie-break by fixed diagonal order)
            const std::array<std::array<int, 2>, 3> diags = {
                {{m01, m23}, {m02, m13}, {m03, m12}}};
            const std::array<std::array<int, 4>, 3> rings = {
                {{m02, m03, m13, m12}, {m01, m03, m23, m12}, {m01, m02, m23, m13}}};
            int best = 0;
            double best_len = 1e300;
            for (int q = 0; q < 3; ++q) {
                const double len =
                    norm(fverts[diags[q][0]] - fverts[diags[q][1]]);
                if (len < best_len - 1e-14 * (1.0 + best_len)) {
                    best_len = len;
                    best = q;
                }
            }
            const auto& dg = diags[best];
            const auto& rg = rings[best];
            for (int q = 0; q < 4; ++q)
                children.push_back({dg[0], dg[1], rg[q], rg[(q + 1) % 4]});
        }
        for (auto& ch : children) {
            map.cell_children[c].push_back(static_cast<int>(fcells.size()));
            fcells.push_back(ch);
        }
    }

    Mesh fine = make_simplicial_mesh(d, fverts, fcells);

    // vertex provenance: fine vertex v lies on coarse facet F iff it is a
    // coarse vertex of F or the midpoint of an edge with both ends on F
    const int ncv = coarse.n_vertices();
    std::vector<std::array<int, 2>> origin(fine.n_vertices(), {-1, -1});
    for (int v = 0; v < ncv; ++v) origin[v] = {v, -1};
    for (const auto& [key, id] : midpoint) origin[id] = {key.first, key.second};

    auto on_coarse_facet = [&](int fine_vertex, const std::set<int>& fset) {
        const auto& o = origin[fine_vertex];
        if (o[1] < 0) return fset.count(o[0]) > 0;
        return fset.count(o[0]) > 0 && fset.count(o[1]) > 0;
    };

    map.facet_children.resize(coarse.n_facets());
    for (int F = 0; F < coarse.n_facets(); ++F) {
        std::set<int> fset(coarse.facet_vertices[F].begin(),
                           coarse.facet_vertices[F].end());
        std::set<int> found;
        for (int side = 0; side < 2; ++side) {
            const int cc = coarse.facet_cells[F][side];
            if (cc < 0) continue;
            for (int child : map.cell_children[cc])
                for (int ff : fine.cell_facets[child]) {
                    bool onf = true;
                    for (int fv : fine.facet_vertices[ff])
                        if (!on_coarse_facet(fv, fset)) {
                            onf = false;
                            break;
                        }
                    if (onf) found.insert(ff);
                }
        }
        map.facet_children[F].assign(found.begin(), found.end());
        if (coarse.facet_marker[F] >= 0)
            for (int ff : map.facet_children[F]) {
                const int id = detail::checked_marker_id(
                    fine, coarse.marker_names[coarse.facet_marker[F]]);
                fine.facet_marker[ff] = id;
            }
    }
    return {std::move(fine), std::move(map)};
}

inline std::pair<Mesh, RefinementMap> refine_structured(const Mesh& coarse)
{
    const int d = coarse.dim;
    const auto& n = coarse.cells_per_axis;
    std::array<int, 3> nf = {2 * n[0], 2 * n[1], d == 3 ? 2 * n[2] : 1};
    Box b;
    b.lo = {coarse.box_lo[0], coarse.box_lo[1], coarse.box_lo[2]};
    b.hi = {coarse.box_hi[0], coarse.box_hi[1], coarse.box_hi[2]};
    Mesh fine = build_structured_mesh(b, nf, d);

    RefinementMap map;
    map.cell_children.resize(coarse.n_cells());
    const int kmax = (d == 3) ? n[2] : 1;
    for (int k = 0; k < kmax; ++k)
        for (int j = 0; j < n[1]; ++j)
            for (int i = 0; i < n[0]; ++i) {
                const int c = structured_cell(n, i, j, k);
                for (int dk = 0; dk <= (d == 3 ? 1 : 0); ++dk)
                    for (int dj = 0; dj <= 1; ++dj)
                        for (int di = 0; di <= 1; ++di)
                            map.cell_children[c].push_back(structured_cell(
                                nf, 2 * i + di, 2 * j + dj, 2 * k + dk));
            }

    map.facet_children.resize(coarse.n_facets());
    auto add_children = [&](int axis, int plane, int j, int k) {
        const int F = structured_facet(n, d, axis, plane, j, k);
        for (int db = 0; db <= (d == 3 ? 1 : 0); ++db)
            for (int da = 0; da <= 1; ++da)
                map.facet_children[F].push_back(structured_facet(
                    nf, d, axis, 2 * plane, 2 * j + da, 2 * k + db));
    };
    for (int k = 0; k < kmax; ++k)
        for (int j = 0; j < n[1]; ++j)
            for (int i = 0; i <= n[0]; ++i)
                add_children(0, i, j, k);
    for (int k = 0; k < kmax; ++k)
        for (int j = 0; j <= n[1]; ++j)
            for (int i = 0; i < n[0]; ++i)
                add_children(1, j, i, k);
    if (d == 3)
        for (int k = 0; k <= n[2]; ++k)
            for (int j = 0; j < n[1]; ++j)
                for (int i = 0; i < n[0]; ++i)
                    add_children(2, k, i, j);
    return {std::move(fine), std::move(map)};
}

} // namespace detail

/// One step of uniform refinement: quad->4, hex->8, triangle->4 (red),
/// tet->8 (red, shortest-interior-diagonal octahedron split).
inline std::pair<Mesh, RefinementMap> uniform_refine(const Mesh& mesh)
{
    return mesh.kind == CellKind::Box ? detail::refine_structured(mesh)
                                      : detail::refine_simplicial(mesh);
}

} // namespace mlspde
