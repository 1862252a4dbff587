#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "captopt/error.hpp"

namespace captopt {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Vec2 a) { return std::sqrt(dot(a, a)); }

/// Boundary segment labels. GammaIn carries the reservoir data, GammaTwo the
/// applied electrode potential, GammaOne is the no-flux remainder (may be empty).
enum class BoundaryTag { GammaIn, GammaOne, GammaTwo };

/// Per-vertex tag derived from the boundary edges. Dirichlet tags (GammaIn,
/// GammaTwo) win over GammaOne at corners so that constrained rows stay constrained.
enum class VertexTag { Interior, GammaIn, GammaOne, GammaTwo };

struct BoundaryEdge {
    int a = -1;
    int b = -1;
    BoundaryTag tag = BoundaryTag::GammaOne;
};

/// Conforming 2D triangulation with tagged boundary. Immutable after
/// construction; all generators below are deterministic.
struct TriangleMesh {
    std::vector<Vec2> vertices;
    std::vector<std::array<int, 3>> triangles;   // counterclockwise
    std::vector<BoundaryEdge> boundary_edges;
    std::vector<VertexTag> vertex_tags;

    int num_vertices() const { return static_cast<int>(vertices.size()); }
    int num_triangles() const { return static_cast<int>(triangles.size()); }

    double signed_area(int k) const {
        const auto& t = triangles[static_cast<std::size_t>(k)];
        Vec2 p0 = vertices[static_cast<std::size_t>(t[0])];
        Vec2 p1 = vertices[static_cast<std::size_t>(t[1])];
        Vec2 p2 = vertices[static_cast<std::size_t>(t[2])];
        return 0.5 * ((p1.x - p0.x) * (p2.y - p0.y) - (p2.x - p0.x) * (p1.y - p0.y));
    }

    bool is_dirichlet_vertex(int v) const {
        VertexTag t = vertex_tags[static_cast<std::size_t>(v)];
        return t == VertexTag::GammaIn || t == VertexTag::GammaTwo;
    }
};

/// P1 element geometry: area and the (constant) gradients of the three
/// barycentric basis functions.
struct ElementGeometry {
    double area = 0.0;
    std::array<Vec2, 3> grad{};
    Vec2 centroid{};
};

inline ElementGeometry element_geometry(const TriangleMesh& mesh, int k) {
    const auto& t = mesh.triangles[static_cast<std::size_t>(k)];
    Vec2 p0 = mesh.vertices[static_cast<std::size_t>(t[0])];
    Vec2 p1 = mesh.vertices[static_cast<std::size_t>(t[1])];
    Vec2 p2 = mesh.vertices[static_cast<std::size_t>(t[2])];
    double twoA = (p1.x - p0.x) * (p2.y - p0.y) - (p2.x - p0.x) * (p1.y - p0.y);
    ElementGeometry g;
    g.area = 0.5 * twoA;
    g.grad[0] = {(p1.y - p2.y) / twoA, (p2.x - p1.x) / twoA};
    g.grad[1] = {(p2.y - p0.y) / twoA, (p0.x - p2.x) / twoA};
    g.grad[2] = {(p0.y - p1.y) / twoA, (p1.x - p0.x) / twoA};
    g.centroid = {(p0.x + p1.x + p2.x) / 3.0, (p0.y + p1.y + p2.y) / 3.0};
    return g;
}

struct MeshDiagnostics {
    double min_area = 0.0;
    double max_angle = 0.0;          // radians
    double h = 0.0;                  // max element diameter
    bool is_nonobtuse = false;
    std::map<BoundaryTag, int> tag_edge_counts;
    std::vector<int> inverted_elements;      // indices with signed area <= 0
    int untagged_boundary_edges = 0;         // edges on the mesh boundary missing a tag
    double total_area = 0.0;
};

namespace detail {

inline void derive_vertex_tags(TriangleMesh& mesh) {
    mesh.vertex_tags.assign(mesh.vertices.size(), VertexTag::Interior);
    // GammaOne first, Dirichlet tags override (corner rule: Dirichlet wins).
    for (const auto& e : mesh.boundary_edges) {
        if (e.tag == BoundaryTag::GammaOne) {
            mesh.vertex_tags[static_cast<std::size_t>(e.a)] = VertexTag::GammaOne;
            mesh.vertex_tags[static_cast<std::size_t>(e.b)] = VertexTag::GammaOne;
        }
    }
    for (const auto& e : mesh.boundary_edges) {
        if (e.tag == BoundaryTag::GammaIn) {
            mesh.vertex_tags[static_cast<std::size_t>(e.a)] = VertexTag::GammaIn;
            mesh.vertex_tags[static_cast<std::size_t>(e.b)] = VertexTag::GammaIn;
        }
    }
    for (const auto& e : mesh.boundary_edges) {
        if (e.tag == BoundaryTag::GammaTwo) {
            mesh.vertex_tags[static_cast<std::size_t>(e.a)] = VertexTag::GammaTwo;
            mesh.vertex_tags[static_cast<std::size_t>(e.b)] = VertexTag::GammaTwo;
        }
    }
}

} // namespace detail

/// Structured rectangle (0,width) x (0,height), nx*ny cells split along the
/// lower-left/upper-right diagonal. Tags: GammaIn at x=0, GammaTwo at x=width,
/// GammaOne at y=0 and y=height. swap_inlet exchanges GammaIn/GammaTwo.
inline TriangleMesh generate_rectangle_mesh(int nx, int ny, double width, double height,
                                            bool swap_inlet = false) {
    if (nx < 1 || ny < 1)
        throw Error("generate_rectangle_mesh: nx and ny must be >= 1");
    if (!(width > 0.0) || !(height > 0.0))
        throw Error("generate_rectangle_mesh: width and height must be positive");

    TriangleMesh mesh;
    mesh.vertices.reserve(static_cast<std::size_t>((nx + 1) * (ny + 1)));
    for (int j = 0; j <= ny; ++j)
        for (int i = 0; i <= nx; ++i)
            mesh.vertices.push_back({width * i / nx, height * j / ny});

    auto vid = [nx](int i, int j) { return j * (nx + 1) + i; };

    mesh.triangles.reserve(static_cast<std::size_t>(2 * nx * ny));
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            int v00 = vid(i, j), v10 = vid(i + 1, j);
            int v01 = vid(i, j + 1), v11 = vid(i + 1, j + 1);
            mesh.triangles.push_back({v00, v10, v11});
            mesh.triangles.push_back({v00, v11, v01});
        }
    }

    BoundaryTag left = swap_inlet ? BoundaryTag::GammaTwo : BoundaryTag::GammaIn;
    BoundaryTag right = swap_inlet ? BoundaryTag::GammaIn : BoundaryTag::GammaTwo;
    for (int j = 0; j < ny; ++j) {
        mesh.boundary_edges.push_back({vid(0, j), vid(0, j + 1), left});
        mesh.boundary_edges.push_back({vid(nx, j), vid(nx, j + 1), right});
    }
    for (int i = 0; i < nx; ++i) {
        mesh.boundary_edges.push_back({vid(i, 0), vid(i + 1, 0), BoundaryTag::GammaOne});
        mesh.boundary_edges.push_back({vid(i, ny), vid(i + 1, ny), BoundaryTag::GammaOne});
    }

    detail::derive_vertex_tags(mesh);
    return mesh;
}

/// Polar structured annulus r_inner < r < r_outer, nr radial layers and ntheta
/// sectors, each quad split into two triangles. GammaIn on the inner circle,
/// GammaTwo on the outer circle, no GammaOne. Vertices sit on exact circles, so
/// the polygonal area underestimates pi*(ro^2 - ri^2) by O(ntheta^-2).
inline TriangleMesh generate_annulus_mesh(int nr, int ntheta, double r_inner, double r_outer) {
    if (nr < 1)
        throw Error("generate_annulus_mesh: nr must be >= 1");
    if (ntheta < 3)
        throw Error("generate_annulus_mesh: ntheta must be >= 3");
    if (!(r_inner > 0.0) || !(r_inner < r_outer))
        throw Error("generate_annulus_mesh: radii must satisfy 0 < r_inner < r_outer");

    TriangleMesh mesh;
    mesh.vertices.reserve(static_cast<std::size_t>((nr + 1) * ntheta));
    for (int ir = 0; ir <= nr; ++ir) {
        double r = r_inner + (r_outer - r_inner) * ir / nr;
        for (int it = 0; it < ntheta; ++it) {
            double th = 2.0 * M_PI * it / ntheta;
            mesh.vertices.push_back({r * std::cos(th), r * std::sin(th)});
        }
    }

    auto vid = [ntheta](int ir, int it) { return ir * ntheta + (it % ntheta); };

    mesh.triangles.reserve(static_cast<std::size_t>(2 * nr * ntheta));
    for (int ir = 0; ir < nr; ++ir) {
        for (int it = 0; it < ntheta; ++it) {
            int a = vid(ir, it), b = vid(ir + 1, it);
            int c = vid(ir + 1, it + 1), d = vid(ir, it + 1);
            mesh.triangles.push_back({a, b, c});
            mesh.triangles.push_back({a, c, d});
        }
    }

    for (int it = 0; it < ntheta; ++it) {
        mesh.boundary_edges.push_back({vid(0, it), vid(0, it + 1), BoundaryTag::GammaIn});
        mesh.boundary_edges.push_back({vid(nr, it), vid(nr, it + 1), BoundaryTag::GammaTwo});
    }

    detail::derive_vertex_tags(mesh);
    return mesh;
}

/// Quality report. Inverted elements and untagged boundary edges are reported,
/// never repaired. The non-obtuse flag matters because obtuse angles weaken the
/// M-matrix structure of the stabilized continuity systems.
inline MeshDiagnostics validate_mesh(const TriangleMesh& mesh) {
    MeshDiagnostics d;
    d.min_area = std::numeric_limits<double>::infinity();
    for (int k = 0; k < mesh.num_triangles(); ++k) {
        double area = mesh.signed_area(k);
        d.total_area += area;
        d.min_area = std::min(d.min_area, area);
        if (area <= 0.0)
            d.inverted_elements.push_back(k);
        const auto& t = mesh.triangles[static_cast<std::size_t>(k)];
        for (int e = 0; e < 3; ++e) {
            Vec2 p = mesh.vertices[static_cast<std::size_t>(t[e])];
            Vec2 q = mesh.vertices[static_cast<std::size_t>(t[(e + 1) % 3])];
            Vec2 r = mesh.vertices[static_cast<std::size_t>(t[(e + 2) % 3])];
            d.h = std::max(d.h, norm(q - p));
            // angle at vertex e
            Vec2 u = q - p, v = r - p;
            double c = dot(u, v) / (norm(u) * norm(v));
            c = std::max(-1.0, std::min(1.0, c));
            d.max_angle = std::max(d.max_angle, std::acos(c));
        }
    }
    d.is_nonobtuse = d.max_angle <= 0.5 * M_PI + 1e-12;

    for (const auto& e : mesh.boundary_edges)
        d.tag_edge_counts[e.tag] += 1;

    // Edges used by exactly one triangle form the discrete boundary; each must
    // appear in boundary_edges.
    std::map<std::pair<int, int>, int> edge_use;
    for (const auto& t : mesh.triangles) {
        for (int e = 0; e < 3; ++e) {
            int a = t[e], b = t[(e + 1) % 3];
            edge_use[{std::min(a, b), std::max(a, b)}] += 1;
        }
    }
    std::map<std::pair<int, int>, int> tagged;
    for (const auto& e : mesh.boundary_edges)
        tagged[{std::min(e.a, e.b), std::max(e.a, e.b)}] += 1;
    for (const auto& [key, uses] : edge_use)
        if (uses == 1 && tagged.find(key) == tagged.end())
            d.untagged_boundary_edges += 1;

    return d;
}

} // namespace captopt
