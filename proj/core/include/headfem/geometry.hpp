#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "headfem/types.hpp"

namespace headfem {

/// Closed, consistently oriented triangulated boundary of one tissue region.
struct SurfaceMesh {
    std::string name;
    std::vector<Vec3> nodes;
    std::vector<Triangle> triangles;

    /// Throws IndexError, TopologyError (open, non-manifold, inconsistently
    /// oriented or degenerate surface).
    void validate() const;

    BoundingBox bounds() const;
    double triangle_area(std::size_t t) const;
    Vec3 triangle_normal(std::size_t t) const; ///< unit normal following the winding
    /// Signed enclosed volume; positive when the triangles wind outward.
    double signed_volume() const;
    int euler_characteristic() const;
};

/// Reads a node file (`x y z` per line) and a triangle file (`i j k`, 1-based).
/// Coordinates are multiplied by `unit_scale` so the result is in meters.
SurfaceMesh load_surface_mesh(const std::filesystem::path& nodes_file,
                              const std::filesystem::path& triangles_file,
                              double unit_scale = 1.0, std::string name = {});

/// Single-file ASCII layout: a header `n_nodes n_triangles`, then the node
/// lines, then the 1-based triangle lines. `#` starts a comment.
SurfaceMesh load_asc_surface(const std::filesystem::path& file, double unit_scale = 1.0,
                             std::string name = {});

void save_surface_mesh(const SurfaceMesh& mesh, const std::filesystem::path& nodes_file,
                       const std::filesystem::path& triangles_file);
void save_asc_surface(const SurfaceMesh& mesh, const std::filesystem::path& file);

SurfaceMesh make_icosphere(double radius, int subdivisions, const Vec3& center = Vec3::Zero(),
                           std::string name = "sphere");
SurfaceMesh make_box(const Vec3& lower, const Vec3& upper, std::string name = "box");

/// Ray-parity inside test for one surface, accelerated by binning triangles
/// in the plane orthogonal to a fixed ray direction.
class SurfaceLocator {
public:
    explicit SurfaceLocator(const SurfaceMesh& mesh);

    /// Points on the surface (within a relative tolerance) count as inside.
    bool contains(const Vec3& p) const;

    const BoundingBox& bounds() const { return bounds_; }

    static Vec3 ray_direction();

private:
    const std::vector<std::size_t>& candidates(const Vec3& p) const;

    std::vector<std::array<Vec3, 3>> triangles_;
    BoundingBox bounds_;
    Vec3 axis_u_, axis_v_;
    double u0_ = 0.0, v0_ = 0.0, cell_ = 1.0;
    int nu_ = 1, nv_ = 1;
    std::vector<std::vector<std::size_t>> bins_;
    double on_surface_tol_ = 0.0;
};

/// Brute-force parity test with an arbitrary ray direction. Does not treat
/// on-surface points specially; used to cross-check SurfaceLocator.
bool ray_parity_inside(const SurfaceMesh& mesh, const Vec3& p, const Vec3& direction);

double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

struct Compartment {
    std::string name;
    std::vector<SurfaceMesh> surfaces; ///< sub-meshes merged into one region
    Conductivity sigma = Conductivity::isotropic(0.33);
    int priority = 0; ///< lower value wins when an element touches several compartments
    bool active = false;
};

/// Ordered compartments, innermost first.
class Segmentation {
public:
    static constexpr std::size_t max_compartments = 27;

    Segmentation() = default;
    explicit Segmentation(std::vector<Compartment> compartments);

    std::size_t size() const { return compartments_.size(); }
    const Compartment& operator[](std::size_t i) const { return compartments_[i]; }
    const std::vector<Compartment>& compartments() const { return compartments_; }

    /// Innermost compartment whose surfaces enclose `p`.
    std::optional<std::size_t> locate(const Vec3& p) const;
    bool compartment_contains(std::size_t i, const Vec3& p) const;

    BoundingBox bounds() const;
    std::vector<std::size_t> active_compartments() const;

private:
    std::vector<Compartment> compartments_;
    std::vector<std::vector<SurfaceLocator>> locators_;
};

inline std::optional<std::size_t> point_in_compartment(const Segmentation& seg, const Vec3& p) {
    return seg.locate(p);
}

} // namespace headfem
