#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "headfem/geometry.hpp"
#include "headfem/types.hpp"

namespace headfem {

/// Labeled tetrahedral volume mesh. All elements are positively oriented:
/// (b - a) . ((c - a) x (d - a)) > 0 for tetra {a, b, c, d}.
struct TetMesh {
    std::vector<Vec3> nodes;
    std::vector<Tetrahedron> tetra;
    std::vector<int> labels;          ///< compartment index per element
    std::vector<Conductivity> sigma;  ///< per element, S/m

    std::size_t node_count() const { return nodes.size(); }
    std::size_t element_count() const { return tetra.size(); }

    double volume(std::size_t e) const;
    Vec3 centroid(std::size_t e) const;
    /// Nodes of the face opposite local vertex k, wound outward.
    Triangle face(std::size_t e, int k) const;

    /// Throws AssemblyError on non-positive volume or a non-SPD tensor and
    /// IndexError on inconsistent labels / sizes.
    void validate(std::size_t compartment_count) const;
    bool anisotropic() const;
};

double signed_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d);

/// Neighbor across the face opposite local vertex k, or -1 on the boundary.
std::vector<std::array<int, 4>> element_neighbors(const TetMesh& mesh);

struct BoundaryFace {
    Triangle nodes; ///< wound outward
    int element;
    int local_face;
};
std::vector<BoundaryFace> boundary_faces(const TetMesh& mesh);

/// Structured grid of cubes of edge `h` over the segmentation bounds, each cut
/// into 6 Kuhn tetrahedra and labeled by the compartment of its centroid.
/// Elements whose nodes touch several compartments take the one with the
/// lowest priority value when it differs from the centroid's.
TetMesh generate_mesh(const Segmentation& seg, double h);

/// Sign-alternating Laplacian smoothing of interior compartment interfaces.
/// Moves that would invert an adjacent element are rejected per node.
TetMesh smooth_mesh(const TetMesh& mesh, int iterations, double step);

enum class SourceMode {
    Cartesian,   ///< three columns per position, ordered x, y, z
    Constrained, ///< one column per position along the surface normal
    Whitney,     ///< four face-function columns per source element
};

struct SourceSpace {
    std::vector<Vec3> positions;
    std::vector<Vec3> orientations; ///< unit normals in constrained mode, empty otherwise
    std::vector<int> elements;
    SourceMode mode = SourceMode::Cartesian;

    std::size_t size() const { return positions.size(); }
    int columns_per_source() const;
    std::size_t column_count() const { return size() * columns_per_source(); }
};

/// Uniform sampling over the active compartments: elements drawn with
/// probability proportional to volume, then a uniform barycentric point.
SourceSpace place_sources(const TetMesh& mesh, const Segmentation& seg, std::size_t n,
                          SourceMode mode, std::uint64_t seed);

} // namespace headfem
