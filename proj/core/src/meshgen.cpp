#include "headfem/meshgen.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <unordered_map>

#include <Eigen/Eigenvalues>

#include "headfem/error.hpp"
#include "headfem/rng.hpp"

namespace headfem {

namespace {

constexpr int kFaceLocal[4][3] = {{1, 2, 3}, {0, 3, 2}, {0, 1, 3}, {0, 2, 1}};

struct FaceKey {
    int a, b, c;
    bool operator==(const FaceKey&) const = default;
};

struct FaceKeyHash {
    std::size_t operator()(const FaceKey& k) const noexcept {
        std::size_t h = static_cast<std::size_t>(k.a) * 73856093u;
        h ^= static_cast<std::size_t>(k.b) * 19349663u + (h << 6) + (h >> 2);
        h ^= static_cast<std::size_t>(k.c) * 83492791u + (h << 6) + (h >> 2);
        return h;
    }
};

FaceKey sorted_key(Triangle t) {
    std::sort(t.begin(), t.end());
    return {t[0], t[1], t[2]};
}

struct Csr {
    std::vector<int> offsets;
    std::vector<int> values;
    std::span<const int> row(std::size_t i) const {
        return {values.data() + offsets[i], values.data() + offsets[i + 1]};
    }
};

Csr node_elements(const TetMesh& mesh) {
    Csr csr;
    csr.offsets.assign(mesh.node_count() + 1, 0);
    for (const auto& t : mesh.tetra) {
        for (int v : t) {
            ++csr.offsets[v + 1];
        }
    }
    std::partial_sum(csr.offsets.begin(), csr.offsets.end(), csr.offsets.begin());
    csr.values.resize(csr.offsets.back());
    std::vector<int> fill(csr.offsets.begin(), csr.offsets.end() - 1);
    for (std::size_t e = 0; e < mesh.tetra.size(); ++e) {
        for (int v : mesh.tetra[e]) {
            csr.values[fill[v]++] = static_cast<int>(e);
        }
    }
    return csr;
}

Csr node_neighbors(const TetMesh& mesh) {
    std::vector<std::vector<int>> adj(mesh.node_count());
    for (const auto& t : mesh.tetra) {
        for (int i = 0; i < 4; ++i) {
            for (int j = 0; j < 4; ++j) {
                if (i != j) {
                    adj[t[i]].push_back(t[j]);
                }
            }
        }
    }
    Csr csr;
    csr.offsets.push_back(0);
    for (auto& a : adj) {
        std::sort(a.begin(), a.end());
        a.erase(std::unique(a.begin(), a.end()), a.end());
        csr.values.insert(csr.values.end(), a.begin(), a.end());
        csr.offsets.push_back(static_cast<int>(csr.values.size()));
    }
    return csr;
}

} // namespace

double signed_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
    return (b - a).dot((c - a).cross(d - a)) / 6.0;
}

double TetMesh::volume(std::size_t e) const {
    const auto& t = tetra[e];
    return signed_volume(nodes[t[0]], nodes[t[1]], nodes[t[2]], nodes[t[3]]);
}

Vec3 TetMesh::centroid(std::size_t e) const {
    const auto& t = tetra[e];
    return 0.25 * (nodes[t[0]] + nodes[t[1]] + nodes[t[2]] + nodes[t[3]]);
}

Triangle TetMesh::face(std::size_t e, int k) const {
    const auto& t = tetra[e];
    return {t[kFaceLocal[k][0]], t[kFaceLocal[k][1]], t[kFaceLocal[k][2]]};
}

bool TetMesh::anisotropic() const {
    return std::any_of(sigma.begin(), sigma.end(),
                       [](const Conductivity& c) { return !c.is_isotropic(); });
}

void TetMesh::validate(std::size_t compartment_count) const {
    if (labels.size() != tetra.size() || sigma.size() != tetra.size()) {
        throw IndexError("mesh has " + std::to_string(tetra.size()) + " elements but " +
                         std::to_string(labels.size()) + " labels and " +
                         std::to_string(sigma.size()) + " conductivities");
    }
    const auto n = static_cast<int>(nodes.size());
    for (std::size_t e = 0; e < tetra.size(); ++e) {
        for (int v : tetra[e]) {
            if (v < 0 || v >= n) {
                throw IndexError("element " + std::to_string(e) + " references node " +
                                 std::to_string(v));
            }
        }
        if (labels[e] < 0 || static_cast<std::size_t>(labels[e]) >= compartment_count) {
            throw IndexError("element " + std::to_string(e) + " has label " +
                             std::to_string(labels[e]));
        }
        if (!(volume(e) > 0.0)) {
            throw AssemblyError("element " + std::to_string(e) + " has non-positive volume");
        }
        if (!sigma[e].is_isotropic()) {
            Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(sigma[e].matrix(),
                                                               Eigen::EigenvaluesOnly);
            if (eig.eigenvalues().minCoeff() <= 0.0) {
                throw AssemblyError("element " + std::to_string(e) +
                                    " has a conductivity tensor that is not positive definite");
            }
        } else if (sigma[e].row[0] < 0.0) {
            throw AssemblyError("element " + std::to_string(e) + " has negative conductivity");
        }
    }
}

std::vector<std::array<int, 4>> element_neighbors(const TetMesh& mesh) {
    std::vector<std::array<int, 4>> nb(mesh.element_count(), {-1, -1, -1, -1});
    std::unordered_map<FaceKey, std::pair<int, int>, FaceKeyHash> open;
    open.reserve(mesh.element_count() * 2);
    for (std::size_t e = 0; e < mesh.element_count(); ++e) {
        for (int k = 0; k < 4; ++k) {
            const auto key = sorted_key(mesh.face(e, k));
            auto [it, inserted] = open.try_emplace(key, static_cast<int>(e), k);
            if (!inserted) {
                nb[e][k] = it->second.first;
                nb[it->second.first][it->second.second] = static_cast<int>(e);
                open.erase(it);
            }
        }
    }
    return nb;
}

std::vector<BoundaryFace> boundary_faces(const TetMesh& mesh) {
    const auto nb = element_neighbors(mesh);
    std::vector<BoundaryFace> out;
    for (std::size_t e = 0; e < mesh.element_count(); ++e) {
        for (int k = 0; k < 4; ++k) {
            if (nb[e][k] < 0) {
                out.push_back({mesh.face(e, k), static_cast<int>(e), k});
            }
        }
    }
    return out;
}

TetMesh generate_mesh(const Segmentation& seg, double h) {
    if (!(h > 0.0) || !std::isfinite(h)) {
        throw ParameterError("mesh resolution must be positive, got " + std::to_string(h));
    }
    const BoundingBox box = seg.bounds();
    if (box.empty() || !box.extent().allFinite()) {
        throw ParameterError("segmentation bounding box is not finite");
    }
    std::array<int, 3> cubes{};
    for (int a = 0; a < 3; ++a) {
        cubes[a] = std::max(1, static_cast<int>(std::ceil(box.extent()[a] / h - 1e-9)));
    }
    const int nx = cubes[0], ny = cubes[1], nz = cubes[2];
    const auto grid_id = [&](int i, int j, int k) {
        return i + (nx + 1) * (j + (ny + 1) * k);
    };
    const auto grid_point = [&](int id) {
        const int i = id % (nx + 1);
        const int j = (id / (nx + 1)) % (ny + 1);
        const int k = id / ((nx + 1) * (ny + 1));
        return Vec3(box.lower.x() + h * i, box.lower.y() + h * j, box.lower.z() + h * k);
    };
    const std::size_t grid_nodes = static_cast<std::size_t>(nx + 1) * (ny + 1) * (nz + 1);

    const bool uniform_priority =
        std::all_of(seg.compartments().begin(), seg.compartments().end(),
                    [&](const Compartment& c) { return c.priority == seg[0].priority; });

    // Node labels are only consulted by the priority rule.
    std::vector<int> node_label;
    if (!uniform_priority) {
        node_label.assign(grid_nodes, -1);
#pragma omp parallel for schedule(static)
        for (long long id = 0; id < static_cast<long long>(grid_nodes); ++id) {
            if (auto c = seg.locate(grid_point(static_cast<int>(id)))) {
                node_label[id] = static_cast<int>(*c);
            }
        }
    }

    // Kuhn split along the main diagonal; one tetrahedron per axis permutation.
    static constexpr int kPerms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2},
                                         {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    const long long n_cubes = static_cast<long long>(nx) * ny * nz;
    std::vector<Tetrahedron> cand(static_cast<std::size_t>(n_cubes) * 6);
    std::vector<int> cand_label(cand.size(), -1);

#pragma omp parallel for schedule(static)
    for (long long cube = 0; cube < n_cubes; ++cube) {
        const int i = static_cast<int>(cube % nx);
        const int j = static_cast<int>((cube / nx) % ny);
        const int k = static_cast<int>(cube / (static_cast<long long>(nx) * ny));
        for (int p = 0; p < 6; ++p) {
            std::array<int, 3> pos{i, j, k};
            Tetrahedron t{};
            t[0] = grid_id(pos[0], pos[1], pos[2]);
            for (int s = 0; s < 3; ++s) {
                ++pos[kPerms[p][s]];
                t[s + 1] = grid_id(pos[0], pos[1], pos[2]);
            }
            const Vec3 a = grid_point(t[0]), b = grid_point(t[1]), c = grid_point(t[2]),
                       d = grid_point(t[3]);
            if (signed_volume(a, b, c, d) < 0.0) {
                std::swap(t[1], t[2]);
            }
            const std::size_t slot = static_cast<std::size_t>(cube) * 6 + p;
            cand[slot] = t;
            const auto centroid_label = seg.locate(0.25 * (a + b + c + d));
            if (!centroid_label) {
                continue;
            }
            int label = static_cast<int>(*centroid_label);
            if (!uniform_priority) {
                int best = label;
                for (int v : t) {
                    const int l = node_label[v];
                    if (l < 0 || l == best) {
                        continue;
                    }
                    const int pl = seg[l].priority, pb = seg[best].priority;
                    if (pl < pb || (pl == pb && best != label && l < best)) {
                        best = l;
                    }
                }
                label = best;
            }
            cand_label[slot] = label;
        }
    }

    TetMesh mesh;
    std::vector<int> remap(grid_nodes, -1);
    for (std::size_t s = 0; s < cand.size(); ++s) {
        if (cand_label[s] < 0) {
            continue;
        }
        for (int v : cand[s]) {
            remap[v] = 0;
        }
    }
    for (std::size_t id = 0; id < grid_nodes; ++id) {
        if (remap[id] == 0) {
            remap[id] = static_cast<int>(mesh.nodes.size());
            mesh.nodes.push_back(grid_point(static_cast<int>(id)));
        }
    }
    for (std::size_t s = 0; s < cand.size(); ++s) {
        if (cand_label[s] < 0) {
            continue;
        }
        Tetrahedron t = cand[s];
        for (int& v : t) {
            v = remap[v];
        }
        mesh.tetra.push_back(t);
        mesh.labels.push_back(cand_label[s]);
        mesh.sigma.push_back(seg[cand_label[s]].sigma);
    }
    if (mesh.tetra.empty()) {
        throw EmptyMeshError("no element centroid at h = " + std::to_string(h) +
                             " falls inside any compartment");
    }
    return mesh;
}

TetMesh smooth_mesh(const TetMesh& input, int iterations, double step) {
    if (iterations < 0) {
        throw ParameterError("smoothing iterations must be non-negative");
    }
    if (!(step > 0.0 && step < 1.0)) {
        throw ParameterError("smoothing step must lie in (0, 1), got " + std::to_string(step));
    }
    TetMesh mesh = input;
    if (iterations == 0) {
        return mesh;
    }
    const Csr incident = node_elements(mesh);
    const Csr neighbors = node_neighbors(mesh);

    std::vector<char> on_boundary(mesh.node_count(), 0);
    for (const auto& f : boundary_faces(mesh)) {
        for (int v : f.nodes) {
            on_boundary[v] = 1;
        }
    }
    std::vector<char> interface(mesh.node_count(), 0);
    std::vector<int> movable;
    for (std::size_t v = 0; v < mesh.node_count(); ++v) {
        auto elems = incident.row(v);
        if (on_boundary[v] || elems.empty()) {
            continue;
        }
        const int first = mesh.labels[elems[0]];
        if (std::any_of(elems.begin(), elems.end(),
                        [&](int e) { return mesh.labels[e] != first; })) {
            interface[v] = 1;
            movable.push_back(static_cast<int>(v));
        }
    }

    auto inverted = [&](int v) {
        for (int e : incident.row(v)) {
            if (!(mesh.volume(e) > 0.0)) {
                return true;
            }
        }
        return false;
    };

    std::vector<Vec3> target(movable.size());
    for (int it = 0; it < iterations; ++it) {
        for (double lambda : {step, -step}) {
            for (std::size_t m = 0; m < movable.size(); ++m) {
                const int v = movable[m];
                Vec3 sum = Vec3::Zero();
                int count = 0;
                for (int u : neighbors.row(v)) {
                    if (interface[u] || on_boundary[u]) {
                        sum += mesh.nodes[u];
                        ++count;
                    }
                }
                if (count == 0) {
                    for (int u : neighbors.row(v)) {
                        sum += mesh.nodes[u];
                        ++count;
                    }
                }
                const Vec3 avg = sum / count;
                target[m] = mesh.nodes[v] + lambda * (avg - mesh.nodes[v]);
            }
            for (std::size_t m = 0; m < movable.size(); ++m) {
                const int v = movable[m];
                const Vec3 old = mesh.nodes[v];
                mesh.nodes[v] = target[m];
                if (inverted(v)) {
                    mesh.nodes[v] = old;
                }
            }
        }
    }
    return mesh;
}

int SourceSpace::columns_per_source() const {
    switch (mode) {
    case SourceMode::Cartesian:
        return 3;
    case SourceMode::Constrained:
        return 1;
    case SourceMode::Whitney:
        return 4;
    }
    return 0;
}

SourceSpace place_sources(const TetMesh& mesh, const Segmentation& seg, std::size_t n,
                          SourceMode mode, std::uint64_t seed) {
    if (n == 0) {
        throw ParameterError("source count must be at least 1");
    }
    const auto active = seg.active_compartments();
    if (active.empty()) {
        throw ConfigError("no active compartment to place sources in");
    }
    std::vector<int> elems;
    std::vector<double> cumulative;
    double total = 0.0;
    for (std::size_t e = 0; e < mesh.element_count(); ++e) {
        if (std::find(active.begin(), active.end(), static_cast<std::size_t>(mesh.labels[e])) !=
            active.end()) {
            total += mesh.volume(e);
            elems.push_back(static_cast<int>(e));
            cumulative.push_back(total);
        }
    }
    if (elems.empty()) {
        throw ConfigError("active compartments contain no mesh elements");
    }

    Rng rng(seed);
    SourceSpace space;
    space.mode = mode;
    space.positions.reserve(n);
    space.elements.reserve(n);
    for (std::size_t s = 0; s < n; ++s) {
        const double r = rng.uniform() * total;
        auto it = std::upper_bound(cumulative.begin(), cumulative.end(), r);
        if (it == cumulative.end()) {
            --it;
        }
        const int e = elems[static_cast<std::size_t>(it - cumulative.begin())];
        // Dirichlet(1,1,1,1) barycentric weights are uniform over the simplex.
        std::array<double, 4> w{};
        double wsum = 0.0;
        for (double& x : w) {
            x = -std::log1p(-rng.uniform());
            wsum += x;
        }
        Vec3 p = Vec3::Zero();
        for (int k = 0; k < 4; ++k) {
            p += (w[k] / wsum) * mesh.nodes[mesh.tetra[e][k]];
        }
        space.positions.push_back(p);
        space.elements.push_back(e);
    }

    if (mode == SourceMode::Constrained) {
        struct OrientedTriangle {
            Vec3 a, b, c, normal;
        };
        std::vector<OrientedTriangle> tris;
        for (std::size_t c : active) {
            for (const auto& surf : seg[c].surfaces) {
                const double orient = surf.signed_volume() >= 0.0 ? 1.0 : -1.0;
                for (std::size_t t = 0; t < surf.triangles.size(); ++t) {
                    const auto& tri = surf.triangles[t];
                    tris.push_back({surf.nodes[tri[0]], surf.nodes[tri[1]], surf.nodes[tri[2]],
                                    orient * surf.triangle_normal(t)});
                }
            }
        }
        space.orientations.resize(n);
#pragma omp parallel for schedule(static)
        for (long long s = 0; s < static_cast<long long>(n); ++s) {
            double best = std::numeric_limits<double>::infinity();
            Vec3 normal = Vec3::UnitZ();
            for (const auto& t : tris) {
                const double d = point_triangle_distance(space.positions[s], t.a, t.b, t.c);
                if (d < best) {
                    best = d;
                    normal = t.normal;
                }
            }
            space.orientations[s] = normal;
        }
    }
    return space;
}

} // namespace headfem
