#include "headfem/fem.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>

#include "headfem/error.hpp"

namespace headfem {

namespace {

double triangle_area(const TetMesh& mesh, const Triangle& t) {
    return 0.5 * (mesh.nodes[t[1]] - mesh.nodes[t[0]])
                     .cross(mesh.nodes[t[2]] - mesh.nodes[t[0]])
                     .norm();
}

Vec3 triangle_centroid(const TetMesh& mesh, const Triangle& t) {
    return (mesh.nodes[t[0]] + mesh.nodes[t[1]] + mesh.nodes[t[2]]) / 3.0;
}

std::array<int, 3> sorted(Triangle t) {
    std::sort(t.begin(), t.end());
    return t;
}

/// Barycentric gradients, one per row.
Eigen::Matrix<double, 4, 3> barycentric_gradients(const TetMesh& mesh, std::size_t e) {
    const auto& t = mesh.tetra[e];
    Eigen::Matrix3d d;
    d.col(0) = mesh.nodes[t[1]] - mesh.nodes[t[0]];
    d.col(1) = mesh.nodes[t[2]] - mesh.nodes[t[0]];
    d.col(2) = mesh.nodes[t[3]] - mesh.nodes[t[0]];
    const Eigen::Matrix3d inv = d.inverse();
    Eigen::Matrix<double, 4, 3> g;
    g.bottomRows<3>() = inv;
    g.row(0) = -inv.colwise().sum();
    return g;
}

bool inside_element(const TetMesh& mesh, std::size_t e, const Vec3& p) {
    const auto& t = mesh.tetra[e];
    Eigen::Matrix3d d;
    d.col(0) = mesh.nodes[t[1]] - mesh.nodes[t[0]];
    d.col(1) = mesh.nodes[t[2]] - mesh.nodes[t[0]];
    d.col(2) = mesh.nodes[t[3]] - mesh.nodes[t[0]];
    const Vec3 lam = d.inverse() * (p - mesh.nodes[t[0]]);
    constexpr double tol = 1e-9;
    return (lam.array() >= -tol).all() && lam.sum() <= 1.0 + tol;
}

} // namespace

void ElectrodeSet::validate(const TetMesh& mesh) const {
    std::set<std::array<int, 3>> boundary;
    for (const auto& f : boundary_faces(mesh)) {
        boundary.insert(sorted(f.nodes));
    }
    std::set<std::array<int, 3>> claimed;
    for (std::size_t l = 0; l < electrodes.size(); ++l) {
        const auto& el = electrodes[l];
        if (!(el.impedance > 0.0)) {
            throw ElectrodeError("electrode " + std::to_string(l + 1) +
                                 " has non-positive impedance");
        }
        double area = 0.0;
        for (const auto& t : el.triangles) {
            const auto key = sorted(t);
            if (!boundary.contains(key)) {
                throw ElectrodeError("electrode " + std::to_string(l + 1) +
                                     " covers a face that is not on the mesh boundary");
            }
            if (!claimed.insert(key).second) {
                throw ElectrodeError("electrode " + std::to_string(l + 1) +
                                     " overlaps another electrode");
            }
            area += triangle_area(mesh, t);
        }
        if (!(area > 0.0)) {
            throw ElectrodeError("electrode " + std::to_string(l + 1) + " has zero covered area");
        }
    }
}

Electrode electrode_from_triangles(const TetMesh& mesh, std::vector<Triangle> triangles,
                                   double impedance) {
    Electrode el;
    el.triangles = std::move(triangles);
    el.impedance = impedance;
    Vec3 weighted = Vec3::Zero();
    for (const auto& t : el.triangles) {
        const double a = triangle_area(mesh, t);
        el.area += a;
        weighted += a * triangle_centroid(mesh, t);
    }
    if (el.area > 0.0) {
        el.center = weighted / el.area;
    }
    return el;
}

ElectrodeSet electrodes_from_disks(const TetMesh& mesh, std::span<const ElectrodeDisk> disks) {
    const auto faces = boundary_faces(mesh);
    if (faces.empty()) {
        throw ElectrodeError("mesh has no boundary faces");
    }
    std::vector<Vec3> centroids;
    centroids.reserve(faces.size());
    for (const auto& f : faces) {
        centroids.push_back(triangle_centroid(mesh, f.nodes));
    }
    // anchor each disk at the nearest boundary face
    std::vector<Vec3> anchors;
    for (const auto& d : disks) {
        if (!(d.radius >= 0.0)) {
            throw ElectrodeError("electrode radius must be non-negative");
        }
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t f = 0; f < faces.size(); ++f) {
            const double dist = (centroids[f] - d.center).squaredNorm();
            if (dist < best_d) {
                best_d = dist;
                best = f;
            }
        }
        anchors.push_back(centroids[best]);
    }
    std::vector<std::vector<Triangle>> covered(disks.size());
    for (std::size_t f = 0; f < faces.size(); ++f) {
        int owner = -1;
        double owner_d = std::numeric_limits<double>::infinity();
        for (std::size_t l = 0; l < disks.size(); ++l) {
            const double dist = (centroids[f] - anchors[l]).norm();
            if (dist <= disks[l].radius + 1e-12 * (1.0 + disks[l].radius) ||
                dist == 0.0) {
                if (dist < owner_d) {
                    owner_d = dist;
                    owner = static_cast<int>(l);
                }
            }
        }
        if (owner >= 0) {
            covered[owner].push_back(faces[f].nodes);
        }
    }
    ElectrodeSet set;
    for (std::size_t l = 0; l < disks.size(); ++l) {
        if (covered[l].empty()) {
            throw ElectrodeError("electrode " + std::to_string(l + 1) +
                                 " covers no boundary face");
        }
        set.electrodes.push_back(
            electrode_from_triangles(mesh, std::move(covered[l]), disks[l].impedance));
    }
    set.validate(mesh);
    return set;
}

std::vector<Vec3> spherical_cap_layout(std::size_t count, double radius, double min_z,
                                       const Vec3& center) {
    std::vector<Vec3> out;
    out.reserve(count);
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    const double zmin = std::clamp(min_z, -1.0, 1.0);
    for (std::size_t i = 0; i < count; ++i) {
        // equal-area bands in z between 1 and zmin
        const double z = 1.0 - (1.0 - zmin) * (static_cast<double>(i) + 0.5) /
                                   static_cast<double>(count);
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = golden * static_cast<double>(i);
        out.push_back(center + radius * Vec3(r * std::cos(phi), r * std::sin(phi), z));
    }
    return out;
}

int grounding_node(const TetMesh& mesh, const ElectrodeSet& electrodes) {
    std::vector<char> on_boundary(mesh.node_count(), 0);
    for (const auto& f : boundary_faces(mesh)) {
        for (int v : f.nodes) {
            on_boundary[v] = 1;
        }
    }
    for (const auto& el : electrodes.electrodes) {
        for (const auto& t : el.triangles) {
            for (int v : t) {
                on_boundary[v] = 0;
            }
        }
    }
    for (std::size_t v = 0; v < on_boundary.size(); ++v) {
        if (on_boundary[v]) {
            return static_cast<int>(v);
        }
    }
    throw ElectrodeError("electrodes cover every boundary node; no grounding node available");
}

Eigen::Matrix4d element_stiffness(const TetMesh& mesh, std::size_t e,
                                  const Eigen::Matrix3d& sigma) {
    const auto g = barycentric_gradients(mesh, e);
    return mesh.volume(e) * g * sigma * g.transpose();
}

SparseMatrix assemble_A(const TetMesh& mesh, const ElectrodeSet& electrodes) {
    mesh.validate(static_cast<std::size_t>(
        *std::max_element(mesh.labels.begin(), mesh.labels.end()) + 1));
    electrodes.validate(mesh);
    const int ground = grounding_node(mesh, electrodes);
    const auto n_elem = static_cast<long long>(mesh.element_count());

    std::vector<Eigen::Matrix4d> local(mesh.element_count());
#pragma omp parallel for schedule(static)
    for (long long e = 0; e < n_elem; ++e) {
        local[e] = element_stiffness(mesh, e, mesh.sigma[e].matrix());
    }

    std::vector<Triplet> triplets;
    triplets.reserve(mesh.element_count() * 16 + electrodes.size() * 64);
    auto push = [&](int i, int j, double v) {
        if (i != ground && j != ground) {
            triplets.emplace_back(i, j, v);
        }
    };
    for (std::size_t e = 0; e < mesh.element_count(); ++e) {
        const auto& t = mesh.tetra[e];
        for (int i = 0; i < 4; ++i) {
            for (int j = 0; j < 4; ++j) {
                push(t[i], t[j], local[e](i, j));
            }
        }
    }
    for (const auto& el : electrodes.electrodes) {
        const double coeff = 1.0 / (el.impedance * el.area);
        for (const auto& t : el.triangles) {
            const double at = triangle_area(mesh, t);
            for (int i = 0; i < 3; ++i) {
                for (int j = 0; j < 3; ++j) {
                    push(t[i], t[j], coeff * at * (i == j ? 1.0 / 6.0 : 1.0 / 12.0));
                }
            }
        }
    }
    triplets.emplace_back(ground, ground, 1.0);

    const auto n = static_cast<int>(mesh.node_count());
    SparseMatrix a(n, n);
    a.setFromTriplets(triplets.begin(), triplets.end());
    a.makeCompressed();
    return a;
}

Eigen::MatrixXd mean_free_projector(std::size_t electrodes) {
    const auto l = static_cast<Eigen::Index>(electrodes);
    return Eigen::MatrixXd::Identity(l, l) -
           Eigen::MatrixXd::Constant(l, l, 1.0 / static_cast<double>(electrodes));
}

ElectrodeBlocks assemble_B_C_R(const TetMesh& mesh, const ElectrodeSet& electrodes,
                               ElectrodeScaling scaling) {
    electrodes.validate(mesh);
    const auto n = static_cast<int>(mesh.node_count());
    const auto l_count = static_cast<int>(electrodes.size());
    std::vector<Triplet> triplets;
    ElectrodeBlocks blocks;
    blocks.C.resize(l_count);
    for (int l = 0; l < l_count; ++l) {
        const auto& el = electrodes[l];
        const double coupling = scaling == ElectrodeScaling::WeakForm
                                    ? 1.0 / (el.impedance * el.area)
                                    : 1.0 / el.impedance;
        for (const auto& t : el.triangles) {
            const double share = coupling * triangle_area(mesh, t) / 3.0;
            for (int v : t) {
                triplets.emplace_back(v, l, share);
            }
        }
        blocks.C[l] = coupling * el.area;
    }
    blocks.B.resize(n, l_count);
    blocks.B.setFromTriplets(triplets.begin(), triplets.end());
    blocks.B.makeCompressed();
    blocks.R = mean_free_projector(electrodes.size());
    return blocks;
}

std::array<Vec3, 4> face_moments(const TetMesh& mesh,
                                 std::span<const std::array<int, 4>> neighbors, std::size_t e) {
    std::array<Vec3, 4> out;
    const auto& t = mesh.tetra[e];
    const Vec3 ce = mesh.centroid(e);
    for (int k = 0; k < 4; ++k) {
        // on e the field is (x - p_k) / (3 V_e): integral (c_e - p_k) / 3
        Vec3 m = (ce - mesh.nodes[t[k]]) / 3.0;
        const int nb = neighbors[e][k];
        if (nb >= 0) {
            int kn = 0;
            while (neighbors[nb][kn] != static_cast<int>(e)) {
                ++kn;
            }
            m -= (mesh.centroid(nb) - mesh.nodes[mesh.tetra[nb][kn]]) / 3.0;
        }
        out[k] = m;
    }
    return out;
}

SparseMatrix assemble_G(const TetMesh& mesh, const SourceSpace& sources) {
    const auto neighbors = element_neighbors(mesh);
    const int per = sources.columns_per_source();
    const auto n_src = static_cast<long long>(sources.size());
    if (sources.elements.size() != sources.size()) {
        throw LocationError("source space lacks element indices");
    }
    if (sources.mode == SourceMode::Constrained && sources.orientations.size() != sources.size()) {
        throw LocationError("constrained source space lacks orientations");
    }

    // per source: the 4 face-function load vectors as (node, value) lists
    std::vector<std::vector<std::pair<int, double>>> columns(sources.column_count());
    std::vector<std::string> failures(sources.size());

#pragma omp parallel for schedule(static)
    for (long long s = 0; s < n_src; ++s) {
        const int e = sources.elements[s];
        if (e < 0 || static_cast<std::size_t>(e) >= mesh.element_count() ||
            !inside_element(mesh, e, sources.positions[s])) {
            failures[s] = "source " + std::to_string(s + 1) + " is not inside element " +
                          std::to_string(e);
            continue;
        }
        std::array<std::map<int, double>, 4> face_loads;
        for (int k = 0; k < 4; ++k) {
            for (int v : mesh.tetra[e]) {
                face_loads[k][v] += 0.25;
            }
            if (const int nb = neighbors[e][k]; nb >= 0) {
                for (int v : mesh.tetra[nb]) {
                    face_loads[k][v] -= 0.25;
                }
            }
        }
        Eigen::Matrix<double, 4, Eigen::Dynamic> coeff(4, per);
        if (sources.mode == SourceMode::Whitney) {
            coeff = Eigen::Matrix4d::Identity();
        } else {
            const auto moments = face_moments(mesh, neighbors, e);
            Eigen::Matrix<double, 3, 4> p;
            for (int k = 0; k < 4; ++k) {
                p.col(k) = moments[k];
            }
            // minimum-norm face combination reproducing the requested moment
            const Eigen::Matrix<double, 4, 3> pinv =
                p.transpose() * (p * p.transpose()).inverse();
            if (sources.mode == SourceMode::Cartesian) {
                coeff = pinv;
            } else {
                coeff = pinv * sources.orientations[s];
            }
        }
        for (int c = 0; c < per; ++c) {
            std::map<int, double> combined;
            for (int k = 0; k < 4; ++k) {
                for (const auto& [v, val] : face_loads[k]) {
                    combined[v] += coeff(k, c) * val;
                }
            }
            auto& col = columns[static_cast<std::size_t>(s) * per + c];
            for (const auto& [v, val] : combined) {
                if (val != 0.0) {
                    col.emplace_back(v, val);
                }
            }
        }
    }
    for (const auto& f : failures) {
        if (!f.empty()) {
            throw LocationError(f);
        }
    }

    std::vector<Triplet> triplets;
    for (std::size_t c = 0; c < columns.size(); ++c) {
        for (const auto& [v, val] : columns[c]) {
            triplets.emplace_back(v, static_cast<int>(c), val);
        }
    }
    SparseMatrix g(static_cast<int>(mesh.node_count()), static_cast<int>(columns.size()));
    g.setFromTriplets(triplets.begin(), triplets.end());
    g.makeCompressed();
    return g;
}

CemSystem assemble_cem(const TetMesh& mesh, const ElectrodeSet& electrodes,
                       const SourceSpace* sources, ElectrodeScaling scaling) {
    if (electrodes.size() == 0) {
        throw ElectrodeError("at least one electrode is required");
    }
    CemSystem sys;
    sys.A = assemble_A(mesh, electrodes);
    auto blocks = assemble_B_C_R(mesh, electrodes, scaling);
    sys.scaling = scaling;
    sys.B = std::move(blocks.B);
    sys.C = std::move(blocks.C);
    sys.R = std::move(blocks.R);
    sys.ground = grounding_node(mesh, electrodes);
    if (sources != nullptr) {
        sys.G = assemble_G(mesh, *sources);
    } else {
        sys.G.resize(static_cast<int>(mesh.node_count()), 0);
    }
    return sys;
}

} // namespace headfem
