#include "headfem/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <unordered_map>

#include "headfem/error.hpp"

namespace headfem {

namespace {

struct NumberedLine {
    std::size_t number;
    std::string text;
};

std::vector<NumberedLine> read_data_lines(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) {
        throw IoError("cannot open '" + file.string() + "'");
    }
    std::vector<NumberedLine> lines;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        lines.push_back({number, line});
    }
    return lines;
}

template <typename T, std::size_t N>
std::array<T, N> parse_fields(const NumberedLine& line, const std::filesystem::path& file) {
    std::istringstream in(line.text);
    std::array<T, N> out{};
    for (auto& v : out) {
        if (!(in >> v)) {
            throw FormatError(file.string() + ":" + std::to_string(line.number) + ": expected " +
                              std::to_string(N) + " values");
        }
    }
    std::string rest;
    if (in >> rest) {
        throw FormatError(file.string() + ":" + std::to_string(line.number) +
                          ": trailing token '" + rest + "'");
    }
    return out;
}

Vec3 to_point(const std::array<double, 3>& a, double scale) {
    return Vec3(a[0], a[1], a[2]) * scale;
}

Triangle to_triangle(const std::array<long long, 3>& a, const NumberedLine& line,
                     const std::filesystem::path& file) {
    Triangle t{};
    for (int k = 0; k < 3; ++k) {
        if (a[k] < 1 || a[k] > std::numeric_limits<int>::max()) {
            throw IndexError(file.string() + ":" + std::to_string(line.number) +
                             ": triangle index " + std::to_string(a[k]) + " is not 1-based");
        }
        t[k] = static_cast<int>(a[k] - 1);
    }
    return t;
}

void write_nodes(std::ostream& out, const std::vector<Vec3>& nodes) {
    out << std::setprecision(17);
    for (const auto& p : nodes) {
        out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
    }
}

void write_triangles(std::ostream& out, const std::vector<Triangle>& tris) {
    for (const auto& t : tris) {
        out << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
    }
}

std::uint64_t edge_key(int a, int b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
}

// Möller-Trumbore; returns true for a hit at t > 0.
bool ray_hits(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b, const Vec3& c) {
    const Vec3 e1 = b - a;
    const Vec3 e2 = c - a;
    const Vec3 pv = dir.cross(e2);
    const double det = e1.dot(pv);
    if (std::abs(det) < 1e-300) {
        return false;
    }
    const double inv = 1.0 / det;
    const Vec3 tv = origin - a;
    const double u = tv.dot(pv) * inv;
    if (u < 0.0 || u > 1.0) {
        return false;
    }
    const Vec3 qv = tv.cross(e1);
    const double v = dir.dot(qv) * inv;
    if (v < 0.0 || u + v > 1.0) {
        return false;
    }
    return e2.dot(qv) * inv > 0.0;
}

} // namespace

void SurfaceMesh::validate() const {
    const auto n = static_cast<long long>(nodes.size());
    if (triangles.size() < 4) {
        throw TopologyError("surface '" + name + "' has fewer than 4 triangles");
    }
    for (std::size_t t = 0; t < triangles.size(); ++t) {
        for (int idx : triangles[t]) {
            if (idx < 0 || idx >= n) {
                throw IndexError("surface '" + name + "': triangle " + std::to_string(t + 1) +
                                 " references node " + std::to_string(idx + 1) + " of " +
                                 std::to_string(n));
            }
        }
    }
    const double diag = 2.0 * bounds().radius();
    const double min_area = 1e-14 * diag * diag;
    std::unordered_map<std::uint64_t, int> directed;
    directed.reserve(triangles.size() * 3);
    for (std::size_t t = 0; t < triangles.size(); ++t) {
        const auto& tri = triangles[t];
        if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] ||
            triangle_area(t) <= min_area) {
            throw TopologyError("surface '" + name + "': triangle " + std::to_string(t + 1) +
                                " is degenerate");
        }
        for (int k = 0; k < 3; ++k) {
            const int a = tri[k];
            const int b = tri[(k + 1) % 3];
            if (++directed[edge_key(a, b)] > 1) {
                throw TopologyError("surface '" + name + "': edge " + std::to_string(a + 1) +
                                    "-" + std::to_string(b + 1) +
                                    " is non-manifold or inconsistently oriented");
            }
        }
    }
    for (const auto& [key, count] : directed) {
        const int a = static_cast<int>(key >> 32);
        const int b = static_cast<int>(key & 0xffffffffu);
        if (directed.find(edge_key(b, a)) == directed.end()) {
            throw TopologyError("surface '" + name + "' is not closed: edge " +
                                std::to_string(a + 1) + "-" + std::to_string(b + 1) +
                                " has a single adjacent triangle");
        }
    }
}

BoundingBox SurfaceMesh::bounds() const {
    BoundingBox box;
    for (const auto& p : nodes) {
        box.expand(p);
    }
    return box;
}

double SurfaceMesh::triangle_area(std::size_t t) const {
    const auto& tri = triangles[t];
    return 0.5 * (nodes[tri[1]] - nodes[tri[0]]).cross(nodes[tri[2]] - nodes[tri[0]]).norm();
}

Vec3 SurfaceMesh::triangle_normal(std::size_t t) const {
    const auto& tri = triangles[t];
    return (nodes[tri[1]] - nodes[tri[0]]).cross(nodes[tri[2]] - nodes[tri[0]]).normalized();
}

double SurfaceMesh::signed_volume() const {
    double v = 0.0;
    for (const auto& tri : triangles) {
        v += nodes[tri[0]].dot(nodes[tri[1]].cross(nodes[tri[2]]));
    }
    return v / 6.0;
}

int SurfaceMesh::euler_characteristic() const {
    std::unordered_map<std::uint64_t, int> edges;
    for (const auto& tri : triangles) {
        for (int k = 0; k < 3; ++k) {
            const int a = std::min(tri[k], tri[(k + 1) % 3]);
            const int b = std::max(tri[k], tri[(k + 1) % 3]);
            edges[edge_key(a, b)] = 1;
        }
    }
    return static_cast<int>(nodes.size()) - static_cast<int>(edges.size()) +
           static_cast<int>(triangles.size());
}

SurfaceMesh load_surface_mesh(const std::filesystem::path& nodes_file,
                              const std::filesystem::path& triangles_file, double unit_scale,
                              std::string name) {
    SurfaceMesh mesh;
    mesh.name = name.empty() ? nodes_file.stem().string() : std::move(name);
    for (const auto& line : read_data_lines(nodes_file)) {
        mesh.nodes.push_back(to_point(parse_fields<double, 3>(line, nodes_file), unit_scale));
    }
    for (const auto& line : read_data_lines(triangles_file)) {
        mesh.triangles.push_back(
            to_triangle(parse_fields<long long, 3>(line, triangles_file), line, triangles_file));
    }
    mesh.validate();
    return mesh;
}

SurfaceMesh load_asc_surface(const std::filesystem::path& file, double unit_scale,
                             std::string name) {
    const auto lines = read_data_lines(file);
    if (lines.empty()) {
        throw FormatError(file.string() + ": missing header line");
    }
    const auto header = parse_fields<long long, 2>(lines.front(), file);
    if (header[0] < 0 || header[1] < 0 ||
        lines.size() != 1 + static_cast<std::size_t>(header[0] + header[1])) {
        throw FormatError(file.string() + ": header announces " + std::to_string(header[0]) +
                          " nodes and " + std::to_string(header[1]) + " triangles but file has " +
                          std::to_string(lines.size() - 1) + " data lines");
    }
    SurfaceMesh mesh;
    mesh.name = name.empty() ? file.stem().string() : std::move(name);
    const auto n_nodes = static_cast<std::size_t>(header[0]);
    for (std::size_t i = 1; i <= n_nodes; ++i) {
        mesh.nodes.push_back(to_point(parse_fields<double, 3>(lines[i], file), unit_scale));
    }
    for (std::size_t i = n_nodes + 1; i < lines.size(); ++i) {
        mesh.triangles.push_back(
            to_triangle(parse_fields<long long, 3>(lines[i], file), lines[i], file));
    }
    mesh.validate();
    return mesh;
}

void save_surface_mesh(const SurfaceMesh& mesh, const std::filesystem::path& nodes_file,
                       const std::filesystem::path& triangles_file) {
    std::ofstream nodes_out(nodes_file);
    std::ofstream tris_out(triangles_file);
    if (!nodes_out || !tris_out) {
        throw IoError("cannot write surface '" + mesh.name + "'");
    }
    write_nodes(nodes_out, mesh.nodes);
    write_triangles(tris_out, mesh.triangles);
}

void save_asc_surface(const SurfaceMesh& mesh, const std::filesystem::path& file) {
    std::ofstream out(file);
    if (!out) {
        throw IoError("cannot write '" + file.string() + "'");
    }
    out << mesh.nodes.size() << ' ' << mesh.triangles.size() << '\n';
    write_nodes(out, mesh.nodes);
    write_triangles(out, mesh.triangles);
}

SurfaceMesh make_icosphere(double radius, int subdivisions, const Vec3& center, std::string name) {
    const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Vec3> pts = {{-1, phi, 0}, {1, phi, 0},  {-1, -phi, 0}, {1, -phi, 0},
                             {0, -1, phi}, {0, 1, phi},  {0, -1, -phi}, {0, 1, -phi},
                             {phi, 0, -1}, {phi, 0, 1},  {-phi, 0, -1}, {-phi, 0, 1}};
    std::vector<Triangle> tris = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                  {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                  {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                  {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
    for (auto& p : pts) {
        p.normalize();
    }
    for (int level = 0; level < subdivisions; ++level) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int a, int b) {
            const auto key = std::minmax(a, b);
            if (auto it = midpoint.find(key); it != midpoint.end()) {
                return it->second;
            }
            pts.push_back((pts[a] + pts[b]).normalized());
            const int id = static_cast<int>(pts.size()) - 1;
            midpoint.emplace(key, id);
            return id;
        };
        std::vector<Triangle> next;
        next.reserve(tris.size() * 4);
        for (const auto& t : tris) {
            const int ab = mid(t[0], t[1]);
            const int bc = mid(t[1], t[2]);
            const int ca = mid(t[2], t[0]);
            next.push_back({t[0], ab, ca});
            next.push_back({t[1], bc, ab});
            next.push_back({t[2], ca, bc});
            next.push_back({ab, bc, ca});
        }
        tris = std::move(next);
    }
    SurfaceMesh mesh;
    mesh.name = std::move(name);
    mesh.triangles = std::move(tris);
    mesh.nodes.reserve(pts.size());
    for (const auto& p : pts) {
        mesh.nodes.push_back(center + radius * p);
    }
    if (mesh.signed_volume() < 0.0) {
        for (auto& t : mesh.triangles) {
            std::swap(t[1], t[2]);
        }
    }
    return mesh;
}

SurfaceMesh make_box(const Vec3& lower, const Vec3& upper, std::string name) {
    SurfaceMesh mesh;
    mesh.name = std::move(name);
    for (int k = 0; k < 8; ++k) {
        mesh.nodes.emplace_back((k & 1) ? upper.x() : lower.x(), (k & 2) ? upper.y() : lower.y(),
                                (k & 4) ? upper.z() : lower.z());
    }
    // two triangles per face, wound outward
    mesh.triangles = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
                      {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
    return mesh;
}

double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
    // closest point on triangle by Voronoi region classification
    const Vec3 ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0) return (p - a).norm();
    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3) return (p - b).norm();
    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
        const double v = d1 / (d1 - d3);
        return (p - (a + v * ab)).norm();
    }
    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6) return (p - c).norm();
    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
        const double w = d2 / (d2 - d6);
        return (p - (a + w * ac)).norm();
    }
    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
        const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (p - (b + w * (c - b))).norm();
    }
    const double denom = 1.0 / (va + vb + vc);
    const double v = vb * denom, w = vc * denom;
    return (p - (a + ab * v + ac * w)).norm();
}

bool ray_parity_inside(const SurfaceMesh& mesh, const Vec3& p, const Vec3& direction) {
    const Vec3 dir = direction.normalized();
    int hits = 0;
    for (const auto& t : mesh.triangles) {
        if (ray_hits(p, dir, mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]])) {
            ++hits;
        }
    }
    return hits % 2 == 1;
}

Vec3 SurfaceLocator::ray_direction() {
    return Vec3(1.0, 0.2718281828459045, 0.1414213562373095).normalized();
}

SurfaceLocator::SurfaceLocator(const SurfaceMesh& mesh) : bounds_(mesh.bounds()) {
    triangles_.reserve(mesh.triangles.size());
    for (const auto& t : mesh.triangles) {
        triangles_.push_back({mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]]});
    }
    on_surface_tol_ = 1e-9 * std::max(2.0 * bounds_.radius(), 1e-300);

    const Vec3 d = ray_direction();
    axis_u_ = d.unitOrthogonal();
    axis_v_ = d.cross(axis_u_);

    double umin = std::numeric_limits<double>::infinity(), umax = -umin;
    double vmin = umin, vmax = -umin;
    for (const auto& tri : triangles_) {
        for (const auto& p : tri) {
            umin = std::min(umin, p.dot(axis_u_));
            umax = std::max(umax, p.dot(axis_u_));
            vmin = std::min(vmin, p.dot(axis_v_));
            vmax = std::max(vmax, p.dot(axis_v_));
        }
    }
    const double area = std::max((umax - umin) * (vmax - vmin), 1e-300);
    cell_ = std::max(std::sqrt(area / std::max<double>(triangles_.size(), 1.0)) * 2.0, 1e-300);
    u0_ = umin - on_surface_tol_;
    v0_ = vmin - on_surface_tol_;
    nu_ = std::max(1, static_cast<int>(std::ceil((umax - umin + 2 * on_surface_tol_) / cell_)));
    nv_ = std::max(1, static_cast<int>(std::ceil((vmax - vmin + 2 * on_surface_tol_) / cell_)));
    bins_.assign(static_cast<std::size_t>(nu_) * nv_, {});
    for (std::size_t t = 0; t < triangles_.size(); ++t) {
        double tu0 = std::numeric_limits<double>::infinity(), tu1 = -tu0, tv0 = tu0, tv1 = -tu0;
        for (const auto& p : triangles_[t]) {
            tu0 = std::min(tu0, p.dot(axis_u_));
            tu1 = std::max(tu1, p.dot(axis_u_));
            tv0 = std::min(tv0, p.dot(axis_v_));
            tv1 = std::max(tv1, p.dot(axis_v_));
        }
        auto clampi = [](double x, int n) { return std::clamp(static_cast<int>(x), 0, n - 1); };
        const int i0 = clampi((tu0 - on_surface_tol_ - u0_) / cell_, nu_);
        const int i1 = clampi((tu1 + on_surface_tol_ - u0_) / cell_, nu_);
        const int j0 = clampi((tv0 - on_surface_tol_ - v0_) / cell_, nv_);
        const int j1 = clampi((tv1 + on_surface_tol_ - v0_) / cell_, nv_);
        for (int i = i0; i <= i1; ++i) {
            for (int j = j0; j <= j1; ++j) {
                bins_[static_cast<std::size_t>(i) * nv_ + j].push_back(t);
            }
        }
    }
}

const std::vector<std::size_t>& SurfaceLocator::candidates(const Vec3& p) const {
    static const std::vector<std::size_t> none;
    const double u = (p.dot(axis_u_) - u0_) / cell_;
    const double v = (p.dot(axis_v_) - v0_) / cell_;
    if (u < 0.0 || v < 0.0 || u >= nu_ || v >= nv_) {
        return none;
    }
    return bins_[static_cast<std::size_t>(u) * nv_ + static_cast<std::size_t>(v)];
}

bool SurfaceLocator::contains(const Vec3& p) const {
    if (!bounds_.contains(p, on_surface_tol_)) {
        return false;
    }
    const Vec3 d = ray_direction();
    int hits = 0;
    for (std::size_t t : candidates(p)) {
        const auto& tri = triangles_[t];
        if (point_triangle_distance(p, tri[0], tri[1], tri[2]) <= on_surface_tol_) {
            return true;
        }
        if (ray_hits(p, d, tri[0], tri[1], tri[2])) {
            ++hits;
        }
    }
    return hits % 2 == 1;
}

Segmentation::Segmentation(std::vector<Compartment> compartments)
    : compartments_(std::move(compartments)) {
    if (compartments_.empty()) {
        throw ConfigError("segmentation has no compartments");
    }
    if (compartments_.size() > max_compartments) {
        throw ConfigError("segmentation has " + std::to_string(compartments_.size()) +
                          " compartments; at most 27 are supported");
    }
    locators_.reserve(compartments_.size());
    for (const auto& c : compartments_) {
        if (c.surfaces.empty()) {
            throw ConfigError("compartment '" + c.name + "' has no surface mesh");
        }
        std::vector<SurfaceLocator> locs;
        for (const auto& s : c.surfaces) {
            s.validate();
            locs.emplace_back(s);
        }
        locators_.push_back(std::move(locs));
    }
}

bool Segmentation::compartment_contains(std::size_t i, const Vec3& p) const {
    return std::any_of(locators_[i].begin(), locators_[i].end(),
                       [&](const SurfaceLocator& loc) { return loc.contains(p); });
}

std::optional<std::size_t> Segmentation::locate(const Vec3& p) const {
    for (std::size_t i = 0; i < compartments_.size(); ++i) {
        if (compartment_contains(i, p)) {
            return i;
        }
    }
    return std::nullopt;
}

BoundingBox Segmentation::bounds() const {
    BoundingBox box;
    for (const auto& locs : locators_) {
        for (const auto& l : locs) {
            box.expand(l.bounds());
        }
    }
    return box;
}

std::vector<std::size_t> Segmentation::active_compartments() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < compartments_.size(); ++i) {
        if (compartments_[i].active) {
            out.push_back(i);
        }
    }
    return out;
}

} // namespace headfem
