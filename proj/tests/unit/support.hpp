#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>

#include <unistd.h>

#include <Eigen/Dense>

#include "headfem/fem.hpp"
#include "headfem/geometry.hpp"
#include "headfem/meshgen.hpp"
#include "headfem/simulate.hpp"

namespace headfem::test {

class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("headfem_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

inline std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Compartment compartment(std::string name, SurfaceMesh surface, double sigma,
                               int priority = 0, bool active = false) {
    Compartment c;
    c.name = std::move(name);
    c.surfaces.push_back(std::move(surface));
    c.sigma = Conductivity::isotropic(sigma);
    c.priority = priority;
    c.active = active;
    return c;
}

inline Segmentation unit_cube() {
    return Segmentation({compartment("cube", make_box(Vec3::Zero(), Vec3::Ones()), 1.0, 0, true)});
}

/// Nested spheres centered at the origin, innermost first.
inline Segmentation nested_spheres(const std::vector<double>& radii,
                                   const std::vector<double>& sigmas, int subdivisions = 3) {
    std::vector<Compartment> comps;
    for (std::size_t i = 0; i < radii.size(); ++i) {
        comps.push_back(compartment("layer" + std::to_string(i),
                                    make_icosphere(radii[i], subdivisions), sigmas[i], 0, i == 0));
    }
    return Segmentation(std::move(comps));
}

/// One tetrahedron with an explicit label and conductivity.
inline TetMesh single_tet(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d,
                          double sigma = 1.0) {
    TetMesh m;
    m.nodes = {a, b, c, d};
    m.tetra = {{0, 1, 2, 3}};
    if (signed_volume(a, b, c, d) < 0.0) {
        m.tetra = {{0, 2, 1, 3}};
    }
    m.labels = {0};
    m.sigma = {Conductivity::isotropic(sigma)};
    return m;
}

struct SphereModel {
    Segmentation seg;
    TetMesh mesh;
    ElectrodeSet electrodes;
};

/// Coarse multi-layer sphere with `count` disk electrodes on the upper part.
inline SphereModel sphere_model(const std::vector<double>& radii, const std::vector<double>& sigmas,
                                double h, std::size_t count, double electrode_radius,
                                double impedance = 2000.0, int subdivisions = 3) {
    SphereModel m{nested_spheres(radii, sigmas, subdivisions), {}, {}};
    m.mesh = generate_mesh(m.seg, h);
    std::vector<ElectrodeDisk> disks;
    for (const auto& c : spherical_cap_layout(count, radii.back(), -0.2)) {
        disks.push_back({c, electrode_radius, impedance});
    }
    m.electrodes = electrodes_from_disks(m.mesh, disks);
    return m;
}

inline double relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return (a - b).norm() / std::max(b.norm(), 1e-300);
}

} // namespace headfem::test
