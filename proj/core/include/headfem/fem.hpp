#pragma once

#include <array>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "headfem/meshgen.hpp"
#include "headfem/types.hpp"

namespace headfem {

struct Electrode {
    std::vector<Triangle> triangles; ///< covered mesh boundary faces
    double impedance = 1000.0;       ///< average contact impedance, Ohm
    double area = 0.0;               ///< contact area, m^2
    Vec3 center = Vec3::Zero();
};

struct ElectrodeSet {
    std::vector<Electrode> electrodes;

    std::size_t size() const { return electrodes.size(); }
    const Electrode& operator[](std::size_t i) const { return electrodes[i]; }

    /// Disjoint triangle sets lying on the mesh boundary, positive areas and
    /// impedances; throws ElectrodeError otherwise.
    void validate(const TetMesh& mesh) const;
};

struct ElectrodeDisk {
    Vec3 center;
    double radius;
    double impedance;
};

/// Each electrode covers the boundary faces whose centroids lie within
/// `radius` of the boundary face nearest to its center. Faces claimed by
/// several electrodes go to the nearest one.
ElectrodeSet electrodes_from_disks(const TetMesh& mesh, std::span<const ElectrodeDisk> disks);

/// Electrode from an explicit list of boundary faces.
Electrode electrode_from_triangles(const TetMesh& mesh, std::vector<Triangle> triangles,
                                   double impedance);

/// Quasi-uniform (Fibonacci) points on a sphere restricted to z >= min_z * radius.
std::vector<Vec3> spherical_cap_layout(std::size_t count, double radius, double min_z = -1.0,
                                       const Vec3& center = Vec3::Zero());

/// Lowest-index boundary node that no electrode touches.
int grounding_node(const TetMesh& mesh, const ElectrodeSet& electrodes);

/// Linear nodal stiffness of one element with conductivity tensor `sigma`.
Eigen::Matrix4d element_stiffness(const TetMesh& mesh, std::size_t e,
                                  const Eigen::Matrix3d& sigma);

/// Volume stiffness with electrode surface mass terms; row and column of the
/// grounding node replaced by the unit vector.
SparseMatrix assemble_A(const TetMesh& mesh, const ElectrodeSet& electrodes);

/// Scaling of the electrode coupling blocks. WeakForm uses the coupling
/// 1/(Z A) of the volume term for B as well, so b_il = (1/(Z_l A_l)) int psi_i
/// and c_ll = 1/Z_l, which eliminates to the variational problem of the
/// lumped model. BlockEntries uses b_il = (1/Z_l) int psi_i and
/// c_ll = A_l / Z_l unchanged.
enum class ElectrodeScaling { WeakForm, BlockEntries };

struct ElectrodeBlocks {
    SparseMatrix B;     ///< n x L
    Eigen::VectorXd C;  ///< diagonal of the L x L matrix
    Eigen::MatrixXd R;  ///< mean-free projector
};
ElectrodeBlocks assemble_B_C_R(const TetMesh& mesh, const ElectrodeSet& electrodes,
                               ElectrodeScaling scaling = ElectrodeScaling::WeakForm);

Eigen::MatrixXd mean_free_projector(std::size_t electrodes);

/// Dipole moment (integral of the field) of each Whitney face function of
/// element `e`; face k is opposite local vertex k and points out of `e`.
std::array<Vec3, 4> face_moments(const TetMesh& mesh,
                                 std::span<const std::array<int, 4>> neighbors, std::size_t e);

/// Divergence load of the primary current basis, n x (sources * columns).
/// Throws LocationError when a source is not inside its element.
SparseMatrix assemble_G(const TetMesh& mesh, const SourceSpace& sources);

/// Blocks of the complete electrode model system.
struct CemSystem {
    SparseMatrix A;
    SparseMatrix B;
    Eigen::VectorXd C;
    Eigen::MatrixXd R;
    SparseMatrix G;
    int ground = -1;
    ElectrodeScaling scaling = ElectrodeScaling::WeakForm;

    std::size_t node_count() const { return static_cast<std::size_t>(A.rows()); }
    std::size_t electrode_count() const { return static_cast<std::size_t>(C.size()); }
};

CemSystem assemble_cem(const TetMesh& mesh, const ElectrodeSet& electrodes,
                       const SourceSpace* sources = nullptr,
                       ElectrodeScaling scaling = ElectrodeScaling::WeakForm);

} // namespace headfem
