#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "headfem/fem.hpp"
#include "headfem/meshgen.hpp"
#include "headfem/solver.hpp"

namespace headfem {

enum class Modality { Eeg, Eit };

/// Geometry of the lead-field columns. Columns belonging to one position are
/// combined as sum_c x_c * direction_c; scalar DOFs have a zero direction.
struct DofLayout {
    std::vector<Vec3> positions;
    std::vector<int> column_source;
    std::vector<Vec3> column_direction;

    std::size_t columns() const { return column_source.size(); }
    std::vector<Vec3> column_positions() const;
    bool scalar() const;

    static DofLayout scalar_dofs(std::vector<Vec3> positions);
};

DofLayout source_layout(const TetMesh& mesh, const SourceSpace& sources);

struct LeadField {
    Eigen::MatrixXd matrix;  ///< measurements x DOFs
    DofLayout layout;
    Modality modality = Modality::Eeg;
    Eigen::MatrixXd patterns;        ///< EIT: electrode currents, one pattern per column
    Eigen::VectorXd background_data; ///< EIT: stacked voltages at the expansion point
};

/// Shared precomputation: T = A^{-1} B and the electrode Schur complement
/// M = C - B^T T with its factorization.
class CemForwardModel {
public:
    CemForwardModel(const CemSystem& sys, const PcgConfig& cfg);

    const Eigen::MatrixXd& transfer() const { return transfer_; }
    const Eigen::MatrixXd& schur() const { return schur_; }
    Eigen::MatrixXd solve_schur(const Eigen::MatrixXd& rhs) const;

private:
    Eigen::MatrixXd transfer_;
    Eigen::MatrixXd schur_;
    Eigen::FullPivLU<Eigen::MatrixXd> lu_;
};

/// L = R (B^T A^{-1} B - C)^{-1} B^T A^{-1} G, evaluated as -R M^{-1} (T^T G).
LeadField eeg_leadfield(const CemSystem& sys, const DofLayout& layout, const PcgConfig& cfg);
LeadField eeg_leadfield(const CemSystem& sys, const CemForwardModel& forward,
                        const DofLayout& layout);

/// Electrode voltages y = R M^{-1} I for each zero-sum current pattern (column).
Eigen::MatrixXd eit_forward(const CemSystem& sys, const Eigen::MatrixXd& currents,
                            const PcgConfig& cfg);
Eigen::MatrixXd eit_forward(const CemSystem& sys, const CemForwardModel& forward,
                            const Eigen::MatrixXd& currents);

void check_current_patterns(const Eigen::MatrixXd& currents);

/// Pattern k drives +amplitude into electrode k and draws it from k + 1.
Eigen::MatrixXd adjacent_patterns(std::size_t electrodes, double amplitude = 1.0);

/// Column-major stacking: pattern p occupies rows [p L, (p + 1) L).
Eigen::VectorXd stack_patterns(const Eigen::MatrixXd& voltages);

struct EitDofMap {
    std::vector<std::vector<int>> elements;
    std::vector<Vec3> centers;

    std::size_t size() const { return elements.size(); }
    void validate(const TetMesh& mesh) const;
};

/// Partitions the elements of `compartments` around `count` randomly chosen
/// seed elements (nearest seed centroid). Every DOF keeps its seed element.
EitDofMap build_eit_dofs(const TetMesh& mesh, std::span<const std::size_t> compartments,
                         std::size_t count, std::uint64_t seed);

/// Mesh copy with `delta` added (isotropically) to the conductivity of `elements`.
TetMesh perturb_conductivity(const TetMesh& mesh, std::span<const int> elements, double delta);

/// Jacobian of the stacked EIT voltages with respect to one additive
/// conductivity parameter per DOF, at the mesh's background conductivity.
LeadField eit_leadfield(const TetMesh& mesh, const CemSystem& sys, const EitDofMap& dofs,
                        const Eigen::MatrixXd& patterns, const PcgConfig& cfg);

} // namespace headfem
