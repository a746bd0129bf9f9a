#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "headfem/leadfield.hpp"
#include "headfem/rng.hpp"
#include "headfem/types.hpp"

namespace headfem {

enum class HyperFamily { Gamma, InverseGamma };

struct HyperModel {
    HyperFamily family = HyperFamily::InverseGamma;
    double beta = 1.5;
    double theta0 = 1e-5;

    double eta() const { return beta - 1.5; }
    double kappa() const { return beta + 1.5; }
    void validate() const;

    /// Maximizer of the conditional posterior of theta_i given x_i.
    double update(double x) const;
    Eigen::VectorXd update(const Eigen::VectorXd& x) const;
};

struct IasState {
    Eigen::VectorXd x;
    Eigen::VectorXd theta;
    double nu = 1.0;
    int k = 0;

    static IasState initial(Eigen::Index n, const HyperModel& hyper, double nu);
    void validate() const;
};

/// One alternating step: x from the dual (measurement-space) form, then theta.
IasState ias_step(const Eigen::MatrixXd& lf, const Eigen::VectorXd& y, const IasState& state,
                  const HyperModel& hyper);

/// x-update only, for the prior variances `theta`.
Eigen::VectorXd ias_estimate(const Eigen::MatrixXd& lf, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& theta, double nu);

struct Reconstruction {
    Eigen::VectorXd x;
    Eigen::VectorXd theta;
    int iterations = 0;
};

Reconstruction ias_map(const Eigen::MatrixXd& lf, const Eigen::VectorXd& y,
                       const HyperModel& hyper, double nu, int n_iter,
                       std::optional<std::span<const int>> roi = std::nullopt);

/// Same as ias_map but starting from a given theta.
Reconstruction ias_run(const Eigen::MatrixXd& lf, const Eigen::VectorXd& y,
                       const HyperModel& hyper, double nu, int n_iter,
                       Eigen::VectorXd theta);

/// Columns whose source position lies within `radius` of `center`.
std::vector<int> roi_columns(const DofLayout& layout, const Vec3& center, double radius);

struct Decomposition {
    std::vector<Vec3> centers;
    std::vector<int> assignment;  ///< position index -> subset

    std::size_t subset_count() const { return centers.size(); }
};

/// Nearest-center assignment (ties go to the lower center index).
std::vector<int> nearest_assignment(std::span<const Vec3> points, std::span<const Vec3> centers);

/// `subsets` centers drawn uniformly in the bounding box of `points`; empty
/// subsets have their centers redrawn a bounded number of times. When
/// `subsets` equals the point count the points themselves are the centers.
Decomposition random_decomposition(std::span<const Vec3> points, std::size_t subsets, Rng& rng,
                                   int max_retries = 200);

/// Coarse lead field: columns of the same subset and component are summed.
Eigen::MatrixXd aggregate_columns(const Eigen::MatrixXd& lf, const Decomposition& dec,
                                  std::span<const int> column_source,
                                  std::span<const int> column_component, std::size_t components);

/// Entrywise mean of equally sized estimates.
Eigen::VectorXd mean_estimate(std::span<const Eigen::VectorXd> estimates);

struct MultiresResult {
    Eigen::VectorXd averaged;
    Eigen::VectorXd unaveraged;  ///< expanded estimate of the last decomposition
    std::vector<Decomposition> decompositions;
};

/// Randomized multiresolution IAS. Decompositions run in a serial chain; each
/// one after the first starts from the hyperparameters of the previous
/// expanded estimate restricted to its subsets.
MultiresResult multires_ias(const Eigen::MatrixXd& lf, const Eigen::VectorXd& y,
                            const DofLayout& layout, const HyperModel& hyper, double nu,
                            int n_iter, std::size_t subsets, std::size_t decompositions,
                            std::uint64_t seed);

struct RoiMetrics {
    double position_error_mm = 0.0;
    double angle_error_deg = 0.0;  ///< NaN for scalar DOFs
    Vec3 center_of_mass = Vec3::Zero();
    Vec3 orientation = Vec3::Zero();
    std::size_t roi_size = 0;
};

/// Per-position dipole moment vectors sum_c x_c * direction_c.
std::vector<Vec3> source_moments(const Eigen::VectorXd& x, const DofLayout& layout);
/// Per-position amplitudes: |moment| for vector sources, |x| for scalar DOFs.
Eigen::VectorXd source_amplitudes(const Eigen::VectorXd& x, const DofLayout& layout);

/// Positions in meters; errors reported in millimeters and degrees.
RoiMetrics roi_metrics(const Eigen::VectorXd& x, const DofLayout& layout, const Vec3& roi_center,
                       double roi_radius, const Vec3& true_position,
                       const Vec3& true_orientation);

/// Lead field and data divided by their maximum absolute entries.
struct NormalizedProblem {
    Eigen::MatrixXd lf;
    Eigen::VectorXd y;
    double lf_scale = 1.0;
    double data_scale = 1.0;

    /// Maps a solution of the normalized problem back to physical units.
    Eigen::VectorXd restore(const Eigen::VectorXd& x) const { return x * (data_scale / lf_scale); }
};

NormalizedProblem normalize_problem(const Eigen::MatrixXd& lf, const Eigen::VectorXd& y);

} // namespace headfem
