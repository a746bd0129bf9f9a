#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "headfem/config.hpp"

namespace headfem {

std::string version();

/// Command line overrides applied on top of a loaded configuration.
struct RunOptions {
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> output;
    int threads = 0;
};

void apply_overrides(ProjectConfig& cfg, const RunOptions& options);

struct HeadModel {
    Segmentation segmentation;
    TetMesh mesh;
};

/// Mesh generation plus interface smoothing, as configured.
HeadModel build_head_model(const ProjectConfig& cfg);

struct MeshRun {
    HeadModel model;
    std::filesystem::path manifest;
};
MeshRun run_mesh(const ProjectConfig& cfg);

struct LeadFieldRun {
    LeadField lf;
    std::filesystem::path matrix_file;
    std::filesystem::path sidecar;
    std::filesystem::path manifest;
};
LeadFieldRun run_leadfield(const ProjectConfig& cfg);

/// Reads `leadfield.bin` and its sidecar from a run directory.
LeadField load_leadfield(const std::filesystem::path& dir);

struct SimulateRun {
    Eigen::VectorXd noisy;
    Eigen::VectorXd clean;
    std::filesystem::path data_file;
    std::filesystem::path manifest;
};
SimulateRun run_simulate(const ProjectConfig& cfg);

struct InvertRun {
    Eigen::VectorXd x;
    Eigen::Index argmax = -1;  ///< column with the largest |x|
    std::optional<RoiMetrics> metrics;
    std::filesystem::path reconstruction;
    std::filesystem::path manifest;
};
InvertRun run_invert(const ProjectConfig& cfg);

/// ROI metrics of `reconstruction.csv` against the [truth] section.
RoiMetrics run_metrics(const ProjectConfig& cfg);

struct CaseSummary {
    std::string label;  ///< "i" .. "iv"
    HyperFamily family = HyperFamily::Gamma;
    double theta0 = 0.0;
    std::string source;  ///< "deep" or "superficial"
    double median_position_mm = 0.0;
    double q1_position_mm = 0.0;
    double q3_position_mm = 0.0;
    double median_angle_deg = 0.0;
    double q1_angle_deg = 0.0;
    double q3_angle_deg = 0.0;
};

struct HypermodelExperiment {
    std::vector<CaseSummary> cases;
    std::filesystem::path rows;
    std::filesystem::path summary;
    std::filesystem::path manifest;

    const CaseSummary& find(const std::string& label, const std::string& source) const;
};
HypermodelExperiment run_eeg_hypermodel(const ProjectConfig& cfg);

struct HemorrhageExperiment {
    Eigen::VectorXd averaged;
    Eigen::VectorXd unaveraged;
    Vec3 averaged_center = Vec3::Zero();
    Vec3 unaveraged_center = Vec3::Zero();
    double averaged_error_mm = 0.0;
    double unaveraged_error_mm = 0.0;
    std::size_t dofs = 0;
    std::size_t elements = 0;
    std::filesystem::path summary;
    std::filesystem::path manifest;
};
HemorrhageExperiment run_eit_hemorrhage(const ProjectConfig& cfg);

/// Linear-interpolation quantile (q in [0, 1]) of unsorted values.
double quantile(std::vector<double> values, double q);

} // namespace headfem
