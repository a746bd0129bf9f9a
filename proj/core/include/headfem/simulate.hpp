#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "headfem/fem.hpp"
#include "headfem/geometry.hpp"
#include "headfem/leadfield.hpp"
#include "headfem/meshgen.hpp"
#include "headfem/rng.hpp"
#include "headfem/solver.hpp"

namespace headfem {

enum class NoiseMode { Relative, SnrDb };

struct NoiseSpec {
    NoiseMode mode = NoiseMode::Relative;
    double level = 0.02;  ///< fraction of max|y| (Relative) or dB (SnrDb)
    std::uint64_t seed = 0;

    void validate() const;
    /// Standard deviation of the noise added to `clean`.
    double standard_deviation(const Eigen::VectorXd& clean) const;
};

Eigen::VectorXd add_noise(const Eigen::VectorXd& clean, const NoiseSpec& noise);

struct Dipole {
    Vec3 position = Vec3::Zero();
    Vec3 orientation = Vec3::UnitZ();
    double moment = 1e-8;  ///< A m
};

struct EegSimulation {
    Eigen::VectorXd x_true;
    Eigen::VectorXd clean;
    Eigen::VectorXd noisy;
    std::vector<int> snapped;  ///< source index per dipole
    double noise_std = 0.0;
};

/// Nearest source position; LocationError when `p` is outside the bounding
/// box of the source positions.
int snap_to_source(const DofLayout& layout, const Vec3& p);

/// Moment of one dipole expressed in the columns of its snapped source.
void encode_dipole(const DofLayout& layout, int source, const Vec3& moment, Eigen::VectorXd& x);

EegSimulation simulate_eeg(const LeadField& lf, const std::vector<Dipole>& dipoles,
                           const NoiseSpec& noise);

struct SphereLayer {
    std::string name;
    double radius = 0.0;  ///< m
    double sigma = 0.0;   ///< S/m
};

struct Anomaly {
    Vec3 center = Vec3::Zero();
    double diameter = 0.03;  ///< m
    double delta = 0.73;     ///< S/m added to the host conductivity
};

/// Concentric spheres listed innermost first, plus one spherical anomaly.
struct Phantom {
    std::vector<SphereLayer> layers;
    Vec3 origin = Vec3::Zero();
    Anomaly anomaly;
    int subdivisions = 4;
    std::size_t active_layer = 0;

    void validate() const;
    /// Layer that contains the anomaly center.
    std::size_t host() const;
    Segmentation segmentation() const;

    /// Brain, CSF, skull and scalp with outer radius 92 mm.
    static Phantom four_layer_head();
};

/// Elements whose centroid lies in the anomaly ball.
std::vector<int> anomaly_elements(const TetMesh& mesh, const Anomaly& anomaly);

struct EitSimulation {
    Eigen::VectorXd noisy;
    Eigen::VectorXd clean;
    Eigen::VectorXd background;
    std::vector<int> perturbed;
    double noise_std = 0.0;
};

/// Perturbs the elements whose centroids lie in `anomaly` on an arbitrary mesh.
EitSimulation simulate_eit(const TetMesh& mesh, const ElectrodeSet& electrodes,
                           const Anomaly& anomaly, const Eigen::MatrixXd& patterns,
                           const NoiseSpec& noise, const PcgConfig& cfg,
                           ElectrodeScaling scaling = ElectrodeScaling::WeakForm);

EitSimulation simulate_eit(const TetMesh& mesh, const ElectrodeSet& electrodes,
                           const Phantom& phantom, const Eigen::MatrixXd& patterns,
                           const NoiseSpec& noise, const PcgConfig& cfg,
                           ElectrodeScaling scaling = ElectrodeScaling::WeakForm);

} // namespace headfem
