#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "headfem/fem.hpp"
#include "headfem/inverse.hpp"
#include "headfem/leadfield.hpp"
#include "headfem/meshgen.hpp"
#include "headfem/simulate.hpp"

namespace headfem {

/// Parsed INI text. Sections and keys keep their file order; every entry
/// remembers its line for error messages.
struct IniEntry {
    std::string key;
    std::string value;
    int line = 0;
};

struct IniSection {
    std::string name;
    int line = 0;
    std::vector<IniEntry> entries;

    const IniEntry* find(const std::string& key) const;
};

struct IniDocument {
    std::string source;  ///< file name used in messages
    std::vector<IniSection> sections;

    /// `;` and `#` start comment lines. Duplicate sections or keys and lines
    /// outside `key = value` / `[section]` are ConfigErrors carrying the line.
    static IniDocument parse(const std::string& text, const std::string& source);
    static IniDocument load(const std::filesystem::path& file);

    const IniSection* find(const std::string& name) const;
    /// Normalized `key = value` text in file order.
    std::string canonical() const;
};

struct CompartmentEntry {
    std::string name;
    std::filesystem::path nodes;
    std::filesystem::path triangles;
    std::filesystem::path asc;
    std::optional<double> sphere_radius;
    Vec3 sphere_center = Vec3::Zero();
    int sphere_subdivisions = 4;
    std::optional<Vec3> box_lower;
    std::optional<Vec3> box_upper;
    Conductivity sigma = Conductivity::isotropic(0.33);
    int priority = 0;
    bool active = false;
    double unit_scale = 1.0;
};

struct MeshSettings {
    double h = 0.01;
    int smoothing_iterations = 2;
    double smoothing_step = 0.3;
};

struct ElectrodeLayoutSettings {
    std::size_t count = 0;
    double radius = 0.01;
    double impedance = 2000.0;
    double min_z = -0.2;
    double layout_radius = 0.0;  ///< 0: radius of the outermost compartment bounds
    Vec3 layout_center = Vec3::Zero();
};

struct ElectrodeEntry {
    std::string name;
    std::optional<Vec3> center;
    double radius = 0.01;
    std::vector<Triangle> triangles;  ///< 0-based node indices
    double impedance = 2000.0;
};

struct SourceSettings {
    std::size_t count = 0;
    SourceMode mode = SourceMode::Cartesian;
    std::optional<std::uint64_t> seed;
};

struct EitSettings {
    std::size_t dofs = 0;
    double amplitude = 1e-3;  ///< injected current, A
    std::vector<std::string> compartments;  ///< empty: the active compartments
    std::optional<std::uint64_t> seed;
};

struct ForwardSettings {
    Modality modality = Modality::Eeg;
    PcgConfig pcg;
    ElectrodeScaling scaling = ElectrodeScaling::WeakForm;
    bool export_system = false;
};

struct NoiseSettings {
    NoiseMode mode = NoiseMode::Relative;
    double level = 0.02;
    std::optional<std::uint64_t> seed;
};

struct DipoleEntry {
    std::string name;
    Dipole dipole;
};

enum class NuRule { MaxAbs, Rms };
enum class InverseMode { Plain, Roi, Multires };

struct InverseSettings {
    HyperModel hyper;
    NuRule nu_rule = NuRule::MaxAbs;
    double nu = 0.03;  ///< fraction of max|y| or of rms(y)
    int iterations = 2;
    InverseMode mode = InverseMode::Plain;
    std::size_t subsets = 0;
    std::size_t decompositions = 1;
    std::optional<Vec3> roi_center;
    double roi_radius = 0.03;
    bool normalize = true;
    std::optional<std::uint64_t> seed;
    std::filesystem::path leadfield;  ///< sidecar JSON; empty: the run directory's lead field
    std::filesystem::path data;       ///< CSV; empty: data.csv in the run directory
};

struct TruthSettings {
    Vec3 position = Vec3::Zero();
    Vec3 orientation = Vec3::Zero();
    double roi_radius = 0.03;
};

struct EegExperimentSettings {
    std::size_t realizations = 20;
    Vec3 deep_position{0.0, 0.0, 0.025};
    Vec3 deep_orientation{1.0, 0.0, 0.0};
    Vec3 superficial_position{0.075, 0.0, 0.0};
    Vec3 superficial_orientation{1.0, 0.0, 0.0};
    double moment = 1e-8;
    double noise_level = 0.02;
    double roi_radius = 0.03;
    double nu = 0.02;
    int iterations = 5;
    double beta = 1.5;
};

struct EitExperimentSettings {
    std::size_t subsets = 100;
    std::size_t decompositions = 20;
    int iterations = 2;
    double snr_db = 60.0;
    double nu = 0.12;
    double theta0 = 1e-3;
    HyperFamily family = HyperFamily::InverseGamma;
    double beta = 1.5;
};

struct ProjectConfig {
    std::string name = "headfem";
    std::uint64_t seed = 1;
    std::filesystem::path output = "out";
    std::filesystem::path base_dir;
    std::string canonical_text;

    std::vector<CompartmentEntry> compartments;
    MeshSettings mesh;
    std::optional<ElectrodeLayoutSettings> electrode_layout;
    std::vector<ElectrodeEntry> electrodes;
    SourceSettings sources;
    EitSettings eit;
    ForwardSettings forward;
    NoiseSettings noise;
    std::vector<DipoleEntry> dipoles;
    std::optional<Anomaly> anomaly;
    InverseSettings inverse;
    std::optional<TruthSettings> truth;
    EegExperimentSettings eeg_experiment;
    EitExperimentSettings eit_experiment;

    /// Seed for a named random stream: the explicit override or one derived
    /// from the master seed.
    std::uint64_t stream_seed(std::uint64_t stream, std::optional<std::uint64_t> explicit_seed) const;

    /// SHA-256 over the canonical configuration text and master seed.
    std::string hash() const;
    /// Hash of everything the forward model depends on: geometry files,
    /// mesh, electrodes, sources / DOFs, solver settings and the seed.
    std::string model_hash() const;

    /// Reads an INI file, or a run manifest (`.json`) holding one.
    static ProjectConfig load(const std::filesystem::path& file);
    static ProjectConfig parse(const IniDocument& doc, const std::filesystem::path& base_dir);
};

/// Random stream identifiers used with ProjectConfig::stream_seed.
namespace streams {
inline constexpr std::uint64_t sources = 1;
inline constexpr std::uint64_t eit_dofs = 2;
inline constexpr std::uint64_t noise = 3;
inline constexpr std::uint64_t decompositions = 4;
inline constexpr std::uint64_t experiment = 5;
} // namespace streams

/// Segmentation built from the compartment entries (surfaces loaded from disk).
Segmentation build_segmentation(const ProjectConfig& cfg);

/// Electrodes from the config: automatic cap layout and/or named entries.
ElectrodeSet build_electrodes(const ProjectConfig& cfg, const TetMesh& mesh,
                              const Segmentation& seg);

} // namespace headfem
