#include "headfem/simulate.hpp"

#include <cmath>
#include <limits>

#include "headfem/error.hpp"

namespace headfem {

void NoiseSpec::validate() const {
    if (!(level > 0.0) || !std::isfinite(level)) {
        throw ParameterError("noise level must be positive");
    }
}

double NoiseSpec::standard_deviation(const Eigen::VectorXd& clean) const {
    validate();
    if (clean.size() == 0) {
        return 0.0;
    }
    if (mode == NoiseMode::Relative) {
        return level * clean.cwiseAbs().maxCoeff();
    }
    const double rms = clean.norm() / std::sqrt(static_cast<double>(clean.size()));
    return rms * std::pow(10.0, -level / 20.0);
}

Eigen::VectorXd add_noise(const Eigen::VectorXd& clean, const NoiseSpec& noise) {
    const double sd = noise.standard_deviation(clean);
    Rng rng(noise.seed);
    Eigen::VectorXd out = clean;
    for (Eigen::Index i = 0; i < out.size(); ++i) {
        out[i] += sd * rng.normal();
    }
    return out;
}

int snap_to_source(const DofLayout& layout, const Vec3& p) {
    if (layout.positions.empty()) {
        throw LocationError("source space is empty");
    }
    BoundingBox box;
    for (const auto& q : layout.positions) {
        box.expand(q);
    }
    if (!box.contains(p, 1e-9 * std::max(box.radius(), 1.0))) {
        throw LocationError("dipole at (" + std::to_string(p.x()) + ", " + std::to_string(p.y()) +
                            ", " + std::to_string(p.z()) +
                            ") lies outside the source space bounding box");
    }
    int best = 0;
    double dist = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < layout.positions.size(); ++s) {
        const double d = (layout.positions[s] - p).squaredNorm();
        if (d < dist) {
            dist = d;
            best = static_cast<int>(s);
        }
    }
    return best;
}

void encode_dipole(const DofLayout& layout, int source, const Vec3& moment, Eigen::VectorXd& x) {
    std::vector<int> cols;
    for (std::size_t j = 0; j < layout.columns(); ++j) {
        if (layout.column_source[j] == source) {
            cols.push_back(static_cast<int>(j));
        }
    }
    Eigen::Matrix3Xd dirs(3, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) {
        dirs.col(static_cast<Eigen::Index>(c)) = layout.column_direction[cols[c]];
    }
    // least-squares coefficients; in constrained mode this projects onto the normal
    const Eigen::VectorXd coef = dirs.completeOrthogonalDecomposition().solve(moment);
    for (std::size_t c = 0; c < cols.size(); ++c) {
        x[cols[c]] += coef[static_cast<Eigen::Index>(c)];
    }
}

EegSimulation simulate_eeg(const LeadField& lf, const std::vector<Dipole>& dipoles,
                           const NoiseSpec& noise) {
    if (lf.modality != Modality::Eeg) {
        throw ConfigError("EEG simulation requires an EEG lead field");
    }
    if (lf.layout.scalar()) {
        throw ConfigError("EEG simulation requires oriented source columns");
    }
    EegSimulation sim;
    sim.x_true = Eigen::VectorXd::Zero(lf.matrix.cols());
    for (const auto& d : dipoles) {
        const int s = snap_to_source(lf.layout, d.position);
        sim.snapped.push_back(s);
        const double n = d.orientation.norm();
        if (!(n > 0.0)) {
            throw ParameterError("dipole orientation must be nonzero");
        }
        encode_dipole(lf.layout, s, d.moment * d.orientation / n, sim.x_true);
    }
    sim.clean = lf.matrix * sim.x_true;
    sim.noise_std = noise.standard_deviation(sim.clean);
    sim.noisy = add_noise(sim.clean, noise);
    return sim;
}

void Phantom::validate() const {
    if (layers.empty()) {
        throw ParameterError("phantom needs at least one layer");
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (!(layers[i].radius > 0.0) || !(layers[i].sigma > 0.0)) {
            throw ParameterError("layer '" + layers[i].name +
                                 "' needs positive radius and conductivity");
        }
        if (i > 0 && !(layers[i].radius > layers[i - 1].radius)) {
            throw ParameterError("layer radii must increase outward");
        }
    }
    if (active_layer >= layers.size()) {
        throw ParameterError("active layer index out of range");
    }
    if (!(anomaly.diameter > 0.0)) {
        throw ParameterError("anomaly diameter must be positive");
    }
    const std::size_t h = host();
    const double r = 0.5 * anomaly.diameter;
    const double d = (anomaly.center - origin).norm();
    const double inner = h == 0 ? 0.0 : layers[h - 1].radius;
    if (!(d + r < layers[h].radius) || (h > 0 && !(d - r > inner))) {
        throw ParameterError("anomaly is not strictly inside layer '" + layers[h].name + "'");
    }
    if (!(layers[h].sigma + anomaly.delta > 0.0)) {
        throw ParameterError("anomaly makes the host conductivity nonpositive");
    }
}

std::size_t Phantom::host() const {
    const double d = (anomaly.center - origin).norm();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (d < layers[i].radius) {
            return i;
        }
    }
    throw ParameterError("anomaly center lies outside the phantom");
}

Segmentation Phantom::segmentation() const {
    std::vector<Compartment> comps;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        Compartment c;
        c.name = layers[i].name;
        c.surfaces.push_back(make_icosphere(layers[i].radius, subdivisions, origin, c.name));
        c.sigma = Conductivity::isotropic(layers[i].sigma);
        c.active = i == active_layer;
        comps.push_back(std::move(c));
    }
    return Segmentation(std::move(comps));
}

Phantom Phantom::four_layer_head() {
    Phantom p;
    p.layers = {{"brain", 0.078, 0.33},
                {"csf", 0.082, 1.79},
                {"skull", 0.087, 0.0064},
                {"scalp", 0.092, 0.43}};
    p.anomaly.center = Vec3(0.03, 0.0, 0.02);
    return p;
}

std::vector<int> anomaly_elements(const TetMesh& mesh, const Anomaly& anomaly) {
    std::vector<int> out;
    const double r = 0.5 * anomaly.diameter;
    for (std::size_t e = 0; e < mesh.element_count(); ++e) {
        if ((mesh.centroid(e) - anomaly.center).norm() <= r) {
            out.push_back(static_cast<int>(e));
        }
    }
    return out;
}

EitSimulation simulate_eit(const TetMesh& mesh, const ElectrodeSet& electrodes,
                           const Anomaly& anomaly, const Eigen::MatrixXd& patterns,
                           const NoiseSpec& noise, const PcgConfig& cfg,
                           ElectrodeScaling scaling) {
    if (!(anomaly.diameter > 0.0)) {
        throw ParameterError("anomaly diameter must be positive");
    }
    check_current_patterns(patterns);
    EitSimulation sim;
    sim.perturbed = anomaly_elements(mesh, anomaly);
    if (sim.perturbed.empty()) {
        throw EmptyAnomalyError("anomaly ball contains no element centroid");
    }
    const CemSystem bg = assemble_cem(mesh, electrodes, nullptr, scaling);
    sim.background = stack_patterns(eit_forward(bg, patterns, cfg));
    const TetMesh perturbed = perturb_conductivity(mesh, sim.perturbed, anomaly.delta);
    const CemSystem sys = assemble_cem(perturbed, electrodes, nullptr, scaling);
    sim.clean = stack_patterns(eit_forward(sys, patterns, cfg));
    sim.noise_std = noise.standard_deviation(sim.clean);
    sim.noisy = add_noise(sim.clean, noise);
    return sim;
}

EitSimulation simulate_eit(const TetMesh& mesh, const ElectrodeSet& electrodes,
                           const Phantom& phantom, const Eigen::MatrixXd& patterns,
                           const NoiseSpec& noise, const PcgConfig& cfg,
                           ElectrodeScaling scaling) {
    phantom.validate();
    return simulate_eit(mesh, electrodes, phantom.anomaly, patterns, noise, cfg, scaling);
}

} // namespace headfem
