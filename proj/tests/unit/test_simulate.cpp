#include <gtest/gtest.h>

#include <cmath>

#include "headfem/error.hpp"
#include "headfem/simulate.hpp"
#include "support.hpp"

using namespace headfem;

namespace {

const PcgConfig kTight{1e-12, 0, Preconditioner::Ldp};

struct EegModel {
    test::SphereModel model;
    SourceSpace sources;
    LeadField lf;
};

EegModel eeg_model(SourceMode mode = SourceMode::Cartesian) {
    EegModel m{test::sphere_model({0.06, 0.092}, {0.33, 0.43}, 0.025, 8, 0.02), {}, {}};
    m.sources = place_sources(m.model.mesh, m.model.seg, 10, mode, 4);
    const auto sys = assemble_cem(m.model.mesh, m.model.electrodes, &m.sources);
    m.lf = eeg_leadfield(sys, source_layout(m.model.mesh, m.sources), kTight);
    return m;
}

Phantom small_phantom() {
    Phantom p = Phantom::four_layer_head();
    p.subdivisions = 3;
    return p;
}

struct EitModel {
    Phantom phantom;
    TetMesh mesh;
    ElectrodeSet electrodes;
    Eigen::MatrixXd patterns;
};

EitModel eit_model() {
    EitModel m{small_phantom(), {}, {}, adjacent_patterns(16)};
    const auto seg = m.phantom.segmentation();
    m.mesh = generate_mesh(seg, 0.016);
    std::vector<ElectrodeDisk> disks;
    for (const auto& c : spherical_cap_layout(16, 0.092, -0.2)) {
        disks.push_back({c, 0.012, 2000.0});
    }
    m.electrodes = electrodes_from_disks(m.mesh, disks);
    return m;
}

} // namespace

TEST(Noise, RelativeStandardDeviation) {
    const Eigen::VectorXd clean = Eigen::VectorXd::LinSpaced(10000, -3.0, 5.0);
    const NoiseSpec spec{NoiseMode::Relative, 0.02, 42};
    EXPECT_DOUBLE_EQ(spec.standard_deviation(clean), 0.1);
    const Eigen::VectorXd n = add_noise(clean, spec) - clean;
    const double mean = n.mean();
    const double sd = std::sqrt((n.array() - mean).square().sum() / (n.size() - 1));
    EXPECT_NEAR(sd, 0.1, 0.03 * 0.1);
    EXPECT_NEAR(mean, 0.0, 4.0 * 0.1 / 100.0);
}

TEST(Noise, SnrDefinition) {
    const Eigen::VectorXd clean = (Eigen::VectorXd(4) << 1.0, -1.0, 1.0, -1.0).finished();
    const NoiseSpec spec{NoiseMode::SnrDb, 60.0, 1};
    EXPECT_NEAR(spec.standard_deviation(clean), 1e-3, 1e-15);
    const NoiseSpec twenty{NoiseMode::SnrDb, 20.0, 1};
    EXPECT_NEAR(twenty.standard_deviation(2.0 * clean), 0.2, 1e-15);
}

TEST(Noise, SeedControlsDraws) {
    const Eigen::VectorXd clean = Eigen::VectorXd::Ones(50);
    const NoiseSpec a{NoiseMode::Relative, 0.1, 7};
    const NoiseSpec b{NoiseMode::Relative, 0.1, 8};
    EXPECT_EQ(add_noise(clean, a), add_noise(clean, a));
    EXPECT_NE(add_noise(clean, a), add_noise(clean, b));
    EXPECT_THROW(NoiseSpec({NoiseMode::Relative, 0.0, 1}).validate(), ParameterError);
    EXPECT_THROW(NoiseSpec({NoiseMode::SnrDb, -3.0, 1}).validate(), ParameterError);
}

TEST(SimulateEeg, ZeroMomentGivesNoiseOnly) {
    const auto m = eeg_model();
    const Dipole d{m.lf.layout.positions[3], Vec3::UnitX(), 0.0};
    const auto sim = simulate_eeg(m.lf, {d}, NoiseSpec{NoiseMode::SnrDb, 60.0, 3});
    EXPECT_EQ(sim.clean, Eigen::VectorXd::Zero(sim.clean.size()));
    EXPECT_EQ(sim.noisy, sim.clean);
    EXPECT_EQ(sim.noise_std, 0.0);
}

TEST(SimulateEeg, LinearInDipoles) {
    const auto m = eeg_model();
    const Dipole a{m.lf.layout.positions[1], Vec3(1, 2, 3), 1e-8};
    const Dipole b{m.lf.layout.positions[6], Vec3(0, -1, 0.5), 2e-8};
    const NoiseSpec noise{NoiseMode::Relative, 0.02, 1};
    const auto both = simulate_eeg(m.lf, {a, b}, noise);
    const auto sa = simulate_eeg(m.lf, {a}, noise);
    const auto sb = simulate_eeg(m.lf, {b}, noise);
    EXPECT_LE(test::relative_error(both.clean, sa.clean + sb.clean), 1e-13);
    EXPECT_EQ(both.snapped, (std::vector<int>{1, 6}));
    const Eigen::VectorXd moment = both.x_true.segment(3, 3);
    EXPECT_LE((moment - 1e-8 * Vec3(1, 2, 3).normalized()).norm(), 1e-22);
}

TEST(SimulateEeg, CleanDataMeanFree) {
    const auto m = eeg_model();
    const Dipole a{m.lf.layout.positions[2], Vec3(0.3, -1, 0.2), 1e-8};
    const auto sim = simulate_eeg(m.lf, {a}, NoiseSpec{});
    EXPECT_LE(std::abs(sim.clean.sum()), 1e-10 * sim.clean.cwiseAbs().sum());
    EXPECT_NEAR(sim.noise_std, 0.02 * sim.clean.cwiseAbs().maxCoeff(), 1e-25);
}

TEST(SimulateEeg, SnapsToNearestAndRejectsOutside) {
    const auto m = eeg_model();
    Vec3 mid = Vec3::Zero();
    for (const auto& q : m.lf.layout.positions) {
        mid += q / static_cast<double>(m.lf.layout.positions.size());
    }
    const Vec3 p = m.lf.layout.positions[5] + 1e-4 * (mid - m.lf.layout.positions[5]).normalized();
    EXPECT_EQ(snap_to_source(m.lf.layout, p), 5);
    const Dipole far{Vec3(1.0, 0.0, 0.0), Vec3::UnitZ(), 1e-8};
    EXPECT_THROW(simulate_eeg(m.lf, {far}, NoiseSpec{}), LocationError);
}

TEST(SimulateEeg, ConstrainedModeProjectsOnNormal) {
    const auto m = eeg_model(SourceMode::Constrained);
    const Vec3 normal = m.sources.orientations[4];
    const Vec3 dir = (normal + normal.unitOrthogonal()).normalized();
    const auto sim = simulate_eeg(m.lf, {{m.lf.layout.positions[4], dir, 1e-8}}, NoiseSpec{});
    EXPECT_NEAR(sim.x_true[4], 1e-8 * dir.dot(normal), 1e-22);
    EXPECT_EQ(sim.x_true.cwiseAbs().sum(), std::abs(sim.x_true[4]));
}

TEST(SimulateEeg, SameSeedSameData) {
    const auto m = eeg_model();
    const Dipole a{m.lf.layout.positions[2], Vec3::UnitY(), 1e-8};
    const auto s1 = simulate_eeg(m.lf, {a}, NoiseSpec{NoiseMode::Relative, 0.02, 11});
    const auto s2 = simulate_eeg(m.lf, {a}, NoiseSpec{NoiseMode::Relative, 0.02, 11});
    EXPECT_EQ(s1.noisy, s2.noisy);
}

TEST(Phantom, FourLayerHead) {
    const auto p = Phantom::four_layer_head();
    EXPECT_NO_THROW(p.validate());
    EXPECT_EQ(p.host(), 0u);
    ASSERT_EQ(p.layers.size(), 4u);
    EXPECT_DOUBLE_EQ(p.layers.back().radius, 0.092);
    EXPECT_DOUBLE_EQ(p.anomaly.diameter, 0.03);
    EXPECT_DOUBLE_EQ(p.anomaly.delta, 0.73);
    EXPECT_EQ(p.segmentation().size(), 4u);
}

TEST(Phantom, AnomalyMustBeInsideHost) {
    auto p = Phantom::four_layer_head();
    p.anomaly.center = Vec3(0.07, 0.0, 0.0);
    EXPECT_THROW(p.validate(), ParameterError);
    p.anomaly.center = Vec3(0.0845, 0.0, 0.0);
    p.anomaly.diameter = 0.001;
    EXPECT_NO_THROW(p.validate());
    EXPECT_EQ(p.host(), 2u);
    p.anomaly.delta = -0.01;
    EXPECT_THROW(p.validate(), ParameterError);
}

TEST(SimulateEit, ZeroDeltaReproducesBackground) {
    auto m = eit_model();
    m.phantom.anomaly.delta = 0.0;
    const auto sim = simulate_eit(m.mesh, m.electrodes, m.phantom, m.patterns,
                                  NoiseSpec{NoiseMode::SnrDb, 60.0, 2}, kTight);
    EXPECT_LE(test::relative_error(sim.clean, sim.background), 1e-12);
    EXPECT_FALSE(sim.perturbed.empty());
}

TEST(SimulateEit, SnrNoiseLevel) {
    const auto m = eit_model();
    const auto sim = simulate_eit(m.mesh, m.electrodes, m.phantom, m.patterns,
                                  NoiseSpec{NoiseMode::SnrDb, 60.0, 2}, kTight);
    const double rms = sim.clean.norm() / std::sqrt(static_cast<double>(sim.clean.size()));
    EXPECT_NEAR(sim.noise_std, 1e-3 * rms, 1e-15 * rms);
    EXPECT_GT((sim.clean - sim.background).norm(), 0.0);
    EXPECT_EQ(sim.clean.size(), 16 * 15);
}

TEST(SimulateEit, SingleElementAnomalyMatchesJacobian) {
    auto m = eit_model();
    int e = -1;
    for (std::size_t k = 0; k < m.mesh.element_count(); ++k) {
        if (m.mesh.labels[k] == 0 && m.mesh.centroid(k).norm() < 0.05) {
            e = static_cast<int>(k);
            break;
        }
    }
    ASSERT_GE(e, 0);
    m.phantom.anomaly.center = m.mesh.centroid(e);
    m.phantom.anomaly.diameter = 1e-7;
    const double s = 1e-3 * m.mesh.sigma[e].scalar();
    m.phantom.anomaly.delta = s;
    const auto sim = simulate_eit(m.mesh, m.electrodes, m.phantom, m.patterns,
                                  NoiseSpec{NoiseMode::SnrDb, 60.0, 2}, kTight);
    ASSERT_EQ(sim.perturbed, std::vector<int>{e});

    EitDofMap dofs;
    dofs.elements = {{e}};
    dofs.centers = {m.mesh.centroid(e)};
    const auto sys = assemble_cem(m.mesh, m.electrodes);
    const auto lf = eit_leadfield(m.mesh, sys, dofs, m.patterns, kTight);
    const Eigen::VectorXd predicted = s * lf.matrix.col(0);
    EXPECT_LE(test::relative_error(sim.clean - sim.background, predicted), 1e-2);
}

TEST(SimulateEit, EmptyAnomalyRaises) {
    auto m = eit_model();
    m.phantom.anomaly.center = Vec3(1e-5, 2e-5, 3e-5);
    m.phantom.anomaly.diameter = 1e-9;
    EXPECT_THROW(simulate_eit(m.mesh, m.electrodes, m.phantom, m.patterns, NoiseSpec{}, kTight),
                 EmptyAnomalyError);
}
