#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "headfem/error.hpp"
#include "headfem/inverse.hpp"
#include "headfem/rng.hpp"

using namespace headfem;

namespace {

HyperModel gamma_model(double theta0, double beta = 1.5) {
    return {HyperFamily::Gamma, beta, theta0};
}

HyperModel ig_model(double theta0, double beta = 1.5) {
    return {HyperFamily::InverseGamma, beta, theta0};
}

Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) {
            m(i, j) = rng.normal();
        }
    }
    return m;
}

// Cartesian layout on a line: source s at (s, 0, 0) cm with three unit columns
DofLayout line_layout(std::size_t n) {
    DofLayout layout;
    for (std::size_t s = 0; s < n; ++s) {
        layout.positions.emplace_back(0.01 * static_cast<double>(s), 0.0, 0.0);
        for (int a = 0; a < 3; ++a) {
            layout.column_source.push_back(static_cast<int>(s));
            layout.column_direction.push_back(Vec3::Unit(a));
        }
    }
    return layout;
}

} // namespace

TEST(Hypermodel, ClosedFormUpdates) {
    EXPECT_NEAR(gamma_model(2.0).update(3.0), 3.0, 1e-12);
    EXPECT_NEAR(ig_model(1.0).update(2.0), 1.0, 1e-12);
    EXPECT_DOUBLE_EQ(gamma_model(1.0).eta(), 0.0);
    EXPECT_DOUBLE_EQ(ig_model(1.0).kappa(), 3.0);
}

TEST(Hypermodel, UpdatesMonotoneInAbsX) {
    for (const auto& h : {gamma_model(1e-5), ig_model(1e-5), gamma_model(1e-9), ig_model(1e-9)}) {
        double prev = -1.0;
        for (int i = 0; i <= 200; ++i) {
            const double x = 1e-6 * i;
            const double t = h.update(x);
            EXPECT_GE(t, prev);
            EXPECT_DOUBLE_EQ(t, h.update(-x));
            prev = t;
        }
    }
}

TEST(Hypermodel, Validation) {
    EXPECT_THROW(gamma_model(0.0).validate(), ParameterError);
    EXPECT_THROW(gamma_model(1.0, 1.4).validate(), ParameterError);
    EXPECT_THROW(ig_model(1.0, 0.0).validate(), ParameterError);
    EXPECT_NO_THROW(ig_model(1.0, 0.5).validate());
    EXPECT_NO_THROW(gamma_model(1.0, 1.5).validate());
}

TEST(IasStep, ScalarClosedForm) {
    const Eigen::MatrixXd lf = Eigen::MatrixXd::Constant(1, 1, 1.0);
    const Eigen::VectorXd y = Eigen::VectorXd::Constant(1, 2.0);
    const auto hyper = ig_model(1.0);
    const auto next = ias_step(lf, y, IasState::initial(1, hyper, 1.0), hyper);
    EXPECT_NEAR(next.x[0], 1.0 * 2.0 / (1.0 + 1.0), 1e-12);
    EXPECT_EQ(next.k, 1);
    EXPECT_NEAR(next.theta[0], hyper.update(next.x[0]), 1e-15);
}

TEST(IasStep, ZeroNuRejected) {
    const Eigen::MatrixXd lf = Eigen::MatrixXd::Identity(2, 2);
    const auto hyper = ig_model(1.0);
    EXPECT_THROW(ias_step(lf, Eigen::VectorXd::Ones(2), IasState::initial(2, hyper, 0.0), hyper),
                 ParameterError);
}

TEST(IasStep, DimensionMismatch) {
    const Eigen::MatrixXd lf = Eigen::MatrixXd::Identity(3, 3);
    EXPECT_THROW(ias_estimate(lf, Eigen::VectorXd::Ones(2), Eigen::VectorXd::Ones(3), 1.0),
                 DataError);
}

TEST(IasStep, DualFormMatchesNormalEquations) {
    Rng rng(1234);
    for (int trial = 0; trial < 20; ++trial) {
        const auto m = static_cast<Eigen::Index>(5 + rng.below(46));
        const auto n = static_cast<Eigen::Index>(5 + rng.below(196));
        const Eigen::MatrixXd lf = random_matrix(rng, m, n);
        const Eigen::VectorXd y = random_matrix(rng, m, 1);
        Eigen::VectorXd theta(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            theta[i] = 0.1 + rng.uniform();
        }
        const double nu = 0.05 + rng.uniform();
        // minimizer of |L x - y|^2 / nu^2 + sum x_i^2 / theta_i
        Eigen::MatrixXd normal = lf.transpose() * lf / (nu * nu);
        normal.diagonal() += theta.cwiseInverse();
        const Eigen::VectorXd primal = normal.llt().solve(lf.transpose() * y / (nu * nu));
        const Eigen::VectorXd dual = ias_estimate(lf, y, theta, nu);
        EXPECT_LE((dual - primal).norm() / primal.norm(), 1e-8) << "trial " << trial;
    }
}

TEST(IasMap, ZeroDataGivesZero) {
    Rng rng(3);
    const Eigen::MatrixXd lf = random_matrix(rng, 6, 10);
    for (int iters : {1, 3, 7}) {
        const auto rec = ias_map(lf, Eigen::VectorXd::Zero(6), gamma_model(1e-3), 0.1, iters);
        EXPECT_EQ(rec.x, Eigen::VectorXd::Zero(10));
        EXPECT_EQ(rec.iterations, iters);
    }
}

TEST(IasMap, OneIterationIsTikhonov) {
    Rng rng(4);
    const Eigen::MatrixXd lf = random_matrix(rng, 8, 15);
    const Eigen::VectorXd y = random_matrix(rng, 8, 1);
    const double theta0 = 0.3;
    const double nu = 0.2;
    const Eigen::MatrixXd normal =
        lf.transpose() * lf + (nu * nu / theta0) * Eigen::MatrixXd::Identity(15, 15);
    const Eigen::VectorXd tikhonov = normal.ldlt().solve(lf.transpose() * y);
    const auto rec = ias_map(lf, y, ig_model(theta0), nu, 1);
    EXPECT_LE((rec.x - tikhonov).norm() / tikhonov.norm(), 1e-10);
}

TEST(IasMap, SpikeOnIdentityLeadField) {
    const Eigen::MatrixXd lf = Eigen::MatrixXd::Identity(5, 5);
    Eigen::VectorXd y = Eigen::VectorXd::Zero(5);
    y[2] = 1.0;
    const auto hyper = ig_model(1e-3);
    const double nu = 0.01;
    const auto rec = ias_map(lf, y, hyper, nu, 2);

    // the problem decouples: x_i = theta_i y_i / (theta_i + nu^2) per coordinate
    Eigen::VectorXd theta = Eigen::VectorXd::Constant(5, 1e-3);
    Eigen::VectorXd x(5);
    for (int k = 0; k < 2; ++k) {
        for (int i = 0; i < 5; ++i) {
            x[i] = theta[i] * y[i] / (theta[i] + nu * nu);
            theta[i] = (1e-3 + 0.5 * x[i] * x[i]) / 3.0;
        }
    }
    Eigen::Index arg = 0;
    rec.x.cwiseAbs().maxCoeff(&arg);
    EXPECT_EQ(arg, 2);
    EXPECT_LE((rec.x - x).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((rec.theta - theta).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(IasMap, LargeTheta0SpikeHasZeroPositionError) {
    const Eigen::MatrixXd lf = Eigen::MatrixXd::Identity(5, 5);
    Eigen::VectorXd y = Eigen::VectorXd::Zero(5);
    y[2] = 1.0;
    std::vector<Vec3> pos;
    for (int i = 0; i < 5; ++i) {
        pos.emplace_back(0.01 * i, 0.0, 0.0);
    }
    const auto layout = DofLayout::scalar_dofs(pos);
    for (double theta0 : {1.0, 10.0, 1e3}) {
        const auto rec = ias_map(lf, y, ig_model(theta0), 0.01, 2);
        const auto m = roi_metrics(rec.x, layout, pos[2], 1.0, pos[2], Vec3::Zero());
        EXPECT_EQ(m.position_error_mm, 0.0) << theta0;
        EXPECT_TRUE(std::isnan(m.angle_error_deg));
    }
}

TEST(IasMap, RoiRestrictsAndEmbeds) {
    Rng rng(5);
    const Eigen::MatrixXd lf = random_matrix(rng, 6, 9);
    const Eigen::VectorXd y = random_matrix(rng, 6, 1);
    const std::vector<int> roi{1, 4, 7};
    const auto hyper = gamma_model(1e-2);
    const auto rec = ias_map(lf, y, hyper, 0.1, 3, std::span<const int>(roi));
    Eigen::MatrixXd sub(6, 3);
    for (int i = 0; i < 3; ++i) {
        sub.col(i) = lf.col(roi[i]);
    }
    const auto direct = ias_map(sub, y, hyper, 0.1, 3);
    for (int j = 0; j < 9; ++j) {
        const auto it = std::find(roi.begin(), roi.end(), j);
        if (it == roi.end()) {
            EXPECT_EQ(rec.x[j], 0.0);
        } else {
            EXPECT_EQ(rec.x[j], direct.x[it - roi.begin()]);
        }
    }
    const std::vector<int> empty;
    EXPECT_THROW(ias_map(lf, y, hyper, 0.1, 3, std::span<const int>(empty)), RoiError);
    EXPECT_THROW(ias_map(lf, y, hyper, 0.1, 0), ParameterError);
}

TEST(RoiColumns, SelectsBall) {
    const auto layout = line_layout(6);
    const auto cols = roi_columns(layout, Vec3(0.02, 0.0, 0.0), 0.0101);
    EXPECT_EQ(cols, (std::vector<int>{3, 4, 5, 6, 7, 8, 9, 10, 11}));
}

TEST(Decomposition, NearestAssignmentExhaustive) {
    Rng rng(8);
    std::vector<Vec3> points;
    std::vector<Vec3> centers;
    for (int i = 0; i < 10; ++i) {
        points.emplace_back(rng.uniform(), rng.uniform(), rng.uniform());
    }
    for (int c = 0; c < 3; ++c) {
        centers.emplace_back(rng.uniform(), rng.uniform(), rng.uniform());
    }
    const auto a = nearest_assignment(points, centers);
    for (int i = 0; i < 10; ++i) {
        for (int c = 0; c < 3; ++c) {
            EXPECT_LE((points[i] - centers[a[i]]).norm(), (points[i] - centers[c]).norm());
        }
    }
}

TEST(Decomposition, EverySubsetPopulated) {
    Rng pts(9);
    std::vector<Vec3> points;
    for (int i = 0; i < 200; ++i) {
        points.emplace_back(pts.uniform(), pts.uniform(), pts.uniform());
    }
    Rng rng(10);
    const auto dec = random_decomposition(points, 40, rng);
    ASSERT_EQ(dec.subset_count(), 40u);
    std::vector<int> count(40, 0);
    for (int s : dec.assignment) {
        ASSERT_GE(s, 0);
        ASSERT_LT(s, 40);
        ++count[s];
    }
    for (int c : count) {
        EXPECT_GT(c, 0);
    }
    EXPECT_EQ(dec.assignment, nearest_assignment(points, dec.centers));
    Rng bad(10);
    EXPECT_THROW(random_decomposition(points, 201, bad), ParameterError);
    EXPECT_THROW(random_decomposition(points, 0, bad), ParameterError);
}

TEST(Decomposition, ExhaustedRetriesRaise) {
    std::vector<Vec3> points;
    for (int i = 0; i < 50; ++i) {
        points.emplace_back(0.01 * i, 0.0, 0.0);
    }
    Rng rng(11);
    EXPECT_THROW(random_decomposition(points, 49, rng, 0), DecompositionError);
}

TEST(Decomposition, AggregationSumsMemberColumns) {
    const auto layout = line_layout(4);
    Rng rng(12);
    const Eigen::MatrixXd lf = random_matrix(rng, 5, 12);
    Decomposition dec;
    dec.centers = {layout.positions[0], layout.positions[3]};
    dec.assignment = {0, 0, 1, 1};
    std::vector<int> comp;
    for (std::size_t j = 0; j < 12; ++j) {
        comp.push_back(static_cast<int>(j % 3));
    }
    const auto coarse = aggregate_columns(lf, dec, layout.column_source, comp, 3);
    ASSERT_EQ(coarse.cols(), 6);
    for (int a = 0; a < 3; ++a) {
        EXPECT_LE((coarse.col(a) - lf.col(a) - lf.col(3 + a)).norm(), 1e-15);
        EXPECT_LE((coarse.col(3 + a) - lf.col(6 + a) - lf.col(9 + a)).norm(), 1e-15);
    }
}

TEST(Multires, FullResolutionSingleDecompositionEqualsIasMap) {
    const auto layout = line_layout(7);
    Rng rng(13);
    const Eigen::MatrixXd lf = random_matrix(rng, 6, 21);
    const Eigen::VectorXd y = random_matrix(rng, 6, 1);
    const auto hyper = ig_model(1e-2);
    const auto multi = multires_ias(lf, y, layout, hyper, 0.1, 2, 7, 1, 99);
    const auto plain = ias_map(lf, y, hyper, 0.1, 2);
    EXPECT_LE((multi.averaged - plain.x).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_EQ(multi.averaged, multi.unaveraged);
}

TEST(Multires, MeanOfIdenticalEstimates) {
    const Eigen::VectorXd e = (Eigen::VectorXd(4) << 0.1, -2.0, 3.5, 1e-9).finished();
    const std::vector<Eigen::VectorXd> copies(7, e);
    EXPECT_LE((mean_estimate(copies) - e).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_THROW(mean_estimate(std::vector<Eigen::VectorXd>{}), ParameterError);
}

TEST(Multires, ExpandedEstimateConstantOnSubsets) {
    const auto layout = line_layout(30);
    Rng rng(14);
    const Eigen::MatrixXd lf = random_matrix(rng, 8, 90);
    const Eigen::VectorXd y = random_matrix(rng, 8, 1);
    const auto r = multires_ias(lf, y, layout, gamma_model(1e-2), 0.1, 2, 6, 3, 5);
    const auto& dec = r.decompositions.back();
    for (std::size_t s = 0; s < 30; ++s) {
        for (std::size_t t = 0; t < 30; ++t) {
            if (dec.assignment[s] == dec.assignment[t]) {
                for (int a = 0; a < 3; ++a) {
                    EXPECT_EQ(r.unaveraged[3 * s + a], r.unaveraged[3 * t + a]);
                }
            }
        }
    }
    EXPECT_EQ(r.decompositions.size(), 3u);
}

TEST(Multires, DeterministicForSeed) {
    const auto layout = line_layout(40);
    Rng rng(15);
    const Eigen::MatrixXd lf = random_matrix(rng, 10, 120);
    const Eigen::VectorXd y = random_matrix(rng, 10, 1);
    const auto a = multires_ias(lf, y, layout, ig_model(1e-3), 0.1, 2, 10, 5, 77);
    const auto b = multires_ias(lf, y, layout, ig_model(1e-3), 0.1, 2, 10, 5, 77);
    const auto c = multires_ias(lf, y, layout, ig_model(1e-3), 0.1, 2, 10, 5, 78);
    EXPECT_EQ(a.averaged, b.averaged);
    EXPECT_NE(a.averaged, c.averaged);
}

TEST(Multires, RejectsBadParameters) {
    const auto layout = line_layout(4);
    const Eigen::MatrixXd lf = Eigen::MatrixXd::Ones(3, 12);
    const Eigen::VectorXd y = Eigen::VectorXd::Ones(3);
    EXPECT_THROW(multires_ias(lf, y, layout, ig_model(1.0), 0.1, 2, 4, 0, 1), ParameterError);
    EXPECT_THROW(multires_ias(lf, y, layout, ig_model(1.0), 0.1, 2, 5, 1, 1), ParameterError);
    EXPECT_THROW(multires_ias(Eigen::MatrixXd::Ones(3, 11), y, layout, ig_model(1.0), 0.1, 2, 4, 1,
                              1),
                 DataError);
}

TEST(RoiMetrics, SingleNonzeroSource) {
    const auto layout = line_layout(5);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(15);
    x[3 * 2 + 2] = 4.0;
    const Vec3 truth(0.02, 0.003, 0.004);
    const auto m = roi_metrics(x, layout, Vec3::Zero(), 1.0, truth, Vec3::UnitZ());
    EXPECT_NEAR(m.position_error_mm, 5.0, 1e-9);
    EXPECT_NEAR(m.angle_error_deg, 0.0, 1e-9);
    EXPECT_EQ(m.roi_size, 5u);
}

TEST(RoiMetrics, EqualAmplitudesGiveMidpoint) {
    const auto layout = line_layout(5);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(15);
    x[3 * 1 + 0] = 2.0;
    x[3 * 3 + 1] = -2.0;
    const auto m = roi_metrics(x, layout, Vec3::Zero(), 1.0, Vec3(0.02, 0, 0), Vec3::UnitX());
    EXPECT_NEAR(m.center_of_mass.x(), 0.02, 1e-15);
    EXPECT_NEAR(m.position_error_mm, 0.0, 1e-12);
}

TEST(RoiMetrics, ParallelAndAntiparallel) {
    const auto layout = line_layout(3);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(9);
    x.segment(3, 3) = Vec3(1.0, 2.0, -0.5);
    const Vec3 dir(1.0, 2.0, -0.5);
    const auto para = roi_metrics(x, layout, Vec3::Zero(), 1.0, layout.positions[1], 3.0 * dir);
    const auto anti = roi_metrics(x, layout, Vec3::Zero(), 1.0, layout.positions[1], -dir);
    EXPECT_NEAR(para.angle_error_deg, 0.0, 1e-6);
    EXPECT_NEAR(anti.angle_error_deg, 180.0, 1e-6);
}

TEST(RoiMetrics, Errors) {
    const auto layout = line_layout(3);
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(9);
    EXPECT_THROW(roi_metrics(zero, layout, Vec3::Zero(), 1.0, Vec3::Zero(), Vec3::UnitZ()),
                 UndefinedMetricError);
    EXPECT_THROW(roi_metrics(Eigen::VectorXd::Ones(9), layout, Vec3(5, 5, 5), 0.01, Vec3::Zero(),
                             Vec3::UnitZ()),
                 RoiError);
    EXPECT_THROW(roi_metrics(Eigen::VectorXd::Ones(8), layout, Vec3::Zero(), 1.0, Vec3::Zero(),
                             Vec3::UnitZ()),
                 DataError);
}

TEST(NormalizeProblem, RestoreInvertsScaling) {
    Rng rng(16);
    const Eigen::MatrixXd lf = 1e-6 * random_matrix(rng, 4, 4);
    const Eigen::VectorXd x = random_matrix(rng, 4, 1);
    const Eigen::VectorXd y = lf * x;
    const auto p = normalize_problem(lf, y);
    EXPECT_NEAR(p.lf.cwiseAbs().maxCoeff(), 1.0, 1e-15);
    EXPECT_NEAR(p.y.cwiseAbs().maxCoeff(), 1.0, 1e-15);
    const Eigen::VectorXd xn = p.lf.partialPivLu().solve(p.y);
    EXPECT_LE((p.restore(xn) - x).norm() / x.norm(), 1e-9);
    EXPECT_THROW(normalize_problem(Eigen::MatrixXd::Zero(2, 2), Eigen::VectorXd::Ones(2)),
                 NumericalError);
}
