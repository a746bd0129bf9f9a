#include <gtest/gtest.h>

#include "headfem/error.hpp"
#include "headfem/fem.hpp"
#include "headfem/rng.hpp"
#include "headfem/solver.hpp"
#include "support.hpp"

using namespace headfem;

namespace {

SparseMatrix sparse(const Eigen::MatrixXd& d) { return d.sparseView(); }

Eigen::MatrixXd random_spd(int n, std::uint64_t seed, double shift = 1.0) {
    Rng rng(seed);
    Eigen::MatrixXd m(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            m(i, j) = rng.normal();
        }
    }
    return m * m.transpose() + shift * Eigen::MatrixXd::Identity(n, n);
}

Eigen::VectorXd random_vector(int n, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) {
        v[i] = rng.normal();
    }
    return v;
}

} // namespace

TEST(Ldp, Examples) {
    EXPECT_EQ(ldp(sparse(Eigen::MatrixXd::Identity(4, 4))), Eigen::VectorXd::Ones(4));
    Eigen::Matrix2d a;
    a << 2, -1, -1, 2;
    EXPECT_EQ(ldp(sparse(a)), Eigen::Vector2d(3, 3));
    Eigen::Matrix2d z;
    z << 1, 0, 0, 0;
    EXPECT_THROW(ldp(sparse(z)), SingularPreconditionerError);
}

TEST(Pcg, IdentityOneIteration) {
    const Eigen::VectorXd b = random_vector(7, 1);
    const auto r = pcg_solve(sparse(Eigen::MatrixXd::Identity(7, 7)), b, {});
    EXPECT_EQ(r.x, b);
    EXPECT_EQ(r.iterations, 1);
}

TEST(Pcg, TwoByTwo) {
    Eigen::Matrix2d a;
    a << 4, 1, 1, 3;
    const auto r = pcg_solve(sparse(a), Eigen::Vector2d(1, 2), {1e-14, 0, Preconditioner::Ldp});
    // Cramer's rule: det = 11
    EXPECT_NEAR(r.x[0], 1.0 / 11.0, 1e-14);
    EXPECT_NEAR(r.x[1], 7.0 / 11.0, 1e-14);
}

TEST(Pcg, ZeroRightHandSide) {
    const auto r = pcg_solve(sparse(random_spd(5, 2)), Eigen::VectorXd::Zero(5), {});
    EXPECT_EQ(r.x, Eigen::VectorXd::Zero(5));
    EXPECT_EQ(r.iterations, 0);
}

TEST(Pcg, RandomSpdMatchesDirect) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Eigen::MatrixXd a = random_spd(50, seed);
        const Eigen::VectorXd b = random_vector(50, seed + 100);
        const Eigen::VectorXd direct = a.llt().solve(b);
        for (auto pre : {Preconditioner::Ldp, Preconditioner::None}) {
            const auto r = pcg_solve(sparse(a), b, {1e-10, 0, pre});
            EXPECT_LT((r.x - direct).norm() / direct.norm(), 1e-8);
            EXPECT_LE((a * r.x - b).norm() / b.norm(), 1e-10);
        }
    }
}

TEST(Pcg, IterationCountWithinDimensionPlusFive) {
    // normalized Wishart plus identity: spectrum inside roughly [1, 5]
    for (int n : {20, 50, 100, 200}) {
        Eigen::MatrixXd a = random_spd(n, 40 + n, 0.0) / n;
        a.diagonal().array() += 1.0;
        const Eigen::VectorXd b = random_vector(n, 7 + n);
        const auto r = pcg_solve(sparse(a), b, {1e-10, 0, Preconditioner::Ldp});
        EXPECT_LE(r.iterations, n + 5);
        EXPECT_LT((r.x - a.llt().solve(b)).norm() / r.x.norm(), 1e-8);
    }
}

TEST(Pcg, PreconditionedAndPlainAgree) {
    const auto model = test::sphere_model({0.5, 1.0}, {0.33, 0.43}, 0.2, 6, 0.3);
    const auto a = assemble_A(model.mesh, model.electrodes);
    const Eigen::VectorXd b = random_vector(static_cast<int>(a.rows()), 3);
    const double tol = 1e-9;
    const auto x1 = pcg_solve(a, b, {tol, 0, Preconditioner::Ldp}).x;
    const auto x2 = pcg_solve(a, b, {tol, 0, Preconditioner::None}).x;
    EXPECT_LT((x1 - x2).norm() / x2.norm(), 10.0 * tol * 1e3);
    EXPECT_LE((Eigen::MatrixXd(a) * x1 - b).norm() / b.norm(), tol);
}

TEST(Pcg, IterationLimitCarriesBestIterate) {
    const Eigen::MatrixXd a = random_spd(60, 9, 1e-3);
    const Eigen::VectorXd b = random_vector(60, 10);
    try {
        pcg_solve(sparse(a), b, {1e-14, 3, Preconditioner::Ldp});
        FAIL() << "expected ConvergenceError";
    } catch (const ConvergenceError& e) {
        EXPECT_EQ(e.best_iterate().size(), 60);
        EXPECT_LT(e.residual(), 1.0);
        EXPECT_NEAR((a * e.best_iterate() - b).norm() / b.norm(), e.residual(), 1e-10);
    }
}

TEST(Pcg, ConfigValidation) {
    EXPECT_THROW(pcg_solve(sparse(Eigen::MatrixXd::Identity(2, 2)), Eigen::Vector2d(1, 1),
                           {0.0, 0, Preconditioner::Ldp}),
                 ParameterError);
    EXPECT_THROW(pcg_solve(sparse(Eigen::MatrixXd::Identity(2, 2)), Eigen::Vector2d(1, 1),
                           {1e-8, -1, Preconditioner::Ldp}),
                 ParameterError);
    EXPECT_EQ(PcgConfig{}.iteration_limit(10000), 1500);
}

TEST(TransferMatrix, IdentityAndScaling) {
    Eigen::MatrixXd b(5, 2);
    b << 1, 0, 2, 1, 0, 0, -1, 3, 0.5, 0;
    const auto t1 = transfer_matrix(sparse(Eigen::MatrixXd::Identity(5, 5)), sparse(b), {});
    EXPECT_EQ(t1, b);
    const auto t2 = transfer_matrix(sparse(2.0 * Eigen::MatrixXd::Identity(5, 5)), sparse(b), {});
    EXPECT_LT((t2 - b / 2.0).norm(), 1e-15);
}

TEST(TransferMatrix, ResidualPerColumn) {
    const auto model = test::sphere_model({1.0}, {1.0}, 0.25, 3, 0.4);
    const auto sys = assemble_cem(model.mesh, model.electrodes);
    const PcgConfig cfg{1e-10, 0, Preconditioner::Ldp};
    const auto t = transfer_matrix(sys.A, sys.B, cfg);
    const Eigen::MatrixXd b = Eigen::MatrixXd(sys.B);
    for (Eigen::Index c = 0; c < t.cols(); ++c) {
        EXPECT_LE((sys.A * t.col(c) - b.col(c)).norm() / b.col(c).norm(), 1e-10);
    }
}

TEST(TransferMatrix, ReportsFailingColumn) {
    const Eigen::MatrixXd a = random_spd(40, 4, 1e-4);
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(40, 3);
    b.col(2) = random_vector(40, 5);
    try {
        transfer_matrix(sparse(a), sparse(b), {1e-14, 2, Preconditioner::Ldp});
        FAIL() << "expected ConvergenceError";
    } catch (const ConvergenceError& e) {
        EXPECT_EQ(e.column(), 2);
    }
}

TEST(TransferMatrix, ThreadCountInvariant) {
    const auto model = test::sphere_model({0.5, 1.0}, {0.33, 0.43}, 0.2, 6, 0.3);
    const auto sys = assemble_cem(model.mesh, model.electrodes);
    const int before = thread_count();
    set_thread_count(1);
    const auto t1 = transfer_matrix(sys.A, sys.B, {});
    set_thread_count(3);
    const auto t3 = transfer_matrix(sys.A, sys.B, {});
    set_thread_count(before);
    EXPECT_EQ(t1, t3);
}
