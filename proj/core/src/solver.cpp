#include "headfem/solver.hpp"

#include <cmath>
#include <vector>

#include <omp.h>
#include <spdlog/spdlog.h>

namespace headfem {

void PcgConfig::validate() const {
    if (!(tolerance > 0.0)) {
        throw ParameterError("PCG tolerance must be positive");
    }
    if (max_iterations < 0) {
        throw ParameterError("PCG max_iterations must be positive (or 0 for the default)");
    }
}

int PcgConfig::iteration_limit(Eigen::Index n) const {
    if (max_iterations > 0) {
        return max_iterations;
    }
    return static_cast<int>(5.0 * std::sqrt(static_cast<double>(n))) + 1000;
}

Eigen::VectorXd ldp(const SparseMatrix& a) {
    if (a.rows() != a.cols()) {
        throw ParameterError("preconditioner requires a square matrix");
    }
    Eigen::VectorXd d = Eigen::VectorXd::Zero(a.rows());
    for (int col = 0; col < a.outerSize(); ++col) {
        for (SparseMatrix::InnerIterator it(a, col); it; ++it) {
            d[it.row()] += std::abs(it.value());
        }
    }
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        if (d[i] == 0.0) {
            throw SingularPreconditionerError("row " + std::to_string(i) +
                                              " of the system matrix is zero");
        }
    }
    return d;
}

namespace {

PcgResult pcg_with(const SparseMatrix& a, const Eigen::VectorXd& b, const PcgConfig& cfg,
                   const Eigen::VectorXd& inv_diag) {
    const Eigen::Index n = b.size();
    PcgResult out;
    out.x = Eigen::VectorXd::Zero(n);
    const double bnorm = b.norm();
    if (bnorm == 0.0) {
        return out;
    }
    const int limit = cfg.iteration_limit(n);
    const double target = cfg.tolerance * bnorm;

    auto precondition = [&](const Eigen::VectorXd& r) -> Eigen::VectorXd {
        if (inv_diag.size() == 0) {
            return r;
        }
        return r.cwiseProduct(inv_diag);
    };

    Eigen::VectorXd r = b;
    Eigen::VectorXd best = out.x;
    double best_res = bnorm;
    int it = 0;
    // restart on the true residual whenever the recurrence claims convergence
    while (it < limit) {
        Eigen::VectorXd z = precondition(r);
        Eigen::VectorXd p = z;
        double rho = r.dot(z);
        double rnorm = r.norm();
        while (rnorm > target && it < limit) {
            const Eigen::VectorXd q = a * p;
            const double pq = p.dot(q);
            if (!(pq > 0.0)) {
                throw NumericalError("PCG breakdown: matrix is not positive definite");
            }
            const double alpha = rho / pq;
            out.x.noalias() += alpha * p;
            r.noalias() -= alpha * q;
            ++it;
            rnorm = r.norm();
            if (rnorm < best_res) {
                best_res = rnorm;
                best = out.x;
            }
            z = precondition(r);
            const double rho_next = r.dot(z);
            p = z + (rho_next / rho) * p;
            rho = rho_next;
        }
        r = b - a * out.x;
        const double true_res = r.norm();
        if (true_res < best_res) {
            best_res = true_res;
            best = out.x;
        }
        if (true_res <= target) {
            out.iterations = it;
            out.relative_residual = true_res / bnorm;
            return out;
        }
    }
    throw ConvergenceError("PCG did not reach relative residual " +
                               std::to_string(cfg.tolerance) + " in " + std::to_string(limit) +
                               " iterations (best " + std::to_string(best_res / bnorm) + ")",
                           best, best_res / bnorm);
}

} // namespace

PcgResult pcg_solve(const SparseMatrix& a, const Eigen::VectorXd& b, const PcgConfig& cfg) {
    cfg.validate();
    if (a.rows() != a.cols() || a.rows() != b.size()) {
        throw ParameterError("PCG dimension mismatch");
    }
    Eigen::VectorXd inv_diag;
    if (cfg.preconditioner == Preconditioner::Ldp) {
        inv_diag = ldp(a).cwiseInverse();
    }
    auto result = pcg_with(a, b, cfg, inv_diag);
    spdlog::debug("pcg n={} iterations={} residual={:.3e}", b.size(), result.iterations,
                  result.relative_residual);
    return result;
}

Eigen::MatrixXd transfer_matrix(const SparseMatrix& a, const SparseMatrix& b,
                                const PcgConfig& cfg) {
    cfg.validate();
    if (a.rows() != a.cols() || a.rows() != b.rows()) {
        throw ParameterError("transfer matrix dimension mismatch");
    }
    Eigen::VectorXd inv_diag;
    if (cfg.preconditioner == Preconditioner::Ldp) {
        inv_diag = ldp(a).cwiseInverse();
    }
    const auto cols = static_cast<int>(b.cols());
    Eigen::MatrixXd t(a.rows(), cols);
    std::vector<std::exception_ptr> errors(cols);
    std::vector<int> iterations(cols, 0);

#pragma omp parallel for schedule(dynamic, 1)
    for (int c = 0; c < cols; ++c) {
        try {
            const Eigen::VectorXd rhs = b.col(c);
            auto res = pcg_with(a, rhs, cfg, inv_diag);
            t.col(c) = res.x;
            iterations[c] = res.iterations;
        } catch (const ConvergenceError& e) {
            errors[c] = std::make_exception_ptr(ConvergenceError(
                "column " + std::to_string(c + 1) + ": " + e.what(), e.best_iterate(),
                e.residual(), c));
        } catch (...) {
            errors[c] = std::current_exception();
        }
    }
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
    for (int c = 0; c < cols; ++c) {
        spdlog::debug("transfer column={} iterations={}", c, iterations[c]);
    }
    return t;
}

void set_thread_count(int threads) {
    if (threads > 0) {
        omp_set_num_threads(threads);
        Eigen::setNbThreads(threads);
    }
}

int thread_count() { return omp_get_max_threads(); }

} // namespace headfem
