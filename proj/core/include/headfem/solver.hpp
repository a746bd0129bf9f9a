#pragma once

#include <string>

#include <Eigen/Dense>

#include "headfem/error.hpp"
#include "headfem/types.hpp"

namespace headfem {

enum class Preconditioner { Ldp, None };

struct PcgConfig {
    double tolerance = 1e-8;    ///< relative residual ||Ax - b|| / ||b||
    int max_iterations = 0;     ///< 0 selects 5 sqrt(n) + 1000
    Preconditioner preconditioner = Preconditioner::Ldp;

    void validate() const;
    int iteration_limit(Eigen::Index n) const;
};

/// Lumped diagonal preconditioner: d_i = sum_j |a_ij|.
/// Throws SingularPreconditionerError for an all-zero row.
Eigen::VectorXd ldp(const SparseMatrix& a);

struct PcgResult {
    Eigen::VectorXd x;
    int iterations = 0;
    double relative_residual = 0.0;
};

/// Raised when the iteration limit is hit; carries the best iterate found.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& message, Eigen::VectorXd best, double residual,
                     int column = -1)
        : Error("ConvergenceError", message, ErrorCategory::Runtime),
          best_(std::move(best)), residual_(residual), column_(column) {}

    const Eigen::VectorXd& best_iterate() const { return best_; }
    double residual() const { return residual_; }
    int column() const { return column_; }

private:
    Eigen::VectorXd best_;
    double residual_;
    int column_;
};

PcgResult pcg_solve(const SparseMatrix& a, const Eigen::VectorXd& b, const PcgConfig& cfg);

/// T = A^{-1} B, one independent PCG solve per column of B.
Eigen::MatrixXd transfer_matrix(const SparseMatrix& a, const SparseMatrix& b,
                                const PcgConfig& cfg);

/// Caps the worker count used by parallel loops; 0 keeps the runtime default.
void set_thread_count(int threads);
int thread_count();

} // namespace headfem
