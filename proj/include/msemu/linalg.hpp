#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <cstdint>
#include <optional>

#include "msemu/design.hpp"
#include "msemu/kernel.hpp"

namespace msemu {

enum class StorageMode { dense, sparse, automatic };

struct GramConfig {
    int dense_cutoff = 4000;            ///< auto mode switches to sparse above this n
    std::int64_t nnz_budget = 200000000; ///< resource guard on estimated stored entries
    bool jitter = false;                ///< opt-in diagonal nugget on factorization trouble
    double jitter_scale = 1e-10;        ///< nugget magnitude as a multiple of Phi(0)
};

/// Symmetric positive definite interpolation matrix A = {Phi(Theta(x_u - x_v))}.
/// Sparse storage keeps the upper triangle only; entries at or beyond the
/// kernel support are exact zeros and are dropped, never tapered.
class GramMatrix {
public:
    static GramMatrix dense(Eigen::MatrixXd a, RescaledKernel k, double q_x);
    static GramMatrix sparse(Eigen::SparseMatrix<double> upper, RescaledKernel k, double q_x);

    int n() const { return n_; }
    bool is_dense() const { return dense_; }
    double phi0() const { return kernel_.peak(); }
    const RescaledKernel& kernel() const { return kernel_; }

    /// Entry count of the full symmetric matrix (both triangles).
    std::int64_t nnz() const { return nnz_full_; }

    /// Separation distance of the generating design (NaN when unknown).
    double q_x() const { return q_x_; }

    /// Gershgorin cap on the largest eigenvalue: n * Phi(0).
    double gershgorin_bound() const { return n_ * phi0(); }

    Eigen::VectorXd multiply(const Eigen::VectorXd& x) const;
    const Eigen::MatrixXd& dense_matrix() const;
    const Eigen::SparseMatrix<double>& upper() const;
    Eigen::MatrixXd to_dense() const;

private:
    GramMatrix() = default;
    int n_ = 0;
    bool dense_ = true;
    double q_x_ = std::numeric_limits<double>::quiet_NaN();
    std::int64_t nnz_full_ = 0;
    RescaledKernel kernel_;
    Eigen::MatrixXd dense_m_;
    Eigen::SparseMatrix<double> upper_;
};

/// Pairwise kernel evaluations over a design. Sparse mode stores only pairs
/// closer than the kernel support; automatic mode picks sparse for compactly
/// supported kernels past the dense cutoff. Throws resource_error when the
/// estimated entry count exceeds the configured budget.
GramMatrix assemble_gram(const Design& X, const RescaledKernel& k,
                         StorageMode mode = StorageMode::automatic, const GramConfig& cfg = {});

struct SolveReport {
    Eigen::VectorXd x;
    enum class Method { direct, iterative } method = Method::direct;
    int iterations = 0;      ///< refinement passes (direct) or CG iterations
    double rel_residual = 0; ///< ||Ax-b|| / ||b|| at exit
    double jitter_applied = 0.0;
};

/// Direct symmetric factorization with iterative refinement (dense), or
/// Jacobi-preconditioned conjugate gradients (sparse). Succeeds only with
/// relative residual <= tol.
SolveReport solve_spd(const GramMatrix& A, const Eigen::VectorXd& b, double tol = 1e-10,
                      int max_iter = -1, const GramConfig& cfg = {});

/// log det A via the factorization diagonal.
double logdet_spd(const GramMatrix& A);

struct EigenExtremes {
    double lambda_min = 0.0;
    double lambda_max = 0.0;
    double gershgorin = 0.0; ///< n * Phi(0)
    enum class Method { exact_dense, iterative, bound_only } method = Method::exact_dense;
    double residual = 0.0; ///< iterative certificate max ||Av - lambda v||/|lambda|
};

/// Extreme eigenvalues: exact dense solve for n <= max_n_exact, power /
/// inverse iteration beyond. If the sparse factorization needed for inverse
/// iteration breaks down, returns a bound-only result (lambda_min = NaN).
EigenExtremes eigen_extremes(const GramMatrix& A, int max_n_exact = 2000);

struct SolveErrorBound {
    double norm_ratio_bound = 0.0; ///< ||x~|| / ||x||
    double rel_error_bound = 0.0;  ///< ||x - x~|| / ||x||
};

/// Perturbation bounds for solving Ax=b with relative perturbations delta_A,
/// delta_b at condition number kappa. Requires r = kappa * delta_A < 1.
SolveErrorBound solve_error_bound(double kappa, double delta_A, double delta_b);

} // namespace msemu
