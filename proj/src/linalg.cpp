#include "msemu/linalg.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>
#include <cmath>

#include "msemu/util.hpp"

namespace msemu {

namespace {

double unit_ball_volume(int d) {
    return std::pow(3.14159265358979323846, 0.5 * d) / std::tgamma(0.5 * d + 1.0);
}

std::string conditioning_hint(const GramMatrix& A) {
    std::string q = std::isnan(A.q_x()) ? "unknown" : std::to_string(A.q_x());
    return " [gershgorin lambda_max <= " + std::to_string(A.gershgorin_bound()) +
           ", q_X = " + q + "; narrow the kernel or enable jitter]";
}

} // namespace

// ---------------------------------------------------------------------------
// GramMatrix

GramMatrix GramMatrix::dense(Eigen::MatrixXd a, RescaledKernel k, double q_x) {
    GramMatrix g;
    g.n_ = static_cast<int>(a.rows());
    g.dense_ = true;
    g.q_x_ = q_x;
    g.nnz_full_ = static_cast<std::int64_t>(g.n_) * g.n_;
    g.kernel_ = std::move(k);
    g.dense_m_ = std::move(a);
    return g;
}

GramMatrix GramMatrix::sparse(Eigen::SparseMatrix<double> upper, RescaledKernel k, double q_x) {
    GramMatrix g;
    g.n_ = static_cast<int>(upper.rows());
    g.dense_ = false;
    g.q_x_ = q_x;
    // strict upper entries mirror to the lower triangle
    g.nnz_full_ = 2 * static_cast<std::int64_t>(upper.nonZeros()) - g.n_;
    g.kernel_ = std::move(k);
    g.upper_ = std::move(upper);
    return g;
}

Eigen::VectorXd GramMatrix::multiply(const Eigen::VectorXd& x) const {
    if (dense_) return dense_m_ * x;
    return upper_.selfadjointView<Eigen::Upper>() * x;
}

const Eigen::MatrixXd& GramMatrix::dense_matrix() const {
    if (!dense_) throw state_error("gram matrix is stored sparse");
    return dense_m_;
}

const Eigen::SparseMatrix<double>& GramMatrix::upper() const {
    if (dense_) throw state_error("gram matrix is stored dense");
    return upper_;
}

Eigen::MatrixXd GramMatrix::to_dense() const {
    if (dense_) return dense_m_;
    Eigen::MatrixXd full = Eigen::MatrixXd(upper_.selfadjointView<Eigen::Upper>());
    return full;
}

// ---------------------------------------------------------------------------
// Assembly

GramMatrix assemble_gram(const Design& X, const RescaledKernel& k, StorageMode mode,
                         const GramConfig& cfg) {
    const int n = X.n();
    const int d = X.dim();
    if (k.base.dimension != d) throw argument_error("assemble_gram: kernel/design dimension mismatch");
    if (!k.rescale.compatible(d)) throw argument_error("assemble_gram: re-scaling dimension mismatch");

    const double support = k.support_radius_unscaled();
    const bool compact = std::isfinite(support);
    bool use_sparse;
    switch (mode) {
        case StorageMode::dense: use_sparse = false; break;
        case StorageMode::sparse:
            if (!compact)
                throw argument_error("assemble_gram: sparse mode requires a compactly supported kernel");
            use_sparse = true;
            break;
        case StorageMode::automatic: use_sparse = compact && n > cfg.dense_cutoff; break;
    }

    double q = (n >= 2) ? X.separation_distance() : std::numeric_limits<double>::quiet_NaN();

    if (!use_sparse) {
        std::int64_t est = static_cast<std::int64_t>(n) * n;
        if (est > cfg.nnz_budget)
            throw resource_error("assemble_gram: dense estimate of " + std::to_string(est) +
                                 " entries exceeds the budget of " + std::to_string(cfg.nnz_budget));
        Eigen::MatrixXd a(n, n);
        const double phi0 = k.peak();
        for (int i = 0; i < n; ++i) {
            a(i, i) = phi0;
            for (int j = i + 1; j < n; ++j) {
                double v = k.eval_diff((X.points().row(i) - X.points().row(j)).transpose());
                a(i, j) = v;
                a(j, i) = v;
            }
        }
        return GramMatrix::dense(std::move(a), k, q);
    }

    // pair-count estimate from the support ellipsoid volume
    double vol = unit_ball_volume(d);
    for (int i = 0; i < d; ++i) vol *= support; // conservative: sigma_min-based radius
    vol = std::min(vol, 1.0);
    std::int64_t est = n + static_cast<std::int64_t>(static_cast<double>(n) * n * vol);
    if (est > cfg.nnz_budget)
        throw resource_error("assemble_gram: sparse estimate of " + std::to_string(est) +
                             " nonzeros exceeds the budget of " + std::to_string(cfg.nnz_budget));

    NeighborGrid grid(X.points());
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(est / 2 + n));
    const double phi0 = k.peak();
    for (int i = 0; i < n; ++i) trips.emplace_back(i, i, phi0);
    grid.for_each_pair(support, [&](int i, int j, double) {
        double v = k.eval_diff((X.points().row(i) - X.points().row(j)).transpose());
        if (v != 0.0) trips.emplace_back(std::min(i, j), std::max(i, j), v);
    });
    Eigen::SparseMatrix<double> upper(n, n);
    upper.setFromTriplets(trips.begin(), trips.end());
    upper.makeCompressed();
    return GramMatrix::sparse(std::move(upper), k, q);
}

// ---------------------------------------------------------------------------
// Solves

namespace {

SolveReport solve_dense(const GramMatrix& A, const Eigen::VectorXd& b, double tol,
                        const GramConfig& cfg) {
    SolveReport rep;
    rep.method = SolveReport::Method::direct;
    const Eigen::MatrixXd& M = A.dense_matrix();
    Eigen::LLT<Eigen::MatrixXd> llt(M);
    Eigen::MatrixXd jittered;
    const Eigen::MatrixXd* sys = &M;
    if (llt.info() != Eigen::Success) {
        if (!cfg.jitter)
            throw conditioning_error("dense factorization failed" + conditioning_hint(A));
        rep.jitter_applied = cfg.jitter_scale * A.phi0();
        jittered = M;
        jittered.diagonal().array() += rep.jitter_applied;
        llt.compute(jittered);
        sys = &jittered;
        if (llt.info() != Eigen::Success)
            throw conditioning_error("dense factorization failed even with jitter" +
                                     conditioning_hint(A));
    }
    double bnorm = b.norm();
    if (bnorm == 0.0) {
        rep.x = Eigen::VectorXd::Zero(b.size());
        return rep;
    }
    Eigen::VectorXd x = llt.solve(b);
    // refinement drives the residual to tol even at large condition numbers
    double relres = ((*sys) * x - b).norm() / bnorm;
    int passes = 0;
    while (relres > tol && passes < 4) {
        Eigen::VectorXd r = b - (*sys) * x;
        x += llt.solve(r);
        relres = ((*sys) * x - b).norm() / bnorm;
        ++passes;
    }
    if (!(relres <= tol) || !x.allFinite())
        throw conditioning_error("dense solve did not reach tolerance (residual " +
                                 std::to_string(relres) + ")" + conditioning_hint(A));
    rep.x = std::move(x);
    rep.iterations = passes;
    rep.rel_residual = relres;
    return rep;
}

SolveReport solve_cg(const GramMatrix& A, const Eigen::VectorXd& b, double tol, int max_iter,
                     const GramConfig& cfg) {
    SolveReport rep;
    rep.method = SolveReport::Method::iterative;
    const int n = A.n();
    if (max_iter < 0) max_iter = 10 * n;
    double jit = cfg.jitter ? cfg.jitter_scale * A.phi0() : 0.0;
    rep.jitter_applied = jit;
    auto apply = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
        Eigen::VectorXd out = A.multiply(v);
        if (jit != 0.0) out += jit * v;
        return out;
    };
    double bnorm = b.norm();
    if (bnorm == 0.0) {
        rep.x = Eigen::VectorXd::Zero(n);
        return rep;
    }
    const double invdiag = 1.0 / (A.phi0() + jit); // constant diagonal
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd r = b;
    Eigen::VectorXd z = invdiag * r;
    Eigen::VectorXd p = z;
    double rz = r.dot(z);
    int it = 0;
    double relres = r.norm() / bnorm;
    while (relres > tol && it < max_iter) {
        Eigen::VectorXd ap = apply(p);
        double alpha = rz / p.dot(ap);
        x += alpha * p;
        r -= alpha * ap;
        relres = r.norm() / bnorm;
        z = invdiag * r;
        double rz_new = r.dot(z);
        p = z + (rz_new / rz) * p;
        rz = rz_new;
        ++it;
    }
    if (!(relres <= tol) || !x.allFinite())
        throw conditioning_error("conjugate gradients did not converge in " +
                                 std::to_string(max_iter) + " iterations (residual " +
                                 std::to_string(relres) + ")" + conditioning_hint(A));
    rep.x = std::move(x);
    rep.iterations = it;
    rep.rel_residual = relres;
    return rep;
}

} // namespace

SolveReport solve_spd(const GramMatrix& A, const Eigen::VectorXd& b, double tol, int max_iter,
                      const GramConfig& cfg) {
    if (b.size() != A.n()) throw argument_error("solve_spd: right-hand side length mismatch");
    if (A.is_dense()) return solve_dense(A, b, tol, cfg);
    return solve_cg(A, b, tol, max_iter, cfg);
}

double logdet_spd(const GramMatrix& A) {
    if (A.is_dense()) {
        Eigen::LLT<Eigen::MatrixXd> llt(A.dense_matrix());
        if (llt.info() != Eigen::Success)
            throw conditioning_error("logdet: dense factorization failed" + conditioning_hint(A));
        return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    }
    Eigen::SimplicialLLT<Eigen::SparseMatrix<double>, Eigen::Upper> llt;
    llt.compute(A.upper());
    if (llt.info() != Eigen::Success)
        throw capability_error(
            "logdet unavailable: sparse factorization failed; use cross-validation selection" +
            conditioning_hint(A));
    double s = 0.0;
    const auto& L = llt.matrixL();
    for (int i = 0; i < A.n(); ++i) s += std::log(L.coeff(i, i));
    return 2.0 * s;
}

// ---------------------------------------------------------------------------
// Eigenvalue extremes

EigenExtremes eigen_extremes(const GramMatrix& A, int max_n_exact) {
    EigenExtremes out;
    out.gershgorin = A.gershgorin_bound();
    const int n = A.n();
    if (n <= max_n_exact) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A.to_dense(), Eigen::EigenvaluesOnly);
        out.lambda_min = es.eigenvalues().minCoeff();
        out.lambda_max = es.eigenvalues().maxCoeff();
        out.method = EigenExtremes::Method::exact_dense;
        return out;
    }

    // power iteration for lambda_max
    Rng rng(0x11d0f00dULL + static_cast<std::uint64_t>(n));
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = rng.uniform01() - 0.5;
    v.normalize();
    double lmax = 0.0, res_max = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 1000; ++it) {
        Eigen::VectorXd av = A.multiply(v);
        lmax = v.dot(av);
        res_max = (av - lmax * v).norm() / std::max(std::abs(lmax), 1e-300);
        if (res_max < 1e-9) break;
        v = av.normalized();
    }
    out.lambda_max = lmax;
    out.residual = res_max;

    // inverse iteration for lambda_min via a sparse factorization
    try {
        Eigen::VectorXd w(n);
        for (int i = 0; i < n; ++i) w[i] = rng.uniform01() - 0.5;
        w.normalize();
        double lmin = 0.0, res_min = std::numeric_limits<double>::infinity();
        if (A.is_dense()) {
            Eigen::LLT<Eigen::MatrixXd> llt(A.dense_matrix());
            if (llt.info() != Eigen::Success) throw conditioning_error("factorization failed");
            for (int it = 0; it < 1000; ++it) {
                Eigen::VectorXd nw = llt.solve(w).normalized();
                Eigen::VectorXd aw = A.multiply(nw);
                lmin = nw.dot(aw);
                res_min = (aw - lmin * nw).norm() / std::max(std::abs(lmin), 1e-300);
                w = nw;
                if (res_min < 1e-9) break;
            }
        } else {
            Eigen::SimplicialLLT<Eigen::SparseMatrix<double>, Eigen::Upper> llt;
            llt.compute(A.upper());
            if (llt.info() != Eigen::Success) throw conditioning_error("factorization failed");
            for (int it = 0; it < 1000; ++it) {
                Eigen::VectorXd nw = llt.solve(w).normalized();
                Eigen::VectorXd aw = A.multiply(nw);
                lmin = nw.dot(aw);
                res_min = (aw - lmin * nw).norm() / std::max(std::abs(lmin), 1e-300);
                w = nw;
                if (res_min < 1e-9) break;
            }
        }
        out.lambda_min = lmin;
        out.residual = std::max(out.residual, res_min);
        out.method = EigenExtremes::Method::iterative;
    } catch (const error&) {
        out.lambda_min = std::numeric_limits<double>::quiet_NaN();
        out.method = EigenExtremes::Method::bound_only;
    }
    return out;
}

SolveErrorBound solve_error_bound(double kappa, double delta_A, double delta_b) {
    if (!(kappa > 0.0) || delta_A < 0.0 || delta_b < 0.0)
        throw argument_error("solve_error_bound: kappa must be positive, deltas nonnegative");
    double r = kappa * delta_A;
    if (r >= 1.0)
        throw infeasibility_error(
            "solve_error_bound: matrix too ill-conditioned for the perturbation level (r = " +
            std::to_string(r) + " >= 1)");
    SolveErrorBound out;
    out.norm_ratio_bound = (1.0 + kappa * delta_b) / (1.0 - r);
    out.rel_error_bound = kappa * (delta_A + delta_b) / (1.0 - r);
    return out;
}

} // namespace msemu
