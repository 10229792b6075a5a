#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "msemu/design.hpp"
#include "msemu/kernel.hpp"
#include "msemu/linalg.hpp"

namespace msemu {

/// One stage of the multi-step interpolator: kernel, coefficients solving
/// A_{X_j} alpha = (y - sum of earlier stages)|_{X_j}, and the plug-in
/// variance estimate for that stage's residual process.
struct StageModel {
    int index = 0; ///< 1-based stage number
    RescaledKernel kernel;
    int n_points = 0;
    Eigen::VectorXd coefficients;
    double sigma2 = 0.0;
    double residual_norm = 0.0;
    SolveReport solve;
};

struct FitOptions {
    double solve_tol = 1e-10;
    StorageMode mode = StorageMode::automatic;
    GramConfig gram;
    bool reml_variance = false; ///< normalize sigma2 by n_j - n_{j-1} instead of n_j
    bool keep_grams = true;     ///< retain stage Gram matrices for diagnostics / variance
};

struct PredictiveDistribution {
    double mean = 0.0;
    double variance = 0.0;
    bool clamped = false; ///< a negative numerical variance was clamped to 0
};

/// Chooses the kernel for a stage given its design prefix and current
/// residuals; lets parameter selection plug into the fit loop.
using KernelProvider =
    std::function<RescaledKernel(int stage_index, const Design& X_j, const Eigen::VectorXd& residual)>;

class MultiStepModel {
public:
    MultiStepModel() = default;

    bool fitted() const { return !stages_.empty(); }
    int stage_count() const { return static_cast<int>(stages_.size()); }
    int dim() const { return nested_.design().dim(); }
    int n() const { return nested_.design().n(); }

    const NestedDesign& nested() const { return nested_; }
    const std::vector<StageModel>& stages() const { return stages_; }
    const Eigen::VectorXd& training_values() const { return y_; }

    /// Stage Gram (0-based); reassembles if the fit did not keep it.
    const GramMatrix& stage_gram(int j) const;

    const FitOptions& options() const { return options_; }

    /// Optional JSON string with the per-stage selection trace.
    const std::string& selection_trace() const { return selection_trace_; }
    void set_selection_trace(std::string trace) { selection_trace_ = std::move(trace); }

private:
    friend MultiStepModel fit(const NestedDesign&, const Eigen::VectorXd&, const KernelProvider&,
                              const FitOptions&);
    friend MultiStepModel load_model(const std::string&, const std::optional<Design>&);

    NestedDesign nested_;
    Eigen::VectorXd y_;
    std::vector<StageModel> stages_;
    FitOptions options_;
    std::string selection_trace_;

    struct Caches;
    std::shared_ptr<Caches> caches_; ///< lazily built, guarded; safe to share
    void init_caches();
    friend struct VarianceEvaluator;
};

/// Stagewise residual interpolation: for j = 1..J solve
/// A_{X_j,Phi_j} alpha^j = (y - sum_{k<j} P^k)|_{X_j} and accumulate.
MultiStepModel fit(const NestedDesign& nd, const Eigen::VectorXd& y,
                   const std::vector<RescaledKernel>& kernels, const FitOptions& opts = {});
MultiStepModel fit(const NestedDesign& nd, const Eigen::VectorXd& y, const KernelProvider& provider,
                   const FitOptions& opts = {});

/// P(x) = sum_j sum_u alpha^j_u Phi_j(x - x_u).
double predict(const MultiStepModel& m, const Eigen::VectorXd& x);

/// Batch prediction; compactly supported stages share one neighbor index.
Eigen::VectorXd predict_batch(const MultiStepModel& m, const Eigen::MatrixXd& points);

/// Evaluate a single stage's interpolant at many points.
Eigen::VectorXd stage_eval_batch(const MultiStepModel& m, int stage_index,
                                 const Eigen::MatrixXd& points);

/// Plug-in predictive distribution. The mean is predict(m, x); the variance
/// integrates the stage processes out backwards from stage J, accumulating
/// each stage's conditional covariance (singular on its own design block)
/// and substituting its conditional mean into the running weights.
PredictiveDistribution predict_with_variance(const MultiStepModel& m, const Eigen::VectorXd& x);

struct StageResidual {
    int stage = 0;
    Eigen::VectorXd residual;
    double norm = 0.0;
};

/// Per-stage residual vectors (y - earlier stages) restricted to X_j.
std::vector<StageResidual> residual_trace(const MultiStepModel& m);

/// JSON round trip. Coefficients are stored with shortest round-trip decimal
/// encoding, so load(save(m)) predicts bit-identically. design_ref records
/// where the design CSV lives so a loaded model can find its points.
void save_model(const MultiStepModel& m, const std::string& path,
                const std::string& design_ref = "");
MultiStepModel load_model(const std::string& path,
                          const std::optional<Design>& design_override = std::nullopt);

} // namespace msemu
