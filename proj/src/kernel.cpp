#include "msemu/kernel.hpp"

#include <cmath>
#include <map>
#include <mutex>

namespace msemu {

namespace {

constexpr double kPi = 3.14159265358979323846;

// 16-point Gauss-Legendre rule on [-1, 1].
constexpr double kGlNodes[8] = {0.0950125098376374, 0.2816035507792589, 0.4580167776572274,
                                0.6178762444026438, 0.7554044083550030, 0.8656312023878318,
                                0.9445750230732326, 0.9894009349916499};
constexpr double kGlWeights[8] = {0.1894506104550685, 0.1826034150449236, 0.1691565193950025,
                                  0.1495959888165767, 0.1246289712555339, 0.0951585116824928,
                                  0.0622535239386479, 0.0271524594117541};

template <typename F>
double gl16(double a, double b, F&& f) {
    double c = 0.5 * (a + b), h = 0.5 * (b - a), s = 0.0;
    for (int i = 0; i < 8; ++i) {
        s += kGlWeights[i] * (f(c + h * kGlNodes[i]) + f(c - h * kGlNodes[i]));
    }
    return s * h;
}

// Integral over [0, 1] with enough panels to resolve oscillation scale ~1/rho.
template <typename F>
double integrate01(double rho, F&& f) {
    int panels = 4 + static_cast<int>(std::ceil(std::abs(rho) / 1.5));
    double s = 0.0;
    for (int p = 0; p < panels; ++p) {
        s += gl16(static_cast<double>(p) / panels, static_cast<double>(p + 1) / panels, f);
    }
    return s;
}

} // namespace

std::string to_string(KernelFamily f) {
    switch (f) {
        case KernelFamily::gaussian: return "gaussian";
        case KernelFamily::wendland_smooth: return "wendland-smooth";
        case KernelFamily::wendland_rough: return "wendland-rough";
        case KernelFamily::gaussian_conv_power: return "gaussian-conv-power";
    }
    return "?";
}

KernelFamily kernel_family_from_string(const std::string& s) {
    if (s == "gaussian") return KernelFamily::gaussian;
    if (s == "wendland-smooth") return KernelFamily::wendland_smooth;
    if (s == "wendland-rough") return KernelFamily::wendland_rough;
    if (s == "gaussian-conv-power") return KernelFamily::gaussian_conv_power;
    throw argument_error("unknown kernel family: " + s);
}

Kernel Kernel::gaussian(int d, int smoothness_cap) {
    if (d < 1) throw argument_error("kernel dimension must be positive");
    return Kernel{KernelFamily::gaussian, d, 0, smoothness_cap};
}

Kernel Kernel::wendland_smooth(int d) {
    if (d < 1) throw argument_error("kernel dimension must be positive");
    return Kernel{KernelFamily::wendland_smooth, d, 0, 8};
}

Kernel Kernel::wendland_rough(int d) {
    if (d < 1) throw argument_error("kernel dimension must be positive");
    return Kernel{KernelFamily::wendland_rough, d, 0, 8};
}

Kernel Kernel::gaussian_conv_power(int d, int k, int smoothness_cap) {
    if (d < 1) throw argument_error("kernel dimension must be positive");
    if (k < 0) throw argument_error("convolution power must be nonnegative");
    return Kernel{KernelFamily::gaussian_conv_power, d, k, smoothness_cap};
}

int Kernel::wendland_l() const {
    switch (family) {
        case KernelFamily::wendland_smooth: return dimension / 2 + 3;
        case KernelFamily::wendland_rough: return dimension / 2 + 1;
        default: throw argument_error("wendland_l: not a Wendland kernel");
    }
}

int Kernel::smoothness() const {
    switch (family) {
        case KernelFamily::wendland_smooth: return 4;
        case KernelFamily::wendland_rough: return 0;
        default: return smoothness_cap;
    }
}

double Kernel::support_radius() const {
    if (family == KernelFamily::wendland_smooth || family == KernelFamily::wendland_rough)
        return 1.0;
    return std::numeric_limits<double>::infinity();
}

double Kernel::peak() const { return radial(0.0); }

double Kernel::amplitude() const {
    if (family != KernelFamily::gaussian_conv_power) return 1.0;
    double amp = 1.0, a = 1.0;
    for (int i = 0; i < conv_power; ++i) {
        amp = amp * amp * std::pow(kPi / (2.0 * a), 0.5 * dimension);
        a *= 0.5;
    }
    return amp;
}

double Kernel::gaussian_width() const {
    if (family == KernelFamily::gaussian_conv_power) return std::ldexp(1.0, -conv_power);
    return 1.0;
}

double Kernel::radial(double r) const {
    switch (family) {
        case KernelFamily::gaussian: return std::exp(-r * r);
        case KernelFamily::gaussian_conv_power: return amplitude() * std::exp(-gaussian_width() * r * r);
        case KernelFamily::wendland_smooth: {
            if (r >= 1.0) return 0.0;
            const double l = wendland_l();
            return std::pow(1.0 - r, l + 2) * ((l * l + 4 * l + 3) * r * r + (3 * l + 6) * r + 3.0);
        }
        case KernelFamily::wendland_rough: {
            if (r >= 1.0) return 0.0;
            return std::pow(1.0 - r, wendland_l() + 2);
        }
    }
    return 0.0;
}

// ---------------------------------------------------------------------------
// Rescaling

Rescaling Rescaling::scalar(double theta) {
    if (!(theta > 0.0) || !std::isfinite(theta))
        throw argument_error("scalar re-scaling must be positive and finite");
    Rescaling r;
    r.kind_ = Kind::scalar;
    r.dim_ = 0;
    r.scalar_ = theta;
    return r;
}

Rescaling Rescaling::diagonal(Eigen::VectorXd theta) {
    if (theta.size() == 0) throw argument_error("empty diagonal re-scaling");
    for (Eigen::Index i = 0; i < theta.size(); ++i)
        if (!(theta[i] > 0.0) || !std::isfinite(theta[i]))
            throw argument_error("diagonal re-scaling entries must be positive and finite");
    Rescaling r;
    r.kind_ = Kind::diagonal;
    r.dim_ = static_cast<int>(theta.size());
    r.diag_ = std::move(theta);
    return r;
}

Rescaling Rescaling::full(Eigen::MatrixXd theta) {
    if (theta.rows() != theta.cols() || theta.rows() == 0)
        throw argument_error("full re-scaling must be a nonempty square matrix");
    if (!theta.allFinite()) throw argument_error("full re-scaling entries must be finite");
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(theta, Eigen::ComputeThinU | Eigen::ComputeThinV);
    double smin = svd.singularValues().minCoeff();
    double smax = svd.singularValues().maxCoeff();
    if (!(smin > 0.0)) throw argument_error("full re-scaling is singular");
    // Xi' = Theta^{-1} must reproduce the identity to 1e-12 relative.
    Eigen::MatrixXd inv = theta.partialPivLu().inverse();
    double dev = (theta * inv - Eigen::MatrixXd::Identity(theta.rows(), theta.cols())).norm();
    if (!(dev <= 1e-12 * std::max(1.0, theta.norm() * inv.norm())))
        throw argument_error("full re-scaling is numerically singular (Theta*Theta^-1 far from I)");
    Rescaling r;
    r.kind_ = Kind::full;
    r.dim_ = static_cast<int>(theta.rows());
    r.smin_ = smin;
    r.smax_ = smax;
    r.detabs_ = std::abs(theta.determinant());
    r.mat_ = std::move(theta);
    return r;
}

double Rescaling::scaled_norm(const Eigen::VectorXd& u) const {
    switch (kind_) {
        case Kind::scalar: return scalar_ * u.norm();
        case Kind::diagonal: return diag_.cwiseProduct(u).norm();
        case Kind::full: return (mat_ * u).norm();
    }
    return 0.0;
}

Eigen::VectorXd Rescaling::apply(const Eigen::VectorXd& u) const {
    switch (kind_) {
        case Kind::scalar: return scalar_ * u;
        case Kind::diagonal: return diag_.cwiseProduct(u);
        case Kind::full: return mat_ * u;
    }
    return u;
}

Eigen::MatrixXd Rescaling::matrix(int d) const {
    switch (kind_) {
        case Kind::scalar: return scalar_ * Eigen::MatrixXd::Identity(d, d);
        case Kind::diagonal:
            if (d != dim_) throw argument_error("re-scaling dimension mismatch");
            return diag_.asDiagonal();
        case Kind::full:
            if (d != dim_) throw argument_error("re-scaling dimension mismatch");
            return mat_;
    }
    return Eigen::MatrixXd::Identity(d, d);
}

double Rescaling::det_abs(int d) const {
    switch (kind_) {
        case Kind::scalar: return std::pow(scalar_, d);
        case Kind::diagonal: return diag_.prod();
        case Kind::full: return detabs_;
    }
    return 1.0;
}

double Rescaling::sigma_min(int d) const {
    (void)d;
    switch (kind_) {
        case Kind::scalar: return scalar_;
        case Kind::diagonal: return diag_.minCoeff();
        case Kind::full: return smin_;
    }
    return 1.0;
}

double Rescaling::sigma_max(int d) const {
    (void)d;
    switch (kind_) {
        case Kind::scalar: return scalar_;
        case Kind::diagonal: return diag_.maxCoeff();
        case Kind::full: return smax_;
    }
    return 1.0;
}

std::vector<double> Rescaling::values() const {
    switch (kind_) {
        case Kind::scalar: return {scalar_};
        case Kind::diagonal: return {diag_.data(), diag_.data() + diag_.size()};
        case Kind::full: {
            std::vector<double> v;
            v.reserve(static_cast<std::size_t>(dim_) * dim_);
            for (int i = 0; i < dim_; ++i)
                for (int j = 0; j < dim_; ++j) v.push_back(mat_(i, j));
            return v;
        }
    }
    return {};
}

double Rescaling::scalar_value() const {
    if (kind_ != Kind::scalar) throw argument_error("not a scalar re-scaling");
    return scalar_;
}

// ---------------------------------------------------------------------------
// RescaledKernel

double RescaledKernel::eval(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const {
    if (x.size() != y.size() || x.size() != base.dimension)
        throw argument_error("kernel eval: point dimension mismatch");
    if (!rescale.compatible(base.dimension))
        throw argument_error("kernel eval: re-scaling dimension mismatch");
    return base.radial(rescale.scaled_norm(x - y));
}

double RescaledKernel::eval_diff(const Eigen::VectorXd& u) const {
    return base.radial(rescale.scaled_norm(u));
}

double RescaledKernel::support_radius_unscaled() const {
    double s = base.support_radius();
    if (!std::isfinite(s)) return s;
    return s / rescale.sigma_min(base.dimension);
}

double phi_zero(const Kernel& k) { return k.peak(); }

// ---------------------------------------------------------------------------
// Fourier machinery

namespace {

double gaussian_hat(const Kernel& k, double rho) {
    const double a = k.gaussian_width();
    return k.amplitude() * std::pow(2.0 * a, -0.5 * k.dimension) *
           std::exp(-rho * rho / (4.0 * a));
}

double wendland_hat(const Kernel& k, double rho) {
    const int d = k.dimension;
    rho = std::abs(rho);
    if (d == 1) {
        return std::sqrt(2.0 / kPi) *
               integrate01(rho, [&](double r) { return k.radial(r) * std::cos(r * rho); });
    }
    const double nu = 0.5 * d - 1.0;
    if (rho < 1e-8) {
        const double c = std::pow(2.0, 0.5 * d - 1.0) * std::tgamma(0.5 * d);
        return integrate01(0.0, [&](double r) { return k.radial(r) * std::pow(r, d - 1); }) / c;
    }
    double v = integrate01(rho, [&](double r) {
        return k.radial(r) * std::pow(r, nu + 1.0) * std::cyl_bessel_j(nu, r * rho);
    });
    return std::pow(rho, -nu) * v;
}

struct EnvelopeCache {
    std::vector<double> cummin; // running minimum of the transform on the step grid
    std::vector<double> value;  // transform values on the step grid
};

constexpr double kEnvStep = 0.05;
constexpr double kEnvRadiusCap = 256.0;

std::mutex g_env_mutex;
std::map<std::pair<int, int>, EnvelopeCache> g_env_cache;

// Running minimum of the base Wendland transform over the nested grid
// {0, h, 2h, ...} up to radius R (R <= kEnvRadiusCap).
double wendland_grid_min(const Kernel& k, double R) {
    std::lock_guard<std::mutex> lock(g_env_mutex);
    auto& cache = g_env_cache[{static_cast<int>(k.family), k.dimension}];
    std::size_t need = static_cast<std::size_t>(std::floor(R / kEnvStep)) + 1;
    while (cache.value.size() < need) {
        double rho = kEnvStep * static_cast<double>(cache.value.size());
        double v = wendland_hat(k, rho);
        double m = cache.cummin.empty() ? v : std::min(cache.cummin.back(), v);
        cache.value.push_back(v);
        cache.cummin.push_back(m);
    }
    return cache.cummin[need - 1];
}

} // namespace

double fourier_transform_radial(const Kernel& k, double rho) {
    if (k.gaussian_family()) return gaussian_hat(k, rho);
    return wendland_hat(k, rho);
}

double fourier_lower_envelope(const RescaledKernel& k, double M) {
    if (M < 0.0 || !std::isfinite(M)) throw argument_error("fourier_lower_envelope: M must be finite and >= 0");
    const int d = k.base.dimension;
    if (!k.rescale.compatible(d)) throw argument_error("fourier_lower_envelope: re-scaling dimension mismatch");
    // FourierTransform(Phi_Theta)(omega) = |det Xi| FourierTransform(Phi)(Xi omega),
    // and {Xi omega : ||omega|| <= 2M} lies inside the ball of radius 2M sigma_max(Xi).
    const double det_factor = 1.0 / k.rescale.det_abs(d);
    const double R = 2.0 * M / k.rescale.sigma_min(d);
    if (k.base.gaussian_family()) {
        const double a = k.base.gaussian_width();
        // radially decreasing, so the infimum is attained at radius R exactly
        return det_factor * k.base.amplitude() * std::pow(2.0 * a, -0.5 * d) *
               std::exp(-R * R / (4.0 * a));
    }
    const double kw = (k.base.family == KernelFamily::wendland_smooth) ? 2.0 : 0.0;
    double base = 0.9 * wendland_grid_min(k.base, std::min(R, kEnvRadiusCap));
    if (R > kEnvRadiusCap) {
        // tail extrapolation, one order steeper than the transform's decay
        base *= std::pow(kEnvRadiusCap / R, d + 2.0 * kw + 2.0);
    }
    return det_factor * base;
}

double fourier_envelope_ratio(const Kernel& k, double R) {
    if (!(R > 0.0) || !std::isfinite(R)) throw argument_error("fourier_envelope_ratio: R must be positive");
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (int i = 0; i <= 128; ++i) {
        double v = fourier_transform_radial(k, R * i / 128.0);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
    return hi / lo;
}

std::vector<RescaledKernel> convolution_schedule(const Kernel& base, int stages,
                                                 const std::vector<Rescaling>& rescalings) {
    if (base.family != KernelFamily::gaussian)
        throw argument_error(
            "convolution_schedule: self-convolutions are closed-form for the Gaussian base only; "
            "use plain re-scaled kernels per stage for " + to_string(base.family));
    if (stages < 1) throw argument_error("convolution_schedule: need at least one stage");
    if (static_cast<int>(rescalings.size()) != stages)
        throw argument_error("convolution_schedule: one re-scaling per stage required");
    std::vector<RescaledKernel> out;
    out.reserve(stages);
    for (int j = 1; j <= stages; ++j) {
        if (!rescalings[j - 1].compatible(base.dimension))
            throw argument_error("convolution_schedule: re-scaling dimension mismatch at stage " +
                                 std::to_string(j));
        int power = stages - j;
        Kernel kj = (power == 0) ? Kernel::gaussian(base.dimension, base.smoothness_cap)
                                 : Kernel::gaussian_conv_power(base.dimension, power, base.smoothness_cap);
        out.push_back(RescaledKernel{kj, rescalings[j - 1]});
    }
    return out;
}

AdmissibilityResult check_rescaling_admissibility(const Rescaling& prev, const Rescaling& next,
                                                  int d) {
    if (!prev.compatible(d) || !next.compatible(d))
        throw argument_error("check_rescaling_admissibility: dimension mismatch");
    // lambda_max(Theta_p' Theta_p Xi_n' Xi_n) = sigma_max(Theta_p Theta_n^{-1})^2
    Eigen::MatrixXd tp = prev.matrix(d);
    Eigen::MatrixXd tn = next.matrix(d);
    Eigen::MatrixXd c = tn.transpose().partialPivLu().solve(tp.transpose()).transpose();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(c);
    double smax = svd.singularValues().maxCoeff();
    double lmax = smax * smax;
    return AdmissibilityResult{lmax, lmax <= 1.0 + 1e-12};
}

} // namespace msemu
