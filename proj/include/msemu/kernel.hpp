#pragma once

#include <Eigen/Dense>
#include <limits>
#include <string>
#include <vector>

#include "msemu/errors.hpp"

namespace msemu {

enum class KernelFamily { gaussian, wendland_smooth, wendland_rough, gaussian_conv_power };

std::string to_string(KernelFamily f);
KernelFamily kernel_family_from_string(const std::string& s);

/// A translation-invariant positive definite base kernel, evaluated radially
/// in the re-scaled coordinate ||Theta (x - y)||.
///
/// gaussian:            exp(-r^2)
/// wendland_smooth:     (1-r)_+^{l+2} [(l^2+4l+3) r^2 + (3l+6) r + 3],  l = floor(d/2)+3
/// wendland_rough:      (1-r)_+^{l+2},                                  l = floor(d/2)+1
/// gaussian_conv_power: the k-fold self-convolution power of the Gaussian,
///                      amplitude() * exp(-width() r^2) with width 2^{-k}.
struct Kernel {
    KernelFamily family = KernelFamily::gaussian;
    int dimension = 1;
    int conv_power = 0;     ///< k of the self-convolution power (gaussian_conv_power only)
    int smoothness_cap = 8; ///< finite stand-in for the Gaussian's unbounded smoothness

    static Kernel gaussian(int d, int smoothness_cap = 8);
    static Kernel wendland_smooth(int d);
    static Kernel wendland_rough(int d);
    static Kernel gaussian_conv_power(int d, int k, int smoothness_cap = 8);

    /// Wendland polynomial degree parameter; argument_error for other families.
    int wendland_l() const;

    /// Count of continuous derivatives used in rate formulas.
    int smoothness() const;

    /// Radius beyond which the kernel is exactly zero (unit scaling);
    /// +infinity for the Gaussian family.
    double support_radius() const;

    /// Value at radius 0.
    double peak() const;

    /// Amplitude of the Gaussian convolution power (1 for all other families).
    double amplitude() const;

    /// Exponent factor a in amplitude * exp(-a r^2); meaningful for the
    /// Gaussian family only.
    double gaussian_width() const;

    /// Radial profile phi(r), r >= 0, in re-scaled coordinates.
    double radial(double r) const;

    bool compactly_supported() const { return support_radius() < std::numeric_limits<double>::infinity(); }
    bool gaussian_family() const {
        return family == KernelFamily::gaussian || family == KernelFamily::gaussian_conv_power;
    }
};

/// Linear re-scaling Theta of kernel arguments: Phi_Theta(x) = Phi(Theta x).
class Rescaling {
public:
    enum class Kind { scalar, diagonal, full };

    static Rescaling scalar(double theta);
    static Rescaling diagonal(Eigen::VectorXd theta);
    static Rescaling full(Eigen::MatrixXd theta);
    static Rescaling identity() { return scalar(1.0); }

    Kind kind() const { return kind_; }

    /// True if this re-scaling can be applied in dimension d.
    bool compatible(int d) const { return kind_ == Kind::scalar || dim_ == d; }
    int dim() const { return dim_; } ///< 0 for scalar (dimension-free)

    /// ||Theta u||_2.
    double scaled_norm(const Eigen::VectorXd& u) const;

    Eigen::VectorXd apply(const Eigen::VectorXd& u) const;

    /// Dense Theta as a d x d matrix.
    Eigen::MatrixXd matrix(int d) const;

    double det_abs(int d) const;
    double sigma_min(int d) const;
    double sigma_max(int d) const;

    /// Raw parameter values (scalar: 1 entry; diagonal: d; full: d*d row-major).
    std::vector<double> values() const;

    double scalar_value() const;
    const Eigen::VectorXd& diagonal_values() const { return diag_; }

private:
    Rescaling() = default;
    Kind kind_ = Kind::scalar;
    int dim_ = 0;
    double scalar_ = 1.0;
    Eigen::VectorXd diag_;
    Eigen::MatrixXd mat_;
    // cached singular values for the full case
    double smin_ = 1.0, smax_ = 1.0, detabs_ = 1.0;
};

/// A base kernel together with its re-scaling.
struct RescaledKernel {
    Kernel base;
    Rescaling rescale = Rescaling::identity();

    /// Phi(Theta (x - y)). Throws argument_error on dimension mismatch.
    double eval(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const;

    /// Phi(Theta u) for a precomputed difference u.
    double eval_diff(const Eigen::VectorXd& u) const;

    /// Value at coincident arguments; independent of the re-scaling.
    double peak() const { return base.peak(); }

    /// Support radius in *unscaled* coordinates (conservative for full
    /// re-scalings): ||x - y|| beyond this implies a zero kernel value.
    double support_radius_unscaled() const;
};

/// Phi(0) of the base kernel.
double phi_zero(const Kernel& k);

/// Radial Fourier transform of the base kernel at frequency radius rho,
/// with the (2 pi)^{-d/2} convention. Closed form for the Gaussian family,
/// Bessel quadrature for Wendland kernels.
double fourier_transform_radial(const Kernel& k, double rho);

/// Certified lower bound on inf_{||omega|| <= 2M} FourierTransform(Phi_Theta)(omega).
/// Gaussian family: exact closed form. Wendland: conservative quadrature
/// (grid minimum scaled by a 0.9 safety factor; steeper-than-asymptotic tail
/// extrapolation past radius 256). Strictly positive whenever representable.
double fourier_lower_envelope(const RescaledKernel& k, double M);

/// Sampled sup/inf ratio of the base kernel's Fourier transform over radii
/// [0, R]: the factor by which a constant radial envelope would have to
/// stretch to sandwich the transform there (1 for the Gaussian family).
double fourier_envelope_ratio(const Kernel& k, double R);

/// Stage kernels Phi_j built from a Gaussian base by repeated self-convolution:
/// stage j (1-based) uses the (J-j)-th convolution power re-scaled by
/// rescalings[j-1]. Throws for non-Gaussian bases, whose self-convolutions
/// have no closed form; use independent re-scalings per stage instead.
std::vector<RescaledKernel> convolution_schedule(const Kernel& base, int stages,
                                                 const std::vector<Rescaling>& rescalings);

struct AdmissibilityResult {
    double lambda_max = 0.0;
    bool admissible = false;
};

/// lambda_max(Theta_prev' Theta_prev Xi_next' Xi_next) with Xi_next' = Theta_next^{-1},
/// and whether it is <= 1 (+1e-12 slack): consecutive stage re-scalings must not shrink.
AdmissibilityResult check_rescaling_admissibility(const Rescaling& prev, const Rescaling& next,
                                                  int d);

} // namespace msemu
