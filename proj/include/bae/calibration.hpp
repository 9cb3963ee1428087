#pragma once

// Skull-conductivity estimators that consume a BAE scan result (alpha_hat,
// x_hat at the selected location), and the alternating-minimization
// reference that does not use error statistics at all.

#include "bae/family.hpp"
#include "bae/inversion.hpp"
#include "bae/training.hpp"

#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace bae::calibration {

using forward::Matrix;
using forward::Vector;

enum class Method { cg, cg_iter, gp, map_a2, alternating };

[[nodiscard]] std::string_view method_name(Method method);
/// Accepts "cg", "cg-iter", "gp", "map-a2" and "alt".
[[nodiscard]] Method parse_method(std::string_view name);

struct CalibrationResult {
    Method method = Method::cg;
    double sigma_hat = 0.0;        // clamped to the prior support
    double sigma_unclamped = 0.0;
    int iterations = 0;
    bool converged = true;
    std::vector<double> trace;     // sigma after every iteration, iterative methods only
    double predictive_variance = std::numeric_limits<double>::quiet_NaN();  // GP only
};

/// sigma_* + Gamma_{sigma alpha} Gamma_alpha^{-1} alpha_hat.
[[nodiscard]] CalibrationResult cg_estimate(const Vector& alpha_hat, const training::ErrorStats& stats,
                                            const training::ConductivityPrior& prior);

struct IterationOptions {
    int max_iter = 50;
    double tolerance = 1e-6;
};

/// Relinearized refinement of a starting value. `sample_family` provides
/// the accurate-model columns A^l(sigma) and Jacobians at location l;
/// `standard_columns` is A0^l.
[[nodiscard]] CalibrationResult cg_iter_estimate(const Vector& alpha_hat, const Eigen::Vector2d& x_hat,
                                                 const forward::LeadfieldFamily& sample_family,
                                                 std::size_t location, const Matrix& standard_columns,
                                                 const training::ErrorStats& stats,
                                                 const training::ConductivityPrior& prior,
                                                 double sigma_init,
                                                 const IterationOptions& options = {});

struct GpOptions {
    int degree = 2;                  // H
    double signal_scale = 0.001;     // s_f
    double length_scale = 10.0;      // L
    double jitter_factor = 1e-10;    // jitter = factor * s_f^2
    double amplitude_floor = 0.05;
    double max_condition = 1e12;     // of the polynomial design matrix
};

/// Gaussian process for sigma with a polynomial mean in
/// y = (alpha + k) / |x|, k = w_1^T eps_*, and a squared-exponential kernel
/// in the same input.
struct GpModel {
    Vector coeffs;       // c_0 .. c_H
    double offset = 0.0; // k
    double signal_scale = 0.001;
    double length_scale = 10.0;
    double jitter = 0.0;
    double amplitude_floor = 0.05;
    Vector inputs;       // y of the GP training set
    Vector outputs;      // sigma of the GP training set
    Vector weights;      // K_D^{-1} (f_D - m(D))
    Matrix factor;       // lower Cholesky factor of K_D

    [[nodiscard]] double feature(double alpha, double amplitude) const;
    [[nodiscard]] double mean(double y) const;
    [[nodiscard]] double kernel(double y1, double y2) const;
};

/// Triplets are ordered by id; the first half fits the mean polynomial,
/// the second half becomes the GP training set.
[[nodiscard]] GpModel gp_fit(std::vector<training::GpTriplet> triplets, double offset,
                             const GpOptions& options = {});

[[nodiscard]] CalibrationResult gp_estimate(double alpha_hat, double amplitude, const GpModel& model,
                                            const training::ConductivityPrior& prior);

/// Linearized MAP with the amplitude replaced by the Rayleigh mode:
/// sigma_* + (alpha + c) / (k_l sqrt(2) gamma), c = w_1^T eps_*,
/// k_l = w_1^T J_1 n.
[[nodiscard]] CalibrationResult map_closed_form(double alpha_hat, const training::ErrorStats& stats,
                                                const Matrix& jacobian, const Eigen::Vector2d& orientation,
                                                double gamma, const training::ConductivityPrior& prior);

/// log pi(sigma | alpha) of the linearized model, up to a constant; -inf
/// where the implied amplitude is not positive.
[[nodiscard]] double map_log_posterior(double sigma, double alpha_hat, double c, double k_l,
                                       double sigma_star, double gamma);

struct AlternatingOptions {
    int max_outer = 25;
    double tolerance = 1e-6;
    int max_halvings = 5;
};

struct AlternatingResult {
    inversion::ScanResult scan;          // rescan at the final sigma
    CalibrationResult calibration;
    std::vector<double> objective_trace; // scan functional of every outer iteration
    bool oscillating = false;
};

/// Alternates a standard scan with A(sigma_k) and a damped 1-D linearized
/// update of sigma at the selected location.
[[nodiscard]] AlternatingResult alternating_scan(const Vector& v, const forward::LeadfieldFamily& family,
                                                 const inversion::NoiseModel& noise,
                                                 const training::ConductivityPrior& prior,
                                                 double sigma_init, const AlternatingOptions& options = {});

}  // namespace bae::calibration
