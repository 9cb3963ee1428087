#pragma once

// Single-dipole scanning: the standard scan with a fixed leadfield and the
// BAE scan that also estimates the low-rank approximation-error
// coefficients at every candidate location.

#include "bae/forward.hpp"
#include "bae/training.hpp"

#include <optional>
#include <string>
#include <vector>

namespace bae::inversion {

using forward::Matrix;
using forward::Vector;

struct NoiseModel {
    Vector mean;  // e_*
    Matrix cov;   // Gamma_e

    /// N(0, s^2 I).
    [[nodiscard]] static NoiseModel isotropic(Eigen::Index m, double scale);
    /// Isotropic model for a simulated measurement. A noise-free measurement
    /// gets a floor of 1e-8 |v| / sqrt(m) so the whitener stays defined.
    [[nodiscard]] static NoiseModel for_measurement(const forward::Measurement& measurement);

    /// s when cov is exactly s^2 I.
    [[nodiscard]] std::optional<double> isotropic_scale() const;
};

/// Lower-triangular L with L^T L = cov^{-1}, i.e. L = C^{-1} for cov = C C^T.
/// Throws FactorizationError when a Cholesky pivot falls below the jitter
/// threshold.
[[nodiscard]] Matrix whitener(const Matrix& cov);

struct ScanResult {
    bool bae = false;
    std::size_t location = 0;
    Eigen::Vector2d x_hat = Eigen::Vector2d::Zero();
    Vector alpha_hat;        // p entries, empty for the standard scan
    double functional_value = 0.0;
    Vector eps_prime_hat;    // W^p_l alpha_hat, zero for the standard scan

    // Per-location estimates, kept for goodness-of-fit maps and diagnostics.
    Vector per_location_values;  // +inf at skipped locations
    Matrix moments;              // 2 x n
    Matrix alphas;               // p x n
    Matrix predictions;          // m x n, fitted data A0 x + eps_* + W alpha
    std::vector<std::string> warnings;
};

[[nodiscard]] ScanResult standard_dipole_scan(const Vector& v, const Matrix& leadfield,
                                              const NoiseModel& noise);

/// BAE scan against fixed statistics. With isotropic noise the whitener of
/// Gamma_{eps''} + s^2 I is taken from the eigenbasis of the statistics,
/// which gives the same estimates and functional values as the Cholesky
/// factor at O(m^2) cost per location; other noise models use Cholesky
/// whiteners built on every call.
class BaeScanner {
public:
    BaeScanner(const Matrix& leadfield, std::vector<training::ErrorStats> stats);

    [[nodiscard]] ScanResult scan(const Vector& v, const NoiseModel& noise) const;
    /// Forces the Cholesky path regardless of the noise structure.
    [[nodiscard]] ScanResult scan_cholesky(const Vector& v, const NoiseModel& noise) const;

private:
    struct Location {
        Matrix rotated;          // W^T A0^i
        Vector rotated_mean;     // W^T eps_*
        std::vector<Eigen::Index> free_alpha;  // alpha entries not pinned to 0
    };

    [[nodiscard]] ScanResult scan_spectral(const Vector& v, const NoiseModel& noise, double scale) const;
    [[nodiscard]] ScanResult start(const Vector& v, const NoiseModel& noise) const;
    void record(ScanResult& r, std::size_t i, const Eigen::Vector2d& x, const Vector& alpha,
                double value) const;

    Matrix leadfield_;
    std::vector<training::ErrorStats> stats_;
    std::vector<Location> locations_;
    Eigen::Index p_ = 0;
};

[[nodiscard]] ScanResult bae_dipole_scan(const Vector& v, const Matrix& leadfield,
                                         const std::vector<training::ErrorStats>& stats,
                                         const NoiseModel& noise);

/// 1 - |v - prediction_i| / |v| for every location (-inf where skipped).
[[nodiscard]] Vector goodness_of_fit_map(const ScanResult& result, const Vector& v);

}  // namespace bae::inversion
