#pragma once

// Monte-Carlo approximation-error statistics.
//
// For every reconstruction location the error between an accurate sample
// model A(sigma) and the standard model A0 is sampled, eps = A(sigma) x - A0 x,
// and summarized by its mean, the eigenbasis of its covariance, the
// coefficients alpha of the leading p eigenvectors and their
// cross-covariance with sigma.

#include "bae/forward.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace bae::training {

using forward::Matrix;
using forward::Vector;

/// Gaussian prior on the skull conductivity, truncated to [lower, upper].
struct ConductivityPrior {
    double mean = 0.0103;
    double std = 0.0035;
    double lower = 0.0041;
    double upper = 0.033;

    void validate() const;
    [[nodiscard]] double clamp(double sigma) const;
};

/// Radial dipoles with Rayleigh amplitudes of scale sqrt(2) * gamma.
struct DipolePrior {
    double gamma = 1.85;

    [[nodiscard]] double rayleigh_scale() const;
};

[[nodiscard]] double sample_conductivity(const ConductivityPrior& prior, std::mt19937_64& rng);
[[nodiscard]] double sample_rayleigh(double scale, std::mt19937_64& rng);
[[nodiscard]] forward::Dipole sample_dipole(const forward::SourceSpace& space, std::size_t location,
                                            const DipolePrior& prior, std::mt19937_64& rng);

/// Error samples of one location, ordered s = j + J k (dipole j, model k).
struct SampleSet {
    Matrix eps;                            // m x S
    Vector sigma;                          // S
    Matrix moments;                        // 2 x S
    std::vector<std::size_t> model_index;  // k of every sample
};

/// A(sigma) x - A0 x for one pair of two-column blocks.
[[nodiscard]] Vector error_sample(const Matrix& sample_columns, const Matrix& standard_columns,
                                  const Eigen::Vector2d& moment);

[[nodiscard]] SampleSet generate_error_samples(const Matrix& standard_columns,
                                               const std::vector<Matrix>& sample_columns,
                                               const std::vector<double>& sample_sigmas,
                                               const std::vector<forward::Dipole>& dipoles);

/// Held-out (alpha, |x|, sigma) sample used to fit the calibration GP.
struct GpTriplet {
    std::size_t id = 0;
    double alpha = 0.0;
    double amplitude = 0.0;
    double sigma = 0.0;
};

struct ErrorStats {
    Vector eps_mean;       // m
    Matrix eigvecs;        // m x m, columns in descending eigenvalue order
    Vector eigvals;        // m, descending, >= 0
    int p = 1;
    Matrix residual_cov;   // sum_{j>p} lambda_j w_j w_j^T
    Vector cross_cov;      // p, Gamma_{sigma alpha}; every entry <= 0
    double sigma_star = 0.0;
    double sigma_sample_mean = 0.0;
    std::size_t sample_count = 0;
    std::vector<GpTriplet> gp_triplets;

    [[nodiscard]] Eigen::Index electrodes() const { return eps_mean.size(); }
    [[nodiscard]] Matrix basis() const { return eigvecs.leftCols(p); }
    [[nodiscard]] Matrix complement() const { return eigvecs.rightCols(eigvecs.cols() - p); }
    [[nodiscard]] Vector alpha_variances() const { return eigvals.head(p); }
    /// (W^p)^T (eps - eps_mean).
    [[nodiscard]] Vector coefficients(const Vector& eps) const;
    /// Full covariance W Lambda W^T.
    [[nodiscard]] Matrix covariance() const;
};

/// Intermediate quantities kept for invariant checks.
struct StatsDetail {
    Matrix covariance;  // sample covariance (1/(S-1))
    Matrix alpha;       // p x S
    Matrix beta;        // (m-p) x S
};

/// Sample mean and unbiased covariance, descending eigendecomposition,
/// coefficients and cross-covariance. Eigenvectors are oriented so that
/// every entry of the cross-covariance with sigma is <= 0.
[[nodiscard]] ErrorStats estimate_error_stats(const SampleSet& samples, int p, double sigma_star,
                                              StatsDetail* detail = nullptr);

[[nodiscard]] std::vector<GpTriplet> make_gp_triplets(const ErrorStats& stats,
                                                      const SampleSet& held_out);

/// First-order covariance gamma * var(sigma) * J1 J1^T.
[[nodiscard]] Matrix semi_analytic_covariance(const Matrix& jacobian, double sigma_variance,
                                              double gamma);

struct BenefitCheck {
    double noise_side = 0.0;  // |e_*|^2 + tr Gamma_e
    double error_side = 0.0;  // |eps_*|^2 + tr Gamma_eps
    bool verdict = false;     // noise_side < error_side
    std::vector<std::size_t> components;
};

[[nodiscard]] BenefitCheck bae_benefit_check(const ErrorStats& stats, const Matrix& noise_cov,
                                             const Vector& noise_mean);

struct TrainingConfig {
    ConductivityPrior sigma_prior;
    DipolePrior dipole_prior;
    int dipoles_per_location = 100;  // J
    int stats_models = 150;          // K used for the statistics
    int gp_models = 50;              // held-out models for GP triplets
    int gp_dipoles_per_model = 2;
    int p = 1;
};

/// Everything the inversion and calibration stages need, as persisted by
/// the statistics store.
struct StatsStore {
    forward::ModelSpec standard;
    forward::ModelSpec accurate;
    forward::SectorSpec sector;
    TrainingConfig config;
    std::uint64_t seed = 0;
    forward::SourceSpace reconstruction;
    forward::SourceSpace training;
    Matrix standard_leadfield;  // m x 2n at sigma_0
    std::vector<double> stats_sigmas;
    std::vector<double> gp_sigmas;
    std::vector<ErrorStats> stats;
};

[[nodiscard]] StatsStore train(const forward::ModelSpec& standard,
                               const forward::ModelSpec& accurate,
                               const forward::SectorSpec& sector, const TrainingConfig& config,
                               std::uint64_t seed);

}  // namespace bae::training
