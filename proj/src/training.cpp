#include "bae/training.hpp"

#include "bae/errors.hpp"
#include "bae/parallel.hpp"
#include "bae/rng.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <string>

namespace bae::training {

void ConductivityPrior::validate() const {
    if (!(lower < mean && mean < upper) || !(std > 0.0) || !(lower > 0.0)) {
        throw ConfigError("conductivity prior needs 0 < lower < mean < upper and std > 0");
    }
}

double ConductivityPrior::clamp(double sigma) const { return std::clamp(sigma, lower, upper); }

double DipolePrior::rayleigh_scale() const { return std::numbers::sqrt2 * gamma; }

double sample_conductivity(const ConductivityPrior& prior, std::mt19937_64& rng) {
    prior.validate();
    std::normal_distribution<double> normal(prior.mean, prior.std);
    for (;;) {
        const double s = normal(rng);
        if (s >= prior.lower && s <= prior.upper) return s;
    }
}

double sample_rayleigh(double scale, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    for (;;) {
        const double u = uniform(rng);
        if (u > 0.0) return scale * std::sqrt(-2.0 * std::log1p(-u));
    }
}

forward::Dipole sample_dipole(const forward::SourceSpace& space, std::size_t location,
                              const DipolePrior& prior, std::mt19937_64& rng) {
    return forward::Dipole::radial(space, location, sample_rayleigh(prior.rayleigh_scale(), rng));
}

Vector error_sample(const Matrix& sample_columns, const Matrix& standard_columns,
                    const Eigen::Vector2d& moment) {
    return sample_columns * moment - standard_columns * moment;
}

SampleSet generate_error_samples(const Matrix& standard_columns,
                                 const std::vector<Matrix>& sample_columns,
                                 const std::vector<double>& sample_sigmas,
                                 const std::vector<forward::Dipole>& dipoles) {
    if (sample_columns.size() != sample_sigmas.size()) {
        throw ShapeError("sample models and conductivities differ in count");
    }
    if (standard_columns.cols() != 2) throw ShapeError("standard block must have two columns");
    const Eigen::Index m = standard_columns.rows();
    for (const Matrix& block : sample_columns) {
        if (block.rows() != m || block.cols() != 2) {
            throw ShapeError("sample model has " + std::to_string(block.rows()) +
                             " electrodes, standard model has " + std::to_string(m));
        }
    }
    const std::size_t J = dipoles.size();
    const std::size_t K = sample_columns.size();
    const auto S = static_cast<Eigen::Index>(J * K);

    SampleSet out;
    out.eps.resize(m, S);
    out.sigma.resize(S);
    out.moments.resize(2, S);
    out.model_index.resize(static_cast<std::size_t>(S));
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t j = 0; j < J; ++j) {
            const auto s = static_cast<Eigen::Index>(j + J * k);
            out.eps.col(s) = error_sample(sample_columns[k], standard_columns, dipoles[j].moment);
            out.sigma[s] = sample_sigmas[k];
            out.moments.col(s) = dipoles[j].moment;
            out.model_index[static_cast<std::size_t>(s)] = k;
        }
    }
    return out;
}

Vector ErrorStats::coefficients(const Vector& eps) const {
    return basis().transpose() * (eps - eps_mean);
}

Matrix ErrorStats::covariance() const {
    return eigvecs * eigvals.asDiagonal() * eigvecs.transpose();
}

namespace {

// Makes the entry of largest magnitude positive.
void canonical_sign(Eigen::Ref<Vector> v) {
    Eigen::Index idx = 0;
    v.cwiseAbs().maxCoeff(&idx);
    if (v[idx] < 0.0) v = -v;
}

}  // namespace

ErrorStats estimate_error_stats(const SampleSet& samples, int p, double sigma_star,
                                StatsDetail* detail) {
    const Eigen::Index m = samples.eps.rows();
    const Eigen::Index S = samples.eps.cols();
    if (p < 1 || p > m) throw StatisticsError("retained rank p must lie in [1, m]");
    if (S < m + 1) {
        throw StatisticsError("need at least m + 1 = " + std::to_string(m + 1) +
                              " samples, got " + std::to_string(S));
    }
    if (samples.sigma.size() != S) throw ShapeError("one conductivity per sample is required");
    if (!samples.eps.allFinite() || !samples.sigma.allFinite()) {
        throw DataError("error samples contain non-finite values");
    }

    ErrorStats stats;
    stats.p = p;
    stats.sigma_star = sigma_star;
    stats.sample_count = static_cast<std::size_t>(S);
    stats.eps_mean = samples.eps.rowwise().mean();
    stats.sigma_sample_mean = samples.sigma.mean();

    const Matrix centered = samples.eps.colwise() - stats.eps_mean;
    Matrix cov = Matrix::Zero(m, m);
    cov.selfadjointView<Eigen::Lower>().rankUpdate(centered, 1.0 / static_cast<double>(S - 1));
    cov = cov.selfadjointView<Eigen::Lower>();

    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    if (eig.info() != Eigen::Success) throw StatisticsError("eigendecomposition failed");
    stats.eigvecs = eig.eigenvectors().rowwise().reverse();
    stats.eigvals = eig.eigenvalues().reverse().cwiseMax(0.0);

    const Vector sigma_centered = samples.sigma.array() - stats.sigma_sample_mean;
    Matrix alpha = stats.eigvecs.leftCols(p).transpose() * centered;
    stats.cross_cov = alpha * sigma_centered / static_cast<double>(S - 1);
    for (Eigen::Index k = 0; k < p; ++k) {
        bool flip = false;
        if (stats.cross_cov[k] > 0.0) {
            flip = true;
        } else if (stats.cross_cov[k] == 0.0) {
            Eigen::Index idx = 0;
            stats.eigvecs.col(k).cwiseAbs().maxCoeff(&idx);
            flip = stats.eigvecs(idx, k) < 0.0;
        }
        if (flip) {
            stats.eigvecs.col(k) *= -1.0;
            alpha.row(k) *= -1.0;
            stats.cross_cov[k] = -stats.cross_cov[k];
        }
    }
    for (Eigen::Index k = p; k < m; ++k) canonical_sign(stats.eigvecs.col(k));

    const Matrix q = stats.eigvecs.rightCols(m - p);
    stats.residual_cov = q * stats.eigvals.tail(m - p).asDiagonal() * q.transpose();

    if (detail != nullptr) {
        detail->covariance = cov;
        detail->alpha = alpha;
        detail->beta = q.transpose() * centered;
    }
    return stats;
}

std::vector<GpTriplet> make_gp_triplets(const ErrorStats& stats, const SampleSet& held_out) {
    std::vector<GpTriplet> out;
    out.reserve(static_cast<std::size_t>(held_out.eps.cols()));
    for (Eigen::Index s = 0; s < held_out.eps.cols(); ++s) {
        const Vector alpha = stats.coefficients(held_out.eps.col(s));
        out.push_back({static_cast<std::size_t>(s), alpha[0], held_out.moments.col(s).norm(),
                       held_out.sigma[s]});
    }
    return out;
}

Matrix semi_analytic_covariance(const Matrix& jacobian, double sigma_variance, double gamma) {
    return gamma * sigma_variance * jacobian * jacobian.transpose();
}

BenefitCheck bae_benefit_check(const ErrorStats& stats, const Matrix& noise_cov,
                               const Vector& noise_mean) {
    const Eigen::Index m = stats.electrodes();
    if (noise_cov.rows() != m || noise_cov.cols() != m || noise_mean.size() != m) {
        throw ShapeError("noise model does not match the electrode count");
    }
    const Vector error_diag =
        (stats.eigvecs.array().square().matrix() * stats.eigvals).eval();
    BenefitCheck out;
    out.noise_side = noise_mean.squaredNorm() + noise_cov.trace();
    out.error_side = stats.eps_mean.squaredNorm() + stats.eigvals.sum();
    out.verdict = out.noise_side < out.error_side;
    for (Eigen::Index k = 0; k < m; ++k) {
        const double noise_k = noise_mean[k] * noise_mean[k] + noise_cov(k, k);
        const double error_k = stats.eps_mean[k] * stats.eps_mean[k] + error_diag[k];
        if (noise_k < error_k) out.components.push_back(static_cast<std::size_t>(k));
    }
    return out;
}

StatsStore train(const forward::ModelSpec& standard, const forward::ModelSpec& accurate,
                 const forward::SectorSpec& sector, const TrainingConfig& config,
                 std::uint64_t seed) {
    config.sigma_prior.validate();
    if (config.dipoles_per_location < 1 || config.stats_models < 1 || config.gp_models < 0 ||
        config.gp_dipoles_per_model < 0) {
        throw ConfigError("training sample counts must be positive");
    }
    if (standard.electrode_count != accurate.electrode_count) {
        throw ShapeError("standard and accurate models differ in electrode count");
    }

    StatsStore store;
    store.standard = standard;
    store.accurate = accurate;
    store.sector = sector;
    store.config = config;
    store.seed = seed;
    const forward::SourceLayout layout = forward::make_layout(sector, standard, accurate);
    store.reconstruction = layout.reconstruction;
    store.training = layout.training;
    store.standard_leadfield = forward::leadfield(forward::build_model(standard), store.reconstruction);

    auto sigma_rng = make_stream(seed, "train-sigma");
    for (int k = 0; k < config.stats_models; ++k) {
        store.stats_sigmas.push_back(sample_conductivity(config.sigma_prior, sigma_rng));
    }
    for (int k = 0; k < config.gp_models; ++k) {
        store.gp_sigmas.push_back(sample_conductivity(config.sigma_prior, sigma_rng));
    }

    std::vector<double> all_sigmas = store.stats_sigmas;
    all_sigmas.insert(all_sigmas.end(), store.gp_sigmas.begin(), store.gp_sigmas.end());
    std::vector<Matrix> sample_leadfields(all_sigmas.size());
    parallel_for(all_sigmas.size(), [&](std::size_t k) {
        sample_leadfields[k] =
            forward::leadfield(forward::build_model(accurate.with_skull(all_sigmas[k])), store.training);
    });

    const std::size_t n = store.reconstruction.size();
    const auto K = static_cast<std::size_t>(config.stats_models);
    store.stats.resize(n);
    parallel_for(n, [&](std::size_t i) {
        const auto col = 2 * static_cast<Eigen::Index>(i);
        const Matrix a0 = store.standard_leadfield.middleCols(col, 2);
        std::vector<Matrix> blocks;
        blocks.reserve(all_sigmas.size());
        for (const Matrix& lf : sample_leadfields) blocks.push_back(lf.middleCols(col, 2));

        auto dipole_rng = make_stream(seed, "train-dipole", {i});
        std::vector<forward::Dipole> dipoles;
        for (int j = 0; j < config.dipoles_per_location; ++j) {
            dipoles.push_back(sample_dipole(store.reconstruction, i, config.dipole_prior, dipole_rng));
        }
        const std::vector<Matrix> stats_blocks(blocks.begin(), blocks.begin() + static_cast<long>(K));
        const SampleSet samples = generate_error_samples(a0, stats_blocks, store.stats_sigmas, dipoles);
        ErrorStats stats = estimate_error_stats(samples, config.p, config.sigma_prior.mean);

        if (config.gp_models > 0 && config.gp_dipoles_per_model > 0) {
            auto gp_rng = make_stream(seed, "train-gp-dipole", {i});
            std::vector<forward::Dipole> gp_dipoles;
            for (int j = 0; j < config.gp_dipoles_per_model; ++j) {
                gp_dipoles.push_back(
                    sample_dipole(store.reconstruction, i, config.dipole_prior, gp_rng));
            }
            const std::vector<Matrix> gp_blocks(blocks.begin() + static_cast<long>(K), blocks.end());
            stats.gp_triplets =
                make_gp_triplets(stats, generate_error_samples(a0, gp_blocks, store.gp_sigmas, gp_dipoles));
        }
        store.stats[i] = std::move(stats);
    });
    return store;
}

}  // namespace bae::training
