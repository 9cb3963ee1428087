#include "bae/errors.hpp"
#include "bae/rng.hpp"
#include "bae/training.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

using namespace bae;
using namespace bae::training;

namespace {

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2 * std::numbers::pi); }
double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// Random samples with a planted rank-2 structure plus small isotropic noise.
SampleSet synthetic_samples(Eigen::Index m, std::size_t J, std::size_t K, std::uint64_t seed) {
    auto rng = make_stream(seed, "synthetic");
    std::normal_distribution<double> normal;
    Matrix a0(m, 2);
    for (auto& v : a0.reshaped()) v = normal(rng);
    Matrix d1(m, 2), d2(m, 2);
    for (auto& v : d1.reshaped()) v = normal(rng);
    for (auto& v : d2.reshaped()) v = 0.1 * normal(rng);
    std::vector<Matrix> blocks;
    std::vector<double> sigmas;
    for (std::size_t k = 0; k < K; ++k) {
        const double s = 0.01 + 0.003 * normal(rng);
        sigmas.push_back(s);
        blocks.push_back(a0 + (s - 0.01) * 100 * d1 + d2 * normal(rng));
    }
    forward::SourceSpace space;
    space.locations = {{0.0, 0.5}};
    std::vector<forward::Dipole> dipoles;
    for (std::size_t j = 0; j < J; ++j) dipoles.push_back(sample_dipole(space, 0, {}, rng));
    return generate_error_samples(a0, blocks, sigmas, dipoles);
}

Matrix naive_covariance(const Matrix& x) {
    const Eigen::Index m = x.rows();
    const Eigen::Index n = x.cols();
    Vector mean = Vector::Zero(m);
    for (Eigen::Index s = 0; s < n; ++s) mean += x.col(s);
    mean /= static_cast<double>(n);
    Matrix c = Matrix::Zero(m, m);
    for (Eigen::Index s = 0; s < n; ++s) {
        for (Eigen::Index a = 0; a < m; ++a) {
            for (Eigen::Index b = 0; b < m; ++b) c(a, b) += (x(a, s) - mean[a]) * (x(b, s) - mean[b]);
        }
    }
    return c / static_cast<double>(n - 1);
}

}  // namespace

TEST_CASE("Rayleigh sampler passes a Kolmogorov-Smirnov test") {
    const DipolePrior prior;
    const double scale = prior.rayleigh_scale();
    CHECK(scale == doctest::Approx(std::numbers::sqrt2 * 1.85));
    auto rng = make_stream(11, "ks");
    const int n = 20000;
    std::vector<double> x(n);
    for (auto& v : x) v = sample_rayleigh(scale, rng);
    std::sort(x.begin(), x.end());
    double d = 0.0;
    for (int i = 0; i < n; ++i) {
        const double f = 1.0 - std::exp(-x[i] * x[i] / (2 * scale * scale));
        d = std::max({d, std::abs(f - static_cast<double>(i) / n), std::abs(f - static_cast<double>(i + 1) / n)});
    }
    CHECK(d < 1.63 / std::sqrt(static_cast<double>(n)));  // 1% critical value
    double mean = 0.0;
    for (double v : x) mean += v;
    CHECK(mean / n == doctest::Approx(scale * std::sqrt(std::numbers::pi / 2)).epsilon(0.01));
}

TEST_CASE("conductivity draws follow the truncated normal") {
    const ConductivityPrior prior;
    auto rng = make_stream(5, "tn");
    const int n = 40000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double s = sample_conductivity(prior, rng);
        REQUIRE(s >= prior.lower);
        REQUIRE(s <= prior.upper);
        sum += s;
        sq += s * s;
    }
    const double a = (prior.lower - prior.mean) / prior.std;
    const double b = (prior.upper - prior.mean) / prior.std;
    const double z = normal_cdf(b) - normal_cdf(a);
    const double shift = (normal_pdf(a) - normal_pdf(b)) / z;
    const double mean = prior.mean + prior.std * shift;
    const double var = prior.std * prior.std * (1 + (a * normal_pdf(a) - b * normal_pdf(b)) / z - shift * shift);
    const double sample_mean = sum / n;
    const double sample_var = sq / n - sample_mean * sample_mean;
    CHECK(std::abs(sample_mean - mean) < 4 * std::sqrt(var / n));
    CHECK(sample_var == doctest::Approx(var).epsilon(0.03));
}

TEST_CASE("prior validation and clamping") {
    ConductivityPrior bad;
    bad.lower = 0.02;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    const ConductivityPrior prior;
    CHECK(prior.clamp(1.0) == prior.upper);
    CHECK(prior.clamp(0.0) == prior.lower);
    CHECK(prior.clamp(0.01) == 0.01);
}

TEST_CASE("error samples are ordered dipole-fastest") {
    const Matrix a0 = Matrix::Identity(3, 2);
    std::vector<Matrix> blocks{2 * a0, 3 * a0};
    std::vector<forward::Dipole> dipoles{{0, {1.0, 0.0}}, {0, {0.0, 2.0}}, {0, {1.0, 1.0}}};
    const SampleSet s = generate_error_samples(a0, blocks, {0.01, 0.02}, dipoles);
    REQUIRE(s.eps.cols() == 6);
    for (std::size_t k = 0; k < 2; ++k) {
        for (std::size_t j = 0; j < 3; ++j) {
            const auto c = static_cast<Eigen::Index>(j + 3 * k);
            CHECK(s.model_index[static_cast<std::size_t>(c)] == k);
            CHECK(s.sigma[c] == (k == 0 ? 0.01 : 0.02));
            CHECK((s.eps.col(c) - static_cast<double>(k + 1) * a0 * dipoles[j].moment).norm() == 0.0);
        }
    }
    CHECK_THROWS_AS((void)generate_error_samples(a0, {Matrix::Zero(4, 2)}, {0.01}, dipoles), ShapeError);
    CHECK_THROWS_AS((void)generate_error_samples(a0, blocks, {0.01}, dipoles), ShapeError);
}

TEST_CASE("error statistics satisfy the eigen identities") {
    const SampleSet samples = synthetic_samples(12, 20, 30, 1);
    StatsDetail detail;
    const ErrorStats stats = estimate_error_stats(samples, 2, 0.0103, &detail);
    const Eigen::Index m = 12;

    const Matrix naive = naive_covariance(samples.eps);
    CHECK((detail.covariance - naive).norm() / naive.norm() < 1e-12);
    CHECK((detail.covariance - stats.covariance()).norm() / naive.norm() < 1e-10);
    CHECK((stats.eigvecs.transpose() * stats.eigvecs - Matrix::Identity(m, m)).norm() < 1e-12);
    for (Eigen::Index k = 1; k < m; ++k) CHECK(stats.eigvals[k - 1] >= stats.eigvals[k]);
    CHECK(stats.eigvals.minCoeff() >= 0.0);

    const Matrix cov_alpha = naive_covariance(detail.alpha);
    for (Eigen::Index a = 0; a < 2; ++a) {
        CHECK(cov_alpha(a, a) == doctest::Approx(stats.eigvals[a]).epsilon(1e-10));
    }
    CHECK(std::abs(cov_alpha(0, 1)) < 1e-10 * stats.eigvals[0]);
    Matrix joint(m, samples.eps.cols());
    joint << detail.alpha, detail.beta;
    const Matrix cross = naive_covariance(joint).topRightCorner(2, m - 2);
    CHECK(cross.cwiseAbs().maxCoeff() < 1e-10 * stats.eigvals[0]);

    const Matrix q = stats.complement();
    CHECK((stats.residual_cov - q * stats.eigvals.tail(m - 2).asDiagonal() * q.transpose()).norm() < 1e-14);
    CHECK(stats.cross_cov.maxCoeff() <= 0.0);

    // Independent cross-covariance.
    const double sbar = samples.sigma.mean();
    for (Eigen::Index k = 0; k < 2; ++k) {
        double c = 0.0;
        for (Eigen::Index s = 0; s < samples.eps.cols(); ++s) {
            c += stats.eigvecs.col(k).dot(samples.eps.col(s) - stats.eps_mean) * (samples.sigma[s] - sbar);
        }
        CHECK(stats.cross_cov[k] == doctest::Approx(c / static_cast<double>(samples.eps.cols() - 1)).epsilon(1e-10));
    }
    CHECK(stats.coefficients(samples.eps.col(3))[0] == doctest::Approx(detail.alpha(0, 3)).epsilon(1e-12));
}

TEST_CASE("error statistics guard their inputs") {
    SampleSet small = synthetic_samples(12, 2, 5, 2);
    CHECK_THROWS_AS((void)estimate_error_stats(small, 1, 0.01), StatisticsError);
    SampleSet ok = synthetic_samples(12, 5, 5, 2);
    CHECK_THROWS_AS((void)estimate_error_stats(ok, 0, 0.01), StatisticsError);
    CHECK_THROWS_AS((void)estimate_error_stats(ok, 13, 0.01), StatisticsError);
    ok.eps(0, 0) = std::nan("");
    CHECK_THROWS_AS((void)estimate_error_stats(ok, 1, 0.01), DataError);
}

TEST_CASE("GP triplets project held-out samples on the first eigenvector") {
    const SampleSet train = synthetic_samples(8, 10, 20, 3);
    const SampleSet held = synthetic_samples(8, 3, 4, 4);
    const ErrorStats stats = estimate_error_stats(train, 1, 0.0103);
    const auto triplets = make_gp_triplets(stats, held);
    REQUIRE(triplets.size() == 12);
    for (std::size_t s = 0; s < triplets.size(); ++s) {
        const auto c = static_cast<Eigen::Index>(s);
        CHECK(triplets[s].id == s);
        CHECK(triplets[s].alpha == doctest::Approx(stats.eigvecs.col(0).dot(held.eps.col(c) - stats.eps_mean)));
        CHECK(triplets[s].amplitude == doctest::Approx(held.moments.col(c).norm()));
        CHECK(triplets[s].sigma == held.sigma[c]);
    }
}

TEST_CASE("semi-analytic covariance has rank at most two") {
    Matrix j(6, 2);
    j << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 13;
    const Matrix c = semi_analytic_covariance(j, 4e-6, 1.85);
    CHECK((c - 1.85 * 4e-6 * j * j.transpose()).norm() == doctest::Approx(0.0));
    Eigen::SelfAdjointEigenSolver<Matrix> eig(c);
    CHECK(eig.eigenvalues().head(4).cwiseAbs().maxCoeff() < 1e-12 * eig.eigenvalues()[5]);
}

TEST_CASE("benefit check compares noise and error energy") {
    ErrorStats stats;
    stats.eps_mean = Vector::Constant(4, 0.1);
    stats.eigvecs = Matrix::Identity(4, 4);
    stats.eigvals = Vector::Constant(4, 0.01);
    // error side: 4 * 0.01 + 4 * 0.01 = 0.08
    const BenefitCheck quiet = bae_benefit_check(stats, 0.001 * Matrix::Identity(4, 4), Vector::Zero(4));
    CHECK(quiet.noise_side == doctest::Approx(0.004));
    CHECK(quiet.error_side == doctest::Approx(0.08));
    CHECK(quiet.verdict);
    CHECK(quiet.components.size() == 4);
    const BenefitCheck loud = bae_benefit_check(stats, 0.1 * Matrix::Identity(4, 4), Vector::Zero(4));
    CHECK_FALSE(loud.verdict);
    CHECK(loud.components.empty());
    CHECK_THROWS_AS((void)bae_benefit_check(stats, Matrix::Identity(3, 3), Vector::Zero(3)), ShapeError);
}

TEST_CASE("training replays from its seed and matches a direct recomputation") {
    forward::ModelSpec coarse;
    coarse.grid_size = 33;
    forward::ModelSpec fine = coarse;
    fine.grid_size = 65;
    forward::SectorSpec sector{60, 120, 0.4, 0.7, 0.0625, 1, false};
    TrainingConfig config;
    config.dipoles_per_location = 10;
    config.stats_models = 6;
    config.gp_models = 12;
    config.gp_dipoles_per_model = 2;

    const StatsStore a = train(coarse, fine, sector, config, 7);
    const StatsStore b = train(coarse, fine, sector, config, 7);
    REQUIRE(a.stats.size() == a.reconstruction.size());
    REQUIRE(a.stats.size() > 2);
    CHECK(a.stats_sigmas == b.stats_sigmas);
    for (std::size_t i = 0; i < a.stats.size(); ++i) {
        CHECK(a.stats[i].eigvecs == b.stats[i].eigvecs);
        CHECK(a.stats[i].gp_triplets.size() == 24);
        CHECK(a.stats[i].sample_count == 60);
    }
    const StatsStore c = train(coarse, fine, sector, config, 8);
    CHECK(a.stats_sigmas != c.stats_sigmas);

    // Location 1 from scratch: fresh models, same dipole stream.
    const std::size_t i = 1;
    auto rng = make_stream(7, "train-dipole", {i});
    std::vector<Eigen::Vector2d> moments;
    for (int j = 0; j < config.dipoles_per_location; ++j) {
        moments.push_back(sample_dipole(a.reconstruction, i, config.dipole_prior, rng).moment);
    }
    forward::SourceSpace here;
    here.locations = {a.training.locations[i]};
    forward::SourceSpace there;
    there.locations = {a.reconstruction.locations[i]};
    const Matrix a0 = forward::leadfield(forward::build_model(coarse), there);
    Vector mean = Vector::Zero(a0.rows());
    for (double s : a.stats_sigmas) {
        const Matrix as = forward::leadfield(forward::build_model(fine.with_skull(s)), here);
        for (const auto& x : moments) mean += (as - a0) * x;
    }
    mean /= static_cast<double>(a.stats_sigmas.size() * moments.size());
    CHECK((mean - a.stats[i].eps_mean).norm() <= 1e-12 * mean.norm());
}
