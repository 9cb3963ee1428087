#include "bae/errors.hpp"
#include "bae/inversion.hpp"
#include "bae/rng.hpp"

#include <doctest.h>

#include <Eigen/LU>

#include <cmath>

using namespace bae;
using namespace bae::inversion;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
    std::normal_distribution<double> normal;
    Matrix m(r, c);
    for (auto& v : m.reshaped()) v = normal(rng);
    return m;
}

// Error statistics with a dominant direction, built from random samples.
training::ErrorStats random_stats(Eigen::Index m, int p, std::mt19937_64& rng) {
    const Matrix dir = random_matrix(m, 1, rng);
    Matrix eps = 0.05 * random_matrix(m, 4 * m, rng);
    std::normal_distribution<double> normal;
    Vector sigma(4 * m);
    for (Eigen::Index s = 0; s < eps.cols(); ++s) {
        sigma[s] = 0.01 + 0.003 * normal(rng);
        eps.col(s) += (sigma[s] - 0.01) * 100 * dir + 0.1 * Vector::Ones(m);
    }
    training::SampleSet set;
    set.eps = eps;
    set.sigma = sigma;
    set.moments = Matrix::Zero(2, eps.cols());
    set.model_index.assign(static_cast<std::size_t>(eps.cols()), 0);
    return training::estimate_error_stats(set, p, 0.0103);
}

struct Oracle {
    Eigen::Vector2d x;
    Vector alpha;
    double value;
};

// Minimizer of |v - e - eps - A x - W a|^2_{(G'' + Ge)^{-1}} + a^T Lambda_p^{-1} a
// from the normal equations with an explicit inverse.
Oracle bae_oracle(const Vector& v, const Matrix& a, const training::ErrorStats& s, const NoiseModel& noise) {
    const Eigen::Index m = v.size();
    const Eigen::Index p = s.p;
    Matrix b(m, 2 + p);
    b << a, s.basis();
    const Matrix g_inv = (s.residual_cov + noise.cov).inverse();
    Matrix prior = Matrix::Zero(2 + p, 2 + p);
    for (Eigen::Index k = 0; k < p; ++k) prior(2 + k, 2 + k) = 1.0 / s.eigvals[k];
    const Vector r = v - noise.mean - s.eps_mean;
    const Vector z = (b.transpose() * g_inv * b + prior).fullPivLu().solve(b.transpose() * g_inv * r);
    const Vector res = r - b * z;
    const Vector alpha = z.tail(p);
    return {z.head<2>(), alpha, res.dot(g_inv * res) + alpha.dot(prior.bottomRightCorner(p, p) * alpha)};
}

}  // namespace

TEST_CASE("noise models") {
    const NoiseModel n = NoiseModel::isotropic(4, 0.5);
    CHECK(n.isotropic_scale().value() == doctest::Approx(0.5));
    CHECK(n.mean.isZero());
    CHECK_THROWS_AS((void)NoiseModel::isotropic(4, 0.0), ConfigError);
    CHECK_THROWS_AS((void)NoiseModel::isotropic(4, std::nan("")), ConfigError);
    NoiseModel full = n;
    full.cov(0, 1) = full.cov(1, 0) = 0.01;
    CHECK_FALSE(full.isotropic_scale().has_value());

    forward::Measurement clean;
    clean.values = Vector::Constant(4, 2.0);
    const NoiseModel floor = NoiseModel::for_measurement(clean);
    CHECK(floor.isotropic_scale().value() == doctest::Approx(1e-8 * 4.0 / 2.0));
    clean.noise_scale = 0.25;
    CHECK(NoiseModel::for_measurement(clean).isotropic_scale().value() == 0.25);
}

TEST_CASE("whitener inverts the covariance") {
    auto rng = make_stream(1, "whiten");
    const Matrix a = random_matrix(6, 6, rng);
    const Matrix cov = a * a.transpose() + 0.1 * Matrix::Identity(6, 6);
    const Matrix l = whitener(cov);
    CHECK((l.transpose() * l - cov.inverse()).norm() / cov.inverse().norm() < 1e-10);
    CHECK(l.isLowerTriangular(0.0));
    Matrix singular = Matrix::Zero(3, 3);
    singular(0, 0) = 1.0;
    CHECK_THROWS_AS((void)whitener(singular), FactorizationError);
    Matrix nearly = Matrix::Identity(3, 3);
    nearly(2, 2) = 1e-16;
    CHECK_THROWS_AS((void)whitener(nearly), FactorizationError);
}

TEST_CASE("standard scan recovers an exact on-grid source") {
    auto rng = make_stream(2, "scan");
    const Matrix a = random_matrix(10, 2 * 7, rng);
    const Eigen::Vector2d x{0.7, -1.2};
    const Vector v = a.middleCols(6, 2) * x;
    const ScanResult r = standard_dipole_scan(v, a, NoiseModel::isotropic(10, 0.01));
    CHECK(r.location == 3);
    CHECK((r.x_hat - x).norm() < 1e-12);
    CHECK(r.functional_value < 1e-20);
    CHECK_FALSE(r.bae);
}

TEST_CASE("standard scan values match least squares per location") {
    auto rng = make_stream(3, "scan");
    const Matrix a = random_matrix(10, 2 * 5, rng);
    const Vector v = random_matrix(10, 1, rng);
    const Matrix c = random_matrix(10, 10, rng);
    NoiseModel noise{0.1 * random_matrix(10, 1, rng), c * c.transpose() + Matrix::Identity(10, 10)};
    const ScanResult r = standard_dipole_scan(v, a, noise);
    const Matrix g_inv = noise.cov.inverse();
    for (Eigen::Index i = 0; i < 5; ++i) {
        const Matrix ai = a.middleCols(2 * i, 2);
        const Eigen::Vector2d x = (ai.transpose() * g_inv * ai).ldlt().solve(ai.transpose() * g_inv * (v - noise.mean));
        const Vector res = v - noise.mean - ai * x;
        CHECK((r.moments.col(i) - x).norm() < 1e-10 * x.norm());
        CHECK(r.per_location_values[i] == doctest::Approx(res.dot(g_inv * res)).epsilon(1e-10));
    }
    Eigen::Index best = 0;
    r.per_location_values.minCoeff(&best);
    CHECK(r.location == static_cast<std::size_t>(best));
}

TEST_CASE("scan ties go to the lowest index and rank-deficient blocks are skipped") {
    auto rng = make_stream(4, "scan");
    Matrix a = random_matrix(6, 2 * 4, rng);
    a.middleCols(4, 2) = a.middleCols(2, 2);
    a.middleCols(0, 2).setZero();
    const Vector v = a.middleCols(2, 2) * Eigen::Vector2d{1.0, 2.0};
    const ScanResult r = standard_dipole_scan(v, a, NoiseModel::isotropic(6, 1.0));
    CHECK(r.location == 1);
    CHECK(std::isinf(r.per_location_values[0]));
    CHECK(r.warnings.size() == 1);
    CHECK_THROWS_AS((void)standard_dipole_scan(v, Matrix::Zero(6, 2), NoiseModel::isotropic(6, 1.0)), DataError);
    CHECK_THROWS_AS((void)standard_dipole_scan(Vector::Zero(5), a, NoiseModel::isotropic(6, 1.0)), ShapeError);
}

TEST_CASE("BAE scan matches the normal-equations oracle on both paths") {
    auto rng = make_stream(5, "bae");
    const Eigen::Index m = 8;
    for (int p : {1, 2}) {
        const Matrix a = random_matrix(m, 2 * 6, rng);
        std::vector<training::ErrorStats> stats;
        for (int i = 0; i < 6; ++i) stats.push_back(random_stats(m, p, rng));
        const Vector v = a.middleCols(4, 2) * Eigen::Vector2d{1.0, -0.5} + stats[2].eps_mean +
                         0.05 * random_matrix(m, 1, rng);
        const BaeScanner scanner(a, stats);
        const NoiseModel iso = NoiseModel::isotropic(m, 0.03);
        const ScanResult spectral = scanner.scan(v, iso);
        const ScanResult chol = scanner.scan_cholesky(v, iso);
        CHECK(spectral.bae);
        CHECK(spectral.location == chol.location);
        for (Eigen::Index i = 0; i < 6; ++i) {
            const Oracle o = bae_oracle(v, a.middleCols(2 * i, 2), stats[static_cast<std::size_t>(i)], iso);
            CHECK((spectral.moments.col(i) - o.x).norm() < 1e-8 * (1 + o.x.norm()));
            CHECK((chol.moments.col(i) - o.x).norm() < 1e-8 * (1 + o.x.norm()));
            CHECK((spectral.alphas.col(i) - o.alpha).norm() < 1e-8 * (1 + o.alpha.norm()));
            CHECK(spectral.per_location_values[i] == doctest::Approx(o.value).epsilon(1e-8));
            CHECK(chol.per_location_values[i] == doctest::Approx(o.value).epsilon(1e-8));
        }
        const training::ErrorStats& sel = stats[spectral.location];
        CHECK((spectral.eps_prime_hat - sel.basis() * spectral.alpha_hat).norm() < 1e-14);

        const Matrix c = random_matrix(m, m, rng);
        const NoiseModel full{0.01 * random_matrix(m, 1, rng), 1e-3 * (c * c.transpose()) + 1e-3 * Matrix::Identity(m, m)};
        const ScanResult general = scanner.scan(v, full);
        for (Eigen::Index i = 0; i < 6; ++i) {
            const Oracle o = bae_oracle(v, a.middleCols(2 * i, 2), stats[static_cast<std::size_t>(i)], full);
            CHECK(general.per_location_values[i] == doctest::Approx(o.value).epsilon(1e-8));
        }
    }
}

TEST_CASE("BAE scanner validates its statistics") {
    auto rng = make_stream(6, "bae");
    const Matrix a = random_matrix(8, 4, rng);
    std::vector<training::ErrorStats> one{random_stats(8, 1, rng)};
    CHECK_THROWS_AS(BaeScanner(a, one), ConfigError);
    std::vector<training::ErrorStats> mixed{random_stats(8, 1, rng), random_stats(8, 2, rng)};
    CHECK_THROWS_AS(BaeScanner(a, mixed), ConfigError);
    std::vector<training::ErrorStats> wrong{random_stats(6, 1, rng), random_stats(6, 1, rng)};
    CHECK_THROWS_AS(BaeScanner(a, wrong), ShapeError);
}

TEST_CASE("goodness of fit recomputes from the stored predictions") {
    auto rng = make_stream(7, "gof");
    const Matrix a = random_matrix(8, 2 * 4, rng);
    std::vector<training::ErrorStats> stats;
    for (int i = 0; i < 4; ++i) stats.push_back(random_stats(8, 1, rng));
    const Vector v = random_matrix(8, 1, rng);
    const ScanResult r = bae_dipole_scan(v, a, stats, NoiseModel::isotropic(8, 0.1));
    const Vector map = goodness_of_fit_map(r, v);
    for (Eigen::Index i = 0; i < 4; ++i) {
        const auto& s = stats[static_cast<std::size_t>(i)];
        const Vector pred = a.middleCols(2 * i, 2) * r.moments.col(i) + s.eps_mean + s.basis() * r.alphas.col(i);
        CHECK(map[i] == doctest::Approx(1.0 - (v - pred).norm() / v.norm()).epsilon(1e-12));
        CHECK(map[i] <= 1.0);
    }
    CHECK_THROWS_AS((void)goodness_of_fit_map(r, Vector::Zero(8)), DataError);
}
