#include "bae/inversion.hpp"

#include "bae/errors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <cmath>
#include <limits>

namespace bae::inversion {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_data(const Vector& v, Eigen::Index m) {
    if (v.size() != m) {
        throw ShapeError("measurement has " + std::to_string(v.size()) + " entries, leadfield has " +
                         std::to_string(m) + " rows");
    }
    if (!v.allFinite()) throw DataError("measurement contains non-finite values");
}

void check_noise(const NoiseModel& noise, Eigen::Index m) {
    if (noise.mean.size() != m || noise.cov.rows() != m || noise.cov.cols() != m) {
        throw ShapeError("noise model does not match the electrode count");
    }
}

ScanResult empty_result(Eigen::Index m, std::size_t n, Eigen::Index p) {
    ScanResult r;
    const auto nn = static_cast<Eigen::Index>(n);
    r.per_location_values = Vector::Constant(nn, kInf);
    r.moments = Matrix::Zero(2, nn);
    r.alphas = Matrix::Zero(p, nn);
    r.predictions = Matrix::Zero(m, nn);
    r.eps_prime_hat = Vector::Zero(m);
    return r;
}

// Lowest value wins; ties go to the lowest index.
void select(ScanResult& r) {
    bool found = false;
    for (Eigen::Index i = 0; i < r.per_location_values.size(); ++i) {
        const double value = r.per_location_values[i];
        if (std::isfinite(value) && (!found || value < r.functional_value)) {
            found = true;
            r.functional_value = value;
            r.location = static_cast<std::size_t>(i);
        }
    }
    if (!found) throw DataError("every scanned location was rank deficient");
    const auto l = static_cast<Eigen::Index>(r.location);
    r.x_hat = r.moments.col(l);
    r.alpha_hat = r.alphas.col(l);
}

}  // namespace

NoiseModel NoiseModel::isotropic(Eigen::Index m, double scale) {
    if (!(scale > 0.0) || !std::isfinite(scale)) {
        throw ConfigError("noise scale must be positive and finite");
    }
    return {Vector::Zero(m), Matrix::Identity(m, m) * (scale * scale)};
}

NoiseModel NoiseModel::for_measurement(const forward::Measurement& measurement) {
    const Eigen::Index m = measurement.values.size();
    double scale = measurement.noise_scale;
    if (!(scale > 0.0)) {
        scale = 1e-8 * measurement.values.norm() / std::sqrt(static_cast<double>(m));
        if (!(scale > 0.0)) scale = 1e-12;
    }
    return isotropic(m, scale);
}

std::optional<double> NoiseModel::isotropic_scale() const {
    if (cov.rows() == 0 || cov.rows() != cov.cols()) return std::nullopt;
    const double d = cov(0, 0);
    if (!(d > 0.0) || !std::isfinite(d)) return std::nullopt;
    for (Eigen::Index j = 0; j < cov.cols(); ++j) {
        for (Eigen::Index i = 0; i < cov.rows(); ++i) {
            if (cov(i, j) != (i == j ? d : 0.0)) return std::nullopt;
        }
    }
    return std::sqrt(d);
}

Matrix whitener(const Matrix& cov) {
    if (cov.rows() != cov.cols() || cov.rows() == 0) throw ShapeError("covariance must be square");
    if (!cov.allFinite()) throw FactorizationError("covariance contains non-finite values");
    const double scale = cov.diagonal().cwiseAbs().maxCoeff();
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success || !(scale > 0.0)) {
        throw FactorizationError("covariance is not positive definite");
    }
    const Matrix c = llt.matrixL();
    const double threshold = 1e-14 * scale;
    for (Eigen::Index k = 0; k < c.rows(); ++k) {
        if (!(c(k, k) * c(k, k) > threshold)) {
            throw FactorizationError("Cholesky pivot " + std::to_string(k) +
                                     " below the jitter threshold");
        }
    }
    return c.triangularView<Eigen::Lower>().solve(Matrix::Identity(c.rows(), c.cols()));
}

ScanResult standard_dipole_scan(const Vector& v, const Matrix& leadfield, const NoiseModel& noise) {
    const Eigen::Index m = leadfield.rows();
    check_data(v, m);
    check_noise(noise, m);
    if (leadfield.cols() % 2 != 0) throw ShapeError("leadfield must have two columns per location");
    const auto n = static_cast<std::size_t>(leadfield.cols() / 2);
    // With isotropic noise the whitener is a scalar and the per-location
    // matrix products can be skipped.
    const std::optional<double> scale = noise.isotropic_scale();
    const Matrix L = scale ? Matrix() : whitener(noise.cov);
    const Vector rhs = scale ? Vector((v - noise.mean) / *scale) : Vector(L * (v - noise.mean));

    ScanResult r = empty_result(m, n, 0);
    Matrix block(m, 2);
    for (std::size_t i = 0; i < n; ++i) {
        const auto col = 2 * static_cast<Eigen::Index>(i);
        if (scale) {
            block = leadfield.middleCols(col, 2) / *scale;
        } else {
            block.noalias() = L * leadfield.middleCols(col, 2);
        }
        Eigen::ColPivHouseholderQR<Matrix> qr(block);
        if (qr.rank() < 2) {
            r.warnings.push_back("location " + std::to_string(i) + " skipped: rank-deficient leadfield block");
            continue;
        }
        const Eigen::Vector2d x = qr.solve(rhs);
        const auto ii = static_cast<Eigen::Index>(i);
        r.moments.col(ii) = x;
        r.predictions.col(ii) = leadfield.middleCols(col, 2) * x;
        r.per_location_values[ii] = (rhs - block * x).squaredNorm();
    }
    select(r);
    return r;
}

BaeScanner::BaeScanner(const Matrix& leadfield, std::vector<training::ErrorStats> stats)
    : leadfield_(leadfield), stats_(std::move(stats)) {
    const Eigen::Index m = leadfield.rows();
    if (leadfield.cols() % 2 != 0) throw ShapeError("leadfield must have two columns per location");
    const auto n = static_cast<std::size_t>(leadfield.cols() / 2);
    if (stats_.size() != n) {
        throw ConfigError("statistics cover " + std::to_string(stats_.size()) +
                          " locations, leadfield has " + std::to_string(n));
    }
    p_ = n > 0 ? stats_.front().p : 0;
    locations_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const training::ErrorStats& s = stats_[i];
        if (s.p != p_) throw ConfigError("retained rank differs between locations");
        if (s.electrodes() != m || s.eigvecs.rows() != m || s.eigvecs.cols() != m) {
            throw ShapeError("statistics do not match the electrode count");
        }
        Location& loc = locations_[i];
        loc.rotated = s.eigvecs.transpose() * leadfield.middleCols(2 * static_cast<Eigen::Index>(i), 2);
        loc.rotated_mean = s.eigvecs.transpose() * s.eps_mean;
        for (Eigen::Index k = 0; k < p_; ++k) {
            if (s.eigvals[k] > 0.0) loc.free_alpha.push_back(k);
        }
    }
}

ScanResult BaeScanner::start(const Vector& v, const NoiseModel& noise) const {
    const Eigen::Index m = leadfield_.rows();
    check_data(v, m);
    check_noise(noise, m);
    ScanResult r = empty_result(m, locations_.size(), p_);
    r.bae = true;
    return r;
}

void BaeScanner::record(ScanResult& r, std::size_t i, const Eigen::Vector2d& x, const Vector& alpha,
                        double value) const {
    const auto ii = static_cast<Eigen::Index>(i);
    const training::ErrorStats& s = stats_[i];
    r.moments.col(ii) = x;
    r.alphas.col(ii) = alpha;
    r.predictions.col(ii) = leadfield_.middleCols(2 * ii, 2) * x + s.eps_mean + s.basis() * alpha;
    r.per_location_values[ii] = value;
}

ScanResult BaeScanner::scan(const Vector& v, const NoiseModel& noise) const {
    if (const auto scale = noise.isotropic_scale()) return scan_spectral(v, noise, *scale);
    return scan_cholesky(v, noise);
}

ScanResult BaeScanner::scan_spectral(const Vector& v, const NoiseModel& noise, double scale) const {
    ScanResult r = start(v, noise);
    const Eigen::Index m = leadfield_.rows();
    const Vector data = v - noise.mean;
    const double noise_var = scale * scale;
    for (std::size_t i = 0; i < locations_.size(); ++i) {
        const training::ErrorStats& s = stats_[i];
        const Location& loc = locations_[i];
        // Gamma_{eps''} + s^2 I = W diag(d) W^T with d_j = s^2 for j <= p.
        Vector inv_sqrt(m);
        for (Eigen::Index j = 0; j < m; ++j) {
            inv_sqrt[j] = 1.0 / std::sqrt((j < p_ ? 0.0 : s.eigvals[j]) + noise_var);
        }
        const auto q = static_cast<Eigen::Index>(loc.free_alpha.size());
        Matrix system = Matrix::Zero(m + q, 2 + q);
        system.topLeftCorner(m, 2) = inv_sqrt.asDiagonal() * loc.rotated;
        for (Eigen::Index j = 0; j < q; ++j) {
            const Eigen::Index k = loc.free_alpha[static_cast<std::size_t>(j)];
            system(k, 2 + j) = inv_sqrt[k];
            system(m + j, 2 + j) = 1.0 / std::sqrt(s.eigvals[k]);
        }
        Vector rhs = Vector::Zero(m + q);
        rhs.head(m) = inv_sqrt.asDiagonal() * (s.eigvecs.transpose() * data - loc.rotated_mean);
        Eigen::ColPivHouseholderQR<Matrix> qr(system);
        if (qr.rank() < system.cols()) {
            r.warnings.push_back("location " + std::to_string(i) + " skipped: singular stacked system");
            continue;
        }
        const Vector z = qr.solve(rhs);
        Vector alpha = Vector::Zero(p_);
        for (Eigen::Index j = 0; j < q; ++j) alpha[loc.free_alpha[static_cast<std::size_t>(j)]] = z[2 + j];
        record(r, i, z.head<2>(), alpha, (rhs - system * z).squaredNorm());
    }
    select(r);
    r.eps_prime_hat = stats_[r.location].basis() * r.alpha_hat;
    return r;
}

ScanResult BaeScanner::scan_cholesky(const Vector& v, const NoiseModel& noise) const {
    ScanResult r = start(v, noise);
    const Eigen::Index m = leadfield_.rows();
    for (std::size_t i = 0; i < locations_.size(); ++i) {
        const training::ErrorStats& s = stats_[i];
        const Location& loc = locations_[i];
        Matrix L;
        try {
            L = whitener(s.residual_cov + noise.cov);
        } catch (const FactorizationError& e) {
            r.warnings.push_back("location " + std::to_string(i) + " skipped: " + e.what());
            continue;
        }
        const auto q = static_cast<Eigen::Index>(loc.free_alpha.size());
        Matrix system = Matrix::Zero(m + q, 2 + q);
        system.topLeftCorner(m, 2) = L * leadfield_.middleCols(2 * static_cast<Eigen::Index>(i), 2);
        for (Eigen::Index j = 0; j < q; ++j) {
            const Eigen::Index k = loc.free_alpha[static_cast<std::size_t>(j)];
            system.block(0, 2 + j, m, 1) = L * s.eigvecs.col(k);
            system(m + j, 2 + j) = 1.0 / std::sqrt(s.eigvals[k]);
        }
        Vector rhs = Vector::Zero(m + q);
        rhs.head(m) = L * (v - s.eps_mean - noise.mean);
        Eigen::ColPivHouseholderQR<Matrix> qr(system);
        if (qr.rank() < system.cols()) {
            r.warnings.push_back("location " + std::to_string(i) + " skipped: singular stacked system");
            continue;
        }
        const Vector z = qr.solve(rhs);
        Vector alpha = Vector::Zero(p_);
        for (Eigen::Index j = 0; j < q; ++j) alpha[loc.free_alpha[static_cast<std::size_t>(j)]] = z[2 + j];
        record(r, i, z.head<2>(), alpha, (rhs - system * z).squaredNorm());
    }
    select(r);
    r.eps_prime_hat = stats_[r.location].basis() * r.alpha_hat;
    return r;
}

ScanResult bae_dipole_scan(const Vector& v, const Matrix& leadfield,
                           const std::vector<training::ErrorStats>& stats, const NoiseModel& noise) {
    return BaeScanner(leadfield, stats).scan(v, noise);
}

Vector goodness_of_fit_map(const ScanResult& result, const Vector& v) {
    const double norm = v.norm();
    if (!(norm > 0.0)) throw DataError("goodness of fit is undefined for a zero measurement");
    Vector out(result.per_location_values.size());
    for (Eigen::Index i = 0; i < out.size(); ++i) {
        out[i] = std::isfinite(result.per_location_values[i])
                     ? 1.0 - (v - result.predictions.col(i)).norm() / norm
                     : -kInf;
    }
    return out;
}

}  // namespace bae::inversion
