#include "bae/calibration.hpp"

#include "bae/errors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace bae::calibration {

namespace {

CalibrationResult finish(Method method, double sigma, const training::ConductivityPrior& prior) {
    CalibrationResult r;
    r.method = method;
    r.sigma_unclamped = sigma;
    r.sigma_hat = prior.clamp(sigma);
    return r;
}

}  // namespace

std::string_view method_name(Method method) {
    switch (method) {
        case Method::cg: return "cg";
        case Method::cg_iter: return "cg-iter";
        case Method::gp: return "gp";
        case Method::map_a2: return "map-a2";
        case Method::alternating: return "alt";
    }
    return "?";
}

Method parse_method(std::string_view name) {
    for (Method m : {Method::cg, Method::cg_iter, Method::gp, Method::map_a2, Method::alternating}) {
        if (method_name(m) == name) return m;
    }
    throw ConfigError("unknown calibration method '" + std::string(name) + "'");
}

CalibrationResult cg_estimate(const Vector& alpha_hat, const training::ErrorStats& stats,
                              const training::ConductivityPrior& prior) {
    const Vector lambda = stats.alpha_variances();
    if (alpha_hat.size() != lambda.size() || stats.cross_cov.size() != lambda.size()) {
        throw ShapeError("alpha has " + std::to_string(alpha_hat.size()) + " entries, statistics retain " +
                         std::to_string(lambda.size()));
    }
    if ((lambda.array() <= 0.0).any()) throw StatisticsError("non-positive alpha variance");
    const double shift = (stats.cross_cov.array() * alpha_hat.array() / lambda.array()).sum();
    return finish(Method::cg, stats.sigma_star + shift, prior);
}

CalibrationResult cg_iter_estimate(const Vector& alpha_hat, const Eigen::Vector2d& x_hat,
                                   const forward::LeadfieldFamily& sample_family, std::size_t location,
                                   const Matrix& standard_columns, const training::ErrorStats& stats,
                                   const training::ConductivityPrior& prior, double sigma_init,
                                   const IterationOptions& options) {
    if (x_hat.norm() == 0.0) throw DegenerateSensitivityError("zero dipole moment carries no sensitivity");
    const Vector target = stats.basis() * alpha_hat + stats.eps_mean + standard_columns * x_hat;

    CalibrationResult r;
    r.method = Method::cg_iter;
    r.converged = false;
    double sigma = prior.clamp(sigma_init);
    double unclamped = sigma;
    for (int t = 0; t < options.max_iter; ++t) {
        // b = w alpha + eps_* - (A(sigma_t) - A0) x
        const Vector b = target - sample_family.columns(location, sigma) * x_hat;
        const Vector g = sample_family.jacobian(location, sigma) * x_hat;
        const double gg = g.squaredNorm();
        if (!(gg > 0.0)) throw DegenerateSensitivityError("|J x| vanished at the current conductivity");
        unclamped = sigma + g.dot(b) / gg;
        const double next = prior.clamp(unclamped);
        r.trace.push_back(next);
        r.iterations = t + 1;
        const double change = std::abs(next - sigma);
        sigma = next;
        if (change < options.tolerance) {
            r.converged = true;
            break;
        }
    }
    r.sigma_hat = sigma;
    r.sigma_unclamped = unclamped;
    return r;
}

double GpModel::feature(double alpha, double amplitude) const { return (alpha + offset) / amplitude; }

double GpModel::mean(double y) const {
    double out = 0.0;
    for (Eigen::Index h = coeffs.size() - 1; h >= 0; --h) out = out * y + coeffs[h];
    return out;
}

double GpModel::kernel(double y1, double y2) const {
    const double d = (y1 - y2) / length_scale;
    return signal_scale * signal_scale * std::exp(-d * d);
}

GpModel gp_fit(std::vector<training::GpTriplet> triplets, double offset, const GpOptions& options) {
    if (triplets.size() < 20) {
        throw FitError("GP fit needs at least 20 triplets, got " + std::to_string(triplets.size()));
    }
    if (options.degree < 0 || !(options.signal_scale > 0.0) || !(options.length_scale > 0.0)) {
        throw ConfigError("GP degree must be >= 0 and scales positive");
    }
    for (const auto& t : triplets) {
        if (!(t.amplitude > 0.0)) throw DataError("GP triplet with non-positive amplitude");
    }
    std::sort(triplets.begin(), triplets.end(),
              [](const auto& a, const auto& b) { return a.id < b.id; });

    GpModel model;
    model.offset = offset;
    model.signal_scale = options.signal_scale;
    model.length_scale = options.length_scale;
    model.jitter = options.jitter_factor * options.signal_scale * options.signal_scale;
    model.amplitude_floor = options.amplitude_floor;

    const std::size_t n_poly = (triplets.size() + 1) / 2;
    const Eigen::Index cols = options.degree + 1;
    Matrix design(static_cast<Eigen::Index>(n_poly), cols);
    Vector rhs(static_cast<Eigen::Index>(n_poly));
    for (std::size_t s = 0; s < n_poly; ++s) {
        const double y = model.feature(triplets[s].alpha, triplets[s].amplitude);
        double power = 1.0;
        for (Eigen::Index h = 0; h < cols; ++h, power *= y) design(static_cast<Eigen::Index>(s), h) = power;
        rhs[static_cast<Eigen::Index>(s)] = triplets[s].sigma;
    }
    Eigen::JacobiSVD<Matrix> svd(design, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector sv = svd.singularValues();
    const double condition = sv[sv.size() - 1] > 0.0 ? sv[0] / sv[sv.size() - 1]
                                                     : std::numeric_limits<double>::infinity();
    if (!(condition <= options.max_condition)) {
        throw FitError("mean polynomial is ill conditioned (condition number " + std::to_string(condition) + ")");
    }
    model.coeffs = svd.solve(rhs);

    const auto n_gp = static_cast<Eigen::Index>(triplets.size() - n_poly);
    model.inputs.resize(n_gp);
    model.outputs.resize(n_gp);
    for (Eigen::Index s = 0; s < n_gp; ++s) {
        const auto& t = triplets[n_poly + static_cast<std::size_t>(s)];
        model.inputs[s] = model.feature(t.alpha, t.amplitude);
        model.outputs[s] = t.sigma;
    }
    Matrix k(n_gp, n_gp);
    for (Eigen::Index a = 0; a < n_gp; ++a) {
        for (Eigen::Index b = 0; b < n_gp; ++b) k(a, b) = model.kernel(model.inputs[a], model.inputs[b]);
        k(a, a) += model.jitter;
    }
    Eigen::LLT<Matrix> llt(k);
    if (llt.info() != Eigen::Success) throw FactorizationError("GP kernel matrix is not positive definite");
    model.factor = llt.matrixL();
    Vector residual(n_gp);
    for (Eigen::Index s = 0; s < n_gp; ++s) residual[s] = model.outputs[s] - model.mean(model.inputs[s]);
    model.weights = llt.solve(residual);
    return model;
}

CalibrationResult gp_estimate(double alpha_hat, double amplitude, const GpModel& model,
                              const training::ConductivityPrior& prior) {
    if (!(amplitude >= model.amplitude_floor)) {
        throw LowAmplitudeError("amplitude " + std::to_string(amplitude) + " below the GP floor " +
                                std::to_string(model.amplitude_floor));
    }
    const double y = model.feature(alpha_hat, amplitude);
    const Eigen::Index n = model.inputs.size();
    Vector kstar(n);
    for (Eigen::Index s = 0; s < n; ++s) kstar[s] = model.kernel(y, model.inputs[s]);
    CalibrationResult r = finish(Method::gp, model.mean(y) + kstar.dot(model.weights), prior);
    double variance = model.kernel(y, y) + model.jitter;
    if (n > 0) {
        const Vector half = model.factor.triangularView<Eigen::Lower>().solve(kstar);
        variance -= half.squaredNorm();
    }
    r.predictive_variance = std::max(variance, 0.0);
    return r;
}

CalibrationResult map_closed_form(double alpha_hat, const training::ErrorStats& stats,
                                  const Matrix& jacobian, const Eigen::Vector2d& orientation, double gamma,
                                  const training::ConductivityPrior& prior) {
    const Vector w1 = stats.eigvecs.col(0);
    const double k_l = w1.dot(jacobian * orientation);
    if (k_l == 0.0 || !std::isfinite(k_l)) throw DegenerateSensitivityError("k_l = w1^T J n vanished");
    const double c = w1.dot(stats.eps_mean);
    return finish(Method::map_a2,
                  stats.sigma_star + (alpha_hat + c) / (k_l * std::numbers::sqrt2 * gamma), prior);
}

double map_log_posterior(double sigma, double alpha_hat, double c, double k_l, double sigma_star,
                         double gamma) {
    const double amplitude = (alpha_hat + c) / (k_l * (sigma - sigma_star));
    if (!(amplitude > 0.0) || !std::isfinite(amplitude)) return -std::numeric_limits<double>::infinity();
    return std::log(amplitude) - amplitude * amplitude / (4.0 * gamma * gamma);
}

AlternatingResult alternating_scan(const Vector& v, const forward::LeadfieldFamily& family,
                                   const inversion::NoiseModel& noise,
                                   const training::ConductivityPrior& prior, double sigma_init,
                                   const AlternatingOptions& options) {
    const Matrix L = inversion::whitener(noise.cov);
    const Vector lv = L * (v - noise.mean);
    auto residual = [&](std::size_t l, const Eigen::Vector2d& x, double sigma) {
        return (lv - L * (family.columns(l, sigma) * x)).squaredNorm();
    };

    AlternatingResult out;
    CalibrationResult& cal = out.calibration;
    cal.method = Method::alternating;
    cal.converged = false;
    double sigma = prior.clamp(sigma_init);
    double unclamped = sigma;
    std::vector<double> history{sigma};

    for (int k = 0; k < options.max_outer; ++k) {
        const inversion::ScanResult scan = inversion::standard_dipole_scan(v, family.leadfield(sigma), noise);
        out.objective_trace.push_back(scan.functional_value);
        const std::size_t l = scan.location;
        const Eigen::Vector2d x = scan.x_hat;

        const Vector g = L * (family.jacobian(l, sigma) * x);
        const double gg = g.squaredNorm();
        cal.iterations = k + 1;
        if (!(gg > 0.0)) {
            cal.converged = true;  // sigma has no influence on the fit
            break;
        }
        const double current = residual(l, x, sigma);
        double step = g.dot(lv - L * (family.columns(l, sigma) * x)) / gg;
        unclamped = sigma + step;
        double next = sigma;
        for (int h = 0; h <= options.max_halvings; ++h, step *= 0.5) {
            const double candidate = prior.clamp(sigma + step);
            if (residual(l, x, candidate) <= current) {
                next = candidate;
                break;
            }
        }
        const double change = std::abs(next - sigma);
        cal.trace.push_back(next);
        history.push_back(next);
        sigma = next;
        if (change < options.tolerance) {
            cal.converged = true;
            break;
        }
        if (history.size() >= 3 && std::abs(next - history[history.size() - 3]) < options.tolerance) {
            out.oscillating = true;
            break;
        }
    }
    out.scan = inversion::standard_dipole_scan(v, family.leadfield(sigma), noise);
    out.objective_trace.push_back(out.scan.functional_value);
    cal.sigma_hat = sigma;
    cal.sigma_unclamped = unclamped;
    return out;
}

}  // namespace bae::calibration
