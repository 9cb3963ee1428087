#include "bae/family.hpp"

#include "bae/errors.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace bae::forward {

ExactFamily::ExactFamily(ModelSpec base, SourceSpace space)
    : base_(std::move(base)), space_(std::move(space)) {}

std::size_t ExactFamily::electrode_count() const {
    return static_cast<std::size_t>(base_.electrode_count);
}

std::size_t ExactFamily::location_count() const { return space_.size(); }

const LeadfieldPair& ExactFamily::evaluate(double sigma) const {
    if (!cached_sigma_ || *cached_sigma_ != sigma) {
        cached_ = leadfield_with_jacobian(build_model(base_.with_skull(sigma)), space_, true);
        cached_sigma_ = sigma;
    }
    return cached_;
}

Matrix ExactFamily::columns(std::size_t location, double sigma) const {
    std::lock_guard lock(mutex_);
    return evaluate(sigma).leadfield.middleCols(2 * static_cast<Eigen::Index>(location), 2);
}

Matrix ExactFamily::jacobian(std::size_t location, double sigma) const {
    std::lock_guard lock(mutex_);
    return evaluate(sigma).jacobian.middleCols(2 * static_cast<Eigen::Index>(location), 2);
}

Matrix ExactFamily::leadfield(double sigma) const {
    std::lock_guard lock(mutex_);
    return evaluate(sigma).leadfield;
}

TabulatedFamily::TabulatedFamily(const ModelSpec& base, const SourceSpace& space, double lower,
                                 double upper, int nodes)
    : lower_(lower), upper_(upper) {
    if (!(lower > 0.0 && lower < upper) || nodes < 2) {
        throw ConfigError("tabulated family needs 0 < lower < upper and at least two nodes");
    }
    electrodes_ = static_cast<std::size_t>(base.electrode_count);
    locations_ = space.size();
    const double log_lo = std::log(lower);
    const double log_hi = std::log(upper);
    for (int k = 0; k < nodes; ++k) {
        const double angle = std::numbers::pi * (k + 0.5) / nodes;
        const double t = std::cos(angle);
        nodes_.push_back(t);
        bary_.push_back((k % 2 == 0 ? 1.0 : -1.0) * std::sin(angle));
        const double sigma = std::exp(0.5 * (log_lo + log_hi) + 0.5 * (log_hi - log_lo) * t);
        LeadfieldPair lp = leadfield_with_jacobian(build_model(base.with_skull(sigma)), space, true);
        leadfields_.push_back(std::move(lp.leadfield));
        jacobians_.push_back(std::move(lp.jacobian));
    }
}

std::size_t TabulatedFamily::electrode_count() const { return electrodes_; }
std::size_t TabulatedFamily::location_count() const { return locations_; }

Eigen::VectorXd TabulatedFamily::weights(double sigma) const {
    constexpr double kSlack = 1e-12;
    if (!(sigma >= lower_ * (1.0 - kSlack) && sigma <= upper_ * (1.0 + kSlack))) {
        throw ConfigError("conductivity " + std::to_string(sigma) + " outside tabulated range [" +
                          std::to_string(lower_) + ", " + std::to_string(upper_) + "]");
    }
    const double log_lo = std::log(lower_);
    const double log_hi = std::log(upper_);
    const double t = (2.0 * std::log(sigma) - log_lo - log_hi) / (log_hi - log_lo);
    const auto n = static_cast<Eigen::Index>(nodes_.size());
    Eigen::VectorXd w(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const double d = t - nodes_[static_cast<std::size_t>(k)];
        if (d == 0.0) {
            w.setZero();
            w[k] = 1.0;
            return w;
        }
        w[k] = bary_[static_cast<std::size_t>(k)] / d;
    }
    return w / w.sum();
}

Matrix TabulatedFamily::blend(const std::vector<Matrix>& table, const Eigen::VectorXd& w,
                              Eigen::Index first_col, Eigen::Index cols) const {
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(electrodes_), cols);
    for (std::size_t k = 0; k < table.size(); ++k) {
        out.noalias() += w[static_cast<Eigen::Index>(k)] * table[k].middleCols(first_col, cols);
    }
    return out;
}

Matrix TabulatedFamily::columns(std::size_t location, double sigma) const {
    return blend(leadfields_, weights(sigma), 2 * static_cast<Eigen::Index>(location), 2);
}

Matrix TabulatedFamily::jacobian(std::size_t location, double sigma) const {
    return blend(jacobians_, weights(sigma), 2 * static_cast<Eigen::Index>(location), 2);
}

Matrix TabulatedFamily::leadfield(double sigma) const {
    return blend(leadfields_, weights(sigma), 0, 2 * static_cast<Eigen::Index>(locations_));
}

}  // namespace bae::forward
