#pragma once

// Leadfields of a fixed source space viewed as functions of the skull
// conductivity. Iterative calibrators only talk to this interface.

#include "bae/forward.hpp"

#include <mutex>
#include <optional>

namespace bae::forward {

class LeadfieldFamily {
public:
    virtual ~LeadfieldFamily() = default;

    [[nodiscard]] virtual std::size_t electrode_count() const = 0;
    [[nodiscard]] virtual std::size_t location_count() const = 0;
    /// Two leadfield columns (m x 2) at a location.
    [[nodiscard]] virtual Matrix columns(std::size_t location, double sigma) const = 0;
    /// d/dsigma of columns(location, sigma).
    [[nodiscard]] virtual Matrix jacobian(std::size_t location, double sigma) const = 0;
    /// Full leadfield (m x 2n).
    [[nodiscard]] virtual Matrix leadfield(double sigma) const = 0;
};

/// Rebuilds the disk model at every requested conductivity. The most recent
/// evaluation is cached; calls are serialized.
class ExactFamily final : public LeadfieldFamily {
public:
    ExactFamily(ModelSpec base, SourceSpace space);

    [[nodiscard]] std::size_t electrode_count() const override;
    [[nodiscard]] std::size_t location_count() const override;
    [[nodiscard]] Matrix columns(std::size_t location, double sigma) const override;
    [[nodiscard]] Matrix jacobian(std::size_t location, double sigma) const override;
    [[nodiscard]] Matrix leadfield(double sigma) const override;

private:
    const LeadfieldPair& evaluate(double sigma) const;

    ModelSpec base_;
    SourceSpace space_;
    mutable std::mutex mutex_;
    mutable std::optional<double> cached_sigma_;
    mutable LeadfieldPair cached_;
};

/// Chebyshev interpolant in log(sigma) of exact leadfields and Jacobians
/// over [lower, upper]. Immutable once built and safe for concurrent use.
class TabulatedFamily final : public LeadfieldFamily {
public:
    TabulatedFamily(const ModelSpec& base, const SourceSpace& space, double lower, double upper,
                    int nodes = 16);

    [[nodiscard]] std::size_t electrode_count() const override;
    [[nodiscard]] std::size_t location_count() const override;
    [[nodiscard]] Matrix columns(std::size_t location, double sigma) const override;
    [[nodiscard]] Matrix jacobian(std::size_t location, double sigma) const override;
    [[nodiscard]] Matrix leadfield(double sigma) const override;

    [[nodiscard]] double lower() const { return lower_; }
    [[nodiscard]] double upper() const { return upper_; }

private:
    [[nodiscard]] Eigen::VectorXd weights(double sigma) const;
    [[nodiscard]] Matrix blend(const std::vector<Matrix>& table, const Eigen::VectorXd& w,
                               Eigen::Index first_col, Eigen::Index cols) const;

    double lower_;
    double upper_;
    std::vector<double> nodes_;       // Chebyshev points on [-1, 1]
    std::vector<double> bary_;        // barycentric weights
    std::vector<Matrix> leadfields_;  // one m x 2n matrix per node
    std::vector<Matrix> jacobians_;
    std::size_t electrodes_ = 0;
    std::size_t locations_ = 0;
};

}  // namespace bae::forward
