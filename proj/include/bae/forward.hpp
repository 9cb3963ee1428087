#pragma once

// Layered-disk surrogate of the EEG forward problem.
//
// A unit disk is split into three concentric compartments (brain, skull,
// scalp) and discretized with a cell-centred finite-volume scheme on a
// Cartesian grid over [-1,1]^2. Each grid node owns a square cell whose
// conductivity is chosen by the radius of the node; face conductances are
// the harmonic mean of the two adjacent cells. Cells outside the scalp
// radius do not conduct, which leaves a pure Neumann problem whose
// solutions are defined up to a constant and are returned zero-mean.

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace bae::forward {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

struct Point {
    double x = 0.0;
    double y = 0.0;

    [[nodiscard]] double radius() const;
    friend bool operator==(const Point&, const Point&) = default;
};

struct Radii {
    double brain = 0.80;
    double skull = 0.87;
    double scalp = 1.0;
};

/// Compartment conductivities in S/m. The skull value is the model parameter.
struct Conductivities {
    double scalp = 0.43;
    double brain = 0.33;
    double skull = 0.0103;
};

struct ModelSpec {
    int grid_size = 65;
    Radii radii;
    Conductivities sigma;
    int electrode_count = 32;

    [[nodiscard]] ModelSpec with_skull(double skull_sigma) const;
    [[nodiscard]] double spacing() const { return 2.0 / (grid_size - 1); }
};

enum class Compartment : std::uint8_t { brain, skull, scalp };

/// Current-injection stencil of a unit dipole at a node: +w at plus[a] and
/// -w at minus[a] for axis a (0 = x, 1 = y).
struct DipoleStencil {
    std::size_t plus[2];
    std::size_t minus[2];
    double weight;
};

/// Average-referenced electrode transfer solutions. Column e of
/// `potential` solves K z = r_e where r_e selects electrode e minus the
/// electrode mean; `sensitivity` solves K y = dK/dsigma z. Both are indexed
/// by conducting node.
struct TransferMatrices {
    Matrix potential;
    Matrix sensitivity;
};

/// Assembled and factorized disk conductor. Immutable after construction
/// and cheap to copy; safe for concurrent reads.
class DiskModel {
public:
    [[nodiscard]] const ModelSpec& spec() const;
    [[nodiscard]] double spacing() const;
    [[nodiscard]] std::size_t node_count() const;
    [[nodiscard]] std::size_t electrode_count() const;
    [[nodiscard]] std::span<const std::size_t> electrode_nodes() const;
    [[nodiscard]] Point node_position(std::size_t node) const;
    [[nodiscard]] Compartment compartment(std::size_t node) const;

    /// Conducting node sitting exactly on `p`, if any.
    [[nodiscard]] std::optional<std::size_t> node_at(Point p) const;
    /// As node_at, but throws GeometryError when `p` is not a conducting node.
    [[nodiscard]] std::size_t require_node(Point p) const;

    [[nodiscard]] const SparseMatrix& stiffness() const;
    /// Derivative of the stiffness matrix with respect to the skull conductivity.
    [[nodiscard]] const SparseMatrix& skull_sensitivity() const;

    /// Zero-mean solution of K u = rhs after removing the mean of rhs.
    /// Throws NumericError when the relative residual exceeds 1e-10.
    [[nodiscard]] Vector solve(const Vector& rhs) const;
    [[nodiscard]] Matrix solve(const Matrix& rhs) const;

    /// Average-referenced electrode values of a nodal potential.
    [[nodiscard]] Vector electrode_potentials(const Vector& u) const;

    /// Dipole stencil at a node; throws GeometryError if a neighbour does
    /// not conduct.
    [[nodiscard]] DipoleStencil dipole_stencil(std::size_t node) const;
    /// Nodal current densities (node_count x 2) of unit x and y dipoles.
    [[nodiscard]] Matrix dipole_sources(std::size_t node) const;

    [[nodiscard]] TransferMatrices transfer(bool with_sensitivity) const;

private:
    struct Impl;
    explicit DiskModel(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<const Impl> impl_;

    friend DiskModel build_model(const ModelSpec& spec);
};

/// Validates the geometry and assembles the finite-volume operator.
[[nodiscard]] DiskModel build_model(const ModelSpec& spec);

/// Candidate dipole locations with a radial orientation convention.
struct SourceSpace {
    std::vector<Point> locations;
    double spacing = 0.0;

    [[nodiscard]] std::size_t size() const { return locations.size(); }
    /// Radial unit vector from the disk centre at location i.
    [[nodiscard]] Eigen::Vector2d radial(std::size_t i) const;
};

/// Angular sector and radial band of the brain holding the sources.
struct SectorSpec {
    double angle_min_deg = 50.0;
    double angle_max_deg = 130.0;
    double radius_min = 0.40;
    double radius_max = 0.76;
    double spacing = 2.0 / 96.0;  // one step of the default 97-node standard grid
    int train_offset = 1;       // in nodes of the accurate grid, along +x
    bool test_on_grid = false;  // test at reconstruction nodes (isolation runs)
};

/// Reconstruction, training and test locations. Training location i is the
/// accurate-grid counterpart of reconstruction location i.
struct SourceLayout {
    SourceSpace reconstruction;
    SourceSpace training;
    SourceSpace test;
};

[[nodiscard]] SourceLayout make_layout(const SectorSpec& sector, const ModelSpec& standard,
                                       const ModelSpec& accurate);

struct Dipole {
    std::size_t location_index = 0;
    Eigen::Vector2d moment = Eigen::Vector2d::Zero();

    [[nodiscard]] double amplitude() const { return moment.norm(); }
    [[nodiscard]] static Dipole radial(const SourceSpace& space, std::size_t index,
                                       double amplitude);
};

struct Measurement {
    struct Truth {
        double sigma = 0.0;
        Dipole dipole;
    };

    Vector values;
    double noise_scale = 0.0;
    double snr_db = std::numeric_limits<double>::infinity();
    std::optional<Truth> truth;
};

/// Leadfield (m x 2n) by reciprocity: one transfer solve per electrode.
[[nodiscard]] Matrix leadfield(const DiskModel& model, const SourceSpace& space);
/// Reference path: one forward solve per column.
[[nodiscard]] Matrix leadfield_direct(const DiskModel& model, const SourceSpace& space);

/// d/dsigma_skull of the two leadfield columns at one location, by the
/// sensitivity solve K u' = -(dK/dsigma) u.
[[nodiscard]] Matrix leadfield_jacobian(const DiskModel& model, Point location);

struct LeadfieldPair {
    Matrix leadfield;
    Matrix jacobian;  // empty unless requested
};

/// Leadfield and (optionally) its skull-conductivity derivative for every
/// location, using adjoint transfer solves.
[[nodiscard]] LeadfieldPair leadfield_with_jacobian(const DiskModel& model,
                                                    const SourceSpace& space,
                                                    bool with_jacobian);

/// v = A x + s_c e with e ~ N(0, I) and s_c chosen so that the realized SNR
/// 10 log10(|Ax|^2 / |s_c e|^2) equals snr_db. snr_db = +inf gives s_c = 0.
[[nodiscard]] Measurement simulate_measurement(const Matrix& leadfield_true, const Dipole& dipole,
                                               double snr_db, std::mt19937_64& rng);

}  // namespace bae::forward
