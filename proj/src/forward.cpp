#include "bae/forward.hpp"

#include "bae/errors.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <string>

namespace bae::forward {

namespace {

constexpr double kResidualTolerance = 1e-10;
constexpr double kRadiusTolerance = 1e-12;
constexpr std::size_t kNone = static_cast<std::size_t>(-1);

double harmonic_mean(double a, double b) { return 2.0 * a * b / (a + b); }

// d/da of the harmonic mean of (a, b).
double harmonic_mean_da(double a, double b) { return 2.0 * b * b / ((a + b) * (a + b)); }

}  // namespace

double Point::radius() const { return std::hypot(x, y); }

ModelSpec ModelSpec::with_skull(double skull_sigma) const {
    ModelSpec out = *this;
    out.sigma.skull = skull_sigma;
    return out;
}

struct DiskModel::Impl {
    ModelSpec spec;
    double h = 0.0;
    int n = 0;                              // nodes per side
    std::vector<std::size_t> grid_to_node;  // kNone when not conducting
    std::vector<int> node_ix;
    std::vector<int> node_iy;
    std::vector<Compartment> compartments;
    std::vector<std::size_t> electrodes;
    SparseMatrix stiffness;
    SparseMatrix sensitivity;
    Eigen::SimplicialLDLT<SparseMatrix> factor;  // stiffness with the last node pinned

    [[nodiscard]] std::size_t node_count() const { return compartments.size(); }

    [[nodiscard]] std::size_t grid_node(int ix, int iy) const {
        if (ix < 0 || iy < 0 || ix >= n || iy >= n) return kNone;
        return grid_to_node[static_cast<std::size_t>(iy) * n + ix];
    }

    [[nodiscard]] double conductivity(Compartment c) const {
        switch (c) {
            case Compartment::brain: return spec.sigma.brain;
            case Compartment::skull: return spec.sigma.skull;
            case Compartment::scalp: return spec.sigma.scalp;
        }
        return 0.0;
    }
};

namespace {

void validate(const ModelSpec& spec) {
    if (spec.grid_size < 17) {
        throw GeometryError("grid_size must be at least 17, got " + std::to_string(spec.grid_size));
    }
    const auto& r = spec.radii;
    if (!(r.brain > 0.0 && r.brain < r.skull && r.skull < r.scalp)) {
        throw GeometryError("radii must satisfy 0 < brain < skull < scalp");
    }
    if (r.scalp > 1.0 + kRadiusTolerance) {
        throw GeometryError("scalp radius must not exceed 1");
    }
    const auto& s = spec.sigma;
    if (!(s.scalp > 0.0 && s.brain > 0.0 && s.skull > 0.0) || !std::isfinite(s.scalp) ||
        !std::isfinite(s.brain) || !std::isfinite(s.skull)) {
        throw GeometryError("conductivities must be finite and strictly positive");
    }
    const double h = spec.spacing();
    if (r.brain < h || r.skull - r.brain < h || r.scalp - r.skull < h) {
        throw GeometryError("a compartment is thinner than one grid cell (h = " + std::to_string(h) +
                            ")");
    }
    if (spec.electrode_count < 2) {
        throw GeometryError("at least two electrodes are required");
    }
}

}  // namespace

DiskModel build_model(const ModelSpec& spec) {
    validate(spec);

    auto impl = std::make_shared<DiskModel::Impl>();
    impl->spec = spec;
    impl->n = spec.grid_size;
    impl->h = spec.spacing();
    const int n = impl->n;
    const double h = impl->h;
    const auto& radii = spec.radii;

    impl->grid_to_node.assign(static_cast<std::size_t>(n) * n, kNone);
    for (int iy = 0; iy < n; ++iy) {
        for (int ix = 0; ix < n; ++ix) {
            const double rho = std::hypot(-1.0 + ix * h, -1.0 + iy * h);
            if (rho > radii.scalp + kRadiusTolerance) continue;
            Compartment c = Compartment::scalp;
            if (rho <= radii.brain + kRadiusTolerance) {
                c = Compartment::brain;
            } else if (rho <= radii.skull + kRadiusTolerance) {
                c = Compartment::skull;
            }
            impl->grid_to_node[static_cast<std::size_t>(iy) * n + ix] = impl->compartments.size();
            impl->compartments.push_back(c);
            impl->node_ix.push_back(ix);
            impl->node_iy.push_back(iy);
        }
    }

    const std::size_t count = impl->node_count();
    const std::size_t pinned = count - 1;
    std::vector<Eigen::Triplet<double>> k_full;
    std::vector<Eigen::Triplet<double>> k_reduced;
    std::vector<Eigen::Triplet<double>> dk;
    k_full.reserve(count * 5);
    k_reduced.reserve(count * 5);
    dk.reserve(count);

    auto add_face = [&](std::size_t a, std::size_t b) {
        const Compartment ca = impl->compartments[a];
        const Compartment cb = impl->compartments[b];
        const double sa = impl->conductivity(ca);
        const double sb = impl->conductivity(cb);
        const double c = harmonic_mean(sa, sb);
        const std::pair<std::size_t, std::size_t> entries[] = {{a, a}, {b, b}, {a, b}, {b, a}};
        const double signs[] = {1.0, 1.0, -1.0, -1.0};
        for (int e = 0; e < 4; ++e) {
            const auto [i, j] = entries[e];
            k_full.emplace_back(static_cast<int>(i), static_cast<int>(j), signs[e] * c);
            if (i != pinned && j != pinned) {
                k_reduced.emplace_back(static_cast<int>(i), static_cast<int>(j), signs[e] * c);
            }
        }
        double dc = 0.0;
        if (ca == Compartment::skull && cb == Compartment::skull) {
            dc = 1.0;
        } else if (ca == Compartment::skull) {
            dc = harmonic_mean_da(sa, sb);
        } else if (cb == Compartment::skull) {
            dc = harmonic_mean_da(sb, sa);
        }
        if (dc != 0.0) {
            for (int e = 0; e < 4; ++e) {
                const auto [i, j] = entries[e];
                dk.emplace_back(static_cast<int>(i), static_cast<int>(j), signs[e] * dc);
            }
        }
    };

    for (std::size_t node = 0; node < count; ++node) {
        const int ix = impl->node_ix[node];
        const int iy = impl->node_iy[node];
        if (const std::size_t east = impl->grid_node(ix + 1, iy); east != kNone) add_face(node, east);
        if (const std::size_t north = impl->grid_node(ix, iy + 1); north != kNone) {
            add_face(node, north);
        }
    }

    const auto size = static_cast<Eigen::Index>(count);
    impl->stiffness.resize(size, size);
    impl->stiffness.setFromTriplets(k_full.begin(), k_full.end());
    impl->sensitivity.resize(size, size);
    impl->sensitivity.setFromTriplets(dk.begin(), dk.end());

    SparseMatrix reduced(size - 1, size - 1);
    reduced.setFromTriplets(k_reduced.begin(), k_reduced.end());
    impl->factor.compute(reduced);
    if (impl->factor.info() != Eigen::Success) {
        throw NumericError("stiffness factorization failed", std::numeric_limits<double>::infinity());
    }

    // Electrodes: conducting node closest to evenly spaced points on the
    // outer circle, starting at the top of the disk.
    const int m = spec.electrode_count;
    std::set<std::size_t> used;
    for (int e = 0; e < m; ++e) {
        const double theta = std::numbers::pi / 2.0 + 2.0 * std::numbers::pi * e / m;
        const Point target{radii.scalp * std::cos(theta), radii.scalp * std::sin(theta)};
        const int cx = static_cast<int>(std::lround((target.x + 1.0) / h));
        const int cy = static_cast<int>(std::lround((target.y + 1.0) / h));
        std::size_t best = kNone;
        double best_d = std::numeric_limits<double>::infinity();
        for (int dy = -2; dy <= 2; ++dy) {
            for (int dx = -2; dx <= 2; ++dx) {
                const std::size_t node = impl->grid_node(cx + dx, cy + dy);
                if (node == kNone) continue;
                const double d = std::hypot(-1.0 + (cx + dx) * h - target.x,
                                            -1.0 + (cy + dy) * h - target.y);
                if (d < best_d - 1e-15) {
                    best_d = d;
                    best = node;
                }
            }
        }
        if (best == kNone || !used.insert(best).second) {
            throw GeometryError("cannot place " + std::to_string(m) +
                                " distinct electrodes on a grid of size " +
                                std::to_string(spec.grid_size));
        }
        impl->electrodes.push_back(best);
    }

    return DiskModel(std::move(impl));
}

const ModelSpec& DiskModel::spec() const { return impl_->spec; }
double DiskModel::spacing() const { return impl_->h; }
std::size_t DiskModel::node_count() const { return impl_->node_count(); }
std::size_t DiskModel::electrode_count() const { return impl_->electrodes.size(); }
std::span<const std::size_t> DiskModel::electrode_nodes() const { return impl_->electrodes; }
const SparseMatrix& DiskModel::stiffness() const { return impl_->stiffness; }
const SparseMatrix& DiskModel::skull_sensitivity() const { return impl_->sensitivity; }
Compartment DiskModel::compartment(std::size_t node) const { return impl_->compartments.at(node); }

Point DiskModel::node_position(std::size_t node) const {
    return {-1.0 + impl_->node_ix.at(node) * impl_->h, -1.0 + impl_->node_iy.at(node) * impl_->h};
}

std::optional<std::size_t> DiskModel::node_at(Point p) const {
    const double h = impl_->h;
    const double fx = (p.x + 1.0) / h;
    const double fy = (p.y + 1.0) / h;
    const long ix = std::lround(fx);
    const long iy = std::lround(fy);
    if (std::abs(fx - ix) > 1e-9 || std::abs(fy - iy) > 1e-9) return std::nullopt;
    const std::size_t node = impl_->grid_node(static_cast<int>(ix), static_cast<int>(iy));
    if (node == kNone) return std::nullopt;
    return node;
}

std::size_t DiskModel::require_node(Point p) const {
    if (auto node = node_at(p)) return *node;
    throw GeometryError("location (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                        ") is not a conducting grid node");
}

Vector DiskModel::solve(const Vector& rhs) const {
    Matrix block = rhs;
    return solve(block).col(0);
}

Matrix DiskModel::solve(const Matrix& rhs) const {
    const auto count = static_cast<Eigen::Index>(node_count());
    if (rhs.rows() != count) {
        throw ShapeError("right-hand side has " + std::to_string(rhs.rows()) + " rows, expected " +
                         std::to_string(count));
    }
    Matrix b = rhs;
    b.rowwise() -= b.colwise().mean();

    Matrix u = Matrix::Zero(count, rhs.cols());
    u.topRows(count - 1) = impl_->factor.solve(b.topRows(count - 1));
    u.rowwise() -= u.colwise().mean();

    const Matrix residual = impl_->stiffness * u - b;
    for (Eigen::Index c = 0; c < b.cols(); ++c) {
        const double scale = b.col(c).norm();
        if (scale == 0.0) continue;
        const double rel = residual.col(c).norm() / scale;
        if (!(rel <= kResidualTolerance)) {
            throw NumericError("linear solve did not reach tolerance", rel);
        }
    }
    return u;
}

Vector DiskModel::electrode_potentials(const Vector& u) const {
    const auto m = static_cast<Eigen::Index>(electrode_count());
    Vector v(m);
    for (Eigen::Index e = 0; e < m; ++e) v[e] = u[static_cast<Eigen::Index>(impl_->electrodes[e])];
    v.array() -= v.mean();
    return v;
}

DipoleStencil DiskModel::dipole_stencil(std::size_t node) const {
    const int ix = impl_->node_ix.at(node);
    const int iy = impl_->node_iy.at(node);
    DipoleStencil s{};
    s.plus[0] = impl_->grid_node(ix + 1, iy);
    s.minus[0] = impl_->grid_node(ix - 1, iy);
    s.plus[1] = impl_->grid_node(ix, iy + 1);
    s.minus[1] = impl_->grid_node(ix, iy - 1);
    for (int a = 0; a < 2; ++a) {
        if (s.plus[a] == kNone || s.minus[a] == kNone) {
            throw GeometryError("dipole at node " + std::to_string(node) +
                                " has a non-conducting neighbour");
        }
    }
    // Monopoles two cells apart: strength 1/(2h) gives a unit moment.
    s.weight = 1.0 / (2.0 * impl_->h);
    return s;
}

Matrix DiskModel::dipole_sources(std::size_t node) const {
    const DipoleStencil s = dipole_stencil(node);
    Matrix f = Matrix::Zero(static_cast<Eigen::Index>(node_count()), 2);
    for (int a = 0; a < 2; ++a) {
        f(static_cast<Eigen::Index>(s.plus[a]), a) += s.weight;
        f(static_cast<Eigen::Index>(s.minus[a]), a) -= s.weight;
    }
    return f;
}

TransferMatrices DiskModel::transfer(bool with_sensitivity) const {
    const auto count = static_cast<Eigen::Index>(node_count());
    const auto m = static_cast<Eigen::Index>(electrode_count());
    Matrix selector = Matrix::Constant(count, m, 0.0);
    for (Eigen::Index e = 0; e < m; ++e) {
        for (Eigen::Index k = 0; k < m; ++k) {
            selector(static_cast<Eigen::Index>(impl_->electrodes[k]), e) -= 1.0 / m;
        }
        selector(static_cast<Eigen::Index>(impl_->electrodes[e]), e) += 1.0;
    }
    TransferMatrices out;
    out.potential = solve(selector);
    if (with_sensitivity) {
        out.sensitivity = solve(Matrix(impl_->sensitivity * out.potential));
    }
    return out;
}

Eigen::Vector2d SourceSpace::radial(std::size_t i) const {
    const Point& p = locations.at(i);
    const double r = p.radius();
    if (r == 0.0) return {0.0, 1.0};
    return {p.x / r, p.y / r};
}

namespace {

Matrix stencil_columns(const DiskModel& model, const SourceSpace& space, const Matrix& transfer,
                       double sign) {
    const auto m = transfer.cols();
    Matrix out(m, 2 * static_cast<Eigen::Index>(space.size()));
    for (std::size_t i = 0; i < space.size(); ++i) {
        const DipoleStencil s = model.dipole_stencil(model.require_node(space.locations[i]));
        for (int a = 0; a < 2; ++a) {
            out.col(2 * static_cast<Eigen::Index>(i) + a) =
                sign * s.weight *
                (transfer.row(static_cast<Eigen::Index>(s.plus[a])) -
                 transfer.row(static_cast<Eigen::Index>(s.minus[a])))
                    .transpose();
        }
    }
    return out;
}

}  // namespace

Matrix leadfield(const DiskModel& model, const SourceSpace& space) {
    return leadfield_with_jacobian(model, space, false).leadfield;
}

LeadfieldPair leadfield_with_jacobian(const DiskModel& model, const SourceSpace& space,
                                      bool with_jacobian) {
    const TransferMatrices t = model.transfer(with_jacobian);
    LeadfieldPair out;
    out.leadfield = stencil_columns(model, space, t.potential, 1.0);
    if (with_jacobian) out.jacobian = stencil_columns(model, space, t.sensitivity, -1.0);
    return out;
}

Matrix leadfield_direct(const DiskModel& model, const SourceSpace& space) {
    const auto m = static_cast<Eigen::Index>(model.electrode_count());
    Matrix out(m, 2 * static_cast<Eigen::Index>(space.size()));
    for (std::size_t i = 0; i < space.size(); ++i) {
        const Matrix u = model.solve(model.dipole_sources(model.require_node(space.locations[i])));
        for (int a = 0; a < 2; ++a) {
            out.col(2 * static_cast<Eigen::Index>(i) + a) = model.electrode_potentials(u.col(a));
        }
    }
    return out;
}

Matrix leadfield_jacobian(const DiskModel& model, Point location) {
    const Matrix u = model.solve(model.dipole_sources(model.require_node(location)));
    const Matrix du = model.solve(Matrix(-(model.skull_sensitivity() * u)));
    Matrix out(static_cast<Eigen::Index>(model.electrode_count()), 2);
    for (int a = 0; a < 2; ++a) out.col(a) = model.electrode_potentials(du.col(a));
    return out;
}

Dipole Dipole::radial(const SourceSpace& space, std::size_t index, double amplitude) {
    return Dipole{index, amplitude * space.radial(index)};
}

Measurement simulate_measurement(const Matrix& leadfield_true, const Dipole& dipole, double snr_db,
                                 std::mt19937_64& rng) {
    const auto col = 2 * static_cast<Eigen::Index>(dipole.location_index);
    if (col + 1 >= leadfield_true.cols()) {
        throw ShapeError("dipole location " + std::to_string(dipole.location_index) +
                         " outside the leadfield");
    }
    if (std::isnan(snr_db)) throw DataError("SNR must not be NaN");

    Measurement out;
    out.snr_db = snr_db;
    const Vector signal = leadfield_true.middleCols(col, 2) * dipole.moment;
    out.values = signal;

    std::normal_distribution<double> normal(0.0, 1.0);
    Vector noise(signal.size());
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise[i] = normal(rng);

    if (std::isinf(snr_db) && snr_db > 0.0) {
        out.noise_scale = 0.0;
        return out;
    }
    const double signal_power = signal.squaredNorm();
    if (signal_power == 0.0) {
        throw DataError("SNR is undefined for a zero noiseless signal");
    }
    out.noise_scale = std::sqrt(signal_power / (noise.squaredNorm() * std::pow(10.0, snr_db / 10.0)));
    out.values += out.noise_scale * noise;
    return out;
}

SourceLayout make_layout(const SectorSpec& sector, const ModelSpec& standard,
                         const ModelSpec& accurate) {
    if (!(sector.angle_min_deg < sector.angle_max_deg) ||
        !(sector.radius_min >= 0.0 && sector.radius_min < sector.radius_max)) {
        throw ConfigError("source sector bounds are empty");
    }
    const double hc = standard.spacing();
    const double hf = accurate.spacing();
    const double ratio = hc / hf;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 || ratio < 1.0) {
        throw ConfigError("standard grid nodes must be a subset of the accurate grid nodes");
    }
    const int step = std::max(1, static_cast<int>(std::lround(sector.spacing / hc)));
    const double brain_limit =
        std::min(standard.radii.brain, accurate.radii.brain) - std::max(hc, hf) - kRadiusTolerance;
    const double to_rad = std::numbers::pi / 180.0;

    auto inside = [&](Point p) {
        const double r = p.radius();
        if (r < sector.radius_min || r > sector.radius_max || r >= brain_limit) return false;
        const double angle = std::atan2(p.y, p.x) / to_rad;
        return angle >= sector.angle_min_deg && angle <= sector.angle_max_deg;
    };

    SourceLayout layout;
    layout.reconstruction.spacing = step * hc;
    layout.training.spacing = step * hc;
    const int nc = standard.grid_size;
    for (int iy = 0; iy < nc; iy += step) {
        for (int ix = 0; ix < nc; ix += step) {
            const Point p{-1.0 + ix * hc, -1.0 + iy * hc};
            const Point q{p.x + sector.train_offset * hf, p.y};
            if (!inside(p) || q.radius() >= brain_limit) continue;
            layout.reconstruction.locations.push_back(p);
            layout.training.locations.push_back(q);
        }
    }
    if (layout.reconstruction.locations.empty()) {
        throw ConfigError("source sector contains no reconstruction nodes");
    }

    layout.test.spacing = hf;
    if (sector.test_on_grid) {
        layout.test.locations = layout.reconstruction.locations;
        return layout;
    }
    std::set<std::pair<long, long>> taken;
    auto key = [&](Point p) {
        return std::make_pair(std::lround((p.x + 1.0) / hf), std::lround((p.y + 1.0) / hf));
    };
    for (const Point& p : layout.reconstruction.locations) taken.insert(key(p));
    for (const Point& p : layout.training.locations) taken.insert(key(p));
    // Test sources sit at cell centres of the standard grid when the grids
    // differ, so none of them is a reconstruction node.
    const int nf = accurate.grid_size;
    const int fine_per_coarse = static_cast<int>(std::lround(ratio));
    const int offset = fine_per_coarse > 1 ? fine_per_coarse / 2 : 0;
    for (int iy = offset; iy < nf; iy += fine_per_coarse) {
        for (int ix = offset; ix < nf; ix += fine_per_coarse) {
            const Point p{-1.0 + ix * hf, -1.0 + iy * hf};
            if (!inside(p) || taken.contains(key(p))) continue;
            layout.test.locations.push_back(p);
        }
    }
    return layout;
}

}  // namespace bae::forward
