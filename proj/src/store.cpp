#include "bae/store.hpp"

#include "bae/csv.hpp"
#include "bae/errors.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace bae::store {

static_assert(std::endian::native == std::endian::little, "store I/O assumes a little-endian host");

namespace {

constexpr std::string_view kMagic = "BAESTORE";

std::uint32_t crc32_of(std::string_view bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed large buffers in chunks.
    std::size_t offset = 0;
    while (offset < bytes.size()) {
        const std::size_t n = std::min<std::size_t>(bytes.size() - offset, 1u << 30);
        crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + offset), static_cast<uInt>(n));
        offset += n;
    }
    return static_cast<std::uint32_t>(crc);
}

bool valid_token(std::string_view s) {
    return !s.empty() && s.find_first_of(" \t\r\n") == std::string_view::npos;
}

std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        const auto j = line.find(' ', i);
        out.push_back(line.substr(i, j == std::string_view::npos ? std::string_view::npos : j - i));
        if (j == std::string_view::npos) break;
        i = j + 1;
    }
    return out;
}

forward::Matrix points_matrix(const forward::SourceSpace& space) {
    forward::Matrix m(static_cast<Eigen::Index>(space.size()), 2);
    for (std::size_t i = 0; i < space.size(); ++i) {
        m(static_cast<Eigen::Index>(i), 0) = space.locations[i].x;
        m(static_cast<Eigen::Index>(i), 1) = space.locations[i].y;
    }
    return m;
}

forward::SourceSpace points_space(const forward::Matrix& m, double spacing) {
    if (m.size() != 0 && m.cols() != 2) throw StoreError("location array must have two columns");
    forward::SourceSpace space;
    space.spacing = spacing;
    for (Eigen::Index i = 0; i < m.rows(); ++i) space.locations.push_back({m(i, 0), m(i, 1)});
    return space;
}

forward::Matrix column(const std::vector<double>& v) {
    return Eigen::Map<const forward::Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> values(const forward::Matrix& m) { return {m.data(), m.data() + m.size()}; }

void put_model(Container& c, const std::string& prefix, const forward::ModelSpec& s) {
    c.put(prefix + ".grid_size", static_cast<long>(s.grid_size));
    c.put(prefix + ".electrodes", static_cast<long>(s.electrode_count));
    c.put(prefix + ".radius.brain", s.radii.brain);
    c.put(prefix + ".radius.skull", s.radii.skull);
    c.put(prefix + ".radius.scalp", s.radii.scalp);
    c.put(prefix + ".sigma.brain", s.sigma.brain);
    c.put(prefix + ".sigma.skull", s.sigma.skull);
    c.put(prefix + ".sigma.scalp", s.sigma.scalp);
}

forward::ModelSpec get_model(const Container& c, const std::string& prefix) {
    forward::ModelSpec s;
    s.grid_size = static_cast<int>(c.integer(prefix + ".grid_size"));
    s.electrode_count = static_cast<int>(c.integer(prefix + ".electrodes"));
    s.radii.brain = c.real(prefix + ".radius.brain");
    s.radii.skull = c.real(prefix + ".radius.skull");
    s.radii.scalp = c.real(prefix + ".radius.scalp");
    s.sigma.brain = c.real(prefix + ".sigma.brain");
    s.sigma.skull = c.real(prefix + ".sigma.skull");
    s.sigma.scalp = c.real(prefix + ".sigma.scalp");
    return s;
}

std::string read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void require_kind(const Container& c, std::string_view kind) {
    if (c.kind != kind) throw StoreError("expected a '" + std::string(kind) + "' store, found '" + c.kind + "'");
}

}  // namespace

void Container::put(const std::string& key, const std::string& value) {
    if (!valid_token(key) || !valid_token(value)) throw StoreError("invalid meta entry '" + key + "'");
    meta.emplace_back(key, value);
}

void Container::put(const std::string& key, double value) { put(key, csv::format(value)); }

void Container::put(const std::string& key, long value) { put(key, std::to_string(value)); }

void Container::put_array(const std::string& name, forward::Matrix value) {
    if (!valid_token(name)) throw StoreError("invalid array name '" + name + "'");
    arrays.emplace_back(name, std::move(value));
}

const std::string& Container::text(std::string_view key) const {
    for (const auto& [k, v] : meta) {
        if (k == key) return v;
    }
    throw StoreError("missing meta entry '" + std::string(key) + "'");
}

double Container::real(std::string_view key) const {
    try {
        return csv::parse_double(text(key));
    } catch (const DataError& e) {
        throw StoreError(std::string(key) + ": " + e.what());
    }
}

long Container::integer(std::string_view key) const {
    try {
        return csv::parse_long(text(key));
    } catch (const DataError& e) {
        throw StoreError(std::string(key) + ": " + e.what());
    }
}

const forward::Matrix& Container::array(std::string_view name) const {
    for (const auto& [k, v] : arrays) {
        if (k == name) return v;
    }
    throw StoreError("missing array '" + std::string(name) + "'");
}

std::string serialize(const Container& c) {
    if (!valid_token(c.kind)) throw StoreError("invalid store kind");
    std::string out;
    out += std::string(kMagic) + " " + std::to_string(kVersion) + "\n";
    out += "kind " + c.kind + "\n";
    for (const auto& [k, v] : c.meta) out += "meta " + k + " " + v + "\n";
    for (const auto& [name, m] : c.arrays) {
        out += "array " + name + " " + std::to_string(m.rows()) + " " + std::to_string(m.cols()) + "\n";
    }
    out += "end\n";
    for (const auto& entry : c.arrays) {
        const forward::Matrix& m = entry.second;
        out.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
    }
    const std::uint32_t crc = crc32_of(out);
    char tail[4];
    std::memcpy(tail, &crc, 4);
    out.append(tail, 4);
    return out;
}

Container deserialize(std::string_view bytes) {
    if (bytes.size() < 4) throw StoreError("store truncated: no checksum");
    std::uint32_t stored = 0;
    std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
    const std::string_view body = bytes.substr(0, bytes.size() - 4);

    // Parse the manifest before the checksum so that a version mismatch is
    // reported as such rather than as corruption.
    Container c;
    std::vector<std::tuple<std::string, Eigen::Index, Eigen::Index>> shapes;
    std::size_t pos = 0;
    bool header = false;
    bool ended = false;
    while (!ended) {
        const auto nl = body.find('\n', pos);
        if (nl == std::string_view::npos) throw StoreError("store truncated inside the manifest");
        const auto line = body.substr(pos, nl - pos);
        pos = nl + 1;
        const auto parts = split(line);
        if (!header) {
            if (parts.size() != 2 || parts[0] != kMagic) throw StoreError("not a statistics store");
            long version = 0;
            try {
                version = csv::parse_long(parts[1]);
            } catch (const DataError&) {
                throw StoreError("unreadable store version");
            }
            if (version != kVersion) {
                throw StoreError("store version " + std::to_string(version) + " is not supported (expected " +
                                 std::to_string(kVersion) + ")");
            }
            header = true;
        } else if (parts.size() == 1 && parts[0] == "end") {
            ended = true;
        } else if (parts.size() == 2 && parts[0] == "kind") {
            c.kind = std::string(parts[1]);
        } else if (parts.size() == 3 && parts[0] == "meta") {
            c.meta.emplace_back(std::string(parts[1]), std::string(parts[2]));
        } else if (parts.size() == 4 && parts[0] == "array") {
            try {
                const long rows = csv::parse_long(parts[2]);
                const long cols = csv::parse_long(parts[3]);
                if (rows < 0 || cols < 0) throw DataError("negative shape");
                shapes.emplace_back(std::string(parts[1]), rows, cols);
            } catch (const DataError&) {
                throw StoreError("bad array shape in manifest line '" + std::string(line) + "'");
            }
        } else {
            throw StoreError("bad manifest line '" + std::string(line) + "'");
        }
    }
    std::size_t need = 0;
    for (const auto& [name, rows, cols] : shapes) need += static_cast<std::size_t>(rows * cols) * sizeof(double);
    if (body.size() - pos < need) throw StoreError("store truncated: array data incomplete");
    if (body.size() - pos > need) throw StoreError("store has trailing bytes after the array data");
    if (crc32_of(body) != stored) throw StoreError("store checksum mismatch");
    for (const auto& [name, rows, cols] : shapes) {
        forward::Matrix m(rows, cols);
        const std::size_t n = static_cast<std::size_t>(m.size()) * sizeof(double);
        if (n > 0) std::memcpy(m.data(), body.data() + pos, n);
        pos += n;
        c.arrays.emplace_back(name, std::move(m));
    }
    return c;
}

void write_container(const std::filesystem::path& path, const Container& container) {
    const std::string bytes = serialize(container);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    if (!out) throw IoError("failed writing " + path.string());
}

Container read_container(const std::filesystem::path& path) {
    try {
        return deserialize(read_bytes(path));
    } catch (const StoreError& e) {
        throw StoreError(path.string() + ": " + e.what());
    }
}

Container pack_stats(const training::StatsStore& s) {
    Container c;
    c.kind = "stats";
    put_model(c, "standard", s.standard);
    put_model(c, "accurate", s.accurate);
    c.put("sector.angle_min_deg", s.sector.angle_min_deg);
    c.put("sector.angle_max_deg", s.sector.angle_max_deg);
    c.put("sector.radius_min", s.sector.radius_min);
    c.put("sector.radius_max", s.sector.radius_max);
    c.put("sector.spacing", s.sector.spacing);
    c.put("sector.train_offset", static_cast<long>(s.sector.train_offset));
    c.put("sector.test_on_grid", static_cast<long>(s.sector.test_on_grid));
    const auto& t = s.config;
    c.put("prior.sigma_mean", t.sigma_prior.mean);
    c.put("prior.sigma_std", t.sigma_prior.std);
    c.put("prior.sigma_lower", t.sigma_prior.lower);
    c.put("prior.sigma_upper", t.sigma_prior.upper);
    c.put("prior.gamma", t.dipole_prior.gamma);
    c.put("train.dipoles_per_location", static_cast<long>(t.dipoles_per_location));
    c.put("train.stats_models", static_cast<long>(t.stats_models));
    c.put("train.gp_models", static_cast<long>(t.gp_models));
    c.put("train.gp_dipoles_per_model", static_cast<long>(t.gp_dipoles_per_model));
    c.put("train.p", static_cast<long>(t.p));
    c.put("seed", std::to_string(s.seed));
    c.put("reconstruction.spacing", s.reconstruction.spacing);
    c.put("training.spacing", s.training.spacing);
    c.put("locations", static_cast<long>(s.stats.size()));
    c.put_array("reconstruction", points_matrix(s.reconstruction));
    c.put_array("training", points_matrix(s.training));
    c.put_array("standard_leadfield", s.standard_leadfield);
    c.put_array("stats_sigmas", column(s.stats_sigmas));
    c.put_array("gp_sigmas", column(s.gp_sigmas));
    for (std::size_t i = 0; i < s.stats.size(); ++i) {
        const training::ErrorStats& e = s.stats[i];
        const std::string p = "loc" + std::to_string(i) + ".";
        c.put(p + "p", static_cast<long>(e.p));
        c.put(p + "sigma_star", e.sigma_star);
        c.put(p + "sigma_sample_mean", e.sigma_sample_mean);
        c.put(p + "sample_count", static_cast<long>(e.sample_count));
        c.put_array(p + "eps_mean", e.eps_mean);
        c.put_array(p + "eigvecs", e.eigvecs);
        c.put_array(p + "eigvals", e.eigvals);
        c.put_array(p + "residual_cov", e.residual_cov);
        c.put_array(p + "cross_cov", e.cross_cov);
        forward::Matrix triplets(static_cast<Eigen::Index>(e.gp_triplets.size()), 4);
        for (std::size_t k = 0; k < e.gp_triplets.size(); ++k) {
            const auto& g = e.gp_triplets[k];
            const auto r = static_cast<Eigen::Index>(k);
            triplets(r, 0) = static_cast<double>(g.id);
            triplets(r, 1) = g.alpha;
            triplets(r, 2) = g.amplitude;
            triplets(r, 3) = g.sigma;
        }
        c.put_array(p + "gp_triplets", std::move(triplets));
    }
    return c;
}

training::StatsStore unpack_stats(const Container& c) {
    require_kind(c, "stats");
    training::StatsStore s;
    s.standard = get_model(c, "standard");
    s.accurate = get_model(c, "accurate");
    s.sector.angle_min_deg = c.real("sector.angle_min_deg");
    s.sector.angle_max_deg = c.real("sector.angle_max_deg");
    s.sector.radius_min = c.real("sector.radius_min");
    s.sector.radius_max = c.real("sector.radius_max");
    s.sector.spacing = c.real("sector.spacing");
    s.sector.train_offset = static_cast<int>(c.integer("sector.train_offset"));
    s.sector.test_on_grid = c.integer("sector.test_on_grid") != 0;
    auto& t = s.config;
    t.sigma_prior.mean = c.real("prior.sigma_mean");
    t.sigma_prior.std = c.real("prior.sigma_std");
    t.sigma_prior.lower = c.real("prior.sigma_lower");
    t.sigma_prior.upper = c.real("prior.sigma_upper");
    t.dipole_prior.gamma = c.real("prior.gamma");
    t.dipoles_per_location = static_cast<int>(c.integer("train.dipoles_per_location"));
    t.stats_models = static_cast<int>(c.integer("train.stats_models"));
    t.gp_models = static_cast<int>(c.integer("train.gp_models"));
    t.gp_dipoles_per_model = static_cast<int>(c.integer("train.gp_dipoles_per_model"));
    t.p = static_cast<int>(c.integer("train.p"));
    try {
        s.seed = std::stoull(c.text("seed"));
    } catch (const std::exception&) {
        throw StoreError("unreadable seed");
    }
    s.reconstruction = points_space(c.array("reconstruction"), c.real("reconstruction.spacing"));
    s.training = points_space(c.array("training"), c.real("training.spacing"));
    s.standard_leadfield = c.array("standard_leadfield");
    s.stats_sigmas = values(c.array("stats_sigmas"));
    s.gp_sigmas = values(c.array("gp_sigmas"));
    const long count = c.integer("locations");
    if (count < 0) throw StoreError("negative location count");
    for (long i = 0; i < count; ++i) {
        const std::string p = "loc" + std::to_string(i) + ".";
        training::ErrorStats e;
        e.p = static_cast<int>(c.integer(p + "p"));
        e.sigma_star = c.real(p + "sigma_star");
        e.sigma_sample_mean = c.real(p + "sigma_sample_mean");
        e.sample_count = static_cast<std::size_t>(c.integer(p + "sample_count"));
        e.eps_mean = c.array(p + "eps_mean");
        e.eigvecs = c.array(p + "eigvecs");
        e.eigvals = c.array(p + "eigvals");
        e.residual_cov = c.array(p + "residual_cov");
        e.cross_cov = c.array(p + "cross_cov");
        const forward::Matrix& g = c.array(p + "gp_triplets");
        if (g.size() != 0 && g.cols() != 4) throw StoreError("GP triplet array must have four columns");
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
            e.gp_triplets.push_back({static_cast<std::size_t>(g(r, 0)), g(r, 1), g(r, 2), g(r, 3)});
        }
        s.stats.push_back(std::move(e));
    }
    return s;
}

void save_stats(const std::filesystem::path& path, const training::StatsStore& store) {
    write_container(path, pack_stats(store));
}

training::StatsStore load_stats(const std::filesystem::path& path) { return unpack_stats(read_container(path)); }

Container pack_gp_models(const GpModels& models) {
    Container c;
    c.kind = "gp";
    c.put("locations", static_cast<long>(models.size()));
    for (std::size_t i = 0; i < models.size(); ++i) {
        const std::string p = "loc" + std::to_string(i) + ".";
        c.put(p + "present", static_cast<long>(models[i].has_value()));
        if (!models[i]) continue;
        const calibration::GpModel& g = *models[i];
        c.put(p + "offset", g.offset);
        c.put(p + "signal_scale", g.signal_scale);
        c.put(p + "length_scale", g.length_scale);
        c.put(p + "jitter", g.jitter);
        c.put(p + "amplitude_floor", g.amplitude_floor);
        c.put_array(p + "coeffs", g.coeffs);
        c.put_array(p + "inputs", g.inputs);
        c.put_array(p + "outputs", g.outputs);
        c.put_array(p + "weights", g.weights);
        c.put_array(p + "factor", g.factor);
    }
    return c;
}

GpModels unpack_gp_models(const Container& c) {
    require_kind(c, "gp");
    const long count = c.integer("locations");
    if (count < 0) throw StoreError("negative location count");
    GpModels models(static_cast<std::size_t>(count));
    for (long i = 0; i < count; ++i) {
        const std::string p = "loc" + std::to_string(i) + ".";
        if (c.integer(p + "present") == 0) continue;
        calibration::GpModel g;
        g.offset = c.real(p + "offset");
        g.signal_scale = c.real(p + "signal_scale");
        g.length_scale = c.real(p + "length_scale");
        g.jitter = c.real(p + "jitter");
        g.amplitude_floor = c.real(p + "amplitude_floor");
        g.coeffs = c.array(p + "coeffs");
        g.inputs = c.array(p + "inputs");
        g.outputs = c.array(p + "outputs");
        g.weights = c.array(p + "weights");
        g.factor = c.array(p + "factor");
        models[static_cast<std::size_t>(i)] = std::move(g);
    }
    return models;
}

void save_gp_models(const std::filesystem::path& path, const GpModels& models) {
    write_container(path, pack_gp_models(models));
}

GpModels load_gp_models(const std::filesystem::path& path) { return unpack_gp_models(read_container(path)); }

}  // namespace bae::store
