#include "bae/config.hpp"

#include "bae/csv.hpp"
#include "bae/errors.hpp"

#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace bae::config {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

double to_double(const std::string& key, std::string_view text) {
    try {
        return csv::parse_double(trim(text));
    } catch (const DataError&) {
        throw ConfigError(key + ": expected a number, got '" + std::string(text) + "'");
    }
}

long to_long(const std::string& key, std::string_view text) {
    try {
        return csv::parse_long(trim(text));
    } catch (const DataError&) {
        throw ConfigError(key + ": expected an integer, got '" + std::string(text) + "'");
    }
}

bool to_bool(const std::string& key, std::string_view text) {
    const auto t = trim(text);
    if (t == "true" || t == "1" || t == "yes") return true;
    if (t == "false" || t == "0" || t == "no") return false;
    throw ConfigError(key + ": expected true or false, got '" + std::string(text) + "'");
}

std::vector<double> to_list(const std::string& key, std::string_view text) {
    std::vector<double> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto comma = text.find(',', start);
        const auto item = text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
        out.push_back(to_double(key, item));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

std::string list_text(const std::vector<double>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i > 0) out += ", ";
        out += csv::format(values[i]);
    }
    return out;
}

struct Key {
    const char* name;
    std::function<void(harness::ExperimentConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const harness::ExperimentConfig&)> get;
};

template <class Field>
Key real(const char* name, Field field) {
    return {name,
            [field](harness::ExperimentConfig& c, const std::string& k, const std::string& v) {
                field(c) = to_double(k, v);
            },
            [field](const harness::ExperimentConfig& c) {
                return csv::format(field(const_cast<harness::ExperimentConfig&>(c)));
            }};
}

template <class Field>
Key integer(const char* name, Field field) {
    return {name,
            [field](harness::ExperimentConfig& c, const std::string& k, const std::string& v) {
                field(c) = static_cast<std::remove_reference_t<decltype(field(c))>>(to_long(k, v));
            },
            [field](const harness::ExperimentConfig& c) {
                return std::to_string(field(const_cast<harness::ExperimentConfig&>(c)));
            }};
}

template <class Field>
Key boolean(const char* name, Field field) {
    return {name,
            [field](harness::ExperimentConfig& c, const std::string& k, const std::string& v) {
                field(c) = to_bool(k, v);
            },
            [field](const harness::ExperimentConfig& c) {
                return std::string(field(const_cast<harness::ExperimentConfig&>(c)) ? "true" : "false");
            }};
}

template <class Field>
Key list(const char* name, Field field) {
    return {name,
            [field](harness::ExperimentConfig& c, const std::string& k, const std::string& v) {
                field(c) = to_list(k, v);
            },
            [field](const harness::ExperimentConfig& c) {
                return list_text(field(const_cast<harness::ExperimentConfig&>(c)));
            }};
}

using C = harness::ExperimentConfig;

// Geometry and conductivities are shared by both meshes, so their keys
// write to the standard and the accurate model at once.
template <class Field>
Key both_models(const char* name, Field field) {
    return {name,
            [field](C& c, const std::string& k, const std::string& v) {
                const double value = to_double(k, v);
                field(c.standard) = value;
                field(c.accurate) = value;
            },
            [field](const C& c) { return csv::format(field(const_cast<forward::ModelSpec&>(c.standard))); }};
}

const std::vector<Key>& keys() {
    static const std::vector<Key> table = {
        integer("standard.grid_size", [](C& c) -> int& { return c.standard.grid_size; }),
        integer("accurate.grid_size", [](C& c) -> int& { return c.accurate.grid_size; }),
        both_models("radius.brain", [](forward::ModelSpec& m) -> double& { return m.radii.brain; }),
        both_models("radius.skull", [](forward::ModelSpec& m) -> double& { return m.radii.skull; }),
        both_models("radius.scalp", [](forward::ModelSpec& m) -> double& { return m.radii.scalp; }),
        both_models("sigma.brain", [](forward::ModelSpec& m) -> double& { return m.sigma.brain; }),
        both_models("sigma.skull", [](forward::ModelSpec& m) -> double& { return m.sigma.skull; }),
        both_models("sigma.scalp", [](forward::ModelSpec& m) -> double& { return m.sigma.scalp; }),
        {"electrodes",
         [](C& c, const std::string& k, const std::string& v) {
             c.standard.electrode_count = c.accurate.electrode_count = static_cast<int>(to_long(k, v));
         },
         [](const C& c) { return std::to_string(c.standard.electrode_count); }},
        real("sector.angle_min_deg", [](C& c) -> double& { return c.sector.angle_min_deg; }),
        real("sector.angle_max_deg", [](C& c) -> double& { return c.sector.angle_max_deg; }),
        real("sector.radius_min", [](C& c) -> double& { return c.sector.radius_min; }),
        real("sector.radius_max", [](C& c) -> double& { return c.sector.radius_max; }),
        real("sector.spacing", [](C& c) -> double& { return c.sector.spacing; }),
        integer("sector.train_offset", [](C& c) -> int& { return c.sector.train_offset; }),
        boolean("sector.test_on_grid", [](C& c) -> bool& { return c.sector.test_on_grid; }),
        real("prior.sigma_mean", [](C& c) -> double& { return c.training.sigma_prior.mean; }),
        real("prior.sigma_std", [](C& c) -> double& { return c.training.sigma_prior.std; }),
        real("prior.sigma_lower", [](C& c) -> double& { return c.training.sigma_prior.lower; }),
        real("prior.sigma_upper", [](C& c) -> double& { return c.training.sigma_prior.upper; }),
        real("prior.gamma", [](C& c) -> double& { return c.training.dipole_prior.gamma; }),
        integer("train.dipoles_per_location", [](C& c) -> int& { return c.training.dipoles_per_location; }),
        integer("train.stats_models", [](C& c) -> int& { return c.training.stats_models; }),
        integer("train.gp_models", [](C& c) -> int& { return c.training.gp_models; }),
        integer("train.gp_dipoles_per_model", [](C& c) -> int& { return c.training.gp_dipoles_per_model; }),
        integer("train.p", [](C& c) -> int& { return c.training.p; }),
        integer("gp.degree", [](C& c) -> int& { return c.gp.degree; }),
        real("gp.signal_scale", [](C& c) -> double& { return c.gp.signal_scale; }),
        real("gp.length_scale", [](C& c) -> double& { return c.gp.length_scale; }),
        real("gp.jitter_factor", [](C& c) -> double& { return c.gp.jitter_factor; }),
        real("gp.amplitude_floor", [](C& c) -> double& { return c.gp.amplitude_floor; }),
        real("gp.max_condition", [](C& c) -> double& { return c.gp.max_condition; }),
        integer("iter.max_iter", [](C& c) -> int& { return c.iteration.max_iter; }),
        real("iter.tolerance", [](C& c) -> double& { return c.iteration.tolerance; }),
        integer("alt.max_outer", [](C& c) -> int& { return c.alternating.max_outer; }),
        real("alt.tolerance", [](C& c) -> double& { return c.alternating.tolerance; }),
        integer("alt.max_halvings", [](C& c) -> int& { return c.alternating.max_halvings; }),
        integer("tabulation_nodes", [](C& c) -> int& { return c.tabulation_nodes; }),
        list("experiment.sigma_true", [](C& c) -> std::vector<double>& { return c.sigma_true; }),
        list("experiment.amplitudes", [](C& c) -> std::vector<double>& { return c.amplitudes; }),
        list("experiment.snr_db", [](C& c) -> std::vector<double>& { return c.snr_db; }),
        integer("experiment.realizations", [](C& c) -> int& { return c.realizations; }),
        integer("experiment.test_locations", [](C& c) -> int& { return c.test_locations; }),
        boolean("experiment.run_alternating", [](C& c) -> bool& { return c.run_alternating; }),
        real("experiment.mm_scale", [](C& c) -> double& { return c.mm_scale; }),
        list("experiment.thresholds_mm", [](C& c) -> std::vector<double>& { return c.thresholds_mm; }),
        {"seed",
         [](C& c, const std::string& k, const std::string& v) {
             const long s = to_long(k, v);
             if (s < 0) throw ConfigError("seed must be non-negative");
             c.seed = static_cast<std::uint64_t>(s);
         },
         [](const C& c) { return std::to_string(c.seed); }},
        {"noise_seed",
         [](C& c, const std::string& k, const std::string& v) {
             const long s = to_long(k, v);
             if (s < 0) throw ConfigError("noise_seed must be non-negative");
             c.noise_seed = static_cast<std::uint64_t>(s);
         },
         [](const C& c) { return std::to_string(c.noise_seed.value_or(c.seed)); }},
    };
    return table;
}

}  // namespace

KeyValues parse(std::string_view text) {
    KeyValues out;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key(trim(line.substr(0, eq)));
        const std::string value(trim(line.substr(eq + 1)));
        if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
        if (!out.emplace(key, value).second) {
            throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
        }
    }
    return out;
}

KeyValues read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return parse(ss.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void apply(const KeyValues& values, harness::ExperimentConfig& config) {
    const auto& table = keys();
    for (const auto& [key, value] : values) {
        const auto it = std::find_if(table.begin(), table.end(), [&](const Key& k) { return key == k.name; });
        if (it == table.end()) throw ConfigError("unknown configuration key '" + key + "'");
        it->set(config, key, value);
    }
}

std::string describe(const harness::ExperimentConfig& config) {
    std::string out;
    for (const Key& k : keys()) {
        out += k.name;
        out += " = ";
        out += k.get(config);
        out += '\n';
    }
    return out;
}

}  // namespace bae::config
