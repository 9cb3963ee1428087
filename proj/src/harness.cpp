#include "bae/harness.hpp"

#include "bae/errors.hpp"
#include "bae/family.hpp"
#include "bae/inversion.hpp"
#include "bae/parallel.hpp"
#include "bae/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <utility>

namespace bae::harness {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double percent_error(double estimate, double truth) {
    return std::isfinite(estimate) ? 100.0 * std::abs(estimate - truth) / truth : kNaN;
}

void append_note(std::string& notes, const std::string& text) {
    if (!notes.empty()) notes += "; ";
    notes += text;
}

bool same_spec(const forward::ModelSpec& a, const forward::ModelSpec& b) {
    return a.grid_size == b.grid_size && a.electrode_count == b.electrode_count &&
           a.radii.brain == b.radii.brain && a.radii.skull == b.radii.skull &&
           a.radii.scalp == b.radii.scalp && a.sigma.brain == b.sigma.brain &&
           a.sigma.scalp == b.sigma.scalp && a.sigma.skull == b.sigma.skull;
}

bool same_sector(const forward::SectorSpec& a, const forward::SectorSpec& b) {
    return a.angle_min_deg == b.angle_min_deg && a.angle_max_deg == b.angle_max_deg &&
           a.radius_min == b.radius_min && a.radius_max == b.radius_max && a.spacing == b.spacing &&
           a.train_offset == b.train_offset;
}

}  // namespace

forward::ModelSpec ExperimentConfig::default_standard() {
    forward::ModelSpec spec;
    spec.grid_size = 97;
    return spec;
}

forward::ModelSpec ExperimentConfig::default_accurate() {
    forward::ModelSpec spec;
    spec.grid_size = 193;
    return spec;
}

ExperimentConfig ExperimentConfig::quick() { return {}; }

ExperimentConfig ExperimentConfig::full() {
    ExperimentConfig config;
    config.test_locations = 88;
    return config;
}

std::size_t ExperimentConfig::trial_count() const {
    return static_cast<std::size_t>(test_locations) * sigma_true.size() * amplitudes.size() *
           snr_db.size() * static_cast<std::size_t>(realizations);
}

void ExperimentConfig::validate() const {
    training.sigma_prior.validate();
    if (sigma_true.empty() || amplitudes.empty() || snr_db.empty()) {
        throw ConfigError("sigma_true, amplitudes and snr_db must not be empty");
    }
    if (realizations < 1 || test_locations < 1) {
        throw ConfigError("realizations and test_locations must be positive");
    }
    for (double s : sigma_true) {
        if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("sigma_true values must be positive");
    }
    for (double a : amplitudes) {
        if (!(a > 0.0) || !std::isfinite(a)) throw ConfigError("amplitudes must be positive");
    }
    for (double s : snr_db) {
        if (std::isnan(s)) throw ConfigError("snr_db must not be NaN");
    }
    if (!(mm_scale > 0.0)) throw ConfigError("mm_scale must be positive");
    if (tabulation_nodes < 2) throw ConfigError("tabulation_nodes must be at least 2");
    if (standard.electrode_count != accurate.electrode_count) {
        throw ConfigError("standard and accurate models need the same electrodes");
    }
}

std::size_t ExperimentReport::failures() const {
    return static_cast<std::size_t>(
        std::count_if(rows.begin(), rows.end(), [](const TrialRow& r) { return !r.error.empty(); }));
}

std::vector<std::optional<calibration::GpModel>> fit_gp_models(const training::StatsStore& store,
                                                               const calibration::GpOptions& options,
                                                               std::vector<std::string>* warnings) {
    std::vector<std::optional<calibration::GpModel>> models(store.stats.size());
    std::vector<std::string> failures(store.stats.size());
    parallel_for(store.stats.size(), [&](std::size_t i) {
        const training::ErrorStats& s = store.stats[i];
        try {
            models[i] = calibration::gp_fit(s.gp_triplets, s.eigvecs.col(0).dot(s.eps_mean), options);
        } catch (const Error& e) {
            failures[i] = "location " + std::to_string(i) + ": " + e.what();
        }
    });
    if (warnings != nullptr) {
        for (auto& f : failures) {
            if (!f.empty()) warnings->push_back(std::move(f));
        }
    }
    return models;
}

Prepared prepare(const ExperimentConfig& config, std::optional<training::StatsStore> cached) {
    config.validate();
    Prepared out;
    if (cached) {
        if (!same_spec(cached->standard, config.standard) || !same_spec(cached->accurate, config.accurate) ||
            !same_sector(cached->sector, config.sector) || cached->config.p != config.training.p) {
            throw ConfigError("cached statistics were trained for a different configuration");
        }
        out.store = std::move(*cached);
    } else {
        out.store = training::train(config.standard, config.accurate, config.sector, config.training,
                                    config.seed);
    }
    out.gp_models = fit_gp_models(out.store, config.gp, &out.gp_warnings);
    return out;
}

forward::SourceSpace select_test_locations(const ExperimentConfig& config,
                                           const forward::SourceSpace& candidates) {
    const auto wanted = static_cast<std::size_t>(config.test_locations);
    if (candidates.size() < wanted) {
        throw ConfigError("only " + std::to_string(candidates.size()) + " test candidates for " +
                          std::to_string(wanted) + " requested locations");
    }
    std::vector<std::size_t> order(candidates.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = make_stream(config.seed, "test-locations");
    // Partial Fisher-Yates with an explicit uniform draw keeps the
    // selection independent of the standard library's shuffle.
    for (std::size_t k = 0; k < wanted; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, order.size() - 1);
        std::swap(order[k], order[pick(rng)]);
    }
    order.resize(wanted);
    std::sort(order.begin(), order.end());
    forward::SourceSpace out;
    out.spacing = candidates.spacing;
    for (std::size_t i : order) out.locations.push_back(candidates.locations[i]);
    return out;
}

double localization_error(forward::Point truth, forward::Point estimate, double mm_scale) {
    return mm_scale * std::hypot(truth.x - estimate.x, truth.y - estimate.y);
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
    return run_experiment(config, prepare(config));
}

ExperimentReport run_experiment(const ExperimentConfig& config, const Prepared& prepared) {
    config.validate();
    const training::StatsStore& store = prepared.store;
    const training::ConductivityPrior& prior = config.training.sigma_prior;

    const forward::SourceLayout layout = forward::make_layout(config.sector, config.standard, config.accurate);
    const forward::SourceSpace test = select_test_locations(config, layout.test);

    // Test data must come from conductivities and locations unseen in training.
    std::set<double> trained(store.stats_sigmas.begin(), store.stats_sigmas.end());
    trained.insert(store.gp_sigmas.begin(), store.gp_sigmas.end());
    for (double s : config.sigma_true) {
        if (trained.count(s) != 0) throw ConfigError("sigma_true value appears in the training draws");
    }
    if (!config.sector.test_on_grid) {
        for (const forward::Point& p : test.locations) {
            for (const forward::SourceSpace* space : {&store.training, &store.reconstruction}) {
                if (std::find(space->locations.begin(), space->locations.end(), p) != space->locations.end()) {
                    throw ConfigError("test location coincides with a training or reconstruction location");
                }
            }
        }
    }

    const forward::TabulatedFamily sample_family(config.accurate, store.training, prior.lower, prior.upper,
                                                 config.tabulation_nodes);
    std::optional<forward::TabulatedFamily> standard_family;
    if (config.run_alternating) {
        standard_family.emplace(config.standard, store.reconstruction, prior.lower, prior.upper,
                                config.tabulation_nodes);
    }
    const inversion::BaeScanner scanner(store.standard_leadfield, store.stats);

    std::vector<forward::Matrix> true_leadfields;
    for (double s : config.sigma_true) {
        true_leadfields.push_back(forward::leadfield(forward::build_model(config.accurate.with_skull(s)), test));
    }

    struct Key {
        std::size_t sigma, amplitude, snr, location;
        int realization;
    };
    std::vector<Key> keys;
    keys.reserve(config.trial_count());
    for (std::size_t si = 0; si < config.sigma_true.size(); ++si) {
        for (std::size_t ai = 0; ai < config.amplitudes.size(); ++ai) {
            for (std::size_t ni = 0; ni < config.snr_db.size(); ++ni) {
                for (std::size_t li = 0; li < test.size(); ++li) {
                    for (int r = 0; r < config.realizations; ++r) keys.push_back({si, ai, ni, li, r});
                }
            }
        }
    }

    const std::uint64_t noise_seed = config.noise_seed.value_or(config.seed);
    ExperimentReport report;
    report.thresholds_mm = config.thresholds_mm;
    report.rows.resize(keys.size());
    parallel_for(keys.size(), [&](std::size_t t) {
        const Key& key = keys[t];
        TrialRow& row = report.rows[t];
        row.trial = t;
        row.location = key.location;
        row.x = test.locations[key.location].x;
        row.y = test.locations[key.location].y;
        row.sigma_true = config.sigma_true[key.sigma];
        row.amplitude = config.amplitudes[key.amplitude];
        row.snr_db = config.snr_db[key.snr];
        row.realization = key.realization;
        for (double* v : {&row.x_st, &row.x_bae, &row.x_alt, &row.dx_bae, &row.dx_alt, &row.alpha,
                          &row.sigma_cg, &row.sigma_cg_iter, &row.sigma_gp, &row.sigma_map, &row.sigma_alt,
                          &row.err_cg, &row.err_cg_iter, &row.err_gp, &row.err_map, &row.err_alt,
                          &row.gp_variance}) {
            *v = kNaN;
        }
        try {
            auto rng = make_stream(noise_seed, "measurement-noise",
                                   {key.location, key.sigma, key.amplitude, key.snr,
                                    static_cast<std::uint64_t>(key.realization)});
            const forward::Dipole dipole = forward::Dipole::radial(test, key.location, row.amplitude);
            const forward::Measurement meas =
                forward::simulate_measurement(true_leadfields[key.sigma], dipole, row.snr_db, rng);
            row.noise_scale = meas.noise_scale;
            const inversion::NoiseModel noise = inversion::NoiseModel::for_measurement(meas);
            const forward::Point truth = test.locations[key.location];
            auto distance = [&](std::size_t l) {
                return localization_error(truth, store.reconstruction.locations[l], config.mm_scale);
            };

            const inversion::ScanResult standard =
                inversion::standard_dipole_scan(meas.values, store.standard_leadfield, noise);
            row.std_location = static_cast<long>(standard.location);
            row.x_st = distance(standard.location);

            const inversion::ScanResult bae = scanner.scan(meas.values, noise);
            const std::size_t l = bae.location;
            row.bae_location = static_cast<long>(l);
            row.x_bae = distance(l);
            row.dx_bae = row.x_st - row.x_bae;
            row.alpha = bae.alpha_hat[0];

            const training::ErrorStats& stats = store.stats[l];
            const calibration::CalibrationResult cg = calibration::cg_estimate(bae.alpha_hat, stats, prior);
            row.sigma_cg = cg.sigma_hat;
            try {
                const auto it = calibration::cg_iter_estimate(
                    bae.alpha_hat, bae.x_hat, sample_family, l,
                    store.standard_leadfield.middleCols(2 * static_cast<Eigen::Index>(l), 2), stats, prior,
                    cg.sigma_hat, config.iteration);
                row.sigma_cg_iter = it.sigma_hat;
                row.cg_iter_converged = it.converged ? 1 : 0;
            } catch (const Error& e) {
                append_note(row.notes, std::string("cg-iter: ") + e.what());
            }
            if (prepared.gp_models.size() == store.stats.size() && prepared.gp_models[l]) {
                try {
                    const auto gp = calibration::gp_estimate(row.alpha, bae.x_hat.norm(), *prepared.gp_models[l], prior);
                    row.sigma_gp = gp.sigma_hat;
                    row.gp_variance = gp.predictive_variance;
                } catch (const Error& e) {
                    append_note(row.notes, std::string("gp: ") + e.what());
                }
            } else {
                append_note(row.notes, "gp: no model for location " + std::to_string(l));
            }
            try {
                const auto map = calibration::map_closed_form(
                    row.alpha, stats, sample_family.jacobian(l, stats.sigma_star),
                    store.reconstruction.radial(l), config.training.dipole_prior.gamma, prior);
                row.sigma_map = map.sigma_hat;
            } catch (const Error& e) {
                append_note(row.notes, std::string("map-a2: ") + e.what());
            }
            if (standard_family) {
                const auto alt = calibration::alternating_scan(meas.values, *standard_family, noise, prior,
                                                               config.standard.sigma.skull, config.alternating);
                row.alt_location = static_cast<long>(alt.scan.location);
                row.x_alt = distance(alt.scan.location);
                row.dx_alt = row.x_st - row.x_alt;
                row.sigma_alt = alt.calibration.sigma_hat;
                row.alt_converged = alt.calibration.converged ? 1 : 0;
            }
            row.err_cg = percent_error(row.sigma_cg, row.sigma_true);
            row.err_cg_iter = percent_error(row.sigma_cg_iter, row.sigma_true);
            row.err_gp = percent_error(row.sigma_gp, row.sigma_true);
            row.err_map = percent_error(row.sigma_map, row.sigma_true);
            row.err_alt = percent_error(row.sigma_alt, row.sigma_true);
        } catch (const std::exception& e) {
            row.error = e.what();
        }
    });
    return report;
}

}  // namespace bae::harness
