// Command-line front end: model inspection, training, simulation, scanning,
// calibration and the end-to-end experiment.

#include "bae/calibration.hpp"
#include "bae/config.hpp"
#include "bae/csv.hpp"
#include "bae/errors.hpp"
#include "bae/family.hpp"
#include "bae/harness.hpp"
#include "bae/inversion.hpp"
#include "bae/rng.hpp"
#include "bae/store.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using bae::harness::ExperimentConfig;

ExperimentConfig load_config(const std::vector<std::string>& paths) {
    ExperimentConfig config;
    for (const auto& p : paths) {
        if (!p.empty()) bae::config::apply(bae::config::read_file(p), config);
    }
    return config;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw bae::IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw bae::IoError("cannot open " + path + " for writing");
    out << text;
    if (!out) throw bae::IoError("failed writing " + path);
}

bae::forward::Vector read_measurement(const std::string& path) {
    const auto records = bae::csv::parse(slurp(path));
    if (records.size() < 2) throw bae::DataError(path + ": no measurement rows");
    bae::forward::Vector v(static_cast<Eigen::Index>(records.size() - 1));
    for (std::size_t k = 1; k < records.size(); ++k) {
        const auto& r = records[k];
        if (r.size() != 2) throw bae::DataError(path + ": expected electrode_index,value");
        const long e = bae::csv::parse_long(r[0]);
        if (e < 0 || e >= v.size()) throw bae::DataError(path + ": electrode index out of range");
        v(e) = bae::csv::parse_double(r[1]);
    }
    return v;
}

struct ScanRecord {
    std::string method;
    std::size_t location = 0;
    Eigen::Vector2d moment = Eigen::Vector2d::Zero();
    bae::forward::Vector alpha;
    double functional = 0.0;
};

ScanRecord read_scan(const std::string& path) {
    const auto records = bae::csv::parse(slurp(path));
    if (records.size() < 2 || records[1].size() < 7) throw bae::DataError(path + ": not a scan result");
    const auto& r = records[1];
    ScanRecord s;
    s.method = r[0];
    s.location = static_cast<std::size_t>(bae::csv::parse_long(r[1]));
    s.moment = {bae::csv::parse_double(r[4]), bae::csv::parse_double(r[5])};
    s.functional = bae::csv::parse_double(r[6]);
    s.alpha.resize(static_cast<Eigen::Index>(r.size() - 7));
    for (std::size_t k = 7; k < r.size(); ++k) s.alpha(static_cast<Eigen::Index>(k - 7)) = bae::csv::parse_double(r[k]);
    return s;
}

bae::inversion::NoiseModel noise_for(const bae::forward::Vector& v, double scale) {
    bae::forward::Measurement m;
    m.values = v;
    m.noise_scale = scale;
    return bae::inversion::NoiseModel::for_measurement(m);
}

int cmd_build_model(const std::string& cfg, const std::string& out) {
    const ExperimentConfig config = load_config({cfg});
    const auto standard = bae::forward::build_model(config.standard);
    const auto accurate = bae::forward::build_model(config.accurate);
    const auto layout = bae::forward::make_layout(config.sector, config.standard, config.accurate);
    std::string text = bae::config::describe(config);
    text += "# standard conducting nodes: " + std::to_string(standard.node_count()) + "\n";
    text += "# accurate conducting nodes: " + std::to_string(accurate.node_count()) + "\n";
    text += "# reconstruction locations: " + std::to_string(layout.reconstruction.size()) + "\n";
    text += "# test candidates: " + std::to_string(layout.test.size()) + "\n";
    if (out.empty()) {
        std::cout << text;
    } else {
        write_text(out, text);
    }
    return 0;
}

int cmd_train(const std::string& model_cfg, const std::string& prior_cfg, const std::string& out,
              std::optional<std::uint64_t> seed, const std::string& gp_out) {
    ExperimentConfig config = load_config({model_cfg, prior_cfg});
    if (seed) config.seed = *seed;
    const auto t0 = std::chrono::steady_clock::now();
    const auto store =
        bae::training::train(config.standard, config.accurate, config.sector, config.training, config.seed);
    bae::store::save_stats(out, store);
    std::cerr << "trained " << store.stats.size() << " locations in "
              << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s\n";
    if (!gp_out.empty()) {
        std::vector<std::string> warnings;
        const auto models = bae::harness::fit_gp_models(store, config.gp, &warnings);
        for (const auto& w : warnings) std::cerr << "gp: " << w << "\n";
        bae::store::save_gp_models(gp_out, models);
    }
    return 0;
}

int cmd_simulate(const std::string& cfg, double sigma, std::size_t location, double amplitude, double snr,
                 std::uint64_t seed, const std::string& out) {
    const ExperimentConfig config = load_config({cfg});
    const auto layout = bae::forward::make_layout(config.sector, config.standard, config.accurate);
    if (location >= layout.test.size()) throw bae::ConfigError("test location index out of range");
    const auto model = bae::forward::build_model(config.accurate.with_skull(sigma));
    const auto lf = bae::forward::leadfield(model, layout.test);
    auto rng = bae::make_stream(seed, "measurement-noise", {location});
    const auto dipole = bae::forward::Dipole::radial(layout.test, location, amplitude);
    const auto meas = bae::forward::simulate_measurement(lf, dipole, snr, rng);
    std::string text = bae::csv::record({"electrode_index", "value"});
    for (Eigen::Index e = 0; e < meas.values.size(); ++e) {
        text += bae::csv::record({std::to_string(e), bae::csv::format(meas.values(e))});
    }
    write_text(out, text);
    const auto p = layout.test.locations[location];
    std::cout << "source " << bae::csv::format(p.x) << " " << bae::csv::format(p.y) << " noise_scale "
              << bae::csv::format(meas.noise_scale) << "\n";
    return 0;
}

int cmd_scan(const std::string& data, const std::string& stats_path, const std::string& method,
             const std::string& out, double noise_scale) {
    const auto v = read_measurement(data);
    const auto store = bae::store::load_stats(stats_path);
    const auto noise = noise_for(v, noise_scale);
    bae::inversion::ScanResult r;
    if (method == "standard") {
        r = bae::inversion::standard_dipole_scan(v, store.standard_leadfield, noise);
    } else {
        r = bae::inversion::bae_dipole_scan(v, store.standard_leadfield, store.stats, noise);
    }
    for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
    const auto p = store.reconstruction.locations[r.location];
    std::vector<std::string> head{"method", "location", "x", "y", "moment_x", "moment_y", "functional"};
    std::vector<std::string> row{method,
                                 std::to_string(r.location),
                                 bae::csv::format(p.x),
                                 bae::csv::format(p.y),
                                 bae::csv::format(r.x_hat(0)),
                                 bae::csv::format(r.x_hat(1)),
                                 bae::csv::format(r.functional_value)};
    for (Eigen::Index k = 0; k < r.alpha_hat.size(); ++k) {
        head.push_back("alpha_" + std::to_string(k + 1));
        row.push_back(bae::csv::format(r.alpha_hat(k)));
    }
    write_text(out, bae::csv::record(head) + bae::csv::record(row));
    return 0;
}

int cmd_calibrate(const std::string& scan_path, const std::string& stats_path, const std::string& gp_path,
                  const std::string& method_name, const std::string& out, const std::string& data,
                  double noise_scale) {
    using namespace bae::calibration;
    const Method method = parse_method(method_name);
    const auto store = bae::store::load_stats(stats_path);
    const auto& prior = store.config.sigma_prior;
    CalibrationResult result;
    if (method == Method::alternating) {
        if (data.empty()) throw bae::ConfigError("alt needs --data");
        const auto v = read_measurement(data);
        const bae::forward::TabulatedFamily family(store.standard, store.reconstruction, prior.lower, prior.upper);
        result = alternating_scan(v, family, noise_for(v, noise_scale), prior, store.standard.sigma.skull).calibration;
    } else {
        const ScanRecord scan = read_scan(scan_path);
        if (scan.location >= store.stats.size()) throw bae::ConfigError("scan location not in the store");
        if (scan.alpha.size() == 0) throw bae::ConfigError("calibration needs a BAE scan result");
        const auto& stats = store.stats[scan.location];
        switch (method) {
            case Method::cg:
                result = cg_estimate(scan.alpha, stats, prior);
                break;
            case Method::cg_iter: {
                const bae::forward::ExactFamily family(store.accurate, store.training);
                const auto l = static_cast<Eigen::Index>(scan.location);
                result = cg_iter_estimate(scan.alpha, scan.moment, family, scan.location,
                                          store.standard_leadfield.middleCols(2 * l, 2), stats, prior,
                                          cg_estimate(scan.alpha, stats, prior).sigma_hat);
                break;
            }
            case Method::gp: {
                if (gp_path.empty()) throw bae::ConfigError("gp needs --gp");
                const auto models = bae::store::load_gp_models(gp_path);
                if (scan.location >= models.size() || !models[scan.location]) {
                    throw bae::ConfigError("no GP model for the scan location");
                }
                result = gp_estimate(scan.alpha(0), scan.moment.norm(), *models[scan.location], prior);
                break;
            }
            case Method::map_a2: {
                const bae::forward::ExactFamily family(store.accurate, store.training);
                result = map_closed_form(scan.alpha(0), stats, family.jacobian(scan.location, stats.sigma_star),
                                         store.reconstruction.radial(scan.location),
                                         store.config.dipole_prior.gamma, prior);
                break;
            }
            case Method::alternating:
                break;
        }
    }
    std::string text = bae::csv::record(
        {"method", "sigma_hat", "sigma_unclamped", "iterations", "converged", "predictive_variance"});
    text += bae::csv::record({std::string(method_name), bae::csv::format(result.sigma_hat),
                              bae::csv::format(result.sigma_unclamped), std::to_string(result.iterations),
                              result.converged ? "1" : "0", bae::csv::format(result.predictive_variance)});
    write_text(out, text);
    return 0;
}

int cmd_experiment(const std::string& cfg, const std::string& out, const std::string& profile,
                   std::optional<std::uint64_t> seed, bool overwrite, const std::string& stats_path) {
    ExperimentConfig config = profile == "full" ? ExperimentConfig::full() : ExperimentConfig::quick();
    if (!cfg.empty()) bae::config::apply(bae::config::read_file(cfg), config);
    if (seed) config.seed = *seed;
    const auto t0 = std::chrono::steady_clock::now();
    std::optional<bae::training::StatsStore> cached;
    if (!stats_path.empty()) cached = bae::store::load_stats(stats_path);
    const auto prepared = bae::harness::prepare(config, std::move(cached));
    for (const auto& w : prepared.gp_warnings) std::cerr << "gp: " << w << "\n";
    const auto t1 = std::chrono::steady_clock::now();
    const auto report = bae::harness::run_experiment(config, prepared);
    const auto t2 = std::chrono::steady_clock::now();
    bae::harness::emit_report(report, out, overwrite);
    std::cerr << "training " << std::chrono::duration<double>(t1 - t0).count() << " s, trials "
              << std::chrono::duration<double>(t2 - t1).count() << " s, " << report.rows.size() << " rows, "
              << report.failures() << " failed\n";
    return report.failures() == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Approximation-error dipole scanning with skull-conductivity calibration"};
    app.require_subcommand(1);

    std::string cfg, out;
    auto* build = app.add_subcommand("build-model", "Build both meshes and describe the model");
    build->add_option("--config", cfg, "model configuration file")->required();
    build->add_option("--out", out, "description file (stdout if omitted)");

    std::string model_cfg, prior_cfg, gp_out;
    std::optional<std::uint64_t> seed;
    auto* train = app.add_subcommand("train", "Sample approximation errors and write the statistics store");
    train->add_option("--model-config", model_cfg)->required();
    train->add_option("--prior-config", prior_cfg);
    train->add_option("--out", out)->required();
    train->add_option("--seed", seed);
    train->add_option("--gp-out", gp_out, "also fit and store the GP calibration models");

    double sigma = 0.0103, amplitude = 1.3, snr = 40.0;
    std::size_t location = 0;
    std::uint64_t sim_seed = 1;
    auto* simulate = app.add_subcommand("simulate", "Simulate one measurement on the accurate model");
    simulate->add_option("--config", cfg);
    simulate->add_option("--sigma", sigma, "true skull conductivity (S/m)");
    simulate->add_option("--location", location, "index into the test locations");
    simulate->add_option("--amplitude", amplitude);
    simulate->add_option("--snr", snr, "dB; inf for noise-free data");
    simulate->add_option("--seed", sim_seed);
    simulate->add_option("--out", out)->required();

    std::string data, stats_path, method = "bae";
    double noise_scale = 0.0;
    auto* scan = app.add_subcommand("scan", "Dipole scan of one measurement");
    scan->add_option("--data", data)->required();
    scan->add_option("--stats", stats_path)->required();
    scan->add_option("--method", method)->check(CLI::IsMember({"standard", "bae"}));
    scan->add_option("--out", out)->required();
    scan->add_option("--noise-scale", noise_scale, "noise standard deviation (floor model if omitted)");

    std::string scan_path, gp_path, cal_method = "cg";
    auto* calibrate = app.add_subcommand("calibrate", "Estimate the skull conductivity from a scan result");
    calibrate->add_option("--scan", scan_path);
    calibrate->add_option("--stats", stats_path)->required();
    calibrate->add_option("--gp", gp_path);
    calibrate->add_option("--method", cal_method)->check(CLI::IsMember({"cg", "cg-iter", "gp", "map-a2", "alt"}));
    calibrate->add_option("--out", out)->required();
    calibrate->add_option("--data", data, "measurement, required by alt");
    calibrate->add_option("--noise-scale", noise_scale);

    std::string profile = "quick";
    bool overwrite = false;
    auto* experiment = app.add_subcommand("experiment", "Run the full simulation study");
    experiment->add_option("--config", cfg);
    experiment->add_option("--out", out)->required();
    experiment->add_option("--profile", profile)->check(CLI::IsMember({"quick", "full"}));
    experiment->add_option("--seed", seed);
    experiment->add_flag("--overwrite", overwrite);
    experiment->add_option("--stats", stats_path, "reuse a trained statistics store");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*build) return cmd_build_model(cfg, out);
        if (*train) return cmd_train(model_cfg, prior_cfg, out, seed, gp_out);
        if (*simulate) return cmd_simulate(cfg, sigma, location, amplitude, snr, sim_seed, out);
        if (*scan) return cmd_scan(data, stats_path, method, out, noise_scale);
        if (*calibrate) {
            if (cal_method != "alt" && scan_path.empty()) throw bae::ConfigError("--scan is required");
            return cmd_calibrate(scan_path, stats_path, gp_path, cal_method, out, data, noise_scale);
        }
        if (*experiment) return cmd_experiment(cfg, out, profile, seed, overwrite, stats_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
