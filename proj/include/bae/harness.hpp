#pragma once

// End-to-end experiment: train (or reuse) statistics, simulate test data on
// the accurate model, run the standard, BAE and alternating scans plus all
// calibrators, and tabulate localization and conductivity errors.

#include "bae/calibration.hpp"
#include "bae/forward.hpp"
#include "bae/training.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace bae::harness {

struct ExperimentConfig {
    forward::ModelSpec standard = default_standard();
    forward::ModelSpec accurate = default_accurate();
    forward::SectorSpec sector;
    training::TrainingConfig training;
    calibration::GpOptions gp;
    calibration::IterationOptions iteration;
    calibration::AlternatingOptions alternating;
    int tabulation_nodes = 16;

    std::vector<double> sigma_true{0.00601, 0.0139};
    std::vector<double> amplitudes{0.3, 1.3, 2.5, 4.2};
    std::vector<double> snr_db{40.0, 30.0};
    int realizations = 5;
    int test_locations = 40;
    bool run_alternating = true;
    double mm_scale = 85.0;
    std::vector<double> thresholds_mm{2.0, 6.0};

    std::uint64_t seed = 1;
    std::optional<std::uint64_t> noise_seed;  // defaults to seed

    [[nodiscard]] static forward::ModelSpec default_standard();
    [[nodiscard]] static forward::ModelSpec default_accurate();
    /// 40 test locations (the default).
    [[nodiscard]] static ExperimentConfig quick();
    /// 88 test locations.
    [[nodiscard]] static ExperimentConfig full();
    [[nodiscard]] std::size_t trial_count() const;
    void validate() const;
};

struct TrialRow {
    std::size_t trial = 0;
    std::size_t location = 0;  // index into the test source space
    double x = 0.0;
    double y = 0.0;
    double sigma_true = 0.0;
    double amplitude = 0.0;
    double snr_db = 0.0;
    int realization = 0;
    double noise_scale = 0.0;
    long std_location = -1;
    long bae_location = -1;
    long alt_location = -1;
    double x_st = 0.0;
    double x_bae = 0.0;
    double x_alt = 0.0;
    double dx_bae = 0.0;   // x_st - x_bae
    double dx_alt = 0.0;   // x_st - x_alt
    double alpha = 0.0;    // first BAE coefficient at the selected location
    double sigma_cg = 0.0;
    double sigma_cg_iter = 0.0;
    double sigma_gp = 0.0;
    double sigma_map = 0.0;
    double sigma_alt = 0.0;
    double err_cg = 0.0;   // 100 |sigma_hat - sigma_true| / sigma_true
    double err_cg_iter = 0.0;
    double err_gp = 0.0;
    double err_map = 0.0;
    double err_alt = 0.0;
    int cg_iter_converged = 0;
    int alt_converged = 0;
    double gp_variance = 0.0;
    std::string notes;  // method-level refusals (e.g. GP amplitude floor)
    std::string error;  // trial-level failure; empty on success

    friend bool operator==(const TrialRow&, const TrialRow&) = default;
};

struct ExperimentReport {
    std::vector<TrialRow> rows;
    std::vector<double> thresholds_mm{2.0, 6.0};
    [[nodiscard]] std::size_t failures() const;
};

/// Everything that is trained once and shared by all trials.
struct Prepared {
    training::StatsStore store;
    std::vector<std::optional<calibration::GpModel>> gp_models;
    std::vector<std::string> gp_warnings;
};

[[nodiscard]] Prepared prepare(const ExperimentConfig& config,
                               std::optional<training::StatsStore> cached = std::nullopt);

/// Fits the per-location GP models of a statistics store.
[[nodiscard]] std::vector<std::optional<calibration::GpModel>> fit_gp_models(
    const training::StatsStore& store, const calibration::GpOptions& options,
    std::vector<std::string>* warnings = nullptr);

[[nodiscard]] ExperimentReport run_experiment(const ExperimentConfig& config, const Prepared& prepared);
[[nodiscard]] ExperimentReport run_experiment(const ExperimentConfig& config);

/// Test locations used by an experiment: a seeded sample of the candidate
/// test nodes, in candidate order.
[[nodiscard]] forward::SourceSpace select_test_locations(const ExperimentConfig& config,
                                                         const forward::SourceSpace& candidates);

[[nodiscard]] double localization_error(forward::Point truth, forward::Point estimate, double mm_scale);

// Summary statistics ---------------------------------------------------------

struct BoxStats {
    std::size_t count = 0;
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
    double min = 0.0;
    double max = 0.0;
    double whisker_low = 0.0;   // most extreme value within 1.5 IQR
    double whisker_high = 0.0;
};

/// Quartiles by linear interpolation between order statistics. Non-finite
/// values are ignored; throws DataError when nothing remains.
[[nodiscard]] BoxStats box_stats(std::vector<double> values);
/// Fraction of finite values strictly above the threshold.
[[nodiscard]] double fraction_above(const std::vector<double>& values, double threshold);

struct SummaryRow {
    std::string sigma_true;  // value or "all"
    std::string amplitude;
    std::string snr_db;
    std::string metric;
    BoxStats stats;
    double fraction_positive = 0.0;
    std::vector<double> fraction_above;  // one per threshold
};

[[nodiscard]] std::vector<SummaryRow> aggregate(const ExperimentReport& report);

// Report files -----------------------------------------------------------------

/// Writes trials.csv, summary.csv, histogram.csv and boxplot.csv. A
/// non-empty directory is only reused with `overwrite`.
void emit_report(const ExperimentReport& report, const std::filesystem::path& dir, bool overwrite);

[[nodiscard]] std::string trials_csv(const ExperimentReport& report);
[[nodiscard]] std::vector<TrialRow> parse_trials_csv(const std::string& text);

}  // namespace bae::harness
