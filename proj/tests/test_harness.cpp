#include "bae/config.hpp"
#include "bae/errors.hpp"
#include "bae/harness.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

using namespace bae;
using namespace bae::harness;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

ExperimentConfig tiny() {
    ExperimentConfig c;
    c.standard.grid_size = 33;
    c.accurate.grid_size = 65;
    c.sector = {60, 120, 0.4, 0.7, 0.0625, 1, false};
    c.training.dipoles_per_location = 10;
    c.training.stats_models = 6;
    c.training.gp_models = 12;
    c.training.gp_dipoles_per_model = 2;
    c.gp.degree = 1;
    c.tabulation_nodes = 6;
    c.sigma_true = {0.0087};
    c.amplitudes = {1.0, 3.0};
    c.snr_db = {40.0};
    c.realizations = 2;
    c.test_locations = 3;
    c.seed = 5;
    return c;
}

bool same(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

bool same_row(const TrialRow& a, const TrialRow& b) {
    const double da[] = {a.x, a.y, a.sigma_true, a.amplitude, a.snr_db, a.noise_scale, a.x_st, a.x_bae, a.x_alt,
                         a.dx_bae, a.dx_alt, a.alpha, a.sigma_cg, a.sigma_cg_iter, a.sigma_gp, a.sigma_map,
                         a.sigma_alt, a.err_cg, a.err_cg_iter, a.err_gp, a.err_map, a.err_alt, a.gp_variance};
    const double db[] = {b.x, b.y, b.sigma_true, b.amplitude, b.snr_db, b.noise_scale, b.x_st, b.x_bae, b.x_alt,
                         b.dx_bae, b.dx_alt, b.alpha, b.sigma_cg, b.sigma_cg_iter, b.sigma_gp, b.sigma_map,
                         b.sigma_alt, b.err_cg, b.err_cg_iter, b.err_gp, b.err_map, b.err_alt, b.gp_variance};
    for (std::size_t i = 0; i < std::size(da); ++i) {
        if (!same(da[i], db[i])) return false;
    }
    return a.trial == b.trial && a.location == b.location && a.realization == b.realization &&
           a.std_location == b.std_location && a.bae_location == b.bae_location &&
           a.alt_location == b.alt_location && a.cg_iter_converged == b.cg_iter_converged &&
           a.alt_converged == b.alt_converged && a.notes == b.notes && a.error == b.error;
}

const Prepared& tiny_prepared() {
    static const Prepared p = prepare(tiny());
    return p;
}

const ExperimentReport& tiny_report() {
    static const ExperimentReport r = run_experiment(tiny(), tiny_prepared());
    return r;
}

std::filesystem::path fresh_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "bae_harness_test" / name;
    std::filesystem::remove_all(dir);
    return dir;
}

}  // namespace

TEST_CASE("box statistics against hand-computed quartiles") {
    // type-7 quartiles of 1..9 plus an outlier at 40
    const BoxStats b = box_stats({7, 1, 40, 3, 2, 9, 5, 4, 8, 6});
    CHECK(b.count == 10);
    CHECK(b.median == doctest::Approx(5.5));
    CHECK(b.q1 == doctest::Approx(3.25));
    CHECK(b.q3 == doctest::Approx(7.75));
    CHECK(b.min == 1.0);
    CHECK(b.max == 40.0);
    CHECK(b.whisker_low == 1.0);
    CHECK(b.whisker_high == 9.0);  // 40 lies beyond q3 + 1.5 IQR = 14.5

    const BoxStats one = box_stats({2.5, kNaN});
    CHECK(one.count == 1);
    CHECK(one.median == 2.5);
    CHECK(one.q1 == 2.5);
    CHECK(one.q3 == 2.5);
    CHECK_THROWS_AS((void)box_stats({}), DataError);
    CHECK_THROWS_AS((void)box_stats({kNaN}), DataError);

    CHECK(fraction_above({1, 3, 5}, 2.0) == doctest::Approx(2.0 / 3.0));
    CHECK(fraction_above({1, 2, kNaN}, 2.0) == 0.0);
}

TEST_CASE("localization error is a scaled Euclidean distance") {
    CHECK(localization_error({0.0, 0.5}, {0.03, 0.54}, 85.0) == doctest::Approx(85.0 * 0.05));
    CHECK(localization_error({0.1, 0.2}, {0.1, 0.2}, 85.0) == 0.0);
}

TEST_CASE("aggregate groups by level and pools with 'all'") {
    ExperimentReport r;
    for (int i = 0; i < 6; ++i) {
        TrialRow row;
        row.trial = static_cast<std::size_t>(i);
        row.sigma_true = i < 3 ? 0.006 : 0.014;
        row.amplitude = 1.0;
        row.snr_db = 40.0;
        row.x_st = 1.0 + i;
        row.x_bae = 1.0;
        row.dx_bae = row.x_st - row.x_bae;
        row.err_cg = 10.0 * i;
        row.err_cg_iter = row.err_gp = row.err_map = row.err_alt = kNaN;
        row.x_alt = row.dx_alt = kNaN;
        r.rows.push_back(row);
    }
    const auto summary = aggregate(r);
    auto find = [&](const std::string& sigma, const std::string& metric) -> const SummaryRow* {
        for (const auto& s : summary) {
            if (s.sigma_true == sigma && s.amplitude == "all" && s.snr_db == "all" && s.metric == metric) return &s;
        }
        return nullptr;
    };
    const SummaryRow* all = find("all", "dx_bae");
    REQUIRE(all != nullptr);
    CHECK(all->stats.count == 6);
    CHECK(all->stats.median == doctest::Approx(2.5));
    CHECK(all->fraction_positive == doctest::Approx(5.0 / 6.0));
    REQUIRE(all->fraction_above.size() == 2);
    CHECK(all->fraction_above[0] == doctest::Approx(3.0 / 6.0));  // > 2 mm
    const SummaryRow* st = find("all", "x_st");
    REQUIRE(st != nullptr);
    CHECK(st->fraction_above[1] == 0.0);  // nothing above 6 mm
    std::size_t per_sigma = 0;
    for (const auto& s : summary) {
        if (s.metric == "err_cg" && s.amplitude == "all" && s.snr_db == "all" && s.sigma_true != "all") {
            ++per_sigma;
            CHECK(s.stats.count == 3);
        }
    }
    CHECK(per_sigma == 2);
    CHECK_THROWS_AS((void)aggregate(ExperimentReport{}), DataError);
}

TEST_CASE("trial CSV round trips, including NaN") {
    const ExperimentReport& r = tiny_report();
    REQUIRE(!r.rows.empty());
    ExperimentReport edited = r;
    edited.rows[0].sigma_gp = kNaN;
    edited.rows[0].notes = "gp: amplitude below floor";
    const auto back = parse_trials_csv(trials_csv(edited));
    REQUIRE(back.size() == edited.rows.size());
    for (std::size_t i = 0; i < back.size(); ++i) CHECK(same_row(back[i], edited.rows[i]));
    CHECK(std::isnan(back[0].sigma_gp));
    CHECK_THROWS_AS((void)parse_trials_csv("not,a,trials,file\n1,2,3,4\n"), DataError);
}

TEST_CASE("configuration files") {
    const auto kv = config::parse("# comment\nseed = 9\n\nexperiment.amplitudes = 0.5, 2  # trailing\n");
    ExperimentConfig c;
    config::apply(kv, c);
    CHECK(c.seed == 9);
    CHECK(c.amplitudes == std::vector<double>{0.5, 2.0});

    CHECK_THROWS_AS((void)config::parse("seed = 1\nseed = 2\n"), ConfigError);
    CHECK_THROWS_AS(config::apply(config::parse("sede = 1\n"), c), ConfigError);
    CHECK_THROWS_AS(config::apply(config::parse("seed = abc\n"), c), ConfigError);

    // describe() emits every key in a form that parses back to the same config
    ExperimentConfig d = tiny();
    ExperimentConfig e;
    config::apply(config::parse(config::describe(d)), e);
    CHECK(config::describe(e) == config::describe(d));
}

TEST_CASE("a minimal experiment runs every trial") {
    const ExperimentConfig c = tiny();
    const ExperimentReport& r = tiny_report();
    CHECK(c.trial_count() == 1u * 2u * 1u * 3u * 2u);
    REQUIRE(r.rows.size() == c.trial_count());
    CHECK(r.failures() == 0);
    std::set<std::size_t> locations;
    for (std::size_t i = 0; i < r.rows.size(); ++i) {
        const auto& row = r.rows[i];
        CHECK(row.trial == i);
        locations.insert(row.location);
        CHECK(row.x_st >= 0.0);
        CHECK(row.dx_bae == doctest::Approx(row.x_st - row.x_bae));
        CHECK(row.noise_scale > 0.0);
        CHECK(std::isfinite(row.sigma_cg));
        CHECK(row.err_cg == doctest::Approx(100.0 * std::abs(row.sigma_cg - row.sigma_true) / row.sigma_true));
        CHECK(row.sigma_cg >= c.training.sigma_prior.lower);
        CHECK(row.sigma_cg <= c.training.sigma_prior.upper);
    }
    CHECK(locations.size() == 3);
}

TEST_CASE("experiments replay from their seeds") {
    const ExperimentReport again = run_experiment(tiny(), tiny_prepared());
    REQUIRE(again.rows.size() == tiny_report().rows.size());
    CHECK(trials_csv(again) == trials_csv(tiny_report()));

    // The noise seed changes the measurements only; training is untouched.
    ExperimentConfig other = tiny();
    other.noise_seed = 77;
    const Prepared p = prepare(other);
    CHECK(p.store.stats_sigmas == tiny_prepared().store.stats_sigmas);
    CHECK(p.store.stats[0].eigvecs == tiny_prepared().store.stats[0].eigvecs);
    const ExperimentReport noisy = run_experiment(other, p);
    REQUIRE(noisy.rows.size() == again.rows.size());
    int differing = 0;
    for (std::size_t i = 0; i < noisy.rows.size(); ++i) {
        CHECK(noisy.rows[i].location == again.rows[i].location);
        CHECK(noisy.rows[i].sigma_true == again.rows[i].sigma_true);
        CHECK(noisy.rows[i].amplitude == again.rows[i].amplitude);
        // the scale fixes the realized SNR, so it follows the noise draw
        differing += noisy.rows[i].noise_scale != again.rows[i].noise_scale;
    }
    CHECK(differing == static_cast<int>(noisy.rows.size()));
}

TEST_CASE("report files and the overwrite rail") {
    const auto dir = fresh_dir("report");
    emit_report(tiny_report(), dir, false);
    for (const char* f : {"trials.csv", "summary.csv", "histogram.csv", "boxplot.csv"}) {
        CHECK(std::filesystem::exists(dir / f));
    }
    std::ifstream in(dir / "trials.csv");
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(text == trials_csv(tiny_report()));
    CHECK_THROWS_AS(emit_report(tiny_report(), dir, false), IoError);
    CHECK_NOTHROW(emit_report(tiny_report(), dir, true));
}

TEST_CASE("a cached store must match the configuration") {
    ExperimentConfig c = tiny();
    c.standard.grid_size = 49;
    CHECK_THROWS_AS((void)prepare(c, tiny_prepared().store), ConfigError);
    const Prepared reused = prepare(tiny(), tiny_prepared().store);
    CHECK(reused.store.stats_sigmas == tiny_prepared().store.stats_sigmas);
}
