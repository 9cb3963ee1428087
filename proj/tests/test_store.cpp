#include "bae/errors.hpp"
#include "bae/harness.hpp"
#include "bae/store.hpp"

#include <doctest.h>

#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace bae;

namespace {

training::StatsStore small_store() {
    forward::ModelSpec coarse;
    coarse.grid_size = 33;
    forward::ModelSpec fine = coarse;
    fine.grid_size = 65;
    forward::SectorSpec sector{60, 120, 0.4, 0.7, 0.0625, 1, false};
    training::TrainingConfig config;
    config.dipoles_per_location = 10;
    config.stats_models = 6;
    config.gp_models = 12;
    config.gp_dipoles_per_model = 2;
    return training::train(coarse, fine, sector, config, 11);
}

const training::StatsStore& shared_store() {
    static const training::StatsStore s = small_store();
    return s;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream o;
    o << in.rdbuf();
    return o.str();
}

std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "bae_store_test";
    std::filesystem::create_directories(dir);
    return dir / name;
}

void restamp(std::string& bytes) {
    const auto body = bytes.size() - 4;
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(body)));
    for (int b = 0; b < 4; ++b) bytes[body + b] = static_cast<char>((crc >> (8 * b)) & 0xff);
}

}  // namespace

TEST_CASE("container round trip is exact") {
    store::Container c;
    c.kind = "test";
    c.put("name", std::string("abc"));
    c.put("pi", 3.141592653589793);
    c.put("tiny", 4.9e-324);
    c.put("count", 42L);
    forward::Matrix m(3, 2);
    m << 1.0, -0.0, 1e-300, 1e300, 0.1, 2.0 / 3.0;
    c.put_array("m", m);
    c.put_array("empty", forward::Matrix(0, 0));

    const std::string bytes = store::serialize(c);
    const store::Container d = store::deserialize(bytes);
    CHECK(d.kind == "test");
    CHECK(d.text("name") == "abc");
    CHECK(d.real("pi") == 3.141592653589793);
    CHECK(d.real("tiny") == 4.9e-324);
    CHECK(d.integer("count") == 42);
    CHECK(d.array("m") == m);
    CHECK(std::signbit(d.array("m")(0, 1)));
    CHECK(d.array("empty").size() == 0);
    CHECK(store::serialize(d) == bytes);
    CHECK_THROWS_AS((void)d.text("missing"), StoreError);
    CHECK_THROWS_AS((void)d.array("missing"), StoreError);
}

TEST_CASE("corrupted stores are rejected") {
    store::Container c;
    c.kind = "test";
    c.put("k", 1.0);
    forward::Matrix m = forward::Matrix::Constant(4, 4, 0.25);
    c.put_array("a", m);
    const std::string bytes = store::serialize(c);

    SUBCASE("truncation") {
        for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, bytes.size() - 9, bytes.size() - 1}) {
            CHECK_THROWS_AS((void)store::deserialize(std::string_view(bytes).substr(0, cut)), StoreError);
        }
    }
    SUBCASE("checksum") {
        std::string bad = bytes;
        bad[bad.size() - 20] ^= 0x01;
        CHECK_THROWS_WITH_AS((void)store::deserialize(bad), doctest::Contains("checksum"), StoreError);
    }
    SUBCASE("version") {
        std::string bad = bytes;
        const auto pos = bad.find("BAESTORE 1");
        REQUIRE(pos == 0);
        bad[9] = '7';
        CHECK_THROWS_WITH_AS((void)store::deserialize(bad), doctest::Contains("version"), StoreError);
        restamp(bad);
        CHECK_THROWS_WITH_AS((void)store::deserialize(bad), doctest::Contains("version"), StoreError);
    }
    SUBCASE("trailing bytes") {
        std::string bad = bytes.substr(0, bytes.size() - 4) + std::string(8, '\0') + "0000";
        restamp(bad);
        CHECK_THROWS_AS((void)store::deserialize(bad), StoreError);
    }
    SUBCASE("garbage") {
        CHECK_THROWS_AS((void)store::deserialize("hello world, not a store"), StoreError);
    }
    SUBCASE("wrong kind") {
        const auto path = scratch("wrong_kind.bae");
        store::write_container(path, c);
        CHECK_THROWS_AS((void)store::load_stats(path), StoreError);
        CHECK_THROWS_AS((void)store::load_gp_models(path), StoreError);
    }
    CHECK_THROWS_AS((void)store::read_container(scratch("does_not_exist.bae")), IoError);
}

TEST_CASE("statistics store round trip is byte identical") {
    const training::StatsStore& s = shared_store();
    const auto path = scratch("stats.bae");
    store::save_stats(path, s);
    const training::StatsStore r = store::load_stats(path);

    CHECK(r.seed == s.seed);
    CHECK(r.stats_sigmas == s.stats_sigmas);
    CHECK(r.gp_sigmas == s.gp_sigmas);
    CHECK(r.standard_leadfield == s.standard_leadfield);
    CHECK(r.standard.grid_size == s.standard.grid_size);
    CHECK(r.accurate.grid_size == s.accurate.grid_size);
    CHECK(r.sector.spacing == s.sector.spacing);
    CHECK(r.config.p == s.config.p);
    REQUIRE(r.reconstruction.size() == s.reconstruction.size());
    REQUIRE(r.stats.size() == s.stats.size());
    for (std::size_t i = 0; i < s.reconstruction.size(); ++i) {
        CHECK(r.reconstruction.locations[i] == s.reconstruction.locations[i]);
        CHECK(r.training.locations[i] == s.training.locations[i]);
        const auto& a = s.stats[i];
        const auto& b = r.stats[i];
        CHECK(a.eps_mean == b.eps_mean);
        CHECK(a.eigvecs == b.eigvecs);
        CHECK(a.eigvals == b.eigvals);
        CHECK(a.residual_cov == b.residual_cov);
        CHECK(a.cross_cov == b.cross_cov);
        CHECK(a.sigma_star == b.sigma_star);
        CHECK(a.sample_count == b.sample_count);
        REQUIRE(a.gp_triplets.size() == b.gp_triplets.size());
        for (std::size_t t = 0; t < a.gp_triplets.size(); ++t) {
            CHECK(a.gp_triplets[t].id == b.gp_triplets[t].id);
            CHECK(a.gp_triplets[t].alpha == b.gp_triplets[t].alpha);
            CHECK(a.gp_triplets[t].amplitude == b.gp_triplets[t].amplitude);
            CHECK(a.gp_triplets[t].sigma == b.gp_triplets[t].sigma);
        }
    }
    const auto again = scratch("stats_again.bae");
    store::save_stats(again, r);
    CHECK(slurp(path) == slurp(again));
}

TEST_CASE("an empty statistics store round trips") {
    training::StatsStore s = shared_store();
    s.reconstruction.locations.clear();
    s.training.locations.clear();
    s.stats.clear();
    s.standard_leadfield.resize(s.standard_leadfield.rows(), 0);
    const training::StatsStore r = store::unpack_stats(store::pack_stats(s));
    CHECK(r.stats.empty());
    CHECK(r.reconstruction.size() == 0);
    CHECK(store::serialize(store::pack_stats(r)) == store::serialize(store::pack_stats(s)));
}

TEST_CASE("GP model store round trip preserves predictions") {
    const training::StatsStore& s = shared_store();
    calibration::GpOptions opts;
    opts.degree = 1;
    auto models = harness::fit_gp_models(s, opts);
    REQUIRE(!models.empty());
    models[0].reset();  // an absent model must survive the round trip
    const auto path = scratch("gp.bae");
    store::save_gp_models(path, models);
    const auto back = store::load_gp_models(path);
    REQUIRE(back.size() == models.size());
    const training::ConductivityPrior prior{0.0, 1.0, -1.0, 1.0};
    for (std::size_t i = 0; i < models.size(); ++i) {
        REQUIRE(back[i].has_value() == models[i].has_value());
        if (!models[i]) continue;
        const auto& a = *models[i];
        const auto& b = *back[i];
        CHECK(a.coeffs == b.coeffs);
        CHECK(a.weights == b.weights);
        CHECK(a.inputs == b.inputs);
        CHECK(a.outputs == b.outputs);
        CHECK(a.factor == b.factor);
        for (double alpha : {-0.01, 0.0, 0.02}) {
            const auto pa = calibration::gp_estimate(alpha, 2.0, a, prior);
            const auto pb = calibration::gp_estimate(alpha, 2.0, b, prior);
            CHECK(pa.sigma_unclamped == pb.sigma_unclamped);
            CHECK(pa.predictive_variance == pb.predictive_variance);
        }
    }
    const auto again = scratch("gp_again.bae");
    store::save_gp_models(again, back);
    CHECK(slurp(path) == slurp(again));
}
