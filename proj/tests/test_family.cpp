#include "bae/errors.hpp"
#include "bae/family.hpp"

#include <doctest.h>

using namespace bae::forward;

namespace {

struct Fixture {
    ModelSpec spec;
    SourceSpace space;
    Fixture() {
        spec.grid_size = 49;
        space.locations = {{0.0, 0.5}, {-0.25, 0.625}, {0.375, 0.375}, {0.0, 0.25}};
    }
};

}  // namespace

TEST_CASE("exact family reproduces fresh leadfields and Jacobians") {
    Fixture f;
    const ExactFamily family(f.spec, f.space);
    CHECK(family.location_count() == 4);
    CHECK(family.electrode_count() == 32);
    for (double s : {0.006, 0.0139, 0.006}) {
        const DiskModel model = build_model(f.spec.with_skull(s));
        const Matrix lf = leadfield(model, f.space);
        CHECK((family.leadfield(s) - lf).norm() == 0.0);
        for (std::size_t i = 0; i < f.space.size(); ++i) {
            CHECK((family.columns(i, s) - lf.middleCols(2 * static_cast<Eigen::Index>(i), 2)).norm() == 0.0);
            const Matrix j = leadfield_jacobian(model, f.space.locations[i]);
            CHECK((family.jacobian(i, s) - j).norm() <= 1e-10 * j.norm());
        }
    }
}

TEST_CASE("tabulated family interpolates the exact family accurately") {
    Fixture f;
    const ExactFamily exact(f.spec, f.space);
    const TabulatedFamily table(f.spec, f.space, 0.0041, 0.033, 16);
    CHECK(table.lower() == 0.0041);
    CHECK(table.upper() == 0.033);
    for (double s : {0.0041, 0.00523, 0.00601, 0.0103, 0.0139, 0.0251, 0.033}) {
        const Matrix e = exact.leadfield(s);
        const Matrix t = table.leadfield(s);
        CHECK((t - e).norm() / e.norm() < 1e-8);
        for (std::size_t i = 0; i < f.space.size(); ++i) {
            const Matrix je = exact.jacobian(i, s);
            CHECK((table.jacobian(i, s) - je).norm() / je.norm() < 1e-6);
            CHECK((table.columns(i, s) - t.middleCols(2 * static_cast<Eigen::Index>(i), 2)).norm() <= 1e-14 * e.norm());
        }
    }
}

TEST_CASE("tabulated Jacobian is consistent with differences of tabulated columns") {
    Fixture f;
    const TabulatedFamily table(f.spec, f.space, 0.0041, 0.033, 16);
    const double s = 0.0117;
    const double h = 1e-5 * s;
    for (std::size_t i = 0; i < f.space.size(); ++i) {
        const Matrix fd = (table.columns(i, s + h) - table.columns(i, s - h)) / (2 * h);
        const Matrix j = table.jacobian(i, s);
        CHECK((fd - j).norm() / j.norm() < 1e-5);
    }
}

TEST_CASE("tabulated family rejects conductivities outside its range") {
    Fixture f;
    CHECK_THROWS_AS(TabulatedFamily(f.spec, f.space, 0.02, 0.01, 16), bae::ConfigError);
    CHECK_THROWS_AS(TabulatedFamily(f.spec, f.space, 0.01, 0.02, 1), bae::ConfigError);
    const TabulatedFamily table(f.spec, f.space, 0.005, 0.02, 4);
    CHECK_THROWS_AS((void)table.leadfield(0.03), bae::ConfigError);
    CHECK_NOTHROW((void)table.leadfield(0.02));
}
