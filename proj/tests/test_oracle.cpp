#include <cmath>

#include <gtest/gtest.h>

#include "kdtl/fringe_oracle.hpp"

using namespace kdtl;

namespace {

MoleculeSpec heavy() {
    MoleculeSpec m;
    m.name = "test";
    m.mass_amu = 1592.0;
    m.alpha_stat_A3 = 70.0;
    m.alpha_opt_A3 = 70.0;
    m.chi_true_A3 = 126.0;
    return m;
}

// Power that puts the fringe near V = 0.3 at 91 m/s.
GratingSet bright() {
    GratingSet g;
    g.laser_power = 6.7;
    return g;
}

} // namespace

TEST(Oracle, AgreesWithAnalyticModelAtSetupGeometry) {
    const auto a = analytic_fringe(heavy(), bright(), 91.0);
    const auto o = numerical_oracle_fringe(heavy(), bright(), 91.0, 10, 8192);
    EXPECT_GT(a.visibility_V, 0.2);
    EXPECT_LT(a.visibility_V, 0.5);
    EXPECT_NEAR(o.visibility_V / a.visibility_V, 1.0, 1e-2);
    EXPECT_NEAR(o.offset_O / a.offset_O, 1.0, 1e-2);
}

TEST(Oracle, ConvergedInSampleCount) {
    const auto coarse = numerical_oracle_fringe(heavy(), bright(), 91.0, 5, 6144);
    const auto fine = numerical_oracle_fringe(heavy(), bright(), 91.0, 5, 12288);
    EXPECT_LT(std::abs(fine.visibility_V - coarse.visibility_V), 1e-3);
}

TEST(Oracle, OpenMiddlePlaneWashesOut) {
    OracleOptions opts;
    opts.phi0_override = 0.0;
    const auto o = numerical_oracle_fringe(heavy(), bright(), 91.0, 50, 3072, opts);
    EXPECT_LT(o.visibility_V, 0.05);
}

TEST(Oracle, ThreadCountDoesNotChangeResult) {
    OracleOptions one;
    OracleOptions three;
    three.threads = 3;
    const auto a = numerical_oracle_fringe(heavy(), bright(), 91.0, 5, 6144, one);
    const auto b = numerical_oracle_fringe(heavy(), bright(), 91.0, 5, 6144, three);
    EXPECT_EQ(a.visibility_V, b.visibility_V);
    EXPECT_EQ(a.offset_O, b.offset_O);
}

TEST(Oracle, RejectsUnderResolvedSetups) {
    EXPECT_THROW(numerical_oracle_fringe(heavy(), bright(), 91.0, 4, 4096), ConfigurationError);
    EXPECT_THROW(numerical_oracle_fringe(heavy(), bright(), 91.0, 10, 999), ConfigurationError);
    // A far slower, lighter beam stretches the chirp past the sample budget.
    MoleculeSpec light = heavy();
    light.mass_amu = 20.0;
    try {
        numerical_oracle_fringe(light, bright(), 30.0, 5, 1000);
        FAIL() << "expected ConfigurationError";
    } catch (const ConfigurationError& e) {
        EXPECT_NE(std::string(e.what()).find("samples"), std::string::npos);
    }
}
