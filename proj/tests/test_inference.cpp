#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "kdtl/extraction.hpp"

using namespace kdtl;

namespace {

constexpr double d = 266e-9;

FringeScan sinusoid_scan(double O, double A, double dx, const std::vector<double>& grid) {
    FringeScan s;
    s.positions = grid;
    for (double x : grid) s.counts.push_back(O + A * std::sin(2.0 * std::numbers::pi * (x - dx) / d));
    return s;
}

MoleculeSpec compound2() {
    MoleculeSpec m;
    m.name = "compound-2";
    m.mass_amu = 1592.0;
    m.alpha_stat_A3 = 70.0;
    m.alpha_opt_A3 = 70.0;
    m.chi_true_A3 = 126.0;
    return m;
}

GratingSet lasers(double power) {
    GratingSet g;
    g.laser_power = power;
    return g;
}

StaircaseSpec staircase(std::uint64_t seed, bool noise = true) {
    StaircaseSpec s;
    for (int k = 2; k <= 10; ++k) s.voltages.push_back(1000.0 * k);
    s.ref_voltage = 1000.0;
    s.rate_scale = 14150.0;
    s.master_seed = seed;
    s.synthesis.poisson_noise = noise;
    return s;
}

ChiModel model_for(const MoleculeSpec& m, const GratingSet& g, const DeflectorConfig& k, const VelocityDistribution& v) {
    return {m, g, k, v};
}

} // namespace

TEST(FitSinusoid, RecoversNoiselessParameters) {
    const auto grid = ScanGrid{}.positions();
    const FringeFit f = fit_sinusoid(sinusoid_scan(100.0, 30.0, 40e-9, grid), d);
    EXPECT_NEAR(f.offset_O, 100.0, 1e-9 * 100.0);
    EXPECT_NEAR(f.amplitude_A, 30.0, 1e-9 * 30.0);
    EXPECT_NEAR(f.phase_shift_dx3, 40e-9, 1e-9 * 40e-9);
    EXPECT_NEAR(f.visibility_V, 0.3, 1e-9);
}

TEST(FitSinusoid, ConstantScanHasNoContrast) {
    const auto grid = ScanGrid{}.positions();
    const FringeFit f = fit_sinusoid(sinusoid_scan(500.0, 0.0, 0.0, grid), d);
    EXPECT_NEAR(f.visibility_V, 0.0, 1e-12);
    EXPECT_LT(f.amplitude_A, f.sigma_amplitude());
    EXPECT_TRUE(f.low_contrast);
}

TEST(FitSinusoid, CovarianceIsSymmetricPositive) {
    const auto grid = ScanGrid{}.positions();
    const FringeFit f = fit_sinusoid(sinusoid_scan(1000.0, 300.0, 17e-9, grid), d);
    for (int i = 0; i < 3; ++i) {
        EXPECT_GT(f.covariance[i][i], 0.0);
        for (int j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(f.covariance[i][j], f.covariance[j][i]);
    }
}

TEST(FitSinusoid, ShiftScatterMatchesPredictedSigma) {
    const auto grid = ScanGrid{}.positions();
    const FringeScan truth = sinusoid_scan(1000.0, 300.0, 60e-9, grid);
    std::mt19937_64 rng(2024);
    double sum = 0.0, sum2 = 0.0, predicted = 0.0;
    const int runs = 500;
    for (int r = 0; r < runs; ++r) {
        FringeScan s = truth;
        for (double& c : s.counts) c = static_cast<double>(std::poisson_distribution<long long>(c)(rng));
        const FringeFit f = fit_sinusoid(s, d);
        sum += f.phase_shift_dx3;
        sum2 += f.phase_shift_dx3 * f.phase_shift_dx3;
        predicted += f.sigma_shift();
    }
    const double mean = sum / runs;
    const double sd = std::sqrt(sum2 / runs - mean * mean);
    EXPECT_NEAR(sd / (predicted / runs), 1.0, 0.20);
}

TEST(FitSinusoid, RejectsDegenerateGrids) {
    FringeScan s;
    for (int i = 0; i < 10; ++i) {
        s.positions.push_back(i * 266e-9);  // every sample at the same phase
        s.counts.push_back(100.0);
    }
    EXPECT_THROW(fit_sinusoid(s, d), FitError);
    FringeScan short_scan = sinusoid_scan(100.0, 10.0, 0.0, {0.0, 10e-9, 20e-9, 30e-9, 40e-9, 50e-9});
    EXPECT_THROW(fit_sinusoid(short_scan, d), ValidationError);
}

TEST(DifferentialShiftTest, IdenticalFitsGiveZero) {
    const auto grid = ScanGrid{}.positions();
    const FringeFit f = fit_sinusoid(sinusoid_scan(1000.0, 300.0, 25e-9, grid), d);
    const DifferentialShift s = differential_shift(f, f);
    EXPECT_EQ(s.delta_shift, 0.0);
    EXPECT_GT(s.sigma, 0.0);
}

TEST(DifferentialShiftTest, SimpleDifferenceAndSwap) {
    const auto grid = ScanGrid{}.positions();
    const FringeFit u = fit_sinusoid(sinusoid_scan(1000.0, 300.0, 120e-9, grid), d);
    const FringeFit r = fit_sinusoid(sinusoid_scan(1000.0, 300.0, 20e-9, grid), d);
    EXPECT_NEAR(differential_shift(u, r).delta_shift, 100e-9, 1e-16);
    EXPECT_EQ(differential_shift(r, u).delta_shift, -differential_shift(u, r).delta_shift);
}

TEST(DifferentialShiftTest, PriorAtBranchMidpointIsAmbiguous) {
    const auto grid = ScanGrid{}.positions();
    const FringeFit u = fit_sinusoid(sinusoid_scan(1000.0, 300.0, 50e-9, grid), d);
    const FringeFit r = fit_sinusoid(sinusoid_scan(1000.0, 300.0, 0.0, grid), d);
    const auto clear = differential_shift(u, r, ShiftPrior{d + 50e-9, 5e-9});
    EXPECT_FALSE(clear.ambiguous);
    EXPECT_NEAR(clear.delta_shift, d + 50e-9, 1e-15);
    const auto split = differential_shift(u, r, ShiftPrior{50e-9 + 0.5 * d, 5e-9});
    EXPECT_TRUE(split.ambiguous);
    ASSERT_TRUE(split.alternate.has_value());
    EXPECT_NEAR(std::abs(*split.alternate - split.delta_shift), d, 1e-15);
}

TEST(Unwrap, StaircaseRestoresShiftBeyondOnePeriod) {
    // Monochromatic, noiseless: K chosen so the 10 kV shift relative to 1 kV is 1.3 d.
    const auto m = compound2();
    const auto g = lasers(4.0);
    DeflectorConfig k;
    const double per_K = stark_fringe_shift(126.0, 10000.0, 1592.0, 91.0, k) -
                         stark_fringe_shift(126.0, 1000.0, 1592.0, 91.0, k);
    k.geometry_factor_K *= 1.3 * d / per_K;
    const auto vd = VelocityDistribution::monochromatic(91.0);
    const auto pairs = simulate_staircase(m, g, k, vd, staircase(1, false));
    const auto points = fit_pairs(pairs, d);
    const FringeFit& last = points.back().signal;
    EXPECT_NEAR(wrap_to_period(last.phase_shift_dx3 - points.back().reference.phase_shift_dx3, d), 0.3 * d, 1e-12);
    const auto shifts = unwrap_staircase(points, 1000.0);
    EXPECT_NEAR(shifts.back().delta_shift, 1.3 * d, 1e-12);
    for (const auto& s : shifts) EXPECT_FALSE(s.ambiguous);
}

TEST(Extraction, ZeroShiftGivesZeroChi) {
    const ChiModel model = model_for(compound2(), lasers(4.0), DeflectorConfig{}, VelocityDistribution::gaussian(91.0, 0.1));
    const auto x = extract_chi_at_voltage(DifferentialShift{0.0, 1e-9}, 5000.0, 1000.0, model);
    EXPECT_NEAR(x.chi, 0.0, 1e-9);
    EXPECT_GT(x.sigma_stat, 0.0);
}

TEST(Extraction, HalvingGeometryFactorDoublesChi) {
    DeflectorConfig k;
    const auto vd = VelocityDistribution::monochromatic(91.0);
    const ChiModel full = model_for(compound2(), lasers(4.0), k, vd);
    k.geometry_factor_K *= 0.5;
    const ChiModel half = full.with_deflector(k);
    const DifferentialShift s{80e-9, 1e-9};
    const double a = extract_chi_at_voltage(s, 6000.0, 1000.0, full).chi;
    const double b = extract_chi_at_voltage(s, 6000.0, 1000.0, half).chi;
    EXPECT_NEAR(b / a, 2.0, 1e-9);
}

TEST(Extraction, NoRootIsExtractionError) {
    const ChiModel model = model_for(compound2(), lasers(4.0), DeflectorConfig{}, VelocityDistribution::monochromatic(91.0));
    EXPECT_THROW(extract_chi_at_voltage(DifferentialShift{-50e-9, 1e-9}, 5000.0, 1000.0, model), ExtractionError);
    EXPECT_THROW(extract_chi_at_voltage(DifferentialShift{1.0, 1e-9}, 5000.0, 1000.0, model), ExtractionError);
}

TEST(Extraction, RoundTripAtSetupParameters) {
    const auto m = compound2();
    const auto g = lasers(4.0);
    const auto vd = VelocityDistribution::gaussian(91.0, 0.10);
    const ChiModel model = model_for(m, g, DeflectorConfig{}, vd);
    const auto pairs = simulate_staircase(m, g, DeflectorConfig{}, vd, staircase(5));
    const auto an = analyze_staircase(pairs, 1000.0, model);
    EXPECT_LT(std::abs(an.estimate.weighted_mean_chi - 126.0), 2.0 * an.estimate.weighted_mean_sigma);
    for (const auto& e : an.estimate.per_voltage)
        EXPECT_LT(std::abs(e.chi - 126.0), 4.0 * e.sigma_stat) << "U=" << e.voltage;
}

TEST(Extraction, NoiselessRoundTripIsExact) {
    const auto m = compound2();
    const auto g = lasers(4.0);
    const auto vd = VelocityDistribution::gaussian(91.0, 0.10);
    const ChiModel model = model_for(m, g, DeflectorConfig{}, vd);
    const auto an = analyze_staircase(simulate_staircase(m, g, DeflectorConfig{}, vd, staircase(5, false)), 1000.0, model);
    for (const auto& e : an.estimate.per_voltage) EXPECT_NEAR(e.chi / 126.0, 1.0, 1e-6) << "U=" << e.voltage;
}

TEST(Extraction, InvariantUnderGridTranslation) {
    const auto m = compound2();
    const auto g = lasers(4.0);
    const auto vd = VelocityDistribution::gaussian(91.0, 0.10);
    const ChiModel model = model_for(m, g, DeflectorConfig{}, vd);
    auto pairs = simulate_staircase(m, g, DeflectorConfig{}, vd, staircase(9));
    const double before = analyze_staircase(pairs, 1000.0, model).estimate.weighted_mean_chi;
    for (auto& p : pairs) {
        for (double& x : p.signal.positions) x += 137e-9;
        for (double& x : p.reference.positions) x += 137e-9;
    }
    const double after = analyze_staircase(pairs, 1000.0, model).estimate.weighted_mean_chi;
    EXPECT_NEAR(after, before, 1e-8 * before);
}

TEST(Calibration, RecoversGeometryFactor) {
    const auto m = compound2();
    const auto g = lasers(4.0);
    const auto vd = VelocityDistribution::gaussian(91.0, 0.10);
    DeflectorConfig truth;
    truth.geometry_factor_K = 5100.0;
    const auto pairs = simulate_staircase(m, g, truth, vd, staircase(21));
    const auto c = calibrate_geometry_factor(pairs, 126.0, 1000.0, model_for(m, g, DeflectorConfig{}, vd));
    EXPECT_NEAR(c.deflector.geometry_factor_K / 5100.0, 1.0, 0.01);
    EXPECT_GT(c.K_sigma, 0.0);
    EXPECT_TRUE(c.consistent);
    EXPECT_FALSE(c.notes.empty());
}

TEST(Calibration, KnownChiScalesInversely) {
    const auto m = compound2();
    const auto g = lasers(4.0);
    const auto vd = VelocityDistribution::gaussian(91.0, 0.10);
    const auto pairs = simulate_staircase(m, g, DeflectorConfig{}, vd, staircase(3, false));
    const ChiModel model = model_for(m, g, DeflectorConfig{}, vd);
    const double k1 = calibrate_geometry_factor(pairs, 126.0, 1000.0, model).deflector.geometry_factor_K;
    const double k2 = calibrate_geometry_factor(pairs, 252.0, 1000.0, model).deflector.geometry_factor_K;
    EXPECT_NEAR(k1 / 4200.0, 1.0, 1e-6);
    EXPECT_NEAR(k2 / k1, 0.5, 1e-6);
}

TEST(Calibration, MixedGeometryFactorsAreFlagged) {
    const auto m = compound2();
    const auto g = lasers(4.0);
    const auto vd = VelocityDistribution::gaussian(91.0, 0.10);
    DeflectorConfig other;
    other.geometry_factor_K = 1.3 * 4200.0;
    auto pairs = simulate_staircase(m, g, DeflectorConfig{}, vd, staircase(4));
    const auto shifted = simulate_staircase(m, g, other, vd, staircase(4));
    for (std::size_t i = 0; i < pairs.size(); i += 2) pairs[i] = shifted[i];
    const auto c = calibrate_geometry_factor(pairs, 126.0, 1000.0, model_for(m, g, DeflectorConfig{}, vd));
    EXPECT_GT(c.reduced_chi_squared, 10.0);
    EXPECT_FALSE(c.consistent);
    bool flagged = false;
    for (const auto& n : c.notes) flagged |= n.find("inconsistent") != std::string::npos;
    EXPECT_TRUE(flagged);
}

TEST(Calibration, RejectsBadInputs) {
    const auto m = compound2();
    const auto g = lasers(4.0);
    const auto vd = VelocityDistribution::gaussian(91.0, 0.10);
    auto s = staircase(4);
    s.voltages = {6000.0, 6000.0};
    const auto pairs = simulate_staircase(m, g, DeflectorConfig{}, vd, s);
    const ChiModel model = model_for(m, g, DeflectorConfig{}, vd);
    EXPECT_THROW(calibrate_geometry_factor(pairs, 126.0, 1000.0, model), CalibrationError);
    EXPECT_THROW(calibrate_geometry_factor(pairs, 0.0, 1000.0, model), DomainError);
}

TEST(Aggregation, EqualWeights) {
    const auto e = aggregate_weighted_mean({{1000.0, 102.0, 1.0}, {2000.0, 102.0, 1.0}});
    EXPECT_DOUBLE_EQ(e.weighted_mean_chi, 102.0);
    EXPECT_NEAR(e.weighted_mean_sigma, 1.0 / std::sqrt(2.0), 1e-15);
}

TEST(Aggregation, ExclusionMarksRowsAndBoundsMean) {
    std::vector<PerVoltageChi> rows{{2000.0, 100.0, 2.0}, {5000.0, 103.0, 1.0}, {10000.0, 90.0, 0.5}};
    const auto e = aggregate_weighted_mean(rows, ExclusionRule::by_voltage({10000.0}));
    EXPECT_TRUE(e.per_voltage[0].included);
    EXPECT_FALSE(e.per_voltage[2].included);
    EXPECT_GE(e.weighted_mean_chi, 100.0);
    EXPECT_LE(e.weighted_mean_chi, 103.0);
    EXPECT_NEAR(e.weighted_mean_chi, (100.0 / 4.0 + 103.0) / (1.0 / 4.0 + 1.0), 1e-12);
    EXPECT_THROW(aggregate_weighted_mean(rows, ExclusionRule::by_voltage({2000.0, 5000.0, 10000.0})), AggregationError);
    EXPECT_THROW(aggregate_weighted_mean({{2000.0, 100.0, 0.0}}), AggregationError);
}

TEST(Aggregation, VisibilityThresholdRule) {
    PerVoltageChi low{10000.0, 90.0, 0.5};
    low.visibility_ratio = 0.2;
    PerVoltageChi fine{5000.0, 100.0, 1.0};
    fine.visibility_ratio = 0.9;
    const auto e = aggregate_weighted_mean({fine, low}, ExclusionRule::by_visibility(0.3));
    EXPECT_FALSE(e.per_voltage[1].included);
    EXPECT_DOUBLE_EQ(e.weighted_mean_chi, 100.0);
}

TEST(Sensitivity, VelocityEntersSquared) {
    // Monochromatic beam: chi from a shift scales as v^2, so d ln chi/d ln v = 2.
    const auto m = compound2();
    const auto g = lasers(4.0);
    const auto vd = VelocityDistribution::monochromatic(91.0);
    const ChiModel model = model_for(m, g, DeflectorConfig{}, vd);
    const auto pairs = simulate_staircase(m, g, DeflectorConfig{}, vd, staircase(2, false));
    const auto points = fit_pairs(pairs, d);
    const auto shifts = unwrap_staircase(points, 1000.0);
    const auto rows = systematic_sensitivity(points, shifts, 1000.0, model);
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0].parameter, "v_mean");
    EXPECT_NEAR(rows[0].log_sensitivity, 2.0, 1e-6);
    EXPECT_NEAR(rows[1].log_sensitivity, 0.0, 1e-6);
    EXPECT_NEAR(rows[2].log_sensitivity, 0.0, 1e-6);
}
