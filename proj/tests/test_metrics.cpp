#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "kernelscope/benchmarks.hpp"
#include "kernelscope/metrics.hpp"
#include "support.hpp"

using namespace kernelscope;

namespace {

KernelModel constant_model(double c, const ReductionMap& B) {
    KernelModel m;
    m.reduction = B;
    m.space.family = BasisFamily::piecewise_polynomial;
    m.space.degree = 0;
    m.space.lower = {-10.0};
    m.space.upper = {10.0};
    m.space.intervals = {1};
    m.coefficients = {c};
    return m;
}

}  // namespace

TEST(Rho, SampleCount) {
    const TrajectorySet data = generate_dataset(build_PL().system(2, 1), 1, 1);
    const RhoSamples rho = rho_from_dataset(data);
    EXPECT_EQ(rho.size(), 10u);
    EXPECT_EQ(rho.y.size(), 10u * 14);
    const TrajectorySet five = generate_dataset(build_PL().system(5, 1), 3, 1);
    EXPECT_EQ(rho_from_dataset(five).size(), 3u * 5 * 20);
}

TEST(Rho, WeightIsPairDistance) {
    const TrajectorySet data = generate_dataset(build_PL().system(3, 2), 1, 1);
    const RhoSamples rho = rho_from_dataset(data);
    for (std::size_t q = 0; q < rho.size(); ++q) {
        const auto y = rho.features(q);
        EXPECT_NEAR(rho.weight[q], std::hypot(y[0] - y[2], y[1] - y[3]), 1e-15);
    }
}

TEST(ErrPhi, ExactModelIsZero) {
    const BenchmarkSpec b = build_PL();
    const RhoSamples rho = sample_rho_T(b.system(2, 3), 50, 1);
    const KernelError e = err_phi_with(b.true_B, b.true_phi, [&](std::span<const double> y) { return b.true_phi(b.true_B.project(y)); }, rho);
    EXPECT_EQ(e.absolute, 0.0);
    EXPECT_EQ(e.relative, 0.0);
}

TEST(ErrPhi, ZeroModelHasRelativeErrorOne) {
    const BenchmarkSpec b = build_PL();
    const RhoSamples rho = sample_rho_T(b.system(2, 3), 50, 1);
    const KernelError e = err_phi(b.true_B, b.true_phi, constant_model(0.0, b.true_B), rho);
    EXPECT_NEAR(e.relative, 1.0, 1e-14);
    EXPECT_GT(e.absolute, 0.0);
}

// Hand-computed weighted norm: one pair at distance 2, phi = r - 1 = 1, estimate 0.5.
TEST(ErrPhi, HandComputed) {
    const BenchmarkSpec b = build_PL();
    RhoSamples rho;
    rho.D = 14;
    rho.y = feature_map(std::vector<double>{0.0, 0.0}, std::vector<double>{2.0, 0.0});
    rho.weight = {2.0};
    const KernelError e = err_phi(b.true_B, b.true_phi, constant_model(0.5, b.true_B), rho);
    EXPECT_NEAR(e.absolute, 1.0, 1e-12);
    EXPECT_NEAR(e.relative, 0.5, 1e-12);
}

TEST(ErrPhi, PseudometricAxioms) {
    const BenchmarkSpec b = build_PL();
    const RhoSamples rho = sample_rho_T(b.system(2, 5), 40, 1);
    // Distances between estimates f and g, measured by err_phi with f as "truth".
    const std::vector<double> values = {-0.3, 0.2, 0.9};
    auto dist = [&](double f, double g) {
        const ReducedKernel truth = [f](std::span<const double>) { return f; };
        return err_phi(b.true_B, truth, constant_model(g, b.true_B), rho).absolute;
    };
    for (double f : values)
        for (double g : values) {
            EXPECT_NEAR(dist(f, g), dist(g, f), 1e-14);
            for (double h : values) EXPECT_LE(dist(f, h), dist(f, g) + dist(g, h) + 1e-14);
        }
}

TEST(ErrPhi, Errors) {
    const BenchmarkSpec b = build_PL();
    EXPECT_THROW(err_phi(b.true_B, b.true_phi, constant_model(0.0, b.true_B), RhoSamples{}), UsageError);
    RhoSamples rho;
    rho.D = 14;
    rho.y = feature_map(std::vector<double>{0.0, 0.0}, std::vector<double>{1.0, 0.0});
    rho.weight = {1.0};
    // phi vanishes at unit distance.
    EXPECT_THROW(err_phi(b.true_B, b.true_phi, constant_model(0.0, b.true_B), rho), UsageError);
    rho.weight = {0.0};
    EXPECT_THROW(err_phi(b.true_B, b.true_phi, constant_model(0.0, b.true_B), rho), UsageError);
}

TEST(ErrTraj, TrueKernelGivesZero) {
    for (const BenchmarkSpec& b : {build_OD(), build_PL(), build_PLwDC()}) {
        const TrajectoryError e = err_traj(b.system(2, 9), b.closed_form, 20, 100, 1);
        EXPECT_LE(e.relative_mean, 1e-12) << b.name;
        EXPECT_EQ(e.diverged, 0u);
    }
}

TEST(ErrTraj, ComposedKernelTransfersExactly) {
    const BenchmarkSpec b = build_PL();
    const TrajectoryError e = err_traj(b.system(20, 4), b.composed_kernel(), 3, 100, 1);
    EXPECT_LE(e.relative_mean, 1e-6);
}

TEST(ErrTraj, HandComputedConstantKernel) {
    // Two agents, constant kernels c and 0: the estimate stays put, the truth
    // contracts as w(t) = w0 exp(-c t) about the fixed midpoint.
    const double c = 1.0;
    const SystemSpec spec = kstest::constant_system(c, 2, 0);
    const std::vector<std::vector<double>> x0 = {{-1.0, 0.0, 1.0, 0.0}};
    const TrajectoryError e = err_traj_from(spec, kstest::constant_kernel(0.0), x0, 2001, 1);
    // |x_i - x_hat_i|^2 = (1 - exp(-t))^2 per agent, |x_i|^2 = exp(-2t).
    auto integral = [](auto f) {
        double s = 0.0;
        const int n = 200000;
        for (int k = 0; k < n; ++k) s += f((k + 0.5) / n) / n;
        return s;
    };
    const double num = integral([](double t) { return (1.0 - std::exp(-t)) * (1.0 - std::exp(-t)); });
    const double den = integral([](double t) { return std::exp(-2.0 * t); });
    EXPECT_NEAR(e.absolute_mean, std::sqrt(num), 1e-6);
    EXPECT_NEAR(e.relative_mean, std::sqrt(num / den), 1e-6);
}

TEST(ErrTraj, RotationInvariance) {
    const BenchmarkSpec b = build_PL();
    SystemSpec s = b.system(4, 3);
    const auto x0 = sample_initial_conditions(s, 3);
    const PairKernel estimate = [](std::span<const double> xi, std::span<const double> xk) {
        return 0.9 * detail::distance(xi, xk) - 1.0;
    };
    const double a = 0.7;
    std::vector<std::vector<double>> rotated = x0;
    for (auto& x : rotated)
        for (std::size_t i = 0; i < s.N; ++i) {
            const double u = x[2 * i], v = x[2 * i + 1];
            x[2 * i] = std::cos(a) * u - std::sin(a) * v;
            x[2 * i + 1] = std::sin(a) * u + std::cos(a) * v;
        }
    const TrajectoryError e1 = err_traj_from(s, estimate, x0, 100, 1);
    const TrajectoryError e2 = err_traj_from(s, estimate, rotated, 100, 1);
    EXPECT_NEAR(e1.absolute_mean, e2.absolute_mean, 1e-10);
    EXPECT_NEAR(e1.relative_mean, e2.relative_mean, 1e-10);
}

TEST(ErrTraj, DivergentEstimateExcluded) {
    const SystemSpec s = kstest::constant_system(1.0, 2, 0);
    const PairKernel bad = [](std::span<const double> xi, std::span<const double>) {
        return xi[0] < 0.0 ? -1e300 : 1.0;
    };
    const std::vector<std::vector<double>> x0 = {{0.1, 0.1, 0.9, 0.9}, {-0.5, 0.0, 0.5, 0.0}};
    const TrajectoryError e = err_traj_from(s, bad, x0, 10, 1);
    EXPECT_EQ(e.diverged, 1u);
    EXPECT_TRUE(std::isnan(e.per_ic[1]));
    EXPECT_NEAR(e.relative_mean, 0.0, 1e-12);
}

TEST(ErrTraj, EvaluationStepMatchesTraining) {
    const SystemSpec s = build_PL().system(2, 0);
    EXPECT_EQ(evaluation_substeps(s, 100), 9u);
    EXPECT_EQ(evaluation_substeps(s, 5), 200u);
    EXPECT_THROW(err_traj_from(s, s.kernel, {}, 100, 1), UsageError);
}

TEST(Summary, MeanAndSampleStd) {
    const Summary s = summarize({1.0, 2.0, 3.0, std::nan("")});
    EXPECT_EQ(s.count, 3u);
    EXPECT_DOUBLE_EQ(s.mean, 2.0);
    EXPECT_DOUBLE_EQ(s.stddev, 1.0);
    EXPECT_TRUE(std::isnan(summarize({4.0}).stddev));
    EXPECT_EQ(summarize({}).count, 0u);
}
