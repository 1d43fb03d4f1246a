#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

#include "kernelscope/benchmarks.hpp"
#include "kernelscope/regression.hpp"
#include "kernelscope/rng.hpp"
#include "support.hpp"

using namespace kernelscope;

namespace {

SampleSet scalar_samples(const std::vector<double>& t, const std::vector<double>& z) {
    SampleSet s;
    s.D = 1;
    for (std::size_t q = 0; q < t.size(); ++q) s.push_back(std::span<const double>(&t[q], 1), z[q], 1.0);
    return s;
}

ReductionMap identity_1d() {
    ReductionMap B;
    B.rows = Eigen::MatrixXd::Ones(1, 1);
    return B;
}

HypothesisSpace space_on(BasisFamily f, int degree, double lo, double hi, std::size_t cells) {
    HypothesisSpace s;
    s.family = f;
    s.degree = degree;
    s.lower = {lo};
    s.upper = {hi};
    s.intervals = {cells};
    s.validate();
    return s;
}

// Weighted least squares for N = 2: with z = 2<v_i, x_k - x_i>/|x_k - x_i|^2,
// the residual splits as |v_perp|^2 + |x_k - x_i|^2 (z - psi)^2 / 4, so the
// minimizer is the regression of z on the basis with weights |x_k - x_i|^2.
Eigen::VectorXd weighted_regression_oracle(const TrajectorySet& data, const ReductionMap& B, const HypothesisSpace& space) {
    std::vector<std::vector<double>> rows;
    std::vector<double> rhs, weight;
    for (std::size_t m = 0; m < data.M; ++m)
        for (std::size_t l = 0; l < data.L; ++l)
            for (std::size_t i = 0; i < 2; ++i) {
                const auto xi = data.agent(m, l, i), xk = data.agent(m, l, 1 - i);
                const auto vi = data.agent_velocity(m, l, i);
                double dot = 0.0, nn = 0.0;
                for (std::size_t j = 0; j < data.d; ++j) {
                    dot += vi[j] * (xk[j] - xi[j]);
                    nn += (xk[j] - xi[j]) * (xk[j] - xi[j]);
                }
                const auto y = feature_map(xi, xk);
                const auto t = B.project(y);
                std::vector<double> row(space.n_total(), 0.0);
                BasisValues bv;
                space.evaluate(t, bv);
                for (std::size_t q = 0; q < bv.count; ++q) row[bv.index[q]] = bv.value[q];
                rows.push_back(row);
                rhs.push_back(2.0 * dot / nn);
                weight.push_back(nn);
            }
    const auto Q = static_cast<Eigen::Index>(rows.size());
    const auto n = static_cast<Eigen::Index>(space.n_total());
    Eigen::MatrixXd X(Q, n);
    Eigen::VectorXd z(Q);
    for (Eigen::Index q = 0; q < Q; ++q) {
        const double s = std::sqrt(weight[static_cast<std::size_t>(q)]);
        for (Eigen::Index k = 0; k < n; ++k) X(q, k) = s * rows[static_cast<std::size_t>(q)][static_cast<std::size_t>(k)];
        z(q) = s * rhs[static_cast<std::size_t>(q)];
    }
    return X.colPivHouseholderQr().solve(z);
}

}  // namespace

TEST(Support, WidenedRange) {
    const SampleSet s = scalar_samples({0.1, 0.5, 0.9}, {1.0, 1.0, 1.0});
    const SupportBox box = estimate_support(s, identity_1d());
    EXPECT_NEAR(box.lower[0], 0.092, 1e-15);
    EXPECT_NEAR(box.upper[0], 0.908, 1e-15);
}

TEST(Support, DegenerateRange) {
    const SampleSet s = scalar_samples({0.3, 0.3}, {1.0, 1.0});
    const SupportBox box = estimate_support(s, identity_1d());
    EXPECT_NEAR(box.lower[0], 0.3 - 5e-7, 1e-15);
    EXPECT_NEAR(box.upper[0], 0.3 + 5e-7, 1e-15);
}

TEST(Support, InteractingRuleIgnoresZeroKernel) {
    const SampleSet s = scalar_samples({0.1, 0.5, 0.9, 5.0}, {1.0, 2.0, 1.0, 0.0});
    const SupportBox all = estimate_support(s, identity_1d(), SupportRule::all_samples);
    const SupportBox act = estimate_support(s, identity_1d(), SupportRule::interacting_samples);
    EXPECT_GT(all.upper[0], 5.0);
    EXPECT_NEAR(act.upper[0], 0.908, 1e-15);
    const SampleSet none = scalar_samples({0.1, 0.9}, {0.0, 0.0});
    EXPECT_NEAR(estimate_support(none, identity_1d(), SupportRule::interacting_samples).upper[0], 0.908, 1e-15);
}

TEST(Support, PowerLawProjectionRange) {
    const BenchmarkSpec b = build_PL();
    const SampleSet s = extract_regression_samples(generate_dataset(b.system(2, 3), 300, 1));
    double lo = 1e9, hi = -1e9;
    for (std::size_t q = 0; q < s.size(); ++q) {
        const double t = b.true_B.project(s.features(q))[0];
        lo = std::min(lo, t);
        hi = std::max(hi, t);
    }
    EXPECT_GE(lo, -1e-12);
    EXPECT_LE(hi, 1.0 / std::numbers::sqrt3 + 1e-12);
    const SupportBox box = estimate_support(s, b.true_B);
    EXPECT_LE(box.lower[0], lo);
    EXPECT_GE(box.upper[0], hi);
}

TEST(Support, Preconditions) {
    EXPECT_THROW(estimate_support(SampleSet{}, identity_1d()), UsageError);
    EXPECT_THROW(estimate_support(scalar_samples({1.0}, {1.0}), build_PL().true_B), UsageError);
}

TEST(FitKernel, RecoversConstantKernel) {
    const ReductionMap B = build_PL().true_B;
    for (std::size_t N : {2u, 5u}) {
        const TrajectorySet data = generate_dataset(kstest::constant_system(0.7, N, 12), 100, 1);
        const HypothesisSpace space = space_on(BasisFamily::clamped_bspline, 1, -0.01, 0.6, 6);
        const KernelModel model = fit_kernel(data, B, space, 1);
        for (double x = 0.0; x <= 1.0; x += 0.05) {
            const std::vector<double> xi = {0.0, 0.0}, xk = {x, 0.3};
            EXPECT_NEAR(model.evaluate(feature_map(xi, xk)), 0.7, 1e-8) << "N=" << N;
        }
    }
}

TEST(FitKernel, KnotAlignedOpinionKernelExact) {
    const BenchmarkSpec b = build_OD();
    SystemSpec s = b.system(2, 17);
    s.init_box = Box::cube(2, 0.0, 1.5);
    const TrajectorySet data = generate_dataset(s, 500, 1);
    const double h = 1.0 / (4.0 * std::numbers::sqrt3);
    const HypothesisSpace space = space_on(BasisFamily::piecewise_polynomial, 0, -h, 3.0 * h, 4);
    const KernelModel model = fit_kernel(data, b.true_B, space, 1);
    ASSERT_EQ(model.coefficients.size(), 4u);
    EXPECT_EQ(model.coefficients[0], 0.0);
    EXPECT_NEAR(model.coefficients[1], 0.1, 1e-6);
    EXPECT_NEAR(model.coefficients[2], 1.0, 1e-6);
    EXPECT_NEAR(model.coefficients[3], 0.0, 1e-6);
}

TEST(FitKernelProperty, NormalEquationResidual) {
    const BenchmarkSpec b = build_PLwDC();
    const TrajectorySet data = generate_dataset(b.system(2, 5), 400, 1);
    const ReductionMap B = build_PL().true_B;
    const HypothesisSpace space = space_on(BasisFamily::clamped_bspline, 2, -0.01, 0.6, 10);
    const NormalSystem sys = assemble_normal_system(data, B, space, 1);
    const Eigen::VectorXd c = solve_normal_system(sys);
    EXPECT_LE((sys.A * c - sys.b).norm(), 1e-8 * sys.b.norm());
    EXPECT_LT(sys.A.cwiseAbs().maxCoeff(), 1e6);
    EXPECT_NEAR((sys.A - sys.A.transpose()).cwiseAbs().maxCoeff(), 0.0, 1e-14);
}

TEST(FitKernelProperty, GradientMatchesFiniteDifferences) {
    const BenchmarkSpec b = build_PLwDC();
    const TrajectorySet data = generate_dataset(b.system(3, 6), 60, 1);
    const ReductionMap B = build_PL().true_B;
    const HypothesisSpace space = space_on(BasisFamily::clamped_bspline, 1, -0.01, 0.6, 5);
    const NormalSystem sys = assemble_normal_system(data, B, space, 1);
    RandomStream r(99);
    KernelModel model;
    model.space = space;
    model.reduction = B;
    model.coefficients.resize(space.n_total());
    for (auto& c : model.coefficients) c = r.uniform(-1.0, 1.0);
    const Eigen::VectorXd c = Eigen::Map<const Eigen::VectorXd>(model.coefficients.data(), static_cast<Eigen::Index>(space.n_total()));
    const double E = trajectory_objective(data, model);
    EXPECT_NEAR(sys.objective(c), E, 1e-10 * E);
    const Eigen::VectorXd g = sys.gradient(c);
    const double step = 1e-4;
    for (std::size_t k = 0; k < space.n_total(); ++k) {
        KernelModel plus = model, minus = model;
        plus.coefficients[k] += step;
        minus.coefficients[k] -= step;
        const double fd = (trajectory_objective(data, plus) - trajectory_objective(data, minus)) / (2.0 * step);
        EXPECT_NEAR(fd, g(static_cast<Eigen::Index>(k)), 1e-5 * std::max(1.0, std::abs(fd))) << "k=" << k;
    }
}

TEST(FitKernelProperty, MinimizerBeatsPerturbations) {
    const BenchmarkSpec b = build_PLwDC();
    const TrajectorySet data = generate_dataset(b.system(2, 8), 200, 1);
    const ReductionMap B = build_PL().true_B;
    const HypothesisSpace space = space_on(BasisFamily::clamped_bspline, 1, -0.01, 0.6, 8);
    const NormalSystem sys = assemble_normal_system(data, B, space, 1);
    const Eigen::VectorXd c = solve_normal_system(sys);
    const double best = sys.objective(c);
    EXPECT_LE(best, sys.objective(Eigen::VectorXd::Zero(c.size())));
    RandomStream r(3);
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::VectorXd p = c;
        for (Eigen::Index k = 0; k < p.size(); ++k) p(k) += r.uniform(-0.1, 0.1);
        EXPECT_LE(best, sys.objective(p) + 1e-14);
    }
}

TEST(FitKernelProperty, TwoAgentFitEqualsWeightedRegression) {
    const BenchmarkSpec b = build_PLwDC();
    const TrajectorySet data = generate_dataset(b.system(2, 21), 500, 1);
    const ReductionMap B = build_PL().true_B;
    const SampleSet samples = extract_regression_samples(data);
    const SupportBox box = estimate_support(samples, B);
    const HypothesisSpace space = space_on(BasisFamily::clamped_bspline, 1, box.lower[0], box.upper[0], 7);
    const KernelModel model = fit_kernel(data, B, space, 1);
    const Eigen::VectorXd oracle = weighted_regression_oracle(data, B, space);
    for (std::size_t k = 0; k < space.n_total(); ++k)
        EXPECT_NEAR(model.coefficients[k], oracle(static_cast<Eigen::Index>(k)), 1e-10 * std::max(1.0, std::abs(oracle(static_cast<Eigen::Index>(k)))));
}

TEST(FitKernelProperty, RefinementDoesNotIncreaseObjective) {
    const BenchmarkSpec b = build_PL();
    const TrajectorySet data = generate_dataset(b.system(2, 4), 300, 1);
    const SupportBox box = estimate_support(extract_regression_samples(data), b.true_B);
    double previous = std::numeric_limits<double>::infinity();
    for (std::size_t cells : {4u, 8u, 16u}) {
        const HypothesisSpace space = space_on(BasisFamily::piecewise_polynomial, 0, box.lower[0], box.upper[0], cells);
        const double E = trajectory_objective(data, fit_kernel(data, b.true_B, space, 1));
        EXPECT_LE(E, previous * (1.0 + 1e-10));
        previous = E;
    }
}

TEST(FitKernel, ThreadCountDoesNotChangeResult) {
    const BenchmarkSpec b = build_PL();
    const TrajectorySet data = generate_dataset(b.system(2, 4), 300, 1);
    const HypothesisSpace space = space_on(BasisFamily::clamped_bspline, 1, -0.01, 0.6, 10);
    EXPECT_EQ(fit_kernel(data, b.true_B, space, 1).coefficients, fit_kernel(data, b.true_B, space, 3).coefficients);
}

TEST(FitKernel, EmptySupportFunctionsGetZero) {
    const BenchmarkSpec b = build_PL();
    const TrajectorySet data = generate_dataset(b.system(2, 4), 100, 1);
    // Cells beyond t = 1/sqrt(3) are never reached from the unit square.
    const HypothesisSpace space = space_on(BasisFamily::piecewise_polynomial, 0, 0.0, 2.0, 8);
    const KernelModel model = fit_kernel(data, b.true_B, space, 1);
    for (std::size_t k = 3; k < 8; ++k) EXPECT_EQ(model.coefficients[k], 0.0);
    EXPECT_NE(model.coefficients[0], 0.0);
}

TEST(FitKernel, Errors) {
    const BenchmarkSpec b = build_PL();
    const TrajectorySet data = generate_dataset(b.system(2, 4), 20, 1);
    EXPECT_THROW(fit_kernel(data, b.true_B, space_on(BasisFamily::clamped_bspline, 1, 100.0, 101.0, 3), 1), ConditioningError);
    ReductionMap wrong;
    wrong.rows = Eigen::MatrixXd::Zero(1, 5);
    wrong.rows(0, 0) = 1.0;
    EXPECT_THROW(fit_kernel(data, wrong, space_on(BasisFamily::clamped_bspline, 1, 0.0, 1.0, 3), 1), UsageError);
    HypothesisSpace two_d = HypothesisSpace::with_functions_per_dim(BasisFamily::clamped_bspline, 1, {0.0, 0.0}, {1.0, 1.0}, 3);
    EXPECT_THROW(fit_kernel(data, b.true_B, two_d, 1), UsageError);
}

TEST(KernelModel, EvaluateExamples) {
    KernelModel m;
    m.reduction = build_PL().true_B;
    m.space = space_on(BasisFamily::piecewise_polynomial, 0, 0.0, 1.0, 2);
    m.coefficients = {1.0, 2.0};
    const std::vector<double> xi = {0.0, 0.0};
    EXPECT_EQ(evaluate_kernel(m, feature_map(xi, std::vector<double>{1.0, 0.0})), 1.0);
    EXPECT_EQ(evaluate_kernel(m, feature_map(xi, std::vector<double>{1.5, 0.0})), 2.0);
    EXPECT_EQ(evaluate_kernel(m, feature_map(xi, std::vector<double>{2.0, 0.0})), 0.0);
    const PairKernel k = m.as_pair_kernel();
    EXPECT_EQ(k(xi, std::vector<double>{1.5, 0.0}), 2.0);
}
