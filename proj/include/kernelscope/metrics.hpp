#pragma once

// Performance measures: weighted L2(rho_T) kernel errors and trajectory
// prediction errors, absolute and relative.

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "kernelscope/benchmarks.hpp"
#include "kernelscope/dynamics.hpp"
#include "kernelscope/errors.hpp"
#include "kernelscope/features.hpp"
#include "kernelscope/log.hpp"
#include "kernelscope/mpls.hpp"
#include "kernelscope/parallel.hpp"
#include "kernelscope/regression.hpp"

namespace kernelscope {

/// Empirical rho_T: feature vectors of every ordered pair at every observation
/// time of fresh trajectories, each with weight W = |x_i - x_{i'}|.
struct RhoSamples {
    std::size_t D = 0;
    std::vector<double> y;
    std::vector<double> weight;

    std::size_t size() const { return weight.size(); }
    std::span<const double> features(std::size_t q) const { return {y.data() + q * D, D}; }
};

inline RhoSamples rho_from_dataset(const TrajectorySet& data) {
    RhoSamples rho;
    rho.D = feature_dim(data.d);
    const std::size_t pairs = data.N * (data.N - 1);
    rho.y.reserve(data.M * data.L * pairs * rho.D);
    rho.weight.reserve(data.M * data.L * pairs);
    std::vector<double> y(rho.D);
    for (std::size_t m = 0; m < data.M; ++m)
        for (std::size_t l = 0; l < data.L; ++l)
            for (std::size_t i = 0; i < data.N; ++i)
                for (std::size_t k = 0; k < data.N; ++k) {
                    if (k == i) continue;
                    const auto xi = data.agent(m, l, i);
                    const auto xk = data.agent(m, l, k);
                    feature_map_into(xi, xk, y);
                    rho.y.insert(rho.y.end(), y.begin(), y.end());
                    rho.weight.push_back(detail::distance(xi, xk));
                }
    return rho;
}

/// Simulates M_rho fresh trajectories of `spec` and discretizes rho_T at its
/// observation times.
inline RhoSamples sample_rho_T(const SystemSpec& spec, std::size_t M_rho, std::size_t jobs = 0) {
    return rho_from_dataset(generate_dataset(spec, M_rho, jobs));
}

struct KernelError {
    double absolute = 0.0;
    double relative = 0.0;
};

/// Weighted L2(rho) distance between phi(B y) and an arbitrary estimate
/// evaluated on y. The relative value divides by the weighted norm of phi(B y).
template <typename Estimate>
KernelError err_phi_with(const ReductionMap& B, const ReducedKernel& phi, Estimate&& estimate, const RhoSamples& rho) {
    if (rho.size() == 0) throw UsageError("err_phi: empty rho sample");
    if (rho.D != B.D()) throw UsageError("err_phi: feature dimension mismatch");
    double num = 0.0, den = 0.0;
    bool any_weight = false;
    std::vector<double> t(B.dprime());
    for (std::size_t q = 0; q < rho.size(); ++q) {
        const auto y = rho.features(q);
        const double w2 = rho.weight[q] * rho.weight[q];
        any_weight = any_weight || w2 > 0.0;
        B.project(y, t);
        const double truth = phi(t);
        const double diff = truth - estimate(y);
        num += diff * diff * w2;
        den += truth * truth * w2;
    }
    if (!any_weight) throw UsageError("err_phi: every rho sample has zero weight");
    const double n = static_cast<double>(rho.size());
    KernelError e;
    e.absolute = std::sqrt(num / n);
    if (!(den > 0.0)) throw UsageError("err_phi: true kernel vanishes on the sampled support (zero denominator)");
    e.relative = e.absolute / std::sqrt(den / n);
    return e;
}

inline KernelError err_phi(const ReductionMap& B, const ReducedKernel& phi, const KernelModel& model, const RhoSamples& rho) {
    return err_phi_with(B, phi, [&](std::span<const double> y) { return model.evaluate(y); }, rho);
}

struct TrajectoryError {
    /// Mean over non-diverged initial conditions of the relative error.
    double relative_mean = 0.0;
    double absolute_mean = 0.0;
    /// Relative error per initial condition; NaN where the estimated dynamics diverged.
    std::vector<double> per_ic;
    std::size_t diverged = 0;
};

/// Paired true and estimated trajectories on an evaluation grid.
struct TrajectoryPair {
    Trajectory truth;
    Trajectory estimate;
};

/// RK4 steps per evaluation interval so the step size does not exceed the
/// one used to generate training data.
inline std::size_t evaluation_substeps(const SystemSpec& spec, std::size_t L_eval) {
    const double train_step = spec.T / static_cast<double>((spec.L - 1) * spec.substeps);
    const double interval = spec.T / static_cast<double>(L_eval - 1);
    return static_cast<std::size_t>(std::ceil(interval / train_step - 1e-9));
}

inline TrajectoryPair simulate_pair(const SystemSpec& spec, const PairKernel& estimated, std::span<const double> x0,
                                    std::size_t L_eval) {
    const std::vector<double> times = SystemSpec::equispaced_times(spec.T, L_eval);
    const std::size_t steps = evaluation_substeps(spec, L_eval);
    return {integrate(spec.kernel, spec.N, spec.d, x0, times, steps),
            integrate(estimated, spec.N, spec.d, x0, times, steps)};
}

/// Trajectory error of the system driven by `estimated` against the true
/// system `spec`, from the given initial conditions. Per initial condition:
///   err^2 = 1/(NT) sum_i int_0^T |x_i - x_hat_i|^2 dt   (trapezoid on L_eval nodes)
/// and the relative error divides err by sqrt(1/(NT) sum_i int |x_i|^2 dt).
inline TrajectoryError err_traj_from(const SystemSpec& spec, const PairKernel& estimated,
                                     const std::vector<std::vector<double>>& initial, std::size_t L_eval = 100,
                                     std::size_t jobs = 0) {
    spec.validate();
    if (initial.empty()) throw UsageError("err_traj: need at least one initial condition");
    if (L_eval < 2) throw UsageError("err_traj: need at least two evaluation times");
    const std::size_t M = initial.size();
    std::vector<double> rel(M, std::numeric_limits<double>::quiet_NaN());
    std::vector<double> abs(M, std::numeric_limits<double>::quiet_NaN());
    const std::size_t nd = spec.N * spec.d;
    parallel_for(
        M,
        [&](std::size_t m) {
            TrajectoryPair pair;
            pair.truth = integrate(spec.kernel, spec.N, spec.d, initial[m], SystemSpec::equispaced_times(spec.T, L_eval),
                                   evaluation_substeps(spec, L_eval));
            try {
                pair.estimate = integrate(estimated, spec.N, spec.d, initial[m], pair.truth.times,
                                          evaluation_substeps(spec, L_eval));
            } catch (const DivergenceError&) {
                return;
            } catch (const NumericError&) {
                return;
            }
            double diff_int = 0.0, norm_int = 0.0;
            for (std::size_t l = 0; l < L_eval; ++l) {
                double diff = 0.0, norm = 0.0;
                const auto a = pair.truth.state(l);
                const auto b = pair.estimate.state(l);
                for (std::size_t q = 0; q < nd; ++q) {
                    diff += (a[q] - b[q]) * (a[q] - b[q]);
                    norm += a[q] * a[q];
                }
                const double w = (l == 0 || l + 1 == L_eval) ? 0.5 : 1.0;
                const double dt = pair.truth.times[1] - pair.truth.times[0];
                diff_int += w * dt * diff;
                norm_int += w * dt * norm;
            }
            const double scale = 1.0 / (static_cast<double>(spec.N) * spec.T);
            abs[m] = std::sqrt(scale * diff_int);
            rel[m] = norm_int > 0.0 ? abs[m] / std::sqrt(scale * norm_int) : (abs[m] == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
        },
        jobs);

    TrajectoryError out;
    out.per_ic = rel;
    double sum_rel = 0.0, sum_abs = 0.0;
    std::size_t ok = 0;
    for (std::size_t m = 0; m < M; ++m) {
        if (std::isnan(rel[m])) {
            ++out.diverged;
            continue;
        }
        sum_rel += rel[m];
        sum_abs += abs[m];
        ++ok;
    }
    if (out.diverged > 0)
        log::warn("err_traj: " + std::to_string(out.diverged) + " of " + std::to_string(M) +
                  " estimated trajectories diverged and were excluded");
    out.relative_mean = ok > 0 ? sum_rel / static_cast<double>(ok) : std::numeric_limits<double>::quiet_NaN();
    out.absolute_mean = ok > 0 ? sum_abs / static_cast<double>(ok) : std::numeric_limits<double>::quiet_NaN();
    return out;
}

/// err_traj over M_eval fresh initial conditions drawn from spec's own streams.
inline TrajectoryError err_traj(const SystemSpec& spec, const PairKernel& estimated, std::size_t M_eval,
                                std::size_t L_eval = 100, std::size_t jobs = 0) {
    if (M_eval < 1) throw UsageError("err_traj: need at least one initial condition");
    return err_traj_from(spec, estimated, sample_initial_conditions(spec, M_eval), L_eval, jobs);
}

struct Summary {
    double mean = std::numeric_limits<double>::quiet_NaN();
    /// Sample standard deviation; NaN with fewer than two values.
    double stddev = std::numeric_limits<double>::quiet_NaN();
    std::size_t count = 0;
};

inline Summary summarize(const std::vector<double>& values) {
    Summary s;
    double sum = 0.0;
    for (double v : values)
        if (std::isfinite(v)) {
            sum += v;
            ++s.count;
        }
    if (s.count == 0) return s;
    s.mean = sum / static_cast<double>(s.count);
    if (s.count >= 2) {
        double ss = 0.0;
        for (double v : values)
            if (std::isfinite(v)) ss += (v - s.mean) * (v - s.mean);
        s.stddev = std::sqrt(ss / static_cast<double>(s.count - 1));
    }
    return s;
}

/// Per-trial error values and their aggregates.
struct ErrorReport {
    std::string system;
    std::vector<double> err_B;
    std::vector<double> err_B_frobenius;
    std::vector<double> err_phi_abs;
    std::vector<double> err_phi_rel;
    std::vector<double> err_phi_rel_oracle;
    std::vector<double> err_traj_rel_mean;
    std::vector<double> err_traj_rel_mean_transfer;
    std::vector<std::string> provenance;
    std::vector<std::string> failures;
};

}  // namespace kernelscope
