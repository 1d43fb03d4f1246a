#pragma once

// First-order interacting-agent dynamics
//
//   dx_i/dt = (1/N) sum_{i'} Phi(x_i, x_{i'}) (x_{i'} - x_i),   i = 1..N,
//
// integrated with fixed-step classical RK4 and observed at L equi-spaced times.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "kernelscope/errors.hpp"
#include "kernelscope/parallel.hpp"
#include "kernelscope/rng.hpp"

namespace kernelscope {

/// Pair interaction Phi(x_i, x_{i'}). Both spans have length d.
using PairKernel = std::function<double(std::span<const double>, std::span<const double>)>;

/// Axis-aligned box for the per-agent initial distribution. One [lower, upper]
/// interval per state coordinate.
struct Box {
    std::vector<double> lower;
    std::vector<double> upper;

    static Box cube(std::size_t d, double lo, double hi) {
        return {std::vector<double>(d, lo), std::vector<double>(d, hi)};
    }

    std::size_t dim() const { return lower.size(); }

    void validate(std::size_t d) const {
        if (lower.size() != d || upper.size() != d)
            throw ConfigError("initial box must have one interval per state coordinate");
        for (std::size_t j = 0; j < d; ++j) {
            if (!std::isfinite(lower[j]) || !std::isfinite(upper[j]))
                throw ConfigError("initial box bounds must be finite");
            if (lower[j] > upper[j])
                throw ConfigError("initial box has lower > upper in coordinate " + std::to_string(j));
        }
    }
};

struct SystemSpec {
    std::string name;
    std::size_t N = 2;
    std::size_t d = 2;
    double T = 1.0;
    std::size_t L = 5;
    PairKernel kernel;
    Box init_box;
    std::uint64_t seed = 0;
    /// RK4 steps between consecutive observation times.
    std::size_t substeps = 200;

    void validate() const {
        if (N < 2) throw ConfigError("need at least two agents");
        if (d < 1) throw ConfigError("state dimension must be positive");
        if (L < 2) throw ConfigError("need at least two observation times");
        if (!(T > 0.0) || !std::isfinite(T)) throw ConfigError("time horizon must be positive");
        if (substeps < 1) throw ConfigError("substeps must be positive");
        if (!kernel) throw ConfigError("system has no interaction kernel");
        init_box.validate(d);
    }

    std::size_t state_size() const { return N * d; }

    /// t_l = l * T / (L - 1), l = 0..L-1.
    std::vector<double> times() const { return equispaced_times(T, L); }

    static std::vector<double> equispaced_times(double T, std::size_t L) {
        std::vector<double> t(L);
        for (std::size_t l = 0; l < L; ++l)
            t[l] = (l + 1 == L) ? T : T * static_cast<double>(l) / static_cast<double>(L - 1);
        return t;
    }
};

/// States and exact velocities for M trajectories, stored row-major as
/// [m][l][i][j] in two flat arrays.
struct TrajectorySet {
    std::size_t M = 0, N = 0, L = 0, d = 0;
    double T = 0.0;
    std::string system;
    std::uint64_t seed = 0;
    std::vector<double> times;
    std::vector<double> states;
    std::vector<double> velocities;

    std::size_t offset(std::size_t m, std::size_t l, std::size_t i = 0) const {
        return ((m * L + l) * N + i) * d;
    }
    std::span<const double> state(std::size_t m, std::size_t l) const {
        return {states.data() + offset(m, l), N * d};
    }
    std::span<const double> velocity(std::size_t m, std::size_t l) const {
        return {velocities.data() + offset(m, l), N * d};
    }
    std::span<const double> agent(std::size_t m, std::size_t l, std::size_t i) const {
        return {states.data() + offset(m, l, i), d};
    }
    std::span<const double> agent_velocity(std::size_t m, std::size_t l, std::size_t i) const {
        return {velocities.data() + offset(m, l, i), d};
    }

    bool shape_consistent() const {
        const std::size_t n = M * L * N * d;
        return states.size() == n && velocities.size() == n && times.size() == L;
    }
};

/// One trajectory at its observation times, [l][i][j] flat.
struct Trajectory {
    std::size_t N = 0, d = 0;
    std::vector<double> times;
    std::vector<double> states;
    std::vector<double> velocities;

    std::span<const double> state(std::size_t l) const { return {states.data() + l * N * d, N * d}; }
};

/// Initial condition for trajectory `m`: every agent coordinate uniform on the
/// configured box, drawn from the m-th derived stream of spec.seed.
inline std::vector<double> sample_initial_condition(const SystemSpec& spec, std::size_t m) {
    spec.init_box.validate(spec.d);
    RandomStream rng(derive_seed(spec.seed, m));
    std::vector<double> x(spec.N * spec.d);
    for (std::size_t i = 0; i < spec.N; ++i)
        for (std::size_t j = 0; j < spec.d; ++j)
            x[i * spec.d + j] = rng.uniform(spec.init_box.lower[j], spec.init_box.upper[j]);
    return x;
}

inline std::vector<std::vector<double>> sample_initial_conditions(const SystemSpec& spec, std::size_t M) {
    spec.init_box.validate(spec.d);
    std::vector<std::vector<double>> out;
    out.reserve(M);
    for (std::size_t m = 0; m < M; ++m) out.push_back(sample_initial_condition(spec, m));
    return out;
}

/// Right-hand side of the dynamics written into `out` (length N*d). The
/// diagonal term is skipped, so the kernel is never evaluated at coincident
/// agent indices.
inline void rhs_into(const PairKernel& kernel, std::size_t N, std::size_t d,
                     std::span<const double> state, std::span<double> out) {
    const double inv_n = 1.0 / static_cast<double>(N);
    for (std::size_t i = 0; i < N; ++i) {
        const std::span<const double> xi = state.subspan(i * d, d);
        double* vi = out.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) vi[j] = 0.0;
        for (std::size_t k = 0; k < N; ++k) {
            if (k == i) continue;
            const std::span<const double> xk = state.subspan(k * d, d);
            const double phi = kernel(xi, xk);
            if (!std::isfinite(phi))
                throw NumericError("non-finite kernel value for pair (" + std::to_string(i) + ", " +
                                       std::to_string(k) + ")",
                                   i, k);
            for (std::size_t j = 0; j < d; ++j) vi[j] += phi * (xk[j] - xi[j]);
        }
        for (std::size_t j = 0; j < d; ++j) vi[j] *= inv_n;
    }
}

inline std::vector<double> rhs(const SystemSpec& spec, std::span<const double> state) {
    if (state.size() != spec.N * spec.d) throw UsageError("state has wrong length for this system");
    std::vector<double> out(state.size());
    rhs_into(spec.kernel, spec.N, spec.d, state, out);
    return out;
}

/// Fixed-step RK4 integrator for the agent system; reusable scratch buffers.
class Rk4Integrator {
public:
    Rk4Integrator(PairKernel kernel, std::size_t N, std::size_t d)
        : kernel_(std::move(kernel)), N_(N), d_(d), k1_(N * d), k2_(N * d), k3_(N * d), k4_(N * d), tmp_(N * d) {}

    /// Advances `x` from t to t + steps*h.
    void advance(std::vector<double>& x, double t, double h, std::size_t steps) {
        const std::size_t n = x.size();
        for (std::size_t s = 0; s < steps; ++s) {
            rhs_into(kernel_, N_, d_, x, k1_);
            for (std::size_t q = 0; q < n; ++q) tmp_[q] = x[q] + 0.5 * h * k1_[q];
            rhs_into(kernel_, N_, d_, tmp_, k2_);
            for (std::size_t q = 0; q < n; ++q) tmp_[q] = x[q] + 0.5 * h * k2_[q];
            rhs_into(kernel_, N_, d_, tmp_, k3_);
            for (std::size_t q = 0; q < n; ++q) tmp_[q] = x[q] + h * k3_[q];
            rhs_into(kernel_, N_, d_, tmp_, k4_);
            bool finite = true;
            for (std::size_t q = 0; q < n; ++q) {
                x[q] += h / 6.0 * (k1_[q] + 2.0 * k2_[q] + 2.0 * k3_[q] + k4_[q]);
                finite = finite && std::isfinite(x[q]);
            }
            if (!finite) {
                const double when = t + static_cast<double>(s + 1) * h;
                throw DivergenceError("state became non-finite at t = " + std::to_string(when), when);
            }
        }
    }

    void velocity(std::span<const double> x, std::span<double> out) const { rhs_into(kernel_, N_, d_, x, out); }

private:
    PairKernel kernel_;
    std::size_t N_, d_;
    std::vector<double> k1_, k2_, k3_, k4_, tmp_;
};

/// Integrates from x0 and records the state and exact velocity at each of
/// `times` (times[0] is the initial time), using `substeps` RK4 steps per
/// observation interval.
inline Trajectory integrate(const PairKernel& kernel, std::size_t N, std::size_t d, std::span<const double> x0,
                            const std::vector<double>& times, std::size_t substeps) {
    if (x0.size() != N * d) throw UsageError("initial condition has wrong length");
    for (double v : x0)
        if (!std::isfinite(v)) throw UsageError("initial condition is not finite");
    if (times.empty()) throw UsageError("no observation times");
    Trajectory out;
    out.N = N;
    out.d = d;
    out.times = times;
    out.states.resize(times.size() * N * d);
    out.velocities.resize(times.size() * N * d);

    Rk4Integrator rk(kernel, N, d);
    std::vector<double> x(x0.begin(), x0.end());
    for (std::size_t l = 0; l < times.size(); ++l) {
        if (l > 0) {
            const double h = (times[l] - times[l - 1]) / static_cast<double>(substeps);
            rk.advance(x, times[l - 1], h, substeps);
        }
        std::copy(x.begin(), x.end(), out.states.begin() + l * N * d);
        rk.velocity(x, {out.velocities.data() + l * N * d, N * d});
    }
    return out;
}

inline Trajectory simulate(const SystemSpec& spec, std::span<const double> x0) {
    spec.validate();
    return integrate(spec.kernel, spec.N, spec.d, x0, spec.times(), spec.substeps);
}

/// M independent trajectories from the per-trajectory streams of spec.seed.
inline TrajectorySet generate_dataset(const SystemSpec& spec, std::size_t M, std::size_t jobs = 0) {
    spec.validate();
    TrajectorySet set;
    set.M = M;
    set.N = spec.N;
    set.L = spec.L;
    set.d = spec.d;
    set.T = spec.T;
    set.system = spec.name;
    set.seed = spec.seed;
    set.times = spec.times();
    const std::size_t block = spec.L * spec.N * spec.d;
    set.states.resize(M * block);
    set.velocities.resize(M * block);
    parallel_for(
        M,
        [&](std::size_t m) {
            const std::vector<double> x0 = sample_initial_condition(spec, m);
            Trajectory traj;
            try {
                traj = simulate(spec, x0);
            } catch (const DivergenceError& e) {
                throw DivergenceError("trajectory " + std::to_string(m) + ": " + e.what(), e.time);
            } catch (const NumericError& e) {
                throw NumericError("trajectory " + std::to_string(m) + ": " + e.what(), e.agent_i, e.agent_j);
            }
            std::copy(traj.states.begin(), traj.states.end(), set.states.begin() + m * block);
            std::copy(traj.velocities.begin(), traj.velocities.end(), set.velocities.begin() + m * block);
        },
        jobs);
    return set;
}

}  // namespace kernelscope
