#pragma once

// Nonparametric estimation of the reduced kernel psi on R^{d'} from trajectory
// data, by minimizing
//
//   E(psi) = 1/(NLM) sum_{m,l,i} | v_i - (1/N) sum_{i'} psi(B y_{i,i'}) (x_{i'} - x_i) |^2
//
// over a hypothesis space. E is quadratic in the coefficients, so the
// minimizer solves the normal system A c = b.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "kernelscope/basis.hpp"
#include "kernelscope/dynamics.hpp"
#include "kernelscope/errors.hpp"
#include "kernelscope/features.hpp"
#include "kernelscope/log.hpp"
#include "kernelscope/mpls.hpp"
#include "kernelscope/parallel.hpp"

namespace kernelscope {

/// Fitted reduced kernel together with the reduction it is composed with.
struct KernelModel {
    HypothesisSpace space;
    std::vector<double> coefficients;
    ReductionMap reduction;

    /// psi(t) for reduced variables t; zero outside the support box.
    double evaluate_reduced(std::span<const double> t) const { return space.evaluate_function(coefficients, t); }

    /// psi(B y).
    double evaluate(std::span<const double> y) const {
        std::array<double, 8> t;
        reduction.project(y, std::span<double>(t.data(), reduction.dprime()));
        return evaluate_reduced(std::span<const double>(t.data(), reduction.dprime()));
    }

    /// Phi_hat(x_i, x_{i'}) = psi(B y(x_i, x_{i'})), usable as a dynamics kernel.
    PairKernel as_pair_kernel() const {
        auto self = std::make_shared<const KernelModel>(*this);
        return [self](std::span<const double> xi, std::span<const double> xk) {
            std::array<double, 64> buf;
            const std::size_t D = feature_dim(xi.size());
            if (D > buf.size()) return self->evaluate(feature_map(xi, xk));
            feature_map_into(xi, xk, std::span<double>(buf.data(), D));
            return self->evaluate(std::span<const double>(buf.data(), D));
        };
    }
};

inline double evaluate_kernel(const KernelModel& model, std::span<const double> y) { return model.evaluate(y); }

/// Total basis count ceil((LM / ln LM)^{d'/(d'+2)}).
inline std::size_t optimal_basis_count(std::size_t L, std::size_t M, std::size_t dprime) {
    const double lm = static_cast<double>(L) * static_cast<double>(M);
    if (lm < 3.0) throw UsageError("optimal_basis_count: need L*M >= 3");
    const double dp = static_cast<double>(dprime);
    return static_cast<std::size_t>(std::ceil(std::pow(lm / std::log(lm), dp / (dp + 2.0))));
}

/// ceil(n_total^{1/d'}).
inline std::size_t per_dimension_count(std::size_t n_total, std::size_t dprime) {
    if (dprime == 1) return n_total;
    auto per = static_cast<std::size_t>(std::ceil(std::pow(static_cast<double>(n_total), 1.0 / static_cast<double>(dprime))));
    // Guard against pow rounding either way.
    while (per > 1 && std::pow(static_cast<double>(per - 1), static_cast<double>(dprime)) >= static_cast<double>(n_total)) --per;
    while (std::pow(static_cast<double>(per), static_cast<double>(dprime)) < static_cast<double>(n_total)) ++per;
    return per;
}

struct SupportBox {
    std::vector<double> lower;
    std::vector<double> upper;
};

enum class SupportRule {
    /// Range of B y over every training sample.
    all_samples,
    /// Range of B y over samples whose kernel value is nonzero, i.e. pairs
    /// that actually interact; falls back to all samples if none do.
    interacting_samples,
};

/// Per-dimension [min, max] of B y, widened by 1% of the range on each side
/// (a zero-width dimension becomes a 1e-6 wide box around its value).
inline SupportBox estimate_support(const SampleSet& samples, const ReductionMap& B,
                                   SupportRule rule = SupportRule::all_samples) {
    if (samples.size() == 0) throw UsageError("estimate_support: no samples");
    if (samples.D != B.D()) throw UsageError("estimate_support: feature dimension does not match the reduction map");
    const std::size_t dp = B.dprime();
    std::vector<double> lo(dp, std::numeric_limits<double>::infinity());
    std::vector<double> hi(dp, -std::numeric_limits<double>::infinity());
    std::vector<double> t(dp);
    bool use_all = rule == SupportRule::all_samples;
    if (!use_all) {
        use_all = std::none_of(samples.z.begin(), samples.z.end(), [](double z) { return z != 0.0; });
        if (use_all) log::info("estimate_support: no interacting samples, using all samples");
    }
    for (std::size_t q = 0; q < samples.size(); ++q) {
        if (!use_all && samples.z[q] == 0.0) continue;
        B.project(samples.features(q), t);
        for (std::size_t k = 0; k < dp; ++k) {
            lo[k] = std::min(lo[k], t[k]);
            hi[k] = std::max(hi[k], t[k]);
        }
    }
    SupportBox box{lo, hi};
    for (std::size_t k = 0; k < dp; ++k) {
        const double range = hi[k] - lo[k];
        if (range > 0.0) {
            box.lower[k] = lo[k] - 0.01 * range;
            box.upper[k] = hi[k] + 0.01 * range;
        } else {
            box.lower[k] = lo[k] - 5e-7;
            box.upper[k] = hi[k] + 5e-7;
        }
    }
    return box;
}

/// E(c) = c^T A c - 2 b^T c + c0, everything already divided by NLM.
struct NormalSystem {
    Eigen::MatrixXd A;
    Eigen::VectorXd b;
    double c0 = 0.0;

    double objective(const Eigen::VectorXd& c) const { return c.dot(A * c) - 2.0 * b.dot(c) + c0; }
    Eigen::VectorXd gradient(const Eigen::VectorXd& c) const { return 2.0 * (A * c - b); }
};

namespace detail {

inline void check_compatible(const TrajectorySet& data, const ReductionMap& B, const HypothesisSpace& space) {
    if (!data.shape_consistent()) throw UsageError("trajectory set arrays have inconsistent shapes");
    if (feature_dim(data.d) != B.D())
        throw UsageError("feature dimension of the data (" + std::to_string(feature_dim(data.d)) +
                         ") does not match the reduction map (" + std::to_string(B.D()) + ")");
    if (space.dim() != B.dprime()) throw UsageError("hypothesis space dimension does not match d'");
    if (B.dprime() > 8) throw UsageError("at most eight reduced variables are supported");
    space.validate();
}

}  // namespace detail

inline NormalSystem assemble_normal_system(const TrajectorySet& data, const ReductionMap& B,
                                           const HypothesisSpace& space, std::size_t jobs = 0) {
    detail::check_compatible(data, B, space);
    const std::size_t n = space.n_total();
    const std::size_t N = data.N, d = data.d, D = B.D(), dp = B.dprime();
    const Chunking chunks = make_chunking(data.M, 32);

    struct Partial {
        Eigen::MatrixXd A;
        Eigen::VectorXd b;
        double c0 = 0.0;
    };
    std::vector<Partial> partial(chunks.chunks);

    parallel_for(
        chunks.chunks,
        [&](std::size_t c) {
            Partial& p = partial[c];
            p.A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
            p.b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
            std::vector<double> g(n * d, 0.0);
            std::vector<char> hit(n, 0);
            std::vector<std::size_t> touched;
            std::vector<double> y(D);
            std::array<double, 8> t{};
            BasisValues bv;
            const double inv_n = 1.0 / static_cast<double>(N);
            for (std::size_t m = chunks.begin(c); m < chunks.end(c); ++m) {
                for (std::size_t l = 0; l < data.L; ++l) {
                    for (std::size_t i = 0; i < N; ++i) {
                        const auto xi = data.agent(m, l, i);
                        const auto vi = data.agent_velocity(m, l, i);
                        for (std::size_t j = 0; j < d; ++j) p.c0 += vi[j] * vi[j];
                        touched.clear();
                        for (std::size_t k = 0; k < N; ++k) {
                            if (k == i) continue;
                            const auto xk = data.agent(m, l, k);
                            feature_map_into(xi, xk, y);
                            B.project(y, std::span<double>(t.data(), dp));
                            space.evaluate(std::span<const double>(t.data(), dp), bv);
                            for (std::size_t q = 0; q < bv.count; ++q) {
                                const std::size_t a = bv.index[q];
                                if (!hit[a]) {
                                    hit[a] = 1;
                                    touched.push_back(a);
                                }
                                const double s = bv.value[q] * inv_n;
                                for (std::size_t j = 0; j < d; ++j) g[a * d + j] += s * (xk[j] - xi[j]);
                            }
                        }
                        for (std::size_t u = 0; u < touched.size(); ++u) {
                            const std::size_t a = touched[u];
                            double gv = 0.0;
                            for (std::size_t j = 0; j < d; ++j) gv += g[a * d + j] * vi[j];
                            p.b(static_cast<Eigen::Index>(a)) += gv;
                            for (std::size_t w = 0; w < touched.size(); ++w) {
                                const std::size_t bidx = touched[w];
                                double gg = 0.0;
                                for (std::size_t j = 0; j < d; ++j) gg += g[a * d + j] * g[bidx * d + j];
                                p.A(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(bidx)) += gg;
                            }
                        }
                        for (std::size_t a : touched) {
                            hit[a] = 0;
                            for (std::size_t j = 0; j < d; ++j) g[a * d + j] = 0.0;
                        }
                    }
                }
            }
        },
        jobs);

    NormalSystem sys;
    sys.A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    sys.b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    for (const Partial& p : partial) {
        sys.A += p.A;
        sys.b += p.b;
        sys.c0 += p.c0;
    }
    const double scale = 1.0 / (static_cast<double>(N) * static_cast<double>(data.L) * static_cast<double>(std::max<std::size_t>(data.M, 1)));
    sys.A *= scale;
    sys.b *= scale;
    sys.c0 *= scale;
    return sys;
}

/// Minimizer of the quadratic objective. Basis functions with no data in
/// their support get zero coefficients.
inline Eigen::VectorXd solve_normal_system(const NormalSystem& sys) {
    const Eigen::Index n = sys.A.rows();
    std::vector<Eigen::Index> active, empty;
    for (Eigen::Index k = 0; k < n; ++k) (sys.A(k, k) > 0.0 ? active : empty).push_back(k);
    std::string empty_names;
    for (Eigen::Index k : empty) empty_names += (empty_names.empty() ? "" : ", ") + std::to_string(k);
    if (!empty.empty())
        log::info("fit_kernel: " + std::to_string(empty.size()) + " basis functions have empty support (" + empty_names +
                  "), coefficients set to zero");
    Eigen::VectorXd c = Eigen::VectorXd::Zero(n);
    if (active.empty()) throw ConditioningError("fit_kernel: singular normal matrix, every basis function has empty support", std::numeric_limits<double>::infinity());

    const auto na = static_cast<Eigen::Index>(active.size());
    Eigen::MatrixXd Ar(na, na);
    Eigen::VectorXd br(na);
    for (Eigen::Index r = 0; r < na; ++r) {
        br(r) = sys.b(active[static_cast<std::size_t>(r)]);
        for (Eigen::Index s = 0; s < na; ++s) Ar(r, s) = sys.A(active[static_cast<std::size_t>(r)], active[static_cast<std::size_t>(s)]);
    }
    const double bnorm = std::max(br.norm(), std::numeric_limits<double>::min());
    auto attempt = [&](const Eigen::MatrixXd& M, Eigen::VectorXd& x) {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(M);
        if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return false;
        const Eigen::VectorXd diag = ldlt.vectorD();
        if (diag.minCoeff() <= 1e-14 * diag.maxCoeff()) return false;
        x = ldlt.solve(br);
        return x.allFinite() && (M * x - br).norm() <= 1e-8 * bnorm;
    };
    Eigen::VectorXd cr;
    if (!attempt(Ar, cr)) {
        Eigen::MatrixXd ridged = Ar;
        const double ridge = 1e-12 * Ar.trace();
        ridged.diagonal().array() += ridge;
        log::info("fit_kernel: normal matrix numerically singular, adding ridge " + std::to_string(ridge));
        if (!attempt(ridged, cr)) {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Ar, Eigen::EigenvaluesOnly);
            const double cond = eig.eigenvalues().maxCoeff() / std::max(eig.eigenvalues().minCoeff(), 0.0);
            throw ConditioningError("fit_kernel: singular normal matrix" +
                                        (empty_names.empty() ? std::string() : " (empty-support basis functions: " + empty_names + ")"),
                                    cond);
        }
    }
    for (Eigen::Index r = 0; r < na; ++r) c(active[static_cast<std::size_t>(r)]) = cr(r);
    return c;
}

inline KernelModel fit_kernel(const TrajectorySet& data, const ReductionMap& B, const HypothesisSpace& space,
                              std::size_t jobs = 0) {
    const NormalSystem sys = assemble_normal_system(data, B, space, jobs);
    const Eigen::VectorXd c = solve_normal_system(sys);
    KernelModel model;
    model.space = space;
    model.reduction = B;
    model.coefficients.assign(c.data(), c.data() + c.size());
    return model;
}

/// Direct evaluation of E(psi) for a model, summing squared residuals.
inline double trajectory_objective(const TrajectorySet& data, const KernelModel& model) {
    const std::size_t N = data.N, d = data.d;
    double total = 0.0;
    std::vector<double> y(feature_dim(d)), pred(d);
    for (std::size_t m = 0; m < data.M; ++m)
        for (std::size_t l = 0; l < data.L; ++l)
            for (std::size_t i = 0; i < N; ++i) {
                const auto xi = data.agent(m, l, i);
                const auto vi = data.agent_velocity(m, l, i);
                std::fill(pred.begin(), pred.end(), 0.0);
                for (std::size_t k = 0; k < N; ++k) {
                    if (k == i) continue;
                    const auto xk = data.agent(m, l, k);
                    feature_map_into(xi, xk, y);
                    const double psi = model.evaluate(y);
                    for (std::size_t j = 0; j < d; ++j) pred[j] += psi * (xk[j] - xi[j]) / static_cast<double>(N);
                }
                for (std::size_t j = 0; j < d; ++j) total += (vi[j] - pred[j]) * (vi[j] - pred[j]);
            }
    return total / (static_cast<double>(N) * static_cast<double>(data.L) * static_cast<double>(data.M));
}

}  // namespace kernelscope
