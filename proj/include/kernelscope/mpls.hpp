#pragma once

// Estimation of the feature reduction map by Multiplicatively Perturbed Least
// Squares (MPLS): an OLS linear component beta, plus the dominant right
// singular vectors of locally re-weighted slope perturbations computed on the
// residual data projected away from beta.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "kernelscope/errors.hpp"
#include "kernelscope/features.hpp"
#include "kernelscope/least_squares.hpp"
#include "kernelscope/log.hpp"
#include "kernelscope/parallel.hpp"
#include "kernelscope/rng.hpp"

namespace kernelscope {

enum class Provenance { oracle, mpls_with_beta, mpls_without_beta };

inline const char* to_string(Provenance p) {
    switch (p) {
        case Provenance::oracle: return "oracle";
        case Provenance::mpls_with_beta: return "mpls_with_beta";
        case Provenance::mpls_without_beta: return "mpls_without_beta";
    }
    return "unknown";
}

inline Provenance provenance_from_string(const std::string& s) {
    if (s == "oracle") return Provenance::oracle;
    if (s == "mpls_with_beta") return Provenance::mpls_with_beta;
    if (s == "mpls_without_beta") return Provenance::mpls_without_beta;
    throw IoError("unknown reduction map provenance '" + s + "'");
}

/// d' x D matrix with orthonormal rows mapping features y to reduced variables.
struct ReductionMap {
    Eigen::MatrixXd rows;
    Provenance provenance = Provenance::oracle;

    std::size_t dprime() const { return static_cast<std::size_t>(rows.rows()); }
    std::size_t D() const { return static_cast<std::size_t>(rows.cols()); }

    void project(std::span<const double> y, std::span<double> out) const {
        const Eigen::Index D = rows.cols();
        for (Eigen::Index r = 0; r < rows.rows(); ++r) {
            double acc = 0.0;
            for (Eigen::Index q = 0; q < D; ++q) acc += rows(r, q) * y[static_cast<std::size_t>(q)];
            out[static_cast<std::size_t>(r)] = acc;
        }
    }

    std::vector<double> project(std::span<const double> y) const {
        std::vector<double> out(dprime());
        project(y, out);
        return out;
    }

    /// max |rows rows^T - I|.
    double orthonormality_error() const {
        const Eigen::MatrixXd g = rows * rows.transpose();
        return (g - Eigen::MatrixXd::Identity(g.rows(), g.cols())).cwiseAbs().maxCoeff();
    }
};

enum class CenterSelection { random_subset, provided };

struct MplsConfig {
    std::size_t K = 50;
    /// Gaussian weight bandwidth; 0 selects 1/D.
    double lambda = 0.0;
    std::uint64_t split_seed = 0;
    CenterSelection center_selection = CenterSelection::random_subset;
    /// K x D centers, used when center_selection == provided.
    Eigen::MatrixXd centers;
    /// Project centers onto the orthogonal complement of beta before weighting.
    bool project_centers = true;
    /// Fit an intercept with beta and centre the perturbation regressors.
    bool affine = true;
    std::size_t jobs = 0;

    double effective_lambda(std::size_t D) const { return lambda > 0.0 ? lambda : 1.0 / static_cast<double>(D); }
};

struct MplsResult {
    Eigen::VectorXd beta_hat;         // D
    double intercept = 0.0;
    Eigen::MatrixXd A_hat;            // d' x D, rows orthogonal to beta_hat
    Eigen::VectorXd singular_values;  // min(K, D), descending
    Eigen::MatrixXd P_hat;            // K x D slope perturbations
    std::vector<std::size_t> split_s;        // indices used for the perturbations
    std::vector<std::size_t> split_s_prime;  // indices used for the OLS step
};

/// Below this norm beta is treated as absent.
inline constexpr double beta_floor = 1e-12;

namespace detail {

inline Eigen::MatrixXd gather_rows(const SampleSet& samples, const std::vector<std::size_t>& idx) {
    Eigen::MatrixXd X(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(samples.D));
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const auto y = samples.features(idx[r]);
        for (std::size_t q = 0; q < samples.D; ++q) X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(q)) = y[q];
    }
    return X;
}

/// Orthonormal basis (D x (D-1)) of the complement of a nonzero vector.
inline Eigen::MatrixXd complement_basis(const Eigen::VectorXd& v) {
    const Eigen::Index D = v.size();
    const Eigen::MatrixXd column = v;
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(column);
    const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(D, D);
    return Q.rightCols(D - 1);
}

/// Fixes the sign of each row so its largest-magnitude entry is positive.
inline void canonical_signs(Eigen::MatrixXd& rows) {
    for (Eigen::Index r = 0; r < rows.rows(); ++r) {
        Eigen::Index arg = 0;
        rows.row(r).cwiseAbs().maxCoeff(&arg);
        if (rows(r, arg) < 0.0) rows.row(r) *= -1.0;
    }
}

}  // namespace detail

inline MplsResult mpls(const SampleSet& samples, std::size_t dprime, const MplsConfig& cfg) {
    const std::size_t Q = samples.size();
    const std::size_t D = samples.D;
    if (dprime < 1 || dprime > D) throw UsageError("mpls: intrinsic dimension must lie in [1, D]");
    if (cfg.K < dprime) throw UsageError("mpls: K must be at least the intrinsic dimension");
    if (Q < std::max(2 * D, 2 * cfg.K))
        throw UsageError("mpls: need at least max(2D, 2K) = " + std::to_string(std::max(2 * D, 2 * cfg.K)) +
                         " samples, got " + std::to_string(Q));
    if (!(cfg.lambda >= 0.0)) throw UsageError("mpls: lambda must be positive (or 0 for 1/D)");
    const double lambda = cfg.effective_lambda(D);
    if (cfg.center_selection == CenterSelection::provided &&
        (static_cast<std::size_t>(cfg.centers.rows()) != cfg.K || static_cast<std::size_t>(cfg.centers.cols()) != D))
        throw UsageError("mpls: provided centers must be a K x D matrix");

    MplsResult out;
    RandomStream rng(cfg.split_seed);
    {
        const std::vector<std::size_t> perm = rng.permutation(Q);
        const std::size_t half = Q / 2;
        out.split_s_prime.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(half));
        out.split_s.assign(perm.begin() + static_cast<std::ptrdiff_t>(half), perm.end());
    }

    // (1) OLS for the linear component on S'.
    {
        const Eigen::MatrixXd F = detail::gather_rows(samples, out.split_s_prime);
        Eigen::VectorXd z(F.rows());
        for (std::size_t r = 0; r < out.split_s_prime.size(); ++r) z(static_cast<Eigen::Index>(r)) = samples.z[out.split_s_prime[r]];
        if (cfg.affine) {
            Eigen::MatrixXd X(F.rows(), F.cols() + 1);
            X.leftCols(F.cols()) = F;
            X.col(F.cols()).setOnes();
            const LeastSquares ols(X, SingularPolicy::raise, "mpls linear component");
            const Eigen::VectorXd coef = ols.solve(z);
            out.beta_hat = coef.head(F.cols());
            out.intercept = coef(F.cols());
        } else {
            const LeastSquares ols(F, SingularPolicy::raise, "mpls linear component");
            out.beta_hat = ols.solve(z);
        }
    }

    // (2) Residual data on S, features projected onto the complement of beta.
    const double beta_norm = out.beta_hat.norm();
    const bool has_beta = beta_norm >= beta_floor;
    const Eigen::VectorXd beta_unit = has_beta ? Eigen::VectorXd(out.beta_hat / beta_norm) : Eigen::VectorXd::Zero(D);
    Eigen::MatrixXd Y = detail::gather_rows(samples, out.split_s);
    Eigen::VectorXd r(Y.rows());
    for (std::size_t q = 0; q < out.split_s.size(); ++q)
        r(static_cast<Eigen::Index>(q)) =
            samples.z[out.split_s[q]] - out.intercept - Y.row(static_cast<Eigen::Index>(q)).dot(out.beta_hat);
    if (has_beta) Y -= (Y * beta_unit) * beta_unit.transpose();
    Eigen::RowVectorXd y_mean = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(D));
    if (cfg.affine) y_mean = Y.colwise().mean();

    // Least squares is posed in coordinates of the complement so the
    // perturbations stay orthogonal to beta.
    const Eigen::MatrixXd basis =
        has_beta ? detail::complement_basis(beta_unit) : Eigen::MatrixXd(Eigen::MatrixXd::Identity(D, D));
    const Eigen::MatrixXd coords = (Y.rowwise() - y_mean) * basis;
    const LeastSquares slopes(coords, SingularPolicy::ridge, "mpls slope perturbation");

    // (3) Centers and slope perturbations.
    Eigen::MatrixXd centers(cfg.K, D);
    if (cfg.center_selection == CenterSelection::provided) {
        centers = cfg.centers;
    } else {
        const auto picks = rng.sample_without_replacement(Q, cfg.K);
        for (std::size_t k = 0; k < cfg.K; ++k) {
            const auto y = samples.features(picks[k]);
            for (std::size_t q = 0; q < D; ++q) centers(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(q)) = y[q];
        }
    }
    if (has_beta && cfg.project_centers) centers -= (centers * beta_unit) * beta_unit.transpose();

    out.P_hat = Eigen::MatrixXd::Zero(cfg.K, D);
    parallel_for(
        cfg.K,
        [&](std::size_t k) {
            const Eigen::RowVectorXd u = centers.row(static_cast<Eigen::Index>(k));
            const Eigen::VectorXd w = (-lambda * (Y.rowwise() - u).rowwise().squaredNorm()).array().exp();
            const double wsum = w.sum();
            if (!(wsum > 0.0)) {
                log::warn("mpls: all weights underflow for center " + std::to_string(k) + "; perturbation set to zero");
                return;
            }
            const double mean = w.dot(r) / wsum;
            const Eigen::VectorXd target = w.cwiseProduct((r.array() - mean).matrix());
            out.P_hat.row(static_cast<Eigen::Index>(k)) = (basis * slopes.solve(target)).transpose();
        },
        cfg.jobs);

    // (4) Rank-d' SVD of the stacked perturbations.
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(out.P_hat, Eigen::ComputeThinV);
    out.singular_values = svd.singularValues();
    const Eigen::MatrixXd V = svd.matrixV();
    out.A_hat = V.leftCols(static_cast<Eigen::Index>(dprime)).transpose();
    detail::canonical_signs(out.A_hat);
    return out;
}

/// Residual sum of squares of a piecewise-constant fit of z on <y, nu> with
/// `bins` uniform bins over the projected range.
inline double constant_spline_rss(const SampleSet& samples, const Eigen::VectorXd& nu, std::size_t bins) {
    const std::size_t Q = samples.size();
    if (Q == 0) return 0.0;
    std::vector<double> t(Q);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t q = 0; q < Q; ++q) {
        const auto y = samples.features(q);
        double acc = 0.0;
        for (std::size_t j = 0; j < samples.D; ++j) acc += nu(static_cast<Eigen::Index>(j)) * y[j];
        t[q] = acc;
        lo = std::min(lo, acc);
        hi = std::max(hi, acc);
    }
    const double width = hi - lo;
    std::vector<double> sum(bins, 0.0), sum2(bins, 0.0), count(bins, 0.0);
    for (std::size_t q = 0; q < Q; ++q) {
        std::size_t b = 0;
        if (width > 0.0) b = std::min(bins - 1, static_cast<std::size_t>((t[q] - lo) / width * static_cast<double>(bins)));
        sum[b] += samples.z[q];
        sum2[b] += samples.z[q] * samples.z[q];
        count[b] += 1.0;
    }
    double rss = 0.0;
    for (std::size_t b = 0; b < bins; ++b)
        if (count[b] > 0.0) rss += std::max(0.0, sum2[b] - sum[b] * sum[b] / count[b]);
    return rss;
}

/// Bin count of the one-dimensional constant fit used to choose between beta and A.
inline constexpr std::size_t selection_bins = 28;

/// Chooses between the linear component and the d'-th perturbation direction
/// and stacks the final orthonormal reduction map.
inline ReductionMap assemble_B(const SampleSet& samples, const MplsResult& est, std::size_t dprime,
                               std::size_t bins = selection_bins) {
    if (static_cast<std::size_t>(est.A_hat.rows()) < dprime || static_cast<std::size_t>(est.A_hat.cols()) != samples.D)
        throw UsageError("assemble_B: MPLS result does not match the samples or d'");
    ReductionMap out;
    const Eigen::MatrixXd A = est.A_hat.topRows(static_cast<Eigen::Index>(dprime));
    const double beta_norm = est.beta_hat.norm();
    if (beta_norm < beta_floor) {
        out.rows = A;
        out.provenance = Provenance::mpls_without_beta;
        return out;
    }
    const Eigen::VectorXd beta_unit = est.beta_hat / beta_norm;
    const Eigen::VectorXd last = A.row(static_cast<Eigen::Index>(dprime) - 1).transpose();
    const double rss_beta = constant_spline_rss(samples, beta_unit, bins);
    const double rss_a = constant_spline_rss(samples, last, bins);
    log::info("assemble_B: constant-fit RSS beta = " + std::to_string(rss_beta) + ", A_d' = " + std::to_string(rss_a));
    if (rss_beta < rss_a) {
        out.rows.resize(static_cast<Eigen::Index>(dprime), A.cols());
        out.rows.row(0) = beta_unit.transpose();
        if (dprime > 1) out.rows.bottomRows(static_cast<Eigen::Index>(dprime) - 1) = A.topRows(static_cast<Eigen::Index>(dprime) - 1);
        out.provenance = Provenance::mpls_with_beta;
    } else {
        out.rows = A;
        out.provenance = Provenance::mpls_without_beta;
    }
    return out;
}

/// Projection-difference distance |B^T B - B_hat^T B_hat| in the operator 2-norm.
inline double err_B(const ReductionMap& truth, const ReductionMap& est) {
    if (truth.D() != est.D() || truth.dprime() != est.dprime())
        throw UsageError("err_B: reduction maps differ in shape");
    const Eigen::MatrixXd diff = truth.rows.transpose() * truth.rows - est.rows.transpose() * est.rows;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(diff, Eigen::EigenvaluesOnly);
    return eig.eigenvalues().cwiseAbs().maxCoeff();
}

inline double err_B_frobenius(const ReductionMap& truth, const ReductionMap& est) {
    if (truth.D() != est.D() || truth.dprime() != est.dprime())
        throw UsageError("err_B: reduction maps differ in shape");
    return (truth.rows.transpose() * truth.rows - est.rows.transpose() * est.rows).norm();
}

}  // namespace kernelscope
