#pragma once

// Ground-truth benchmark systems: opinion dynamics (OD), power law (PL) and
// power law with directional correction (PLwDC), all in d = 2.

#include <Eigen/Dense>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "kernelscope/basis.hpp"
#include "kernelscope/dynamics.hpp"
#include "kernelscope/errors.hpp"
#include "kernelscope/features.hpp"
#include "kernelscope/mpls.hpp"

namespace kernelscope {

/// phi on R^{d'}.
using ReducedKernel = std::function<double(std::span<const double>)>;

/// Shared experiment sizes.
struct CommonParameters {
    std::size_t M = 50000;
    std::size_t M_transfer = 500;
    std::size_t N = 2;
    std::size_t N_transfer = 20;
    std::size_t L = 5;
    double T = 1.0;
    std::size_t d = 2;
    std::size_t D = feature_dim(2);
};

struct BenchmarkSpec {
    std::string name;
    ReductionMap true_B;
    ReducedKernel true_phi;
    /// Closed form of Phi(x_i, x_{i'}), independent of the feature map.
    PairKernel closed_form;
    Box mu0;
    std::size_t dprime = 1;
    std::vector<double> v0;
    CommonParameters common;
    BasisFamily default_basis = BasisFamily::clamped_bspline;
    int default_degree = 1;

    /// Phi = phi(B y(x_i, x_{i'})).
    PairKernel composed_kernel() const {
        const ReductionMap B = true_B;
        const ReducedKernel phi = true_phi;
        return [B, phi](std::span<const double> xi, std::span<const double> xk) {
            const std::vector<double> y = feature_map(xi, xk);
            const std::vector<double> t = B.project(y);
            return phi(t);
        };
    }

    /// Dynamics specification with the given agent count and seed.
    SystemSpec system(std::size_t N, std::uint64_t seed) const {
        SystemSpec s;
        s.name = name;
        s.N = N;
        s.d = common.d;
        s.T = common.T;
        s.L = common.L;
        s.kernel = closed_form;
        s.init_box = mu0;
        s.seed = seed;
        return s;
    }
};

namespace detail {

inline const double two_sqrt3 = 2.0 * std::numbers::sqrt3;

/// Row of |x_i - x_{i'}|^2 / (2 sqrt 3) in the quadratic feature layout (d = 2).
inline Eigen::RowVectorXd squared_distance_row() {
    constexpr std::size_t d = 2;
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(feature_dim(d)));
    const double c = 1.0 / two_sqrt3;
    // pure squares of x_i: indices 4 (j=0,j'=0), 6 (j=1,j'=1); of x_{i'}: 7, 9
    row(4) = c;
    row(6) = c;
    row(7) = c;
    row(9) = c;
    // matched cross terms (x_i)_j (x_{i'})_j: 10 (0,0), 13 (1,1)
    row(10) = -2.0 * c;
    row(13) = -2.0 * c;
    return row;
}

inline double distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    return std::sqrt(s);
}

}  // namespace detail

inline BenchmarkSpec build_OD() {
    BenchmarkSpec b;
    b.name = "OD";
    b.dprime = 1;
    b.true_B.rows = detail::squared_distance_row();
    b.true_B.provenance = Provenance::oracle;
    b.true_phi = [](std::span<const double> xi) {
        const double r = xi[0];
        const double first = 1.0 / (2.0 * detail::two_sqrt3);
        const double second = 1.0 / detail::two_sqrt3;
        // B y is a squared distance; tiny negative values are rounding.
        if (r < first) return 0.1;
        if (r >= first && r < second) return 1.0;
        return 0.0;
    };
    b.closed_form = [](std::span<const double> xi, std::span<const double> xk) {
        double s = 0.0;
        for (std::size_t j = 0; j < xi.size(); ++j) s += (xi[j] - xk[j]) * (xi[j] - xk[j]);
        if (s < 0.5) return 0.1;
        if (s < 1.0) return 1.0;
        return 0.0;
    };
    b.mu0 = Box::cube(2, 0.0, 5.0);
    b.default_basis = BasisFamily::piecewise_polynomial;
    b.default_degree = 0;
    return b;
}

inline BenchmarkSpec build_PL() {
    BenchmarkSpec b;
    b.name = "PL";
    b.dprime = 1;
    b.true_B.rows = detail::squared_distance_row();
    b.true_B.provenance = Provenance::oracle;
    b.true_phi = [](std::span<const double> xi) { return std::sqrt(std::max(0.0, detail::two_sqrt3 * xi[0])) - 1.0; };
    b.closed_form = [](std::span<const double> xi, std::span<const double> xk) { return detail::distance(xi, xk) - 1.0; };
    b.mu0 = Box::cube(2, 0.0, 1.0);
    return b;
}

inline BenchmarkSpec build_PLwDC(std::vector<double> v0 = {1.0, 0.0}) {
    if (v0.size() != 2) throw ConfigError("PLwDC preferred direction must be a 2-vector");
    const double norm = std::hypot(v0[0], v0[1]);
    if (std::abs(norm - 1.0) > 1e-12) throw ConfigError("PLwDC preferred direction must have unit norm");
    BenchmarkSpec b;
    b.name = "PLwDC";
    b.dprime = 2;
    b.v0 = v0;
    b.true_B.rows = Eigen::MatrixXd::Zero(2, static_cast<Eigen::Index>(feature_dim(2)));
    b.true_B.rows.row(0) = detail::squared_distance_row();
    const double s = 1.0 / std::numbers::sqrt2;
    b.true_B.rows(1, 0) = -v0[0] * s;
    b.true_B.rows(1, 1) = -v0[1] * s;
    b.true_B.rows(1, 2) = v0[0] * s;
    b.true_B.rows(1, 3) = v0[1] * s;
    b.true_B.provenance = Provenance::oracle;
    b.true_phi = [](std::span<const double> xi) {
        const double radial = std::sqrt(std::max(0.0, detail::two_sqrt3 * xi[0])) - 1.0;
        return radial * std::exp(2.0 / std::numbers::pi * std::atan(std::numbers::sqrt2 * xi[1]));
    };
    b.closed_form = [v0](std::span<const double> xi, std::span<const double> xk) {
        const double dir = ((xk[0] - xi[0]) * v0[0] + (xk[1] - xi[1]) * v0[1]);
        return (detail::distance(xi, xk) - 1.0) * std::exp(2.0 / std::numbers::pi * std::atan(dir));
    };
    b.mu0 = Box::cube(2, 0.0, 1.0);
    return b;
}

inline BenchmarkSpec build_benchmark(const std::string& name, std::vector<double> v0 = {1.0, 0.0}) {
    std::string key;
    for (char c : name) key += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (key == "od") return build_OD();
    if (key == "pl") return build_PL();
    if (key == "plwdc") return build_PLwDC(std::move(v0));
    throw ConfigError("unknown system '" + name + "' (expected od, pl or plwdc)");
}

}  // namespace kernelscope
