#pragma once

// Quadratic pair features and the two-agent regression reduction.
//
// Layout of y(x_i, x_{i'}) for state dimension d (D = 2d^2 + 3d):
//   [ x_i (d) | x_{i'} (d) | (x_i)_j (x_i)_{j'}, j <= j' (d(d+1)/2, lexicographic)
//   | (x_{i'})_j (x_{i'})_{j'}, j <= j' | (x_i)_j (x_{i'})_{j'}, all j, j' (d^2, row-major) ]

#include <cmath>
#include <span>
#include <vector>

#include "kernelscope/dynamics.hpp"
#include "kernelscope/errors.hpp"

namespace kernelscope {

constexpr std::size_t feature_dim(std::size_t d) { return 2 * d * d + 3 * d; }

/// Pairs closer than this are skipped when extracting regression samples.
inline constexpr double pair_tolerance = 1e-8;

inline void feature_map_into(std::span<const double> xi, std::span<const double> xk, std::span<double> out) {
    const std::size_t d = xi.size();
    std::size_t q = 0;
    for (std::size_t j = 0; j < d; ++j) out[q++] = xi[j];
    for (std::size_t j = 0; j < d; ++j) out[q++] = xk[j];
    for (std::size_t j = 0; j < d; ++j)
        for (std::size_t jj = j; jj < d; ++jj) out[q++] = xi[j] * xi[jj];
    for (std::size_t j = 0; j < d; ++j)
        for (std::size_t jj = j; jj < d; ++jj) out[q++] = xk[j] * xk[jj];
    for (std::size_t j = 0; j < d; ++j)
        for (std::size_t jj = 0; jj < d; ++jj) out[q++] = xi[j] * xk[jj];
}

inline std::vector<double> feature_map(std::span<const double> xi, std::span<const double> xk) {
    if (xi.size() != xk.size()) throw UsageError("feature_map: agent states differ in dimension");
    std::vector<double> y(feature_dim(xi.size()));
    feature_map_into(xi, xk, y);
    return y;
}

/// Index permutation `p` with feature_map(b, a)[q] == feature_map(a, b)[p[q]].
inline std::vector<std::size_t> swap_permutation(std::size_t d) {
    const std::size_t tri = d * (d + 1) / 2;
    std::vector<std::size_t> p(feature_dim(d));
    std::size_t q = 0;
    for (std::size_t j = 0; j < d; ++j) p[q++] = d + j;
    for (std::size_t j = 0; j < d; ++j) p[q++] = j;
    for (std::size_t t = 0; t < tri; ++t) p[q++] = 2 * d + tri + t;
    for (std::size_t t = 0; t < tri; ++t) p[q++] = 2 * d + t;
    const std::size_t cross = 2 * d + 2 * tri;
    for (std::size_t j = 0; j < d; ++j)
        for (std::size_t jj = 0; jj < d; ++jj) p[q++] = cross + jj * d + j;
    return p;
}

/// Regression samples (y_q, z_q) in row-major storage, plus the pair distance
/// |x_{i'} - x_i| of each sample.
struct SampleSet {
    std::size_t D = 0;
    std::vector<double> y;  // Q x D
    std::vector<double> z;
    std::vector<double> weight_basis;

    std::size_t size() const { return z.size(); }
    std::span<const double> features(std::size_t q) const { return {y.data() + q * D, D}; }

    void push_back(std::span<const double> yq, double zq, double w) {
        y.insert(y.end(), yq.begin(), yq.end());
        z.push_back(zq);
        weight_basis.push_back(w);
    }
};

/// Recasts a two-agent dataset as kernel-value regression: for each (m, l)
/// and ordered pair (i, i'),  z = 2 <v_i, x_{i'} - x_i> / |x_{i'} - x_i|^2.
inline SampleSet extract_regression_samples(const TrajectorySet& data) {
    if (data.N != 2) throw UsageError("regression samples need a two-agent dataset (N = 2)");
    const std::size_t d = data.d;
    SampleSet out;
    out.D = feature_dim(d);
    out.y.reserve(2 * data.M * data.L * out.D);
    out.z.reserve(2 * data.M * data.L);
    out.weight_basis.reserve(2 * data.M * data.L);
    std::vector<double> y(out.D);
    for (std::size_t m = 0; m < data.M; ++m) {
        for (std::size_t l = 0; l < data.L; ++l) {
            for (std::size_t i = 0; i < 2; ++i) {
                const std::size_t k = 1 - i;
                const auto xi = data.agent(m, l, i);
                const auto xk = data.agent(m, l, k);
                const auto vi = data.agent_velocity(m, l, i);
                double dist2 = 0.0, proj = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double diff = xk[j] - xi[j];
                    dist2 += diff * diff;
                    proj += vi[j] * diff;
                }
                const double dist = std::sqrt(dist2);
                if (!(dist > pair_tolerance)) continue;
                feature_map_into(xi, xk, y);
                out.push_back(y, 2.0 * proj / dist2, dist);
            }
        }
    }
    return out;
}

/// Samples whose kernel value is nonzero.
inline SampleSet interacting_subset(const SampleSet& samples) {
    SampleSet out;
    out.D = samples.D;
    for (std::size_t q = 0; q < samples.size(); ++q) {
        if (samples.z[q] != 0.0) out.push_back(samples.features(q), samples.z[q], samples.weight_basis[q]);
    }
    return out;
}

}  // namespace kernelscope
