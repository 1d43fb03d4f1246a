#pragma once

// Finite-dimensional hypothesis spaces on an axis-aligned box: discontinuous
// piecewise polynomials (Legendre on each cell) or clamped B-splines, with
// tensor products for more than one reduced variable. Every basis function
// vanishes outside the box.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "kernelscope/errors.hpp"

namespace kernelscope {

enum class BasisFamily { piecewise_polynomial, clamped_bspline };

inline const char* to_string(BasisFamily f) {
    return f == BasisFamily::piecewise_polynomial ? "piecewise_polynomial" : "clamped_bspline";
}

inline BasisFamily basis_family_from_string(const std::string& s) {
    if (s == "piecewise_polynomial" || s == "pp" || s == "piecewise") return BasisFamily::piecewise_polynomial;
    if (s == "clamped_bspline" || s == "bspline") return BasisFamily::clamped_bspline;
    throw ConfigError("unknown basis family '" + s + "'");
}

/// Nonzero basis values at a point.
struct BasisValues {
    static constexpr std::size_t capacity = 64;
    std::array<std::size_t, capacity> index;
    std::array<double, capacity> value;
    std::size_t count = 0;
};

struct HypothesisSpace {
    BasisFamily family = BasisFamily::clamped_bspline;
    int degree = 1;
    std::vector<double> lower;
    std::vector<double> upper;
    /// Uniform cells per dimension.
    std::vector<std::size_t> intervals;

    std::size_t dim() const { return intervals.size(); }

    std::size_t functions_in_dim(std::size_t k) const {
        const auto p = static_cast<std::size_t>(degree);
        return family == BasisFamily::piecewise_polynomial ? intervals[k] * (p + 1) : intervals[k] + p;
    }

    std::size_t n_total() const {
        std::size_t n = 1;
        for (std::size_t k = 0; k < dim(); ++k) n *= functions_in_dim(k);
        return n;
    }

    void validate() const {
        if (degree < 0 || degree > 7) throw ConfigError("basis degree must lie in [0, 7]");
        if (intervals.empty() || intervals.size() > 8)
            throw ConfigError("hypothesis space needs between one and eight dimensions");
        if (lower.size() != dim() || upper.size() != dim()) throw ConfigError("support box does not match dimension");
        std::size_t per_point = 1;
        for (std::size_t k = 0; k < dim(); ++k) {
            if (intervals[k] < 1) throw ConfigError("each dimension needs at least one cell");
            if (!(upper[k] > lower[k])) throw ConfigError("support box must have positive width");
            per_point *= static_cast<std::size_t>(degree) + 1;
        }
        if (per_point > BasisValues::capacity) throw ConfigError("degree too high for this many reduced variables");
    }

    /// Space with (about) `per_dim` functions per dimension on the given box.
    static HypothesisSpace with_functions_per_dim(BasisFamily family, int degree, std::vector<double> lower,
                                                  std::vector<double> upper, std::size_t per_dim) {
        HypothesisSpace s;
        s.family = family;
        s.degree = degree;
        s.lower = std::move(lower);
        s.upper = std::move(upper);
        const auto p = static_cast<std::size_t>(std::max(degree, 0));
        std::size_t cells = 1;
        if (family == BasisFamily::piecewise_polynomial)
            cells = std::max<std::size_t>(1, (per_dim + p / 2) / (p + 1));
        else
            cells = per_dim > p ? per_dim - p : 1;
        s.intervals.assign(s.lower.size(), cells);
        s.validate();
        return s;
    }

    bool contains(std::span<const double> t) const {
        for (std::size_t k = 0; k < dim(); ++k)
            if (!(t[k] >= lower[k] && t[k] <= upper[k])) return false;
        return true;
    }

    /// Writes the nonzero basis values at t; count is 0 outside the box.
    void evaluate(std::span<const double> t, BasisValues& out) const {
        out.count = 0;
        if (!contains(t)) return;
        const std::size_t width = static_cast<std::size_t>(degree) + 1;
        if (dim() == 1) {
            std::array<double, 8> v;
            const std::size_t first = evaluate_1d(0, t[0], v);
            for (std::size_t q = 0; q < width; ++q) {
                out.index[q] = first + q;
                out.value[q] = v[q];
            }
            out.count = width;
            return;
        }
        std::array<std::size_t, 8> first;
        std::array<std::array<double, 8>, 8> vals;
        for (std::size_t k = 0; k < dim(); ++k) first[k] = evaluate_1d(k, t[k], vals[k]);

        // Tensor product over dimensions, dimension 0 most significant.
        std::array<std::size_t, 8> digit;
        const std::size_t total = ipow(width, dim());
        for (std::size_t c = 0; c < total; ++c) {
            std::size_t rem = c;
            for (std::size_t k = dim(); k-- > 0;) {
                digit[k] = rem % width;
                rem /= width;
            }
            std::size_t flat = 0;
            double v = 1.0;
            for (std::size_t k = 0; k < dim(); ++k) {
                flat = flat * functions_in_dim(k) + first[k] + digit[k];
                v *= vals[k][digit[k]];
            }
            out.index[out.count] = flat;
            out.value[out.count] = v;
            ++out.count;
        }
    }

    double evaluate_function(std::span<const double> coefficients, std::span<const double> t) const {
        BasisValues bv;
        evaluate(t, bv);
        double acc = 0.0;
        for (std::size_t q = 0; q < bv.count; ++q) acc += coefficients[bv.index[q]] * bv.value[q];
        return acc;
    }

private:
    static std::size_t ipow(std::size_t b, std::size_t e) {
        std::size_t r = 1;
        while (e-- > 0) r *= b;
        return r;
    }

    /// degree+1 values of the functions starting at the returned index.
    std::size_t evaluate_1d(std::size_t k, double t, std::array<double, 8>& vals) const {
        const std::size_t cells = intervals[k];
        const double s = (t - lower[k]) / (upper[k] - lower[k]) * static_cast<double>(cells);
        std::size_t cell = s <= 0.0 ? 0 : static_cast<std::size_t>(s);
        if (cell >= cells) cell = cells - 1;
        const auto p = static_cast<std::size_t>(degree);
        if (family == BasisFamily::piecewise_polynomial) {
            const double x = 2.0 * (s - static_cast<double>(cell)) - 1.0;
            vals[0] = 1.0;
            if (p >= 1) vals[1] = x;
            for (std::size_t n = 2; n <= p; ++n)
                vals[n] = ((2.0 * n - 1.0) * x * vals[n - 1] - (n - 1.0) * vals[n - 2]) / static_cast<double>(n);
            return cell * (p + 1);
        }
        // Clamped knots in cell units: p+1 copies of 0, 1..cells-1, p+1 copies of cells.
        const auto knot = [&](std::ptrdiff_t i) -> double {
            const std::ptrdiff_t c = i - static_cast<std::ptrdiff_t>(p);
            if (c <= 0) return 0.0;
            if (c >= static_cast<std::ptrdiff_t>(cells)) return static_cast<double>(cells);
            return static_cast<double>(c);
        };
        const std::ptrdiff_t span = static_cast<std::ptrdiff_t>(cell + p);
        std::array<double, 8> left, right;
        vals[0] = 1.0;
        for (std::size_t j = 1; j <= p; ++j) {
            left[j] = s - knot(span + 1 - static_cast<std::ptrdiff_t>(j));
            right[j] = knot(span + static_cast<std::ptrdiff_t>(j)) - s;
            double saved = 0.0;
            for (std::size_t r = 0; r < j; ++r) {
                const double temp = vals[r] / (right[r + 1] + left[j - r]);
                vals[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            vals[j] = saved;
        }
        return cell;
    }
};

}  // namespace kernelscope
