#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "kernelscope/benchmarks.hpp"
#include "kernelscope/dynamics.hpp"

namespace kstest {

inline kernelscope::PairKernel constant_kernel(double c) {
    return [c](std::span<const double>, std::span<const double>) { return c; };
}

inline kernelscope::SystemSpec constant_system(double c, std::size_t N, std::uint64_t seed) {
    kernelscope::SystemSpec s;
    s.name = "constant";
    s.N = N;
    s.d = 2;
    s.T = 1.0;
    s.L = 5;
    s.kernel = constant_kernel(c);
    s.init_box = kernelscope::Box::cube(2, 0.0, 1.0);
    s.seed = seed;
    return s;
}

inline double rel_diff(double a, double b) {
    const double scale = std::max(std::abs(a), std::abs(b));
    return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

}  // namespace kstest
