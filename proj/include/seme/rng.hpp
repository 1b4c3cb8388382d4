#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "seme/numerics.hpp"

namespace seme {

// Box-Muller instead of std::normal_distribution so draws are identical
// across standard library implementations.
inline double standard_normal(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double u1 = unit(rng);
    while (u1 <= 0.0) u1 = unit(rng);
    const double u2 = unit(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

inline std::vector<float> gaussian_vector(std::size_t n, std::mt19937_64& rng) {
    std::vector<float> v(n);
    for (float& x : v) x = static_cast<float>(standard_normal(rng));
    return v;
}

inline MatrixF gaussian_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    MatrixF m(rows, cols);
    for (float& x : m.data) x = static_cast<float>(standard_normal(rng));
    return m;
}

} // namespace seme
