#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <ranges>
#include <span>
#include <type_traits>
#include <vector>

#include "seme/error.hpp"

namespace seme {

// Dense row-major matrix over a flat buffer. Latent vectors and bases are
// float (the on-disk dtype); probability rows are double.
template <typename T>
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, T init = T{}) : rows(r), cols(c), data(r * c, init) {}

    T& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    const T& at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::span<T> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const T> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

    bool empty() const { return data.empty(); }
};

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

template <typename R>
concept NumericRange = std::ranges::contiguous_range<R> &&
                       std::is_arithmetic_v<std::remove_cvref_t<std::ranges::range_value_t<R>>>;

// All reductions accumulate in double regardless of element type.

template <NumericRange A, NumericRange B>
inline double dot(const A& a, const B& b) {
    if (std::ranges::size(a) != std::ranges::size(b)) throw Error("dot: dimension mismatch");
    const auto* pa = std::ranges::data(a);
    const auto* pb = std::ranges::data(b);
    double acc = 0.0;
    for (std::size_t i = 0; i < std::ranges::size(a); ++i)
        acc += static_cast<double>(pa[i]) * static_cast<double>(pb[i]);
    return acc;
}

template <NumericRange A>
inline double norm(const A& a) {
    return std::sqrt(dot(a, a));
}

template <NumericRange A>
inline bool all_finite(const A& a) {
    for (const auto& x : a)
        if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
}

// Cosine similarity; both vectors must be nonzero.
template <NumericRange A, NumericRange B>
inline double cosine(const A& a, const B& b) {
    const double na = norm(a), nb = norm(b);
    if (na == 0.0 || nb == 0.0) throw Error("cosine: zero-norm vector");
    return dot(a, b) / (na * nb);
}

// Max-shifted softmax over the given logits.
template <NumericRange A>
inline std::vector<double> softmax(const A& logits) {
    std::vector<double> out(std::ranges::size(logits));
    double mx = -std::numeric_limits<double>::infinity();
    for (const auto& x : logits) mx = std::max(mx, static_cast<double>(x));
    const auto* p = std::ranges::data(logits);
    double sum = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::exp(static_cast<double>(p[i]) - mx);
        sum += out[i];
    }
    for (double& x : out) x /= sum;
    return out;
}

// KL(p || q). Terms with p_i == 0 contribute nothing.
template <NumericRange A, NumericRange B>
inline double kl_divergence(const A& p, const B& q) {
    if (std::ranges::size(p) != std::ranges::size(q)) throw Error("kl_divergence: size mismatch");
    const auto* pp = std::ranges::data(p);
    const auto* pq = std::ranges::data(q);
    double acc = 0.0;
    for (std::size_t i = 0; i < std::ranges::size(p); ++i) {
        if (pp[i] <= 0.0) continue;
        if (pq[i] <= 0.0) return std::numeric_limits<double>::infinity();
        acc += pp[i] * std::log(pp[i] / pq[i]);
    }
    return acc;
}

template <typename T>
inline std::span<const T> as_span(const std::vector<T>& v) {
    return {v.data(), v.size()};
}

} // namespace seme
