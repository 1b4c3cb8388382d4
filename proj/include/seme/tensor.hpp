#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "seme/error.hpp"
#include "seme/fingerprint.hpp"

namespace seme {

// Named dense f32 tensor, row-major. The only dtype in the toolkit;
// checkpoints in other precisions are converted on ingest.
struct Tensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<float> data;

    std::size_t element_count() const {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return n;
    }
};

inline void validate_tensor(const Tensor& t) {
    if (t.name.empty()) throw Error("tensor has empty name");
    for (std::size_t d : t.shape)
        if (d == 0) throw Error("tensor '" + t.name + "' has a zero dimension");
    if (t.element_count() != t.data.size())
        throw Error("tensor '" + t.name + "': shape/data size mismatch");
    for (float x : t.data)
        if (!std::isfinite(x)) throw Error("tensor '" + t.name + "' contains non-finite values");
}

inline std::string tensor_fingerprint(const Tensor& t) {
    std::uint64_t h = fnv1a64(t.name.data(), t.name.size());
    for (std::size_t d : t.shape) h = fnv1a64(&d, sizeof(d), h);
    h = fnv1a64(t.data.data(), t.data.size() * sizeof(float), h);
    return to_hex(h);
}

// Ordered tensor collection plus string metadata; the unit of persistence.
struct TensorArchive {
    std::vector<Tensor> tensors;
    std::map<std::string, std::string> metadata;

    const Tensor* find(const std::string& name) const {
        for (const Tensor& t : tensors)
            if (t.name == name) return &t;
        return nullptr;
    }

    void add(Tensor t) {
        if (find(t.name)) throw Error("duplicate tensor name '" + t.name + "'");
        tensors.push_back(std::move(t));
    }
};

inline void validate_archive(const TensorArchive& a) {
    std::set<std::string> names;
    for (const Tensor& t : a.tensors) {
        validate_tensor(t);
        if (!names.insert(t.name).second) throw Error("duplicate tensor name '" + t.name + "'");
    }
}

} // namespace seme
