#pragma once

#include <algorithm>
#include <charconv>
#include <map>
#include <string>
#include <vector>

#include "seme/numerics.hpp"
#include "seme/tensor.hpp"

namespace seme {

// Checkpoint naming convention: layer tensors are "<layer_prefix><index>.<key>",
// the LM-head tensor is head_name. The convention is this artifact's; source
// checkpoints are renamed on conversion.
struct SchemaDescriptor {
    std::string layer_prefix = "layers.";
    std::string head_name = "head";
    std::string orientation_key = "head_orientation"; // "latent_major" (d x v) | "vocab_major" (v x d)
};

// Ordered layer parameter groups plus the LM-head, canonically d x v so that
// logits = r . W.
struct ModelBundle {
    std::vector<std::map<std::string, Tensor>> layers;
    Tensor lm_head;
    std::size_t vocab_size = 0;
    std::size_t latent_dim = 0;
    std::map<std::string, std::string> metadata;
    std::vector<std::string> warnings;

    std::string model_id() const {
        auto it = metadata.find("model_id");
        return it != metadata.end() ? it->second : std::string{};
    }
};

inline MatrixF head_matrix(const ModelBundle& bundle) {
    MatrixF W(bundle.latent_dim, bundle.vocab_size);
    W.data = bundle.lm_head.data;
    return W;
}

namespace detail {

inline bool parse_layer_name(const std::string& name, const SchemaDescriptor& schema,
                             std::size_t& index, std::string& key) {
    if (name.rfind(schema.layer_prefix, 0) != 0) return false;
    const std::size_t dot = name.find('.', schema.layer_prefix.size());
    if (dot == std::string::npos || dot + 1 >= name.size()) return false;
    const char* first = name.data() + schema.layer_prefix.size();
    const char* last = name.data() + dot;
    std::size_t idx = 0;
    const auto [ptr, ec] = std::from_chars(first, last, idx);
    if (ec != std::errc{} || ptr != last) return false;
    index = idx;
    key = name.substr(dot + 1);
    return true;
}

inline Tensor transpose_2d(const Tensor& t) {
    Tensor out;
    out.name = t.name;
    out.shape = {t.shape[1], t.shape[0]};
    out.data.resize(t.data.size());
    for (std::size_t i = 0; i < t.shape[0]; ++i)
        for (std::size_t j = 0; j < t.shape[1]; ++j)
            out.data[j * t.shape[0] + i] = t.data[i * t.shape[1] + j];
    return out;
}

} // namespace detail

// Extracts the LM-head in canonical d x v orientation. Resolution order:
// explicit orientation tag, then vocab_size metadata, then the
// larger-dimension-is-vocab heuristic; square heads without a tag are
// ambiguous and rejected.
inline Tensor load_head(const TensorArchive& archive, const SchemaDescriptor& schema,
                        bool* transposed_on_load = nullptr) {
    const Tensor* head = archive.find(schema.head_name);
    if (!head) throw Error("missing LM-head tensor '" + schema.head_name + "'");
    if (head->shape.size() != 2) throw Error("LM-head tensor must be 2-D");

    bool vocab_major = false;
    bool resolved = false;
    if (auto it = archive.metadata.find(schema.orientation_key); it != archive.metadata.end()) {
        if (it->second == "vocab_major") vocab_major = true;
        else if (it->second == "latent_major") vocab_major = false;
        else throw Error("unknown head orientation tag '" + it->second + "'");
        resolved = true;
    } else if (auto vs = archive.metadata.find("vocab_size"); vs != archive.metadata.end()) {
        std::size_t v = 0;
        const auto [ptr, ec] = std::from_chars(vs->second.data(), vs->second.data() + vs->second.size(), v);
        if (ec != std::errc{} || ptr != vs->second.data() + vs->second.size())
            throw Error("vocab_size metadata is not an integer: '" + vs->second + "'");
        if (head->shape[0] == v && head->shape[1] != v) vocab_major = true;
        else if (head->shape[1] == v && head->shape[0] != v) vocab_major = false;
        else if (head->shape[0] == head->shape[1] && head->shape[0] == v)
            throw Error("ambiguous LM-head orientation: square head and no orientation tag");
        else throw Error("vocab_size metadata does not match any LM-head dimension");
        resolved = true;
    }
    if (!resolved) {
        if (head->shape[0] == head->shape[1])
            throw Error("ambiguous LM-head orientation: square head and no orientation tag");
        vocab_major = head->shape[0] > head->shape[1];
    }

    if (transposed_on_load) *transposed_on_load = vocab_major;
    return vocab_major ? detail::transpose_2d(*head) : *head;
}

inline ModelBundle load_model_bundle(const TensorArchive& archive, const SchemaDescriptor& schema = {}) {
    ModelBundle bundle;
    bundle.metadata = archive.metadata;

    bool transposed = false;
    bundle.lm_head = load_head(archive, schema, &transposed);
    if (transposed) bundle.metadata["head_transposed_on_load"] = "true";
    bundle.latent_dim = bundle.lm_head.shape[0];
    bundle.vocab_size = bundle.lm_head.shape[1];

    std::map<std::size_t, std::map<std::string, Tensor>> groups;
    for (const Tensor& t : archive.tensors) {
        if (t.name == schema.head_name) continue;
        std::size_t index = 0;
        std::string key;
        if (!detail::parse_layer_name(t.name, schema, index, key))
            throw Error("tensor '" + t.name + "' does not match the layer naming schema");
        groups[index].emplace(key, t);
    }
    if (groups.empty()) throw Error("bundle has no layer parameter groups");

    std::size_t expected = 0;
    for (const auto& [index, group] : groups) {
        if (index != expected)
            throw Error("layer indices are not contiguous (missing layer " + std::to_string(expected) + ")");
        ++expected;
        bundle.layers.push_back(group);
    }

    // Schema closure: every group exposes the same names and shapes.
    const auto& first = bundle.layers.front();
    for (std::size_t i = 1; i < bundle.layers.size(); ++i) {
        const auto& group = bundle.layers[i];
        if (group.size() != first.size())
            throw Error("ragged layer schemas: layer " + std::to_string(i) + " has a different tensor set");
        for (const auto& [key, t] : first) {
            auto it = group.find(key);
            if (it == group.end())
                throw Error("ragged layer schemas: layer " + std::to_string(i) + " is missing '" + key + "'");
            if (it->second.shape != t.shape)
                throw Error("ragged layer schemas: shape of '" + key + "' differs at layer " + std::to_string(i));
        }
    }

    if (bundle.vocab_size < bundle.latent_dim)
        bundle.warnings.push_back("vocab_size < latent_dim: semantic basis uniqueness degrades");
    return bundle;
}

inline void validate_bundle(const ModelBundle& bundle) {
    if (bundle.layers.empty()) throw Error("bundle has no layers");
    if (bundle.lm_head.shape.size() != 2 || bundle.lm_head.shape[0] != bundle.latent_dim ||
        bundle.lm_head.shape[1] != bundle.vocab_size)
        throw Error("lm_head shape does not match [latent_dim, vocab_size]");
    validate_tensor(bundle.lm_head);
    for (const auto& group : bundle.layers)
        for (const auto& [key, t] : group) validate_tensor(t);
}

// Flat name -> tensor view in deterministic (sorted-name) order; the merge
// pipeline operates on this view.
inline std::vector<std::pair<std::string, const Tensor*>> named_parameters(const ModelBundle& bundle,
                                                                           const SchemaDescriptor& schema = {}) {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (std::size_t i = 0; i < bundle.layers.size(); ++i)
        for (const auto& [key, t] : bundle.layers[i])
            out.emplace_back(schema.layer_prefix + std::to_string(i) + "." + key, &t);
    out.emplace_back(schema.head_name, &bundle.lm_head);
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    return out;
}

inline TensorArchive bundle_to_archive(const ModelBundle& bundle, const SchemaDescriptor& schema = {}) {
    TensorArchive archive;
    archive.metadata = bundle.metadata;
    archive.metadata[schema.orientation_key] = "latent_major";
    archive.metadata["vocab_size"] = std::to_string(bundle.vocab_size);
    archive.metadata["latent_dim"] = std::to_string(bundle.latent_dim);
    for (std::size_t i = 0; i < bundle.layers.size(); ++i) {
        for (const auto& [key, t] : bundle.layers[i]) {
            Tensor named = t;
            named.name = schema.layer_prefix + std::to_string(i) + "." + key;
            archive.add(std::move(named));
        }
    }
    Tensor head = bundle.lm_head;
    head.name = schema.head_name;
    archive.add(std::move(head));
    return archive;
}

} // namespace seme
