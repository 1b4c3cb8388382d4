#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seme/model_bundle.hpp"
#include "seme/numerics.hpp"
#include "seme/pseudoinverse.hpp"

namespace seme {

// One latent-space vector per vocabulary label: row i is s_i = e_i . W+,
// i.e. the rows of the LM-head pseudoinverse.
struct SemanticBasisSet {
    MatrixF bases; // v x d
    std::string source_head_fingerprint;
    std::vector<double> norms; // cached per-row Euclidean norms

    std::size_t vocab_size() const { return bases.rows; }
    std::size_t latent_dim() const { return bases.cols; }

    std::size_t zero_norm_rows() const {
        std::size_t n = 0;
        for (double x : norms)
            if (x == 0.0) ++n;
        return n;
    }
};

enum class ProbabilityMode { cosine_softmax, logit_softmax };

inline const char* to_string(ProbabilityMode m) {
    return m == ProbabilityMode::cosine_softmax ? "cosine-softmax" : "logit-softmax";
}

struct ProbabilityVector {
    std::vector<double> probs;
    ProbabilityMode mode = ProbabilityMode::cosine_softmax;
};

inline std::string head_fingerprint(const MatrixF& W) {
    std::uint64_t h = fnv1a64(&W.rows, sizeof(W.rows));
    h = fnv1a64(&W.cols, sizeof(W.cols), h);
    h = fnv1a64(W.data.data(), W.data.size() * sizeof(float), h);
    return to_hex(h);
}

inline SemanticBasisSet make_basis_set(MatrixF bases, std::string fingerprint = {}) {
    SemanticBasisSet set;
    set.bases = std::move(bases);
    set.source_head_fingerprint = std::move(fingerprint);
    set.norms.resize(set.bases.rows);
    for (std::size_t i = 0; i < set.bases.rows; ++i) set.norms[i] = norm(set.bases.row(i));
    return set;
}

inline SemanticBasisSet semantic_bases(const MatrixF& head, const PseudoinverseConfig& cfg = {},
                                       PseudoinverseDiagnostics* diag = nullptr) {
    return make_basis_set(pseudoinverse(head, cfg, diag), head_fingerprint(head));
}

inline SemanticBasisSet semantic_bases(const ModelBundle& bundle, const PseudoinverseConfig& cfg = {},
                                       PseudoinverseDiagnostics* diag = nullptr) {
    return semantic_bases(head_matrix(bundle), cfg, diag);
}

// softmax(cos(r, s_i) / temperature); zero-norm basis rows are excluded and
// get probability zero.
inline ProbabilityVector semantic_probabilities(std::span<const float> r, const SemanticBasisSet& bases,
                                                double temperature = 1.0) {
    if (temperature <= 0.0) throw Error("semantic_probabilities: temperature must be positive");
    if (r.size() != bases.latent_dim()) throw Error("semantic_probabilities: dimension mismatch");
    const double rn = norm(r);
    if (rn == 0.0) throw Error("semantic_probabilities: zero representation");

    const std::size_t v = bases.vocab_size();
    std::vector<double> logits;
    std::vector<std::size_t> live;
    logits.reserve(v);
    live.reserve(v);
    for (std::size_t i = 0; i < v; ++i) {
        if (bases.norms[i] == 0.0) continue;
        logits.push_back(dot(r, bases.bases.row(i)) / (rn * bases.norms[i]) / temperature);
        live.push_back(i);
    }
    if (live.empty()) throw Error("semantic_probabilities: all basis rows have zero norm");

    const std::vector<double> sm = softmax(logits);
    ProbabilityVector out;
    out.mode = ProbabilityMode::cosine_softmax;
    out.probs.assign(v, 0.0);
    for (std::size_t k = 0; k < live.size(); ++k) out.probs[live[k]] = sm[k];
    return out;
}

// Reference mode: softmax(r . W / temperature) on the raw logits. Reports
// compare this with the cosine route; agreement is reported, never asserted.
inline ProbabilityVector logit_probabilities(std::span<const float> r, const MatrixF& head,
                                             double temperature = 1.0) {
    if (temperature <= 0.0) throw Error("logit_probabilities: temperature must be positive");
    if (r.size() != head.rows) throw Error("logit_probabilities: dimension mismatch");
    std::vector<double> logits(head.cols, 0.0);
    for (std::size_t j = 0; j < head.cols; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < head.rows; ++i) acc += static_cast<double>(r[i]) * head.at(i, j);
        logits[j] = acc / temperature;
    }
    ProbabilityVector out;
    out.mode = ProbabilityMode::logit_softmax;
    out.probs = softmax(logits);
    return out;
}

// argmax over cos(r, s_i); ties break to the lowest index.
inline std::size_t nearest_basis(std::span<const float> r, const SemanticBasisSet& bases) {
    if (r.size() != bases.latent_dim()) throw Error("nearest_basis: dimension mismatch");
    const double rn = norm(r);
    if (rn == 0.0) throw Error("nearest_basis: zero representation");
    double best = -2.0;
    std::size_t best_i = 0;
    bool found = false;
    for (std::size_t i = 0; i < bases.vocab_size(); ++i) {
        if (bases.norms[i] == 0.0) continue;
        const double c = dot(r, bases.bases.row(i)) / (rn * bases.norms[i]);
        if (!found || c > best) {
            best = c;
            best_i = i;
            found = true;
        }
    }
    if (!found) throw Error("nearest_basis: all basis rows have zero norm");
    return best_i;
}

// Basis sets persist as archives: tensor "bases" (v x d) plus provenance keys.
inline TensorArchive basis_to_archive(const SemanticBasisSet& set, double rcond) {
    TensorArchive archive;
    Tensor t;
    t.name = "bases";
    t.shape = {set.bases.rows, set.bases.cols};
    t.data = set.bases.data;
    archive.add(std::move(t));
    archive.metadata["source_fingerprint"] = set.source_head_fingerprint;
    archive.metadata["rcond"] = std::to_string(rcond);
    return archive;
}

inline SemanticBasisSet basis_from_archive(const TensorArchive& archive) {
    const Tensor* t = archive.find("bases");
    if (!t || t->shape.size() != 2) throw Error("archive does not contain a 2-D 'bases' tensor");
    MatrixF m(t->shape[0], t->shape[1]);
    m.data = t->data;
    std::string fp;
    if (auto it = archive.metadata.find("source_fingerprint"); it != archive.metadata.end()) fp = it->second;
    return make_basis_set(std::move(m), std::move(fp));
}

} // namespace seme
