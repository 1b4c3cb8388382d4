#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "seme/model_bundle.hpp"

namespace seme {

// Per-model difference against the pivot, tensor by tensor.
struct FusionVector {
    std::string source_model_id;
    std::map<std::string, Tensor> deltas; // flat name -> delta tensor
};

struct SelectionMask {
    double tau = 100.0; // retained fraction, percent
    std::map<std::string, std::vector<std::uint8_t>> masks;
};

enum class CoefficientNormalization { sum_to_one, mean_one, raw };
enum class ErasePolicy { majority_sign, off };
enum class TiePolicy { drop_all, keep_larger_magnitude_side };

inline const char* to_string(CoefficientNormalization n) {
    switch (n) {
        case CoefficientNormalization::sum_to_one: return "sum_to_one";
        case CoefficientNormalization::mean_one: return "mean_one";
        default: return "raw";
    }
}

inline const char* to_string(ErasePolicy e) {
    return e == ErasePolicy::majority_sign ? "majority_sign" : "off";
}

inline const char* to_string(TiePolicy t) {
    return t == TiePolicy::drop_all ? "drop_all" : "keep_larger_magnitude_side";
}

struct MergeCoefficients {
    std::vector<double> etas; // aligned with the input fusion-vector list
    CoefficientNormalization normalization = CoefficientNormalization::sum_to_one;
    bool uniform_fallback = false; // all raw magnitudes were zero
};

struct MergeRecipe {
    double tau = 20.0;
    CoefficientNormalization normalization = CoefficientNormalization::sum_to_one;
    ErasePolicy erase = ErasePolicy::majority_sign;
    TiePolicy tie = TiePolicy::drop_all;
};

struct TensorMergeStats {
    std::size_t elements = 0;
    std::size_t retained = 0; // selected elements
    std::size_t erased = 0;   // entries zeroed by sign conflicts (across models)
};

struct MergeReport {
    double tau = 0.0;
    std::string normalization;
    std::string erase_policy;
    std::string tie_policy;
    std::vector<std::pair<std::string, double>> etas; // model id -> eta
    std::map<std::string, TensorMergeStats> per_tensor;
    bool uniform_fallback = false;
};

namespace detail {

inline std::string fallback_model_id(std::size_t k) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "model_%03zu", k);
    return buf;
}

} // namespace detail

// delta_k = theta_k - theta_pivot, element-wise f32 subtraction. Every model
// must be schema-congruent with the pivot.
inline std::vector<FusionVector> fusion_vectors(const std::vector<ModelBundle>& models,
                                                const ModelBundle& pivot,
                                                const SchemaDescriptor& schema = {}) {
    if (models.empty()) throw Error("fusion_vectors: no models");
    const auto pivot_params = named_parameters(pivot, schema);

    std::vector<FusionVector> out;
    out.reserve(models.size());
    std::map<std::string, std::size_t> seen_ids;
    for (std::size_t k = 0; k < models.size(); ++k) {
        const auto params = named_parameters(models[k], schema);
        if (params.size() != pivot_params.size())
            throw Error("model " + std::to_string(k) + " is not schema-congruent with the pivot");
        FusionVector fv;
        fv.source_model_id = models[k].model_id().empty() ? detail::fallback_model_id(k) : models[k].model_id();
        if (auto [it, fresh] = seen_ids.emplace(fv.source_model_id, k); !fresh)
            fv.source_model_id += "#" + std::to_string(k);
        for (std::size_t p = 0; p < params.size(); ++p) {
            const auto& [name, tensor] = params[p];
            const auto& [pivot_name, pivot_tensor] = pivot_params[p];
            if (name != pivot_name || tensor->shape != pivot_tensor->shape)
                throw Error("model " + std::to_string(k) + ": tensor '" + name +
                            "' does not match the pivot schema");
            Tensor delta;
            delta.name = name;
            delta.shape = tensor->shape;
            delta.data.resize(tensor->data.size());
            for (std::size_t i = 0; i < delta.data.size(); ++i)
                delta.data[i] = tensor->data[i] - pivot_tensor->data[i];
            fv.deltas.emplace(name, std::move(delta));
        }
        out.push_back(std::move(fv));
    }
    return out;
}

// Per tensor, keep the top ceil(tau% * n) elements by population variance
// across the K deltas (absolute magnitude when K == 1). Ties at the cutoff
// break by flattened index.
inline SelectionMask select_top_variance(const std::vector<FusionVector>& deltas, double tau) {
    if (deltas.empty()) throw Error("select_top_variance: empty delta list");
    if (!(tau > 0.0 && tau <= 100.0)) throw UsageError("select_top_variance: tau must be in (0, 100]");
    const std::size_t K = deltas.size();

    SelectionMask mask;
    mask.tau = tau;
    for (const auto& [name, first] : deltas.front().deltas) {
        const std::size_t n = first.data.size();
        std::vector<double> score(n, 0.0);
        if (K == 1) {
            for (std::size_t i = 0; i < n; ++i) score[i] = std::abs(static_cast<double>(first.data[i]));
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                double mean = 0.0;
                for (const auto& fv : deltas) mean += fv.deltas.at(name).data[i];
                mean /= static_cast<double>(K);
                double var = 0.0;
                for (const auto& fv : deltas) {
                    const double dv = fv.deltas.at(name).data[i] - mean;
                    var += dv * dv;
                }
                score[i] = var / static_cast<double>(K);
            }
        }

        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (score[a] != score[b]) return score[a] > score[b];
            return a < b;
        });
        const std::size_t keep = static_cast<std::size_t>(std::ceil(tau / 100.0 * static_cast<double>(n)));
        std::vector<std::uint8_t> m(n, 0);
        for (std::size_t r = 0; r < keep && r < n; ++r) m[order[r]] = 1;
        mask.masks.emplace(name, std::move(m));
    }
    return mask;
}

// raw_k = sum of squared selected entries across the whole model (double,
// sorted tensor names, ascending element index), then normalized.
inline MergeCoefficients compute_coefficients(const std::vector<FusionVector>& deltas,
                                              const SelectionMask& mask,
                                              CoefficientNormalization normalization) {
    if (deltas.empty()) throw Error("compute_coefficients: empty delta list");
    const std::size_t K = deltas.size();
    std::vector<double> raw(K, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
        for (const auto& [name, tensor] : deltas[k].deltas) {
            const auto& m = mask.masks.at(name);
            for (std::size_t i = 0; i < tensor.data.size(); ++i)
                if (m[i]) raw[k] += static_cast<double>(tensor.data[i]) * static_cast<double>(tensor.data[i]);
        }
    }

    // Normalization sums run in sorted-model-id order so permuting the input
    // list cannot change any eta bit.
    std::vector<std::size_t> id_order(K);
    std::iota(id_order.begin(), id_order.end(), 0);
    std::sort(id_order.begin(), id_order.end(), [&](std::size_t a, std::size_t b) {
        return deltas[a].source_model_id < deltas[b].source_model_id;
    });
    double total = 0.0;
    for (std::size_t k : id_order) total += raw[k];

    MergeCoefficients coeffs;
    coeffs.normalization = normalization;
    coeffs.etas.resize(K);
    if (total == 0.0) {
        coeffs.uniform_fallback = true;
        const double value = normalization == CoefficientNormalization::sum_to_one
                                 ? 1.0 / static_cast<double>(K)
                                 : 1.0;
        std::fill(coeffs.etas.begin(), coeffs.etas.end(), value);
        return coeffs;
    }
    for (std::size_t k = 0; k < K; ++k) {
        switch (normalization) {
            case CoefficientNormalization::sum_to_one: coeffs.etas[k] = raw[k] / total; break;
            case CoefficientNormalization::mean_one: coeffs.etas[k] = raw[k] * static_cast<double>(K) / total; break;
            case CoefficientNormalization::raw: coeffs.etas[k] = raw[k]; break;
        }
    }
    return coeffs;
}

// Zeroes unselected entries everywhere; no sign filtering.
inline std::vector<FusionVector> apply_selection(const std::vector<FusionVector>& deltas,
                                                 const SelectionMask& mask) {
    std::vector<FusionVector> out = deltas;
    for (auto& fv : out)
        for (auto& [name, tensor] : fv.deltas) {
            const auto& m = mask.masks.at(name);
            for (std::size_t i = 0; i < tensor.data.size(); ++i)
                if (!m[i]) tensor.data[i] = 0.0f;
        }
    return out;
}

// Per selected element, the majority sign is sign(sum_k sign(delta_k)); zero
// entries are neutral. Minority entries are zeroed; unselected entries are
// zeroed in every delta.
inline std::vector<FusionVector> erase_sign_minority(const std::vector<FusionVector>& deltas,
                                                     const SelectionMask& mask,
                                                     TiePolicy tie_policy = TiePolicy::drop_all) {
    std::vector<FusionVector> out = apply_selection(deltas, mask);
    if (out.empty()) return out;
    const std::size_t K = out.size();

    for (const auto& [name, first] : out.front().deltas) {
        const auto& m = mask.masks.at(name);
        const std::size_t n = first.data.size();
        std::vector<Tensor*> tensors(K);
        for (std::size_t k = 0; k < K; ++k) tensors[k] = &out[k].deltas.at(name);

        for (std::size_t i = 0; i < n; ++i) {
            if (!m[i]) continue;
            int sign_sum = 0;
            for (std::size_t k = 0; k < K; ++k) {
                const float x = tensors[k]->data[i];
                sign_sum += (x > 0.0f) - (x < 0.0f);
            }
            if (sign_sum != 0) {
                const int majority = sign_sum > 0 ? 1 : -1;
                for (std::size_t k = 0; k < K; ++k) {
                    const float x = tensors[k]->data[i];
                    const int s = (x > 0.0f) - (x < 0.0f);
                    if (s != 0 && s != majority) tensors[k]->data[i] = 0.0f;
                }
            } else if (tie_policy == TiePolicy::drop_all) {
                for (std::size_t k = 0; k < K; ++k) tensors[k]->data[i] = 0.0f;
            } else {
                double pos = 0.0, neg = 0.0;
                for (std::size_t k = 0; k < K; ++k) {
                    const float x = tensors[k]->data[i];
                    if (x > 0.0f) pos += x;
                    else neg -= x;
                }
                if (pos == neg) {
                    for (std::size_t k = 0; k < K; ++k) tensors[k]->data[i] = 0.0f;
                } else {
                    const int keep = pos > neg ? 1 : -1;
                    for (std::size_t k = 0; k < K; ++k) {
                        const float x = tensors[k]->data[i];
                        const int s = (x > 0.0f) - (x < 0.0f);
                        if (s != 0 && s != keep) tensors[k]->data[i] = 0.0f;
                    }
                }
            }
        }
    }
    return out;
}

// theta_merge = theta_pivot + sum_k eta_k * delta'_k. Accumulation is per
// element in double, models visited in ascending source_model_id order, cast
// to f32 once at the end.
inline ModelBundle apply_merge(const ModelBundle& pivot, const std::vector<FusionVector>& deltas_pruned,
                               const MergeCoefficients& etas, const SchemaDescriptor& schema = {}) {
    if (deltas_pruned.size() != etas.etas.size())
        throw Error("apply_merge: coefficient count does not match delta count");

    std::vector<std::size_t> order(deltas_pruned.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return deltas_pruned[a].source_model_id < deltas_pruned[b].source_model_id;
    });

    ModelBundle merged = pivot;
    auto merged_params = [&]() {
        std::vector<std::pair<std::string, Tensor*>> out;
        for (std::size_t i = 0; i < merged.layers.size(); ++i)
            for (auto& [key, t] : merged.layers[i])
                out.emplace_back(schema.layer_prefix + std::to_string(i) + "." + key, &t);
        out.emplace_back(schema.head_name, &merged.lm_head);
        return out;
    }();

    for (auto& [name, tensor] : merged_params) {
        std::vector<std::pair<const Tensor*, double>> contribs;
        for (std::size_t k : order) {
            auto it = deltas_pruned[k].deltas.find(name);
            if (it == deltas_pruned[k].deltas.end())
                throw Error("apply_merge: delta for '" + std::string(name) + "' missing in model '" +
                            deltas_pruned[k].source_model_id + "'");
            if (it->second.shape != tensor->shape) throw Error("apply_merge: shape mismatch for '" + name + "'");
            contribs.emplace_back(&it->second, etas.etas[k]);
        }
        for (std::size_t i = 0; i < tensor->data.size(); ++i) {
            double acc = tensor->data[i];
            for (const auto& [delta, eta] : contribs) acc += eta * static_cast<double>(delta->data[i]);
            const float v = static_cast<float>(acc);
            if (!std::isfinite(v)) throw Error("apply_merge: non-finite result in '" + name + "'");
            tensor->data[i] = v;
        }
    }
    validate_bundle(merged);
    return merged;
}

struct MergeResult {
    ModelBundle merged;
    MergeReport report;
};

// Full pipeline: fusion vectors -> variance selection -> coefficients ->
// sign-minority erase -> Eq.-style accumulation onto the pivot.
inline MergeResult merge(const std::vector<ModelBundle>& models, const ModelBundle& pivot,
                         const MergeRecipe& recipe, const SchemaDescriptor& schema = {}) {
    if (!(recipe.tau > 0.0 && recipe.tau <= 100.0)) throw UsageError("merge: tau must be in (0, 100]");
    const auto deltas = fusion_vectors(models, pivot, schema);
    const auto mask = select_top_variance(deltas, recipe.tau);
    const auto coeffs = compute_coefficients(deltas, mask, recipe.normalization);
    const auto pruned = recipe.erase == ErasePolicy::majority_sign
                            ? erase_sign_minority(deltas, mask, recipe.tie)
                            : apply_selection(deltas, mask);

    MergeResult result;
    result.merged = apply_merge(pivot, pruned, coeffs, schema);

    result.report.tau = recipe.tau;
    result.report.normalization = to_string(recipe.normalization);
    result.report.erase_policy = to_string(recipe.erase);
    result.report.tie_policy = to_string(recipe.tie);
    result.report.uniform_fallback = coeffs.uniform_fallback;
    for (std::size_t k = 0; k < deltas.size(); ++k)
        result.report.etas.emplace_back(deltas[k].source_model_id, coeffs.etas[k]);
    for (const auto& [name, m] : mask.masks) {
        TensorMergeStats stats;
        stats.elements = m.size();
        for (std::uint8_t bit : m) stats.retained += bit;
        for (std::size_t k = 0; k < deltas.size(); ++k) {
            const auto& before = deltas[k].deltas.at(name).data;
            const auto& after = pruned[k].deltas.at(name).data;
            for (std::size_t i = 0; i < before.size(); ++i)
                if (m[i] && before[i] != 0.0f && after[i] == 0.0f) ++stats.erased;
        }
        result.report.per_tensor.emplace(name, stats);
    }
    return result;
}

inline nlohmann::json merge_report_json(const MergeReport& r) {
    nlohmann::json etas = nlohmann::json::array();
    for (const auto& [id, eta] : r.etas) etas.push_back({{"model_id", id}, {"eta", eta}});
    nlohmann::json per_tensor = nlohmann::json::object();
    for (const auto& [name, stats] : r.per_tensor)
        per_tensor[name] = {{"elements", stats.elements}, {"retained", stats.retained}, {"erased", stats.erased}};
    return {{"tau", r.tau},
            {"normalization", r.normalization},
            {"erase_policy", r.erase_policy},
            {"tie_policy", r.tie_policy},
            {"uniform_fallback", r.uniform_fallback},
            {"etas", etas},
            {"per_tensor", per_tensor}};
}

} // namespace seme
