#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "seme/parallel.hpp"
#include "seme/semantic_basis.hpp"

namespace seme {

enum class Calibration { none, norm_match, basis_scale };

// How the target-side combination weights are obtained. `probability` uses
// the source probabilities directly as weights; `cosine_least_squares`
// solves for the combination whose target-side cosines reproduce the source
// cosines, which is what actually keeps the probabilities unchanged when
// the heads coincide or differ by a rotation.
enum class CombinationRule { cosine_least_squares, probability_weighted };

inline const char* to_string(Calibration c) {
    switch (c) {
        case Calibration::none: return "none";
        case Calibration::norm_match: return "norm_match";
        default: return "basis_scale";
    }
}

inline const char* to_string(CombinationRule r) {
    return r == CombinationRule::cosine_least_squares ? "lstsq" : "probability";
}

// Shared-vocabulary transformation plan between two LM-heads' basis sets.
struct TransformPlan {
    SemanticBasisSet source_bases;
    SemanticBasisSet target_bases;
    double temperature = 1.0;
    Calibration calibration = Calibration::norm_match;
    CombinationRule combination = CombinationRule::cosine_least_squares;
};

inline TransformPlan make_transform_plan(SemanticBasisSet source, SemanticBasisSet target,
                                         double temperature = 1.0,
                                         Calibration calibration = Calibration::norm_match,
                                         CombinationRule combination = CombinationRule::cosine_least_squares) {
    if (source.vocab_size() != target.vocab_size())
        throw Error("transform plan: vocabulary sizes differ (route mismatched vocabularies "
                    "through the alignment mapping first)");
    if (temperature <= 0.0) throw Error("transform plan: temperature must be positive");
    TransformPlan plan;
    plan.source_bases = std::move(source);
    plan.target_bases = std::move(target);
    plan.temperature = temperature;
    plan.calibration = calibration;
    plan.combination = combination;
    return plan;
}

inline double mean_basis_norm(const SemanticBasisSet& set) {
    double acc = 0.0;
    for (double n : set.norms) acc += n;
    return set.norms.empty() ? 0.0 : acc / static_cast<double>(set.norms.size());
}

inline std::vector<float> calibrate_magnitude(std::span<const float> raw, std::span<const float> r_x,
                                              const TransformPlan& plan) {
    std::vector<float> out(raw.begin(), raw.end());
    if (plan.calibration == Calibration::none) return out;
    const double raw_norm = norm(raw);
    if (raw_norm == 0.0) throw Error("calibrate_magnitude: zero raw vector");
    double scale = 1.0;
    if (plan.calibration == Calibration::norm_match) {
        const double src_ref = mean_basis_norm(plan.source_bases);
        const double tgt_ref = mean_basis_norm(plan.target_bases);
        if (src_ref == 0.0 || tgt_ref == 0.0) throw Error("calibrate_magnitude: zero reference basis norm");
        scale = norm(r_x) * (tgt_ref / src_ref) / raw_norm;
    } else { // basis_scale
        scale = mean_basis_norm(plan.target_bases);
    }
    for (float& x : out) x = static_cast<float>(x * scale);
    return out;
}

namespace detail {

// Labels usable on both sides (nonzero source and target rows).
inline std::vector<std::size_t> live_labels(const TransformPlan& plan) {
    std::vector<std::size_t> live;
    live.reserve(plan.source_bases.vocab_size());
    for (std::size_t i = 0; i < plan.source_bases.vocab_size(); ++i)
        if (plan.source_bases.norms[i] != 0.0 && plan.target_bases.norms[i] != 0.0) live.push_back(i);
    return live;
}

} // namespace detail

// Semantics-preservative transformation: carry the vocabulary probabilities
// of r_x over to the target latent space. Steps: source cosines ->
// combination on unit target bases -> magnitude calibration.
inline std::vector<float> preserve_transform(std::span<const float> r_x, const TransformPlan& plan) {
    if (r_x.size() != plan.source_bases.latent_dim()) throw Error("preserve_transform: dimension mismatch");
    const double rn = norm(r_x);
    if (rn == 0.0) throw Error("preserve_transform: zero representation");

    const std::vector<std::size_t> live = detail::live_labels(plan);
    if (live.empty()) throw Error("preserve_transform: no usable basis rows");

    const std::size_t d_y = plan.target_bases.latent_dim();
    std::vector<double> raw(d_y, 0.0);

    if (plan.combination == CombinationRule::cosine_least_squares) {
        Eigen::MatrixXd A(static_cast<long>(live.size()), static_cast<long>(d_y));
        Eigen::VectorXd b(static_cast<long>(live.size()));
        for (std::size_t k = 0; k < live.size(); ++k) {
            const std::size_t i = live[k];
            const auto sy = plan.target_bases.bases.row(i);
            for (std::size_t j = 0; j < d_y; ++j)
                A(static_cast<long>(k), static_cast<long>(j)) = sy[j] / plan.target_bases.norms[i];
            b(static_cast<long>(k)) = dot(r_x, plan.source_bases.bases.row(i)) / (rn * plan.source_bases.norms[i]);
        }
        const Eigen::VectorXd u = A.colPivHouseholderQr().solve(b);
        for (std::size_t j = 0; j < d_y; ++j) raw[j] = u(static_cast<long>(j));
    } else {
        const ProbabilityVector p = semantic_probabilities(r_x, plan.source_bases, plan.temperature);
        for (const std::size_t i : live) {
            const auto sy = plan.target_bases.bases.row(i);
            for (std::size_t j = 0; j < d_y; ++j) raw[j] += p.probs[i] * (sy[j] / plan.target_bases.norms[i]);
        }
    }

    std::vector<float> raw_f(d_y);
    for (std::size_t j = 0; j < d_y; ++j) raw_f[j] = static_cast<float>(raw[j]);
    return calibrate_magnitude(as_span(raw_f), r_x, plan);
}

// Fractional positions of target layers inside the source layer stack.
struct DepthMap {
    std::size_t source_depth = 0;
    std::size_t target_depth = 0;
    std::vector<double> positions; // monotone, endpoints anchored
};

inline DepthMap depth_map(std::size_t source_depth, std::size_t target_depth) {
    if (source_depth == 0 || target_depth == 0) throw Error("depth_map: zero depth");
    DepthMap map;
    map.source_depth = source_depth;
    map.target_depth = target_depth;
    map.positions.resize(target_depth);
    if (target_depth == 1) {
        map.positions[0] = static_cast<double>(source_depth - 1) / 2.0;
    } else {
        for (std::size_t j = 0; j < target_depth; ++j)
            map.positions[j] = static_cast<double>(j) * static_cast<double>(source_depth - 1) /
                               static_cast<double>(target_depth - 1);
    }
    return map;
}

// Linear interpolation between floor/ceil neighbors; exact at grid points.
inline std::vector<float> interpolate_layer_semantics(const std::vector<std::vector<float>>& per_layer,
                                                      double position) {
    if (per_layer.empty()) throw Error("interpolate_layer_semantics: empty layer list");
    if (position < 0.0 || position > static_cast<double>(per_layer.size() - 1))
        throw Error("interpolate_layer_semantics: position out of range");
    const std::size_t lo = static_cast<std::size_t>(std::floor(position));
    const double t = position - static_cast<double>(lo);
    if (t == 0.0) return per_layer[lo];
    const std::size_t hi = lo + 1;
    const auto& a = per_layer[lo];
    const auto& b = per_layer[hi];
    if (a.size() != b.size()) throw Error("interpolate_layer_semantics: ragged layer vectors");
    std::vector<float> out(a.size());
    for (std::size_t j = 0; j < a.size(); ++j)
        out[j] = static_cast<float>((1.0 - t) * a[j] + t * b[j]);
    return out;
}

// Batch transformation with a per-row preservation report.
struct PreservationRecord {
    double kl = 0.0;          // KL(p_x || p_y)
    bool argmax_match = false;
};

struct TransformReport {
    std::vector<PreservationRecord> records;
    double mean_kl = 0.0;
    double max_kl = 0.0;
    double argmax_agreement = 0.0;
};

inline std::pair<MatrixF, TransformReport> transform_rows(const MatrixF& reps, const TransformPlan& plan,
                                                          unsigned threads = 0) {
    if (reps.cols != plan.source_bases.latent_dim()) throw Error("transform_rows: dimension mismatch");
    MatrixF out(reps.rows, plan.target_bases.latent_dim());
    TransformReport report;
    report.records.resize(reps.rows);

    parallel_for(reps.rows, threads, [&](std::size_t i) {
        const auto r_x = reps.row(i);
        const std::vector<float> r_y = preserve_transform(r_x, plan);
        std::copy(r_y.begin(), r_y.end(), out.row(i).begin());
        const ProbabilityVector px = semantic_probabilities(r_x, plan.source_bases, plan.temperature);
        const ProbabilityVector py = semantic_probabilities(as_span(r_y), plan.target_bases, plan.temperature);
        std::size_t argmax_x = 0;
        for (std::size_t k = 1; k < px.probs.size(); ++k)
            if (px.probs[k] > px.probs[argmax_x]) argmax_x = k;
        report.records[i].kl = kl_divergence(as_span(px.probs), as_span(py.probs));
        report.records[i].argmax_match = nearest_basis(as_span(r_y), plan.target_bases) == argmax_x;
    });

    double sum = 0.0;
    std::size_t agree = 0;
    for (const auto& rec : report.records) {
        sum += rec.kl;
        report.max_kl = std::max(report.max_kl, rec.kl);
        agree += rec.argmax_match ? 1 : 0;
    }
    if (!report.records.empty()) {
        report.mean_kl = sum / static_cast<double>(report.records.size());
        report.argmax_agreement = static_cast<double>(agree) / static_cast<double>(report.records.size());
    }
    return {std::move(out), std::move(report)};
}

inline nlohmann::json transform_report_json(const TransformReport& r, const TransformPlan& plan) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& rec : r.records) rows.push_back({{"kl", rec.kl}, {"argmax_match", rec.argmax_match}});
    return {{"temperature", plan.temperature},
            {"calibration", to_string(plan.calibration)},
            {"combination", to_string(plan.combination)},
            {"mean_kl", r.mean_kl},
            {"max_kl", r.max_kl},
            {"argmax_agreement", r.argmax_agreement},
            {"rows", rows}};
}

} // namespace seme
