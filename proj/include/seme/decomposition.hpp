#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "seme/model_bundle.hpp"
#include "seme/parallel.hpp"
#include "seme/rng.hpp"
#include "seme/semantic_basis.hpp"

namespace seme {

// Orthogonal projection of r onto the line of s: ((r.s)/(s.s)) s.
inline std::vector<float> project(std::span<const float> r, std::span<const float> s) {
    if (r.size() != s.size()) throw Error("project: dimension mismatch");
    const double ss = dot(s, s);
    if (ss == 0.0) throw Error("project: zero-norm direction");
    const double coef = dot(r, s) / ss;
    std::vector<float> out(r.size());
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = static_cast<float>(coef * s[i]);
    return out;
}

// Per-label component vectors c_i = proj(r, s_i).
struct ComponentSet {
    MatrixF components; // v x d
    std::vector<float> source;
};

// Zero-norm basis rows are skipped (zero component).
inline ComponentSet decompose(std::span<const float> r, const SemanticBasisSet& bases) {
    if (r.size() != bases.latent_dim()) throw Error("decompose: dimension mismatch");
    if (norm(r) == 0.0) throw Error("decompose: zero representation");
    ComponentSet set;
    set.source.assign(r.begin(), r.end());
    set.components = MatrixF(bases.vocab_size(), bases.latent_dim());
    for (std::size_t i = 0; i < bases.vocab_size(); ++i) {
        if (bases.norms[i] == 0.0) continue;
        const auto s = bases.bases.row(i);
        const double coef = dot(r, s) / (bases.norms[i] * bases.norms[i]);
        auto out = set.components.row(i);
        for (std::size_t j = 0; j < s.size(); ++j) out[j] = static_cast<float>(coef * s[j]);
    }
    return set;
}

// Vector sum of all components (double accumulation).
inline std::vector<float> resultant(const ComponentSet& set) {
    if (set.components.rows == 0) throw Error("resultant: empty component set");
    std::vector<double> acc(set.components.cols, 0.0);
    for (std::size_t i = 0; i < set.components.rows; ++i) {
        const auto row = set.components.row(i);
        for (std::size_t j = 0; j < row.size(); ++j) acc[j] += row[j];
    }
    std::vector<float> out(acc.size());
    for (std::size_t j = 0; j < acc.size(); ++j) out[j] = static_cast<float>(acc[j]);
    return out;
}

inline double parallelism_score(std::span<const float> r, std::span<const float> resultant_vec) {
    return cosine(r, resultant_vec);
}

enum class RepresentationSource { gaussian, archive_rows };

struct ValidationConfig {
    std::size_t trials = 100;
    std::uint64_t seed = 0;
    RepresentationSource rep_source = RepresentationSource::gaussian;
    MatrixF activation_rows;    // used when rep_source == archive_rows
    unsigned threads = 0;       // 0: SEME_THREADS or hardware
};

struct TrialRecord {
    std::size_t trial = 0;
    double parallelism_semantic = 0.0;
    double parallelism_random = 0.0;
};

struct ValidationReport {
    std::size_t vocab_size = 0;
    std::size_t latent_dim = 0;
    std::size_t trials = 0;
    std::uint64_t seed = 0;
    double mean_semantic = 0.0;
    double stddev_semantic = 0.0;
    double mean_random = 0.0;
    double stddev_random = 0.0;
    std::vector<TrialRecord> records;
};

namespace detail {

inline double trial_parallelism(std::span<const float> r, const SemanticBasisSet& bases) {
    return parallelism_score(r, as_span(resultant(decompose(r, bases))));
}

} // namespace detail

// Per trial: draw r, measure cosine(r, sum of components) against the given
// bases and against an equally-sized fresh Gaussian basis set. The random
// control is published, not asserted (the near-orthogonality the analogy
// suggests does not hold for isotropic Gaussian collections).
// RNG is seeded per trial (seed + index) so serial and parallel runs agree.
inline ValidationReport run_validation(const SemanticBasisSet& bases, const ValidationConfig& cfg) {
    if (cfg.trials == 0) throw UsageError("run_validation: trials must be >= 1");
    if (cfg.rep_source == RepresentationSource::archive_rows) {
        if (cfg.activation_rows.rows == 0) throw Error("run_validation: empty activation archive");
        if (cfg.activation_rows.cols != bases.latent_dim())
            throw Error("run_validation: activation rows do not match latent_dim");
    }

    const std::size_t v = bases.vocab_size();
    const std::size_t d = bases.latent_dim();
    ValidationReport report;
    report.vocab_size = v;
    report.latent_dim = d;
    report.trials = cfg.trials;
    report.seed = cfg.seed;
    report.records.resize(cfg.trials);

    parallel_for(cfg.trials, cfg.threads, [&](std::size_t t) {
        std::mt19937_64 rng(cfg.seed + t);
        std::vector<float> r;
        if (cfg.rep_source == RepresentationSource::gaussian) {
            r = gaussian_vector(d, rng);
            if (norm(as_span(r)) == 0.0) r[0] = 1.0f;
        } else {
            r.assign(cfg.activation_rows.row(t % cfg.activation_rows.rows).begin(),
                     cfg.activation_rows.row(t % cfg.activation_rows.rows).end());
        }
        const SemanticBasisSet control = make_basis_set(gaussian_matrix(v, d, rng));
        report.records[t] = {t, detail::trial_parallelism(as_span(r), bases),
                             detail::trial_parallelism(as_span(r), control)};
    });

    double sum_s = 0.0, sum_r = 0.0;
    for (const auto& rec : report.records) {
        sum_s += rec.parallelism_semantic;
        sum_r += rec.parallelism_random;
    }
    report.mean_semantic = sum_s / static_cast<double>(cfg.trials);
    report.mean_random = sum_r / static_cast<double>(cfg.trials);
    double var_s = 0.0, var_r = 0.0;
    for (const auto& rec : report.records) {
        var_s += (rec.parallelism_semantic - report.mean_semantic) * (rec.parallelism_semantic - report.mean_semantic);
        var_r += (rec.parallelism_random - report.mean_random) * (rec.parallelism_random - report.mean_random);
    }
    report.stddev_semantic = std::sqrt(var_s / static_cast<double>(cfg.trials));
    report.stddev_random = std::sqrt(var_r / static_cast<double>(cfg.trials));
    return report;
}

inline ValidationReport run_validation(const ModelBundle& bundle, const ValidationConfig& cfg,
                                       const PseudoinverseConfig& pinv_cfg = {}) {
    return run_validation(semantic_bases(bundle, pinv_cfg), cfg);
}

inline nlohmann::json validation_report_json(const ValidationReport& r) {
    nlohmann::json records = nlohmann::json::array();
    for (const auto& rec : r.records)
        records.push_back({{"trial", rec.trial},
                           {"parallelism_semantic", rec.parallelism_semantic},
                           {"parallelism_random", rec.parallelism_random}});
    return {{"vocab_size", r.vocab_size},
            {"latent_dim", r.latent_dim},
            {"trials", r.trials},
            {"seed", r.seed},
            {"parallelism_semantic", {{"mean", r.mean_semantic}, {"stddev", r.stddev_semantic}}},
            {"parallelism_random", {{"mean", r.mean_random}, {"stddev", r.stddev_random}}},
            {"records", records}};
}

// Two columns (trial, semantic parallelism), RFC 4180 line endings.
inline std::string validation_report_csv(const ValidationReport& r) {
    std::string out = "trial,parallelism\r\n";
    char buf[64];
    for (const auto& rec : r.records) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g\r\n", rec.trial, rec.parallelism_semantic);
        out += buf;
    }
    return out;
}

} // namespace seme
