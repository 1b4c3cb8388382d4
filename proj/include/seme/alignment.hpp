#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "seme/error.hpp"
#include "seme/numerics.hpp"

namespace seme {

struct TokenSequence {
    std::vector<int> ids;
    std::vector<std::string> surface_forms; // optional; required for exact/fuzzy mapping

    bool has_surfaces() const { return !surface_forms.empty(); }
};

inline void validate_sequence(const TokenSequence& seq) {
    for (int id : seq.ids)
        if (id < 0) throw Error("token ids must be non-negative");
    if (seq.has_surfaces() && seq.surface_forms.size() != seq.ids.size())
        throw Error("surface_forms length does not match ids");
}

// Link cost model: substitution when the linked spans do not match, plus one
// unit per extra token absorbed by a split/merge.
struct EditCosts {
    double substitution = 1.0;
    double extra_token = 1.0;
    std::size_t max_span = 0; // 0: unbounded
};

struct SpanLink {
    std::size_t src_begin = 0, src_end = 0;
    std::size_t pivot_begin = 0, pivot_end = 0;
    double cost = 0.0;
};

// Ordered span links jointly covering both sequences; every link is 1:1,
// 1:many or many:1.
struct AlignmentMap {
    std::vector<SpanLink> links;
    double cost = 0.0;
};

inline std::size_t edit_distance(const std::string& a, const std::string& b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    std::iota(prev.begin(), prev.end(), std::size_t{0});
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

namespace detail {

inline bool spans_match(const TokenSequence& src, std::size_t sb, std::size_t se,
                        const TokenSequence& pivot, std::size_t pb, std::size_t pe) {
    if (src.has_surfaces() && pivot.has_surfaces()) {
        std::string a, b;
        for (std::size_t i = sb; i < se; ++i) a += src.surface_forms[i];
        for (std::size_t j = pb; j < pe; ++j) b += pivot.surface_forms[j];
        return a == b;
    }
    if (se - sb == 1 && pe - pb == 1) return src.ids[sb] == pivot.ids[pb];
    return false;
}

inline double link_cost(const TokenSequence& src, std::size_t sb, std::size_t se,
                        const TokenSequence& pivot, std::size_t pb, std::size_t pe,
                        const EditCosts& costs) {
    const double base = spans_match(src, sb, se, pivot, pb, pe) ? 0.0 : costs.substitution;
    return base + costs.extra_token * static_cast<double>((se - sb) + (pe - pb) - 2);
}

} // namespace detail

// Minimum-cost segmentation alignment by dynamic programming. Ties prefer
// one-to-one links, then the smallest spans.
inline AlignmentMap align_sequences(const TokenSequence& src, const TokenSequence& pivot,
                                    const EditCosts& costs = {}) {
    validate_sequence(src);
    validate_sequence(pivot);
    if (src.ids.empty() || pivot.ids.empty()) throw Error("align_sequences: empty sequence");

    const std::size_t n = src.ids.size();
    const std::size_t m = pivot.ids.size();
    const double inf = std::numeric_limits<double>::infinity();
    const std::size_t span_cap = costs.max_span == 0 ? std::max(n, m) : costs.max_span;

    struct Cell {
        double cost = std::numeric_limits<double>::infinity();
        std::size_t a = 0, b = 0; // chosen link spans
    };
    std::vector<Cell> dp((n + 1) * (m + 1));
    auto cell = [&](std::size_t i, std::size_t j) -> Cell& { return dp[i * (m + 1) + j]; };
    cell(0, 0).cost = 0.0;

    for (std::size_t i = 0; i <= n; ++i) {
        for (std::size_t j = 0; j <= m; ++j) {
            if (i == 0 && j == 0) continue;
            Cell best;
            auto consider = [&](std::size_t a, std::size_t b) {
                if (a > i || b > j) return;
                const double prev = cell(i - a, j - b).cost;
                if (prev == inf) return;
                const double c = prev + detail::link_cost(src, i - a, i, pivot, j - b, j, costs);
                const bool better = c < best.cost ||
                                    (c == best.cost && (a + b < best.a + best.b ||
                                                        (a + b == best.a + best.b && a < best.a)));
                if (better) best = {c, a, b};
            };
            consider(1, 1);
            for (std::size_t b = 2; b <= std::min(j, span_cap); ++b) consider(1, b);
            for (std::size_t a = 2; a <= std::min(i, span_cap); ++a) consider(a, 1);
            cell(i, j) = best;
        }
    }

    AlignmentMap map;
    map.cost = cell(n, m).cost;
    std::size_t i = n, j = m;
    while (i > 0 || j > 0) {
        const Cell& c = cell(i, j);
        SpanLink link;
        link.src_begin = i - c.a;
        link.src_end = i;
        link.pivot_begin = j - c.b;
        link.pivot_end = j;
        link.cost = detail::link_cost(src, link.src_begin, link.src_end, pivot, link.pivot_begin,
                                      link.pivot_end, costs);
        map.links.push_back(link);
        i -= c.a;
        j -= c.b;
    }
    std::reverse(map.links.begin(), map.links.end());
    return map;
}

enum class MappingMode { exact, fuzzy, statistical };

inline const char* to_string(MappingMode m) {
    switch (m) {
        case MappingMode::exact: return "exact";
        case MappingMode::fuzzy: return "fuzzy";
        default: return "statistical";
    }
}

struct MappingEntry {
    int pivot_id = 0;
    double weight = 0.0;
};

// Source-token -> weighted pivot-token correspondences. Tokens without an
// entry are unmapped.
struct VocabMappingTable {
    MappingMode mode = MappingMode::exact;
    std::map<int, std::vector<MappingEntry>> entries;
    std::map<int, std::map<int, double>> counts; // raw co-occurrence (statistical mode)
};

struct AlignedPair {
    TokenSequence src;
    TokenSequence pivot;
    AlignmentMap map;
};

namespace detail {

// Vocabulary observed in a sequence list: id -> surface. Conflicting
// surfaces for one id keep the first observation.
inline std::map<int, std::string> observed_vocab(const std::vector<AlignedPair>& pairs, bool pivot_side) {
    std::map<int, std::string> vocab;
    for (const auto& pair : pairs) {
        const TokenSequence& seq = pivot_side ? pair.pivot : pair.src;
        if (!seq.has_surfaces()) throw Error("surface forms are required for exact/fuzzy mapping");
        for (std::size_t i = 0; i < seq.ids.size(); ++i) vocab.emplace(seq.ids[i], seq.surface_forms[i]);
    }
    return vocab;
}

} // namespace detail

inline VocabMappingTable build_vocab_mapping(const std::vector<AlignedPair>& pairs, MappingMode mode,
                                             std::size_t fuzzy_max_dist = 2) {
    if (pairs.empty()) throw Error("build_vocab_mapping: empty aligned corpus");
    VocabMappingTable table;
    table.mode = mode;

    if (mode == MappingMode::exact || mode == MappingMode::fuzzy) {
        const auto src_vocab = detail::observed_vocab(pairs, false);
        const auto pivot_vocab = detail::observed_vocab(pairs, true);
        for (const auto& [sid, ssurf] : src_vocab) {
            int best_id = -1;
            std::size_t best_dist = fuzzy_max_dist + 1;
            for (const auto& [pid, psurf] : pivot_vocab) {
                const std::size_t d = mode == MappingMode::exact ? (ssurf == psurf ? 0 : 1)
                                                                 : edit_distance(ssurf, psurf);
                const std::size_t limit = mode == MappingMode::exact ? 0 : fuzzy_max_dist;
                if (d <= limit && (d < best_dist || (d == best_dist && pid < best_id))) {
                    best_dist = d;
                    best_id = pid;
                }
            }
            if (best_id >= 0) table.entries[sid] = {{best_id, 1.0}};
        }
        return table;
    }

    // Statistical: matching links contribute unit counts per source token
    // (split across the pivot span); mismatched links contribute 1/(a*b).
    for (const auto& pair : pairs) {
        for (const SpanLink& link : pair.map.links) {
            const std::size_t a = link.src_end - link.src_begin;
            const std::size_t b = link.pivot_end - link.pivot_begin;
            const bool match = detail::spans_match(pair.src, link.src_begin, link.src_end, pair.pivot,
                                                   link.pivot_begin, link.pivot_end);
            const double unit = match ? 1.0 / static_cast<double>(b)
                                      : 1.0 / static_cast<double>(a * b);
            for (std::size_t i = link.src_begin; i < link.src_end; ++i)
                for (std::size_t j = link.pivot_begin; j < link.pivot_end; ++j)
                    table.counts[pair.src.ids[i]][pair.pivot.ids[j]] += unit;
        }
    }
    for (const auto& [sid, row] : table.counts) {
        double total = 0.0;
        for (const auto& [pid, c] : row) total += c;
        if (total <= 0.0) continue;
        std::vector<MappingEntry> entries;
        entries.reserve(row.size());
        for (const auto& [pid, c] : row) entries.push_back({pid, c / total});
        table.entries[sid] = std::move(entries);
    }
    return table;
}

enum class UnmappedPolicy { renormalize, route_to_unknown };

// pivot_row[j] = sum_i src_row[i] * weight(i -> j). Mass on unmapped source
// tokens is redistributed proportionally (default) or routed to unknown_id.
inline std::vector<double> map_distribution(std::span<const double> src_row, const VocabMappingTable& table,
                                            std::size_t pivot_vocab_size,
                                            UnmappedPolicy policy = UnmappedPolicy::renormalize,
                                            int unknown_id = 0) {
    double row_sum = 0.0;
    for (double x : src_row) {
        if (x < 0.0) throw Error("map_distribution: negative probability");
        row_sum += x;
    }
    if (std::abs(row_sum - 1.0) > 1e-6) throw Error("map_distribution: source row is not normalized");

    std::vector<double> out(pivot_vocab_size, 0.0);
    double mapped_mass = 0.0;
    for (std::size_t i = 0; i < src_row.size(); ++i) {
        if (src_row[i] == 0.0) continue;
        const auto it = table.entries.find(static_cast<int>(i));
        if (it == table.entries.end()) continue;
        mapped_mass += src_row[i];
        for (const MappingEntry& e : it->second) {
            if (e.pivot_id < 0 || static_cast<std::size_t>(e.pivot_id) >= pivot_vocab_size)
                throw Error("map_distribution: pivot id out of range");
            out[static_cast<std::size_t>(e.pivot_id)] += src_row[i] * e.weight;
        }
    }
    if (mapped_mass == 0.0) throw Error("map_distribution: zero total mapped mass");

    if (policy == UnmappedPolicy::renormalize) {
        for (double& x : out) x /= mapped_mass;
    } else {
        if (unknown_id < 0 || static_cast<std::size_t>(unknown_id) >= pivot_vocab_size)
            throw Error("map_distribution: unknown_id out of range");
        out[static_cast<std::size_t>(unknown_id)] += 1.0 - mapped_mass;
    }
    return out;
}

// n positions of probability rows over one vocabulary.
struct DistributionMatrix {
    MatrixD rows;
};

inline void validate_distribution(const DistributionMatrix& dist) {
    for (std::size_t i = 0; i < dist.rows.rows; ++i) {
        double sum = 0.0;
        for (double x : dist.rows.row(i)) {
            if (x < 0.0) throw Error("distribution row " + std::to_string(i) + " has a negative entry");
            sum += x;
        }
        if (std::abs(sum - 1.0) > 1e-6)
            throw Error("distribution row " + std::to_string(i) + " does not sum to 1");
    }
}

enum class FusionStrategy { min_cross_entropy, average };

inline const char* to_string(FusionStrategy s) {
    return s == FusionStrategy::min_cross_entropy ? "min_cross_entropy" : "average";
}

struct FusionResult {
    DistributionMatrix fused;
    std::vector<int> selected; // per position: 0 = a, 1 = b, -1 = averaged
};

// min_cross_entropy picks, per position, the row with the lower
// -log p[reference]; ties keep a. average takes the renormalized mean.
inline FusionResult fuse_distributions(const DistributionMatrix& a, const DistributionMatrix& b,
                                       const TokenSequence& reference, FusionStrategy strategy) {
    if (a.rows.rows != b.rows.rows || a.rows.cols != b.rows.cols)
        throw Error("fuse_distributions: distribution shapes differ");
    if (reference.ids.size() != a.rows.rows)
        throw Error("fuse_distributions: reference length does not match positions");
    validate_distribution(a);
    validate_distribution(b);

    FusionResult result;
    result.fused.rows = MatrixD(a.rows.rows, a.rows.cols);
    result.selected.resize(a.rows.rows);
    for (std::size_t t = 0; t < a.rows.rows; ++t) {
        const int ref = reference.ids[t];
        if (ref < 0 || static_cast<std::size_t>(ref) >= a.rows.cols)
            throw Error("fuse_distributions: reference id out of vocabulary");
        if (strategy == FusionStrategy::min_cross_entropy) {
            const double ce_a = -std::log(a.rows.at(t, static_cast<std::size_t>(ref)));
            const double ce_b = -std::log(b.rows.at(t, static_cast<std::size_t>(ref)));
            const bool use_a = ce_a <= ce_b;
            result.selected[t] = use_a ? 0 : 1;
            const auto row = use_a ? a.rows.row(t) : b.rows.row(t);
            std::copy(row.begin(), row.end(), result.fused.rows.row(t).begin());
        } else {
            result.selected[t] = -1;
            double sum = 0.0;
            for (std::size_t j = 0; j < a.rows.cols; ++j) {
                const double v = 0.5 * (a.rows.at(t, j) + b.rows.at(t, j));
                result.fused.rows.at(t, j) = v;
                sum += v;
            }
            for (std::size_t j = 0; j < a.rows.cols; ++j) result.fused.rows.at(t, j) /= sum;
        }
    }
    return result;
}

inline nlohmann::json alignment_map_json(const AlignmentMap& map) {
    nlohmann::json links = nlohmann::json::array();
    for (const SpanLink& l : map.links)
        links.push_back({{"src", {l.src_begin, l.src_end}},
                         {"pivot", {l.pivot_begin, l.pivot_end}},
                         {"cost", l.cost}});
    return {{"cost", map.cost}, {"links", links}};
}

inline nlohmann::json vocab_table_json(const VocabMappingTable& table) {
    nlohmann::json entries = nlohmann::json::object();
    for (const auto& [sid, list] : table.entries) {
        nlohmann::json row = nlohmann::json::array();
        for (const MappingEntry& e : list) row.push_back({{"pivot_id", e.pivot_id}, {"weight", e.weight}});
        entries[std::to_string(sid)] = row;
    }
    nlohmann::json counts = nlohmann::json::object();
    for (const auto& [sid, row] : table.counts) {
        nlohmann::json pcounts = nlohmann::json::object();
        for (const auto& [pid, c] : row) pcounts[std::to_string(pid)] = c;
        counts[std::to_string(sid)] = pcounts;
    }
    return {{"mode", to_string(table.mode)}, {"entries", entries}, {"counts", counts}};
}

inline VocabMappingTable vocab_table_from_json(const nlohmann::json& j) {
    VocabMappingTable table;
    const std::string mode = j.at("mode").get<std::string>();
    if (mode == "exact") table.mode = MappingMode::exact;
    else if (mode == "fuzzy") table.mode = MappingMode::fuzzy;
    else if (mode == "statistical") table.mode = MappingMode::statistical;
    else throw Error("unknown mapping mode '" + mode + "'");
    for (const auto& [sid, row] : j.at("entries").items()) {
        std::vector<MappingEntry> list;
        for (const auto& e : row) list.push_back({e.at("pivot_id").get<int>(), e.at("weight").get<double>()});
        table.entries[std::stoi(sid)] = std::move(list);
    }
    if (j.contains("counts"))
        for (const auto& [sid, row] : j.at("counts").items())
            for (const auto& [pid, c] : row.items())
                table.counts[std::stoi(sid)][std::stoi(pid)] = c.get<double>();
    return table;
}

} // namespace seme
