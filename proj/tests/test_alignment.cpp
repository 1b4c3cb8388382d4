#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "oracles.hpp"
#include "seme/alignment.hpp"

namespace {

seme::TokenSequence seq(std::vector<int> ids, std::vector<std::string> surfaces = {}) {
    seme::TokenSequence s;
    s.ids = std::move(ids);
    s.surface_forms = std::move(surfaces);
    return s;
}

seme::DistributionMatrix dist(std::vector<std::vector<double>> rows) {
    seme::DistributionMatrix d;
    d.rows = seme::MatrixD(rows.size(), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy(rows[i].begin(), rows[i].end(), d.rows.row(i).begin());
    return d;
}

} // namespace

TEST_CASE("identical sequences align one-to-one at cost zero") {
    const seme::TokenSequence s = seq({3, 1, 4, 1, 5});
    const seme::AlignmentMap map = seme::align_sequences(s, s);
    REQUIRE(map.cost == 0.0);
    REQUIRE(map.links.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        REQUIRE(map.links[i].src_begin == i);
        REQUIRE(map.links[i].src_end == i + 1);
        REQUIRE(map.links[i].pivot_begin == i);
        REQUIRE(map.links[i].pivot_end == i + 1);
    }
}

TEST_CASE("granularity differences force a split link") {
    const seme::TokenSequence src = seq({0, 1}, {"ab", "c"});
    const seme::TokenSequence pivot = seq({10, 11, 12}, {"a", "b", "c"});
    const seme::AlignmentMap map = seme::align_sequences(src, pivot);
    REQUIRE(map.cost == 1.0); // one extra token absorbed, surfaces match
    REQUIRE(map.links.size() == 2);
    REQUIRE(map.links[0].src_end - map.links[0].src_begin == 1);
    REQUIRE(map.links[0].pivot_end - map.links[0].pivot_begin == 2);
    REQUIRE(map.links[1].src_end - map.links[1].src_begin == 1);
    REQUIRE(map.links[1].pivot_end - map.links[1].pivot_begin == 1);
    REQUIRE(map.links[1].cost == 0.0);
}

TEST_CASE("DP cost equals the exhaustive minimum on short sequences") {
    std::mt19937_64 rng(97);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<int> a(1 + rng() % 6), b(1 + rng() % 6);
        for (int& x : a) x = static_cast<int>(rng() % 5);
        for (int& x : b) x = static_cast<int>(rng() % 5);
        const seme::TokenSequence src = seq(a), pivot = seq(b);
        const seme::AlignmentMap map = seme::align_sequences(src, pivot);
        const oracle::SeqView sv{&a, nullptr}, pv{&b, nullptr};
        REQUIRE(map.cost == oracle::exhaustive_alignment_cost(sv, pv, 1.0, 1.0));
    }
}

TEST_CASE("links jointly cover both sequences in order") {
    std::mt19937_64 rng(101);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<int> a(1 + rng() % 8), b(1 + rng() % 8);
        for (int& x : a) x = static_cast<int>(rng() % 3);
        for (int& x : b) x = static_cast<int>(rng() % 3);
        const seme::AlignmentMap map = seme::align_sequences(seq(a), seq(b));
        std::size_t si = 0, pi = 0;
        for (const seme::SpanLink& link : map.links) {
            REQUIRE(link.src_begin == si);
            REQUIRE(link.pivot_begin == pi);
            REQUIRE(link.src_end > link.src_begin);
            REQUIRE(link.pivot_end > link.pivot_begin);
            // every link is 1:1, 1:many or many:1
            REQUIRE((link.src_end - link.src_begin == 1 || link.pivot_end - link.pivot_begin == 1));
            si = link.src_end;
            pi = link.pivot_end;
        }
        REQUIRE(si == a.size());
        REQUIRE(pi == b.size());
    }
}

TEST_CASE("empty sequences are rejected") {
    REQUIRE_THROWS_AS(seme::align_sequences(seq({}), seq({1})), seme::Error);
    REQUIRE_THROWS_AS(seme::align_sequences(seq({1}), seq({})), seme::Error);
    REQUIRE_THROWS_AS(seme::validate_sequence(seq({-1})), seme::Error);
}

TEST_CASE("exact mapping over identical vocabularies is the identity") {
    seme::AlignedPair pair;
    pair.src = seq({0, 1, 2}, {"the", "cat", "sat"});
    pair.pivot = seq({5, 6, 7}, {"the", "cat", "sat"});
    pair.map = seme::align_sequences(pair.src, pair.pivot);
    const seme::VocabMappingTable table = seme::build_vocab_mapping({pair}, seme::MappingMode::exact);
    REQUIRE(table.entries.size() == 3);
    REQUIRE(table.entries.at(0).at(0).pivot_id == 5);
    REQUIRE(table.entries.at(1).at(0).pivot_id == 6);
    REQUIRE(table.entries.at(2).at(0).pivot_id == 7);
    for (const auto& [sid, list] : table.entries) REQUIRE(list.at(0).weight == 1.0);

    SECTION("unmatched surfaces stay unmapped in exact mode") {
        pair.pivot = seq({5, 6, 7}, {"the", "dog", "sat"});
        pair.map = seme::align_sequences(pair.src, pair.pivot);
        const seme::VocabMappingTable t2 = seme::build_vocab_mapping({pair}, seme::MappingMode::exact);
        REQUIRE(t2.entries.count(1) == 0);
    }
}

TEST_CASE("fuzzy mapping prefers the smallest edit distance") {
    seme::AlignedPair pair;
    pair.src = seq({0}, {"cat"});
    pair.pivot = seq({1, 2}, {"cat", "hat"});
    pair.map = seme::align_sequences(pair.src, seq({1}, {"cat"}));
    // the map itself is irrelevant for fuzzy mode; vocab comes from the sequences
    pair.pivot = seq({1, 2}, {"cat", "hat"});
    pair.map = seme::align_sequences(pair.src, pair.pivot);
    const seme::VocabMappingTable table = seme::build_vocab_mapping({pair}, seme::MappingMode::fuzzy, 1);
    REQUIRE(table.entries.at(0).size() == 1);
    REQUIRE(table.entries.at(0).at(0).pivot_id == 1); // distance 0 beats distance 1

    SECTION("tokens beyond the distance bound stay unmapped") {
        seme::AlignedPair far;
        far.src = seq({0}, {"zebra"});
        far.pivot = seq({1}, {"cat"});
        far.map = seme::align_sequences(far.src, far.pivot);
        const seme::VocabMappingTable t2 = seme::build_vocab_mapping({far}, seme::MappingMode::fuzzy, 2);
        REQUIRE(t2.entries.empty());
    }
}

TEST_CASE("edit distance is the classic Levenshtein") {
    REQUIRE(seme::edit_distance("", "") == 0);
    REQUIRE(seme::edit_distance("cat", "cat") == 0);
    REQUIRE(seme::edit_distance("cat", "hat") == 1);
    REQUIRE(seme::edit_distance("kitten", "sitting") == 3);
    REQUIRE(seme::edit_distance("", "abc") == 3);
}

TEST_CASE("statistical mapping normalizes hand-countable co-occurrences") {
    // Three aligned pairs built from matching surfaces:
    //   pair 1: "ab" -> "a","b" (1:2 split, match) and "c" -> "c" (1:1 match)
    //   pair 2: "c" -> "c" twice through separate 1:1 links
    //   pair 3: "x" -> "y" mismatched 1:1
    seme::AlignedPair p1;
    p1.src = seq({0, 1}, {"ab", "c"});
    p1.pivot = seq({10, 11, 12}, {"a", "b", "c"});
    p1.map = seme::align_sequences(p1.src, p1.pivot);

    seme::AlignedPair p2;
    p2.src = seq({1, 1}, {"c", "c"});
    p2.pivot = seq({12, 12}, {"c", "c"});
    p2.map = seme::align_sequences(p2.src, p2.pivot);

    seme::AlignedPair p3;
    p3.src = seq({2}, {"x"});
    p3.pivot = seq({13}, {"y"});
    p3.map = seme::align_sequences(p3.src, p3.pivot);

    const seme::VocabMappingTable table =
        seme::build_vocab_mapping({p1, p2, p3}, seme::MappingMode::statistical);

    // token 0 ("ab"): one matching 1:2 link -> 0.5 to each of 10, 11
    REQUIRE(table.counts.at(0).at(10) == Catch::Approx(0.5));
    REQUIRE(table.counts.at(0).at(11) == Catch::Approx(0.5));
    // token 1 ("c"): 1 (pair 1) + 2 (pair 2) matching 1:1 links -> all mass on 12
    REQUIRE(table.counts.at(1).at(12) == Catch::Approx(3.0));
    REQUIRE(table.entries.at(1).size() == 1);
    REQUIRE(table.entries.at(1).at(0).weight == Catch::Approx(1.0));
    // token 2 ("x"): one mismatched 1:1 link -> fractional count 1
    REQUIRE(table.counts.at(2).at(13) == Catch::Approx(1.0));
    // weights normalize per source token
    double w = 0.0;
    for (const auto& e : table.entries.at(0)) w += e.weight;
    REQUIRE(w == Catch::Approx(1.0).margin(1e-12));

    SECTION("empty corpus is rejected") {
        REQUIRE_THROWS_AS(seme::build_vocab_mapping({}, seme::MappingMode::statistical), seme::Error);
    }
}

TEST_CASE("distribution mapping") {
    seme::VocabMappingTable identity;
    identity.mode = seme::MappingMode::exact;
    for (int i = 0; i < 4; ++i) identity.entries[i] = {{i, 1.0}};

    SECTION("identity table is the identity map") {
        const std::vector<double> row = {0.1, 0.2, 0.3, 0.4};
        const std::vector<double> out = seme::map_distribution(row, identity, 4);
        for (std::size_t i = 0; i < 4; ++i) REQUIRE(out[i] == Catch::Approx(row[i]).margin(1e-12));
    }
    SECTION("a split entry spreads mass linearly") {
        seme::VocabMappingTable half;
        half.entries[0] = {{1, 0.5}, {3, 0.5}};
        const std::vector<double> row = {1.0, 0.0};
        const std::vector<double> out = seme::map_distribution(row, half, 5);
        REQUIRE(out == std::vector<double>{0.0, 0.5, 0.0, 0.5, 0.0});
    }
    SECTION("random rows match the matrix-product oracle") {
        std::mt19937_64 rng(103);
        const std::size_t sv = 6, pvs = 5;
        seme::VocabMappingTable table;
        std::vector<std::vector<double>> weights(sv, std::vector<double>(pvs, 0.0));
        for (std::size_t i = 0; i < sv; ++i) {
            double total = 0.0;
            std::vector<double> w(pvs);
            for (double& x : w) {
                x = static_cast<double>(rng() % 100) + 1.0;
                total += x;
            }
            std::vector<seme::MappingEntry> entries;
            for (std::size_t j = 0; j < pvs; ++j) {
                entries.push_back({static_cast<int>(j), w[j] / total});
                weights[i][j] = w[j] / total;
            }
            table.entries[static_cast<int>(i)] = std::move(entries);
        }
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<double> row(sv);
            double total = 0.0;
            for (double& x : row) {
                x = static_cast<double>(rng() % 100) + 1.0;
                total += x;
            }
            for (double& x : row) x /= total;
            const std::vector<double> out = seme::map_distribution(row, table, pvs);
            for (std::size_t j = 0; j < pvs; ++j) {
                double expect = 0.0;
                for (std::size_t i = 0; i < sv; ++i) expect += row[i] * weights[i][j];
                REQUIRE(std::abs(out[j] - expect) <= 1e-9);
            }
            double sum = 0.0;
            for (double x : out) {
                REQUIRE(x >= 0.0);
                sum += x;
            }
            REQUIRE(sum == Catch::Approx(1.0).margin(1e-6));
        }
    }
    SECTION("unmapped mass renormalizes by default") {
        seme::VocabMappingTable partial;
        partial.entries[0] = {{0, 1.0}};
        const std::vector<double> row = {0.5, 0.5}; // token 1 unmapped
        const std::vector<double> out = seme::map_distribution(row, partial, 2);
        REQUIRE(out == std::vector<double>{1.0, 0.0});
    }
    SECTION("unmapped mass can route to an unknown id") {
        seme::VocabMappingTable partial;
        partial.entries[0] = {{0, 1.0}};
        const std::vector<double> row = {0.5, 0.5};
        const std::vector<double> out =
            seme::map_distribution(row, partial, 3, seme::UnmappedPolicy::route_to_unknown, 2);
        REQUIRE(out == std::vector<double>{0.5, 0.0, 0.5});
    }
    SECTION("zero mapped mass is an error") {
        seme::VocabMappingTable empty;
        const std::vector<double> row = {1.0};
        REQUIRE_THROWS_AS(seme::map_distribution(row, empty, 2), seme::Error);
    }
    SECTION("unnormalized rows are rejected") {
        const std::vector<double> row = {0.5, 0.2};
        REQUIRE_THROWS_AS(seme::map_distribution(row, identity, 4), seme::Error);
    }
}

TEST_CASE("distribution fusion") {
    SECTION("a one-hot candidate on the reference wins everywhere") {
        const seme::DistributionMatrix a = dist({{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}});
        const seme::DistributionMatrix b = dist({{0.5, 0.25, 0.25}, {0.3, 0.4, 0.3}});
        const seme::TokenSequence ref = seq({0, 1});
        const seme::FusionResult r = seme::fuse_distributions(a, b, ref, seme::FusionStrategy::min_cross_entropy);
        REQUIRE(r.selected == std::vector<int>{0, 0});
        REQUIRE(r.fused.rows.data == a.rows.data);
    }
    SECTION("identical inputs come back unchanged under both strategies") {
        const seme::DistributionMatrix a = dist({{0.25, 0.75}, {0.6, 0.4}});
        const seme::TokenSequence ref = seq({1, 0});
        const seme::FusionResult ce = seme::fuse_distributions(a, a, ref, seme::FusionStrategy::min_cross_entropy);
        REQUIRE(ce.fused.rows.data == a.rows.data);
        const seme::FusionResult avg = seme::fuse_distributions(a, a, ref, seme::FusionStrategy::average);
        for (std::size_t i = 0; i < a.rows.data.size(); ++i)
            REQUIRE(avg.fused.rows.data[i] == Catch::Approx(a.rows.data[i]).margin(1e-12));
    }
    SECTION("random cases match the per-position CE comparison") {
        std::mt19937_64 rng(107);
        for (int trial = 0; trial < 50; ++trial) {
            const std::size_t n = 4, v = 6;
            auto random_dist = [&] {
                std::vector<std::vector<double>> rows(n, std::vector<double>(v));
                for (auto& row : rows) {
                    double total = 0.0;
                    for (double& x : row) {
                        x = static_cast<double>(rng() % 1000) + 1.0;
                        total += x;
                    }
                    for (double& x : row) x /= total;
                }
                return dist(rows);
            };
            const seme::DistributionMatrix a = random_dist();
            const seme::DistributionMatrix b = random_dist();
            std::vector<int> ids(n);
            for (int& x : ids) x = static_cast<int>(rng() % v);
            const seme::TokenSequence ref = seq(ids);
            const seme::FusionResult r =
                seme::fuse_distributions(a, b, ref, seme::FusionStrategy::min_cross_entropy);
            for (std::size_t t = 0; t < n; ++t) {
                const double ce_a = -std::log(a.rows.at(t, static_cast<std::size_t>(ids[t])));
                const double ce_b = -std::log(b.rows.at(t, static_cast<std::size_t>(ids[t])));
                REQUIRE(r.selected[t] == (ce_a <= ce_b ? 0 : 1));
                // fusion dominance: fused CE is the minimum of the two
                const double ce_f = -std::log(r.fused.rows.at(t, static_cast<std::size_t>(ids[t])));
                REQUIRE(ce_f <= std::min(ce_a, ce_b) + 1e-12);
            }
        }
    }
    SECTION("average renormalizes") {
        const seme::DistributionMatrix a = dist({{0.5, 0.5}});
        const seme::DistributionMatrix b = dist({{0.9, 0.1}});
        const seme::FusionResult r = seme::fuse_distributions(a, b, seq({0}), seme::FusionStrategy::average);
        REQUIRE(r.fused.rows.at(0, 0) == Catch::Approx(0.7).margin(1e-12));
        REQUIRE(r.fused.rows.at(0, 1) == Catch::Approx(0.3).margin(1e-12));
        REQUIRE(r.selected == std::vector<int>{-1});
    }
    SECTION("shape and reference validation") {
        const seme::DistributionMatrix a = dist({{0.5, 0.5}});
        const seme::DistributionMatrix b = dist({{0.5, 0.5}, {0.5, 0.5}});
        REQUIRE_THROWS_AS(seme::fuse_distributions(a, b, seq({0}), seme::FusionStrategy::average), seme::Error);
        REQUIRE_THROWS_AS(seme::fuse_distributions(a, a, seq({7}), seme::FusionStrategy::average), seme::Error);
        REQUIRE_THROWS_AS(seme::fuse_distributions(a, a, seq({0, 1}), seme::FusionStrategy::average),
                          seme::Error);
        seme::DistributionMatrix bad = dist({{0.5, 0.4}});
        REQUIRE_THROWS_AS(seme::fuse_distributions(bad, bad, seq({0}), seme::FusionStrategy::average),
                          seme::Error);
    }
}

TEST_CASE("alignment and table JSON round-trips") {
    seme::AlignedPair pair;
    pair.src = seq({0, 1}, {"ab", "c"});
    pair.pivot = seq({10, 11, 12}, {"a", "b", "c"});
    pair.map = seme::align_sequences(pair.src, pair.pivot);
    const nlohmann::json mj = seme::alignment_map_json(pair.map);
    REQUIRE(mj.at("cost").get<double>() == 1.0);
    REQUIRE(mj.at("links").size() == 2);

    const seme::VocabMappingTable table = seme::build_vocab_mapping({pair}, seme::MappingMode::statistical);
    const seme::VocabMappingTable back = seme::vocab_table_from_json(seme::vocab_table_json(table));
    REQUIRE(back.mode == table.mode);
    REQUIRE(back.entries.size() == table.entries.size());
    for (const auto& [sid, list] : table.entries) {
        REQUIRE(back.entries.at(sid).size() == list.size());
        for (std::size_t i = 0; i < list.size(); ++i) {
            REQUIRE(back.entries.at(sid)[i].pivot_id == list[i].pivot_id);
            REQUIRE(back.entries.at(sid)[i].weight == list[i].weight);
        }
    }
}
