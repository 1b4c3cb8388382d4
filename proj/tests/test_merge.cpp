#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "seme/merge.hpp"
#include "seme/rng.hpp"

namespace {

seme::Tensor make_tensor(std::string name, std::vector<std::size_t> shape, std::vector<float> data) {
    seme::Tensor t;
    t.name = std::move(name);
    t.shape = std::move(shape);
    t.data = std::move(data);
    return t;
}

// Weights on a 1/64 grid keep fusion-vector subtraction exact in f32, which
// the bitwise reconstruction examples rely on.
std::vector<float> grid_values(std::size_t n, std::mt19937_64& rng) {
    std::vector<float> out(n);
    for (float& x : out) x = static_cast<float>(static_cast<int>(rng() % 257) - 128) / 64.0f;
    return out;
}

seme::ModelBundle toy_bundle(const std::string& id, std::mt19937_64& rng, std::size_t layers = 2) {
    seme::ModelBundle b;
    for (std::size_t i = 0; i < layers; ++i) {
        std::map<std::string, seme::Tensor> group;
        group.emplace("w", make_tensor("w", {2, 2}, grid_values(4, rng)));
        b.layers.push_back(std::move(group));
    }
    b.lm_head = make_tensor("head", {2, 4}, grid_values(8, rng));
    b.latent_dim = 2;
    b.vocab_size = 4;
    b.metadata["model_id"] = id;
    return b;
}

oracle::FlatModel flatten(const seme::ModelBundle& b) {
    oracle::FlatModel flat;
    flat.id = b.model_id();
    for (const auto& [name, t] : seme::named_parameters(b)) flat.tensors[name] = t->data;
    return flat;
}

std::vector<float> delta_of(const seme::FusionVector& fv, const std::string& name) {
    return fv.deltas.at(name).data;
}

} // namespace

TEST_CASE("fusion vectors subtract the pivot") {
    std::mt19937_64 rng(3);
    const seme::ModelBundle pivot = toy_bundle("pivot", rng);

    SECTION("a model equal to the pivot has zero deltas") {
        const auto deltas = seme::fusion_vectors({pivot}, pivot);
        for (const auto& [name, t] : deltas[0].deltas)
            for (float x : t.data) REQUIRE(x == 0.0f);
    }
    SECTION("a zero pivot leaves the model weights") {
        seme::ModelBundle zero = pivot;
        for (auto& group : zero.layers)
            for (auto& [k, t] : group) std::fill(t.data.begin(), t.data.end(), 0.0f);
        std::fill(zero.lm_head.data.begin(), zero.lm_head.data.end(), 0.0f);
        const seme::ModelBundle m = toy_bundle("m", rng);
        const auto deltas = seme::fusion_vectors({m}, zero);
        REQUIRE(delta_of(deltas[0], "layers.0.w") == m.layers[0].at("w").data);
        REQUIRE(delta_of(deltas[0], "head") == m.lm_head.data);
    }
    SECTION("element-wise subtraction matches a direct recompute") {
        const seme::ModelBundle a = toy_bundle("a", rng);
        const auto deltas = seme::fusion_vectors({a}, pivot);
        const oracle::FlatModel flat_pivot = flatten(pivot);
        for (const auto& [name, t] : seme::named_parameters(a)) {
            const auto& d = delta_of(deltas[0], name);
            const auto& p = flat_pivot.tensors.at(name);
            for (std::size_t i = 0; i < d.size(); ++i) REQUIRE(d[i] == t->data[i] - p[i]);
        }
    }
    SECTION("schema mismatch is rejected") {
        seme::ModelBundle bad = toy_bundle("bad", rng, 3);
        REQUIRE_THROWS_AS(seme::fusion_vectors({bad}, pivot), seme::Error);
    }
}

TEST_CASE("variance selection keeps the top tau percent") {
    std::mt19937_64 rng(7);
    const seme::ModelBundle pivot = toy_bundle("pivot", rng);

    SECTION("tau=100 keeps everything") {
        const auto deltas = seme::fusion_vectors({toy_bundle("a", rng), toy_bundle("b", rng)}, pivot);
        const auto mask = seme::select_top_variance(deltas, 100.0);
        for (const auto& [name, m] : mask.masks)
            for (std::uint8_t bit : m) REQUIRE(bit == 1);
    }
    SECTION("a single high-variance element wins at tau=25") {
        seme::FusionVector d1, d2;
        d1.source_model_id = "a";
        d2.source_model_id = "b";
        d1.deltas.emplace("t", make_tensor("t", {4}, {1.0f, 0.0f, 0.0f, 0.0f}));
        d2.deltas.emplace("t", make_tensor("t", {4}, {-1.0f, 0.0f, 0.0f, 0.0f}));
        const auto mask = seme::select_top_variance({d1, d2}, 25.0);
        REQUIRE(mask.masks.at("t") == std::vector<std::uint8_t>{1, 0, 0, 0});
    }
    SECTION("matches a full sort oracle") {
        const std::vector<seme::ModelBundle> models = {toy_bundle("a", rng), toy_bundle("b", rng),
                                                       toy_bundle("c", rng)};
        const auto deltas = seme::fusion_vectors(models, pivot);
        const auto mask = seme::select_top_variance(deltas, 33.0);
        for (const auto& [name, m] : mask.masks) {
            const std::size_t n = m.size();
            std::vector<double> score(n, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                double mean = 0.0;
                for (const auto& fv : deltas) mean += fv.deltas.at(name).data[i];
                mean /= 3.0;
                for (const auto& fv : deltas) {
                    const double dv = fv.deltas.at(name).data[i] - mean;
                    score[i] += dv * dv / 3.0;
                }
            }
            std::vector<std::size_t> order(n);
            std::iota(order.begin(), order.end(), 0);
            std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
                if (score[x] != score[y]) return score[x] > score[y];
                return x < y;
            });
            const std::size_t keep = static_cast<std::size_t>(std::ceil(0.33 * static_cast<double>(n)));
            std::vector<std::uint8_t> expected(n, 0);
            for (std::size_t r2 = 0; r2 < keep; ++r2) expected[order[r2]] = 1;
            REQUIRE(m == expected);
        }
    }
    SECTION("masks are monotone in tau") {
        const std::vector<seme::ModelBundle> models = {toy_bundle("a", rng), toy_bundle("b", rng)};
        const auto deltas = seme::fusion_vectors(models, pivot);
        const double taus[] = {5.0, 20.0, 50.0, 100.0};
        for (int i = 0; i + 1 < 4; ++i) {
            const auto lo = seme::select_top_variance(deltas, taus[i]);
            const auto hi = seme::select_top_variance(deltas, taus[i + 1]);
            for (const auto& [name, m] : lo.masks)
                for (std::size_t e = 0; e < m.size(); ++e)
                    if (m[e]) REQUIRE(hi.masks.at(name)[e]);
        }
    }
    SECTION("K=1 ranks by magnitude") {
        seme::FusionVector d1;
        d1.source_model_id = "only";
        d1.deltas.emplace("t", make_tensor("t", {4}, {0.1f, -5.0f, 2.0f, 0.0f}));
        const auto mask = seme::select_top_variance({d1}, 50.0);
        REQUIRE(mask.masks.at("t") == std::vector<std::uint8_t>{0, 1, 1, 0});
    }
    SECTION("bad tau and empty input are rejected") {
        REQUIRE_THROWS_AS(seme::select_top_variance({}, 50.0), seme::Error);
        seme::FusionVector d1;
        d1.deltas.emplace("t", make_tensor("t", {1}, {1.0f}));
        REQUIRE_THROWS_AS(seme::select_top_variance({d1}, 0.0), seme::UsageError);
        REQUIRE_THROWS_AS(seme::select_top_variance({d1}, 101.0), seme::UsageError);
    }
}

TEST_CASE("coefficients follow squared magnitudes") {
    seme::FusionVector d1, d2;
    d1.source_model_id = "a";
    d2.source_model_id = "b";
    d1.deltas.emplace("t", make_tensor("t", {3}, {1.0f, -2.0f, 0.5f}));
    d2.deltas.emplace("t", make_tensor("t", {3}, {2.0f, -4.0f, 1.0f}));
    seme::SelectionMask full;
    full.tau = 100.0;
    full.masks["t"] = {1, 1, 1};

    SECTION("1:4 squared ratio under sum_to_one") {
        const auto c = seme::compute_coefficients({d1, d2}, full, seme::CoefficientNormalization::sum_to_one);
        REQUIRE(c.etas[0] == Catch::Approx(0.2).margin(1e-12));
        REQUIRE(c.etas[1] == Catch::Approx(0.8).margin(1e-12));
    }
    SECTION("single model gets eta 1") {
        const auto c = seme::compute_coefficients({d1}, full, seme::CoefficientNormalization::sum_to_one);
        REQUIRE(c.etas == std::vector<double>{1.0});
    }
    SECTION("mean_one scales to mean 1") {
        const auto c = seme::compute_coefficients({d1, d2}, full, seme::CoefficientNormalization::mean_one);
        REQUIRE(c.etas[0] + c.etas[1] == Catch::Approx(2.0).margin(1e-12));
        REQUIRE(c.etas[1] / c.etas[0] == Catch::Approx(4.0).margin(1e-9));
    }
    SECTION("raw keeps the sums of squares") {
        const auto c = seme::compute_coefficients({d1, d2}, full, seme::CoefficientNormalization::raw);
        REQUIRE(c.etas[0] == Catch::Approx(5.25).margin(1e-9));
        REQUIRE(c.etas[1] == Catch::Approx(21.0).margin(1e-9));
    }
    SECTION("partial masks match the masked oracle") {
        std::mt19937_64 rng(11);
        const seme::ModelBundle pivot = toy_bundle("pivot", rng);
        const std::vector<seme::ModelBundle> models = {toy_bundle("a", rng), toy_bundle("b", rng),
                                                       toy_bundle("c", rng)};
        const auto deltas = seme::fusion_vectors(models, pivot);
        const auto mask = seme::select_top_variance(deltas, 40.0);
        const auto c = seme::compute_coefficients(deltas, mask, seme::CoefficientNormalization::sum_to_one);
        std::vector<double> raw(3, 0.0);
        for (std::size_t k = 0; k < 3; ++k)
            for (const auto& [name, m] : mask.masks)
                for (std::size_t i = 0; i < m.size(); ++i)
                    if (m[i]) {
                        const double x = deltas[k].deltas.at(name).data[i];
                        raw[k] += x * x;
                    }
        const double total = raw[0] + raw[1] + raw[2];
        for (std::size_t k = 0; k < 3; ++k) REQUIRE(c.etas[k] == Catch::Approx(raw[k] / total).margin(1e-12));
    }
    SECTION("scaling one delta by c scales its raw weight by c^2") {
        seme::FusionVector scaled = d1;
        for (auto& [name, t] : scaled.deltas)
            for (float& x : t.data) x *= 3.0f;
        const auto base = seme::compute_coefficients({d1}, full, seme::CoefficientNormalization::raw);
        const auto big = seme::compute_coefficients({scaled}, full, seme::CoefficientNormalization::raw);
        REQUIRE(big.etas[0] == Catch::Approx(9.0 * base.etas[0]).epsilon(1e-12));
    }
    SECTION("all-zero deltas fall back to uniform") {
        seme::FusionVector z1 = d1, z2 = d2;
        for (auto& [name, t] : z1.deltas) std::fill(t.data.begin(), t.data.end(), 0.0f);
        for (auto& [name, t] : z2.deltas) std::fill(t.data.begin(), t.data.end(), 0.0f);
        const auto c = seme::compute_coefficients({z1, z2}, full, seme::CoefficientNormalization::sum_to_one);
        REQUIRE(c.uniform_fallback);
        REQUIRE(c.etas == std::vector<double>{0.5, 0.5});
    }
}

TEST_CASE("sign-minority erasure") {
    seme::SelectionMask full;
    full.tau = 100.0;
    full.masks["t"] = {1};
    auto single = [&](std::vector<float> vals, seme::TiePolicy tie) {
        std::vector<seme::FusionVector> deltas(vals.size());
        for (std::size_t k = 0; k < vals.size(); ++k) {
            deltas[k].source_model_id = "m" + std::to_string(k);
            deltas[k].deltas.emplace("t", make_tensor("t", {1}, {vals[k]}));
        }
        const auto pruned = seme::erase_sign_minority(deltas, full, tie);
        std::vector<float> out(vals.size());
        for (std::size_t k = 0; k < vals.size(); ++k) out[k] = pruned[k].deltas.at("t").data[0];
        return out;
    };

    SECTION("2-vs-1 majority zeroes the minority") {
        REQUIRE(single({1.0f, 2.0f, -5.0f}, seme::TiePolicy::drop_all) ==
                std::vector<float>{1.0f, 2.0f, 0.0f});
    }
    SECTION("ties drop everything under drop_all") {
        REQUIRE(single({1.0f, -1.0f}, seme::TiePolicy::drop_all) == std::vector<float>{0.0f, 0.0f});
    }
    SECTION("ties can keep the heavier side") {
        REQUIRE(single({1.0f, -2.0f}, seme::TiePolicy::keep_larger_magnitude_side) ==
                std::vector<float>{0.0f, -2.0f});
        // equal magnitudes still drop
        REQUIRE(single({1.0f, -1.0f}, seme::TiePolicy::keep_larger_magnitude_side) ==
                std::vector<float>{0.0f, 0.0f});
    }
    SECTION("zero entries are neutral") {
        REQUIRE(single({0.0f, -3.0f, 0.0f}, seme::TiePolicy::drop_all) ==
                std::vector<float>{0.0f, -3.0f, 0.0f});
    }
    SECTION("random sign patterns match the brute-force oracle") {
        std::mt19937_64 rng(13);
        for (int trial = 0; trial < 1000; ++trial) {
            const std::size_t K = 2 + rng() % 4;
            std::vector<float> vals(K);
            for (float& v : vals)
                v = static_cast<float>(static_cast<int>(rng() % 7) - 3); // includes zeros and ties
            const seme::TiePolicy tie =
                rng() % 2 ? seme::TiePolicy::drop_all : seme::TiePolicy::keep_larger_magnitude_side;
            const std::vector<float> got = single(vals, tie);
            const std::vector<bool> keep = oracle::majority_keep(vals, tie == seme::TiePolicy::drop_all ? 0 : 1);
            for (std::size_t k = 0; k < K; ++k) REQUIRE(got[k] == (keep[k] ? vals[k] : 0.0f));
        }
    }
    SECTION("survivors share one sign") {
        std::mt19937_64 rng(17);
        for (int trial = 0; trial < 300; ++trial) {
            const std::size_t K = 2 + rng() % 4;
            std::vector<float> vals(K);
            for (float& v : vals) v = static_cast<float>(seme::standard_normal(rng));
            const std::vector<float> got = single(vals, seme::TiePolicy::drop_all);
            bool pos = false, neg = false;
            for (float x : got) {
                pos = pos || x > 0.0f;
                neg = neg || x < 0.0f;
            }
            REQUIRE_FALSE((pos && neg));
        }
    }
    SECTION("unselected entries are zeroed everywhere") {
        seme::SelectionMask partial;
        partial.tau = 50.0;
        partial.masks["t"] = {1, 0};
        seme::FusionVector d1;
        d1.source_model_id = "a";
        d1.deltas.emplace("t", make_tensor("t", {2}, {1.0f, 9.0f}));
        const auto pruned = seme::erase_sign_minority({d1}, partial);
        REQUIRE(pruned[0].deltas.at("t").data == std::vector<float>{1.0f, 0.0f});
    }
}

TEST_CASE("merge reconstruction") {
    std::mt19937_64 rng(19);
    const seme::ModelBundle pivot = toy_bundle("pivot", rng);

    SECTION("K=1 at tau=100 reproduces the source model bitwise") {
        const seme::ModelBundle a = toy_bundle("a", rng);
        seme::MergeRecipe recipe;
        recipe.tau = 100.0;
        const seme::MergeResult result = seme::merge({a}, pivot, recipe);
        REQUIRE(result.report.etas.size() == 1);
        REQUIRE(result.report.etas[0].second == 1.0);
        for (const auto& [name, t] : seme::named_parameters(a))
            REQUIRE(flatten(result.merged).tensors.at(name) == t->data);
    }
    SECTION("all-zero pruned deltas return the pivot bitwise") {
        const seme::MergeResult result = seme::merge({pivot, pivot}, pivot, {});
        for (const auto& [name, t] : seme::named_parameters(pivot))
            REQUIRE(flatten(result.merged).tensors.at(name) == t->data);
    }
    SECTION("identical deltas under sum_to_one add exactly one delta") {
        seme::ModelBundle a = toy_bundle("a", rng);
        seme::ModelBundle b = a;
        b.metadata["model_id"] = "b";
        seme::MergeRecipe recipe;
        recipe.tau = 100.0;
        const seme::MergeResult result = seme::merge({a, b}, pivot, recipe);
        const auto merged = flatten(result.merged);
        const auto flat_a = flatten(a);
        for (const auto& [name, t] : seme::named_parameters(pivot))
            REQUIRE(merged.tensors.at(name) == flat_a.tensors.at(name));
    }
    SECTION("three-model pipeline matches the straight-line oracle bitwise") {
        const std::vector<seme::ModelBundle> models = {toy_bundle("a", rng), toy_bundle("b", rng),
                                                       toy_bundle("c", rng)};
        seme::MergeRecipe recipe;
        recipe.tau = 40.0;
        const seme::MergeResult result = seme::merge(models, pivot, recipe);
        std::vector<oracle::FlatModel> flat_models;
        for (const auto& m : models) flat_models.push_back(flatten(m));
        const auto expected =
            oracle::merge_pipeline(flat_models, flatten(pivot), 40.0, "sum_to_one", true, 0);
        REQUIRE(flatten(result.merged).tensors == expected);
    }
    SECTION("model order does not change the result") {
        const seme::ModelBundle a = toy_bundle("a", rng);
        const seme::ModelBundle b = toy_bundle("b", rng);
        const seme::ModelBundle c = toy_bundle("c", rng);
        const seme::MergeResult fwd = seme::merge({a, b, c}, pivot, {});
        const seme::MergeResult rev = seme::merge({c, a, b}, pivot, {});
        REQUIRE(flatten(fwd.merged).tensors == flatten(rev.merged).tensors);
        // etas follow their models
        std::map<std::string, double> fwd_etas(fwd.report.etas.begin(), fwd.report.etas.end());
        std::map<std::string, double> rev_etas(rev.report.etas.begin(), rev.report.etas.end());
        REQUIRE(fwd_etas == rev_etas);
    }
    SECTION("non-finite results are rejected") {
        seme::ModelBundle pivot_big = pivot;
        seme::ModelBundle overflow = pivot;
        std::fill(pivot_big.lm_head.data.begin(), pivot_big.lm_head.data.end(), 3.0e38f);
        std::fill(overflow.lm_head.data.begin(), overflow.lm_head.data.end(), -3.0e38f);
        seme::MergeRecipe recipe;
        recipe.tau = 100.0;
        REQUIRE_THROWS_AS(seme::merge({overflow}, pivot_big, recipe), seme::Error);
    }
    SECTION("report carries retained and conflict counts") {
        seme::ModelBundle up = pivot, down = pivot;
        up.metadata["model_id"] = "up";
        down.metadata["model_id"] = "down";
        up.layers[0].at("w").data[0] += 1.0f;
        down.layers[0].at("w").data[0] -= 1.0f;
        seme::MergeRecipe recipe;
        recipe.tau = 25.0;
        const seme::MergeResult result = seme::merge({up, down}, pivot, recipe);
        const auto& stats = result.report.per_tensor.at("layers.0.w");
        REQUIRE(stats.elements == 4);
        REQUIRE(stats.retained == 1);
        REQUIRE(stats.erased == 2); // opposite signs, tie dropped both
        const auto merged = flatten(result.merged);
        REQUIRE(merged.tensors.at("layers.0.w") == flatten(pivot).tensors.at("layers.0.w"));
    }
    SECTION("erase off keeps conflicting updates") {
        seme::ModelBundle up = pivot, down = pivot;
        up.metadata["model_id"] = "up";
        down.metadata["model_id"] = "down";
        up.layers[0].at("w").data[0] += 1.0f;
        down.layers[0].at("w").data[0] -= 2.0f;
        seme::MergeRecipe recipe;
        recipe.tau = 100.0;
        recipe.erase = seme::ErasePolicy::off;
        const seme::MergeResult result = seme::merge({up, down}, pivot, recipe);
        const float merged0 = flatten(result.merged).tensors.at("layers.0.w")[0];
        REQUIRE(merged0 != flatten(pivot).tensors.at("layers.0.w")[0]);
    }
}

TEST_CASE("eta count must match delta count") {
    std::mt19937_64 rng(23);
    const seme::ModelBundle pivot = toy_bundle("pivot", rng);
    const auto deltas = seme::fusion_vectors({toy_bundle("a", rng)}, pivot);
    seme::MergeCoefficients etas;
    etas.etas = {0.5, 0.5};
    REQUIRE_THROWS_AS(seme::apply_merge(pivot, deltas, etas), seme::Error);
}
