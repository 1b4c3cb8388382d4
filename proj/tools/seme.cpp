// seme - vocabulary-defined semantics toolkit.
// Subcommands: inspect, bases, validate, transform, merge, align, fuse.
// Exit codes: 0 success, 1 usage/config error, 2 data/validation error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "seme/seme.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw seme::Error("cannot open for writing: " + tmp);
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw seme::Error("write failed: " + tmp);
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw seme::Error("cannot move file into place: " + path + ": " + ec.message());
}

void write_report(const std::string& path, const json& j) {
    write_text_atomic(path, j.dump(2) + "\n");
}

json provenance(const std::string& command, std::uint64_t seed,
                const std::vector<std::pair<std::string, std::string>>& inputs) {
    json in = json::object();
    for (const auto& [label, path] : inputs)
        in[label] = {{"path", path}, {"fingerprint", seme::fingerprint_file(path)}};
    return {{"version", seme::kVersion}, {"command", command}, {"seed", seed}, {"inputs", in}};
}

void print_warnings(const seme::ModelBundle& bundle) {
    for (const std::string& w : bundle.warnings) std::cerr << "warning: " << w << "\n";
}

// Config files are JSON with a "command" discriminator. Precedence:
// explicit flag > config file > built-in default.
json load_config(const std::string& path, const std::string& command) {
    std::ifstream in(path);
    if (!in) throw seme::UsageError("cannot open config file: " + path);
    json cfg;
    try {
        in >> cfg;
    } catch (const json::exception& e) {
        throw seme::UsageError("config file is not valid JSON: " + std::string(e.what()));
    }
    if (!cfg.contains("command") || cfg.at("command").get<std::string>() != command)
        throw seme::UsageError("config file command does not match '" + command + "'");
    return cfg;
}

template <typename T>
void config_override(const CLI::App* cmd, const json& cfg, const char* flag, const char* key, T& var) {
    if (cfg.is_null() || !cfg.contains(key)) return;
    if (cmd->count(flag) > 0) return;
    try {
        var = cfg.at(key).get<T>();
    } catch (const json::exception& e) {
        throw seme::UsageError(std::string("bad config value for '") + key + "': " + e.what());
    }
}

seme::MatrixF tensor_as_matrix(const seme::Tensor& t) {
    if (t.shape.size() != 2) throw seme::Error("tensor '" + t.name + "' is not 2-D");
    seme::MatrixF m(t.shape[0], t.shape[1]);
    m.data = t.data;
    return m;
}

seme::MatrixF load_named_matrix(const std::string& path, const std::string& tensor_name) {
    const seme::TensorArchive archive = seme::read_archive(path);
    const seme::Tensor* t = archive.find(tensor_name);
    if (!t) throw seme::Error("archive '" + path + "' has no tensor '" + tensor_name + "'");
    return tensor_as_matrix(*t);
}

seme::SemanticBasisSet bases_from_head_file(const std::string& path, const seme::SchemaDescriptor& schema,
                                            const seme::PseudoinverseConfig& cfg) {
    const seme::TensorArchive archive = seme::read_archive(path);
    const seme::Tensor head = seme::load_head(archive, schema);
    seme::MatrixF W(head.shape[0], head.shape[1]);
    W.data = head.data;
    return seme::semantic_bases(W, cfg);
}

// Sequences ingest from line-delimited JSON ({"ids":[...],"surfaces":[...]})
// or from an archive's 1-D "ids" tensor (integer-coded f32, one sequence).
std::vector<seme::TokenSequence> load_sequences(const std::string& path) {
    std::vector<seme::TokenSequence> out;
    if (path.ends_with(".json") || path.ends_with(".jsonl")) {
        std::ifstream in(path);
        if (!in) throw seme::Error("cannot open sequence file: " + path);
        std::string line;
        while (std::getline(in, line)) {
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            json j;
            try {
                j = json::parse(line);
            } catch (const json::exception& e) {
                throw seme::Error("bad sequence line in " + path + ": " + e.what());
            }
            seme::TokenSequence seq;
            seq.ids = j.at("ids").get<std::vector<int>>();
            if (j.contains("surfaces")) seq.surface_forms = j.at("surfaces").get<std::vector<std::string>>();
            seme::validate_sequence(seq);
            out.push_back(std::move(seq));
        }
    } else {
        const seme::TensorArchive archive = seme::read_archive(path);
        const seme::Tensor* t = archive.find("ids");
        if (!t) throw seme::Error("archive '" + path + "' has no 'ids' tensor");
        seme::TokenSequence seq;
        seq.ids.reserve(t->data.size());
        for (float x : t->data) seq.ids.push_back(static_cast<int>(std::lround(x)));
        seme::validate_sequence(seq);
        out.push_back(std::move(seq));
    }
    if (out.empty()) throw seme::Error("no sequences in " + path);
    return out;
}

seme::DistributionMatrix load_distribution(const std::string& path) {
    seme::DistributionMatrix dist;
    const seme::MatrixF m = load_named_matrix(path, "dist");
    dist.rows = seme::MatrixD(m.rows, m.cols);
    for (std::size_t i = 0; i < m.data.size(); ++i) dist.rows.data[i] = m.data[i];
    seme::validate_distribution(dist);
    return dist;
}

std::string file_stem(const std::string& path) {
    return fs::path(path).stem().string();
}

// ---- subcommand state ----

struct InspectArgs {
    std::string archive;
    std::string json_out;
};

struct BasesArgs {
    std::string config, model, out, report;
    double rcond = 1e-6;
    double max_condition = 1e8;
    std::string layer_prefix = "layers.";
    std::string head_name = "head";
};

struct ValidateArgs {
    std::string config, model, out, csv, reps;
    std::size_t trials = 100;
    std::uint64_t seed = 0;
    std::string rep_source = "gaussian";
    double rcond = 1e-6;
    std::string layer_prefix = "layers.";
    std::string head_name = "head";
};

struct TransformArgs {
    std::string config, source_head, target_head, reps, out, report;
    std::string calibration = "norm_match";
    std::string combination = "lstsq";
    double temperature = 1.0;
    double rcond = 1e-6;
    std::string head_name = "head";
};

struct MergeArgs {
    std::string config, pivot, out, report;
    std::vector<std::string> models;
    double tau = 20.0;
    std::string normalization = "sum_to_one";
    std::string erase = "majority_sign";
    std::string tie = "drop_all";
    std::string layer_prefix = "layers.";
    std::string head_name = "head";
};

struct AlignArgs {
    std::string config, src, pivot, out, table;
    std::string mode = "statistical";
    double sub_cost = 1.0;
    double extra_cost = 1.0;
    std::size_t max_span = 0;
    std::size_t fuzzy_max_dist = 2;
};

struct FuseArgs {
    std::string config, a, b, reference, out, report;
    std::string strategy = "min_cross_entropy";
    std::string map_a, map_b;
    std::size_t pivot_vocab = 0;
    std::string unmapped = "renormalize";
    int unknown_id = 0;
};

seme::Calibration parse_calibration(const std::string& s) {
    if (s == "none") return seme::Calibration::none;
    if (s == "norm_match") return seme::Calibration::norm_match;
    if (s == "basis_scale") return seme::Calibration::basis_scale;
    throw seme::UsageError("unknown calibration '" + s + "'");
}

seme::CombinationRule parse_combination(const std::string& s) {
    if (s == "lstsq") return seme::CombinationRule::cosine_least_squares;
    if (s == "probability") return seme::CombinationRule::probability_weighted;
    throw seme::UsageError("unknown combination rule '" + s + "'");
}

seme::CoefficientNormalization parse_normalization(const std::string& s) {
    if (s == "sum_to_one") return seme::CoefficientNormalization::sum_to_one;
    if (s == "mean_one") return seme::CoefficientNormalization::mean_one;
    if (s == "raw") return seme::CoefficientNormalization::raw;
    throw seme::UsageError("unknown normalization '" + s + "'");
}

seme::MappingMode parse_mode(const std::string& s) {
    if (s == "exact") return seme::MappingMode::exact;
    if (s == "fuzzy") return seme::MappingMode::fuzzy;
    if (s == "statistical") return seme::MappingMode::statistical;
    throw seme::UsageError("unknown mapping mode '" + s + "'");
}

// ---- command implementations ----

void run_inspect(const InspectArgs& args) {
    const seme::TensorArchive archive = seme::read_archive(args.archive);
    json tensors = json::array();
    std::size_t total = 0;
    for (const seme::Tensor& t : archive.tensors) {
        tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"dtype", "F32"}, {"elements", t.element_count()}});
        total += t.element_count();
        std::cout << t.name << "  F32  [";
        for (std::size_t i = 0; i < t.shape.size(); ++i) std::cout << (i ? ", " : "") << t.shape[i];
        std::cout << "]\n";
    }
    json meta = json::object();
    for (const auto& [k, v] : archive.metadata) {
        meta[k] = v;
        std::cout << "metadata " << k << " = " << v << "\n";
    }
    std::cout << archive.tensors.size() << " tensors, " << total << " elements\n";
    json summary = provenance("inspect", 0, {{"archive", args.archive}});
    summary.update(json{{"tensor_count", archive.tensors.size()},
                        {"total_elements", total},
                        {"tensors", tensors},
                        {"metadata", meta}});
    if (!args.json_out.empty()) write_report(args.json_out, summary);
    else std::cout << summary.dump(2) << "\n";
}

void run_bases(const CLI::App* cmd, BasesArgs& args) {
    json cfg;
    if (!args.config.empty()) cfg = load_config(args.config, "bases");
    config_override(cmd, cfg, "--model", "model", args.model);
    config_override(cmd, cfg, "--out", "out", args.out);
    config_override(cmd, cfg, "--report", "report", args.report);
    config_override(cmd, cfg, "--rcond", "rcond", args.rcond);
    config_override(cmd, cfg, "--max-condition", "max_condition", args.max_condition);
    config_override(cmd, cfg, "--layer-prefix", "layer_prefix", args.layer_prefix);
    config_override(cmd, cfg, "--head-name", "head_name", args.head_name);
    if (args.model.empty() || args.out.empty()) throw seme::UsageError("bases: --model and --out are required");

    const seme::SchemaDescriptor schema{args.layer_prefix, args.head_name, "head_orientation"};
    const seme::PseudoinverseConfig pcfg{args.rcond, args.max_condition};
    const seme::TensorArchive archive = seme::read_archive(args.model);
    const seme::Tensor head = seme::load_head(archive, schema);
    seme::MatrixF W(head.shape[0], head.shape[1]);
    W.data = head.data;
    seme::PseudoinverseDiagnostics diag;
    const seme::SemanticBasisSet set = seme::semantic_bases(W, pcfg, &diag);
    if (diag.condition_warning)
        std::cerr << "warning: LM-head condition " << diag.condition << " exceeds " << args.max_condition << "\n";
    if (set.zero_norm_rows() > 0)
        std::cerr << "warning: " << set.zero_norm_rows() << " zero-norm basis rows\n";
    seme::write_archive(seme::basis_to_archive(set, args.rcond), args.out);
    std::cout << "wrote " << set.vocab_size() << "x" << set.latent_dim() << " basis set: " << args.out << "\n";

    if (!args.report.empty()) {
        json rep = provenance("bases", 0, {{"model", args.model}});
        rep.update(json{{"rcond", args.rcond},
                        {"source_fingerprint", set.source_head_fingerprint},
                        {"vocab_size", set.vocab_size()},
                        {"latent_dim", set.latent_dim()},
                        {"zero_norm_rows", set.zero_norm_rows()},
                        {"diagnostics",
                         {{"sigma_max", diag.sigma_max},
                          {"sigma_min_kept", diag.sigma_min_kept},
                          {"rank", diag.rank},
                          {"condition", diag.condition},
                          {"condition_warning", diag.condition_warning}}}});
        write_report(args.report, rep);
    }
}

void run_validate(const CLI::App* cmd, ValidateArgs& args, bool strict_seed, unsigned threads) {
    json cfg;
    if (!args.config.empty()) cfg = load_config(args.config, "validate");
    config_override(cmd, cfg, "--model", "model", args.model);
    config_override(cmd, cfg, "--out", "out", args.out);
    config_override(cmd, cfg, "--csv", "csv", args.csv);
    config_override(cmd, cfg, "--trials", "trials", args.trials);
    config_override(cmd, cfg, "--seed", "seed", args.seed);
    config_override(cmd, cfg, "--rep-source", "rep_source", args.rep_source);
    config_override(cmd, cfg, "--reps", "reps", args.reps);
    config_override(cmd, cfg, "--rcond", "rcond", args.rcond);
    if (strict_seed && cmd->count("--seed") == 0)
        throw seme::UsageError("--strict-seed requires an explicit --seed");
    if (args.model.empty() || args.out.empty()) throw seme::UsageError("validate: --model and --out are required");
    if (args.trials == 0) throw seme::UsageError("validate: trials must be >= 1");

    const seme::SchemaDescriptor schema{args.layer_prefix, args.head_name, "head_orientation"};
    const seme::TensorArchive archive = seme::read_archive(args.model);
    const seme::ModelBundle bundle = seme::load_model_bundle(archive, schema);
    print_warnings(bundle);

    seme::ValidationConfig vcfg;
    vcfg.trials = args.trials;
    vcfg.seed = args.seed;
    vcfg.threads = threads;
    std::vector<std::pair<std::string, std::string>> inputs{{"model", args.model}};
    if (args.rep_source == "gaussian") {
        vcfg.rep_source = seme::RepresentationSource::gaussian;
    } else if (args.rep_source == "archive") {
        if (args.reps.empty()) throw seme::UsageError("validate: --reps is required with --rep-source archive");
        vcfg.rep_source = seme::RepresentationSource::archive_rows;
        vcfg.activation_rows = load_named_matrix(args.reps, "reps");
        inputs.emplace_back("reps", args.reps);
    } else {
        throw seme::UsageError("unknown rep source '" + args.rep_source + "'");
    }

    const seme::ValidationReport report = seme::run_validation(bundle, vcfg, {args.rcond, 1e8});
    json rep = provenance("validate", args.seed, inputs);
    rep.update(seme::validation_report_json(report));
    write_report(args.out, rep);
    if (args.csv.empty()) args.csv = fs::path(args.out).replace_extension(".csv").string();
    write_text_atomic(args.csv, seme::validation_report_csv(report));
    std::cout << "parallelism semantic mean " << report.mean_semantic << " (stddev " << report.stddev_semantic
              << "), random mean " << report.mean_random << " (stddev " << report.stddev_random << ")\n";
}

void run_transform(const CLI::App* cmd, TransformArgs& args, unsigned threads) {
    json cfg;
    if (!args.config.empty()) cfg = load_config(args.config, "transform");
    config_override(cmd, cfg, "--source-head", "source_head", args.source_head);
    config_override(cmd, cfg, "--target-head", "target_head", args.target_head);
    config_override(cmd, cfg, "--reps", "reps", args.reps);
    config_override(cmd, cfg, "--out", "out", args.out);
    config_override(cmd, cfg, "--report", "report", args.report);
    config_override(cmd, cfg, "--calibration", "calibration", args.calibration);
    config_override(cmd, cfg, "--combination", "combination", args.combination);
    config_override(cmd, cfg, "--temperature", "temperature", args.temperature);
    config_override(cmd, cfg, "--rcond", "rcond", args.rcond);
    if (args.source_head.empty() || args.target_head.empty() || args.reps.empty() || args.out.empty())
        throw seme::UsageError("transform: --source-head, --target-head, --reps and --out are required");
    if (args.temperature <= 0.0) throw seme::UsageError("transform: temperature must be positive");
    if (args.report.empty()) args.report = fs::path(args.out).replace_extension(".report.json").string();

    const seme::SchemaDescriptor schema{"layers.", args.head_name, "head_orientation"};
    const seme::PseudoinverseConfig pcfg{args.rcond, 1e8};
    const seme::Tensor src_head = seme::load_head(seme::read_archive(args.source_head), schema);
    seme::MatrixF Wx(src_head.shape[0], src_head.shape[1]);
    Wx.data = src_head.data;
    seme::TransformPlan plan = seme::make_transform_plan(
        seme::semantic_bases(Wx, pcfg), bases_from_head_file(args.target_head, schema, pcfg),
        args.temperature, parse_calibration(args.calibration), parse_combination(args.combination));

    const seme::MatrixF reps = load_named_matrix(args.reps, "reps");
    auto [out_rows, report] = seme::transform_rows(reps, plan, threads);

    // cosine-softmax vs raw-logit-softmax argmax agreement on the source
    // side; reported for comparison, never asserted
    std::size_t mode_agree = 0;
    for (std::size_t i = 0; i < reps.rows; ++i) {
        const auto cos_p = seme::semantic_probabilities(reps.row(i), plan.source_bases, args.temperature);
        const auto logit_p = seme::logit_probabilities(reps.row(i), Wx, args.temperature);
        std::size_t am_c = 0, am_l = 0;
        for (std::size_t k = 1; k < cos_p.probs.size(); ++k)
            if (cos_p.probs[k] > cos_p.probs[am_c]) am_c = k;
        for (std::size_t k = 1; k < logit_p.probs.size(); ++k)
            if (logit_p.probs[k] > logit_p.probs[am_l]) am_l = k;
        mode_agree += am_c == am_l ? 1 : 0;
    }

    seme::TensorArchive out_archive;
    seme::Tensor t;
    t.name = "reps";
    t.shape = {out_rows.rows, out_rows.cols};
    t.data = out_rows.data;
    out_archive.add(std::move(t));
    out_archive.metadata["source_fingerprint"] = plan.source_bases.source_head_fingerprint;
    out_archive.metadata["target_fingerprint"] = plan.target_bases.source_head_fingerprint;
    out_archive.metadata["calibration"] = seme::to_string(plan.calibration);
    out_archive.metadata["combination"] = seme::to_string(plan.combination);
    seme::write_archive(out_archive, args.out);
    std::cout << "transformed " << out_rows.rows << " representations -> " << args.out << "\n";

    json rep = provenance("transform", 0,
                          {{"source_head", args.source_head},
                           {"target_head", args.target_head},
                           {"reps", args.reps}});
    rep.update(seme::transform_report_json(report, plan));
    rep["cosine_logit_argmax_agreement"] =
        reps.rows == 0 ? 1.0 : static_cast<double>(mode_agree) / static_cast<double>(reps.rows);
    write_report(args.report, rep);
}

void run_merge(const CLI::App* cmd, MergeArgs& args) {
    json cfg;
    if (!args.config.empty()) cfg = load_config(args.config, "merge");
    config_override(cmd, cfg, "--pivot", "pivot", args.pivot);
    config_override(cmd, cfg, "--model", "models", args.models);
    config_override(cmd, cfg, "--out", "out", args.out);
    config_override(cmd, cfg, "--report", "report", args.report);
    config_override(cmd, cfg, "--tau", "tau", args.tau);
    config_override(cmd, cfg, "--normalization", "normalization", args.normalization);
    config_override(cmd, cfg, "--erase", "erase", args.erase);
    config_override(cmd, cfg, "--tie", "tie", args.tie);
    config_override(cmd, cfg, "--layer-prefix", "layer_prefix", args.layer_prefix);
    config_override(cmd, cfg, "--head-name", "head_name", args.head_name);
    if (args.pivot.empty() || args.models.empty() || args.out.empty())
        throw seme::UsageError("merge: --pivot, at least one --model and --out are required");
    if (!(args.tau > 0.0 && args.tau <= 100.0)) throw seme::UsageError("merge: tau must be in (0, 100]");

    const seme::SchemaDescriptor schema{args.layer_prefix, args.head_name, "head_orientation"};
    seme::MergeRecipe recipe;
    recipe.tau = args.tau;
    recipe.normalization = parse_normalization(args.normalization);
    if (args.erase == "majority_sign") recipe.erase = seme::ErasePolicy::majority_sign;
    else if (args.erase == "off") recipe.erase = seme::ErasePolicy::off;
    else throw seme::UsageError("unknown erase policy '" + args.erase + "'");
    if (args.tie == "drop_all") recipe.tie = seme::TiePolicy::drop_all;
    else if (args.tie == "keep_larger_magnitude_side") recipe.tie = seme::TiePolicy::keep_larger_magnitude_side;
    else throw seme::UsageError("unknown tie policy '" + args.tie + "'");

    const seme::ModelBundle pivot = seme::load_model_bundle(seme::read_archive(args.pivot), schema);
    print_warnings(pivot);
    std::vector<seme::ModelBundle> models;
    std::vector<std::pair<std::string, std::string>> inputs{{"pivot", args.pivot}};
    for (std::size_t k = 0; k < args.models.size(); ++k) {
        seme::ModelBundle m = seme::load_model_bundle(seme::read_archive(args.models[k]), schema);
        if (m.metadata.find("model_id") == m.metadata.end())
            m.metadata["model_id"] = file_stem(args.models[k]);
        inputs.emplace_back("model_" + std::to_string(k), args.models[k]);
        models.push_back(std::move(m));
    }

    const seme::MergeResult result = seme::merge(models, pivot, recipe, schema);
    seme::write_archive(seme::bundle_to_archive(result.merged, schema), args.out);
    std::cout << "merged " << models.size() << " models onto pivot -> " << args.out << "\n";

    if (!args.report.empty()) {
        json rep = provenance("merge", 0, inputs);
        rep.update(seme::merge_report_json(result.report));
        write_report(args.report, rep);
    }
}

void run_align(const CLI::App* cmd, AlignArgs& args) {
    json cfg;
    if (!args.config.empty()) cfg = load_config(args.config, "align");
    config_override(cmd, cfg, "--src", "src", args.src);
    config_override(cmd, cfg, "--pivot", "pivot", args.pivot);
    config_override(cmd, cfg, "--out", "out", args.out);
    config_override(cmd, cfg, "--table", "table", args.table);
    config_override(cmd, cfg, "--mode", "mode", args.mode);
    config_override(cmd, cfg, "--sub-cost", "sub_cost", args.sub_cost);
    config_override(cmd, cfg, "--extra-cost", "extra_cost", args.extra_cost);
    config_override(cmd, cfg, "--max-span", "max_span", args.max_span);
    config_override(cmd, cfg, "--fuzzy-max-dist", "fuzzy_max_dist", args.fuzzy_max_dist);
    if (args.src.empty() || args.pivot.empty() || args.out.empty())
        throw seme::UsageError("align: --src, --pivot and --out are required");

    const auto src_seqs = load_sequences(args.src);
    const auto pivot_seqs = load_sequences(args.pivot);
    if (src_seqs.size() != pivot_seqs.size())
        throw seme::Error("align: source and pivot sequence counts differ");

    const seme::EditCosts costs{args.sub_cost, args.extra_cost, args.max_span};
    std::vector<seme::AlignedPair> pairs;
    json pairs_json = json::array();
    double total_cost = 0.0;
    for (std::size_t i = 0; i < src_seqs.size(); ++i) {
        seme::AlignedPair pair;
        pair.src = src_seqs[i];
        pair.pivot = pivot_seqs[i];
        pair.map = seme::align_sequences(pair.src, pair.pivot, costs);
        total_cost += pair.map.cost;
        pairs_json.push_back(seme::alignment_map_json(pair.map));
        pairs.push_back(std::move(pair));
    }

    json rep = provenance("align", 0, {{"src", args.src}, {"pivot", args.pivot}});
    rep.update(json{{"pairs", pairs_json},
                    {"total_cost", total_cost},
                    {"costs",
                     {{"substitution", args.sub_cost}, {"extra_token", args.extra_cost}, {"max_span", args.max_span}}}});
    write_report(args.out, rep);
    std::cout << "aligned " << pairs.size() << " pair(s), total cost " << total_cost << " -> " << args.out << "\n";

    if (!args.table.empty()) {
        const seme::VocabMappingTable table =
            seme::build_vocab_mapping(pairs, parse_mode(args.mode), args.fuzzy_max_dist);
        json tj = provenance("align", 0, {{"src", args.src}, {"pivot", args.pivot}});
        tj.update(seme::vocab_table_json(table));
        write_report(args.table, tj);
        std::cout << "wrote " << table.entries.size() << "-entry " << args.mode << " mapping table -> "
                  << args.table << "\n";
    }
}

void run_fuse(const CLI::App* cmd, FuseArgs& args) {
    json cfg;
    if (!args.config.empty()) cfg = load_config(args.config, "fuse");
    config_override(cmd, cfg, "--a", "a", args.a);
    config_override(cmd, cfg, "--b", "b", args.b);
    config_override(cmd, cfg, "--reference", "reference", args.reference);
    config_override(cmd, cfg, "--out", "out", args.out);
    config_override(cmd, cfg, "--report", "report", args.report);
    config_override(cmd, cfg, "--strategy", "strategy", args.strategy);
    config_override(cmd, cfg, "--map-a", "map_a", args.map_a);
    config_override(cmd, cfg, "--map-b", "map_b", args.map_b);
    config_override(cmd, cfg, "--pivot-vocab", "pivot_vocab", args.pivot_vocab);
    config_override(cmd, cfg, "--unmapped", "unmapped", args.unmapped);
    config_override(cmd, cfg, "--unknown-id", "unknown_id", args.unknown_id);
    if (args.a.empty() || args.b.empty() || args.reference.empty() || args.out.empty())
        throw seme::UsageError("fuse: --a, --b, --reference and --out are required");

    seme::FusionStrategy strategy;
    if (args.strategy == "min_cross_entropy") strategy = seme::FusionStrategy::min_cross_entropy;
    else if (args.strategy == "average") strategy = seme::FusionStrategy::average;
    else throw seme::UsageError("unknown fusion strategy '" + args.strategy + "'");
    seme::UnmappedPolicy policy;
    if (args.unmapped == "renormalize") policy = seme::UnmappedPolicy::renormalize;
    else if (args.unmapped == "unknown") policy = seme::UnmappedPolicy::route_to_unknown;
    else throw seme::UsageError("unknown unmapped policy '" + args.unmapped + "'");

    seme::DistributionMatrix a = load_distribution(args.a);
    seme::DistributionMatrix b = load_distribution(args.b);
    std::vector<std::pair<std::string, std::string>> inputs{
        {"a", args.a}, {"b", args.b}, {"reference", args.reference}};

    auto apply_map = [&](seme::DistributionMatrix& dist, const std::string& table_path, const char* label) {
        if (table_path.empty()) return;
        if (args.pivot_vocab == 0)
            throw seme::UsageError("fuse: --pivot-vocab is required when applying a mapping table");
        std::ifstream in(table_path);
        if (!in) throw seme::Error("cannot open mapping table: " + table_path);
        json tj;
        in >> tj;
        const seme::VocabMappingTable table = seme::vocab_table_from_json(tj);
        seme::DistributionMatrix mapped;
        mapped.rows = seme::MatrixD(dist.rows.rows, args.pivot_vocab);
        for (std::size_t t = 0; t < dist.rows.rows; ++t) {
            const auto row = seme::map_distribution(dist.rows.row(t), table, args.pivot_vocab, policy,
                                                    args.unknown_id);
            std::copy(row.begin(), row.end(), mapped.rows.row(t).begin());
        }
        dist = std::move(mapped);
        inputs.emplace_back(label, table_path);
    };
    apply_map(a, args.map_a, "map_a");
    apply_map(b, args.map_b, "map_b");

    const auto ref_seqs = load_sequences(args.reference);
    const seme::FusionResult result = seme::fuse_distributions(a, b, ref_seqs.front(), strategy);

    seme::TensorArchive out_archive;
    seme::Tensor t;
    t.name = "dist";
    t.shape = {result.fused.rows.rows, result.fused.rows.cols};
    t.data.resize(result.fused.rows.data.size());
    for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = static_cast<float>(result.fused.rows.data[i]);
    out_archive.add(std::move(t));
    out_archive.metadata["strategy"] = args.strategy;
    seme::write_archive(out_archive, args.out);
    std::cout << "fused " << result.fused.rows.rows << " positions -> " << args.out << "\n";

    if (!args.report.empty()) {
        json trace = json::array();
        for (std::size_t i = 0; i < result.selected.size(); ++i) {
            const int s = result.selected[i];
            json entry = {{"position", i}, {"source", s == 0 ? "a" : (s == 1 ? "b" : "average")}};
            if (strategy == seme::FusionStrategy::min_cross_entropy) {
                const int ref = ref_seqs.front().ids[i];
                entry["ce_a"] = -std::log(a.rows.at(i, static_cast<std::size_t>(ref)));
                entry["ce_b"] = -std::log(b.rows.at(i, static_cast<std::size_t>(ref)));
            }
            trace.push_back(entry);
        }
        json rep = provenance("fuse", 0, inputs);
        rep.update(json{{"strategy", args.strategy}, {"trace", trace}});
        write_report(args.report, rep);
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"vocabulary-defined semantics toolkit: model merging and latent transformation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", seme::kVersion);

    unsigned threads = 0;
    bool strict_seed = false;
    app.add_option("--threads", threads, "worker thread count (default: SEME_THREADS or hardware)");
    app.add_flag("--strict-seed", strict_seed, "require an explicit --seed on randomized commands");

    InspectArgs inspect_args;
    auto* inspect = app.add_subcommand("inspect", "summarize a tensor archive");
    inspect->add_option("archive", inspect_args.archive, "archive path")->required();
    inspect->add_option("--json", inspect_args.json_out, "write the JSON summary to a file");

    BasesArgs bases_args;
    auto* bases = app.add_subcommand("bases", "compute semantic bases from an LM-head");
    bases->add_option("--config", bases_args.config, "JSON config file");
    bases->add_option("--model", bases_args.model);
    bases->add_option("--out", bases_args.out);
    bases->add_option("--report", bases_args.report);
    bases->add_option("--rcond", bases_args.rcond);
    bases->add_option("--max-condition", bases_args.max_condition);
    bases->add_option("--layer-prefix", bases_args.layer_prefix);
    bases->add_option("--head-name", bases_args.head_name);

    ValidateArgs validate_args;
    auto* validate = app.add_subcommand("validate", "empirical validation of semantics decomposition");
    validate->add_option("--config", validate_args.config, "JSON config file");
    validate->add_option("--model", validate_args.model);
    validate->add_option("--out", validate_args.out);
    validate->add_option("--csv", validate_args.csv);
    validate->add_option("--trials", validate_args.trials);
    validate->add_option("--seed", validate_args.seed);
    validate->add_option("--rep-source", validate_args.rep_source, "gaussian | archive");
    validate->add_option("--reps", validate_args.reps);
    validate->add_option("--rcond", validate_args.rcond);

    TransformArgs transform_args;
    auto* transform = app.add_subcommand("transform", "semantics-preservative representation transform");
    transform->add_option("--config", transform_args.config, "JSON config file");
    transform->add_option("--source-head", transform_args.source_head);
    transform->add_option("--target-head", transform_args.target_head);
    transform->add_option("--reps", transform_args.reps);
    transform->add_option("--out", transform_args.out);
    transform->add_option("--report", transform_args.report);
    transform->add_option("--calibration", transform_args.calibration, "none | norm_match | basis_scale");
    transform->add_option("--combination", transform_args.combination, "lstsq | probability");
    transform->add_option("--temperature", transform_args.temperature);
    transform->add_option("--rcond", transform_args.rcond);
    transform->add_option("--head-name", transform_args.head_name);

    MergeArgs merge_args;
    auto* merge = app.add_subcommand("merge", "pivot-relative Select/Compute/Erase merge");
    merge->add_option("--config", merge_args.config, "JSON config file");
    merge->add_option("--pivot", merge_args.pivot);
    merge->add_option("--model", merge_args.models, "source model (repeatable)");
    merge->add_option("--out", merge_args.out);
    merge->add_option("--report", merge_args.report);
    merge->add_option("--tau", merge_args.tau, "retained fraction in (0, 100]");
    merge->add_option("--normalization", merge_args.normalization, "sum_to_one | mean_one | raw");
    merge->add_option("--erase", merge_args.erase, "majority_sign | off");
    merge->add_option("--tie", merge_args.tie, "drop_all | keep_larger_magnitude_side");
    merge->add_option("--layer-prefix", merge_args.layer_prefix);
    merge->add_option("--head-name", merge_args.head_name);

    AlignArgs align_args;
    auto* align = app.add_subcommand("align", "DP sequence segmentation and vocabulary mapping");
    align->add_option("--config", align_args.config, "JSON config file");
    align->add_option("--src", align_args.src);
    align->add_option("--pivot", align_args.pivot);
    align->add_option("--out", align_args.out, "alignment map JSON");
    align->add_option("--table", align_args.table, "also build a vocabulary mapping table");
    align->add_option("--mode", align_args.mode, "exact | fuzzy | statistical");
    align->add_option("--sub-cost", align_args.sub_cost);
    align->add_option("--extra-cost", align_args.extra_cost);
    align->add_option("--max-span", align_args.max_span);
    align->add_option("--fuzzy-max-dist", align_args.fuzzy_max_dist);

    FuseArgs fuse_args;
    auto* fuse = app.add_subcommand("fuse", "fuse aligned output distributions");
    fuse->add_option("--config", fuse_args.config, "JSON config file");
    fuse->add_option("--a", fuse_args.a);
    fuse->add_option("--b", fuse_args.b);
    fuse->add_option("--reference", fuse_args.reference);
    fuse->add_option("--out", fuse_args.out);
    fuse->add_option("--report", fuse_args.report);
    fuse->add_option("--strategy", fuse_args.strategy, "min_cross_entropy | average");
    fuse->add_option("--map-a", fuse_args.map_a, "vocabulary mapping table for a");
    fuse->add_option("--map-b", fuse_args.map_b, "vocabulary mapping table for b");
    fuse->add_option("--pivot-vocab", fuse_args.pivot_vocab);
    fuse->add_option("--unmapped", fuse_args.unmapped, "renormalize | unknown");
    fuse->add_option("--unknown-id", fuse_args.unknown_id);

    inspect->callback([&] { run_inspect(inspect_args); });
    bases->callback([&] { run_bases(bases, bases_args); });
    validate->callback([&] { run_validate(validate, validate_args, strict_seed, threads); });
    transform->callback([&] { run_transform(transform, transform_args, threads); });
    merge->callback([&] { run_merge(merge, merge_args); });
    align->callback([&] { run_align(align, align_args); });
    fuse->callback([&] { run_fuse(fuse, fuse_args); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const seme::UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const seme::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
