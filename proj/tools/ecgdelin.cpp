// ecgdelin: ECG heartbeat delineation toolkit.
//
// Subcommands cover the full pipeline: preprocess (ingest + filter + segment
// + cache), split, train (single run or --cv), search (random hyperparameter
// search), evaluate (sample metrics / QRS beat matching / boundary scoring),
// delineate (records -> wave events), and export (reports -> CSV).
//
// Every command writes a manifest holding content hashes of its inputs and a
// hash of its effective configuration; re-running with identical inputs is a
// no-op unless --force is given. No timestamps are written, so re-runs with
// the same configuration produce byte-identical artifacts.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <json.hpp>
#include <set>
#include <sstream>

#include "ecgdelin/dataset.hpp"
#include "ecgdelin/delineate.hpp"
#include "ecgdelin/dsp.hpp"
#include "ecgdelin/eval.hpp"
#include "ecgdelin/nn.hpp"
#include "ecgdelin/train.hpp"
#include "ecgdelin/util.hpp"
#include "ecgdelin/wfdb.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ecg;

namespace {

void log_line(const std::string& message) {
    std::fprintf(stderr, "[ecgdelin] %s\n", message.c_str());
}

std::string hash_file(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    return fnv1a64_hex(bytes.data(), bytes.size());
}

std::string hash_json(const json& j) {
    return fnv1a64_hex(j.dump());
}

/// True when a manifest at `path` already records the same configuration and
/// input hashes, i.e. the command would reproduce existing outputs.
bool outputs_current(const fs::path& path, const json& manifest, bool force) {
    if (force || !fs::exists(path)) return false;
    try {
        const json existing = json::parse(read_file_text(path.string()));
        return existing.at("config_hash") == manifest.at("config_hash") &&
               existing.at("inputs") == manifest.at("inputs");
    } catch (const std::exception&) {
        return false;
    }
}

json make_manifest(const std::string& command, json config, json inputs) {
    json manifest;
    manifest["tool"] = "ecgdelin";
    manifest["format_version"] = 1;
    manifest["command"] = command;
    manifest["config"] = std::move(config);
    manifest["config_hash"] = hash_json(manifest["config"]);
    manifest["inputs"] = std::move(inputs);
    return manifest;
}

void write_manifest(const fs::path& path, json manifest) {
    manifest["config_hash"] = hash_json(manifest.at("config"));
    write_file_text(path.string(), manifest.dump(2) + "\n");
}

void write_json(const fs::path& path, const json& j) {
    write_file_text(path.string(), j.dump(2) + "\n");
}

// --- shared option bundles ----------------------------------------------------------

struct FilterOptions {
    double target_fs = 250.0;
    int order = 3;
    double low_cut = 0.5;
    double high_cut = 40.0;
    int channel = 0;
    bool no_filter = false;

    dataset::PrepareOptions prepare_options() const {
        dataset::PrepareOptions opts;
        opts.target_fs = target_fs;
        opts.filter_order = order;
        opts.low_cut = low_cut;
        opts.high_cut = high_cut;
        opts.channel = channel;
        opts.apply_filter = !no_filter;
        return opts;
    }
    json to_json() const {
        return {{"target_fs", target_fs}, {"order", order},     {"low_cut", low_cut},
                {"high_cut", high_cut},   {"channel", channel}, {"filter", !no_filter}};
    }
};

void add_filter_options(CLI::App* cmd, FilterOptions& opts) {
    cmd->add_option("--target-fs", opts.target_fs, "Working sampling rate (Hz)");
    cmd->add_option("--filter-order", opts.order, "Band-pass prototype order");
    cmd->add_option("--low-cut", opts.low_cut, "Band-pass low cutoff (Hz)");
    cmd->add_option("--high-cut", opts.high_cut, "Band-pass high cutoff (Hz)");
    cmd->add_option("--channel", opts.channel, "Signal channel to use");
    cmd->add_flag("--no-filter", opts.no_filter, "Skip the zero-phase band-pass");
}

struct ArchOptions {
    std::vector<int> conv_filters = {32, 64, 128};
    std::vector<int> lstm_units = {250, 125};
    int kernel_size = 3;
    double dropout = 0.2;

    nn::ModelConfig model_config() const {
        nn::ModelConfig config;
        config.conv_filters = conv_filters;
        config.lstm_units = lstm_units;
        config.kernel_size = kernel_size;
        config.dropout = dropout;
        return config;
    }
};

void add_arch_options(CLI::App* cmd, ArchOptions& opts) {
    cmd->add_option("--conv-filters", opts.conv_filters, "Conv layer filter counts")
        ->delimiter(',');
    cmd->add_option("--lstm-units", opts.lstm_units, "BiLSTM layer unit counts")->delimiter(',');
    cmd->add_option("--kernel-size", opts.kernel_size, "Conv kernel size");
    cmd->add_option("--dropout", opts.dropout, "Dropout probability before the dense layer");
}

void add_hyper_options(CLI::App* cmd, train::TrainConfig& cfg) {
    cmd->add_option("--alpha", cfg.alpha, "Adam learning rate");
    cmd->add_option("--beta1", cfg.beta1, "Adam first-moment decay");
    cmd->add_option("--beta2", cfg.beta2, "Adam second-moment decay");
    cmd->add_option("--epsilon", cfg.epsilon, "Adam stability term");
    cmd->add_option("--batch-size", cfg.batch_size, "Segments per Adam update");
    cmd->add_option("--max-epochs", cfg.max_epochs, "Epoch cap");
    cmd->add_option("--patience", cfg.patience, "Early-stopping patience (epochs)");
    cmd->add_option("--min-delta", cfg.min_delta, "Required validation-loss decrease");
    cmd->add_option("--seed", cfg.seed, "Run seed");
}

json train_config_to_json(const train::TrainConfig& cfg) {
    return {{"alpha", cfg.alpha},           {"beta1", cfg.beta1},
            {"beta2", cfg.beta2},           {"epsilon", cfg.epsilon},
            {"batch_size", cfg.batch_size}, {"max_epochs", cfg.max_epochs},
            {"patience", cfg.patience},     {"min_delta", cfg.min_delta},
            {"seed", cfg.seed}};
}

std::vector<std::string> annotation_suffixes_for(const std::string& db,
                                                 const std::string& explicit_list) {
    if (!explicit_list.empty()) {
        std::vector<std::string> out;
        std::istringstream in(explicit_list);
        std::string token;
        while (std::getline(in, token, ',')) {
            if (!token.empty()) out.push_back(token);
        }
        return out;
    }
    if (db == "qtdb") return {"q1c", "pu0"};
    if (db == "mitdb") return {"atr"};
    return {"q1c", "pu0", "atr"};
}

// --- report serialization -------------------------------------------------------------

json class_metrics_to_json(const eval::MetricsReport& report) {
    json per_class;
    for (int c = 0; c < dataset::kNumClasses; ++c) {
        const auto& m = report.per_class[static_cast<std::size_t>(c)];
        json entry = {{"tp", m.tp}, {"fp", m.fp}, {"fn", m.fn}, {"tn", m.tn}};
        entry["sensitivity"] = m.sensitivity ? json(*m.sensitivity) : json(nullptr);
        entry["precision"] = m.precision ? json(*m.precision) : json(nullptr);
        entry["f_score"] = m.f_score ? json(*m.f_score) : json(nullptr);
        per_class[dataset::class_name(static_cast<dataset::SampleClass>(c))] = entry;
    }
    return per_class;
}

json averaged_to_json(const eval::AveragedMetrics& avg) {
    return {{"micro_precision", avg.micro_precision},
            {"micro_sensitivity", avg.micro_sensitivity},
            {"macro_precision", avg.macro_precision ? json(*avg.macro_precision) : json(nullptr)},
            {"macro_sensitivity",
             avg.macro_sensitivity ? json(*avg.macro_sensitivity) : json(nullptr)},
            {"macro_excluded_precision", avg.macro_excluded_precision},
            {"macro_excluded_sensitivity", avg.macro_excluded_sensitivity}};
}

json roc_curve_to_json(const eval::RocCurve& curve) {
    return {{"auc", curve.auc}, {"fpr", curve.fpr}, {"tpr", curve.tpr}};
}

json beat_match_to_json(const eval::BeatMatchResult& r) {
    json out = {{"n_beats", r.n_beats}, {"tp", r.tp}, {"fp", r.fp}, {"fn", r.fn}};
    out["sensitivity_percent"] =
        r.sensitivity_percent ? json(*r.sensitivity_percent) : json(nullptr);
    out["precision_percent"] = r.precision_percent ? json(*r.precision_percent) : json(nullptr);
    out["error_rate_percent"] = r.error_rate_percent ? json(*r.error_rate_percent) : json(nullptr);
    return out;
}

json confusion_to_json(const eval::ConfusionMatrix& cm) {
    json rows = json::array();
    for (const auto& row : cm.counts) rows.push_back(row);
    return rows;
}

// --- cached segments and splits ---------------------------------------------------------

struct LoadedSplit {
    json j;
    std::vector<std::string> train_records;
    std::vector<std::string> test_records;
    std::vector<std::vector<std::size_t>> folds;
};

LoadedSplit load_split(const std::string& path) {
    LoadedSplit split;
    split.j = json::parse(read_file_text(path));
    split.train_records = split.j.at("train_records").get<std::vector<std::string>>();
    split.test_records = split.j.at("test_records").get<std::vector<std::string>>();
    split.folds = split.j.at("folds").get<std::vector<std::vector<std::size_t>>>();
    return split;
}

std::vector<std::size_t> segments_of_records(const dataset::SegmentCache& cache,
                                             const std::vector<std::string>& records) {
    const std::set<std::string> wanted(records.begin(), records.end());
    std::vector<std::size_t> indices;
    for (std::size_t i = 0; i < cache.segments.size(); ++i) {
        if (wanted.count(cache.segments[i].record_name)) indices.push_back(i);
    }
    return indices;
}

/// Hashes a record's header, signal file, and the first annotation file found
/// among `suffixes` into the manifest's input map.
void hash_record_inputs(const std::string& dir, const std::string& name,
                        const std::vector<std::string>& suffixes, json& inputs) {
    const auto hea = (fs::path(dir) / (name + ".hea")).string();
    if (!fs::exists(hea))
        throw Error("missing header " + hea + "; place PhysioNet-format files (.hea, .dat, " +
                    "annotation files) under " + dir);
    inputs[name + ".hea"] = hash_file(hea);
    const auto header = wfdb::parse_header(read_file_text(hea));
    if (!header.signals.empty()) {
        const auto dat = (fs::path(dir) / header.signals[0].file_name).string();
        if (fs::exists(dat)) inputs[header.signals[0].file_name] = hash_file(dat);
    }
    for (const auto& suffix : suffixes) {
        const auto ann = (fs::path(dir) / (name + "." + suffix)).string();
        if (fs::exists(ann)) {
            inputs[name + "." + suffix] = hash_file(ann);
            break;
        }
    }
}

// --- preprocess -----------------------------------------------------------------------

struct PreprocessArgs {
    std::string in_dir;
    std::string out_path;
    std::string db = "auto";
    std::string ann_suffixes;
    std::vector<std::string> records;
    FilterOptions filter;
    bool force = false;
};

int run_preprocess(const PreprocessArgs& args) {
    const auto suffixes = annotation_suffixes_for(args.db, args.ann_suffixes);
    std::vector<std::string> names = args.records;
    if (names.empty()) names = wfdb::list_records(args.in_dir);
    if (names.empty())
        throw Error("no records found in " + args.in_dir +
                    " (expected a RECORDS file or *.hea headers)");

    json config = args.filter.to_json();
    config["db"] = args.db;
    config["annotation_suffixes"] = suffixes;
    config["records"] = names;

    json inputs;
    for (const auto& name : names) hash_record_inputs(args.in_dir, name, suffixes, inputs);

    json manifest = make_manifest("preprocess", config, inputs);
    const fs::path manifest_path = args.out_path + ".manifest.json";
    if (outputs_current(manifest_path, manifest, args.force)) {
        log_line("outputs up to date: " + args.out_path + " (use --force to rebuild)");
        return 0;
    }

    dataset::SegmentCache cache;
    json record_info;
    int total_conflicts = 0;
    for (const auto& name : names) {
        const auto record = wfdb::read_record(args.in_dir, name, suffixes);
        const auto prepared = dataset::prepare_record(record, args.filter.prepare_options());
        const auto segments = dataset::segment_record(prepared.signal, prepared.labels, name);
        cache.segments.insert(cache.segments.end(), segments.begin(), segments.end());
        total_conflicts += prepared.overlap_conflicts;
        record_info[name] = {{"annotation_suffix", record.annotation_suffix},
                             {"n_segments", segments.size()},
                             {"source_fs", record.header.sampling_frequency},
                             {"overlap_conflicts", prepared.overlap_conflicts}};
        log_line("preprocess " + name + ": " + std::to_string(segments.size()) + " segments");
    }

    json cache_manifest = config;
    cache_manifest["record_info"] = record_info;
    cache_manifest["n_segments"] = cache.segments.size();
    cache_manifest["segment_length"] = dataset::kSegmentLength;
    cache.manifest_json = cache_manifest.dump();

    dataset::write_segment_cache(args.out_path, cache);
    manifest["outputs"] = {args.out_path};
    manifest["n_records"] = names.size();
    manifest["n_segments"] = cache.segments.size();
    manifest["overlap_conflicts"] = total_conflicts;
    write_manifest(manifest_path, manifest);
    std::printf("preprocessed %zu records into %zu segments -> %s\n", names.size(),
                cache.segments.size(), args.out_path.c_str());
    return 0;
}

// --- split -----------------------------------------------------------------------------

struct SplitArgs {
    std::string cache_path;
    std::string out_path;
    std::string mode = "84-21";
    std::uint64_t seed = 0;
    int folds = 5;
    bool force = false;
};

int run_split(const SplitArgs& args) {
    double train_ratio = 0.8;
    if (args.mode == "84-21") train_ratio = 0.8;
    else if (args.mode == "79-26") train_ratio = 79.0 / 105.0;
    else throw Error("split: unknown mode '" + args.mode + "' (expected 84-21 or 79-26)");

    json config = {{"mode", args.mode},
                   {"seed", args.seed},
                   {"folds", args.folds},
                   {"train_ratio", train_ratio}};
    json inputs = {{args.cache_path, hash_file(args.cache_path)}};
    json manifest = make_manifest("split", config, inputs);
    const fs::path manifest_path = args.out_path + ".manifest.json";
    if (outputs_current(manifest_path, manifest, args.force)) {
        log_line("outputs up to date: " + args.out_path);
        return 0;
    }

    const auto cache = dataset::read_segment_cache(args.cache_path);
    std::set<std::string> name_set;
    for (const auto& seg : cache.segments) name_set.insert(seg.record_name);
    const std::vector<std::string> names(name_set.begin(), name_set.end());

    const auto split = dataset::split_records(names, args.seed, train_ratio);
    const auto train_indices = segments_of_records(cache, split.train_records);
    std::vector<dataset::Segment> train_segments;
    train_segments.reserve(train_indices.size());
    for (std::size_t idx : train_indices) train_segments.push_back(cache.segments[idx]);
    const auto local_folds = dataset::stratified_kfold(train_segments, args.folds, args.seed);

    // Fold entries are indices into the cache's segment order.
    std::vector<std::vector<std::size_t>> folds(local_folds.size());
    for (std::size_t f = 0; f < local_folds.size(); ++f) {
        for (std::size_t local : local_folds[f]) folds[f].push_back(train_indices[local]);
        std::sort(folds[f].begin(), folds[f].end());
    }

    json out;
    out["mode"] = args.mode;
    out["seed"] = args.seed;
    out["train_ratio"] = train_ratio;
    out["n_records"] = names.size();
    out["train_records"] = split.train_records;
    out["test_records"] = split.test_records;
    out["folds"] = folds;
    out["cache_hash"] = inputs[args.cache_path];
    write_json(args.out_path, out);

    manifest["outputs"] = {args.out_path};
    write_manifest(manifest_path, manifest);
    std::printf("split %zu records into %zu train / %zu test (mode %s, seed %llu)\n", names.size(),
                split.train_records.size(), split.test_records.size(), args.mode.c_str(),
                static_cast<unsigned long long>(args.seed));
    return 0;
}

// --- train -----------------------------------------------------------------------------

struct TrainArgs {
    std::string cache_path;
    std::string split_path;
    std::string out_dir;
    bool cv = false;
    int val_fold = 0;
    ArchOptions arch;
    train::TrainConfig cfg;
    bool force = false;
};

int run_train(const TrainArgs& args) {
    json config;
    train::model_config_to_json(args.arch.model_config(), config["architecture"]);
    config["train"] = train_config_to_json(args.cfg);
    config["cv"] = args.cv;
    config["val_fold"] = args.val_fold;
    json inputs = {{args.cache_path, hash_file(args.cache_path)},
                   {args.split_path, hash_file(args.split_path)}};
    json manifest = make_manifest("train", config, inputs);
    fs::create_directories(args.out_dir);
    const fs::path manifest_path = fs::path(args.out_dir) / "manifest.json";
    if (outputs_current(manifest_path, manifest, args.force)) {
        log_line("outputs up to date in " + args.out_dir);
        return 0;
    }

    const auto cache = dataset::read_segment_cache(args.cache_path);
    const auto split = load_split(args.split_path);

    json provenance;
    provenance["seed"] = args.cfg.seed;
    provenance["data_split_hash"] = inputs[args.split_path];
    provenance["cache_hash"] = inputs[args.cache_path];

    std::vector<std::string> outputs;
    if (args.cv) {
        auto result =
            train::run_cv<float>(args.arch.model_config(), cache.segments, split.folds, args.cfg);
        const auto metrics = eval::class_metrics(result.aggregate);
        json cv_report;
        cv_report["confusion_matrix"] = confusion_to_json(result.aggregate);
        cv_report["accuracy"] = metrics.accuracy;
        cv_report["per_class"] = class_metrics_to_json(metrics);
        cv_report["averaged"] = averaged_to_json(eval::averaged_metrics(result.aggregate));
        cv_report["fold_best_val_loss"] = json::array();
        for (std::size_t k = 0; k < result.models.size(); ++k) {
            const std::string ckpt =
                (fs::path(args.out_dir) / ("fold" + std::to_string(k) + ".ckpt")).string();
            json fold_prov = provenance;
            fold_prov["fold"] = k;
            train::save_checkpoint(ckpt, result.models[k], fold_prov);
            const std::string report_path =
                (fs::path(args.out_dir) / ("train_report_fold" + std::to_string(k) + ".txt"))
                    .string();
            write_file_text(report_path, train::train_report_text(result.reports[k]));
            cv_report["fold_best_val_loss"].push_back(result.reports[k].best_val_loss);
            outputs.push_back(ckpt);
            outputs.push_back(report_path);
            log_line("fold " + std::to_string(k) + " best val loss " +
                     std::to_string(result.reports[k].best_val_loss));
        }
        const std::string cv_path = (fs::path(args.out_dir) / "cv_report.json").string();
        write_json(cv_path, cv_report);
        outputs.push_back(cv_path);
        std::printf("cross validation done: accuracy %.4f -> %s\n", metrics.accuracy,
                    cv_path.c_str());
    } else {
        if (args.val_fold < 0 || args.val_fold >= static_cast<int>(split.folds.size()))
            throw Error("train: --val-fold out of range");
        std::vector<std::size_t> train_idx;
        for (std::size_t f = 0; f < split.folds.size(); ++f) {
            if (static_cast<int>(f) == args.val_fold) continue;
            train_idx.insert(train_idx.end(), split.folds[f].begin(), split.folds[f].end());
        }
        nn::Model<float> model(args.arch.model_config());
        model.init_params(args.cfg.seed);
        const auto report = train::fit(
            model, train::make_refs(cache.segments, train_idx),
            train::make_refs(cache.segments, split.folds[static_cast<std::size_t>(args.val_fold)]),
            args.cfg);

        const std::string ckpt = (fs::path(args.out_dir) / "model.ckpt").string();
        train::save_checkpoint(ckpt, model, provenance);
        const std::string report_path = (fs::path(args.out_dir) / "train_report.txt").string();
        write_file_text(report_path, train::train_report_text(report));
        outputs = {ckpt, report_path};
        std::printf("trained %d epochs (best %d, val loss %.6f) -> %s\n", report.stopping_epoch,
                    report.best_epoch, report.best_val_loss, ckpt.c_str());
    }

    manifest["outputs"] = outputs;
    write_manifest(manifest_path, manifest);
    return 0;
}

// --- search ----------------------------------------------------------------------------

struct SearchArgs {
    std::string cache_path;
    std::string split_path;
    std::string out_dir;
    int trials = 10;
    int budget_epochs = 3;
    int val_fold = 0;
    std::vector<double> alpha_range{1e-4, 1e-2};
    std::vector<double> beta1_range{0.85, 0.95};
    std::vector<double> beta2_range{0.99, 0.9999};
    std::vector<double> eps_range{1e-9, 1e-7};
    ArchOptions arch;
    train::TrainConfig cfg;
    bool force = false;
};

int run_search(const SearchArgs& args) {
    json config;
    train::model_config_to_json(args.arch.model_config(), config["architecture"]);
    config["train"] = train_config_to_json(args.cfg);
    config["trials"] = args.trials;
    config["budget_epochs"] = args.budget_epochs;
    config["val_fold"] = args.val_fold;
    config["ranges"] = {{"alpha", args.alpha_range},
                        {"beta1", args.beta1_range},
                        {"beta2", args.beta2_range},
                        {"epsilon", args.eps_range}};
    json inputs = {{args.cache_path, hash_file(args.cache_path)},
                   {args.split_path, hash_file(args.split_path)}};
    json manifest = make_manifest("search", config, inputs);
    fs::create_directories(args.out_dir);
    const fs::path manifest_path = fs::path(args.out_dir) / "manifest.json";
    if (outputs_current(manifest_path, manifest, args.force)) {
        log_line("outputs up to date in " + args.out_dir);
        return 0;
    }

    const auto cache = dataset::read_segment_cache(args.cache_path);
    const auto split = load_split(args.split_path);
    if (args.val_fold < 0 || args.val_fold >= static_cast<int>(split.folds.size()))
        throw Error("search: --val-fold out of range");
    std::vector<std::size_t> train_idx;
    for (std::size_t f = 0; f < split.folds.size(); ++f) {
        if (static_cast<int>(f) == args.val_fold) continue;
        train_idx.insert(train_idx.end(), split.folds[f].begin(), split.folds[f].end());
    }

    train::SearchSpace space;
    space.alpha_lo = args.alpha_range.at(0);
    space.alpha_hi = args.alpha_range.at(1);
    space.beta1_lo = args.beta1_range.at(0);
    space.beta1_hi = args.beta1_range.at(1);
    space.beta2_lo = args.beta2_range.at(0);
    space.beta2_hi = args.beta2_range.at(1);
    space.eps_lo = args.eps_range.at(0);
    space.eps_hi = args.eps_range.at(1);

    train::TrainConfig base = args.cfg;
    base.max_epochs = args.budget_epochs;
    const auto result = train::random_search<float>(
        args.arch.model_config(), cache.segments, train_idx,
        split.folds[static_cast<std::size_t>(args.val_fold)], space, args.trials, base);

    json log;
    log["best"] = train_config_to_json(result.best);
    log["trials"] = json::array();
    for (const auto& trial : result.trials) {
        json t = train_config_to_json(trial.config);
        t["val_loss"] = trial.diverged ? json(nullptr) : json(trial.val_loss);
        t["diverged"] = trial.diverged;
        log["trials"].push_back(t);
    }
    const std::string log_path = (fs::path(args.out_dir) / "search_log.json").string();
    write_json(log_path, log);

    manifest["outputs"] = {log_path};
    write_manifest(manifest_path, manifest);
    std::printf("search done: best alpha %.6g beta1 %.4f beta2 %.6f epsilon %.3g -> %s\n",
                result.best.alpha, result.best.beta1, result.best.beta2, result.best.epsilon,
                log_path.c_str());
    return 0;
}

// --- evaluate --------------------------------------------------------------------------

struct EvaluateArgs {
    std::string checkpoint;
    std::string task = "samples";
    std::string out_dir;
    std::string cache_path;
    std::string split_path;
    std::string subset = "test";
    std::string in_dir;
    std::string db = "auto";
    std::string ann_suffixes;
    std::vector<std::string> records;
    double tolerance_ms = 150.0;
    FilterOptions filter;
    bool force = false;
};

std::vector<std::string> evaluate_record_list(const EvaluateArgs& args) {
    if (!args.records.empty()) return args.records;
    if (!args.split_path.empty()) {
        const auto split = load_split(args.split_path);
        return args.subset == "train" ? split.train_records : split.test_records;
    }
    if (!args.in_dir.empty()) return wfdb::list_records(args.in_dir);
    throw Error("evaluate: need --records, --split, or --in to choose records");
}

void accumulate(eval::BeatMatchResult& total, const eval::BeatMatchResult& part) {
    total.n_beats += part.n_beats;
    total.tp += part.tp;
    total.fp += part.fp;
    total.fn += part.fn;
}

void finalize(eval::BeatMatchResult& r) {
    if (r.n_beats > 0) {
        r.sensitivity_percent = 100.0 * static_cast<double>(r.tp) / static_cast<double>(r.n_beats);
        r.error_rate_percent =
            100.0 * static_cast<double>(r.fp + r.fn) / static_cast<double>(r.n_beats);
    }
    if (r.tp + r.fp > 0)
        r.precision_percent = 100.0 * static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp);
}

int run_evaluate(const EvaluateArgs& args) {
    const auto record_list = evaluate_record_list(args);
    json config = {{"task", args.task},
                   {"subset", args.subset},
                   {"tolerance_ms", args.tolerance_ms},
                   {"db", args.db},
                   {"records", record_list}};
    config["filter"] = args.filter.to_json();
    json inputs = {{args.checkpoint, hash_file(args.checkpoint)}};
    if (!args.cache_path.empty()) inputs[args.cache_path] = hash_file(args.cache_path);
    if (!args.split_path.empty()) inputs[args.split_path] = hash_file(args.split_path);
    if (!args.in_dir.empty() && args.task != "samples") {
        const auto suffixes = annotation_suffixes_for(args.db, args.ann_suffixes);
        for (const auto& name : record_list) hash_record_inputs(args.in_dir, name, suffixes, inputs);
    }

    json manifest = make_manifest("evaluate", config, inputs);
    fs::create_directories(args.out_dir);
    const std::string report_name = args.task == "samples"      ? "eval_report.json"
                                    : args.task == "qrs"        ? "qrs_report.json"
                                                                : "boundary_report.json";
    const fs::path manifest_path = fs::path(args.out_dir) / (report_name + ".manifest.json");
    if (outputs_current(manifest_path, manifest, args.force)) {
        log_line("outputs up to date in " + args.out_dir);
        return 0;
    }

    auto loaded = train::load_checkpoint<float>(args.checkpoint);
    json report;
    report["task"] = args.task;
    report["config"] = config;

    if (args.task == "samples") {
        if (args.cache_path.empty())
            throw Error("evaluate --task samples needs --cache (and --split or --records)");
        const auto cache = dataset::read_segment_cache(args.cache_path);
        const auto indices = segments_of_records(cache, record_list);
        if (indices.empty()) throw Error("evaluate: no segments match the requested records");

        std::vector<dataset::SampleClass> y_true, y_pred;
        std::vector<double> scores;
        for (std::size_t idx : indices) {
            const auto& seg = cache.segments[idx];
            const auto probs = loaded.model.predict(train::segment_input<float>(seg));
            const auto pred = nn::argmax_rows(probs);
            for (std::size_t i = 0; i < pred.size(); ++i) {
                y_true.push_back(seg.labels[i]);
                y_pred.push_back(static_cast<dataset::SampleClass>(pred[i]));
                for (int c = 0; c < dataset::kNumClasses; ++c)
                    scores.push_back(static_cast<double>(probs(i, static_cast<std::size_t>(c))));
            }
        }
        const auto cm = eval::confusion_matrix(y_true, y_pred);
        const auto metrics = eval::class_metrics(cm);
        const auto roc = eval::roc_auc(y_true, scores, y_true.size());

        report["n_segments"] = indices.size();
        report["n_samples"] = y_true.size();
        report["confusion_matrix"] = confusion_to_json(cm);
        report["accuracy"] = metrics.accuracy;
        report["per_class"] = class_metrics_to_json(metrics);
        report["averaged"] = averaged_to_json(eval::averaged_metrics(cm));
        json roc_json;
        for (int c = 0; c < dataset::kNumClasses; ++c) {
            const auto& curve = roc.per_class[static_cast<std::size_t>(c)];
            roc_json[dataset::class_name(static_cast<dataset::SampleClass>(c))] =
                curve ? roc_curve_to_json(*curve) : json(nullptr);
        }
        roc_json["micro"] = roc_curve_to_json(roc.micro);
        roc_json["macro"] = roc.macro ? roc_curve_to_json(*roc.macro) : json(nullptr);
        report["roc"] = roc_json;
        std::printf("samples: accuracy %.4f, micro AUC %.4f over %zu samples\n", metrics.accuracy,
                    roc.micro.auc, y_true.size());
    } else if (args.task == "qrs" || args.task == "boundaries") {
        if (args.in_dir.empty()) throw Error("evaluate: --in directory required for this task");
        const auto suffixes = annotation_suffixes_for(args.db, args.ann_suffixes);
        const auto labeler = delin::make_model_labeler(loaded.model);
        const double tolerance_samples = args.tolerance_ms / 1000.0 * args.filter.target_fs;
        report["tolerance_ms"] = args.tolerance_ms;

        eval::BeatMatchResult qrs_total;
        std::map<eval::Fiducial, eval::BeatMatchResult> fiducial_total;
        json per_record;
        int skipped = 0;
        for (const auto& name : record_list) {
            const auto record = wfdb::read_record(args.in_dir, name, suffixes);
            if (record.annotations.empty()) {
                log_line("skipping " + name + ": no annotation file found");
                ++skipped;
                continue;
            }
            const auto prepared = dataset::prepare_record(record, args.filter.prepare_options());
            const auto result = delin::delineate_record(labeler, prepared.signal, prepared.fs, name);

            if (args.task == "qrs") {
                std::vector<double> predicted;
                for (const auto& seg : result.segments) {
                    if (seg.wave_class == dataset::SampleClass::QRS)
                        predicted.push_back(static_cast<double>(seg.peak));
                }
                std::vector<double> reference;
                for (std::int64_t s : dataset::beat_samples(prepared.annotations))
                    reference.push_back(static_cast<double>(s));
                const auto match = eval::match_beats(predicted, reference, tolerance_samples);
                accumulate(qrs_total, match);
                per_record[name] = beat_match_to_json(match);
                log_line("qrs " + name + ": " + std::to_string(match.tp) + "/" +
                         std::to_string(match.n_beats) + " beats matched");
            } else {
                const auto reference = dataset::extract_annotated_waves(prepared.annotations);
                const auto table =
                    eval::boundary_metrics(result.segments, reference, tolerance_samples);
                for (const auto& [fiducial, r] : table) accumulate(fiducial_total[fiducial], r);
                log_line("boundaries " + name + " scored");
            }
        }
        report["skipped_records"] = skipped;

        if (args.task == "qrs") {
            finalize(qrs_total);
            report["total"] = beat_match_to_json(qrs_total);
            report["per_record"] = per_record;
            std::printf("qrs: %lld beats, Se %.2f%%, P+ %.2f%%, Err %.2f%%\n",
                        static_cast<long long>(qrs_total.n_beats),
                        qrs_total.sensitivity_percent.value_or(0.0),
                        qrs_total.precision_percent.value_or(0.0),
                        qrs_total.error_rate_percent.value_or(0.0));
        } else {
            json fiducials;
            for (auto& [fiducial, r] : fiducial_total) {
                finalize(r);
                fiducials[eval::fiducial_name(fiducial)] = beat_match_to_json(r);
            }
            report["fiducials"] = fiducials;
            std::printf("boundaries scored over %zu records\n",
                        record_list.size() - static_cast<std::size_t>(skipped));
        }
    } else {
        throw Error("evaluate: unknown task '" + args.task + "' (samples, qrs, boundaries)");
    }

    const fs::path report_path = fs::path(args.out_dir) / report_name;
    write_json(report_path, report);
    manifest["outputs"] = {report_path.string()};
    write_manifest(manifest_path, manifest);
    return 0;
}

// --- delineate -------------------------------------------------------------------------

struct DelineateArgs {
    std::string checkpoint;
    std::string in_dir;
    std::string out_dir;
    std::string db = "auto";
    std::string ann_suffixes;
    std::vector<std::string> records;
    FilterOptions filter;
    bool force = false;
};

int run_delineate(const DelineateArgs& args) {
    std::vector<std::string> names = args.records;
    if (names.empty()) names = wfdb::list_records(args.in_dir);
    json config = args.filter.to_json();
    config["records"] = names;
    config["db"] = args.db;
    const auto suffixes = annotation_suffixes_for(args.db, args.ann_suffixes);
    json inputs = {{args.checkpoint, hash_file(args.checkpoint)}};
    for (const auto& name : names) hash_record_inputs(args.in_dir, name, suffixes, inputs);
    json manifest = make_manifest("delineate", config, inputs);
    fs::create_directories(args.out_dir);
    const fs::path manifest_path = fs::path(args.out_dir) / "manifest.json";
    if (outputs_current(manifest_path, manifest, args.force)) {
        log_line("outputs up to date in " + args.out_dir);
        return 0;
    }

    auto loaded = train::load_checkpoint<float>(args.checkpoint);
    const auto labeler = delin::make_model_labeler(loaded.model);

    std::string csv = "record,class,onset,peak,offset,onset_s,peak_s,offset_s\n";
    json all_waves = json::array();
    std::size_t total_waves = 0;
    for (const auto& name : names) {
        const auto record = wfdb::read_record(args.in_dir, name, suffixes);
        const auto prepared = dataset::prepare_record(record, args.filter.prepare_options());
        const auto result = delin::delineate_record(labeler, prepared.signal, prepared.fs, name);
        for (const auto& seg : result.segments) {
            char line[256];
            std::snprintf(line, sizeof line, "%s,%s,%lld,%lld,%lld,%.4f,%.4f,%.4f\n", name.c_str(),
                          dataset::class_name(seg.wave_class), static_cast<long long>(seg.onset),
                          static_cast<long long>(seg.peak), static_cast<long long>(seg.offset),
                          static_cast<double>(seg.onset) / prepared.fs,
                          static_cast<double>(seg.peak) / prepared.fs,
                          static_cast<double>(seg.offset) / prepared.fs);
            csv += line;
            all_waves.push_back({{"record", name},
                                 {"class", dataset::class_name(seg.wave_class)},
                                 {"onset", seg.onset},
                                 {"peak", seg.peak},
                                 {"offset", seg.offset}});
        }
        total_waves += result.segments.size();
        log_line("delineate " + name + ": " + std::to_string(result.segments.size()) + " waves");
    }

    const fs::path csv_path = fs::path(args.out_dir) / "waves.csv";
    const fs::path json_path = fs::path(args.out_dir) / "waves.json";
    write_file_text(csv_path.string(), csv);
    json waves_doc;
    waves_doc["sampling_frequency"] = args.filter.target_fs;
    waves_doc["waves"] = all_waves;
    write_json(json_path, waves_doc);
    manifest["outputs"] = {csv_path.string(), json_path.string()};
    write_manifest(manifest_path, manifest);
    std::printf("delineated %zu records: %zu waves -> %s\n", names.size(), total_waves,
                csv_path.c_str());
    return 0;
}

// --- export ----------------------------------------------------------------------------

struct ExportArgs {
    std::string report_path;
    std::string out_dir;
};

std::string csv_escape(const json& v) {
    if (v.is_null()) return "";
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

int run_export(const ExportArgs& args) {
    const json report = json::parse(read_file_text(args.report_path));
    fs::create_directories(args.out_dir);
    std::vector<std::string> outputs;
    auto emit = [&](const std::string& name, const std::string& text) {
        const auto path = (fs::path(args.out_dir) / name).string();
        write_file_text(path, text);
        outputs.push_back(path);
    };

    if (report.contains("confusion_matrix")) {
        std::string csv = "actual\\predicted,P,QRS,T,NW\n";
        const char* names[] = {"P", "QRS", "T", "NW"};
        const auto& cm = report["confusion_matrix"];
        for (std::size_t r = 0; r < cm.size(); ++r) {
            csv += names[r];
            for (const auto& v : cm[r]) csv += "," + v.dump();
            csv += "\n";
        }
        emit("confusion.csv", csv);
    }
    if (report.contains("per_class")) {
        std::string csv = "class,tp,fp,fn,tn,sensitivity,precision,f_score\n";
        for (const char* name : {"P", "QRS", "T", "NW"}) {
            const auto& m = report["per_class"][name];
            csv += std::string(name) + "," + m["tp"].dump() + "," + m["fp"].dump() + "," +
                   m["fn"].dump() + "," + m["tn"].dump() + "," + csv_escape(m["sensitivity"]) +
                   "," + csv_escape(m["precision"]) + "," + csv_escape(m["f_score"]) + "\n";
        }
        emit("metrics.csv", csv);
    }
    if (report.contains("roc")) {
        for (const auto& [key, curve] : report["roc"].items()) {
            if (curve.is_null()) continue;
            std::string csv = "fpr,tpr\n";
            const auto& fpr = curve["fpr"];
            const auto& tpr = curve["tpr"];
            for (std::size_t i = 0; i < fpr.size(); ++i)
                csv += fpr[i].dump() + "," + tpr[i].dump() + "\n";
            emit("roc_" + key + ".csv", csv);
        }
    }
    if (report.contains("total")) {  // qrs report
        std::string csv = "n_beats,tp,fp,fn,error_rate_percent,sensitivity_percent,precision_percent\n";
        const auto& t = report["total"];
        csv += t["n_beats"].dump() + "," + t["tp"].dump() + "," + t["fp"].dump() + "," +
               t["fn"].dump() + "," + csv_escape(t["error_rate_percent"]) + "," +
               csv_escape(t["sensitivity_percent"]) + "," + csv_escape(t["precision_percent"]) +
               "\n";
        emit("beats.csv", csv);
    }
    if (report.contains("fiducials")) {  // boundary report
        std::string header = "metric";
        std::string beats = "n_beats", se = "sensitivity_percent", pp = "precision_percent";
        for (const auto& [key, r] : report["fiducials"].items()) {
            header += "," + key;
            beats += "," + r["n_beats"].dump();
            se += "," + csv_escape(r["sensitivity_percent"]);
            pp += "," + csv_escape(r["precision_percent"]);
        }
        emit("boundaries.csv", header + "\n" + beats + "\n" + se + "\n" + pp + "\n");
    }
    if (report.contains("trials")) {  // search log
        std::string csv = "alpha,beta1,beta2,epsilon,val_loss,diverged\n";
        for (const auto& t : report["trials"]) {
            csv += t["alpha"].dump() + "," + t["beta1"].dump() + "," + t["beta2"].dump() + "," +
                   t["epsilon"].dump() + "," + csv_escape(t["val_loss"]) + "," +
                   t["diverged"].dump() + "\n";
        }
        emit("trials.csv", csv);
    }
    if (outputs.empty()) {
        log_line("nothing exportable found in " + args.report_path);
        return 1;
    }
    std::printf("exported %zu files to %s\n", outputs.size(), args.out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ECG heartbeat delineation toolkit"};
    app.require_subcommand(1);
    app.set_config("--config", "", "INI config file with [subcommand] sections");
    int threads = 1;
    app.add_option("--threads", threads,
                   "Worker threads (1 = bitwise-reproducible; execution is "
                   "currently always deterministic single-thread)");

    const char* data_root = std::getenv("ECGDELIN_DATA_ROOT");
    const std::string default_in = data_root ? data_root : "";

    PreprocessArgs pre;
    pre.in_dir = default_in;
    auto* cmd_pre = app.add_subcommand("preprocess", "Ingest, filter, label, and cache segments");
    cmd_pre->add_option("--in", pre.in_dir, "WFDB record directory")->required(default_in.empty());
    cmd_pre->add_option("--out", pre.out_path, "Output segment cache file")->required();
    cmd_pre->add_option("--db", pre.db, "Database kind: qtdb, mitdb, auto");
    cmd_pre->add_option("--ann-suffixes", pre.ann_suffixes,
                        "Comma-separated annotation suffix priority (e.g. q1c,pu0)");
    cmd_pre->add_option("--records", pre.records, "Explicit record names")->delimiter(',');
    add_filter_options(cmd_pre, pre.filter);
    cmd_pre->add_flag("--force", pre.force, "Rebuild even if outputs are current");

    SplitArgs split;
    auto* cmd_split = app.add_subcommand("split", "Record-level train/test split + CV folds");
    cmd_split->add_option("--cache", split.cache_path, "Segment cache")->required();
    cmd_split->add_option("--out", split.out_path, "Output split JSON")->required();
    cmd_split->add_option("--mode", split.mode, "Split mode: 84-21 or 79-26");
    cmd_split->add_option("--seed", split.seed, "Shuffle seed");
    cmd_split->add_option("--folds", split.folds, "Number of CV folds");
    cmd_split->add_flag("--force", split.force, "Rebuild even if outputs are current");

    TrainArgs tr;
    auto* cmd_train = app.add_subcommand("train", "Train the sequence labeler");
    cmd_train->add_option("--cache", tr.cache_path, "Segment cache")->required();
    cmd_train->add_option("--split", tr.split_path, "Split JSON")->required();
    cmd_train->add_option("--out", tr.out_dir, "Output directory")->required();
    cmd_train->add_flag("--cv", tr.cv, "5-fold cross validation instead of a single run");
    cmd_train->add_option("--val-fold", tr.val_fold, "Validation fold for single runs");
    add_arch_options(cmd_train, tr.arch);
    add_hyper_options(cmd_train, tr.cfg);
    cmd_train->add_flag("--force", tr.force, "Retrain even if outputs are current");

    SearchArgs se;
    auto* cmd_search = app.add_subcommand("search", "Random hyperparameter search");
    cmd_search->add_option("--cache", se.cache_path, "Segment cache")->required();
    cmd_search->add_option("--split", se.split_path, "Split JSON")->required();
    cmd_search->add_option("--out", se.out_dir, "Output directory")->required();
    cmd_search->add_option("--trials", se.trials, "Number of sampled configurations");
    cmd_search->add_option("--budget-epochs", se.budget_epochs, "Epoch budget per trial");
    cmd_search->add_option("--val-fold", se.val_fold, "Validation fold");
    cmd_search->add_option("--alpha-range", se.alpha_range, "Learning-rate range (log-uniform)")
        ->expected(2);
    cmd_search->add_option("--beta1-range", se.beta1_range, "Beta1 range (uniform)")->expected(2);
    cmd_search->add_option("--beta2-range", se.beta2_range, "Beta2 range (uniform)")->expected(2);
    cmd_search->add_option("--eps-range", se.eps_range, "Epsilon range (log-uniform)")->expected(2);
    add_arch_options(cmd_search, se.arch);
    add_hyper_options(cmd_search, se.cfg);
    cmd_search->add_flag("--force", se.force, "Search even if outputs are current");

    EvaluateArgs ev;
    ev.in_dir = default_in;
    auto* cmd_eval = app.add_subcommand("evaluate", "Score a checkpoint");
    cmd_eval->add_option("--checkpoint", ev.checkpoint, "Model checkpoint")->required();
    cmd_eval->add_option("--task", ev.task, "samples, qrs, or boundaries");
    cmd_eval->add_option("--out", ev.out_dir, "Output directory")->required();
    cmd_eval->add_option("--cache", ev.cache_path, "Segment cache (samples task)");
    cmd_eval->add_option("--split", ev.split_path, "Split JSON for record selection");
    cmd_eval->add_option("--subset", ev.subset, "Record subset from the split: test or train");
    cmd_eval->add_option("--in", ev.in_dir, "WFDB record directory (qrs/boundaries tasks)");
    cmd_eval->add_option("--db", ev.db, "Database kind: qtdb, mitdb, auto");
    cmd_eval->add_option("--ann-suffixes", ev.ann_suffixes, "Annotation suffix priority");
    cmd_eval->add_option("--records", ev.records, "Explicit record names")->delimiter(',');
    cmd_eval->add_option("--tolerance-ms", ev.tolerance_ms, "Match tolerance (milliseconds)");
    add_filter_options(cmd_eval, ev.filter);
    cmd_eval->add_flag("--force", ev.force, "Re-evaluate even if outputs are current");

    DelineateArgs de;
    de.in_dir = default_in;
    auto* cmd_delin = app.add_subcommand("delineate", "Detect wave onsets/peaks/offsets");
    cmd_delin->add_option("--checkpoint", de.checkpoint, "Model checkpoint")->required();
    cmd_delin->add_option("--in", de.in_dir, "WFDB record directory")->required(default_in.empty());
    cmd_delin->add_option("--out", de.out_dir, "Output directory")->required();
    cmd_delin->add_option("--db", de.db, "Database kind");
    cmd_delin->add_option("--ann-suffixes", de.ann_suffixes, "Annotation suffix priority");
    cmd_delin->add_option("--records", de.records, "Record names (default: all)")->delimiter(',');
    add_filter_options(cmd_delin, de.filter);
    cmd_delin->add_flag("--force", de.force, "Redo even if outputs are current");

    ExportArgs ex;
    auto* cmd_export = app.add_subcommand("export", "Convert a JSON report to CSV files");
    cmd_export->add_option("--report", ex.report_path, "Report JSON produced by other commands")
        ->required();
    cmd_export->add_option("--out", ex.out_dir, "Output directory")->required();

    CLI11_PARSE(app, argc, argv);
    (void)threads;

    try {
        if (cmd_pre->parsed()) return run_preprocess(pre);
        if (cmd_split->parsed()) return run_split(split);
        if (cmd_train->parsed()) return run_train(tr);
        if (cmd_search->parsed()) return run_search(se);
        if (cmd_eval->parsed()) return run_evaluate(ev);
        if (cmd_delin->parsed()) return run_delineate(de);
        if (cmd_export->parsed()) return run_export(ex);
    } catch (const std::exception& err) {
        log_line(std::string("error: ") + err.what());
        return 1;
    }
    return 0;
}
