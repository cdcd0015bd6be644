// Acceptance suite: runs the project's verification gates end to end and
// prints one PASS/FAIL line per gate. Training gates use synthesized
// PhysioNet-format records written through the test encoders and read back
// through the production pipeline, since the real archives cannot ship with
// the repository.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numbers>
#include <vector>

#include "ecgdelin/dataset.hpp"
#include "ecgdelin/delineate.hpp"
#include "ecgdelin/dsp.hpp"
#include "ecgdelin/eval.hpp"
#include "ecgdelin/nn.hpp"
#include "ecgdelin/train.hpp"
#include "ecgdelin/util.hpp"
#include "ecgdelin/wfdb.hpp"
#include "support/testutil.hpp"

namespace fs = std::filesystem;
using namespace ecg;
using dataset::SampleClass;

namespace {

#define ACHECK(cond, ...)                                           \
    do {                                                            \
        if (!(cond)) {                                              \
            char buf_[512];                                         \
            std::snprintf(buf_, sizeof buf_, __VA_ARGS__);          \
            throw Error(std::string("check failed: ") + buf_);      \
        }                                                           \
    } while (0)

fs::path work_dir() {
    const fs::path dir = fs::temp_directory_path() / "ecgdelin_acceptance";
    fs::create_directories(dir);
    return dir;
}

// --- 1. architecture identity --------------------------------------------------------

void criterion_param_count() {
    nn::Model<float> model;  // default configuration
    const std::size_t count = model.param_count();
    ACHECK(count == 1416044, "default parameter count is %zu, expected 1416044", count);
    for (const auto& [layer, n] : model.param_breakdown()) {
        std::fprintf(stderr, "    %-8s %8zu\n", layer.c_str(), n);
    }
}

// --- 2. gradient correctness -----------------------------------------------------------

void criterion_gradients() {
    nn::ModelConfig config;
    config.conv_filters = {2, 3, 4};
    config.lstm_units = {5, 3};
    config.dropout = 0.0;
    nn::Model<double> model(config);
    model.init_params(2024);

    Rng rng(77);
    nn::Tensor<double> x({12, 1});
    for (auto& v : x.data) v = normal01(rng);
    std::vector<SampleClass> labels(12);
    for (auto& l : labels) l = static_cast<SampleClass>(uniform_index(rng, 4));
    const auto targets = dataset::one_hot_encode(labels);

    auto loss_fn = [&](bool accumulate) {
        nn::ModelCache<double> cache;
        Rng r(0);
        const auto probs = model.forward(x, false, r, cache);
        auto loss = nn::ccel_loss(probs, targets);
        if (accumulate) model.backward(loss.dlogits, cache);
        return loss.loss;
    };

    model.zero_grads();
    loss_fn(true);
    const double eps = 1e-5;
    std::size_t checked = 0;
    model.visit_params([&](const std::string& name, nn::Tensor<double>& p, nn::Tensor<double>& g) {
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double saved = p.data[i];
            p.data[i] = saved + eps;
            const double up = loss_fn(false);
            p.data[i] = saved - eps;
            const double down = loss_fn(false);
            p.data[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double analytic = g.data[i];
            const double tol = 1e-4 * std::max({std::abs(analytic), std::abs(numeric), 1e-4});
            ACHECK(std::abs(analytic - numeric) <= tol,
                   "%s[%zu]: analytic %.10g vs numeric %.10g", name.c_str(), i, analytic, numeric);
            ++checked;
        }
    });
    std::fprintf(stderr, "    %zu parameter gradients verified against central differences\n",
                 checked);
}

// --- 3. filter properties ---------------------------------------------------------------

void criterion_filter() {
    const auto coeffs = dsp::design_butterworth_bandpass({3, 0.5, 40.0, 250.0});
    const double h0 = dsp::magnitude_response(coeffs, 0.0, 250.0);
    ACHECK(h0 < 1e-6, "|H(0)| = %.3g, expected < 1e-6", h0);
    const double h10 = dsp::magnitude_response(coeffs, 10.0, 250.0);
    ACHECK(h10 >= 0.99 && h10 <= 1.01, "|H(10 Hz)| = %.6f outside [0.99, 1.01]", h10);
    for (const auto& pole : coeffs.poles) {
        ACHECK(std::abs(pole) < 1.0, "pole magnitude %.9f not inside the unit circle",
               std::abs(pole));
    }

    const std::size_t n = 1200, center = 500;
    std::vector<double> pulse(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double z = (static_cast<double>(i) - static_cast<double>(center)) / 15.0;
        pulse[i] = std::exp(-0.5 * z * z);
    }
    const auto filtered = dsp::filtfilt(coeffs, pulse);
    std::size_t peak = 0;
    for (std::size_t i = 1; i < n; ++i) {
        if (filtered[i] > filtered[peak]) peak = i;
    }
    ACHECK(peak == center, "zero-phase pulse peak moved from %zu to %zu", center, peak);
}

// --- 4. parser round-trips ---------------------------------------------------------------

void criterion_parsers() {
    Rng rng(4242);
    // 1e5 random 12-bit pairs through the format-212 encoder/decoder.
    const std::size_t n_pairs = 100000;
    std::vector<int> adc(2 * n_pairs);
    for (auto& v : adc) v = static_cast<int>(uniform_index(rng, 4096)) - 2048;
    wfdb::RecordHeader header;
    header.n_signals = 2;
    header.sampling_frequency = 250.0;
    header.n_samples = static_cast<std::int64_t>(n_pairs);
    header.signals = {{"x.dat", 212, 1.0, 0, "mV"}, {"x.dat", 212, 1.0, 0, "mV"}};
    const auto decoded = wfdb::decode_signal(header, testutil::encode_format212(adc));
    for (std::size_t i = 0; i < n_pairs; ++i) {
        ACHECK(decoded.at(static_cast<std::int64_t>(i), 0) == static_cast<double>(adc[2 * i]),
               "pair %zu channel 0 mismatch", i);
        ACHECK(decoded.at(static_cast<std::int64_t>(i), 1) == static_cast<double>(adc[2 * i + 1]),
               "pair %zu channel 1 mismatch", i);
    }

    // Annotation cumulative-index property on synthesized streams.
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<wfdb::AnnotationEvent> events;
        std::int64_t sample = 0;
        const std::size_t n_events = uniform_index(rng, 60);
        const char symbols[] = {'N', 'p', 't', '(', ')', 'V', 'A'};
        for (std::size_t i = 0; i < n_events; ++i) {
            sample += 1 + static_cast<std::int64_t>(uniform_index(rng, 100000));
            events.push_back({sample, symbols[uniform_index(rng, 7)],
                              static_cast<int>(uniform_index(rng, 2)), ""});
        }
        const auto back = wfdb::decode_annotations(testutil::encode_annotations(events));
        ACHECK(back.size() == events.size(), "trial %d: %zu events in, %zu out", trial,
               events.size(), back.size());
        for (std::size_t i = 0; i < events.size(); ++i) {
            ACHECK(back[i].sample_index == events[i].sample_index,
                   "trial %d event %zu: index %lld != %lld", trial, i,
                   static_cast<long long>(back[i].sample_index),
                   static_cast<long long>(events[i].sample_index));
            ACHECK(back[i].symbol == events[i].symbol, "trial %d event %zu symbol", trial, i);
            ACHECK(back[i].chan == events[i].chan, "trial %d event %zu channel", trial, i);
        }
    }
}

// --- 5. metric oracles ------------------------------------------------------------------

double mann_whitney_auc(const std::vector<std::uint8_t>& labels, const std::vector<double>& scores) {
    double u = 0.0;
    std::int64_t n_pos = 0, n_neg = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (!labels[i]) continue;
        ++n_pos;
        for (std::size_t j = 0; j < labels.size(); ++j) {
            if (labels[j]) continue;
            if (scores[i] > scores[j]) u += 1.0;
            else if (scores[i] == scores[j]) u += 0.5;
        }
    }
    for (std::uint8_t l : labels) n_neg += l ? 0 : 1;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

void criterion_metrics() {
    Rng rng(555);
    for (int trial = 0; trial < 100; ++trial) {
        eval::ConfusionMatrix cm;
        for (int a = 0; a < 4; ++a)
            for (int p = 0; p < 4; ++p)
                cm.counts[static_cast<std::size_t>(a)][static_cast<std::size_t>(p)] =
                    static_cast<std::int64_t>(uniform_index(rng, 200)) + (a == p ? 1 : 0);
        const auto avg = eval::averaged_metrics(cm);
        const double accuracy = eval::class_metrics(cm).accuracy;
        ACHECK(avg.micro_precision == accuracy, "micro precision %.17g != accuracy %.17g",
               avg.micro_precision, accuracy);
        ACHECK(avg.micro_sensitivity == accuracy, "micro sensitivity %.17g != accuracy %.17g",
               avg.micro_sensitivity, accuracy);
    }

    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 8 + uniform_index(rng, 40);
        std::vector<std::uint8_t> labels(n);
        std::vector<double> scores(n);
        int pos = 0;
        for (std::size_t i = 0; i < n; ++i) {
            labels[i] = uniform01(rng) < 0.5 ? 1 : 0;
            pos += labels[i];
            scores[i] = std::round(uniform01(rng) * 8.0) / 8.0;
        }
        if (pos == 0 || pos == static_cast<int>(n)) continue;
        const double auc = eval::binary_roc(labels, scores).auc;
        const double mw = mann_whitney_auc(labels, scores);
        ACHECK(std::abs(auc - mw) <= 1e-9, "AUC %.12f vs Mann-Whitney %.12f", auc, mw);
    }

    for (int trial = 0; trial < 100; ++trial) {
        eval::ConfusionMatrix cm;
        for (int a = 0; a < 4; ++a)
            for (int p = 0; p < 4; ++p)
                cm.counts[static_cast<std::size_t>(a)][static_cast<std::size_t>(p)] =
                    static_cast<std::int64_t>(uniform_index(rng, 100)) + 1;
        const auto report = eval::class_metrics(cm, 1.0);
        for (const auto& m : report.per_class) {
            const double p = *m.precision, s = *m.sensitivity;
            const double harmonic = 2.0 * p * s / (p + s);
            ACHECK(std::abs(*m.f_score - harmonic) <= 1e-12, "F1 %.15f vs harmonic %.15f",
                   *m.f_score, harmonic);
        }
    }
}

// --- training data shared by gates 6 and 7 -------------------------------------------------

std::vector<dataset::Segment> load_segments(const std::string& db_dir,
                                            const std::vector<std::string>& names) {
    std::vector<dataset::Segment> segments;
    for (const auto& name : names) {
        const auto record = wfdb::read_record(db_dir, name, {"q1c", "pu0"});
        const auto prepared = dataset::prepare_record(record, {});
        auto segs = dataset::segment_record(prepared.signal, prepared.labels, name);
        segments.insert(segments.end(), segs.begin(), segs.end());
    }
    return segments;
}

// --- 6. overfit sanity ----------------------------------------------------------------------

void criterion_overfit() {
    const fs::path db = work_dir() / "overfit_db";
    fs::remove_all(db);
    const auto names = testutil::write_synth_database(db.string(), 2, 40.0, 606);
    auto segments = load_segments(db.string(), names);
    ACHECK(segments.size() >= 20, "expected at least 20 segments, generated %zu", segments.size());
    segments.resize(20);

    nn::Model<float> model;  // full default architecture
    model.init_params(606);
    train::TrainConfig cfg;
    cfg.alpha = 2e-3;
    cfg.batch_size = 4;
    cfg.max_epochs = 50;
    cfg.patience = 50;  // overfit oracle: run to the accuracy target
    cfg.seed = 606;
    const auto refs = train::make_refs(segments);
    const auto report = train::fit(model, refs, refs, cfg, [](const train::EpochStats& s) {
        return s.train_accuracy >= 0.99 && s.train_loss < 0.05;
    });

    // The descent to the 0.05 target must be monotone within 5% blips;
    // once below the target the loss sits at its noise floor.
    double best_acc = 0.0, min_loss = std::numeric_limits<double>::infinity();
    double running_min = std::numeric_limits<double>::infinity();
    bool reached_target = false;
    for (const auto& epoch : report.epochs) {
        best_acc = std::max(best_acc, epoch.train_accuracy);
        min_loss = std::min(min_loss, epoch.train_loss);
        if (!reached_target) {
            ACHECK(epoch.train_loss <= 1.05 * running_min + 1e-9,
                   "loss %.4f exceeds 5%% above the running minimum %.4f before reaching 0.05",
                   epoch.train_loss, running_min);
        }
        running_min = std::min(running_min, epoch.train_loss);
        reached_target = reached_target || epoch.train_loss < 0.05;
    }
    std::fprintf(stderr, "    %zu epochs, best accuracy %.4f, best loss %.4f\n",
                 report.epochs.size(), best_acc, min_loss);
    ACHECK(report.epochs.size() <= 50, "ran %zu epochs", report.epochs.size());
    ACHECK(best_acc >= 0.99, "sample accuracy %.4f below 0.99 within 50 epochs", best_acc);
    ACHECK(min_loss < 0.05, "overfit loss %.4f did not reach 0.05", min_loss);
    fs::remove_all(db);
}

// --- 7. scaled-down reproduction --------------------------------------------------------------

void criterion_scaled_reproduction() {
    const fs::path db = work_dir() / "repro_db";
    fs::remove_all(db);
    const auto names = testutil::write_synth_database(db.string(), 13, 60.0, 707);
    const std::vector<std::string> train_names(names.begin(), names.begin() + 10);
    const std::vector<std::string> test_names(names.begin() + 10, names.end());

    auto train_pool = load_segments(db.string(), train_names);
    std::fprintf(stderr, "    training on %zu segments from 10 records\n", train_pool.size());
    const auto folds = dataset::stratified_kfold(train_pool, 5, 707);
    std::vector<std::size_t> train_idx;
    for (std::size_t f = 1; f < folds.size(); ++f)
        train_idx.insert(train_idx.end(), folds[f].begin(), folds[f].end());

    nn::Model<float> model;  // full default architecture
    model.init_params(707);
    train::TrainConfig cfg;
    cfg.alpha = 1.5e-3;
    cfg.batch_size = 8;
    cfg.max_epochs = 12;
    cfg.patience = 3;
    cfg.seed = 707;
    const auto report = train::fit(model, train::make_refs(train_pool, train_idx),
                                   train::make_refs(train_pool, folds[0]), cfg);
    std::fprintf(stderr, "    trained %d epochs, best val loss %.4f\n", report.stopping_epoch,
                 report.best_val_loss);

    // Sample-level QRS F1 on the held-out records.
    const auto test_pool = load_segments(db.string(), test_names);
    std::vector<SampleClass> y_true, y_pred;
    for (const auto& seg : test_pool) {
        const auto pred = nn::argmax_rows(model.predict(train::segment_input<float>(seg)));
        for (std::size_t i = 0; i < pred.size(); ++i) {
            y_true.push_back(seg.labels[i]);
            y_pred.push_back(static_cast<SampleClass>(pred[i]));
        }
    }
    const auto metrics = eval::class_metrics(eval::confusion_matrix(y_true, y_pred));
    const auto& qrs = metrics.per_class[static_cast<std::size_t>(SampleClass::QRS)];
    ACHECK(qrs.f_score.has_value(), "QRS F1 undefined");
    std::fprintf(stderr, "    held-out sample-level QRS F1 %.4f (Se %.4f, P+ %.4f)\n",
                 *qrs.f_score, qrs.sensitivity.value_or(0.0), qrs.precision.value_or(0.0));

    // Beat-matched QRS detection at 150 ms tolerance.
    const auto labeler = delin::make_model_labeler(model);
    eval::BeatMatchResult total;
    for (const auto& name : test_names) {
        const auto record = wfdb::read_record(db.string(), name, {"q1c", "pu0"});
        const auto prepared = dataset::prepare_record(record, {});
        const auto result = delin::delineate_record(labeler, prepared.signal, prepared.fs, name);
        std::vector<double> predicted, reference;
        for (const auto& seg : result.segments) {
            if (seg.wave_class == SampleClass::QRS) predicted.push_back(static_cast<double>(seg.peak));
        }
        for (std::int64_t s : dataset::beat_samples(prepared.annotations))
            reference.push_back(static_cast<double>(s));
        const auto match = eval::match_beats(predicted, reference, 0.150 * prepared.fs);
        total.n_beats += match.n_beats;
        total.tp += match.tp;
        total.fp += match.fp;
        total.fn += match.fn;
    }
    const double beat_se =
        total.n_beats > 0 ? static_cast<double>(total.tp) / static_cast<double>(total.n_beats) : 0.0;
    std::fprintf(stderr, "    beat matching: %lld beats, Se %.4f, FP %lld\n",
                 static_cast<long long>(total.n_beats), beat_se, static_cast<long long>(total.fp));

    ACHECK(*qrs.f_score >= 0.90, "QRS sample F1 %.4f below 0.90", *qrs.f_score);
    ACHECK(beat_se >= 0.95, "QRS beat sensitivity %.4f below 0.95", beat_se);
    fs::remove_all(db);
}

// --- 9. determinism -----------------------------------------------------------------------------

int run_cli(const std::string& args) {
    const std::string cmd = std::string(ECGDELIN_CLI) + " " + args + " >/dev/null 2>&1";
    return std::system(cmd.c_str());
}

void criterion_determinism() {
    const fs::path base = work_dir() / "determinism";
    fs::remove_all(base);
    const fs::path db = base / "db";
    testutil::write_synth_database(db.string(), 4, 24.0, 909);

    const fs::path out = base / "out";
    const std::string pipeline_args =
        " --cache " + (out / "db.segs").string() + " --split " + (out / "split.json").string();

    std::vector<std::string> reports;
    for (int run = 0; run < 2; ++run) {
        fs::remove_all(out);
        fs::create_directories(out);
        ACHECK(run_cli("preprocess --in " + db.string() + " --db qtdb --out " +
                       (out / "db.segs").string()) == 0,
               "preprocess failed (run %d)", run);
        ACHECK(run_cli("split --cache " + (out / "db.segs").string() + " --seed 5 --folds 3 --out " +
                       (out / "split.json").string()) == 0,
               "split failed (run %d)", run);
        ACHECK(run_cli("train" + pipeline_args + " --out " + (out / "run").string() +
                       " --conv-filters 6,8 --lstm-units 8 --max-epochs 2 --batch-size 8 "
                       "--seed 7 --val-fold 0") == 0,
               "train failed (run %d)", run);
        ACHECK(run_cli("evaluate --checkpoint " + (out / "run" / "model.ckpt").string() +
                       " --task samples" + pipeline_args + " --out " + (out / "eval").string()) == 0,
               "evaluate failed (run %d)", run);
        const auto bytes = read_file_bytes((out / "eval" / "eval_report.json").string());
        reports.emplace_back(bytes.begin(), bytes.end());
    }
    ACHECK(reports[0] == reports[1],
           "metric reports differ between identical runs (%zu vs %zu bytes)", reports[0].size(),
           reports[1].size());
    std::fprintf(stderr, "    identical reports of %zu bytes\n", reports[0].size());
    fs::remove_all(base);
}

struct Criterion {
    int id;
    const char* name;
    std::function<void()> run;
    bool informational = false;
};

}  // namespace

int main() {
    const std::vector<Criterion> criteria = {
        {1, "architecture identity: default parameter count", criterion_param_count},
        {2, "gradient correctness: toy model vs central finite differences", criterion_gradients},
        {3, "filter properties: band-pass response, stability, zero phase", criterion_filter},
        {4, "parser round-trips: format 212 and annotation streams", criterion_parsers},
        {5, "metric oracles: micro identities, Mann-Whitney AUC, F1", criterion_metrics},
        {6, "overfit sanity: 20 segments to 99% accuracy within 50 epochs", criterion_overfit},
        {7, "scaled-down reproduction: QRS F1 >= 0.90, beat Se >= 0.95", criterion_scaled_reproduction},
        {8, "full reproduction: documented long-running job (see README), not asserted", nullptr,
         true},
        {9, "determinism: byte-identical metric reports across runs", criterion_determinism},
    };

    int failures = 0;
    for (const auto& criterion : criteria) {
        if (criterion.informational) {
            std::printf("[INFO] %d. %s\n", criterion.id, criterion.name);
            std::fflush(stdout);
            continue;
        }
        const auto start = std::chrono::steady_clock::now();
        try {
            criterion.run();
            const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            std::printf("[PASS] %d. %s (%.1fs)\n", criterion.id, criterion.name, sec);
        } catch (const std::exception& err) {
            std::printf("[FAIL] %d. %s: %s\n", criterion.id, criterion.name, err.what());
            ++failures;
        }
        std::fflush(stdout);
    }
    if (failures > 0) {
        std::printf("%d criterion(s) failed\n", failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}
