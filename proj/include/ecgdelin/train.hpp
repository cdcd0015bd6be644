#pragma once

#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "ecgdelin/dataset.hpp"
#include "ecgdelin/eval.hpp"
#include "ecgdelin/nn.hpp"
#include "ecgdelin/util.hpp"

namespace ecg::train {

struct TrainConfig {
    double alpha = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int batch_size = 32;
    int max_epochs = 100;
    int patience = 3;
    double min_delta = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (alpha <= 0.0) throw Error("train config: alpha must be > 0");
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
            throw Error("train config: betas must be in [0, 1)");
        if (epsilon <= 0.0) throw Error("train config: epsilon must be > 0");
        if (batch_size < 1) throw Error("train config: batch size must be >= 1");
        if (patience < 1) throw Error("train config: patience must be >= 1");
    }
};

// --- Adam ------------------------------------------------------------------------

template <typename S>
struct AdamTensorState {
    nn::Tensor<S> m, v;
    long long t = 0;
};

/// One Adam update on a single tensor; the building block used per parameter.
template <typename S>
void adam_step(AdamTensorState<S>& state, nn::Tensor<S>& param, const nn::Tensor<S>& grad,
               const TrainConfig& cfg, const std::string& name = "param") {
    if (!grad.all_finite()) throw Error("adam: non-finite gradient in " + name);
    if (state.t == 0) {
        state.m = nn::Tensor<S>(param.shape);
        state.v = nn::Tensor<S>(param.shape);
    }
    ++state.t;
    const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
    auto m = state.m.map_as(1, state.m.numel()).array();
    auto v = state.v.map_as(1, state.v.numel()).array();
    auto g = grad.map_as(1, grad.numel()).array();
    auto p = param.map_as(1, param.numel()).array();
    m = b1 * m + (S(1) - b1) * g;
    v = b2 * v + (S(1) - b2) * g * g;
    const S mc = static_cast<S>(1.0 - std::pow(cfg.beta1, static_cast<double>(state.t)));
    const S vc = static_cast<S>(1.0 - std::pow(cfg.beta2, static_cast<double>(state.t)));
    p -= static_cast<S>(cfg.alpha) * (m / mc) / ((v / vc).sqrt() + static_cast<S>(cfg.epsilon));
}

/// Adam over every parameter of a model, with per-tensor moment buffers laid
/// out in visit order.
template <typename S>
class AdamOptimizer {
public:
    explicit AdamOptimizer(TrainConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

    void step(nn::Model<S>& model) {
        std::size_t idx = 0;
        model.visit_params([&](const std::string& name, nn::Tensor<S>& p, nn::Tensor<S>& g) {
            if (idx >= states_.size()) states_.emplace_back();
            adam_step(states_[idx], p, g, cfg_, name);
            ++idx;
        });
    }

private:
    TrainConfig cfg_;
    std::vector<AdamTensorState<S>> states_;
};

// --- early stopping ----------------------------------------------------------------

/// Stops when the validation loss has not dropped below the running best for
/// `patience` consecutive epochs. "No decrease" is a strict comparison
/// against best - min_delta.
class EarlyStopper {
public:
    EarlyStopper(int patience, double min_delta = 0.0)
        : patience_(patience), min_delta_(min_delta) {}

    /// Returns true when this epoch set a new best.
    bool observe(double val_loss) {
        ++epoch_;
        if (val_loss < best_loss_ - min_delta_) {
            best_loss_ = val_loss;
            best_epoch_ = epoch_;
            wait_ = 0;
            return true;
        }
        ++wait_;
        return false;
    }

    bool should_stop() const { return wait_ >= patience_; }
    int best_epoch() const { return best_epoch_; }
    double best_loss() const { return best_loss_; }
    int epochs_seen() const { return epoch_; }

private:
    int patience_;
    double min_delta_;
    int epoch_ = 0;
    int wait_ = 0;
    int best_epoch_ = 0;
    double best_loss_ = std::numeric_limits<double>::infinity();
};

// --- fit ------------------------------------------------------------------------------

struct EpochStats {
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    int stopping_epoch = 0;  // 1-based; last epoch that ran
    int best_epoch = 0;      // 1-based; epoch whose weights were kept
    double best_val_loss = 0.0;
};

/// One row per epoch: epoch, train_loss, train_acc, val_loss, val_acc.
inline std::string train_report_text(const TrainReport& report) {
    std::ostringstream out;
    out << "epoch\ttrain_loss\ttrain_acc\tval_loss\tval_acc\n";
    for (std::size_t e = 0; e < report.epochs.size(); ++e) {
        const EpochStats& s = report.epochs[e];
        char line[160];
        std::snprintf(line, sizeof line, "%zu\t%.6f\t%.6f\t%.6f\t%.6f\n", e + 1, s.train_loss,
                      s.train_accuracy, s.val_loss, s.val_accuracy);
        out << line;
    }
    return out.str();
}

using SegmentRefs = std::vector<const dataset::Segment*>;

inline SegmentRefs make_refs(const std::vector<dataset::Segment>& pool) {
    SegmentRefs refs;
    refs.reserve(pool.size());
    for (const auto& seg : pool) refs.push_back(&seg);
    return refs;
}

inline SegmentRefs make_refs(const std::vector<dataset::Segment>& pool,
                             const std::vector<std::size_t>& indices) {
    SegmentRefs refs;
    refs.reserve(indices.size());
    for (std::size_t i : indices) refs.push_back(&pool.at(i));
    return refs;
}

template <typename S>
nn::Tensor<S> segment_input(const dataset::Segment& seg) {
    nn::Tensor<S> x({seg.samples.size(), 1});
    for (std::size_t i = 0; i < seg.samples.size(); ++i) x.data[i] = static_cast<S>(seg.samples[i]);
    return x;
}

/// Mean loss and sample accuracy of a model over a segment set (no dropout).
template <typename S>
std::pair<double, double> evaluate_segments(const nn::Model<S>& model, const SegmentRefs& segments) {
    double loss_sum = 0.0;
    std::int64_t correct = 0, total = 0;
    for (const dataset::Segment* seg : segments) {
        const nn::Tensor<S> probs = model.predict(segment_input<S>(*seg));
        const auto one_hot = dataset::one_hot_encode(seg->labels);
        loss_sum += nn::ccel_loss(probs, one_hot).loss;
        const std::vector<int> pred = nn::argmax_rows(probs);
        for (std::size_t i = 0; i < pred.size(); ++i) {
            correct += pred[i] == static_cast<int>(seg->labels[i]) ? 1 : 0;
        }
        total += static_cast<std::int64_t>(pred.size());
    }
    const double loss = segments.empty() ? 0.0 : loss_sum / static_cast<double>(segments.size());
    const double acc = total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
    return {loss, acc};
}

template <typename S>
std::vector<nn::Tensor<S>> snapshot_params(nn::Model<S>& model) {
    std::vector<nn::Tensor<S>> snap;
    model.visit_params([&](const std::string&, nn::Tensor<S>& p, nn::Tensor<S>&) { snap.push_back(p); });
    return snap;
}

template <typename S>
void restore_params(nn::Model<S>& model, const std::vector<nn::Tensor<S>>& snapshot) {
    std::size_t idx = 0;
    model.visit_params([&](const std::string&, nn::Tensor<S>& p, nn::Tensor<S>&) {
        p = snapshot.at(idx++);
    });
}

/// Trains with seeded per-epoch shuffling, Adam updates per mini-batch, and
/// early stopping on validation loss; the weights from the best epoch are
/// restored before returning. `stop_when` is an optional extra stop
/// condition evaluated on each epoch's statistics.
template <typename S>
TrainReport fit(nn::Model<S>& model, const SegmentRefs& train_segments,
                const SegmentRefs& val_segments, const TrainConfig& cfg,
                const std::function<bool(const EpochStats&)>& stop_when = {}) {
    cfg.validate();
    if (train_segments.empty() || val_segments.empty())
        throw Error("fit: train and validation sets must be non-empty");

    AdamOptimizer<S> optimizer(cfg);
    EarlyStopper stopper(cfg.patience, cfg.min_delta);
    TrainReport report;
    std::vector<nn::Tensor<S>> best_snapshot = snapshot_params(model);

    std::vector<std::size_t> order(train_segments.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        Rng shuffle_rng(mix_seed({cfg.seed, 0x65706f6368ULL, static_cast<std::uint64_t>(epoch)}));
        shuffle(order, shuffle_rng);

        double loss_sum = 0.0;
        std::int64_t correct = 0, total = 0;
        std::size_t pos = 0;
        while (pos < order.size()) {
            const std::size_t batch_end = std::min(order.size(), pos + static_cast<std::size_t>(cfg.batch_size));
            const auto batch_count = static_cast<S>(batch_end - pos);
            model.zero_grads();
            for (std::size_t b = pos; b < batch_end; ++b) {
                const dataset::Segment& seg = *train_segments[order[b]];
                Rng seg_rng(mix_seed({cfg.seed, 0x64726f70ULL, static_cast<std::uint64_t>(epoch),
                                      static_cast<std::uint64_t>(order[b])}));
                nn::ModelCache<S> cache;
                const nn::Tensor<S> probs =
                    model.forward(segment_input<S>(seg), true, seg_rng, cache);
                const auto one_hot = dataset::one_hot_encode(seg.labels);
                nn::LossResult<S> loss = nn::ccel_loss(probs, one_hot);
                if (!std::isfinite(loss.loss))
                    throw Error("fit: training diverged (non-finite loss) at epoch " +
                                std::to_string(epoch));
                loss_sum += loss.loss;
                const std::vector<int> pred = nn::argmax_rows(probs);
                for (std::size_t i = 0; i < pred.size(); ++i)
                    correct += pred[i] == static_cast<int>(seg.labels[i]) ? 1 : 0;
                total += static_cast<std::int64_t>(pred.size());
                model.backward(loss.dlogits, cache);
            }
            // Average the accumulated batch gradient.
            model.visit_params([&](const std::string&, nn::Tensor<S>&, nn::Tensor<S>& g) {
                g.map_as(1, g.numel()) /= batch_count;
            });
            optimizer.step(model);
            pos = batch_end;
        }

        EpochStats stats;
        stats.train_loss = loss_sum / static_cast<double>(train_segments.size());
        stats.train_accuracy = total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
        std::tie(stats.val_loss, stats.val_accuracy) = evaluate_segments(model, val_segments);
        report.epochs.push_back(stats);
        report.stopping_epoch = epoch;

        if (stopper.observe(stats.val_loss)) best_snapshot = snapshot_params(model);
        if (stopper.should_stop()) break;
        if (stop_when && stop_when(stats)) break;
    }

    restore_params(model, best_snapshot);
    report.best_epoch = stopper.best_epoch();
    report.best_val_loss = stopper.best_loss();
    return report;
}

// --- cross validation ---------------------------------------------------------------

template <typename S>
struct CvResult {
    std::vector<nn::Model<S>> models;
    std::vector<TrainReport> reports;
    eval::ConfusionMatrix aggregate;  // validation predictions pooled over folds
};

/// Trains one model per fold (validating on that fold) and pools every
/// fold's validation predictions into a single confusion matrix.
template <typename S>
CvResult<S> run_cv(const nn::ModelConfig& config, const std::vector<dataset::Segment>& pool,
                   const std::vector<std::vector<std::size_t>>& folds, const TrainConfig& cfg) {
    CvResult<S> result;
    for (std::size_t k = 0; k < folds.size(); ++k) {
        std::vector<std::size_t> train_idx;
        for (std::size_t other = 0; other < folds.size(); ++other) {
            if (other == k) continue;
            train_idx.insert(train_idx.end(), folds[other].begin(), folds[other].end());
        }
        nn::Model<S> model(config);
        model.init_params(mix_seed({cfg.seed, 0x6376ULL, static_cast<std::uint64_t>(k)}));
        TrainConfig fold_cfg = cfg;
        fold_cfg.seed = mix_seed({cfg.seed, 0x637674ULL, static_cast<std::uint64_t>(k)});
        result.reports.push_back(
            fit(model, make_refs(pool, train_idx), make_refs(pool, folds[k]), fold_cfg));

        for (std::size_t idx : folds[k]) {
            const dataset::Segment& seg = pool[idx];
            const std::vector<int> pred = nn::argmax_rows(model.predict(segment_input<S>(seg)));
            for (std::size_t i = 0; i < pred.size(); ++i) {
                ++result.aggregate.counts[static_cast<std::size_t>(seg.labels[i])]
                                         [static_cast<std::size_t>(pred[i])];
            }
        }
        result.models.push_back(std::move(model));
    }
    return result;
}

// --- random hyperparameter search ------------------------------------------------------

struct SearchSpace {
    double alpha_lo = 1e-4, alpha_hi = 1e-2;    // log-uniform
    double beta1_lo = 0.85, beta1_hi = 0.95;    // uniform
    double beta2_lo = 0.99, beta2_hi = 0.9999;  // uniform
    double eps_lo = 1e-9, eps_hi = 1e-7;        // log-uniform
};

struct SearchTrial {
    TrainConfig config;
    double val_loss = 0.0;
    bool diverged = false;
};

struct SearchResult {
    TrainConfig best;
    std::vector<SearchTrial> trials;
};

template <typename S>
SearchResult random_search(const nn::ModelConfig& model_config,
                           const std::vector<dataset::Segment>& pool,
                           const std::vector<std::size_t>& train_idx,
                           const std::vector<std::size_t>& val_idx, const SearchSpace& space,
                           int n_trials, const TrainConfig& base_cfg) {
    if (n_trials < 1) throw Error("random_search: need at least one trial");
    Rng rng(mix_seed({base_cfg.seed, 0x736561726368ULL}));

    SearchResult result;
    int best_trial = -1;
    for (int trial = 0; trial < n_trials; ++trial) {
        SearchTrial t;
        t.config = base_cfg;
        t.config.alpha = std::exp(uniform(rng, std::log(space.alpha_lo), std::log(space.alpha_hi)));
        t.config.beta1 = uniform(rng, space.beta1_lo, space.beta1_hi);
        t.config.beta2 = uniform(rng, space.beta2_lo, space.beta2_hi);
        t.config.epsilon = std::exp(uniform(rng, std::log(space.eps_lo), std::log(space.eps_hi)));
        t.config.seed = mix_seed({base_cfg.seed, 0x747269616cULL, static_cast<std::uint64_t>(trial)});

        nn::Model<S> model(model_config);
        model.init_params(t.config.seed);
        try {
            const TrainReport report =
                fit(model, make_refs(pool, train_idx), make_refs(pool, val_idx), t.config);
            t.val_loss = report.best_val_loss;
        } catch (const Error&) {
            t.diverged = true;
        }
        if (!t.diverged && (best_trial < 0 || t.val_loss < result.trials[static_cast<std::size_t>(best_trial)].val_loss)) {
            best_trial = trial;
        }
        result.trials.push_back(std::move(t));
    }
    if (best_trial < 0)
        throw Error("random_search: all " + std::to_string(n_trials) + " trials diverged");
    result.best = result.trials[static_cast<std::size_t>(best_trial)].config;
    return result;
}

// --- checkpoints ---------------------------------------------------------------------

template <typename S>
constexpr const char* dtype_name();
template <>
constexpr const char* dtype_name<float>() { return "f32"; }
template <>
constexpr const char* dtype_name<double>() { return "f64"; }

void model_config_to_json(const nn::ModelConfig& config, nlohmann::json& j);
nn::ModelConfig model_config_from_json(const nlohmann::json& j);

namespace detail {

inline constexpr char kCkptMagic[8] = {'E', 'C', 'G', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCkptVersion = 1;

}  // namespace detail

/// Versioned container: JSON manifest (architecture, dtype, parameter order
/// and shapes, plus caller-supplied provenance) followed by the flat
/// little-endian parameter arrays in visit order and a CRC-32 trailer.
template <typename S>
void save_checkpoint(const std::string& path, nn::Model<S>& model,
                     const nlohmann::json& provenance = nlohmann::json::object()) {
    nlohmann::json manifest = provenance;
    manifest["format_version"] = detail::kCkptVersion;
    manifest["dtype"] = dtype_name<S>();
    model_config_to_json(model.config(), manifest["architecture"]);
    nlohmann::json params = nlohmann::json::array();
    model.visit_params([&](const std::string& name, nn::Tensor<S>& p, nn::Tensor<S>&) {
        params.push_back({{"name", name}, {"shape", p.shape}});
    });
    manifest["parameters"] = params;

    const std::string manifest_text = manifest.dump();
    std::vector<std::uint8_t> out;
    out.insert(out.end(), detail::kCkptMagic, detail::kCkptMagic + 8);
    put_u32le(out, detail::kCkptVersion);
    put_u64le(out, manifest_text.size());
    out.insert(out.end(), manifest_text.begin(), manifest_text.end());

    model.visit_params([&](const std::string&, nn::Tensor<S>& p, nn::Tensor<S>&) {
        for (S v : p.data) {
            if constexpr (sizeof(S) == 4) {
                std::uint32_t bits;
                std::memcpy(&bits, &v, 4);
                put_u32le(out, bits);
            } else {
                std::uint64_t bits;
                std::memcpy(&bits, &v, 8);
                put_u64le(out, bits);
            }
        }
    });
    put_u32le(out, crc32(out.data() + 8, out.size() - 8));
    write_file_bytes(path, out.data(), out.size());
}

template <typename S>
struct LoadedCheckpoint {
    nn::Model<S> model;
    nlohmann::json manifest;
};

template <typename S>
LoadedCheckpoint<S> load_checkpoint(const std::string& path) {
    const std::vector<std::uint8_t> bytes = read_file_bytes(path);
    if (bytes.size() < 24 || std::memcmp(bytes.data(), detail::kCkptMagic, 8) != 0)
        throw Error("checkpoint: bad magic in " + path);
    const std::uint32_t stored_crc = get_u32le(bytes.data() + bytes.size() - 4);
    if (stored_crc != crc32(bytes.data() + 8, bytes.size() - 12))
        throw Error("checkpoint: checksum mismatch in " + path);

    std::size_t pos = 8;
    const std::uint32_t version = get_u32le(bytes.data() + pos);
    pos += 4;
    if (version != detail::kCkptVersion)
        throw Error("checkpoint: unsupported version " + std::to_string(version));
    const std::uint64_t manifest_len = get_u64le(bytes.data() + pos);
    pos += 8;
    if (pos + manifest_len > bytes.size() - 4) throw Error("checkpoint: truncated manifest");

    nlohmann::json manifest = nlohmann::json::parse(
        bytes.begin() + static_cast<std::ptrdiff_t>(pos),
        bytes.begin() + static_cast<std::ptrdiff_t>(pos + manifest_len));
    pos += manifest_len;

    if (manifest.at("dtype").get<std::string>() != dtype_name<S>())
        throw Error("checkpoint: dtype " + manifest.at("dtype").get<std::string>() +
                    " does not match requested " + dtype_name<S>());

    LoadedCheckpoint<S> loaded{nn::Model<S>(model_config_from_json(manifest.at("architecture"))),
                               manifest};
    std::size_t param_idx = 0;
    const auto& param_list = manifest.at("parameters");
    loaded.model.visit_params([&](const std::string& name, nn::Tensor<S>& p, nn::Tensor<S>&) {
        if (param_idx >= param_list.size())
            throw Error("checkpoint: missing parameter entry for " + name);
        const auto& entry = param_list[param_idx];
        const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
        if (entry.at("name").get<std::string>() != name || shape != p.shape)
            throw Error("checkpoint: shape mismatch at " + name);
        const std::size_t nbytes = p.numel() * sizeof(S);
        if (pos + nbytes > bytes.size() - 4) throw Error("checkpoint: truncated parameter data");
        for (std::size_t i = 0; i < p.numel(); ++i) {
            if constexpr (sizeof(S) == 4) {
                const std::uint32_t bits = get_u32le(bytes.data() + pos + i * 4);
                std::memcpy(&p.data[i], &bits, 4);
            } else {
                const std::uint64_t bits = get_u64le(bytes.data() + pos + i * 8);
                std::memcpy(&p.data[i], &bits, 8);
            }
        }
        pos += nbytes;
        ++param_idx;
    });
    return loaded;
}

/// Loads and validates the stored architecture against an expected one. The
/// error names the first mismatching layer.
template <typename S>
LoadedCheckpoint<S> load_checkpoint(const std::string& path, const nn::ModelConfig& expected) {
    LoadedCheckpoint<S> loaded = load_checkpoint<S>(path);
    nn::Model<S> wanted(expected);
    std::vector<std::pair<std::string, std::vector<std::size_t>>> want, have;
    wanted.visit_params([&](const std::string& name, nn::Tensor<S>& p, nn::Tensor<S>&) {
        want.emplace_back(name, p.shape);
    });
    loaded.model.visit_params([&](const std::string& name, nn::Tensor<S>& p, nn::Tensor<S>&) {
        have.emplace_back(name, p.shape);
    });
    for (std::size_t i = 0; i < std::max(want.size(), have.size()); ++i) {
        if (i >= have.size() || i >= want.size() || want[i] != have[i]) {
            const std::string& name = i < want.size() ? want[i].first : have[i].first;
            throw Error("checkpoint: architecture mismatch at " + name);
        }
    }
    return loaded;
}

}  // namespace ecg::train
