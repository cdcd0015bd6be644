#include "ecgdelin/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <optional>
#include <set>

#include "ecgdelin/dsp.hpp"
#include "ecgdelin/util.hpp"

namespace ecg::dataset {

const char* class_name(SampleClass c) {
    switch (c) {
        case SampleClass::P: return "P";
        case SampleClass::QRS: return "QRS";
        case SampleClass::T: return "T";
        case SampleClass::NW: return "NW";
    }
    return "?";
}

namespace {

std::optional<SampleClass> wave_class_of(char symbol) {
    if (symbol == 'p') return SampleClass::P;
    if (symbol == 't') return SampleClass::T;
    if (wfdb::is_beat_symbol(symbol)) return SampleClass::QRS;
    return std::nullopt;
}

}  // namespace

std::vector<AnnotatedWave> extract_annotated_waves(const std::vector<wfdb::AnnotationEvent>& events) {
    std::vector<AnnotatedWave> waves;
    bool open = false;
    std::int64_t onset = 0;
    std::optional<SampleClass> cls;
    std::int64_t peak = 0;

    for (const auto& ev : events) {
        if (ev.symbol == '(') {
            open = true;  // a dangling earlier '(' is dropped
            onset = ev.sample_index;
            cls.reset();
        } else if (ev.symbol == ')') {
            if (open && cls) {
                waves.push_back({*cls, onset, peak, ev.sample_index});
            }
            open = false;
            cls.reset();
        } else if (auto wc = wave_class_of(ev.symbol)) {
            if (open && !cls) {
                cls = wc;
                peak = ev.sample_index;
            }
        }
    }
    std::stable_sort(waves.begin(), waves.end(),
                     [](const AnnotatedWave& a, const AnnotatedWave& b) { return a.onset < b.onset; });
    return waves;
}

LabelResult build_sample_labels(const std::vector<wfdb::AnnotationEvent>& events,
                                std::int64_t n_samples) {
    LabelResult result;
    result.labels.assign(static_cast<std::size_t>(n_samples), SampleClass::NW);
    for (const auto& wave : extract_annotated_waves(events)) {
        const std::int64_t lo = std::max<std::int64_t>(wave.onset, 0);
        const std::int64_t hi = std::min<std::int64_t>(wave.offset, n_samples - 1);
        bool conflict = false;
        for (std::int64_t s = lo; s <= hi; ++s) {
            SampleClass& cell = result.labels[static_cast<std::size_t>(s)];
            if (cell == SampleClass::NW) {
                cell = wave.wave_class;
            } else if (cell != wave.wave_class) {
                conflict = true;  // earlier wave keeps the sample
            }
        }
        if (conflict) ++result.overlap_conflicts;
    }
    return result;
}

std::array<std::int64_t, kNumClasses> Segment::class_histogram() const {
    std::array<std::int64_t, kNumClasses> counts{};
    for (SampleClass c : labels) ++counts[static_cast<std::size_t>(c)];
    return counts;
}

std::vector<Segment> segment_record(const std::vector<double>& signal,
                                    const std::vector<SampleClass>& labels,
                                    const std::string& record_name, std::size_t window) {
    if (signal.size() != labels.size())
        throw Error("segment_record: signal and label lengths differ");
    if (window == 0) throw Error("segment_record: window must be positive");

    std::vector<Segment> segments;
    const std::size_t n_windows = signal.size() / window;
    segments.reserve(n_windows);
    for (std::size_t w = 0; w < n_windows; ++w) {
        Segment seg;
        seg.record_name = record_name;
        seg.start_offset = static_cast<std::int64_t>(w * window);
        seg.samples.resize(window);
        seg.labels.resize(window);
        for (std::size_t i = 0; i < window; ++i) {
            seg.samples[i] = static_cast<float>(signal[w * window + i]);
            seg.labels[i] = labels[w * window + i];
        }
        segments.push_back(std::move(seg));
    }
    return segments;
}

RecordSplit split_records(std::vector<std::string> names, std::uint64_t seed, double train_ratio) {
    if (train_ratio < 0.0 || train_ratio > 1.0)
        throw Error("split_records: train ratio must be within [0, 1]");
    std::sort(names.begin(), names.end());
    for (std::size_t i = 1; i < names.size(); ++i) {
        if (names[i] == names[i - 1]) throw Error("split_records: duplicate record name " + names[i]);
    }
    Rng rng(mix_seed({seed, 0x73706c6974ULL}));
    shuffle(names, rng);

    const auto n_train = static_cast<std::size_t>(
        std::llround(train_ratio * static_cast<double>(names.size())));
    RecordSplit split;
    split.train_records.assign(names.begin(), names.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.test_records.assign(names.begin() + static_cast<std::ptrdiff_t>(n_train), names.end());
    std::sort(split.train_records.begin(), split.train_records.end());
    std::sort(split.test_records.begin(), split.test_records.end());
    return split;
}

std::vector<std::vector<std::size_t>> stratified_kfold(const std::vector<Segment>& segments,
                                                       int k, std::uint64_t seed) {
    if (k < 2) throw Error("stratified_kfold: k must be >= 2");
    if (segments.size() < static_cast<std::size_t>(k))
        throw Error("stratified_kfold: fewer segments than folds");

    const std::size_t n = segments.size();
    std::vector<std::array<std::int64_t, kNumClasses>> histograms(n);
    std::array<double, kNumClasses> global{};
    double global_total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        histograms[i] = segments[i].class_histogram();
        for (int c = 0; c < kNumClasses; ++c) {
            global[static_cast<std::size_t>(c)] += static_cast<double>(histograms[i][static_cast<std::size_t>(c)]);
            global_total += static_cast<double>(histograms[i][static_cast<std::size_t>(c)]);
        }
    }
    for (auto& g : global) g /= global_total;

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(mix_seed({seed, 0x666f6c64ULL}));
    shuffle(order, rng);

    // Most class-skewed segments first: they constrain the folds the most,
    // and the near-average tail then levels out residual imbalance.
    std::vector<double> skew(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double seg_total = 0.0;
        for (auto v : histograms[i]) seg_total += static_cast<double>(v);
        for (int c = 0; c < kNumClasses; ++c) {
            const auto cu = static_cast<std::size_t>(c);
            skew[i] += std::abs(static_cast<double>(histograms[i][cu]) / seg_total - global[cu]);
        }
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return skew[a] > skew[b]; });

    // Fold capacities differ by at most one segment.
    std::vector<std::size_t> capacity(static_cast<std::size_t>(k), n / static_cast<std::size_t>(k));
    for (std::size_t f = 0; f < n % static_cast<std::size_t>(k); ++f) ++capacity[f];

    // Each fold has an absolute per-class sample quota: its capacity share of
    // the global class counts. A segment goes to the eligible fold where it
    // least overshoots the remaining quotas.
    std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
    std::vector<std::array<double, kNumClasses>> remaining(static_cast<std::size_t>(k));
    std::array<double, kNumClasses> class_totals{};
    for (const auto& hist : histograms) {
        for (int c = 0; c < kNumClasses; ++c)
            class_totals[static_cast<std::size_t>(c)] += static_cast<double>(hist[static_cast<std::size_t>(c)]);
    }
    for (int f = 0; f < k; ++f) {
        const double share = static_cast<double>(capacity[static_cast<std::size_t>(f)]) /
                             static_cast<double>(n);
        for (int c = 0; c < kNumClasses; ++c)
            remaining[static_cast<std::size_t>(f)][static_cast<std::size_t>(c)] =
                share * class_totals[static_cast<std::size_t>(c)];
    }

    for (std::size_t idx : order) {
        const auto& hist = histograms[idx];
        int best_fold = -1;
        double best_cost = 0.0;
        for (int f = 0; f < k; ++f) {
            const auto fu = static_cast<std::size_t>(f);
            if (folds[fu].size() >= capacity[fu]) continue;
            double cost = 0.0;
            for (int c = 0; c < kNumClasses; ++c) {
                const auto cu = static_cast<std::size_t>(c);
                const double after = remaining[fu][cu] - static_cast<double>(hist[cu]);
                // Quota overshoot is penalized; leftover quota merely counts
                // as remaining slack relative to the fold's remaining room.
                cost += after < 0.0 ? -2.0 * after : after;
            }
            const double room = static_cast<double>(capacity[fu] - folds[fu].size());
            cost /= room;
            const bool better =
                best_fold < 0 || cost < best_cost ||
                (cost == best_cost && folds[fu].size() < folds[static_cast<std::size_t>(best_fold)].size());
            if (better) {
                best_fold = f;
                best_cost = cost;
            }
        }
        const auto bf = static_cast<std::size_t>(best_fold);
        folds[bf].push_back(idx);
        for (int c = 0; c < kNumClasses; ++c)
            remaining[bf][static_cast<std::size_t>(c)] -= static_cast<double>(hist[static_cast<std::size_t>(c)]);
    }

    // Local refinement: swap segments between the worst-deviating fold and the
    // others while that reduces the summed per-fold deviation. Folds at large
    // n are already tight by averaging, so the quadratic search is skipped.
    if (n <= 5000) {
        std::vector<std::array<double, kNumClasses>> counts(static_cast<std::size_t>(k));
        std::vector<double> totals(static_cast<std::size_t>(k), 0.0);
        for (int f = 0; f < k; ++f) {
            const auto fu = static_cast<std::size_t>(f);
            for (std::size_t idx : folds[fu]) {
                for (int c = 0; c < kNumClasses; ++c)
                    counts[fu][static_cast<std::size_t>(c)] +=
                        static_cast<double>(histograms[idx][static_cast<std::size_t>(c)]);
                double seg_total = 0.0;
                for (auto v : histograms[idx]) seg_total += static_cast<double>(v);
                totals[fu] += seg_total;
            }
        }
        auto deviation = [&](const std::array<double, kNumClasses>& c, double total) {
            double dev = 0.0;
            for (int cls = 0; cls < kNumClasses; ++cls)
                dev += std::abs(c[static_cast<std::size_t>(cls)] / total - global[static_cast<std::size_t>(cls)]);
            return dev;
        };
        auto seg_count = [&](std::size_t idx, int cls) {
            return static_cast<double>(histograms[idx][static_cast<std::size_t>(cls)]);
        };

        for (std::size_t iter = 0; iter < 8 * n; ++iter) {
            int worst = 0;
            double worst_dev = -1.0;
            for (int f = 0; f < k; ++f) {
                const double dev = deviation(counts[static_cast<std::size_t>(f)], totals[static_cast<std::size_t>(f)]);
                if (dev > worst_dev) {
                    worst_dev = dev;
                    worst = f;
                }
            }
            const auto wu = static_cast<std::size_t>(worst);
            double best_gain = 1e-12;
            std::size_t best_ai = 0, best_bi = 0;
            int best_g = -1;
            for (int g = 0; g < k; ++g) {
                if (g == worst) continue;
                const auto gu = static_cast<std::size_t>(g);
                const double base = deviation(counts[wu], totals[wu]) + deviation(counts[gu], totals[gu]);
                for (std::size_t ai = 0; ai < folds[wu].size(); ++ai) {
                    for (std::size_t bi = 0; bi < folds[gu].size(); ++bi) {
                        std::array<double, kNumClasses> cw = counts[wu], cg = counts[gu];
                        double tw = totals[wu], tg = totals[gu];
                        double ta = 0.0, tb = 0.0;
                        for (int c = 0; c < kNumClasses; ++c) {
                            const double a_c = seg_count(folds[wu][ai], c);
                            const double b_c = seg_count(folds[gu][bi], c);
                            cw[static_cast<std::size_t>(c)] += b_c - a_c;
                            cg[static_cast<std::size_t>(c)] += a_c - b_c;
                            ta += a_c;
                            tb += b_c;
                        }
                        tw += tb - ta;
                        tg += ta - tb;
                        const double gain = base - deviation(cw, tw) - deviation(cg, tg);
                        if (gain > best_gain) {
                            best_gain = gain;
                            best_ai = ai;
                            best_bi = bi;
                            best_g = g;
                        }
                    }
                }
            }
            if (best_g < 0) break;
            const auto gu = static_cast<std::size_t>(best_g);
            const std::size_t a = folds[wu][best_ai], b = folds[gu][best_bi];
            for (int c = 0; c < kNumClasses; ++c) {
                const double delta = seg_count(b, c) - seg_count(a, c);
                counts[wu][static_cast<std::size_t>(c)] += delta;
                counts[gu][static_cast<std::size_t>(c)] -= delta;
            }
            double ta = 0.0, tb = 0.0;
            for (int c = 0; c < kNumClasses; ++c) {
                ta += seg_count(a, c);
                tb += seg_count(b, c);
            }
            totals[wu] += tb - ta;
            totals[gu] += ta - tb;
            std::swap(folds[wu][best_ai], folds[gu][best_bi]);
        }
    }

    for (auto& fold : folds) std::sort(fold.begin(), fold.end());
    return folds;
}

OneHotLabels one_hot_encode(const std::vector<SampleClass>& labels) {
    OneHotLabels encoded;
    encoded.rows = labels.size();
    encoded.data.assign(labels.size() * kNumClasses, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        encoded.data[i * kNumClasses + static_cast<std::size_t>(labels[i])] = 1;
    }
    return encoded;
}

PreparedRecord prepare_record(const wfdb::Record& record, const PrepareOptions& options) {
    if (options.channel < 0 || options.channel >= record.signal.n_channels)
        throw Error("prepare_record: channel " + std::to_string(options.channel) +
                    " out of range for " + record.header.record_name);

    PreparedRecord prepared;
    prepared.name = record.header.record_name;
    prepared.fs = options.target_fs;
    prepared.signal = record.signal.channel(options.channel);
    prepared.annotations = record.annotations;

    const double fs_in = record.header.sampling_frequency;
    if (fs_in != options.target_fs) {
        prepared.signal = dsp::resample(prepared.signal, fs_in, options.target_fs);
        const auto [up, down] = dsp::rationalize(options.target_fs / fs_in, 1000);
        for (auto& ev : prepared.annotations) {
            ev.sample_index = std::llround(static_cast<double>(ev.sample_index) * up /
                                           static_cast<double>(down));
        }
    }

    if (options.apply_filter) {
        dsp::FilterSpec spec;
        spec.order = options.filter_order;
        spec.low_cut = options.low_cut;
        spec.high_cut = options.high_cut;
        spec.sampling_frequency = options.target_fs;
        prepared.signal = dsp::filtfilt(dsp::design_butterworth_bandpass(spec), prepared.signal);
    }

    LabelResult labeled =
        build_sample_labels(prepared.annotations, static_cast<std::int64_t>(prepared.signal.size()));
    prepared.labels = std::move(labeled.labels);
    prepared.overlap_conflicts = labeled.overlap_conflicts;
    return prepared;
}

std::vector<std::int64_t> beat_samples(const std::vector<wfdb::AnnotationEvent>& events) {
    std::vector<std::int64_t> beats;
    for (const auto& ev : events) {
        if (wfdb::is_beat_symbol(ev.symbol)) beats.push_back(ev.sample_index);
    }
    return beats;
}

// --- cache file -------------------------------------------------------------------

namespace {
constexpr char kMagic[8] = {'E', 'C', 'G', 'S', 'E', 'G', '1', '\0'};
constexpr std::uint32_t kCacheVersion = 1;
}  // namespace

void write_segment_cache(const std::string& path, const SegmentCache& cache) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 8);
    put_u32le(out, kCacheVersion);
    put_u64le(out, cache.manifest_json.size());
    out.insert(out.end(), cache.manifest_json.begin(), cache.manifest_json.end());

    // Record-name table referenced by per-segment indices.
    std::vector<std::string> record_names;
    for (const auto& seg : cache.segments) {
        if (record_names.empty() || record_names.back() != seg.record_name) {
            if (std::find(record_names.begin(), record_names.end(), seg.record_name) ==
                record_names.end())
                record_names.push_back(seg.record_name);
        }
    }
    put_u32le(out, static_cast<std::uint32_t>(record_names.size()));
    for (const auto& name : record_names) {
        put_u32le(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
    }

    put_u64le(out, cache.segments.size());
    for (const auto& seg : cache.segments) {
        const auto it = std::find(record_names.begin(), record_names.end(), seg.record_name);
        put_u32le(out, static_cast<std::uint32_t>(it - record_names.begin()));
        put_u64le(out, static_cast<std::uint64_t>(seg.start_offset));
        put_u32le(out, static_cast<std::uint32_t>(seg.samples.size()));
        for (float v : seg.samples) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            put_u32le(out, bits);
        }
        for (SampleClass c : seg.labels) out.push_back(static_cast<std::uint8_t>(c));
    }

    const std::uint32_t crc = crc32(out.data() + 8, out.size() - 8);
    put_u32le(out, crc);
    write_file_bytes(path, out.data(), out.size());
}

SegmentCache read_segment_cache(const std::string& path) {
    const std::vector<std::uint8_t> bytes = read_file_bytes(path);
    if (bytes.size() < 8 + 4 + 8 + 4 || std::memcmp(bytes.data(), kMagic, 8) != 0)
        throw Error("segment cache: bad magic in " + path);

    const std::uint32_t stored_crc = get_u32le(bytes.data() + bytes.size() - 4);
    const std::uint32_t actual_crc = crc32(bytes.data() + 8, bytes.size() - 12);
    if (stored_crc != actual_crc) throw Error("segment cache: checksum mismatch in " + path);

    std::size_t pos = 8;
    auto need = [&](std::size_t n) {
        if (pos + n > bytes.size() - 4) throw Error("segment cache: truncated file " + path);
    };

    need(4);
    const std::uint32_t version = get_u32le(bytes.data() + pos);
    pos += 4;
    if (version != kCacheVersion)
        throw Error("segment cache: unsupported version " + std::to_string(version));

    need(8);
    const std::uint64_t manifest_len = get_u64le(bytes.data() + pos);
    pos += 8;
    need(manifest_len);
    SegmentCache cache;
    cache.manifest_json.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                               bytes.begin() + static_cast<std::ptrdiff_t>(pos + manifest_len));
    pos += manifest_len;

    need(4);
    const std::uint32_t n_records = get_u32le(bytes.data() + pos);
    pos += 4;
    std::vector<std::string> record_names(n_records);
    for (auto& name : record_names) {
        need(4);
        const std::uint32_t len = get_u32le(bytes.data() + pos);
        pos += 4;
        need(len);
        name.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + len));
        pos += len;
    }

    need(8);
    const std::uint64_t n_segments = get_u64le(bytes.data() + pos);
    pos += 8;
    cache.segments.resize(n_segments);
    for (auto& seg : cache.segments) {
        need(4 + 8 + 4);
        const std::uint32_t rec_idx = get_u32le(bytes.data() + pos);
        pos += 4;
        if (rec_idx >= record_names.size()) throw Error("segment cache: bad record index");
        seg.record_name = record_names[rec_idx];
        seg.start_offset = static_cast<std::int64_t>(get_u64le(bytes.data() + pos));
        pos += 8;
        const std::uint32_t len = get_u32le(bytes.data() + pos);
        pos += 4;
        need(static_cast<std::size_t>(len) * 5);
        seg.samples.resize(len);
        for (std::uint32_t i = 0; i < len; ++i) {
            const std::uint32_t bits = get_u32le(bytes.data() + pos);
            pos += 4;
            std::memcpy(&seg.samples[i], &bits, 4);
        }
        seg.labels.resize(len);
        for (std::uint32_t i = 0; i < len; ++i) {
            const std::uint8_t b = bytes[pos++];
            if (b >= kNumClasses) throw Error("segment cache: invalid label byte");
            seg.labels[i] = static_cast<SampleClass>(b);
        }
    }
    return cache;
}

}  // namespace ecg::dataset
