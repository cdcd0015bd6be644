#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ecgdelin/wfdb.hpp"

namespace ecg::dataset {

/// Per-sample class. Codes are stable: they index confusion matrices, one-hot
/// rows, and the network's output units.
enum class SampleClass : std::uint8_t { P = 0, QRS = 1, T = 2, NW = 3 };
inline constexpr int kNumClasses = 4;
inline constexpr std::size_t kSegmentLength = 1000;

const char* class_name(SampleClass c);

/// One annotated wave: class plus onset/peak/offset sample indices.
struct AnnotatedWave {
    SampleClass wave_class = SampleClass::NW;
    std::int64_t onset = 0;
    std::int64_t peak = 0;
    std::int64_t offset = 0;
};

/// Pairs '(' ... peak ... ')' annotation triples into waves. Peaks are 'p',
/// 't', or any beat symbol; triples around other symbols (e.g. u waves) and
/// unmatched brackets are dropped.
std::vector<AnnotatedWave> extract_annotated_waves(const std::vector<wfdb::AnnotationEvent>& events);

struct LabelResult {
    std::vector<SampleClass> labels;
    int overlap_conflicts = 0;  // later waves that collided with an earlier one
};

/// Paints wave intervals [onset, offset] (inclusive) onto an all-NW canvas.
/// When waves of different classes overlap, the earlier wave wins and the
/// conflict is counted.
LabelResult build_sample_labels(const std::vector<wfdb::AnnotationEvent>& events,
                                std::int64_t n_samples);

struct Segment {
    std::vector<float> samples;        // kSegmentLength filtered values, mV
    std::vector<SampleClass> labels;   // kSegmentLength
    std::string record_name;
    std::int64_t start_offset = 0;

    /// Count of samples per class among the labels.
    std::array<std::int64_t, kNumClasses> class_histogram() const;
};

/// Cuts consecutive non-overlapping windows of `window` samples; the final
/// partial window is dropped.
std::vector<Segment> segment_record(const std::vector<double>& signal,
                                    const std::vector<SampleClass>& labels,
                                    const std::string& record_name,
                                    std::size_t window = kSegmentLength);

struct RecordSplit {
    std::vector<std::string> train_records;
    std::vector<std::string> test_records;
};

/// Deterministic record-level split: sort, seeded shuffle, first
/// round(train_ratio * n) records to train, the rest to test.
RecordSplit split_records(std::vector<std::string> names, std::uint64_t seed, double train_ratio);

/// Greedy stratified assignment of segments to k folds: each segment goes to
/// the fold (among those not yet full) whose per-class sample proportions end
/// up closest to the global proportions. Deterministic given the seed.
std::vector<std::vector<std::size_t>> stratified_kfold(const std::vector<Segment>& segments,
                                                       int k, std::uint64_t seed);

struct OneHotLabels {
    std::size_t rows = 0;
    std::vector<std::uint8_t> data;  // row-major [rows x kNumClasses]

    std::uint8_t at(std::size_t row, int cls) const { return data[row * kNumClasses + static_cast<std::size_t>(cls)]; }
};

OneHotLabels one_hot_encode(const std::vector<SampleClass>& labels);

// --- record preparation ----------------------------------------------------------

struct PrepareOptions {
    double target_fs = 250.0;   // records at other rates are resampled first
    int channel = 0;
    bool apply_filter = true;   // zero-phase band-pass at target_fs
    int filter_order = 3;
    double low_cut = 0.5;       // Hz
    double high_cut = 40.0;     // Hz
};

struct PreparedRecord {
    std::string name;
    double fs = 0.0;
    std::vector<double> signal;             // selected channel, resampled + filtered
    std::vector<SampleClass> labels;        // per-sample classes from annotations
    std::vector<wfdb::AnnotationEvent> annotations;  // indices rescaled to target_fs
    int overlap_conflicts = 0;
};

/// Channel selection, resampling to the target rate (annotation indexes are
/// rescaled by the same rational ratio), zero-phase band-pass filtering, and
/// per-sample labeling.
PreparedRecord prepare_record(const wfdb::Record& record, const PrepareOptions& options);

/// Sample indices of beat annotations (QRS reference events).
std::vector<std::int64_t> beat_samples(const std::vector<wfdb::AnnotationEvent>& events);

// --- segment cache file --------------------------------------------------------
// Binary container: magic, version, JSON manifest, per-segment payload
// (record index, start offset, float32 samples, byte labels), CRC-32 trailer.

struct SegmentCache {
    std::string manifest_json;       // provenance: records, seed, filter spec, ...
    std::vector<Segment> segments;
};

void write_segment_cache(const std::string& path, const SegmentCache& cache);
SegmentCache read_segment_cache(const std::string& path);

}  // namespace ecg::dataset
