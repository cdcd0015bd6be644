#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ecgdelin/dataset.hpp"
#include "ecgdelin/nn.hpp"
#include "ecgdelin/tensor.hpp"

namespace ecg::delin {

using dataset::SampleClass;

/// One detected wave with its fiducial sample indices.
struct WaveSegment {
    SampleClass wave_class = SampleClass::NW;
    std::int64_t onset = 0;
    std::int64_t peak = 0;
    std::int64_t offset = 0;
};

struct DelineationResult {
    std::string record_name;
    double sampling_frequency = 0.0;
    std::vector<WaveSegment> segments;  // sorted by onset
};

/// Posterior rows to class codes; ties go to the lowest class code.
template <typename S>
std::vector<SampleClass> argmax_decode(const nn::Tensor<S>& probs) {
    std::vector<SampleClass> out;
    out.reserve(probs.rows());
    for (int c : nn::argmax_rows(probs)) out.push_back(static_cast<SampleClass>(c));
    return out;
}

struct ExtractOptions {
    std::int64_t min_duration = 5;  // samples; 20 ms at 250 Hz
    std::int64_t merge_gap = 2;     // samples; 8 ms at 250 Hz

    static ExtractOptions for_rate(double fs, double min_duration_ms = 20.0,
                                   double merge_gap_ms = 8.0);
};

struct LabelRun {
    SampleClass wave_class = SampleClass::NW;
    std::int64_t onset = 0;
    std::int64_t offset = 0;  // inclusive
};

/// Maximal non-NW runs become candidate waves. Same-class runs separated by
/// an all-NW gap of at most merge_gap samples are merged first; merged runs
/// shorter than min_duration are then relabeled NW.
std::vector<LabelRun> extract_wave_segments(const std::vector<SampleClass>& labels,
                                            const ExtractOptions& options = {});

/// Index of maximum absolute amplitude within [onset, offset]; earliest wins.
std::int64_t locate_peak(const std::vector<double>& signal, std::int64_t onset,
                         std::int64_t offset);

/// Produces per-sample class labels for one window of a filtered signal.
using SequenceLabeler = std::function<std::vector<SampleClass>(const std::vector<double>&)>;

template <typename S>
SequenceLabeler make_model_labeler(const nn::Model<S>& model) {
    return [&model](const std::vector<double>& chunk) {
        nn::Tensor<S> x({chunk.size(), 1});
        for (std::size_t i = 0; i < chunk.size(); ++i) x.data[i] = static_cast<S>(chunk[i]);
        return argmax_decode(model.predict(x));
    };
}

/// Windows the record into consecutive chunks (the final partial chunk keeps
/// its natural length), labels each, concatenates the label streams, and
/// extracts peaked wave segments. Concatenating before run extraction keeps
/// waves that span a window boundary intact.
DelineationResult delineate_record(const SequenceLabeler& labeler,
                                   const std::vector<double>& signal, double fs,
                                   const std::string& record_name = "",
                                   std::size_t window = dataset::kSegmentLength);

/// Paints wave runs back onto an all-NW canvas (round-trip check helper).
std::vector<SampleClass> paint_runs(const std::vector<LabelRun>& runs, std::size_t n_samples);

}  // namespace ecg::delin
