#include "ecgdelin/delineate.hpp"

#include <algorithm>
#include <cmath>

#include "ecgdelin/util.hpp"

namespace ecg::delin {

ExtractOptions ExtractOptions::for_rate(double fs, double min_duration_ms, double merge_gap_ms) {
    ExtractOptions opts;
    opts.min_duration = std::llround(min_duration_ms * fs / 1000.0);
    opts.merge_gap = std::llround(merge_gap_ms * fs / 1000.0);
    return opts;
}

std::vector<LabelRun> extract_wave_segments(const std::vector<SampleClass>& labels,
                                            const ExtractOptions& options) {
    std::vector<LabelRun> runs;
    const std::int64_t n = static_cast<std::int64_t>(labels.size());
    for (std::int64_t i = 0; i < n;) {
        const SampleClass c = labels[static_cast<std::size_t>(i)];
        std::int64_t j = i + 1;
        while (j < n && labels[static_cast<std::size_t>(j)] == c) ++j;
        if (c != SampleClass::NW) runs.push_back({c, i, j - 1});
        i = j;
    }

    // Merge same-class runs across short all-NW gaps. Runs are maximal, so a
    // same-class neighbor in `runs` has at least one other-class or NW sample
    // between; only all-NW gaps may be bridged.
    std::vector<LabelRun> merged;
    for (const LabelRun& run : runs) {
        if (!merged.empty() && merged.back().wave_class == run.wave_class &&
            run.onset - merged.back().offset - 1 <= options.merge_gap) {
            bool gap_clear = true;
            for (std::int64_t s = merged.back().offset + 1; s < run.onset; ++s) {
                if (labels[static_cast<std::size_t>(s)] != SampleClass::NW) {
                    gap_clear = false;
                    break;
                }
            }
            if (gap_clear) {
                merged.back().offset = run.offset;
                continue;
            }
        }
        merged.push_back(run);
    }

    std::vector<LabelRun> kept;
    for (const LabelRun& run : merged) {
        if (run.offset - run.onset + 1 >= options.min_duration) kept.push_back(run);
    }
    return kept;
}

std::int64_t locate_peak(const std::vector<double>& signal, std::int64_t onset,
                         std::int64_t offset) {
    if (onset < 0 || offset >= static_cast<std::int64_t>(signal.size()) || onset > offset)
        throw Error("locate_peak: segment out of bounds");
    std::int64_t best = onset;
    double best_mag = std::abs(signal[static_cast<std::size_t>(onset)]);
    for (std::int64_t s = onset + 1; s <= offset; ++s) {
        const double mag = std::abs(signal[static_cast<std::size_t>(s)]);
        if (mag > best_mag) {
            best_mag = mag;
            best = s;
        }
    }
    return best;
}

DelineationResult delineate_record(const SequenceLabeler& labeler,
                                   const std::vector<double>& signal, double fs,
                                   const std::string& record_name, std::size_t window) {
    if (signal.empty()) throw Error("delineate_record: empty record");
    if (window == 0) throw Error("delineate_record: window must be positive");

    std::vector<SampleClass> labels;
    labels.reserve(signal.size());
    for (std::size_t start = 0; start < signal.size(); start += window) {
        const std::size_t len = std::min(window, signal.size() - start);
        std::vector<double> chunk(signal.begin() + static_cast<std::ptrdiff_t>(start),
                                  signal.begin() + static_cast<std::ptrdiff_t>(start + len));
        std::vector<SampleClass> chunk_labels = labeler(chunk);
        if (chunk_labels.size() != len)
            throw Error("delineate_record: labeler returned wrong length");
        labels.insert(labels.end(), chunk_labels.begin(), chunk_labels.end());
    }

    DelineationResult result;
    result.record_name = record_name;
    result.sampling_frequency = fs;
    for (const LabelRun& run : extract_wave_segments(labels, ExtractOptions::for_rate(fs))) {
        WaveSegment seg;
        seg.wave_class = run.wave_class;
        seg.onset = run.onset;
        seg.offset = run.offset;
        seg.peak = locate_peak(signal, run.onset, run.offset);
        result.segments.push_back(seg);
    }
    return result;
}

std::vector<SampleClass> paint_runs(const std::vector<LabelRun>& runs, std::size_t n_samples) {
    std::vector<SampleClass> labels(n_samples, SampleClass::NW);
    for (const LabelRun& run : runs) {
        for (std::int64_t s = run.onset; s <= run.offset; ++s)
            labels[static_cast<std::size_t>(s)] = run.wave_class;
    }
    return labels;
}

}  // namespace ecg::delin
