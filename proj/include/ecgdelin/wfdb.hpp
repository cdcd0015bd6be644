#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ecg::wfdb {

/// Per-signal descriptor from a .hea file.
struct SignalSpec {
    std::string file_name;
    int format_code = 0;       // 212 or 16
    double gain = 200.0;       // ADC units per physical unit (mV)
    int baseline = 0;          // ADC value corresponding to 0 physical units
    std::string units = "mV";
};

struct RecordHeader {
    std::string record_name;
    int n_signals = 0;
    double sampling_frequency = 0.0;
    std::int64_t n_samples = 0;  // per signal; 0 means "infer from file size"
    std::vector<SignalSpec> signals;
};

/// Multi-channel signal in physical units, column per channel.
struct SignalData {
    std::int64_t n_samples = 0;
    int n_channels = 0;
    std::vector<double> values;  // row-major [n_samples x n_channels]

    double at(std::int64_t sample, int channel) const {
        return values[static_cast<std::size_t>(sample) * n_channels + channel];
    }
    /// Copies one channel out as a contiguous vector.
    std::vector<double> channel(int c) const;
};

struct AnnotationEvent {
    std::int64_t sample_index = 0;
    char symbol = '?';
    int chan = 0;
    std::string aux;
};

/// Parses the text of a WFDB .hea file. Lines starting with '#' are comments.
/// Missing gain defaults to 200 ADC units per mV and missing baseline to the
/// ADC-zero field (itself defaulting to 0), per the WFDB header conventions.
RecordHeader parse_header(const std::string& text);

/// Decodes a .dat byte buffer described by `header` into physical units via
/// (adc - baseline) / gain. Supports formats 212 and 16 only.
SignalData decode_signal(const RecordHeader& header, const std::vector<std::uint8_t>& bytes);

/// Decodes an MIT-format annotation byte buffer. Events are returned sorted by
/// sample index; CHN pseudo-annotations set the channel for subsequent events.
std::vector<AnnotationEvent> decode_annotations(const std::vector<std::uint8_t>& bytes);

/// Symbol for a 6-bit MIT annotation type code, '?' if the code is unknown.
char annotation_symbol(int code);

/// True if the symbol marks a QRS complex (any beat type).
bool is_beat_symbol(char symbol);

/// Header + signal + annotations for one record.
struct Record {
    RecordHeader header;
    SignalData signal;
    std::vector<AnnotationEvent> annotations;
    std::string annotation_suffix;  // which annotation file was loaded, if any
};

/// Reads <dir>/<name>.hea, the signal file(s) it references, and the first
/// annotation file found among `annotation_suffixes` (e.g. {"q1c", "pu0"}).
/// An empty suffix list, or no matching file, leaves annotations empty.
Record read_record(const std::string& dir, const std::string& name,
                   const std::vector<std::string>& annotation_suffixes);

/// Record names from <dir>/RECORDS, or all *.hea basenames if absent. Sorted.
std::vector<std::string> list_records(const std::string& dir);

}  // namespace ecg::wfdb
