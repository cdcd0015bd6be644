#include "ecgdelin/wfdb.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <set>
#include <sstream>

#include "ecgdelin/util.hpp"

namespace ecg::wfdb {

namespace {

// MIT annotation type codes 0..41. Codes 42+ are reserved.
constexpr std::array<char, 42> kSymbolTable = {
    ' ', 'N', 'L', 'R', 'a', 'V', 'F', 'J', 'A', 'S', 'E', 'j', '/', 'Q',
    '~', ' ', '|', ' ', 's', 'T', '*', 'D', '"', '=', 'p', 'B', '^', 't',
    '+', 'u', '?', '!', '[', ']', 'e', 'n', '@', 'x', 'f', '(', ')', 'r'};

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

[[noreturn]] void parse_fail(int line_no, const std::string& what) {
    throw Error("header line " + std::to_string(line_no) + ": " + what);
}

double parse_number(const std::string& token, int line_no, const char* what) {
    try {
        std::size_t pos = 0;
        double v = std::stod(token, &pos);
        if (pos == 0) parse_fail(line_no, std::string("bad ") + what + " '" + token + "'");
        return v;
    } catch (const std::exception&) {
        parse_fail(line_no, std::string("bad ") + what + " '" + token + "'");
    }
}

// Sign extension for a 12-bit two's-complement value.
int extend12(int raw) {
    return (raw & 0x800) ? raw - 0x1000 : raw;
}

}  // namespace

std::vector<double> SignalData::channel(int c) const {
    std::vector<double> out(static_cast<std::size_t>(n_samples));
    for (std::int64_t i = 0; i < n_samples; ++i) out[static_cast<std::size_t>(i)] = at(i, c);
    return out;
}

RecordHeader parse_header(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int line_no = 0;

    // First non-comment, non-blank line is the record line.
    std::string record_line;
    while (std::getline(in, line)) {
        ++line_no;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        record_line = t;
        break;
    }
    if (record_line.empty()) throw Error("header: no record line found");

    std::istringstream rec(record_line);
    std::string name_token, nsig_token, fs_token, nsamp_token;
    rec >> name_token >> nsig_token;
    if (name_token.empty() || nsig_token.empty()) parse_fail(line_no, "malformed record line");
    if (name_token.find('/') != std::string::npos)
        parse_fail(line_no, "multi-segment records are not supported");

    RecordHeader header;
    header.record_name = name_token;
    header.n_signals = static_cast<int>(parse_number(nsig_token, line_no, "signal count"));
    if (header.n_signals < 1) parse_fail(line_no, "signal count must be >= 1");

    header.sampling_frequency = 250.0;  // WFDB default when omitted
    if (rec >> fs_token) {
        // A counter frequency may be appended after '/'.
        header.sampling_frequency = parse_number(fs_token.substr(0, fs_token.find('/')),
                                                 line_no, "sampling frequency");
    }
    if (header.sampling_frequency <= 0) parse_fail(line_no, "sampling frequency must be > 0");
    if (rec >> nsamp_token) {
        header.n_samples = static_cast<std::int64_t>(parse_number(nsamp_token, line_no, "sample count"));
        if (header.n_samples < 0) parse_fail(line_no, "sample count must be >= 0");
    }

    for (int i = 0; i < header.n_signals;) {
        if (!std::getline(in, line)) {
            throw Error("header: expected " + std::to_string(header.n_signals) +
                        " signal lines, found " + std::to_string(i));
        }
        ++line_no;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;

        std::istringstream sig(t);
        std::string file_token, fmt_token, gain_token;
        sig >> file_token >> fmt_token;
        if (file_token.empty() || fmt_token.empty()) parse_fail(line_no, "malformed signal line");

        SignalSpec spec;
        spec.file_name = file_token;

        // Format may carry xNN/:NN/+NN modifiers; none are supported.
        std::size_t fmt_end = fmt_token.find_first_of("x:+");
        if (fmt_end != std::string::npos)
            parse_fail(line_no, "format modifiers are not supported: '" + fmt_token + "'");
        spec.format_code = static_cast<int>(parse_number(fmt_token, line_no, "format code"));
        if (spec.format_code != 212 && spec.format_code != 16)
            parse_fail(line_no, "unsupported format code " + std::to_string(spec.format_code) +
                                    " (only 212 and 16)");

        bool have_baseline = false;
        if (sig >> gain_token) {
            // gain[(baseline)][/units]
            std::string body = gain_token;
            auto slash = body.find('/');
            if (slash != std::string::npos) {
                spec.units = body.substr(slash + 1);
                body = body.substr(0, slash);
            }
            auto open = body.find('(');
            if (open != std::string::npos) {
                auto close = body.find(')', open);
                if (close == std::string::npos) parse_fail(line_no, "unbalanced baseline parens");
                spec.baseline = static_cast<int>(
                    parse_number(body.substr(open + 1, close - open - 1), line_no, "baseline"));
                have_baseline = true;
                body = body.substr(0, open);
            }
            double gain = body.empty() ? 0.0 : parse_number(body, line_no, "gain");
            spec.gain = gain > 0 ? gain : 200.0;  // zero/missing gain means the default
        }
        std::string res_token, zero_token;
        sig >> res_token >> zero_token;
        if (!have_baseline && !zero_token.empty()) {
            // Baseline defaults to the ADC-zero field when not given explicitly.
            spec.baseline = static_cast<int>(parse_number(zero_token, line_no, "adc zero"));
        }

        header.signals.push_back(std::move(spec));
        ++i;
    }
    return header;
}

SignalData decode_signal(const RecordHeader& header, const std::vector<std::uint8_t>& bytes) {
    if (header.signals.empty()) throw Error("decode_signal: header has no signal specs");
    const int fmt = header.signals[0].format_code;
    for (const auto& s : header.signals) {
        if (s.format_code != fmt) throw Error("decode_signal: mixed signal formats are not supported");
    }

    const int nch = header.n_signals;
    std::int64_t n_samples = header.n_samples;
    std::vector<int> adc;  // channel-interleaved ADC values

    if (fmt == 212) {
        if (n_samples == 0) {
            std::int64_t slots = static_cast<std::int64_t>(bytes.size() / 3) * 2;
            n_samples = slots / nch;
        }
        const std::int64_t slots = n_samples * nch;
        const std::size_t needed = static_cast<std::size_t>((slots + 1) / 2) * 3;
        if (bytes.size() < needed) {
            std::size_t offset = (bytes.size() / 3) * 3;
            throw Error("decode_signal: truncated format-212 data, partial frame at byte offset " +
                        std::to_string(offset));
        }
        adc.resize(static_cast<std::size_t>(slots));
        for (std::int64_t p = 0; p * 2 < slots; ++p) {
            const std::uint8_t* b = bytes.data() + p * 3;
            int s0 = extend12(((b[1] & 0x0f) << 8) | b[0]);
            int s1 = extend12(((b[1] & 0xf0) << 4) | b[2]);
            adc[static_cast<std::size_t>(p * 2)] = s0;
            if (p * 2 + 1 < slots) adc[static_cast<std::size_t>(p * 2 + 1)] = s1;
        }
    } else {  // format 16
        if (n_samples == 0) n_samples = static_cast<std::int64_t>(bytes.size() / 2) / nch;
        const std::int64_t slots = n_samples * nch;
        const std::size_t needed = static_cast<std::size_t>(slots) * 2;
        if (bytes.size() < needed) {
            std::size_t offset = (bytes.size() / 2) * 2;
            throw Error("decode_signal: truncated format-16 data, partial frame at byte offset " +
                        std::to_string(offset));
        }
        adc.resize(static_cast<std::size_t>(slots));
        for (std::int64_t i = 0; i < slots; ++i) {
            adc[static_cast<std::size_t>(i)] =
                static_cast<std::int16_t>(get_u16le(bytes.data() + i * 2));
        }
    }

    SignalData data;
    data.n_samples = n_samples;
    data.n_channels = nch;
    data.values.resize(static_cast<std::size_t>(n_samples) * nch);
    for (std::int64_t i = 0; i < n_samples; ++i) {
        for (int c = 0; c < nch; ++c) {
            const auto& spec = header.signals[static_cast<std::size_t>(c)];
            int raw = adc[static_cast<std::size_t>(i * nch + c)];
            data.values[static_cast<std::size_t>(i * nch + c)] = (raw - spec.baseline) / spec.gain;
        }
    }
    return data;
}

std::vector<AnnotationEvent> decode_annotations(const std::vector<std::uint8_t>& bytes) {
    std::vector<AnnotationEvent> events;
    std::int64_t current = 0;
    int chan = 0;
    std::size_t pos = 0;
    bool terminated = false;

    while (pos + 2 <= bytes.size()) {
        const int b0 = bytes[pos];
        const int b1 = bytes[pos + 1];
        pos += 2;
        const int code = (b1 >> 2) & 0x3f;
        const int interval = ((b1 & 0x03) << 8) | b0;

        if (code == 0 && interval == 0) {
            terminated = true;
            break;
        }
        switch (code) {
            case 59: {  // SKIP: 4-byte interval, high word first, each little-endian
                if (pos + 4 > bytes.size())
                    throw Error("annotations: SKIP interval overruns buffer at byte " +
                                std::to_string(pos));
                std::uint32_t high = get_u16le(bytes.data() + pos);
                std::uint32_t low = get_u16le(bytes.data() + pos + 2);
                current += static_cast<std::int32_t>((high << 16) | low);
                pos += 4;
                break;
            }
            case 60:  // NUM
            case 61:  // SUB
                break;
            case 62:  // CHN: sticky channel for subsequent annotations
                chan = interval;
                break;
            case 63: {  // AUX: `interval` bytes, padded to even length
                std::size_t len = static_cast<std::size_t>(interval);
                std::size_t padded = len + (len % 2);
                if (pos + padded > bytes.size())
                    throw Error("annotations: AUX length " + std::to_string(len) +
                                " overruns buffer at byte " + std::to_string(pos));
                if (!events.empty())
                    events.back().aux.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                             bytes.begin() + static_cast<std::ptrdiff_t>(pos + len));
                pos += padded;
                break;
            }
            default: {
                current += interval;
                AnnotationEvent ev;
                ev.sample_index = current;
                ev.symbol = annotation_symbol(code);
                ev.chan = chan;
                events.push_back(std::move(ev));
                break;
            }
        }
    }
    if (!terminated) throw Error("annotations: missing terminating null word");

    std::stable_sort(events.begin(), events.end(),
                     [](const AnnotationEvent& a, const AnnotationEvent& b) {
                         return a.sample_index < b.sample_index;
                     });
    return events;
}

char annotation_symbol(int code) {
    if (code >= 0 && code < static_cast<int>(kSymbolTable.size())) return kSymbolTable[static_cast<std::size_t>(code)];
    return '?';
}

bool is_beat_symbol(char symbol) {
    static const std::set<char> beats = {'N', 'L', 'R', 'B', 'a', 'V', 'F', 'J', 'A',
                                         'S', 'E', 'j', '/', 'Q', 'e', 'n', 'f', 'r'};
    return beats.count(symbol) > 0;
}

Record read_record(const std::string& dir, const std::string& name,
                   const std::vector<std::string>& annotation_suffixes) {
    namespace fs = std::filesystem;
    Record record;
    const std::string hea_path = (fs::path(dir) / (name + ".hea")).string();
    record.header = parse_header(read_file_text(hea_path));

    const std::string& dat_name = record.header.signals.at(0).file_name;
    for (const auto& s : record.header.signals) {
        if (s.file_name != dat_name)
            throw Error("read_record: signals split across multiple .dat files are not supported");
    }
    record.signal = decode_signal(record.header,
                                  read_file_bytes((fs::path(dir) / dat_name).string()));

    for (const auto& suffix : annotation_suffixes) {
        const fs::path ann_path = fs::path(dir) / (name + "." + suffix);
        if (fs::exists(ann_path)) {
            record.annotations = decode_annotations(read_file_bytes(ann_path.string()));
            record.annotation_suffix = suffix;
            break;
        }
    }
    return record;
}

std::vector<std::string> list_records(const std::string& dir) {
    namespace fs = std::filesystem;
    std::vector<std::string> names;
    const fs::path records_file = fs::path(dir) / "RECORDS";
    if (fs::exists(records_file)) {
        std::istringstream in(read_file_text(records_file.string()));
        std::string line;
        while (std::getline(in, line)) {
            std::string t = trim(line);
            if (!t.empty()) names.push_back(t);
        }
    } else {
        if (!fs::is_directory(dir)) throw Error("not a directory: " + dir);
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (entry.path().extension() == ".hea") names.push_back(entry.path().stem().string());
        }
    }
    std::sort(names.begin(), names.end());
    return names;
}

}  // namespace ecg::wfdb
