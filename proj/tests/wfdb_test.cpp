#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "ecgdelin/util.hpp"
#include "ecgdelin/wfdb.hpp"
#include "support/testutil.hpp"

using namespace ecg;

namespace {

std::vector<std::uint8_t> word(int code, int interval) {
    std::vector<std::uint8_t> out;
    out.push_back(static_cast<std::uint8_t>(interval & 0xff));
    out.push_back(static_cast<std::uint8_t>(((code & 0x3f) << 2) | ((interval >> 8) & 0x03)));
    return out;
}

void append(std::vector<std::uint8_t>& dst, const std::vector<std::uint8_t>& src) {
    dst.insert(dst.end(), src.begin(), src.end());
}

}  // namespace

TEST_CASE("parse_header reads a QTDB-style record line") {
    const std::string text =
        "sel100 2 250 225000\n"
        "sel100.dat 212 200/mV 12 0 -21 -22 0 ECG1\n"
        "sel100.dat 212 200/mV 12 0 -53 11 0 ECG2\n";
    const auto header = wfdb::parse_header(text);
    CHECK(header.record_name == "sel100");
    CHECK(header.n_signals == 2);
    CHECK(header.sampling_frequency == 250.0);
    CHECK(header.n_samples == 225000);
    REQUIRE(header.signals.size() == 2);
    CHECK(header.signals[0].format_code == 212);
    CHECK(header.signals[0].gain == 200.0);
    CHECK(header.signals[0].baseline == 0);
    CHECK(header.signals[0].units == "mV");
}

TEST_CASE("parse_header applies WFDB defaults and conventions") {
    SUBCASE("omitted gain defaults to 200 adc/mV") {
        const auto header = wfdb::parse_header("r 1 250 100\nr.dat 16\n");
        CHECK(header.signals[0].gain == 200.0);
        CHECK(header.signals[0].baseline == 0);
    }
    SUBCASE("explicit baseline in parentheses") {
        const auto header = wfdb::parse_header("r 1 250 100\nr.dat 16 100(1024)/uV\n");
        CHECK(header.signals[0].gain == 100.0);
        CHECK(header.signals[0].baseline == 1024);
        CHECK(header.signals[0].units == "uV");
    }
    SUBCASE("baseline falls back to the adc-zero field") {
        const auto header = wfdb::parse_header("r 1 250 100\nr.dat 16 100/mV 12 512\n");
        CHECK(header.signals[0].baseline == 512);
    }
    SUBCASE("comment lines are skipped") {
        const auto header = wfdb::parse_header("# comment\nr 1 360 650000\nr.dat 212 200/mV\n");
        CHECK(header.sampling_frequency == 360.0);
    }
}

TEST_CASE("parse_header rejects malformed input") {
    CHECK_THROWS_WITH_AS(wfdb::parse_header("r 0 250 100\n"),
                         doctest::Contains("signal count must be >= 1"), Error);
    CHECK_THROWS_AS(wfdb::parse_header("r 2 250 100\nr.dat 212 200/mV\n"), Error);  // missing line
    CHECK_THROWS_WITH_AS(wfdb::parse_header("r 1 250 100\nr.dat 80 200/mV\n"),
                         doctest::Contains("unsupported format code"), Error);
    CHECK_THROWS_AS(wfdb::parse_header(""), Error);
    CHECK_THROWS_AS(wfdb::parse_header("r x 250\n"), Error);
}

TEST_CASE("decode_signal unpacks format 212 bit layout") {
    wfdb::RecordHeader header;
    header.record_name = "t";
    header.n_signals = 2;
    header.sampling_frequency = 250;
    header.n_samples = 1;
    header.signals = {{"t.dat", 212, 1.0, 0, "mV"}, {"t.dat", 212, 1.0, 0, "mV"}};

    SUBCASE("low byte plus low nibble, high nibble plus third byte") {
        const auto data = wfdb::decode_signal(header, {0x01, 0x00, 0x02});
        CHECK(data.at(0, 0) == 1.0);
        CHECK(data.at(0, 1) == 2.0);
    }
    SUBCASE("12-bit two's complement sign extension") {
        const auto data = wfdb::decode_signal(header, {0xFF, 0x0F, 0x00});
        CHECK(data.at(0, 0) == -1.0);
        CHECK(data.at(0, 1) == 0.0);
    }
    SUBCASE("adc equal to baseline decodes to zero mV") {
        header.signals[0].baseline = 7;
        header.signals[1].baseline = -3;
        header.signals[0].gain = 100.0;
        header.signals[1].gain = 100.0;
        const auto bytes = testutil::encode_format212({7, -3});
        const auto data = wfdb::decode_signal(header, bytes);
        CHECK(data.at(0, 0) == 0.0);
        CHECK(data.at(0, 1) == 0.0);
    }
    SUBCASE("truncated data reports the byte offset") {
        header.n_samples = 4;
        CHECK_THROWS_WITH_AS(wfdb::decode_signal(header, {0x01, 0x00, 0x02, 0x01}),
                             doctest::Contains("byte offset 3"), Error);
    }
}

TEST_CASE("decode_signal handles format 16 and physical conversion") {
    wfdb::RecordHeader header;
    header.n_signals = 1;
    header.sampling_frequency = 250;
    header.n_samples = 3;
    header.signals = {{"t.dat", 16, 200.0, 100, "mV"}};
    const auto bytes = testutil::encode_format16({100, 300, -100});
    const auto data = wfdb::decode_signal(header, bytes);
    CHECK(data.at(0, 0) == doctest::Approx(0.0));
    CHECK(data.at(1, 0) == doctest::Approx(1.0));
    CHECK(data.at(2, 0) == doctest::Approx(-1.0));
}

TEST_CASE("format 212 encode/decode round-trip on random 12-bit pairs") {
    Rng rng(42);
    wfdb::RecordHeader header;
    header.n_signals = 2;
    header.sampling_frequency = 250;
    header.signals = {{"t.dat", 212, 1.0, 0, "mV"}, {"t.dat", 212, 1.0, 0, "mV"}};
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n_frames = 1 + uniform_index(rng, 50);
        std::vector<int> adc(2 * n_frames);
        for (auto& v : adc) v = static_cast<int>(uniform_index(rng, 4096)) - 2048;
        header.n_samples = static_cast<std::int64_t>(n_frames);
        const auto decoded = wfdb::decode_signal(header, testutil::encode_format212(adc));
        for (std::size_t i = 0; i < n_frames; ++i) {
            REQUIRE(decoded.at(static_cast<std::int64_t>(i), 0) == doctest::Approx(adc[2 * i]));
            REQUIRE(decoded.at(static_cast<std::int64_t>(i), 1) == doctest::Approx(adc[2 * i + 1]));
        }
    }
}

TEST_CASE("decode_annotations basics") {
    SUBCASE("single NORMAL event at increment 100") {
        std::vector<std::uint8_t> bytes = word(1, 100);
        append(bytes, word(0, 0));
        const auto events = wfdb::decode_annotations(bytes);
        REQUIRE(events.size() == 1);
        CHECK(events[0].sample_index == 100);
        CHECK(events[0].symbol == 'N');
    }
    SUBCASE("immediate terminator gives an empty list") {
        CHECK(wfdb::decode_annotations(word(0, 0)).empty());
    }
    SUBCASE("increments accumulate") {
        std::vector<std::uint8_t> bytes = word(1, 10);
        append(bytes, word(27, 5));  // 't'
        append(bytes, word(0, 0));
        const auto events = wfdb::decode_annotations(bytes);
        REQUIRE(events.size() == 2);
        CHECK(events[0].sample_index == 10);
        CHECK(events[1].sample_index == 15);
        CHECK(events[1].symbol == 't');
    }
    SUBCASE("SKIP adds a 4-byte interval") {
        std::vector<std::uint8_t> bytes = word(59, 0);
        const std::uint32_t skip = 100000;
        put_u16le(bytes, static_cast<std::uint16_t>((skip >> 16) & 0xffff));
        put_u16le(bytes, static_cast<std::uint16_t>(skip & 0xffff));
        append(bytes, word(1, 3));
        append(bytes, word(0, 0));
        const auto events = wfdb::decode_annotations(bytes);
        REQUIRE(events.size() == 1);
        CHECK(events[0].sample_index == 100003);
    }
    SUBCASE("CHN sets the channel for subsequent events") {
        std::vector<std::uint8_t> bytes = word(1, 10);
        append(bytes, word(62, 1));  // CHN -> 1
        append(bytes, word(1, 10));
        append(bytes, word(0, 0));
        const auto events = wfdb::decode_annotations(bytes);
        REQUIRE(events.size() == 2);
        CHECK(events[0].chan == 0);
        CHECK(events[1].chan == 1);
    }
    SUBCASE("AUX bytes attach to the preceding event, odd length padded") {
        std::vector<std::uint8_t> bytes = word(28, 10);  // '+'
        append(bytes, word(63, 3));
        bytes.push_back('(');
        bytes.push_back('A');
        bytes.push_back('F');
        bytes.push_back(0);  // pad
        append(bytes, word(1, 5));
        append(bytes, word(0, 0));
        const auto events = wfdb::decode_annotations(bytes);
        REQUIRE(events.size() == 2);
        CHECK(events[0].aux == "(AF");
        CHECK(events[1].sample_index == 15);
    }
}

TEST_CASE("decode_annotations error paths") {
    SUBCASE("missing terminator") {
        CHECK_THROWS_WITH_AS(wfdb::decode_annotations(word(1, 5)),
                             doctest::Contains("missing terminating"), Error);
    }
    SUBCASE("AUX overruns the buffer") {
        std::vector<std::uint8_t> bytes = word(1, 5);
        append(bytes, word(63, 200));
        bytes.push_back('x');
        CHECK_THROWS_WITH_AS(wfdb::decode_annotations(bytes), doctest::Contains("AUX"), Error);
    }
}

TEST_CASE("annotation round-trip via the test encoder") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<wfdb::AnnotationEvent> events;
        std::int64_t sample = 0;
        const std::size_t n = uniform_index(rng, 40);
        for (std::size_t i = 0; i < n; ++i) {
            sample += 1 + static_cast<std::int64_t>(uniform_index(rng, 5000));
            const char symbols[] = {'N', 'p', 't', '(', ')', 'V'};
            events.push_back({sample, symbols[uniform_index(rng, 6)], 0, ""});
        }
        const auto decoded = wfdb::decode_annotations(testutil::encode_annotations(events));
        REQUIRE(decoded.size() == events.size());
        for (std::size_t i = 0; i < events.size(); ++i) {
            REQUIRE(decoded[i].sample_index == events[i].sample_index);
            REQUIRE(decoded[i].symbol == events[i].symbol);
        }
    }
}

TEST_CASE("full-length synthetic record decodes to the declared sample count") {
    const auto dir = std::filesystem::temp_directory_path() / "ecgdelin_wfdb_test";
    std::filesystem::remove_all(dir);
    testutil::SynthConfig config;
    config.duration_s = 900.0;  // 15 minutes at 250 Hz
    config.seed = 5;
    const auto synth = testutil::synth_ecg(config);
    testutil::write_wfdb_record(dir.string(), "sel000", synth, 250.0, "q1c");

    const auto record = wfdb::read_record(dir.string(), "sel000", {"q1c", "pu0"});
    CHECK(record.header.n_samples == 225000);
    CHECK(record.signal.n_samples == 225000);
    CHECK(record.signal.n_channels == 2);
    CHECK(record.annotation_suffix == "q1c");
    CHECK_FALSE(record.annotations.empty());
    for (const auto& ev : record.annotations) {
        REQUIRE(ev.sample_index >= 0);
        REQUIRE(ev.sample_index < record.signal.n_samples);
    }
    // Signal round-trips through ADC quantization: 1/(2*gain) = 2.5e-3 mV.
    for (std::size_t i = 0; i < synth.signal.size(); i += 1000) {
        REQUIRE(std::abs(record.signal.at(static_cast<std::int64_t>(i), 0) - synth.signal[i]) <=
                0.0025 + 1e-12);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("list_records honors the RECORDS file") {
    const auto dir = std::filesystem::temp_directory_path() / "ecgdelin_records_test";
    std::filesystem::remove_all(dir);
    const auto names = testutil::write_synth_database(dir.string(), 3, 5.0, 11);
    CHECK(wfdb::list_records(dir.string()) == names);
    std::filesystem::remove_all(dir);
}
