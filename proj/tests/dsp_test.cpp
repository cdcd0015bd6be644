#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "ecgdelin/dsp.hpp"
#include "ecgdelin/util.hpp"

using namespace ecg;

namespace {

dsp::FilterSpec default_spec() {
    return {3, 0.5, 40.0, 250.0};
}

/// Power of a real signal at one frequency via a direct DFT bin (Goertzel-ish
/// oracle, independent of the filtering code under test).
double power_at(const std::vector<double>& x, double freq_hz, double fs) {
    double re = 0.0, im = 0.0;
    for (std::size_t n = 0; n < x.size(); ++n) {
        const double w = 2.0 * std::numbers::pi * freq_hz * static_cast<double>(n) / fs;
        re += x[n] * std::cos(w);
        im -= x[n] * std::sin(w);
    }
    return re * re + im * im;
}

/// Least-squares fit of A sin + B cos at a known frequency; returns amplitude.
double sine_fit_amplitude(const std::vector<double>& x, double freq_hz, double fs,
                          std::size_t lo, std::size_t hi) {
    double ss = 0.0, sc = 0.0, cc = 0.0, sy = 0.0, cy = 0.0;
    for (std::size_t n = lo; n < hi; ++n) {
        const double w = 2.0 * std::numbers::pi * freq_hz * static_cast<double>(n) / fs;
        const double s = std::sin(w), c = std::cos(w);
        ss += s * s;
        sc += s * c;
        cc += c * c;
        sy += s * x[n];
        cy += c * x[n];
    }
    const double det = ss * cc - sc * sc;
    const double a = (cy * ss - sy * sc) / det;
    const double b = (sy * cc - cy * sc) / det;
    return std::hypot(a, b);
}

}  // namespace

TEST_CASE("band-pass design blocks DC and passes mid-band") {
    const auto coeffs = dsp::design_butterworth_bandpass(default_spec());
    CHECK(coeffs.b.size() == 7);
    CHECK(coeffs.a.size() == 7);
    CHECK(coeffs.a[0] == 1.0);
    // The numerator has exact zeros at z = 1; what remains is coefficient
    // roundoff amplified by the small denominator near DC.
    CHECK(dsp::magnitude_response(coeffs, 0.0, 250.0) < 1e-9);
    CHECK(dsp::magnitude_response(coeffs, 10.0, 250.0) == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("band edges sit at the -3 dB points") {
    const auto coeffs = dsp::design_butterworth_bandpass(default_spec());
    const double target = 1.0 / std::sqrt(2.0);
    CHECK(dsp::magnitude_response(coeffs, 0.5, 250.0) == doctest::Approx(target).epsilon(1e-6));
    CHECK(dsp::magnitude_response(coeffs, 40.0, 250.0) == doctest::Approx(target).epsilon(1e-6));
}

TEST_CASE("all poles stay inside the unit circle across a spec grid") {
    for (double low : {0.05, 0.5, 1.0, 5.0}) {
        for (double high : {30.0, 40.0, 60.0, 100.0}) {
            for (double fs : {250.0, 360.0, 500.0}) {
                if (high >= fs / 2) continue;
                const auto coeffs = dsp::design_butterworth_bandpass({3, low, high, fs});
                for (const auto& pole : coeffs.poles) {
                    REQUIRE(std::abs(pole) < 1.0);
                }
            }
        }
    }
}

TEST_CASE("design rejects invalid cutoffs") {
    CHECK_THROWS_AS(dsp::design_butterworth_bandpass({3, 40.0, 40.0, 250.0}), Error);
    CHECK_THROWS_AS(dsp::design_butterworth_bandpass({3, 0.5, 130.0, 250.0}), Error);
    CHECK_THROWS_AS(dsp::design_butterworth_bandpass({3, -1.0, 40.0, 250.0}), Error);
}

TEST_CASE("filtfilt keeps a symmetric pulse centered") {
    const auto coeffs = dsp::design_butterworth_bandpass(default_spec());
    const std::size_t n = 1000, center = 400;
    std::vector<double> x(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double z = (static_cast<double>(i) - static_cast<double>(center)) / 12.0;
        x[i] = std::exp(-0.5 * z * z);
    }
    const auto y = dsp::filtfilt(coeffs, x);
    REQUIRE(y.size() == n);
    std::size_t peak = 0;
    for (std::size_t i = 1; i < n; ++i) {
        if (y[i] > y[peak]) peak = i;
    }
    CHECK(peak == center);
}

TEST_CASE("filtfilt rejects DC") {
    const auto coeffs = dsp::design_butterworth_bandpass(default_spec());
    const std::vector<double> x(2000, 5.0);
    const auto y = dsp::filtfilt(coeffs, x);
    double max_abs = 0.0;
    for (double v : y) max_abs = std::max(max_abs, std::abs(v));
    CHECK(max_abs < 1e-3);
}

TEST_CASE("filtfilt band-limits white noise (spectral oracle)") {
    const auto coeffs = dsp::design_butterworth_bandpass(default_spec());
    Rng rng(123);
    std::vector<double> x(8192);
    for (auto& v : x) v = normal01(rng);
    const auto y = dsp::filtfilt(coeffs, x);

    // Average power in a pass band around 10 Hz vs a stop band above 60 Hz.
    double pass = 0.0, stop = 0.0;
    int pass_n = 0, stop_n = 0;
    for (double f = 8.0; f <= 12.0; f += 0.5) {
        pass += power_at(y, f, 250.0);
        ++pass_n;
    }
    for (double f = 62.0; f <= 100.0; f += 2.0) {
        stop += power_at(y, f, 250.0);
        ++stop_n;
    }
    pass /= pass_n;
    stop /= stop_n;
    const double attenuation_db = 10.0 * std::log10(pass / stop);
    CHECK(attenuation_db >= 24.0);
}

TEST_CASE("filtfilt error and symmetry properties") {
    const auto coeffs = dsp::design_butterworth_bandpass(default_spec());
    SUBCASE("too-short signal") {
        CHECK_THROWS_WITH_AS(dsp::filtfilt(coeffs, std::vector<double>(10, 1.0)),
                             doctest::Contains("too short"), Error);
    }
    SUBCASE("time reversal symmetry") {
        // Boundary transients decay with the slowest pole; zero margins long
        // enough to absorb them leave only the zero-phase interior, which must
        // agree in both directions.
        double r_max = 0.0;
        for (const auto& p : coeffs.poles) r_max = std::max(r_max, std::abs(p));
        const auto margin = static_cast<std::size_t>(std::ceil(std::log(1e-13) / std::log(r_max)));

        Rng rng(3);
        std::vector<double> x(2 * margin + 1000, 0.0);
        for (std::size_t i = 0; i < 1000; ++i) {
            const double window = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / 999.0);
            double v = 0.0;
            for (double f : {3.0, 8.0, 17.0, 31.0}) {
                v += std::sin(2.0 * std::numbers::pi * f * static_cast<double>(i) / 250.0 +
                              uniform(rng, 0.0, 0.1));
            }
            x[margin + i] = window * v;
        }
        auto y = dsp::filtfilt(coeffs, x);
        std::vector<double> xr(x.rbegin(), x.rend());
        auto yr = dsp::filtfilt(coeffs, xr);
        std::reverse(yr.begin(), yr.end());
        double max_rel = 0.0, scale = 0.0;
        for (double v : y) scale = std::max(scale, std::abs(v));
        for (std::size_t i = 0; i < y.size(); ++i) {
            max_rel = std::max(max_rel, std::abs(y[i] - yr[i]) / scale);
        }
        CHECK(max_rel < 1e-9);
    }
}

TEST_CASE("resample identities") {
    std::vector<double> x{1.0, 2.0, 3.0, -1.0};
    CHECK(dsp::resample(x, 250.0, 250.0) == x);
    CHECK(dsp::resample({}, 360.0, 250.0).empty());
    CHECK(dsp::resample(std::vector<double>(1000, 0.0), 360.0, 250.0).size() == 694);
}

TEST_CASE("resample preserves a 5 Hz sine within 2% (sine-fit oracle)") {
    const double fs_in = 360.0, fs_out = 250.0, f0 = 5.0, amp = 1.7;
    std::vector<double> x(3600);
    for (std::size_t n = 0; n < x.size(); ++n) {
        x[n] = amp * std::sin(2.0 * std::numbers::pi * f0 * static_cast<double>(n) / fs_in);
    }
    const auto y = dsp::resample(x, fs_in, fs_out);
    REQUIRE(y.size() == 2500);
    const double fitted = sine_fit_amplitude(y, f0, fs_out, y.size() / 10, y.size() * 9 / 10);
    CHECK(fitted == doctest::Approx(amp).epsilon(0.02));
}

TEST_CASE("resample preserves total duration for random rate pairs") {
    Rng rng(9);
    for (int trial = 0; trial < 30; ++trial) {
        const double fs_in = 100.0 + uniform(rng, 0.0, 400.0);
        const double fs_out = 100.0 + uniform(rng, 0.0, 400.0);
        const std::size_t n = 100 + uniform_index(rng, 2000);
        const auto y = dsp::resample(std::vector<double>(n, 1.0), fs_in, fs_out);
        const double in_duration = static_cast<double>(n) / fs_in;
        const double out_duration = static_cast<double>(y.size()) / fs_out;
        REQUIRE(std::abs(out_duration - in_duration) <= 1.0 / fs_out + 1e-6);
    }
}

TEST_CASE("rationalize reduces exact ratios") {
    CHECK(dsp::rationalize(250.0 / 360.0, 1000) == std::pair<long long, long long>(25, 36));
    CHECK(dsp::rationalize(2.0, 1000) == std::pair<long long, long long>(2, 1));
    const auto [p, q] = dsp::rationalize(std::numbers::pi, 1000);
    CHECK(q <= 1000);
    CHECK(std::abs(static_cast<double>(p) / static_cast<double>(q) - std::numbers::pi) < 1e-6);
}
