#pragma once

#include <complex>
#include <vector>

namespace ecg::dsp {

/// Digital IIR transfer function b(z)/a(z), normalized so a[0] = 1.
struct IirCoefficients {
    std::vector<double> b;
    std::vector<double> a;
    std::vector<std::complex<double>> poles;  // z-plane poles, for stability checks
};

struct FilterSpec {
    int order = 3;          // low-pass prototype order; band-pass doubles it
    double low_cut = 0.5;   // Hz
    double high_cut = 40.0; // Hz
    double sampling_frequency = 250.0;
};

/// Butterworth band-pass design via bilinear transform with frequency
/// pre-warping. The numerator is expanded analytically from its known zeros
/// at z = +1 and z = -1, so the DC response is exactly zero.
IirCoefficients design_butterworth_bandpass(const FilterSpec& spec);

/// |H(e^{j 2 pi f / fs})| for a designed filter.
double magnitude_response(const IirCoefficients& coeffs, double freq_hz, double fs);

/// Single-pass IIR filter (direct form II transposed) with optional initial
/// state. `state` must have length max(|a|,|b|) - 1 when provided.
std::vector<double> lfilter(const IirCoefficients& coeffs, const std::vector<double>& x,
                            std::vector<double>* state = nullptr);

/// Steady-state filter state for a unit-step input; scaled by the first
/// sample before each pass of filtfilt to suppress edge transients.
std::vector<double> lfilter_zi(const IirCoefficients& coeffs);

/// Zero-phase filtering: forward pass, reverse, filter again, reverse.
/// Ends are extended by odd reflection of length 3 * max(|a|,|b|) and trimmed.
std::vector<double> filtfilt(const IirCoefficients& coeffs, const std::vector<double>& x);

/// Rational polyphase resampling with a Kaiser-windowed-sinc anti-aliasing
/// filter. Output length is round(len(x) * fs_out / fs_in). The ratio is
/// reduced to lowest terms, or approximated by a rational with denominator
/// <= 1000 when it is not exactly rational.
std::vector<double> resample(const std::vector<double>& x, double fs_in, double fs_out);

/// Best rational approximation p/q to `ratio` with q <= max_denominator.
std::pair<long long, long long> rationalize(double ratio, long long max_denominator);

}  // namespace ecg::dsp
