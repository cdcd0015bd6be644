#include "ecgdelin/dsp.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "ecgdelin/util.hpp"

namespace ecg::dsp {

namespace {

using cplx = std::complex<double>;

// Expands a monic polynomial from its roots; descending powers.
std::vector<cplx> poly_from_roots(const std::vector<cplx>& roots) {
    std::vector<cplx> coeffs{1.0};
    for (const cplx& r : roots) {
        std::vector<cplx> next(coeffs.size() + 1, 0.0);
        for (std::size_t i = 0; i < coeffs.size(); ++i) {
            next[i] += coeffs[i];
            next[i + 1] -= coeffs[i] * r;
        }
        coeffs = std::move(next);
    }
    return coeffs;
}

double binomial(int n, int k) {
    double v = 1.0;
    for (int i = 1; i <= k; ++i) v = v * (n - k + i) / i;
    return v;
}

double sinc(double x) {
    if (std::abs(x) < 1e-12) return 1.0;
    const double px = std::numbers::pi * x;
    return std::sin(px) / px;
}

// Zero-order modified Bessel function of the first kind (for Kaiser windows).
double bessel_i0(double x) {
    const double x2 = x / 2.0;
    double term = 1.0, sum = 1.0;
    for (int k = 1; k < 200; ++k) {
        const double y = x2 / k;
        term *= y * y;
        sum += term;
        if (term < sum * 1e-16) break;
    }
    return sum;
}

}  // namespace

IirCoefficients design_butterworth_bandpass(const FilterSpec& spec) {
    const double fs = spec.sampling_frequency;
    const double nyquist = fs / 2.0;
    if (spec.order < 1) throw Error("filter design: order must be >= 1");
    if (!(spec.low_cut > 0.0 && spec.low_cut < spec.high_cut && spec.high_cut < nyquist))
        throw Error("filter design: cutoffs must satisfy 0 < low < high < fs/2");

    const int n = spec.order;

    // Analog low-pass prototype poles on the unit circle, left half-plane.
    std::vector<cplx> lp_poles;
    for (int k = 1; k <= n; ++k) {
        const double theta = std::numbers::pi * (2.0 * k + n - 1.0) / (2.0 * n);
        lp_poles.emplace_back(std::cos(theta), std::sin(theta));
    }

    // Pre-warped band edges for the bilinear transform.
    const double fs2 = 2.0 * fs;
    const double w1 = fs2 * std::tan(std::numbers::pi * spec.low_cut / fs);
    const double w2 = fs2 * std::tan(std::numbers::pi * spec.high_cut / fs);
    const double bw = w2 - w1;
    const double w0sq = w1 * w2;

    // Low-pass to band-pass: each prototype pole splits into two.
    std::vector<cplx> s_poles;
    for (const cplx& p : lp_poles) {
        const cplx ps = p * (bw / 2.0);
        const cplx root = std::sqrt(ps * ps - w0sq);
        s_poles.push_back(ps + root);
        s_poles.push_back(ps - root);
    }
    double gain = std::pow(bw, n);  // n analog zeros at s = 0

    // Bilinear transform of poles; the n zeros at s=0 map to z=+1 and the
    // degree deficit contributes n zeros at z=-1.
    std::vector<cplx> z_poles;
    cplx denom_prod = 1.0;
    for (const cplx& s : s_poles) {
        z_poles.push_back((fs2 + s) / (fs2 - s));
        denom_prod *= (fs2 - s);
    }
    const double num_prod = std::pow(fs2, n);  // prod(fs2 - 0) over analog zeros
    const double k_z = gain * (num_prod / denom_prod).real();

    IirCoefficients coeffs;
    coeffs.poles = z_poles;

    // Numerator k * (z^2 - 1)^n, expanded exactly.
    coeffs.b.assign(static_cast<std::size_t>(2 * n + 1), 0.0);
    for (int j = 0; j <= n; ++j) {
        coeffs.b[static_cast<std::size_t>(2 * (n - j))] =
            k_z * binomial(n, j) * ((n - j) % 2 == 0 ? 1.0 : -1.0);
    }

    const auto a_cplx = poly_from_roots(z_poles);
    coeffs.a.resize(a_cplx.size());
    for (std::size_t i = 0; i < a_cplx.size(); ++i) coeffs.a[i] = a_cplx[i].real();

    for (const cplx& p : z_poles) {
        if (std::abs(p) >= 1.0)
            throw Error("filter design: unstable pole at |z| = " + std::to_string(std::abs(p)));
    }
    return coeffs;
}

double magnitude_response(const IirCoefficients& coeffs, double freq_hz, double fs) {
    const double w = 2.0 * std::numbers::pi * freq_hz / fs;
    const cplx zinv = std::exp(cplx(0.0, -w));
    cplx num = 0.0, den = 0.0, zk = 1.0;
    for (std::size_t k = 0; k < std::max(coeffs.b.size(), coeffs.a.size()); ++k) {
        if (k < coeffs.b.size()) num += coeffs.b[k] * zk;
        if (k < coeffs.a.size()) den += coeffs.a[k] * zk;
        zk *= zinv;
    }
    return std::abs(num / den);
}

std::vector<double> lfilter(const IirCoefficients& coeffs, const std::vector<double>& x,
                            std::vector<double>* state) {
    const std::size_t order = std::max(coeffs.a.size(), coeffs.b.size()) - 1;
    std::vector<double> b = coeffs.b, a = coeffs.a;
    b.resize(order + 1, 0.0);
    a.resize(order + 1, 0.0);
    if (a[0] != 1.0) {
        if (a[0] == 0.0) throw Error("lfilter: a[0] must be nonzero");
        for (auto& v : b) v /= coeffs.a[0];
        for (auto& v : a) v /= coeffs.a[0];
    }

    std::vector<double> z(order, 0.0);
    if (state) {
        if (state->size() != order) throw Error("lfilter: state size mismatch");
        z = *state;
    }
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xn = x[i];
        const double yn = b[0] * xn + z[0];
        for (std::size_t j = 0; j + 1 < order; ++j) {
            z[j] = b[j + 1] * xn + z[j + 1] - a[j + 1] * yn;
        }
        z[order - 1] = b[order] * xn - a[order] * yn;
        y[i] = yn;
    }
    if (state) *state = z;
    return y;
}

std::vector<double> lfilter_zi(const IirCoefficients& coeffs) {
    const std::size_t order = std::max(coeffs.a.size(), coeffs.b.size()) - 1;
    std::vector<double> b = coeffs.b, a = coeffs.a;
    b.resize(order + 1, 0.0);
    a.resize(order + 1, 0.0);

    // Solve (I - A^T) zi = B where A is the companion matrix of a(z).
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(order),
                                                  static_cast<Eigen::Index>(order));
    for (std::size_t i = 0; i < order; ++i) {
        m(0, static_cast<Eigen::Index>(i)) += a[i + 1];  // minus (-a[i+1])
        if (i + 1 < order) m(static_cast<Eigen::Index>(i) + 1, static_cast<Eigen::Index>(i)) -= 1.0;
    }
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(order));
    for (std::size_t i = 0; i < order; ++i) rhs(static_cast<Eigen::Index>(i)) = b[i + 1] - a[i + 1] * b[0];
    Eigen::VectorXd zi = m.transpose().colPivHouseholderQr().solve(rhs);

    std::vector<double> out(order);
    for (std::size_t i = 0; i < order; ++i) out[i] = zi(static_cast<Eigen::Index>(i));
    return out;
}

std::vector<double> filtfilt(const IirCoefficients& coeffs, const std::vector<double>& x) {
    const std::size_t ntaps = std::max(coeffs.a.size(), coeffs.b.size());
    const std::size_t padlen = 3 * ntaps;
    if (x.size() <= padlen)
        throw Error("filtfilt: signal length " + std::to_string(x.size()) +
                    " too short for padding length " + std::to_string(padlen));

    // Odd reflection about the end samples.
    std::vector<double> ext;
    ext.reserve(x.size() + 2 * padlen);
    for (std::size_t i = padlen; i >= 1; --i) ext.push_back(2.0 * x.front() - x[i]);
    ext.insert(ext.end(), x.begin(), x.end());
    for (std::size_t i = 2; i <= padlen + 1; ++i) ext.push_back(2.0 * x.back() - x[x.size() - i]);

    const std::vector<double> zi = lfilter_zi(coeffs);

    auto pass = [&](std::vector<double> sig) {
        std::vector<double> state(zi.size());
        for (std::size_t i = 0; i < zi.size(); ++i) state[i] = zi[i] * sig.front();
        return lfilter(coeffs, sig, &state);
    };

    std::vector<double> y = pass(ext);
    std::reverse(y.begin(), y.end());
    y = pass(y);
    std::reverse(y.begin(), y.end());

    return std::vector<double>(y.begin() + static_cast<std::ptrdiff_t>(padlen),
                               y.end() - static_cast<std::ptrdiff_t>(padlen));
}

std::pair<long long, long long> rationalize(double ratio, long long max_denominator) {
    if (ratio <= 0.0) throw Error("rationalize: ratio must be positive");
    // Continued-fraction expansion, keeping the last convergent whose
    // denominator stays within bounds.
    long long p0 = 0, q0 = 1, p1 = 1, q1 = 0;
    double frac = ratio;
    for (int iter = 0; iter < 64; ++iter) {
        const double fl = std::floor(frac);
        const long long ai = static_cast<long long>(fl);
        const long long p2 = ai * p1 + p0;
        const long long q2 = ai * q1 + q0;
        if (q2 > max_denominator) break;
        p0 = p1; q0 = q1; p1 = p2; q1 = q2;
        const double rem = frac - fl;
        if (rem < 1e-12) break;
        frac = 1.0 / rem;
    }
    if (q1 == 0) throw Error("rationalize: no rational approximation found");
    return {p1, q1};
}

std::vector<double> resample(const std::vector<double>& x, double fs_in, double fs_out) {
    if (fs_in <= 0.0 || fs_out <= 0.0) throw Error("resample: rates must be positive");
    if (fs_in == fs_out) return x;
    if (x.empty()) return {};

    const auto [up, down] = rationalize(fs_out / fs_in, 1000);
    const long long n_out = std::llround(static_cast<double>(x.size()) * up / static_cast<double>(down));

    // Kaiser-windowed sinc at the narrower of the two Nyquist limits,
    // expressed in the upsampled domain.
    const long long width = std::max(up, down);
    const int half_periods = 10;
    const long long half = half_periods * width;
    const double cutoff = 1.0 / static_cast<double>(width);
    const double beta = 8.6;
    const double i0_beta = bessel_i0(beta);

    std::vector<double> h(static_cast<std::size_t>(2 * half + 1));
    for (long long i = -half; i <= half; ++i) {
        const double frac = static_cast<double>(i) / static_cast<double>(half);
        const double window = bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - frac * frac))) / i0_beta;
        h[static_cast<std::size_t>(i + half)] =
            static_cast<double>(up) * cutoff * sinc(cutoff * static_cast<double>(i)) * window;
    }

    const long long n_in = static_cast<long long>(x.size());
    std::vector<double> y(static_cast<std::size_t>(n_out), 0.0);
    for (long long n = 0; n < n_out; ++n) {
        const long long m = n * down;  // position on the upsampled grid
        long long i_lo = (m - half + up - 1) / up;   // ceil((m - half) / up)
        long long i_hi = (m + half) / up;            // floor((m + half) / up)
        i_lo = std::max<long long>(i_lo, 0);
        i_hi = std::min<long long>(i_hi, n_in - 1);
        double acc = 0.0;
        for (long long i = i_lo; i <= i_hi; ++i) {
            acc += x[static_cast<std::size_t>(i)] * h[static_cast<std::size_t>(m - i * up + half)];
        }
        y[static_cast<std::size_t>(n)] = acc;
    }
    return y;
}

}  // namespace ecg::dsp
