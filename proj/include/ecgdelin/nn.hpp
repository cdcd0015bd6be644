#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ecgdelin/dataset.hpp"
#include "ecgdelin/tensor.hpp"
#include "ecgdelin/util.hpp"

namespace ecg::nn {

enum class Activation { Identity, Relu };

template <typename S>
inline S stable_sigmoid(S x) {
    if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
    const S e = std::exp(x);
    return e / (S(1) + e);
}

namespace detail {

/// Glorot-uniform fill in row-major draw order.
template <typename S>
void glorot_fill(Tensor<S>& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (S& v : t.data) v = static_cast<S>(uniform(rng, -limit, limit));
}

/// Orthogonal square matrix from the QR of a random normal matrix, with the
/// sign of the R diagonal fixed so the result is unique.
inline Eigen::MatrixXd random_orthogonal(std::size_t n, Rng& rng) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = normal01(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
    Eigen::MatrixXd q = qr.householderQ();
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index c = 0; c < q.cols(); ++c) {
        if (r(c, c) < 0) q.col(c) = -q.col(c);
    }
    return q;
}

template <typename S>
Eigen::Map<const RowMat<S>> rowvec(const Tensor<S>& t) {
    return t.map_as(1, t.numel());
}

}  // namespace detail

// --- 1-D convolution -----------------------------------------------------------

template <typename S>
struct Conv1dCache {
    Tensor<S> x;  // input [T x Cin]
    Tensor<S> y;  // post-activation output [T x Cout]
};

/// Same-length 1-D convolution over [T x channels] sequences. For kernel size
/// M the input is zero-padded with (M-1)/2 leading and M/2 trailing samples,
/// which keeps the output length equal to the input length for odd and even M.
template <typename S>
class Conv1d {
public:
    Conv1d(int in_channels, int out_channels, int kernel_size, Activation activation)
        : in_(in_channels), out_(out_channels), m_(kernel_size), activation_(activation) {
        if (kernel_size < 1) throw Error("conv1d: kernel size must be >= 1");
        kernel_ = Tensor<S>({static_cast<std::size_t>(m_), static_cast<std::size_t>(in_),
                             static_cast<std::size_t>(out_)});
        bias_ = Tensor<S>({static_cast<std::size_t>(out_)});
        gkernel_ = kernel_;
        gbias_ = bias_;
    }

    void init_params(Rng& rng) {
        detail::glorot_fill(kernel_, static_cast<std::size_t>(m_ * in_),
                            static_cast<std::size_t>(m_ * out_), rng);
        bias_.set_zero();
    }

    Tensor<S> forward(const Tensor<S>& x, Conv1dCache<S>& cache) const {
        if (static_cast<int>(x.cols()) != in_)
            throw Error("conv1d: expected " + std::to_string(in_) + " input channels, got " +
                        std::to_string(x.cols()));
        const auto T = static_cast<Eigen::Index>(x.rows());
        Tensor<S> y({x.rows(), static_cast<std::size_t>(out_)});
        auto Y = y.map();
        auto X = x.map();
        Y.rowwise() = detail::rowvec(bias_).row(0);
        const int pad_left = (m_ - 1) / 2;
        for (int k = 0; k < m_; ++k) {
            const int d = k - pad_left;
            const Eigen::Index len = T - std::abs(d);
            if (len <= 0) continue;
            const Eigen::Index y0 = std::max(0, -d);
            const auto wk = kernel_.map_as(static_cast<std::size_t>(m_ * in_),
                                           static_cast<std::size_t>(out_))
                                .middleRows(static_cast<Eigen::Index>(k) * in_, in_);
            Y.middleRows(y0, len).noalias() += X.middleRows(y0 + d, len) * wk;
        }
        if (activation_ == Activation::Relu) Y = Y.cwiseMax(S(0));
        cache.x = x;
        cache.y = y;
        return y;
    }

    Tensor<S> backward(const Tensor<S>& dy, const Conv1dCache<S>& cache) {
        const auto T = static_cast<Eigen::Index>(dy.rows());
        Tensor<S> dy_eff = dy;
        if (activation_ == Activation::Relu) {
            auto D = dy_eff.map();
            auto Y = cache.y.map();
            D.array() *= (Y.array() > S(0)).template cast<S>();
        }
        auto D = dy_eff.map();
        auto X = cache.x.map();
        gbias_.map_as(1, static_cast<std::size_t>(out_)) += D.colwise().sum();

        Tensor<S> dx(cache.x.shape);
        auto DX = dx.map();
        const int pad_left = (m_ - 1) / 2;
        auto gk = gkernel_.map_as(static_cast<std::size_t>(m_ * in_), static_cast<std::size_t>(out_));
        auto wk_all = kernel_.map_as(static_cast<std::size_t>(m_ * in_), static_cast<std::size_t>(out_));
        for (int k = 0; k < m_; ++k) {
            const int d = k - pad_left;
            const Eigen::Index len = T - std::abs(d);
            if (len <= 0) continue;
            const Eigen::Index y0 = std::max(0, -d);
            gk.middleRows(static_cast<Eigen::Index>(k) * in_, in_).noalias() +=
                X.middleRows(y0 + d, len).transpose() * D.middleRows(y0, len);
            DX.middleRows(y0 + d, len).noalias() +=
                D.middleRows(y0, len) * wk_all.middleRows(static_cast<Eigen::Index>(k) * in_, in_).transpose();
        }
        return dx;
    }

    void zero_grads() {
        gkernel_.set_zero();
        gbias_.set_zero();
    }

    template <typename F>
    void visit(const std::string& prefix, F&& fn) {
        fn(prefix + ".kernel", kernel_, gkernel_);
        fn(prefix + ".bias", bias_, gbias_);
    }

    int in_channels() const { return in_; }
    int out_channels() const { return out_; }
    Tensor<S>& kernel() { return kernel_; }
    Tensor<S>& bias() { return bias_; }

private:
    int in_, out_, m_;
    Activation activation_;
    Tensor<S> kernel_, bias_;    // kernel [M x Cin x Cout]
    Tensor<S> gkernel_, gbias_;
};

// --- LSTM ------------------------------------------------------------------------

/// Gate rows are packed in the order forget, input, candidate, output.
template <typename S>
struct LstmCache {
    Tensor<S> x;                        // [T x d]
    RowMat<S> f, i, g, o, c, tc, h;     // each [T x units]
};

template <typename S>
class LstmCell {
public:
    LstmCell(int input_size, int units) : d_(input_size), u_(units) {
        input_weights_ = Tensor<S>({4 * static_cast<std::size_t>(u_), static_cast<std::size_t>(d_)});
        recurrent_weights_ = Tensor<S>({4 * static_cast<std::size_t>(u_), static_cast<std::size_t>(u_)});
        bias_ = Tensor<S>({4 * static_cast<std::size_t>(u_)});
        ginput_ = input_weights_;
        grecurrent_ = recurrent_weights_;
        gbias_ = bias_;
    }

    void init_params(Rng& rng) {
        // Per-gate Glorot for input weights, per-gate orthogonal recurrence,
        // forget-gate bias 1 and all other biases 0.
        for (int gate = 0; gate < 4; ++gate) {
            Tensor<S> block({static_cast<std::size_t>(u_), static_cast<std::size_t>(d_)});
            detail::glorot_fill(block, static_cast<std::size_t>(d_), static_cast<std::size_t>(u_), rng);
            input_weights_.map().middleRows(static_cast<Eigen::Index>(gate) * u_, u_) = block.map();
        }
        for (int gate = 0; gate < 4; ++gate) {
            const Eigen::MatrixXd q = detail::random_orthogonal(static_cast<std::size_t>(u_), rng);
            recurrent_weights_.map().middleRows(static_cast<Eigen::Index>(gate) * u_, u_) =
                q.cast<S>();
        }
        bias_.set_zero();
        for (int j = 0; j < u_; ++j) bias_.data[static_cast<std::size_t>(j)] = S(1);
    }

    /// One recurrence step; exposed for direct inspection and tests.
    void step(const ColVec<S>& a, const ColVec<S>& h_prev, const ColVec<S>& c_prev,
              ColVec<S>& h_out, ColVec<S>& c_out) const {
        if (a.size() != d_ || h_prev.size() != u_ || c_prev.size() != u_)
            throw Error("lstm step: shape mismatch");
        ColVec<S> pre = input_weights_.map() * a + recurrent_weights_.map() * h_prev +
                        bias_.map_as(4 * static_cast<std::size_t>(u_), 1);
        ColVec<S> f = pre.segment(0, u_).unaryExpr([](S v) { return stable_sigmoid(v); });
        ColVec<S> i = pre.segment(u_, u_).unaryExpr([](S v) { return stable_sigmoid(v); });
        ColVec<S> g = pre.segment(2 * u_, u_).array().tanh().matrix();
        ColVec<S> o = pre.segment(3 * u_, u_).unaryExpr([](S v) { return stable_sigmoid(v); });
        c_out = f.cwiseProduct(c_prev) + i.cwiseProduct(g);
        h_out = o.cwiseProduct(c_out.array().tanh().matrix());
    }

    Tensor<S> forward(const Tensor<S>& x, LstmCache<S>& cache) const {
        if (static_cast<int>(x.cols()) != d_)
            throw Error("lstm: expected input size " + std::to_string(d_) + ", got " +
                        std::to_string(x.cols()));
        const auto T = static_cast<Eigen::Index>(x.rows());
        cache.x = x;
        for (RowMat<S>* m : {&cache.f, &cache.i, &cache.g, &cache.o, &cache.c, &cache.tc, &cache.h})
            m->resize(T, u_);

        // Input projection for all timesteps at once.
        RowMat<S> xu = x.map() * input_weights_.map().transpose();  // [T x 4u]
        xu.rowwise() += detail::rowvec(bias_).row(0);

        ColVec<S> pre(4 * u_), h_prev = ColVec<S>::Zero(u_), c_prev = ColVec<S>::Zero(u_);
        for (Eigen::Index t = 0; t < T; ++t) {
            pre = xu.row(t).transpose();
            if (t > 0) pre.noalias() += recurrent_weights_.map() * h_prev;
            cache.f.row(t) =
                pre.segment(0, u_).unaryExpr([](S v) { return stable_sigmoid(v); }).transpose();
            cache.i.row(t) =
                pre.segment(u_, u_).unaryExpr([](S v) { return stable_sigmoid(v); }).transpose();
            cache.g.row(t) = pre.segment(2 * u_, u_).array().tanh().matrix().transpose();
            cache.o.row(t) =
                pre.segment(3 * u_, u_).unaryExpr([](S v) { return stable_sigmoid(v); }).transpose();
            cache.c.row(t) = cache.f.row(t).cwiseProduct(c_prev.transpose()) +
                             cache.i.row(t).cwiseProduct(cache.g.row(t));
            cache.tc.row(t) = cache.c.row(t).array().tanh().matrix();
            cache.h.row(t) = cache.o.row(t).cwiseProduct(cache.tc.row(t));
            h_prev = cache.h.row(t).transpose();
            c_prev = cache.c.row(t).transpose();
        }

        Tensor<S> out({static_cast<std::size_t>(T), static_cast<std::size_t>(u_)});
        out.map() = cache.h;
        return out;
    }

    Tensor<S> backward(const Tensor<S>& dh_seq, const LstmCache<S>& cache) {
        const auto T = static_cast<Eigen::Index>(dh_seq.rows());
        RowMat<S> dpre(T, 4 * u_);
        ColVec<S> dh_rec = ColVec<S>::Zero(u_), dc_rec = ColVec<S>::Zero(u_);
        ColVec<S> dh(u_), dc(u_);
        for (Eigen::Index t = T - 1; t >= 0; --t) {
            dh = dh_seq.map().row(t).transpose() + dh_rec;
            const auto f = cache.f.row(t).transpose().array();
            const auto i = cache.i.row(t).transpose().array();
            const auto g = cache.g.row(t).transpose().array();
            const auto o = cache.o.row(t).transpose().array();
            const auto tc = cache.tc.row(t).transpose().array();
            dc = dc_rec + (dh.array() * o * (S(1) - tc * tc)).matrix();

            if (t > 0) {
                const auto c_prev = cache.c.row(t - 1).transpose().array();
                dpre.row(t).segment(0, u_) =
                    (dc.array() * c_prev * f * (S(1) - f)).matrix().transpose();
            } else {
                dpre.row(t).segment(0, u_).setZero();
            }
            dpre.row(t).segment(u_, u_) = (dc.array() * g * i * (S(1) - i)).matrix().transpose();
            dpre.row(t).segment(2 * u_, u_) = (dc.array() * i * (S(1) - g * g)).matrix().transpose();
            dpre.row(t).segment(3 * u_, u_) = (dh.array() * tc * o * (S(1) - o)).matrix().transpose();

            dh_rec.noalias() = recurrent_weights_.map().transpose() * dpre.row(t).transpose();
            dc_rec = (dc.array() * f).matrix();
        }

        ginput_.map().noalias() += dpre.transpose() * cache.x.map();
        if (T > 1) {
            grecurrent_.map().noalias() +=
                dpre.middleRows(1, T - 1).transpose() * cache.h.middleRows(0, T - 1);
        }
        gbias_.map_as(1, 4 * static_cast<std::size_t>(u_)) += dpre.colwise().sum();

        Tensor<S> dx(cache.x.shape);
        dx.map().noalias() = dpre * input_weights_.map();
        return dx;
    }

    void zero_grads() {
        ginput_.set_zero();
        grecurrent_.set_zero();
        gbias_.set_zero();
    }

    template <typename F>
    void visit(const std::string& prefix, F&& fn) {
        fn(prefix + ".input_weights", input_weights_, ginput_);
        fn(prefix + ".recurrent_weights", recurrent_weights_, grecurrent_);
        fn(prefix + ".bias", bias_, gbias_);
    }

    int units() const { return u_; }
    int input_size() const { return d_; }
    Tensor<S>& input_weights() { return input_weights_; }
    Tensor<S>& recurrent_weights() { return recurrent_weights_; }
    Tensor<S>& bias() { return bias_; }

private:
    int d_, u_;
    Tensor<S> input_weights_, recurrent_weights_, bias_;
    Tensor<S> ginput_, grecurrent_, gbias_;
};

template <typename S>
struct BiLstmCache {
    LstmCache<S> fwd, bwd;
};

/// Forward cell scans t = 0..T-1, backward cell scans t = T-1..0; outputs are
/// concatenated per timestep, so the feature size doubles.
template <typename S>
class BiLstm {
public:
    BiLstm(int input_size, int units) : fwd_(input_size, units), bwd_(input_size, units) {}

    void init_params(Rng& rng) {
        fwd_.init_params(rng);
        bwd_.init_params(rng);
    }

    Tensor<S> forward(const Tensor<S>& x, BiLstmCache<S>& cache) const {
        const auto T = x.rows();
        const auto u = static_cast<std::size_t>(fwd_.units());
        Tensor<S> hf = fwd_.forward(x, cache.fwd);
        Tensor<S> xr = x;
        xr.map() = x.map().colwise().reverse();
        Tensor<S> hb = bwd_.forward(xr, cache.bwd);
        Tensor<S> out({T, 2 * u});
        out.map().leftCols(static_cast<Eigen::Index>(u)) = hf.map();
        out.map().rightCols(static_cast<Eigen::Index>(u)) = hb.map().colwise().reverse();
        return out;
    }

    Tensor<S> backward(const Tensor<S>& dy, const BiLstmCache<S>& cache) {
        const auto u = static_cast<Eigen::Index>(fwd_.units());
        Tensor<S> dhf({dy.rows(), static_cast<std::size_t>(u)});
        Tensor<S> dhb({dy.rows(), static_cast<std::size_t>(u)});
        dhf.map() = dy.map().leftCols(u);
        dhb.map() = dy.map().rightCols(u).colwise().reverse();
        Tensor<S> dxf = fwd_.backward(dhf, cache.fwd);
        Tensor<S> dxb = bwd_.backward(dhb, cache.bwd);
        dxf.map() += dxb.map().colwise().reverse();
        return dxf;
    }

    void zero_grads() {
        fwd_.zero_grads();
        bwd_.zero_grads();
    }

    template <typename F>
    void visit(const std::string& prefix, F&& fn) {
        fwd_.visit(prefix + ".fwd", fn);
        bwd_.visit(prefix + ".bwd", fn);
    }

    LstmCell<S>& forward_cell() { return fwd_; }
    LstmCell<S>& backward_cell() { return bwd_; }
    int units() const { return fwd_.units(); }

private:
    LstmCell<S> fwd_, bwd_;
};

// --- dropout ---------------------------------------------------------------------

template <typename S>
struct DropoutCache {
    bool active = false;
    RowMat<S> mask;  // 0 or 1/(1-p)
};

/// Inverted dropout: survivors are scaled by 1/(1-p) during training so
/// inference is a plain identity.
template <typename S>
class Dropout {
public:
    explicit Dropout(double p = 0.0) : p_(p) {
        if (p_ < 0.0 || p_ >= 1.0) throw Error("dropout: probability must be in [0, 1)");
    }

    Tensor<S> forward(const Tensor<S>& x, bool training, Rng& rng, DropoutCache<S>& cache) const {
        if (!training || p_ == 0.0) {
            cache.active = false;
            return x;
        }
        cache.active = true;
        cache.mask.resize(static_cast<Eigen::Index>(x.rows()), static_cast<Eigen::Index>(x.cols()));
        const S scale = static_cast<S>(1.0 / (1.0 - p_));
        for (Eigen::Index r = 0; r < cache.mask.rows(); ++r)
            for (Eigen::Index c = 0; c < cache.mask.cols(); ++c)
                cache.mask(r, c) = uniform01(rng) < p_ ? S(0) : scale;
        Tensor<S> y = x;
        y.map() = y.map().cwiseProduct(cache.mask);
        return y;
    }

    Tensor<S> backward(const Tensor<S>& dy, const DropoutCache<S>& cache) const {
        if (!cache.active) return dy;
        Tensor<S> dx = dy;
        dx.map() = dx.map().cwiseProduct(cache.mask);
        return dx;
    }

    double probability() const { return p_; }

private:
    double p_;
};

// --- time-distributed dense + softmax ---------------------------------------------

template <typename S>
struct DenseCache {
    Tensor<S> h;      // input [T x d]
    Tensor<S> probs;  // softmax output [T x C]
};

template <typename S>
class DenseSoftmax {
public:
    DenseSoftmax(int input_size, int n_classes) : d_(input_size), c_(n_classes) {
        weights_ = Tensor<S>({static_cast<std::size_t>(c_), static_cast<std::size_t>(d_)});
        bias_ = Tensor<S>({static_cast<std::size_t>(c_)});
        gweights_ = weights_;
        gbias_ = bias_;
    }

    void init_params(Rng& rng) {
        detail::glorot_fill(weights_, static_cast<std::size_t>(d_), static_cast<std::size_t>(c_), rng);
        bias_.set_zero();
    }

    /// Per-timestep affine map to logits followed by max-subtracted softmax.
    Tensor<S> forward(const Tensor<S>& h, DenseCache<S>& cache) const {
        if (static_cast<int>(h.cols()) != d_)
            throw Error("dense: expected input size " + std::to_string(d_) + ", got " +
                        std::to_string(h.cols()));
        Tensor<S> probs({h.rows(), static_cast<std::size_t>(c_)});
        auto P = probs.map();
        P.noalias() = h.map() * weights_.map().transpose();
        P.rowwise() += detail::rowvec(bias_).row(0);
        for (Eigen::Index t = 0; t < P.rows(); ++t) {
            auto row = P.row(t).array();
            row -= row.maxCoeff();
            row = row.exp();
            row /= row.sum();
        }
        cache.h = h;
        cache.probs = probs;
        return probs;
    }

    /// Takes the gradient with respect to the logits (see ccel_loss).
    Tensor<S> backward(const Tensor<S>& dlogits, const DenseCache<S>& cache) {
        gweights_.map().noalias() += dlogits.map().transpose() * cache.h.map();
        gbias_.map_as(1, static_cast<std::size_t>(c_)) += dlogits.map().colwise().sum();
        Tensor<S> dh(cache.h.shape);
        dh.map().noalias() = dlogits.map() * weights_.map();
        return dh;
    }

    void zero_grads() {
        gweights_.set_zero();
        gbias_.set_zero();
    }

    template <typename F>
    void visit(const std::string& prefix, F&& fn) {
        fn(prefix + ".weights", weights_, gweights_);
        fn(prefix + ".bias", bias_, gbias_);
    }

    Tensor<S>& weights() { return weights_; }
    Tensor<S>& bias() { return bias_; }

private:
    int d_, c_;
    Tensor<S> weights_, bias_;
    Tensor<S> gweights_, gbias_;
};

// --- loss --------------------------------------------------------------------------

template <typename S>
struct LossResult {
    double loss = 0.0;
    Tensor<S> dlogits;  // (probs - targets) / T
};

/// Mean categorical cross-entropy over timesteps. Probabilities are clamped
/// at 1e-12 before the log so degenerate predictions cannot produce NaN.
template <typename S>
LossResult<S> ccel_loss(const Tensor<S>& probs, const dataset::OneHotLabels& targets) {
    const std::size_t T = probs.rows();
    const std::size_t C = probs.cols();
    if (targets.rows != T || C != static_cast<std::size_t>(dataset::kNumClasses))
        throw Error("ccel_loss: shape mismatch");
    LossResult<S> result;
    result.dlogits = probs;
    auto D = result.dlogits.map();
    double total = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t c = 0; c < C; ++c) {
            if (targets.at(t, static_cast<int>(c))) {
                const double p = std::max(static_cast<double>(probs(t, c)), 1e-12);
                total -= std::log(p);
                D(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)) -= S(1);
            }
        }
    }
    D /= static_cast<S>(T);
    result.loss = total / static_cast<double>(T);
    return result;
}

/// Row-wise argmax with ties broken toward the lowest class code.
template <typename S>
std::vector<int> argmax_rows(const Tensor<S>& probs) {
    std::vector<int> out(probs.rows());
    for (std::size_t t = 0; t < probs.rows(); ++t) {
        int best = 0;
        for (std::size_t c = 1; c < probs.cols(); ++c) {
            if (probs(t, c) > probs(t, static_cast<std::size_t>(best))) best = static_cast<int>(c);
        }
        out[t] = best;
    }
    return out;
}

// --- full model -----------------------------------------------------------------------

struct ModelConfig {
    int in_channels = 1;
    std::vector<int> conv_filters = {32, 64, 128};
    int kernel_size = 3;
    std::vector<int> lstm_units = {250, 125};
    double dropout = 0.2;
    int n_classes = dataset::kNumClasses;
};

template <typename S>
struct ModelCache {
    std::vector<Conv1dCache<S>> convs;
    std::vector<BiLstmCache<S>> bilstms;
    DropoutCache<S> dropout;
    DenseCache<S> dense;
};

/// Conv stack -> BiLSTM stack -> dropout -> time-distributed dense softmax.
/// The architecture is length-agnostic: any T >= 1 works.
template <typename S>
class Model {
public:
    explicit Model(ModelConfig config = {}) : config_(std::move(config)), dropout_(config_.dropout) {
        int width = config_.in_channels;
        for (int filters : config_.conv_filters) {
            convs_.emplace_back(width, filters, config_.kernel_size, Activation::Relu);
            width = filters;
        }
        for (int units : config_.lstm_units) {
            bilstms_.emplace_back(width, units);
            width = 2 * units;
        }
        dense_ = DenseSoftmax<S>(width, config_.n_classes);
    }

    void init_params(std::uint64_t seed) {
        Rng rng(mix_seed({seed, 0x6d6f64656cULL}));
        for (auto& conv : convs_) conv.init_params(rng);
        for (auto& lstm : bilstms_) lstm.init_params(rng);
        dense_.init_params(rng);
    }

    const ModelConfig& config() const { return config_; }

    Tensor<S> forward(const Tensor<S>& x, bool training, Rng& rng, ModelCache<S>& cache) const {
        cache.convs.resize(convs_.size());
        cache.bilstms.resize(bilstms_.size());
        Tensor<S> h = x;
        for (std::size_t i = 0; i < convs_.size(); ++i) h = convs_[i].forward(h, cache.convs[i]);
        for (std::size_t i = 0; i < bilstms_.size(); ++i) h = bilstms_[i].forward(h, cache.bilstms[i]);
        h = dropout_.forward(h, training, rng, cache.dropout);
        return dense_.forward(h, cache.dense);
    }

    /// Inference shortcut; dropout is inactive, so no RNG is consumed.
    Tensor<S> predict(const Tensor<S>& x) const {
        ModelCache<S> cache;
        Rng rng(0);
        return forward(x, false, rng, cache);
    }

    void backward(const Tensor<S>& dlogits, const ModelCache<S>& cache) {
        Tensor<S> d = dense_.backward(dlogits, cache.dense);
        d = dropout_.backward(d, cache.dropout);
        for (std::size_t i = bilstms_.size(); i-- > 0;) d = bilstms_[i].backward(d, cache.bilstms[i]);
        for (std::size_t i = convs_.size(); i-- > 0;) d = convs_[i].backward(d, cache.convs[i]);
    }

    void zero_grads() {
        for (auto& conv : convs_) conv.zero_grads();
        for (auto& lstm : bilstms_) lstm.zero_grads();
        dense_.zero_grads();
    }

    template <typename F>
    void visit_params(F&& fn) {
        for (std::size_t i = 0; i < convs_.size(); ++i)
            convs_[i].visit("conv" + std::to_string(i + 1), fn);
        for (std::size_t i = 0; i < bilstms_.size(); ++i)
            bilstms_[i].visit("bilstm" + std::to_string(i + 1), fn);
        dense_.visit("dense", fn);
    }

    std::size_t param_count() const {
        std::size_t total = 0;
        const_cast<Model*>(this)->visit_params(
            [&](const std::string&, Tensor<S>& p, Tensor<S>&) { total += p.numel(); });
        return total;
    }

    /// Per-layer trainable-scalar counts, aggregated by layer name.
    std::vector<std::pair<std::string, std::size_t>> param_breakdown() const {
        std::vector<std::pair<std::string, std::size_t>> out;
        const_cast<Model*>(this)->visit_params([&](const std::string& name, Tensor<S>& p, Tensor<S>&) {
            const std::string layer = name.substr(0, name.find('.'));
            if (!out.empty() && out.back().first == layer) {
                out.back().second += p.numel();
            } else {
                out.emplace_back(layer, p.numel());
            }
        });
        return out;
    }

    std::vector<Conv1d<S>>& convs() { return convs_; }
    std::vector<BiLstm<S>>& bilstms() { return bilstms_; }
    DenseSoftmax<S>& dense() { return dense_; }

private:
    ModelConfig config_;
    std::vector<Conv1d<S>> convs_;
    std::vector<BiLstm<S>> bilstms_;
    Dropout<S> dropout_;
    DenseSoftmax<S> dense_ = DenseSoftmax<S>(1, 1);
};

}  // namespace ecg::nn
