#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "granite/rng.hpp"
#include "granite/tensor.hpp"

namespace granite {

enum class LayerKind { Conv, MaxPool, TConv };
enum class Activation { None, Relu, Tanh };

struct LayerSpec {
    LayerKind kind = LayerKind::Conv;
    std::size_t kernel = 1;
    std::size_t stride = 1;
    std::size_t in_ch = 0;   // 0 for maxpool (channel count passes through)
    std::size_t out_ch = 0;  // 0 for maxpool
    Activation act = Activation::None;

    bool learnable() const { return kind != LayerKind::MaxPool; }
};

// Output spatial size of a valid (unpadded) convolution / pool; throws when
// the stride does not evenly cover the input.
std::size_t conv_out_dim(std::size_t n_in, std::size_t kernel, std::size_t stride);
// Output spatial size of a transpose convolution.
std::size_t tconv_out_dim(std::size_t n_in, std::size_t kernel, std::size_t stride);

// The fixed encoder-decoder: conv 8x8x4 s8 ->64r relu; maxpool 2x2 s2;
// conv 3x3 s1 ->16r relu; maxpool 2x2 s1; tconv 2x2 s2 ->64r relu;
// tconv 3x3 s1 ->8r relu; tconv 10x10 s2 ->1 tanh. Spatial chain on 128 input:
// 16 -> 8 -> 6 -> 5 -> 10 -> 12 -> 32. r is the filter-count multiplier.
std::vector<LayerSpec> ced_architecture(std::size_t r = 1);

template <typename T>
struct LayerParams {
    // conv:  w(a, b, c_in, k_out), bias per k_out
    // tconv: w(a, b, c_out, k_in), bias per c_out (the adjoint pairing of conv)
    TensorT<T> w;
    std::vector<T> b;
};

template <typename T>
struct CedModelT {
    std::vector<LayerSpec> specs;
    std::vector<LayerParams<T>> params;  // index-aligned; empty for maxpool
    std::uint64_t seed = 0;
};
using CedModel = CedModelT<float>;
using CedModelD = CedModelT<double>;

template <typename T>
struct GradientsT {
    std::vector<TensorT<T>> w;
    std::vector<std::vector<T>> b;
};

template <typename T>
struct ForwardCacheT {
    std::vector<TensorT<T>> acts;                    // acts[0] = input, acts[i+1] = layer i output
    std::vector<std::vector<std::uint32_t>> argmax;  // per layer; empty unless maxpool
};

// ---------------------------------------------------------------------------
// layer math

template <typename T>
TensorT<T> conv_forward(const TensorT<T>& x, const LayerSpec& s, const TensorT<T>& w,
                        const std::vector<T>& b) {
    if (x.rank() != 3 || x.dim(2) != s.in_ch)
        throw std::invalid_argument("conv: input " + shape_string(x) + " does not match spec");
    const std::size_t n = s.kernel, S = s.stride, cin = s.in_ch, k = s.out_ch;
    const std::size_t ho = conv_out_dim(x.dim(0), n, S), wo = conv_out_dim(x.dim(1), n, S);
    TensorT<T> out({ho, wo, k});
    for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
            T* o = &out(i, j, 0);
            for (std::size_t kk = 0; kk < k; ++kk) o[kk] = b[kk];
            for (std::size_t a = 0; a < n; ++a)
                for (std::size_t bb = 0; bb < n; ++bb) {
                    const T* xp = &x(i * S + a, j * S + bb, 0);
                    const T* wp = &w(a, bb, 0, 0);
                    for (std::size_t c = 0; c < cin; ++c) {
                        const T xv = xp[c];
                        const T* wr = wp + c * k;
                        for (std::size_t kk = 0; kk < k; ++kk) o[kk] += xv * wr[kk];
                    }
                }
        }
    return out;
}

template <typename T>
TensorT<T> maxpool_forward(const TensorT<T>& x, const LayerSpec& s,
                           std::vector<std::uint32_t>* argmax = nullptr) {
    const std::size_t n = s.kernel, S = s.stride, c = x.dim(2);
    const std::size_t ho = conv_out_dim(x.dim(0), n, S), wo = conv_out_dim(x.dim(1), n, S);
    TensorT<T> out({ho, wo, c});
    if (argmax) argmax->assign(ho * wo * c, 0);
    for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j)
            for (std::size_t ch = 0; ch < c; ++ch) {
                T best = x(i * S, j * S, ch);
                std::uint32_t where = static_cast<std::uint32_t>((i * S) * x.dim(1) + j * S);
                for (std::size_t a = 0; a < n; ++a)
                    for (std::size_t bb = 0; bb < n; ++bb) {
                        const T v = x(i * S + a, j * S + bb, ch);
                        if (v > best) {  // ties keep the first row-major index
                            best = v;
                            where = static_cast<std::uint32_t>((i * S + a) * x.dim(1) + j * S + bb);
                        }
                    }
                out(i, j, ch) = best;
                if (argmax) (*argmax)[(i * wo + j) * c + ch] = where;
            }
    return out;
}

template <typename T>
TensorT<T> tconv_forward(const TensorT<T>& x, const LayerSpec& s, const TensorT<T>& w,
                         const std::vector<T>& b) {
    if (x.rank() != 3 || x.dim(2) != s.in_ch)
        throw std::invalid_argument("tconv: input " + shape_string(x) + " does not match spec");
    const std::size_t n = s.kernel, S = s.stride, k = s.in_ch, cout = s.out_ch;
    const std::size_t ho = tconv_out_dim(x.dim(0), n, S), wo = tconv_out_dim(x.dim(1), n, S);
    TensorT<T> out({ho, wo, cout});
    for (std::size_t p = 0; p < ho; ++p)
        for (std::size_t q = 0; q < wo; ++q)
            for (std::size_t c = 0; c < cout; ++c) out(p, q, c) = b[c];
    for (std::size_t i = 0; i < x.dim(0); ++i)
        for (std::size_t j = 0; j < x.dim(1); ++j) {
            const T* xp = &x(i, j, 0);
            for (std::size_t a = 0; a < n; ++a)
                for (std::size_t bb = 0; bb < n; ++bb) {
                    T* o = &out(i * S + a, j * S + bb, 0);
                    const T* wp = &w(a, bb, 0, 0);
                    for (std::size_t c = 0; c < cout; ++c) {
                        T acc = 0;
                        const T* wr = wp + c * k;
                        for (std::size_t kk = 0; kk < k; ++kk) acc += wr[kk] * xp[kk];
                        o[c] += acc;
                    }
                }
        }
    return out;
}

template <typename T>
void apply_activation(TensorT<T>& t, Activation act) {
    if (act == Activation::Relu) {
        for (auto& v : t.data()) v = v > T(0) ? v : T(0);
    } else if (act == Activation::Tanh) {
        for (auto& v : t.data()) v = std::tanh(v);
    }
}

// ---------------------------------------------------------------------------
// model assembly

template <typename T>
CedModelT<T> make_model(const std::vector<LayerSpec>& specs, std::uint64_t seed) {
    CedModelT<T> m;
    m.specs = specs;
    m.seed = seed;
    m.params.resize(specs.size());
    Rng rng(derive_seed(seed, "init"));
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const auto& s = specs[i];
        if (!s.learnable()) continue;
        const std::size_t rows = s.kind == LayerKind::Conv ? s.in_ch : s.out_ch;
        const std::size_t cols = s.kind == LayerKind::Conv ? s.out_ch : s.in_ch;
        m.params[i].w = TensorT<T>({s.kernel, s.kernel, rows, cols});
        const double fan_in = static_cast<double>(s.kernel * s.kernel * s.in_ch);
        const double limit = std::sqrt(6.0 / fan_in);
        for (auto& v : m.params[i].w.data())
            v = static_cast<T>(rng.uniform(-limit, limit));
        m.params[i].b.assign(s.out_ch, T(0));
    }
    return m;
}

template <typename T>
TensorT<T> forward(const CedModelT<T>& m, const TensorT<T>& x,
                   ForwardCacheT<T>* cache = nullptr) {
    TensorT<T> cur = x;
    if (cache) {
        cache->acts.clear();
        cache->argmax.assign(m.specs.size(), {});
        cache->acts.push_back(cur);
    }
    for (std::size_t i = 0; i < m.specs.size(); ++i) {
        const auto& s = m.specs[i];
        switch (s.kind) {
            case LayerKind::Conv:
                cur = conv_forward(cur, s, m.params[i].w, m.params[i].b);
                break;
            case LayerKind::MaxPool:
                cur = maxpool_forward(cur, s, cache ? &cache->argmax[i] : nullptr);
                break;
            case LayerKind::TConv:
                cur = tconv_forward(cur, s, m.params[i].w, m.params[i].b);
                break;
        }
        apply_activation(cur, s.act);
        if (cache) cache->acts.push_back(cur);
    }
    return cur;
}

// Per-sample sum-over-pixels squared error. Batch averaging happens in train.
template <typename T>
double loss_mse(const TensorT<T>& pred, const TensorT<T>& truth) {
    if (pred.dims() != truth.dims())
        throw std::invalid_argument("loss_mse: shape mismatch " + shape_string(pred) + " vs " +
                                    shape_string(truth));
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred[i]) - static_cast<double>(truth[i]);
        acc += d * d;
    }
    return acc;
}

template <typename T>
GradientsT<T> zero_gradients(const CedModelT<T>& m) {
    GradientsT<T> g;
    g.w.resize(m.specs.size());
    g.b.resize(m.specs.size());
    for (std::size_t i = 0; i < m.specs.size(); ++i) {
        if (!m.specs[i].learnable()) continue;
        g.w[i] = TensorT<T>(m.params[i].w.dims());
        g.b[i].assign(m.params[i].b.size(), T(0));
    }
    return g;
}

// Reverse-mode pass for one sample. dout is dL/d(final activation); gradients
// accumulate into g (call zero_gradients first). dx, when given, receives
// dL/d(input).
template <typename T>
void backward(const CedModelT<T>& m, const ForwardCacheT<T>& cache, const TensorT<T>& dout,
              GradientsT<T>& g, TensorT<T>* dx_out = nullptr) {
    TensorT<T> d = dout;
    for (std::size_t li = m.specs.size(); li-- > 0;) {
        const auto& s = m.specs[li];
        const TensorT<T>& y = cache.acts[li + 1];
        const TensorT<T>& x = cache.acts[li];
        if (s.act == Activation::Relu) {
            for (std::size_t i = 0; i < d.size(); ++i)
                if (!(y[i] > T(0))) d[i] = T(0);
        } else if (s.act == Activation::Tanh) {
            for (std::size_t i = 0; i < d.size(); ++i) d[i] *= (T(1) - y[i] * y[i]);
        }
        TensorT<T> dx(x.dims());
        const std::size_t n = s.kernel, S = s.stride;
        if (s.kind == LayerKind::Conv) {
            const std::size_t cin = s.in_ch, k = s.out_ch;
            TensorT<T>& dw = g.w[li];
            std::vector<T>& db = g.b[li];
            const TensorT<T>& w = m.params[li].w;
            for (std::size_t i = 0; i < d.dim(0); ++i)
                for (std::size_t j = 0; j < d.dim(1); ++j) {
                    const T* dp = &d(i, j, 0);
                    for (std::size_t kk = 0; kk < k; ++kk) db[kk] += dp[kk];
                    for (std::size_t a = 0; a < n; ++a)
                        for (std::size_t bb = 0; bb < n; ++bb) {
                            const T* xp = &x(i * S + a, j * S + bb, 0);
                            T* dxp = &dx(i * S + a, j * S + bb, 0);
                            const T* wp = &w(a, bb, 0, 0);
                            T* dwp = &dw(a, bb, 0, 0);
                            for (std::size_t c = 0; c < cin; ++c) {
                                const T xv = xp[c];
                                const T* wr = wp + c * k;
                                T* dwr = dwp + c * k;
                                T acc = 0;
                                for (std::size_t kk = 0; kk < k; ++kk) {
                                    acc += wr[kk] * dp[kk];
                                    dwr[kk] += xv * dp[kk];
                                }
                                dxp[c] += acc;
                            }
                        }
                }
        } else if (s.kind == LayerKind::MaxPool) {
            const std::size_t c = x.dim(2);
            const auto& amax = cache.argmax[li];
            for (std::size_t i = 0; i < d.dim(0); ++i)
                for (std::size_t j = 0; j < d.dim(1); ++j)
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        const std::uint32_t flat = amax[(i * d.dim(1) + j) * c + ch];
                        dx[static_cast<std::size_t>(flat) * c + ch] += d(i, j, ch);
                    }
        } else {  // TConv
            const std::size_t k = s.in_ch, cout = s.out_ch;
            TensorT<T>& dw = g.w[li];
            std::vector<T>& db = g.b[li];
            const TensorT<T>& w = m.params[li].w;
            for (std::size_t p = 0; p < d.dim(0); ++p)
                for (std::size_t q = 0; q < d.dim(1); ++q)
                    for (std::size_t c = 0; c < cout; ++c) db[c] += d(p, q, c);
            for (std::size_t i = 0; i < x.dim(0); ++i)
                for (std::size_t j = 0; j < x.dim(1); ++j) {
                    const T* xp = &x(i, j, 0);
                    T* dxp = &dx(i, j, 0);
                    for (std::size_t a = 0; a < n; ++a)
                        for (std::size_t bb = 0; bb < n; ++bb) {
                            const T* dp = &d(i * S + a, j * S + bb, 0);
                            const T* wp = &w(a, bb, 0, 0);
                            T* dwp = &dw(a, bb, 0, 0);
                            for (std::size_t c = 0; c < cout; ++c) {
                                const T dv = dp[c];
                                const T* wr = wp + c * k;
                                T* dwr = dwp + c * k;
                                for (std::size_t kk = 0; kk < k; ++kk) {
                                    dxp[kk] += wr[kk] * dv;
                                    dwr[kk] += xp[kk] * dv;
                                }
                            }
                        }
                }
        }
        d = std::move(dx);
    }
    if (dx_out) *dx_out = std::move(d);
}

// ---------------------------------------------------------------------------
// optimizer and training

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct AdamStateT {
    std::vector<TensorT<T>> mw, vw;
    std::vector<std::vector<T>> mb, vb;
    std::uint64_t step = 0;
};

template <typename T>
AdamStateT<T> make_adam_state(const CedModelT<T>& m) {
    AdamStateT<T> st;
    st.mw.resize(m.specs.size());
    st.vw.resize(m.specs.size());
    st.mb.resize(m.specs.size());
    st.vb.resize(m.specs.size());
    for (std::size_t i = 0; i < m.specs.size(); ++i) {
        if (!m.specs[i].learnable()) continue;
        st.mw[i] = TensorT<T>(m.params[i].w.dims());
        st.vw[i] = TensorT<T>(m.params[i].w.dims());
        st.mb[i].assign(m.params[i].b.size(), T(0));
        st.vb[i].assign(m.params[i].b.size(), T(0));
    }
    return st;
}

template <typename T>
void adam_step(AdamStateT<T>& st, CedModelT<T>& m, const GradientsT<T>& g, double lr,
               const AdamConfig& cfg = {}) {
    st.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
    auto update = [&](T& p, T& mm, T& vv, T grad) {
        const double gd = static_cast<double>(grad);
        const double m1 = cfg.beta1 * static_cast<double>(mm) + (1.0 - cfg.beta1) * gd;
        const double v1 = cfg.beta2 * static_cast<double>(vv) + (1.0 - cfg.beta2) * gd * gd;
        mm = static_cast<T>(m1);
        vv = static_cast<T>(v1);
        p -= static_cast<T>(lr * (m1 / bc1) / (std::sqrt(v1 / bc2) + cfg.eps));
    };
    for (std::size_t i = 0; i < m.specs.size(); ++i) {
        if (!m.specs[i].learnable()) continue;
        auto& w = m.params[i].w;
        for (std::size_t j = 0; j < w.size(); ++j) update(w[j], st.mw[i][j], st.vw[i][j], g.w[i][j]);
        auto& b = m.params[i].b;
        for (std::size_t j = 0; j < b.size(); ++j)
            update(b[j], st.mb[i][j], st.vb[i][j], g.b[i][j]);
    }
}

struct TrainConfig {
    std::size_t batch = 100;
    std::size_t epochs = 4000;
    double base_lr = 1e-4;
    double max_lr = 0.1;
    std::size_t lr_cycle = 200;  // epochs per triangular cycle
    AdamConfig adam;
    std::size_t patience = 200;
    std::uint64_t seed = 0;
    int threads = 1;
    bool verbose = false;
    // Cyclic spatial shifts of each training pair, drawn fresh every epoch.
    // Exactly label-preserving for periodic fields whose targets are integer
    // downscales of the input; validation data is never shifted.
    bool augment_roll = false;
};

// Triangular wave between base_lr (cycle ends) and max_lr (cycle middle).
double cyclic_lr(std::size_t epoch, double base_lr, double max_lr, std::size_t cycle);

struct EpochStats {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_mse = 0.0;  // per-sample sum convention
    double val_mse = 0.0;
    double train_mse_px = 0.0;  // divided by pixels per sample
    double val_mse_px = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    std::size_t best_epoch = 0;
    double best_val = 0.0;
};

namespace detail {
template <typename T>
TensorT<T> slice_sample(const TensorT<T>& batch, std::size_t idx) {
    TensorT<T> out({batch.dim(1), batch.dim(2), batch.dim(3)});
    const std::size_t stride = out.size();
    std::copy_n(batch.data().begin() + idx * stride, stride, out.data().begin());
    return out;
}

// Cyclic spatial shift of an H x W x C field: out(r, c) = in(r+dr, c+dc) mod size.
template <typename T>
TensorT<T> roll_plane(const TensorT<T>& t, std::size_t dr, std::size_t dc) {
    const std::size_t H = t.dim(0), W = t.dim(1), C = t.dim(2);
    TensorT<T> out(t.dims());
    for (std::size_t r = 0; r < H; ++r) {
        const std::size_t sr = (r + dr) % H;
        for (std::size_t c = 0; c < W; ++c) {
            const std::size_t sc = (c + dc) % W;
            for (std::size_t ch = 0; ch < C; ++ch) out(r, c, ch) = t(sr, sc, ch);
        }
    }
    return out;
}
}  // namespace detail

// Mean per-sample-sum MSE of the model over a dataset (x: N,H,W,C; y: N,h,w,1).
template <typename T>
double dataset_mse(const CedModelT<T>& m, const TensorT<T>& x, const TensorT<T>& y) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.dim(0); ++i)
        acc += loss_mse(forward(m, detail::slice_sample(x, i)), detail::slice_sample(y, i));
    return acc / static_cast<double>(x.dim(0));
}

template <typename T>
TensorT<T> predict(const CedModelT<T>& m, const TensorT<T>& x) {
    TensorT<T> out;
    for (std::size_t i = 0; i < x.dim(0); ++i) {
        auto yi = forward(m, detail::slice_sample(x, i));
        if (i == 0) out = TensorT<T>({x.dim(0), yi.dim(0), yi.dim(1), yi.dim(2)});
        std::copy(yi.data().begin(), yi.data().end(), out.data().begin() + i * yi.size());
    }
    return out;
}

template <typename T>
TrainHistory train(CedModelT<T>& model, const TensorT<T>& xtr, const TensorT<T>& ytr,
                   const TensorT<T>& xval, const TensorT<T>& yval, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// checkpoints (f32 models)

void save_checkpoint(const std::filesystem::path& path, const CedModel& m, std::size_t epoch,
                     double val_mse);
CedModel load_checkpoint(const std::filesystem::path& path);

extern template TrainHistory train<float>(CedModelT<float>&, const TensorT<float>&,
                                          const TensorT<float>&, const TensorT<float>&,
                                          const TensorT<float>&, const TrainConfig&);
extern template TrainHistory train<double>(CedModelT<double>&, const TensorT<double>&,
                                           const TensorT<double>&, const TensorT<double>&,
                                           const TensorT<double>&, const TrainConfig&);

}  // namespace granite
