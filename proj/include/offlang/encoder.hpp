#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "error.hpp"
#include "prob.hpp"
#include "rng.hpp"
#include "subword.hpp"

namespace offlang {

// ---------------------------------------------------------------------------
// Config and parameter containers (templated on scalar: float for training,
// double for the finite-difference gradient check)
// ---------------------------------------------------------------------------

struct EncoderConfig {
    int d_model = 64;
    int heads = 4;
    int layers = 2;
    int ff_dim = 128;
    int max_len = 64;
    int vocab_size = 0;
    double dropout = 0.1;

    int head_dim() const { return d_model / heads; }

    void validate() const {
        if (d_model < 1 || heads < 1 || d_model % heads != 0)
            throw ConfigError("encoder: d_model must be divisible by heads");
        if (layers < 1 || ff_dim < 1) throw ConfigError("encoder: bad layer sizes");
        if (max_len < 3) throw ConfigError("encoder: max_len must be >= 3");
        if (vocab_size <= SubwordVocabulary::kNumSpecials)
            throw ConfigError("encoder: vocab_size too small");
        if (dropout < 0.0 || dropout >= 1.0)
            throw ConfigError("encoder: dropout must be in [0, 1)");
    }

    bool operator==(const EncoderConfig&) const = default;
};

template <typename T>
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<T> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, T(0)) {}

    T* row(int i) { return a.data() + static_cast<std::size_t>(i) * cols; }
    const T* row(int i) const { return a.data() + static_cast<std::size_t>(i) * cols; }
    T& at(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
    const T& at(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }
    void zero() { std::fill(a.begin(), a.end(), T(0)); }
};

template <typename T>
struct LayerWeightsT {
    Mat<T> wq, wk, wv, wo;            // [d x d]
    std::vector<T> bq, bk, bv, bo;    // [d]
    std::vector<T> ln1_g, ln1_b;      // [d]
    std::vector<T> ln2_g, ln2_b;      // [d]
    Mat<T> w_ff1;                     // [d x ff]
    std::vector<T> b_ff1;             // [ff]
    Mat<T> w_ff2;                     // [ff x d]
    std::vector<T> b_ff2;             // [d]
};

template <typename T>
struct EncoderWeightsT {
    EncoderConfig config;
    Mat<T> tok_emb; // [vocab x d]
    Mat<T> pos_emb; // [max_len x d]
    std::vector<LayerWeightsT<T>> layers;
    std::vector<T> lnf_g, lnf_b; // final layer norm

    static EncoderWeightsT zeros(const EncoderConfig& cfg) {
        cfg.validate();
        EncoderWeightsT w;
        w.config = cfg;
        w.tok_emb = Mat<T>(cfg.vocab_size, cfg.d_model);
        w.pos_emb = Mat<T>(cfg.max_len, cfg.d_model);
        w.layers.resize(cfg.layers);
        for (auto& l : w.layers) {
            l.wq = l.wk = l.wv = l.wo = Mat<T>(cfg.d_model, cfg.d_model);
            l.bq = l.bk = l.bv = l.bo = std::vector<T>(cfg.d_model, T(0));
            l.ln1_g = l.ln1_b = l.ln2_g = l.ln2_b = std::vector<T>(cfg.d_model, T(0));
            l.w_ff1 = Mat<T>(cfg.d_model, cfg.ff_dim);
            l.b_ff1 = std::vector<T>(cfg.ff_dim, T(0));
            l.w_ff2 = Mat<T>(cfg.ff_dim, cfg.d_model);
            l.b_ff2 = std::vector<T>(cfg.d_model, T(0));
        }
        w.lnf_g.assign(cfg.d_model, T(0));
        w.lnf_b.assign(cfg.d_model, T(0));
        return w;
    }
};

template <typename T>
struct ClassifierHeadT {
    Mat<T> w;         // [num_classes x d]
    std::vector<T> b; // [num_classes]

    static ClassifierHeadT zeros(const EncoderConfig& cfg) {
        ClassifierHeadT h;
        h.w = Mat<T>(2, cfg.d_model);
        h.b.assign(2, T(0));
        return h;
    }
    int num_classes() const { return w.rows; }
};

using EncoderWeights = EncoderWeightsT<float>;
using ClassifierHead = ClassifierHeadT<float>;

// Named views over every parameter tensor, in the declared serialization
// order. Adam, the checkpoint container and the gradient check all walk this.
template <typename T>
struct NamedTensor {
    std::string name;
    T* data;
    std::size_t n;
};

template <typename T>
std::vector<NamedTensor<T>> tensor_refs(EncoderWeightsT<T>& w) {
    std::vector<NamedTensor<T>> refs;
    refs.push_back({"tok_emb", w.tok_emb.a.data(), w.tok_emb.a.size()});
    refs.push_back({"pos_emb", w.pos_emb.a.data(), w.pos_emb.a.size()});
    for (std::size_t i = 0; i < w.layers.size(); ++i) {
        auto& l = w.layers[i];
        const std::string p = "layer" + std::to_string(i) + ".";
        refs.push_back({p + "ln1_g", l.ln1_g.data(), l.ln1_g.size()});
        refs.push_back({p + "ln1_b", l.ln1_b.data(), l.ln1_b.size()});
        refs.push_back({p + "wq", l.wq.a.data(), l.wq.a.size()});
        refs.push_back({p + "bq", l.bq.data(), l.bq.size()});
        refs.push_back({p + "wk", l.wk.a.data(), l.wk.a.size()});
        refs.push_back({p + "bk", l.bk.data(), l.bk.size()});
        refs.push_back({p + "wv", l.wv.a.data(), l.wv.a.size()});
        refs.push_back({p + "bv", l.bv.data(), l.bv.size()});
        refs.push_back({p + "wo", l.wo.a.data(), l.wo.a.size()});
        refs.push_back({p + "bo", l.bo.data(), l.bo.size()});
        refs.push_back({p + "ln2_g", l.ln2_g.data(), l.ln2_g.size()});
        refs.push_back({p + "ln2_b", l.ln2_b.data(), l.ln2_b.size()});
        refs.push_back({p + "w_ff1", l.w_ff1.a.data(), l.w_ff1.a.size()});
        refs.push_back({p + "b_ff1", l.b_ff1.data(), l.b_ff1.size()});
        refs.push_back({p + "w_ff2", l.w_ff2.a.data(), l.w_ff2.a.size()});
        refs.push_back({p + "b_ff2", l.b_ff2.data(), l.b_ff2.size()});
    }
    refs.push_back({"lnf_g", w.lnf_g.data(), w.lnf_g.size()});
    refs.push_back({"lnf_b", w.lnf_b.data(), w.lnf_b.size()});
    return refs;
}

template <typename T>
std::vector<NamedTensor<T>> tensor_refs(ClassifierHeadT<T>& h) {
    return {{"head.w", h.w.a.data(), h.w.a.size()}, {"head.b", h.b.data(), h.b.size()}};
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

template <typename T>
EncoderWeightsT<T> init_encoder_t(const EncoderConfig& cfg, std::uint64_t seed) {
    auto w = EncoderWeightsT<T>::zeros(cfg);
    Rng rng(seed);
    auto fill_uniform = [&rng](Mat<T>& m) {
        const double s = std::sqrt(6.0 / (m.rows + m.cols));
        for (auto& v : m.a) v = static_cast<T>(rng.uniform(-s, s));
    };
    fill_uniform(w.tok_emb);
    fill_uniform(w.pos_emb);
    for (auto& l : w.layers) {
        std::fill(l.ln1_g.begin(), l.ln1_g.end(), T(1));
        std::fill(l.ln2_g.begin(), l.ln2_g.end(), T(1));
        fill_uniform(l.wq);
        fill_uniform(l.wk);
        fill_uniform(l.wv);
        fill_uniform(l.wo);
        fill_uniform(l.w_ff1);
        fill_uniform(l.w_ff2);
    }
    std::fill(w.lnf_g.begin(), w.lnf_g.end(), T(1));
    return w;
}

inline EncoderWeights init_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
    return init_encoder_t<float>(cfg, seed);
}

template <typename T>
ClassifierHeadT<T> init_head_t(const EncoderConfig& cfg, std::uint64_t seed) {
    auto h = ClassifierHeadT<T>::zeros(cfg);
    Rng rng(seed);
    const double s = std::sqrt(6.0 / (h.w.rows + h.w.cols));
    for (auto& v : h.w.a) v = static_cast<T>(rng.uniform(-s, s));
    return h;
}

inline ClassifierHead init_head(const EncoderConfig& cfg, std::uint64_t seed) {
    return init_head_t<float>(cfg, seed);
}

// ---------------------------------------------------------------------------
// Forward pass with cache (pre-norm residual layout, pad keys masked; pad
// rows are skipped outright, which keeps h independent of the pad length)
// ---------------------------------------------------------------------------

namespace detail {

constexpr double kLnEps = 1e-5;

template <typename T>
T gelu(T x) {
    const T c = static_cast<T>(0.7978845608028654); // sqrt(2/pi)
    const T inner = c * (x + static_cast<T>(0.044715) * x * x * x);
    return static_cast<T>(0.5) * x * (T(1) + std::tanh(inner));
}

template <typename T>
T gelu_grad(T x) {
    const T c = static_cast<T>(0.7978845608028654);
    const T x3 = static_cast<T>(0.044715) * x * x * x;
    const T th = std::tanh(c * (x + x3));
    const T sech2 = T(1) - th * th;
    return static_cast<T>(0.5) * (T(1) + th) +
           static_cast<T>(0.5) * x * sech2 * c *
               (T(1) + static_cast<T>(3) * static_cast<T>(0.044715) * x * x);
}

template <typename T>
struct LayerNormCache {
    std::vector<T> mean, rstd;
};

template <typename T>
void layernorm_rows(const Mat<T>& x, const std::vector<T>& g, const std::vector<T>& b,
                    int n_rows, Mat<T>& out, LayerNormCache<T>& cache) {
    const int d = x.cols;
    cache.mean.assign(n_rows, T(0));
    cache.rstd.assign(n_rows, T(0));
    for (int i = 0; i < n_rows; ++i) {
        const T* xi = x.row(i);
        T mean = 0;
        for (int j = 0; j < d; ++j) mean += xi[j];
        mean /= static_cast<T>(d);
        T var = 0;
        for (int j = 0; j < d; ++j) var += (xi[j] - mean) * (xi[j] - mean);
        var /= static_cast<T>(d);
        const T rstd = T(1) / std::sqrt(var + static_cast<T>(kLnEps));
        cache.mean[i] = mean;
        cache.rstd[i] = rstd;
        T* oi = out.row(i);
        for (int j = 0; j < d; ++j) oi[j] = g[j] * (xi[j] - mean) * rstd + b[j];
    }
}

template <typename T>
void layernorm_backward_rows(const Mat<T>& x, const std::vector<T>& g,
                             const LayerNormCache<T>& cache, const Mat<T>& dy,
                             int n_rows, Mat<T>& dx, std::vector<T>& dg,
                             std::vector<T>& db) {
    const int d = x.cols;
    for (int i = 0; i < n_rows; ++i) {
        const T* xi = x.row(i);
        const T* dyi = dy.row(i);
        T* dxi = dx.row(i);
        const T mean = cache.mean[i];
        const T rstd = cache.rstd[i];
        T sum_dxhat = 0, sum_dxhat_xhat = 0;
        for (int j = 0; j < d; ++j) {
            const T xhat = (xi[j] - mean) * rstd;
            const T dxhat = dyi[j] * g[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
            dg[j] += dyi[j] * xhat;
            db[j] += dyi[j];
        }
        const T inv_d = T(1) / static_cast<T>(d);
        for (int j = 0; j < d; ++j) {
            const T xhat = (xi[j] - mean) * rstd;
            const T dxhat = dyi[j] * g[j];
            dxi[j] += rstd * (dxhat - inv_d * sum_dxhat - inv_d * xhat * sum_dxhat_xhat);
        }
    }
}

// out[0..n_rows) = x * w + b with w [in x out].
template <typename T>
void linear_rows(const Mat<T>& x, const Mat<T>& w, const std::vector<T>& b, int n_rows,
                 Mat<T>& out) {
    const int in = w.rows, on = w.cols;
    for (int i = 0; i < n_rows; ++i) {
        const T* xi = x.row(i);
        T* oi = out.row(i);
        for (int j = 0; j < on; ++j) oi[j] = b[j];
        for (int k = 0; k < in; ++k) {
            const T xv = xi[k];
            if (xv == T(0)) continue;
            const T* wk = w.row(k);
            for (int j = 0; j < on; ++j) oi[j] += xv * wk[j];
        }
    }
}

// Backward of linear_rows: accumulates dx, dw, db.
template <typename T>
void linear_backward_rows(const Mat<T>& x, const Mat<T>& w, const Mat<T>& dout,
                          int n_rows, Mat<T>& dx, Mat<T>& dw, std::vector<T>& db) {
    const int in = w.rows, on = w.cols;
    for (int i = 0; i < n_rows; ++i) {
        const T* xi = x.row(i);
        const T* doi = dout.row(i);
        T* dxi = dx.row(i);
        for (int j = 0; j < on; ++j) db[j] += doi[j];
        for (int k = 0; k < in; ++k) {
            const T* wk = w.row(k);
            T acc = 0;
            T* dwk = dw.row(k);
            const T xv = xi[k];
            for (int j = 0; j < on; ++j) {
                acc += doi[j] * wk[j];
                dwk[j] += xv * doi[j];
            }
            dxi[k] += acc;
        }
    }
}

template <typename T>
struct DropoutMask {
    std::vector<std::uint8_t> keep;
    T scale = T(1);
    bool active = false;

    void apply(Mat<T>& x, int n_rows, double rate, Rng* rng) {
        active = rate > 0.0 && rng != nullptr;
        if (!active) return;
        scale = static_cast<T>(1.0 / (1.0 - rate));
        keep.assign(static_cast<std::size_t>(n_rows) * x.cols, 1);
        for (int i = 0; i < n_rows; ++i) {
            T* xi = x.row(i);
            for (int j = 0; j < x.cols; ++j) {
                const std::size_t idx = static_cast<std::size_t>(i) * x.cols + j;
                if (rng->real() < rate) {
                    keep[idx] = 0;
                    xi[j] = T(0);
                } else {
                    xi[j] *= scale;
                }
            }
        }
    }

    void backward(Mat<T>& dx, int n_rows) const {
        if (!active) return;
        for (int i = 0; i < n_rows; ++i) {
            T* dxi = dx.row(i);
            for (int j = 0; j < dx.cols; ++j) {
                const std::size_t idx = static_cast<std::size_t>(i) * dx.cols + j;
                dxi[j] = keep[idx] ? dxi[j] * scale : T(0);
            }
        }
    }
};

template <typename T>
struct LayerCache {
    Mat<T> x_in;
    Mat<T> ln1_out;
    LayerNormCache<T> ln1;
    Mat<T> q, k, v;
    std::vector<Mat<T>> attn; // per head, [n x n] softmax rows
    Mat<T> ctx;
    Mat<T> attn_out;
    DropoutMask<T> drop1;
    Mat<T> x_mid;
    Mat<T> ln2_out;
    LayerNormCache<T> ln2;
    Mat<T> ff_pre;
    Mat<T> ff_act;
    Mat<T> ff_out;
    DropoutMask<T> drop2;
};

template <typename T>
struct ForwardCache {
    int n = 0; // attention_length: rows actually computed
    std::vector<int> ids;
    Mat<T> x0;
    DropoutMask<T> drop_emb;
    std::vector<LayerCache<T>> layers;
    Mat<T> x_final;
    Mat<T> hidden; // [n x d]
    LayerNormCache<T> lnf;
};

template <typename T>
void attention_forward(const EncoderConfig& cfg, LayerCache<T>& lc, int n) {
    const int dh = cfg.head_dim();
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    lc.attn.assign(cfg.heads, Mat<T>(n, n));
    lc.ctx = Mat<T>(n, cfg.d_model);
    for (int h = 0; h < cfg.heads; ++h) {
        const int off = h * dh;
        Mat<T>& probs = lc.attn[h];
        for (int i = 0; i < n; ++i) {
            T* si = probs.row(i);
            T mx = -std::numeric_limits<T>::infinity();
            for (int j = 0; j < n; ++j) {
                T dot = 0;
                const T* qi = lc.q.row(i) + off;
                const T* kj = lc.k.row(j) + off;
                for (int t = 0; t < dh; ++t) dot += qi[t] * kj[t];
                si[j] = dot * inv_sqrt;
                mx = std::max(mx, si[j]);
            }
            T denom = 0;
            for (int j = 0; j < n; ++j) {
                si[j] = std::exp(si[j] - mx);
                denom += si[j];
            }
            for (int j = 0; j < n; ++j) si[j] /= denom;
            T* ci = lc.ctx.row(i) + off;
            for (int t = 0; t < dh; ++t) ci[t] = 0;
            for (int j = 0; j < n; ++j) {
                const T p = si[j];
                const T* vj = lc.v.row(j) + off;
                for (int t = 0; t < dh; ++t) ci[t] += p * vj[t];
            }
        }
    }
}

template <typename T>
void attention_backward(const EncoderConfig& cfg, const LayerCache<T>& lc,
                        const Mat<T>& dctx, int n, Mat<T>& dq, Mat<T>& dk, Mat<T>& dv) {
    const int dh = cfg.head_dim();
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<T> dp(n), ds(n);
    for (int h = 0; h < cfg.heads; ++h) {
        const int off = h * dh;
        const Mat<T>& probs = lc.attn[h];
        for (int i = 0; i < n; ++i) {
            const T* pi = probs.row(i);
            const T* dci = dctx.row(i) + off;
            // dV and dP
            T dot_dp_p = 0;
            for (int j = 0; j < n; ++j) {
                const T* vj = lc.v.row(j) + off;
                T acc = 0;
                for (int t = 0; t < dh; ++t) acc += dci[t] * vj[t];
                dp[j] = acc;
                dot_dp_p += acc * pi[j];
                T* dvj = dv.row(j) + off;
                for (int t = 0; t < dh; ++t) dvj[t] += pi[j] * dci[t];
            }
            // softmax backward, then scores -> q, k
            for (int j = 0; j < n; ++j) ds[j] = pi[j] * (dp[j] - dot_dp_p) * inv_sqrt;
            T* dqi = dq.row(i) + off;
            for (int j = 0; j < n; ++j) {
                const T dsj = ds[j];
                if (dsj == T(0)) continue;
                const T* kj = lc.k.row(j) + off;
                T* dkj = dk.row(j) + off;
                const T* qi = lc.q.row(i) + off;
                for (int t = 0; t < dh; ++t) {
                    dqi[t] += dsj * kj[t];
                    dkj[t] += dsj * qi[t];
                }
            }
        }
    }
}

template <typename T>
ForwardCache<T> encoder_forward(const EncoderWeightsT<T>& w, const TokenIdSequence& ids,
                                bool train_mode, Rng* rng) {
    const EncoderConfig& cfg = w.config;
    if (ids.max_len() != cfg.max_len)
        throw ConfigError("encoder_forward: sequence length does not match max_len");
    for (const int id : ids.ids)
        if (id < 0 || id >= cfg.vocab_size)
            throw ConfigError("encoder_forward: token id out of range for vocabulary");

    ForwardCache<T> cache;
    const int n = ids.attention_length;
    cache.n = n;
    cache.ids = ids.ids;
    Rng* drop_rng = train_mode ? rng : nullptr;

    cache.x0 = Mat<T>(n, cfg.d_model);
    for (int i = 0; i < n; ++i) {
        const T* emb = w.tok_emb.row(ids.ids[i]);
        const T* pos = w.pos_emb.row(i);
        T* xi = cache.x0.row(i);
        for (int j = 0; j < cfg.d_model; ++j) xi[j] = emb[j] + pos[j];
    }
    cache.drop_emb.apply(cache.x0, n, cfg.dropout, drop_rng);

    cache.layers.resize(cfg.layers);
    Mat<T> x = cache.x0;
    for (int li = 0; li < cfg.layers; ++li) {
        auto& lc = cache.layers[li];
        const auto& lw = w.layers[li];
        lc.x_in = x;

        lc.ln1_out = Mat<T>(n, cfg.d_model);
        layernorm_rows(lc.x_in, lw.ln1_g, lw.ln1_b, n, lc.ln1_out, lc.ln1);
        lc.q = Mat<T>(n, cfg.d_model);
        lc.k = Mat<T>(n, cfg.d_model);
        lc.v = Mat<T>(n, cfg.d_model);
        linear_rows(lc.ln1_out, lw.wq, lw.bq, n, lc.q);
        linear_rows(lc.ln1_out, lw.wk, lw.bk, n, lc.k);
        linear_rows(lc.ln1_out, lw.wv, lw.bv, n, lc.v);
        attention_forward(cfg, lc, n);
        lc.attn_out = Mat<T>(n, cfg.d_model);
        linear_rows(lc.ctx, lw.wo, lw.bo, n, lc.attn_out);
        Mat<T> attn_dropped = lc.attn_out;
        lc.drop1.apply(attn_dropped, n, cfg.dropout, drop_rng);
        lc.x_mid = Mat<T>(n, cfg.d_model);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < cfg.d_model; ++j)
                lc.x_mid.at(i, j) = lc.x_in.at(i, j) + attn_dropped.at(i, j);

        lc.ln2_out = Mat<T>(n, cfg.d_model);
        layernorm_rows(lc.x_mid, lw.ln2_g, lw.ln2_b, n, lc.ln2_out, lc.ln2);
        lc.ff_pre = Mat<T>(n, cfg.ff_dim);
        linear_rows(lc.ln2_out, lw.w_ff1, lw.b_ff1, n, lc.ff_pre);
        lc.ff_act = Mat<T>(n, cfg.ff_dim);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < cfg.ff_dim; ++j)
                lc.ff_act.at(i, j) = gelu(lc.ff_pre.at(i, j));
        lc.ff_out = Mat<T>(n, cfg.d_model);
        linear_rows(lc.ff_act, lw.w_ff2, lw.b_ff2, n, lc.ff_out);
        Mat<T> ff_dropped = lc.ff_out;
        lc.drop2.apply(ff_dropped, n, cfg.dropout, drop_rng);
        x = Mat<T>(n, cfg.d_model);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < cfg.d_model; ++j)
                x.at(i, j) = lc.x_mid.at(i, j) + ff_dropped.at(i, j);
    }
    cache.x_final = x;
    cache.hidden = Mat<T>(n, cfg.d_model);
    layernorm_rows(cache.x_final, w.lnf_g, w.lnf_b, n, cache.hidden, cache.lnf);
    return cache;
}

// d_hidden is the loss gradient w.r.t. the final hidden states (n rows).
template <typename T>
void encoder_backward(const EncoderWeightsT<T>& w, const ForwardCache<T>& cache,
                      const Mat<T>& d_hidden, EncoderWeightsT<T>& grads) {
    const EncoderConfig& cfg = w.config;
    const int n = cache.n;

    Mat<T> dx(n, cfg.d_model);
    layernorm_backward_rows(cache.x_final, w.lnf_g, cache.lnf, d_hidden, n, dx,
                            grads.lnf_g, grads.lnf_b);

    for (int li = cfg.layers - 1; li >= 0; --li) {
        const auto& lc = cache.layers[li];
        const auto& lw = w.layers[li];
        auto& lg = grads.layers[li];

        // FF branch: dx covers x_out = x_mid + drop(ff_out)
        Mat<T> d_ff_out = dx;
        lc.drop2.backward(d_ff_out, n);
        Mat<T> d_ff_act(n, cfg.ff_dim);
        linear_backward_rows(lc.ff_act, lw.w_ff2, d_ff_out, n, d_ff_act, lg.w_ff2,
                             lg.b_ff2);
        Mat<T> d_ff_pre(n, cfg.ff_dim);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < cfg.ff_dim; ++j)
                d_ff_pre.at(i, j) = d_ff_act.at(i, j) * gelu_grad(lc.ff_pre.at(i, j));
        Mat<T> d_ln2(n, cfg.d_model);
        linear_backward_rows(lc.ln2_out, lw.w_ff1, d_ff_pre, n, d_ln2, lg.w_ff1,
                             lg.b_ff1);
        Mat<T> d_x_mid = dx; // residual path
        layernorm_backward_rows(lc.x_mid, lw.ln2_g, lc.ln2, d_ln2, n, d_x_mid,
                                lg.ln2_g, lg.ln2_b);

        // Attention branch: x_mid = x_in + drop(attn_out)
        Mat<T> d_attn_out = d_x_mid;
        lc.drop1.backward(d_attn_out, n);
        Mat<T> d_ctx(n, cfg.d_model);
        linear_backward_rows(lc.ctx, lw.wo, d_attn_out, n, d_ctx, lg.wo, lg.bo);
        Mat<T> dq(n, cfg.d_model), dk(n, cfg.d_model), dv(n, cfg.d_model);
        attention_backward(cfg, lc, d_ctx, n, dq, dk, dv);
        Mat<T> d_ln1(n, cfg.d_model);
        linear_backward_rows(lc.ln1_out, lw.wq, dq, n, d_ln1, lg.wq, lg.bq);
        linear_backward_rows(lc.ln1_out, lw.wk, dk, n, d_ln1, lg.wk, lg.bk);
        linear_backward_rows(lc.ln1_out, lw.wv, dv, n, d_ln1, lg.wv, lg.bv);
        Mat<T> d_x_in = d_x_mid; // residual path
        layernorm_backward_rows(lc.x_in, lw.ln1_g, lc.ln1, d_ln1, n, d_x_in, lg.ln1_g,
                                lg.ln1_b);
        dx = std::move(d_x_in);
    }

    cache.drop_emb.backward(dx, n);
    for (int i = 0; i < n; ++i) {
        const T* dxi = dx.row(i);
        T* demb = grads.tok_emb.row(cache.ids[i]);
        T* dpos = grads.pos_emb.row(i);
        for (int j = 0; j < cfg.d_model; ++j) {
            demb[j] += dxi[j];
            dpos[j] += dxi[j];
        }
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Classification head (Eq-style softmax over the [CLS] hidden state)
// ---------------------------------------------------------------------------

struct EncoderOutput {
    Mat<float> hidden_states;   // [max_len x d]; pad rows are zero
    std::vector<float> h;       // final hidden state of position 0 ([CLS])
};

template <typename T>
std::array<T, 2> head_logits(const ClassifierHeadT<T>& head, const T* h) {
    std::array<T, 2> logits{};
    const int d = head.w.cols;
    for (int c = 0; c < 2; ++c) {
        T acc = head.b[c];
        const T* wc = head.w.row(c);
        for (int j = 0; j < d; ++j) acc += wc[j] * h[j];
        logits[c] = acc;
    }
    return logits;
}

template <typename T>
ProbabilityDistribution softmax2(const std::array<T, 2>& logits) {
    const double mx = std::max<double>(logits[0], logits[1]);
    const double e0 = std::exp(static_cast<double>(logits[0]) - mx);
    const double e1 = std::exp(static_cast<double>(logits[1]) - mx);
    ProbabilityDistribution p;
    p.probs = {e0 / (e0 + e1), e1 / (e0 + e1)};
    return p;
}

// Classification consumes exactly h = hidden_states[0].
template <typename T>
ProbabilityDistribution classify_hidden(const ClassifierHeadT<T>& head,
                                        const std::vector<T>& h) {
    return softmax2(head_logits(head, h.data()));
}

struct ForwardResult {
    EncoderOutput output;
    ProbabilityDistribution prob;
};

inline ForwardResult forward(const EncoderWeights& w, const ClassifierHead& head,
                             const TokenIdSequence& ids, bool train_mode = false,
                             std::uint64_t seed = 0) {
    Rng rng(seed);
    auto cache = detail::encoder_forward(w, ids, train_mode, &rng);
    ForwardResult res;
    res.output.hidden_states = Mat<float>(w.config.max_len, w.config.d_model);
    for (int i = 0; i < cache.n; ++i)
        for (int j = 0; j < w.config.d_model; ++j)
            res.output.hidden_states.at(i, j) = cache.hidden.at(i, j);
    res.output.h.assign(cache.hidden.row(0), cache.hidden.row(0) + w.config.d_model);
    res.prob = softmax2(head_logits(head, cache.hidden.row(0)));
    return res;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct TrainHyper {
    double learning_rate = 1e-5;
    int epochs = 3;
    int batch_size = 16;
    std::uint64_t seed = 42;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    }
};

namespace detail {

template <typename T>
struct AdamState {
    std::vector<std::vector<T>> m, v;
    long long t = 0;

    template <typename Refs>
    void init(const Refs& refs) {
        m.clear();
        v.clear();
        for (const auto& r : refs) {
            m.emplace_back(r.n, T(0));
            v.emplace_back(r.n, T(0));
        }
    }
};

template <typename T>
void adam_step(const std::vector<NamedTensor<T>>& params,
               const std::vector<NamedTensor<T>>& grads, AdamState<T>& state,
               const TrainHyper& hyper) {
    ++state.t;
    const double b1 = hyper.adam_beta1, b2 = hyper.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        T* p = params[k].data;
        const T* g = grads[k].data;
        T* m = state.m[k].data();
        T* v = state.v[k].data();
        for (std::size_t i = 0; i < params[k].n; ++i) {
            const double gi = g[i];
            const double mi = b1 * m[i] + (1.0 - b1) * gi;
            const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            p[i] -= static_cast<T>(hyper.learning_rate * (mi / bc1) /
                                   (std::sqrt(vi / bc2) + hyper.adam_eps));
        }
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Classifier fine-tuning
// ---------------------------------------------------------------------------

struct EpochLogEntry {
    int epoch;
    std::string split;
    double loss;
    double accuracy;
};

using TrainLog = std::vector<EpochLogEntry>;

inline std::string render_train_log(const TrainLog& log) {
    std::string out = "epoch\tsplit\tloss\taccuracy\n";
    char line[128];
    for (const auto& e : log) {
        std::snprintf(line, sizeof(line), "%d\t%s\t%.6f\t%.6f\n", e.epoch,
                      e.split.c_str(), e.loss, e.accuracy);
        out += line;
    }
    return out;
}

struct TrainedClassifier {
    EncoderWeights encoder;
    ClassifierHead head;
    TrainLog log;
};

namespace detail {

// Cross-entropy of one example; fills d_hidden row 0 and the head grads.
template <typename T>
double classify_loss_backward(const ClassifierHeadT<T>& head,
                              const ForwardCache<T>& cache, BinaryLabel target,
                              Mat<T>& d_hidden, ClassifierHeadT<T>& head_grads,
                              bool* correct = nullptr) {
    const int d = head.w.cols;
    const T* h = cache.hidden.row(0);
    const auto logits = head_logits(head, h);
    const auto p = softmax2(logits);
    const int y = static_cast<int>(target);
    if (correct) *correct = p.argmax() == target;
    std::array<double, 2> dlogits{p.probs[0], p.probs[1]};
    dlogits[y] -= 1.0;
    for (int c = 0; c < 2; ++c) {
        head_grads.b[c] += static_cast<T>(dlogits[c]);
        T* dwc = head_grads.w.row(c);
        T* drow = d_hidden.row(0);
        const T* wc = head.w.row(c);
        for (int j = 0; j < d; ++j) {
            dwc[j] += static_cast<T>(dlogits[c]) * h[j];
            drow[j] += static_cast<T>(dlogits[c]) * wc[j];
        }
    }
    const double pt = std::max(p.probs[y], 1e-300);
    return -std::log(pt);
}

} // namespace detail

// Adam fine-tuning of encoder + head on cross-entropy over [CLS].
inline TrainedClassifier train_classifier(const EncoderWeights& w,
                                          const ClassifierHead& head,
                                          const LabeledDataset& ds,
                                          const SubwordVocabulary& vocab,
                                          const TrainHyper& hyper,
                                          const LabeledDataset* validation = nullptr) {
    hyper.validate();
    if (!ds.fully_labeled())
        throw DataError("train_classifier: dataset must be fully labeled");
    if (vocab.size() != w.config.vocab_size)
        throw ConfigError("train_classifier: vocabulary size does not match weights");

    TrainedClassifier result{w, head, {}};
    std::vector<TokenIdSequence> encoded;
    std::vector<BinaryLabel> labels;
    encoded.reserve(ds.size());
    for (const auto& doc : ds.documents) {
        encoded.push_back(encode(vocab, doc.text, w.config.max_len));
        labels.push_back(*doc.label);
    }
    std::vector<TokenIdSequence> val_encoded;
    std::vector<BinaryLabel> val_labels;
    if (validation) {
        for (const auto& doc : validation->documents) {
            val_encoded.push_back(encode(vocab, doc.text, w.config.max_len));
            val_labels.push_back(*doc.label);
        }
    }

    auto params = tensor_refs(result.encoder);
    auto head_params = tensor_refs(result.head);
    params.insert(params.end(), head_params.begin(), head_params.end());
    detail::AdamState<float> adam;
    adam.init(params);

    auto grads_enc = EncoderWeights::zeros(w.config);
    auto grads_head = ClassifierHead::zeros(w.config);
    auto grad_refs = tensor_refs(grads_enc);
    auto grad_head_refs = tensor_refs(grads_head);
    grad_refs.insert(grad_refs.end(), grad_head_refs.begin(), grad_head_refs.end());

    std::vector<std::size_t> order(encoded.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(derive_seed(hyper.seed, 0xA11C));

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size();
             start += hyper.batch_size, ++batch_index) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(hyper.batch_size));
            for (const auto& ref : grad_refs) std::fill(ref.data, ref.data + ref.n, 0.0f);
            double batch_loss = 0.0;
            for (std::size_t bi = start; bi < end; ++bi) {
                const std::size_t i = order[bi];
                Rng drop_rng(derive_seed(derive_seed(hyper.seed, 0xD0 + epoch), i));
                auto cache =
                    detail::encoder_forward(result.encoder, encoded[i], true, &drop_rng);
                Mat<float> d_hidden(cache.n, w.config.d_model);
                bool ok = false;
                const double loss = detail::classify_loss_backward(
                    result.head, cache, labels[i], d_hidden, grads_head, &ok);
                detail::encoder_backward(result.encoder, cache, d_hidden, grads_enc);
                batch_loss += loss;
                if (ok) ++correct;
            }
            if (!std::isfinite(batch_loss))
                throw NumericError("NaN loss at epoch " + std::to_string(epoch + 1) +
                                   " batch " + std::to_string(batch_index + 1));
            const float inv = 1.0f / static_cast<float>(end - start);
            for (const auto& ref : grad_refs)
                for (std::size_t j = 0; j < ref.n; ++j) ref.data[j] *= inv;
            detail::adam_step(params, grad_refs, adam, hyper);
            loss_sum += batch_loss;
        }
        result.log.push_back({epoch + 1, "train", loss_sum / encoded.size(),
                              static_cast<double>(correct) / encoded.size()});
        if (validation && !val_encoded.empty()) {
            double val_loss = 0.0;
            std::size_t val_correct = 0;
            for (std::size_t i = 0; i < val_encoded.size(); ++i) {
                auto cache =
                    detail::encoder_forward(result.encoder, val_encoded[i], false, nullptr);
                const auto p = softmax2(head_logits(result.head, cache.hidden.row(0)));
                const int y = static_cast<int>(val_labels[i]);
                val_loss += -std::log(std::max(p.probs[y], 1e-300));
                if (p.argmax() == val_labels[i]) ++val_correct;
            }
            result.log.push_back({epoch + 1, "validation",
                                  val_loss / val_encoded.size(),
                                  static_cast<double>(val_correct) / val_encoded.size()});
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Masked language modelling
// ---------------------------------------------------------------------------

struct MaskedExample {
    TokenIdSequence masked;
    std::vector<std::pair<int, int>> targets; // (position, original id)
};

// Select max(1, round(rate * n)) content positions; of those 80% become
// [MASK], 10% a random content id, 10% stay unchanged. Specials are never
// selected.
inline MaskedExample mask_tokens(const TokenIdSequence& ids, double rate,
                                 std::uint64_t seed, int vocab_size) {
    if (rate <= 0.0 || rate > 1.0) throw ConfigError("mask rate must be in (0, 1]");
    std::vector<int> candidates;
    for (int i = 1; i < ids.attention_length - 1; ++i)
        if (!SubwordVocabulary::is_special(ids.ids[i])) candidates.push_back(i);
    if (candidates.empty())
        throw DataError("mask_tokens: sequence has no non-special tokens");

    const auto k = static_cast<std::size_t>(std::max<long>(
        1, std::lround(rate * static_cast<double>(candidates.size()))));
    Rng rng(seed);
    rng.shuffle(candidates);
    candidates.resize(std::min(k, candidates.size()));
    std::sort(candidates.begin(), candidates.end());

    MaskedExample ex;
    ex.masked = ids;
    for (const int pos : candidates) {
        ex.targets.emplace_back(pos, ids.ids[pos]);
        const double u = rng.real();
        if (u < 0.8) {
            ex.masked.ids[pos] = SubwordVocabulary::kMask;
        } else if (u < 0.9) {
            ex.masked.ids[pos] =
                SubwordVocabulary::kNumSpecials +
                static_cast<int>(rng.index(vocab_size - SubwordVocabulary::kNumSpecials));
        } // else unchanged
    }
    return ex;
}

struct MlmResult {
    EncoderWeights encoder;
    TrainLog log;
};

// MLM pretraining with a tied-embedding output projection; the output bias
// is trained and then discarded with the rest of the MLM head.
inline MlmResult mlm_pretrain(const EncoderWeights& w, const LabeledDataset& corpus,
                              const SubwordVocabulary& vocab, const TrainHyper& hyper,
                              double mask_rate = 0.15) {
    hyper.validate();
    if (corpus.documents.empty()) throw DataError("mlm_pretrain: empty corpus");
    if (vocab.size() != w.config.vocab_size)
        throw ConfigError("mlm_pretrain: vocabulary size does not match weights");

    MlmResult result{w, {}};
    const EncoderConfig& cfg = w.config;
    std::vector<TokenIdSequence> encoded;
    for (const auto& doc : corpus.documents)
        encoded.push_back(encode(vocab, doc.text, cfg.max_len));

    std::vector<float> out_bias(cfg.vocab_size, 0.0f);
    std::vector<float> out_bias_grad(cfg.vocab_size, 0.0f);

    auto params = tensor_refs(result.encoder);
    params.push_back({"mlm.out_bias", out_bias.data(), out_bias.size()});
    detail::AdamState<float> adam;
    adam.init(params);

    auto grads_enc = EncoderWeights::zeros(cfg);
    auto grad_refs = tensor_refs(grads_enc);
    grad_refs.push_back({"mlm.out_bias", out_bias_grad.data(), out_bias_grad.size()});

    std::vector<std::size_t> order(encoded.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(derive_seed(hyper.seed, 0x313A));
    std::vector<double> logits(cfg.vocab_size);

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size();
             start += hyper.batch_size, ++batch_index) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(hyper.batch_size));
            for (const auto& ref : grad_refs) std::fill(ref.data, ref.data + ref.n, 0.0f);
            double batch_loss = 0.0;
            for (std::size_t bi = start; bi < end; ++bi) {
                const std::size_t i = order[bi];
                const auto ex = mask_tokens(
                    encoded[i], mask_rate,
                    derive_seed(derive_seed(hyper.seed, 0x3A5B + epoch), i),
                    cfg.vocab_size);
                Rng drop_rng(derive_seed(derive_seed(hyper.seed, 0xDD + epoch), i));
                auto cache =
                    detail::encoder_forward(result.encoder, ex.masked, true, &drop_rng);
                Mat<float> d_hidden(cache.n, cfg.d_model);
                double ex_loss = 0.0;
                const double inv_targets = 1.0 / static_cast<double>(ex.targets.size());
                for (const auto& [pos, orig] : ex.targets) {
                    const float* hp = cache.hidden.row(pos);
                    double mx = -1e300;
                    for (int v = 0; v < cfg.vocab_size; ++v) {
                        double acc = out_bias[v];
                        const float* ev = result.encoder.tok_emb.row(v);
                        for (int j = 0; j < cfg.d_model; ++j) acc += ev[j] * hp[j];
                        logits[v] = acc;
                        mx = std::max(mx, acc);
                    }
                    double denom = 0.0;
                    for (int v = 0; v < cfg.vocab_size; ++v)
                        denom += std::exp(logits[v] - mx);
                    const double log_denom = std::log(denom) + mx;
                    ex_loss += (log_denom - logits[orig]) * inv_targets;
                    float* dhp = d_hidden.row(pos);
                    for (int v = 0; v < cfg.vocab_size; ++v) {
                        double dl = std::exp(logits[v] - log_denom);
                        if (v == orig) dl -= 1.0;
                        dl *= inv_targets;
                        out_bias_grad[v] += static_cast<float>(dl);
                        const float* ev = result.encoder.tok_emb.row(v);
                        float* dev = grads_enc.tok_emb.row(v);
                        for (int j = 0; j < cfg.d_model; ++j) {
                            dhp[j] += static_cast<float>(dl) * ev[j];
                            dev[j] += static_cast<float>(dl) * hp[j];
                        }
                    }
                }
                detail::encoder_backward(result.encoder, cache, d_hidden, grads_enc);
                batch_loss += ex_loss;
            }
            if (!std::isfinite(batch_loss))
                throw NumericError("NaN MLM loss at epoch " + std::to_string(epoch + 1) +
                                   " batch " + std::to_string(batch_index + 1));
            const float inv = 1.0f / static_cast<float>(end - start);
            for (const auto& ref : grad_refs)
                for (std::size_t j = 0; j < ref.n; ++j) ref.data[j] *= inv;
            detail::adam_step(params, grad_refs, adam, hyper);
            loss_sum += batch_loss;
        }
        result.log.push_back({epoch + 1, "mlm", loss_sum / encoded.size(), 0.0});
    }
    return result;
}

// ---------------------------------------------------------------------------
// Gradient check (analytic vs central finite differences, float64)
// ---------------------------------------------------------------------------

inline double grad_check(const EncoderConfig& config, std::uint64_t seed) {
    EncoderConfig cfg = config;
    cfg.dropout = 0.0; // check the deterministic loss path
    cfg.validate();
    if (cfg.d_model > 8 || cfg.layers > 1 || cfg.max_len > 8)
        throw ConfigError("grad_check expects a tiny config");

    auto w = init_encoder_t<double>(cfg, seed);
    auto head = init_head_t<double>(cfg, derive_seed(seed, 7));

    Rng rng(derive_seed(seed, 13));
    TokenIdSequence ids;
    ids.ids.assign(cfg.max_len, SubwordVocabulary::kPad);
    const int content = cfg.max_len - 3; // leave pad positions to exercise masking
    ids.ids[0] = SubwordVocabulary::kCls;
    for (int i = 1; i <= content; ++i)
        ids.ids[i] = SubwordVocabulary::kNumSpecials +
                     static_cast<int>(rng.index(cfg.vocab_size - SubwordVocabulary::kNumSpecials));
    ids.ids[content + 1] = SubwordVocabulary::kSep;
    ids.attention_length = content + 2;
    const BinaryLabel target = BinaryLabel::OFF;

    auto loss_fn = [&]() {
        auto cache = detail::encoder_forward(w, ids, false, nullptr);
        const auto p = softmax2(head_logits(head, cache.hidden.row(0)));
        return -std::log(p.probs[static_cast<int>(target)]);
    };

    auto grads = EncoderWeightsT<double>::zeros(cfg);
    auto head_grads = ClassifierHeadT<double>::zeros(cfg);
    {
        auto cache = detail::encoder_forward(w, ids, false, nullptr);
        Mat<double> d_hidden(cache.n, cfg.d_model);
        detail::classify_loss_backward(head, cache, target, d_hidden, head_grads);
        detail::encoder_backward(w, cache, d_hidden, grads);
    }

    auto params = tensor_refs(w);
    auto head_params = tensor_refs(head);
    params.insert(params.end(), head_params.begin(), head_params.end());
    auto grad_refs = tensor_refs(grads);
    auto head_grad_refs = tensor_refs(head_grads);
    grad_refs.insert(grad_refs.end(), head_grad_refs.begin(), head_grad_refs.end());

    const double step = 1e-5;
    double max_rel = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        for (std::size_t i = 0; i < params[k].n; ++i) {
            double& p = params[k].data[i];
            const double saved = p;
            p = saved + step;
            const double lp = loss_fn();
            p = saved - step;
            const double lm = loss_fn();
            p = saved;
            const double numeric = (lp - lm) / (2.0 * step);
            const double analytic = grad_refs[k].data[i];
            const double diff = std::abs(analytic - numeric);
            double denom = std::max(std::abs(analytic), std::abs(numeric));
            if (denom < 1e-5) {
                // Vanishing direction: absolute tolerance, then a floored
                // denominator so genuinely wrong zeros still surface.
                if (diff <= 1e-8) continue;
                denom = std::max(denom, 1e-8);
            }
            max_rel = std::max(max_rel, diff / denom);
        }
    }
    return max_rel;
}

} // namespace offlang
