#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "dfl/errors.hpp"
#include "dfl/rng.hpp"
#include "dfl/tensor.hpp"

namespace dfl {

struct ConvSpec {
    int in_channels = 1;
    int out_channels = 1;
    int kernel_h = 3;
    int kernel_w = 3;
};

struct DenseSpec {
    int in_dim = 1;
    int out_dim = 1;
};

// One parameterized layer plus what happens right after it.
struct LayerSpec {
    std::variant<ConvSpec, DenseSpec> op;
    bool relu = false;
    bool pool_after = false;      // 2x2 max pool, stride 2 (conv layers only)
    double dropout_after = 0.0;   // 0 disables the site

    bool is_conv() const { return std::holds_alternative<ConvSpec>(op); }
    const ConvSpec& conv() const { return std::get<ConvSpec>(op); }
    const DenseSpec& dense() const { return std::get<DenseSpec>(op); }

    int out_channels() const { return is_conv() ? conv().out_channels : dense().out_dim; }
    int in_channels() const { return is_conv() ? conv().in_channels : dense().in_dim; }

    std::size_t weight_count() const {
        if (is_conv()) {
            const auto& c = conv();
            return static_cast<std::size_t>(c.out_channels) * c.in_channels * c.kernel_h * c.kernel_w;
        }
        return static_cast<std::size_t>(dense().in_dim) * dense().out_dim;
    }
    std::size_t bias_count() const { return static_cast<std::size_t>(out_channels()); }
    std::size_t param_count() const { return weight_count() + bias_count(); }
};

struct Architecture {
    int input_channels = 1;
    int input_h = 28;
    int input_w = 28;
    std::vector<LayerSpec> layers;

    int num_layers() const { return static_cast<int>(layers.size()); }

    int total_out_channels() const {
        int n = 0;
        for (const auto& l : layers) n += l.out_channels();
        return n;
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.param_count();
        return n;
    }

    int num_classes() const {
        if (layers.empty()) return 0;
        return layers.back().out_channels();
    }

    // Walks the shape chain and throws ConfigError on any break.
    void validate() const {
        if (layers.empty()) throw ConfigError("architecture has no layers");
        if (input_channels < 1 || input_h < 1 || input_w < 1)
            throw ConfigError("input dimensions must be positive");
        int c = input_channels, h = input_h, w = input_w;
        bool flattened = false;
        int dense_dim = 0;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto& l = layers[i];
            const std::string at = "layer " + std::to_string(i + 1) + ": ";
            if (l.dropout_after < 0.0 || l.dropout_after >= 1.0)
                throw ConfigError(at + "dropout probability must be in [0,1)");
            if (l.is_conv()) {
                const auto& cs = l.conv();
                if (flattened) throw ConfigError(at + "conv layer after a dense layer");
                if (cs.in_channels < 1 || cs.out_channels < 1 || cs.kernel_h < 1 || cs.kernel_w < 1)
                    throw ConfigError(at + "conv dimensions must be >= 1");
                if (cs.in_channels != c)
                    throw ConfigError(at + "conv expects " + std::to_string(cs.in_channels) +
                                      " input channels, got " + std::to_string(c));
                if (cs.kernel_h > h || cs.kernel_w > w)
                    throw ConfigError(at + "kernel larger than its input");
                c = cs.out_channels;
                h = h - cs.kernel_h + 1;
                w = w - cs.kernel_w + 1;
                if (l.pool_after) {
                    if (h < 2 || w < 2) throw ConfigError(at + "pooling needs at least 2x2 input");
                    h /= 2;
                    w /= 2;
                }
            } else {
                const auto& ds = l.dense();
                if (ds.in_dim < 1 || ds.out_dim < 1)
                    throw ConfigError(at + "dense dimensions must be >= 1");
                if (l.pool_after) throw ConfigError(at + "pooling after a dense layer");
                const int expect = flattened ? dense_dim : c * h * w;
                if (ds.in_dim != expect)
                    throw ConfigError(at + "dense expects in_dim " + std::to_string(expect) + ", got " +
                                      std::to_string(ds.in_dim));
                flattened = true;
                dense_dim = ds.out_dim;
            }
        }
        if (layers.back().is_conv())
            throw ConfigError("last layer must be dense (class scores)");
    }
};

struct LayerParams {
    Tensor weights;             // conv: [out][in][kh][kw]; dense: [in][out]
    std::vector<double> bias;   // one entry per output channel / unit

    std::size_t param_count() const { return weights.size() + bias.size(); }

    // Flat entry addressing used by distances and segment slicing:
    // entries [0, W) are weights in storage order, [W, W+B) the bias.
    double entry(std::size_t e) const {
        return e < weights.size() ? weights[e] : bias[e - weights.size()];
    }
    double& entry(std::size_t e) {
        return e < weights.size() ? weights[e] : bias[e - weights.size()];
    }
};

struct ModelParams {
    std::vector<LayerParams> layers;

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.param_count();
        return n;
    }

    bool same_shape(const ModelParams& other) const {
        if (layers.size() != other.layers.size()) return false;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            if (!(layers[i].weights.dims() == other.layers[i].weights.dims()) ||
                layers[i].bias.size() != other.layers[i].bias.size())
                return false;
        }
        return true;
    }

    bool all_finite() const {
        for (const auto& l : layers) {
            for (std::size_t i = 0; i < l.weights.size(); ++i)
                if (!std::isfinite(l.weights[i])) return false;
            for (double b : l.bias)
                if (!std::isfinite(b)) return false;
        }
        return true;
    }

    bool operator==(const ModelParams& other) const {
        if (layers.size() != other.layers.size()) return false;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            if (!(layers[i].weights == other.layers[i].weights) || layers[i].bias != other.layers[i].bias)
                return false;
        }
        return true;
    }
};

// Desk-scale default: small enough for minutes-scale runs, same channel
// structure as the full net so segmentation behaves the same way.
inline Architecture desk_architecture() {
    Architecture a;
    a.input_channels = 1;
    a.input_h = 28;
    a.input_w = 28;
    a.layers.push_back({ConvSpec{1, 8, 3, 3}, true, false, 0.0});
    a.layers.push_back({ConvSpec{8, 16, 3, 3}, true, true, 0.0});
    a.layers.push_back({DenseSpec{12 * 12 * 16, 64}, true, false, 0.0});
    a.layers.push_back({DenseSpec{64, 10}, false, false, 0.0});
    return a;
}

// The 32/64/128 net (two convs, max-pool, two dense layers, dropout sites
// 0.25/0.5). Dropout only engages when the caller trains with it enabled.
inline Architecture paper_architecture() {
    Architecture a;
    a.input_channels = 1;
    a.input_h = 28;
    a.input_w = 28;
    a.layers.push_back({ConvSpec{1, 32, 3, 3}, true, false, 0.0});
    a.layers.push_back({ConvSpec{32, 64, 3, 3}, true, true, 0.25});
    a.layers.push_back({DenseSpec{12 * 12 * 64, 128}, true, false, 0.5});
    a.layers.push_back({DenseSpec{128, 10}, false, false, 0.0});
    return a;
}

enum class InitMode { SharedUniform, PerClientRandom };

// Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights
// and biases. Shared-uniform keys the stream by seed alone so every caller
// gets the same draw; per-client-random also keys by client id.
inline ModelParams init_params(const Architecture& arch, std::uint64_t seed, InitMode mode, int client = 0) {
    arch.validate();
    Rng rng(mode == InitMode::SharedUniform ? derive_seed(seed, 0x1A17)
                                            : derive_seed(seed, static_cast<std::uint64_t>(client), 0x1A18));
    ModelParams params;
    params.layers.reserve(arch.layers.size());
    for (const auto& spec : arch.layers) {
        LayerParams lp;
        int fan_in;
        if (spec.is_conv()) {
            const auto& c = spec.conv();
            lp.weights = Tensor({c.out_channels, c.in_channels, c.kernel_h, c.kernel_w});
            fan_in = c.in_channels * c.kernel_h * c.kernel_w;
        } else {
            const auto& d = spec.dense();
            lp.weights = Tensor({d.in_dim, d.out_dim});
            fan_in = d.in_dim;
        }
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (std::size_t i = 0; i < lp.weights.size(); ++i) lp.weights[i] = rng.uniform(-bound, bound);
        lp.bias.resize(spec.bias_count());
        for (auto& b : lp.bias) b = rng.uniform(-bound, bound);
        params.layers.push_back(std::move(lp));
    }
    return params;
}

namespace detail {

inline void check_model_shape(const Architecture& arch, const ModelParams& params) {
    if (static_cast<int>(params.layers.size()) != arch.num_layers())
        throw ShapeError("model has wrong layer count");
    for (int i = 0; i < arch.num_layers(); ++i) {
        const auto& spec = arch.layers[i];
        const auto& lp = params.layers[i];
        if (lp.weights.size() != spec.weight_count() || lp.bias.size() != spec.bias_count())
            throw ShapeError("layer " + std::to_string(i + 1) + " parameter shape mismatch");
    }
}

}  // namespace detail

// Activations and bookkeeping retained for the backward pass.
struct ForwardCache {
    struct LayerCache {
        Tensor input;            // what the parameterized op consumed
        Tensor pre_activation;   // conv/dense output + bias
        Tensor output;           // after relu/pool/dropout
        std::vector<int> pool_argmax;  // flat winner index per pooled cell
        std::vector<double> dropout_mask;
        int in_h = 0, in_w = 0, out_h = 0, out_w = 0;  // spatial dims (conv only)
    };
    std::vector<LayerCache> layers;
    Tensor logprobs;  // [n][classes]
};

namespace detail {

inline void log_softmax_rows(Tensor& t) {
    const int n = t.dims()[0];
    const int m = t.dims()[1];
    for (int i = 0; i < n; ++i) {
        double mx = t(i, 0);
        for (int j = 1; j < m; ++j) mx = std::max(mx, t(i, j));
        double sum = 0.0;
        for (int j = 0; j < m; ++j) sum += std::exp(t(i, j) - mx);
        const double lse = mx + std::log(sum);
        for (int j = 0; j < m; ++j) t(i, j) -= lse;
    }
}

// training=true applies seeded inverted dropout; eval leaves units untouched.
inline ForwardCache run_forward(const Architecture& arch, const ModelParams& params, const Tensor& inputs,
                                bool training, std::uint64_t dropout_seed) {
    check_model_shape(arch, params);
    if (inputs.dims().size() != 4) throw ShapeError("inputs must be [n][c][h][w]");
    const int n = inputs.dims()[0];
    if (n < 1) throw ShapeError("batch must be nonempty");
    if (inputs.dims()[1] != arch.input_channels || inputs.dims()[2] != arch.input_h ||
        inputs.dims()[3] != arch.input_w)
        throw ShapeError("input dims do not match architecture");

    ForwardCache cache;
    cache.layers.resize(arch.layers.size());

    Tensor cur = inputs;
    int h = arch.input_h, w = arch.input_w;
    bool flattened = false;

    for (std::size_t li = 0; li < arch.layers.size(); ++li) {
        const auto& spec = arch.layers[li];
        const auto& lp = params.layers[li];
        auto& lc = cache.layers[li];

        if (spec.is_conv()) {
            const auto& cs = spec.conv();
            const int oh = h - cs.kernel_h + 1;
            const int ow = w - cs.kernel_w + 1;
            lc.in_h = h;
            lc.in_w = w;
            lc.input = cur;
            Tensor z({n, cs.out_channels, oh, ow});
            const double* wp = lp.weights.data();
            const double* xp = cur.data();
            double* zp = z.data();
            const std::size_t in_chw = static_cast<std::size_t>(cs.in_channels) * h * w;
            const std::size_t out_chw = static_cast<std::size_t>(cs.out_channels) * oh * ow;
            for (int b = 0; b < n; ++b) {
                const double* xb = xp + b * in_chw;
                double* zb = zp + b * out_chw;
                for (int oc = 0; oc < cs.out_channels; ++oc) {
                    const double* wo = wp + static_cast<std::size_t>(oc) * cs.in_channels * cs.kernel_h * cs.kernel_w;
                    double* zo = zb + static_cast<std::size_t>(oc) * oh * ow;
                    const double bias = lp.bias[oc];
                    for (int y = 0; y < oh; ++y)
                        for (int x = 0; x < ow; ++x) zo[y * ow + x] = bias;
                    for (int ic = 0; ic < cs.in_channels; ++ic) {
                        const double* xc = xb + static_cast<std::size_t>(ic) * h * w;
                        const double* wk = wo + static_cast<std::size_t>(ic) * cs.kernel_h * cs.kernel_w;
                        for (int ky = 0; ky < cs.kernel_h; ++ky) {
                            for (int kx = 0; kx < cs.kernel_w; ++kx) {
                                const double wv = wk[ky * cs.kernel_w + kx];
                                for (int y = 0; y < oh; ++y) {
                                    const double* xr = xc + (y + ky) * w + kx;
                                    double* zr = zo + y * ow;
                                    for (int x = 0; x < ow; ++x) zr[x] += wv * xr[x];
                                }
                            }
                        }
                    }
                }
            }
            lc.pre_activation = z;
            h = oh;
            w = ow;

            Tensor act = z;
            if (spec.relu) {
                for (std::size_t i = 0; i < act.size(); ++i)
                    if (act[i] < 0.0) act[i] = 0.0;
            }
            if (spec.pool_after) {
                const int ph = h / 2, pw = w / 2;
                Tensor pooled({n, cs.out_channels, ph, pw});
                lc.pool_argmax.resize(pooled.size());
                for (int b = 0; b < n; ++b) {
                    for (int oc = 0; oc < cs.out_channels; ++oc) {
                        for (int y = 0; y < ph; ++y) {
                            for (int x = 0; x < pw; ++x) {
                                double best = act(b, oc, 2 * y, 2 * x);
                                int best_idx = 0;
                                // scan order fixes tie-breaking at the lowest index
                                const int offs[4][2] = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
                                for (int k = 1; k < 4; ++k) {
                                    const double v = act(b, oc, 2 * y + offs[k][0], 2 * x + offs[k][1]);
                                    if (v > best) {
                                        best = v;
                                        best_idx = k;
                                    }
                                }
                                pooled(b, oc, y, x) = best;
                                lc.pool_argmax[((static_cast<std::size_t>(b) * cs.out_channels + oc) * ph + y) * pw + x] =
                                    best_idx;
                            }
                        }
                    }
                }
                act = pooled;
                h = ph;
                w = pw;
            }
            lc.out_h = h;
            lc.out_w = w;
            if (spec.dropout_after > 0.0 && training) {
                Rng drng(derive_seed(dropout_seed, li, 0xD0));
                lc.dropout_mask.resize(act.size());
                const double keep = 1.0 - spec.dropout_after;
                for (std::size_t i = 0; i < act.size(); ++i) {
                    lc.dropout_mask[i] = drng.bernoulli(spec.dropout_after) ? 0.0 : 1.0 / keep;
                    act[i] *= lc.dropout_mask[i];
                }
            }
            lc.output = act;
            cur = lc.output;
        } else {
            const auto& ds = spec.dense();
            if (!flattened) {
                // reinterpret [n][c][h][w] as [n][c*h*w]; storage is already row-major
                Tensor flat({n, static_cast<int>(cur.size()) / n});
                for (std::size_t i = 0; i < cur.size(); ++i) flat[i] = cur[i];
                cur = flat;
                flattened = true;
            }
            lc.input = cur;
            Tensor z({n, ds.out_dim});
            const double* xp = cur.data();
            const double* wp = lp.weights.data();
            double* zp = z.data();
            for (int b = 0; b < n; ++b) {
                const double* xb = xp + static_cast<std::size_t>(b) * ds.in_dim;
                double* zb = zp + static_cast<std::size_t>(b) * ds.out_dim;
                for (int o = 0; o < ds.out_dim; ++o) zb[o] = lp.bias[o];
                for (int i = 0; i < ds.in_dim; ++i) {
                    const double xv = xb[i];
                    if (xv == 0.0) continue;
                    const double* wr = wp + static_cast<std::size_t>(i) * ds.out_dim;
                    for (int o = 0; o < ds.out_dim; ++o) zb[o] += xv * wr[o];
                }
            }
            lc.pre_activation = z;
            Tensor act = z;
            if (spec.relu) {
                for (std::size_t i = 0; i < act.size(); ++i)
                    if (act[i] < 0.0) act[i] = 0.0;
            }
            if (spec.dropout_after > 0.0 && training) {
                Rng drng(derive_seed(dropout_seed, li, 0xD0));
                lc.dropout_mask.resize(act.size());
                const double keep = 1.0 - spec.dropout_after;
                for (std::size_t i = 0; i < act.size(); ++i) {
                    lc.dropout_mask[i] = drng.bernoulli(spec.dropout_after) ? 0.0 : 1.0 / keep;
                    act[i] *= lc.dropout_mask[i];
                }
            }
            lc.output = act;
            cur = lc.output;
        }
    }

    cache.logprobs = cur;
    log_softmax_rows(cache.logprobs);
    return cache;
}

}  // namespace detail

// Per-class log-probabilities, dropout off (evaluation mode).
inline Tensor forward(const Architecture& arch, const ModelParams& params, const Tensor& inputs) {
    return detail::run_forward(arch, params, inputs, false, 0).logprobs;
}

inline double nll_loss(const Tensor& logprobs, const std::vector<int>& labels) {
    if (logprobs.dims().size() != 2 || logprobs.dims()[0] != static_cast<int>(labels.size()))
        throw ShapeError("logprobs rows must match label count");
    const int classes = logprobs.dims()[1];
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= classes)
            throw DataError("label " + std::to_string(labels[i]) + " out of range [0," + std::to_string(classes) + ")");
        total -= logprobs(static_cast<int>(i), labels[i]);
    }
    return total / static_cast<double>(labels.size());
}

// Mean-loss gradient over the batch, same shapes as the parameters.
// Deterministic for fixed (params, batch, dropout_seed); dropout masks in the
// backward pass are the ones sampled in the forward pass.
inline std::pair<double, ModelParams> loss_and_gradient(const Architecture& arch, const ModelParams& params,
                                                        const Tensor& inputs, const std::vector<int>& labels,
                                                        bool training_dropout = false,
                                                        std::uint64_t dropout_seed = 0) {
    ForwardCache cache = detail::run_forward(arch, params, inputs, training_dropout, dropout_seed);
    const double loss = nll_loss(cache.logprobs, labels);
    const int n = cache.logprobs.dims()[0];
    const int classes = cache.logprobs.dims()[1];

    ModelParams grads;
    grads.layers.resize(params.layers.size());
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        grads.layers[i].weights = Tensor(params.layers[i].weights.dims());
        grads.layers[i].bias.assign(params.layers[i].bias.size(), 0.0);
    }

    // d(mean nll)/d(logit) = (softmax - onehot) / n
    Tensor delta({n, classes});
    for (int b = 0; b < n; ++b)
        for (int j = 0; j < classes; ++j)
            delta(b, j) = (std::exp(cache.logprobs(b, j)) - (labels[b] == j ? 1.0 : 0.0)) / n;

    for (int li = arch.num_layers() - 1; li >= 0; --li) {
        const auto& spec = arch.layers[li];
        const auto& lp = params.layers[li];
        auto& lc = cache.layers[li];
        auto& g = grads.layers[li];

        if (!lc.dropout_mask.empty()) {
            for (std::size_t i = 0; i < delta.size(); ++i) delta[i] *= lc.dropout_mask[i];
        }

        if (spec.is_conv()) {
            const auto& cs = spec.conv();
            const int ph = lc.out_h, pw = lc.out_w;
            int oh = ph, ow = pw;
            Tensor dz = delta;
            if (spec.pool_after) {
                oh = ph * 2;
                ow = pw * 2;
                Tensor up({n, cs.out_channels, oh, ow});
                for (int b = 0; b < n; ++b)
                    for (int oc = 0; oc < cs.out_channels; ++oc)
                        for (int y = 0; y < ph; ++y)
                            for (int x = 0; x < pw; ++x) {
                                const int k = lc.pool_argmax[((static_cast<std::size_t>(b) * cs.out_channels + oc) * ph + y) * pw + x];
                                up(b, oc, 2 * y + k / 2, 2 * x + k % 2) = delta(b, oc, y, x);
                            }
                dz = up;
            }
            // actual conv output size (pre-pool)
            oh = lc.in_h - cs.kernel_h + 1;
            ow = lc.in_w - cs.kernel_w + 1;
            if (spec.relu) {
                for (std::size_t i = 0; i < dz.size(); ++i)
                    if (lc.pre_activation[i] <= 0.0) dz[i] = 0.0;
            }
            const int h = lc.in_h, w = lc.in_w;
            Tensor dx({n, cs.in_channels, h, w});
            const double* xp = lc.input.data();
            const double* wp = lp.weights.data();
            for (int b = 0; b < n; ++b) {
                for (int oc = 0; oc < cs.out_channels; ++oc) {
                    for (int y = 0; y < oh; ++y) {
                        for (int x = 0; x < ow; ++x) {
                            const double d = dz(b, oc, y, x);
                            if (d == 0.0) continue;
                            g.bias[oc] += d;
                            for (int ic = 0; ic < cs.in_channels; ++ic) {
                                const double* xc = xp + (static_cast<std::size_t>(b) * cs.in_channels + ic) * h * w;
                                double* gw = g.weights.data() +
                                             (static_cast<std::size_t>(oc) * cs.in_channels + ic) * cs.kernel_h * cs.kernel_w;
                                const double* wk = wp +
                                                   (static_cast<std::size_t>(oc) * cs.in_channels + ic) * cs.kernel_h * cs.kernel_w;
                                double* dxc = dx.data() + (static_cast<std::size_t>(b) * cs.in_channels + ic) * h * w;
                                for (int ky = 0; ky < cs.kernel_h; ++ky) {
                                    for (int kx = 0; kx < cs.kernel_w; ++kx) {
                                        gw[ky * cs.kernel_w + kx] += d * xc[(y + ky) * w + (x + kx)];
                                        dxc[(y + ky) * w + (x + kx)] += d * wk[ky * cs.kernel_w + kx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            delta = dx;
        } else {
            const auto& ds = spec.dense();
            Tensor dz = delta;
            if (spec.relu) {
                for (std::size_t i = 0; i < dz.size(); ++i)
                    if (lc.pre_activation[i] <= 0.0) dz[i] = 0.0;
            }
            Tensor dx({n, ds.in_dim});
            const double* xp = lc.input.data();
            const double* wp = lp.weights.data();
            for (int b = 0; b < n; ++b) {
                const double* xb = xp + static_cast<std::size_t>(b) * ds.in_dim;
                const double* dzb = dz.data() + static_cast<std::size_t>(b) * ds.out_dim;
                double* dxb = dx.data() + static_cast<std::size_t>(b) * ds.in_dim;
                for (int o = 0; o < ds.out_dim; ++o) g.bias[o] += dzb[o];
                for (int i = 0; i < ds.in_dim; ++i) {
                    double* gw = g.weights.data() + static_cast<std::size_t>(i) * ds.out_dim;
                    const double* wr = wp + static_cast<std::size_t>(i) * ds.out_dim;
                    double acc = 0.0;
                    const double xv = xb[i];
                    for (int o = 0; o < ds.out_dim; ++o) {
                        gw[o] += xv * dzb[o];
                        acc += wr[o] * dzb[o];
                    }
                    dxb[i] = acc;
                }
            }
            if (li > 0 && arch.layers[li - 1].is_conv()) {
                // un-flatten for the conv backward upstream
                const auto& prev = arch.layers[li - 1];
                const auto& plc = cache.layers[li - 1];
                Tensor shaped({n, prev.out_channels(), plc.out_h, plc.out_w});
                for (std::size_t i = 0; i < dx.size(); ++i) shaped[i] = dx[i];
                delta = shaped;
            } else {
                delta = dx;
            }
        }
    }
    return {loss, std::move(grads)};
}

inline ModelParams gradient(const Architecture& arch, const ModelParams& params, const Tensor& inputs,
                            const std::vector<int>& labels, bool training_dropout = false,
                            std::uint64_t dropout_seed = 0) {
    return loss_and_gradient(arch, params, inputs, labels, training_dropout, dropout_seed).second;
}

// Sum over layers of the l2 norm of the parameter difference (weights and
// bias together form the layer vector).
inline double model_distance(const ModelParams& a, const ModelParams& b) {
    if (!a.same_shape(b)) throw ShapeError("model_distance: architecture mismatch");
    double total = 0.0;
    for (std::size_t li = 0; li < a.layers.size(); ++li) {
        const auto& la = a.layers[li];
        const auto& lb = b.layers[li];
        double sq = 0.0;
        const std::size_t n = la.param_count();
        for (std::size_t e = 0; e < n; ++e) {
            const double d = la.entry(e) - lb.entry(e);
            sq += d * d;
        }
        total += std::sqrt(sq);
    }
    return total;
}

}  // namespace dfl
