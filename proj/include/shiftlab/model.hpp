// VGG-style model specs, build-time shape validation, Kaiming init and the
// forward pass (with optional penultimate-activation capture).
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "shiftlab/ops.hpp"
#include "shiftlab/rng.hpp"

namespace shiftlab {

enum class LayerKind { conv, maxpool, relu, flatten, linear };

struct LayerDesc {
    LayerKind kind;
    std::int64_t out_channels = 0, kernel = 0, stride = 1, padding = 0;  // conv
    std::int64_t pool_k = 0, pool_stride = 0;                            // maxpool
    std::int64_t out_features = 0;                                       // linear

    static LayerDesc make_conv(std::int64_t out_ch, std::int64_t k, std::int64_t s = 1, std::int64_t p = 1) {
        LayerDesc d{LayerKind::conv};
        d.out_channels = out_ch;
        d.kernel = k;
        d.stride = s;
        d.padding = p;
        return d;
    }
    static LayerDesc make_pool(std::int64_t k, std::int64_t s) {
        LayerDesc d{LayerKind::maxpool};
        d.pool_k = k;
        d.pool_stride = s;
        return d;
    }
    static LayerDesc make_relu() { return LayerDesc{LayerKind::relu}; }
    static LayerDesc make_flatten() { return LayerDesc{LayerKind::flatten}; }
    static LayerDesc make_linear(std::int64_t out) {
        LayerDesc d{LayerKind::linear};
        d.out_features = out;
        return d;
    }
};

struct InputGeom {
    std::int64_t channels = 1, height = 64, width = 64;
};

// Shape state threaded through validation: spatial until flatten, flat after.
struct LayerShape {
    bool flat = false;
    std::int64_t channels = 0, height = 0, width = 0;  // spatial
    std::int64_t features = 0;                         // flat
};

struct ModelSpec {
    std::string name = "custom";
    std::vector<LayerDesc> layers;
    InputGeom input;
    std::int64_t classes = 0;

    // Validates the whole chain and returns per-layer output shapes
    // (entry i = output of layer i). Throws config_error on any inconsistency.
    std::vector<LayerShape> shape_chain() const {
        if (classes < 2) throw config_error("model spec: class count must be >= 2, got " + std::to_string(classes));
        if (layers.empty()) throw config_error("model spec: no layers");
        if (input.channels < 1 || input.height < 1 || input.width < 1)
            throw config_error("model spec: invalid input geometry");
        std::vector<LayerShape> out;
        LayerShape cur;
        cur.channels = input.channels;
        cur.height = input.height;
        cur.width = input.width;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const LayerDesc& d = layers[i];
            const std::string where = "layer " + std::to_string(i);
            switch (d.kind) {
                case LayerKind::conv: {
                    if (cur.flat) throw config_error(where + ": conv after flatten");
                    if (d.out_channels < 1 || d.kernel < 1 || d.stride < 1 || d.padding < 0)
                        throw config_error(where + ": invalid conv parameters");
                    const std::int64_t ph = cur.height + 2 * d.padding, pw = cur.width + 2 * d.padding;
                    if (d.kernel > ph || d.kernel > pw)
                        throw config_error(where + ": conv kernel " + std::to_string(d.kernel) + " exceeds padded input " +
                                           std::to_string(ph) + "x" + std::to_string(pw));
                    cur.height = (ph - d.kernel) / d.stride + 1;
                    cur.width = (pw - d.kernel) / d.stride + 1;
                    cur.channels = d.out_channels;
                    break;
                }
                case LayerKind::maxpool: {
                    if (cur.flat) throw config_error(where + ": maxpool after flatten");
                    if (d.pool_k < 1 || d.pool_stride < 1)
                        throw config_error(where + ": pool window and stride must be >= 1");
                    if (d.pool_k > cur.height || d.pool_k > cur.width)
                        throw config_error(where + ": pool window " + std::to_string(d.pool_k) + " exceeds input " +
                                           std::to_string(cur.height) + "x" + std::to_string(cur.width));
                    cur.height = (cur.height - d.pool_k) / d.pool_stride + 1;
                    cur.width = (cur.width - d.pool_k) / d.pool_stride + 1;
                    break;
                }
                case LayerKind::relu:
                    break;
                case LayerKind::flatten:
                    if (cur.flat) throw config_error(where + ": flatten applied twice");
                    cur.features = cur.channels * cur.height * cur.width;
                    cur.flat = true;
                    break;
                case LayerKind::linear:
                    if (!cur.flat) throw config_error(where + ": linear requires flattened input");
                    if (d.out_features < 1) throw config_error(where + ": linear out_features must be >= 1");
                    cur.features = d.out_features;
                    break;
            }
            out.push_back(cur);
        }
        const LayerDesc& last = layers.back();
        if (last.kind != LayerKind::linear || last.out_features != classes)
            throw config_error("model spec: final layer must be linear with out_features == " + std::to_string(classes));
        penultimate_index();  // throws if the probe point is missing
        return out;
    }

    void validate() const { (void)shape_chain(); }

    // Index of the relu following the last hidden linear layer; its output is
    // the penultimate activation probed by the cosine analysis.
    std::size_t penultimate_index() const {
        std::ptrdiff_t hidden_linear = -1;
        for (std::size_t i = 0; i + 1 < layers.size(); ++i)
            if (layers[i].kind == LayerKind::linear) hidden_linear = static_cast<std::ptrdiff_t>(i);
        if (hidden_linear < 0 || static_cast<std::size_t>(hidden_linear) + 1 >= layers.size() ||
            layers[static_cast<std::size_t>(hidden_linear) + 1].kind != LayerKind::relu)
            throw config_error("model spec: no hidden linear followed by relu to serve as the penultimate probe");
        return static_cast<std::size_t>(hidden_linear) + 1;
    }

    std::int64_t penultimate_width() const {
        const auto chain = shape_chain();
        return chain[penultimate_index()].features;
    }
};

// One parameterized layer's tensors. `layer` indexes into spec.layers.
template <typename T>
struct ParamSet {
    std::size_t layer = 0;
    Tensor<T> weight;
    Tensor<T> bias;
    std::string name;  // "conv0", "linear12", ...
};

template <typename T>
struct Model {
    ModelSpec spec;
    std::vector<ParamSet<T>> params;
    std::uint64_t init_seed = 0;

    std::int64_t classes() const { return spec.classes; }
};

// Allocates parameter tensors (zero-filled) matching the spec.
template <typename T>
Model<T> build_model(const ModelSpec& spec) {
    const auto chain = spec.shape_chain();
    Model<T> m;
    m.spec = spec;
    LayerShape in;
    in.channels = spec.input.channels;
    in.height = spec.input.height;
    in.width = spec.input.width;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerDesc& d = spec.layers[i];
        if (d.kind == LayerKind::conv) {
            ParamSet<T> p;
            p.layer = i;
            p.weight = Tensor<T>::zeros({d.out_channels, in.channels, d.kernel, d.kernel});
            p.bias = Tensor<T>::zeros({d.out_channels});
            p.name = "conv" + std::to_string(i);
            m.params.push_back(std::move(p));
        } else if (d.kind == LayerKind::linear) {
            ParamSet<T> p;
            p.layer = i;
            p.weight = Tensor<T>::zeros({d.out_features, in.features});
            p.bias = Tensor<T>::zeros({d.out_features});
            p.name = "linear" + std::to_string(i);
            m.params.push_back(std::move(p));
        }
        in = chain[i];
    }
    return m;
}

// Weights ~ N(0, 2/fan_in), biases zero. fan_in is Cin*k*k for conv and the
// input width for linear.
template <typename T>
void kaiming_init(Model<T>& model, std::uint64_t seed) {
    model.init_seed = seed;
    Rng rng(Rng::derive(seed, "kaiming"));
    for (auto& p : model.params) {
        const Shape& ws = p.weight.shape();
        std::int64_t fan_in = 1;
        for (std::size_t d = 1; d < ws.size(); ++d) fan_in *= ws[d];
        const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (std::int64_t i = 0; i < p.weight.numel(); ++i)
            p.weight[i] = static_cast<T>(rng.normal(0.0, stddev));
        for (std::int64_t i = 0; i < p.bias.numel(); ++i) p.bias[i] = T(0);
    }
}

// Re-initializes only the final linear layer (used when the fine-tune class
// count differs from the checkpoint's).
template <typename T>
void reinit_head(Model<T>& model, std::int64_t new_classes) {
    if (model.params.empty()) throw config_error("reinit_head: model has no parameters");
    ParamSet<T>& head = model.params.back();
    const std::int64_t fan_in = head.weight.dim(1);
    model.spec.classes = new_classes;
    model.spec.layers.back().out_features = new_classes;
    model.spec.validate();
    // The replacement head starts at zero: its logits are initially uniform, so
    // early fine-tuning gradients align it with the inherited representation
    // instead of first unlearning a random projection of it.
    head.weight = Tensor<T>::zeros({new_classes, fan_in});
    head.bias = Tensor<T>::zeros({new_classes});
}

template <typename T>
struct ForwardResult {
    NodePtr<T> logits;
    Tensor<T> penultimate;                 // [N,P] copy; empty unless captured
    std::vector<NodePtr<T>> weight_nodes;  // aligned with model.params
    std::vector<NodePtr<T>> bias_nodes;
};

template <typename T>
ForwardResult<T> forward(const Model<T>& model, const Tensor<T>& batch, bool capture_penultimate = false) {
    const InputGeom& in = model.spec.input;
    if (batch.rank() != 4 || batch.dim(1) != in.channels || batch.dim(2) != in.height || batch.dim(3) != in.width)
        throw shape_error("forward: batch " + shape_str(batch.shape()) + " does not match model input [N," +
                          std::to_string(in.channels) + "," + std::to_string(in.height) + "," +
                          std::to_string(in.width) + "]");
    ForwardResult<T> r;
    const std::size_t penult = capture_penultimate ? model.spec.penultimate_index() : static_cast<std::size_t>(-1);
    NodePtr<T> cur = make_leaf(batch);
    std::size_t param_idx = 0;
    for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
        const LayerDesc& d = model.spec.layers[i];
        switch (d.kind) {
            case LayerKind::conv: {
                auto w = make_leaf(model.params[param_idx].weight);
                auto b = make_leaf(model.params[param_idx].bias);
                r.weight_nodes.push_back(w);
                r.bias_nodes.push_back(b);
                ++param_idx;
                cur = conv2d(cur, w, b, d.stride, d.padding);
                break;
            }
            case LayerKind::maxpool:
                cur = maxpool2d(cur, d.pool_k, d.pool_stride);
                break;
            case LayerKind::relu:
                cur = relu(cur);
                break;
            case LayerKind::flatten:
                cur = flatten(cur);
                break;
            case LayerKind::linear: {
                auto w = make_leaf(model.params[param_idx].weight);
                auto b = make_leaf(model.params[param_idx].bias);
                r.weight_nodes.push_back(w);
                r.bias_nodes.push_back(b);
                ++param_idx;
                cur = linear(cur, w, b);
                break;
            }
        }
        if (i == penult) r.penultimate = cur->value;  // copy, no graph side effects
    }
    r.logits = cur;
    return r;
}

// Argmax per row; ties resolve to the first index.
template <typename T>
std::vector<std::int64_t> argmax_rows(const Tensor<T>& logits) {
    const std::int64_t n = logits.dim(0), k = logits.dim(1);
    std::vector<std::int64_t> out(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const T* row = logits.data() + i * k;
        std::int64_t best = 0;
        for (std::int64_t j = 1; j < k; ++j)
            if (row[j] > row[best]) best = j;
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

inline ModelSpec preset(const std::string& name, std::int64_t classes, std::int64_t channels = 0) {
    ModelSpec s;
    s.name = name;
    s.classes = classes;
    if (name == "vgg-mini") {
        s.input = {channels > 0 ? channels : 1, 64, 64};
        s.layers = {
            LayerDesc::make_conv(16, 3), LayerDesc::make_relu(), LayerDesc::make_pool(2, 2),
            LayerDesc::make_conv(32, 3), LayerDesc::make_relu(), LayerDesc::make_pool(2, 2),
            LayerDesc::make_conv(64, 3), LayerDesc::make_relu(),
            LayerDesc::make_conv(64, 3), LayerDesc::make_relu(), LayerDesc::make_pool(2, 2),
            LayerDesc::make_flatten(),
            LayerDesc::make_linear(256), LayerDesc::make_relu(),
            LayerDesc::make_linear(classes),
        };
    } else if (name == "vgg16") {
        s.input = {channels > 0 ? channels : 3, 224, 224};
        auto block = [&](std::int64_t ch, int convs) {
            for (int i = 0; i < convs; ++i) {
                s.layers.push_back(LayerDesc::make_conv(ch, 3));
                s.layers.push_back(LayerDesc::make_relu());
            }
            s.layers.push_back(LayerDesc::make_pool(2, 2));
        };
        block(64, 2);
        block(128, 2);
        block(256, 3);
        block(512, 3);
        block(512, 3);
        s.layers.push_back(LayerDesc::make_flatten());
        s.layers.push_back(LayerDesc::make_linear(4096));
        s.layers.push_back(LayerDesc::make_relu());
        s.layers.push_back(LayerDesc::make_linear(4096));
        s.layers.push_back(LayerDesc::make_relu());
        s.layers.push_back(LayerDesc::make_linear(classes));
    } else {
        throw config_error("unknown model preset '" + name + "'; available: vgg-mini, vgg16, custom (inline layer list in the manifest)");
    }
    s.validate();
    return s;
}

}  // namespace shiftlab
