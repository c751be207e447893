// Differentiable layer operations. Convolution uses the im2col + GEMM
// realization; the direct-loop reference lives in the tests and defines
// correctness.
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "shiftlab/autograd.hpp"
#include "shiftlab/gemm.hpp"
#include "shiftlab/tensor.hpp"

namespace shiftlab {

struct Conv2dGeom {
    std::int64_t batch, in_ch, in_h, in_w;
    std::int64_t out_ch, kh, kw;
    std::int64_t stride, padding;
    std::int64_t out_h, out_w;
};

inline Conv2dGeom conv2d_geometry(const Shape& input, const Shape& weight, std::int64_t stride, std::int64_t padding) {
    if (input.size() != 4) throw shape_error("conv2d input must be [N,Cin,H,W], got " + shape_str(input));
    if (weight.size() != 4) throw shape_error("conv2d weight must be [Cout,Cin,kh,kw], got " + shape_str(weight));
    if (stride < 1) throw shape_error("conv2d stride must be >= 1");
    if (padding < 0) throw shape_error("conv2d padding must be >= 0");
    Conv2dGeom g;
    g.batch = input[0];
    g.in_ch = input[1];
    g.in_h = input[2];
    g.in_w = input[3];
    g.out_ch = weight[0];
    g.kh = weight[2];
    g.kw = weight[3];
    g.stride = stride;
    g.padding = padding;
    if (weight[1] != g.in_ch)
        throw shape_error("conv2d channel mismatch: input " + shape_str(input) + " has " + std::to_string(g.in_ch) +
                          " channels but weight " + shape_str(weight) + " expects " + std::to_string(weight[1]));
    if (g.kh > g.in_h + 2 * padding || g.kw > g.in_w + 2 * padding)
        throw shape_error("conv2d kernel " + std::to_string(g.kh) + "x" + std::to_string(g.kw) +
                          " exceeds padded input " + std::to_string(g.in_h + 2 * padding) + "x" +
                          std::to_string(g.in_w + 2 * padding));
    g.out_h = (g.in_h + 2 * padding - g.kh) / stride + 1;
    g.out_w = (g.in_w + 2 * padding - g.kw) / stride + 1;
    return g;
}

namespace detail {

// col is [Cin*kh*kw, out_h*out_w]; out-of-bounds taps are zero.
template <typename T>
void im2col(const T* x, const Conv2dGeom& g, T* col) {
    const std::int64_t ohw = g.out_h * g.out_w;
    for (std::int64_t c = 0; c < g.in_ch; ++c) {
        for (std::int64_t ki = 0; ki < g.kh; ++ki) {
            for (std::int64_t kj = 0; kj < g.kw; ++kj) {
                T* crow = col + ((c * g.kh + ki) * g.kw + kj) * ohw;
                for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
                    const std::int64_t iy = oy * g.stride - g.padding + ki;
                    const bool row_ok = iy >= 0 && iy < g.in_h;
                    const T* xrow = x + (c * g.in_h + iy) * g.in_w;
                    for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
                        const std::int64_t ix = ox * g.stride - g.padding + kj;
                        crow[oy * g.out_w + ox] = (row_ok && ix >= 0 && ix < g.in_w) ? xrow[ix] : T(0);
                    }
                }
            }
        }
    }
}

// Scatter-adds a column buffer back into image layout (conv input gradient).
template <typename T>
void col2im(const T* col, const Conv2dGeom& g, T* x) {
    const std::int64_t ohw = g.out_h * g.out_w;
    for (std::int64_t c = 0; c < g.in_ch; ++c) {
        for (std::int64_t ki = 0; ki < g.kh; ++ki) {
            for (std::int64_t kj = 0; kj < g.kw; ++kj) {
                const T* crow = col + ((c * g.kh + ki) * g.kw + kj) * ohw;
                for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
                    const std::int64_t iy = oy * g.stride - g.padding + ki;
                    if (iy < 0 || iy >= g.in_h) continue;
                    T* xrow = x + (c * g.in_h + iy) * g.in_w;
                    for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
                        const std::int64_t ix = ox * g.stride - g.padding + kj;
                        if (ix < 0 || ix >= g.in_w) continue;
                        xrow[ix] += crow[oy * g.out_w + ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

template <typename T>
NodePtr<T> conv2d(const NodePtr<T>& input, const NodePtr<T>& weight, const NodePtr<T>& bias,
                  std::int64_t stride = 1, std::int64_t padding = 0) {
    const Conv2dGeom g = conv2d_geometry(input->value.shape(), weight->value.shape(), stride, padding);
    if (bias->value.shape() != Shape{g.out_ch})
        throw shape_error("conv2d bias must be [" + std::to_string(g.out_ch) + "], got " + shape_str(bias->value.shape()));

    const std::int64_t ckk = g.in_ch * g.kh * g.kw;
    const std::int64_t ohw = g.out_h * g.out_w;
    Tensor<T> out({g.batch, g.out_ch, g.out_h, g.out_w});
    std::vector<T> col(static_cast<std::size_t>(ckk * ohw));
    for (std::int64_t n = 0; n < g.batch; ++n) {
        const T* xn = input->value.data() + n * g.in_ch * g.in_h * g.in_w;
        T* on = out.data() + n * g.out_ch * ohw;
        detail::im2col(xn, g, col.data());
        for (std::int64_t o = 0; o < g.out_ch; ++o) {
            const T b = bias->value[o];
            T* orow = on + o * ohw;
            for (std::int64_t i = 0; i < ohw; ++i) orow[i] = b;
        }
        gemm_nn(weight->value.data(), col.data(), on, g.out_ch, ohw, ckk);
    }

    auto node = std::make_shared<Node<T>>(std::move(out));
    node->op_name = "conv2d";
    node->parents = {input, weight, bias};
    node->backprop = [g, ckk, ohw](Node<T>& self) {
        Node<T>& in = *self.parents[0];
        Node<T>& w = *self.parents[1];
        Node<T>& b = *self.parents[2];
        in.ensure_grad();
        w.ensure_grad();
        b.ensure_grad();
        std::vector<T> col(static_cast<std::size_t>(ckk * ohw));
        std::vector<T> dcol(static_cast<std::size_t>(ckk * ohw));
        for (std::int64_t n = 0; n < g.batch; ++n) {
            const T* xn = in.value.data() + n * g.in_ch * g.in_h * g.in_w;
            const T* gn = self.grad.data() + n * g.out_ch * ohw;
            detail::im2col(xn, g, col.data());
            // dW += dOut . col^T
            gemm_nt(gn, col.data(), w.grad.data(), g.out_ch, ckk, ohw);
            // db += row sums of dOut
            for (std::int64_t o = 0; o < g.out_ch; ++o) {
                T acc = 0;
                const T* grow = gn + o * ohw;
                for (std::int64_t i = 0; i < ohw; ++i) acc += grow[i];
                b.grad[o] += acc;
            }
            // dcol = W^T . dOut, scattered back to the input image
            std::fill(dcol.begin(), dcol.end(), T(0));
            gemm_tn(w.value.data(), gn, dcol.data(), ckk, ohw, g.out_ch);
            detail::col2im(dcol.data(), g, in.grad.data() + n * g.in_ch * g.in_h * g.in_w);
        }
    };
    return node;
}

template <typename T>
NodePtr<T> maxpool2d(const NodePtr<T>& input, std::int64_t k, std::int64_t stride) {
    if (k < 1 || stride < 1) throw shape_error("maxpool2d window and stride must be >= 1");
    const Shape& s = input->value.shape();
    if (s.size() != 4) throw shape_error("maxpool2d input must be [N,C,H,W], got " + shape_str(s));
    const std::int64_t n = s[0], c = s[1], h = s[2], w = s[3];
    if (k > h || k > w) throw shape_error("maxpool2d window " + std::to_string(k) + " exceeds input " + shape_str(s));
    const std::int64_t oh = (h - k) / stride + 1;
    const std::int64_t ow = (w - k) / stride + 1;

    Tensor<T> out({n, c, oh, ow});
    // argmax per output cell; ties take the first index in row-major window scan
    auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(n * c * oh * ow));
    std::int64_t oi = 0;
    for (std::int64_t in = 0; in < n; ++in)
        for (std::int64_t ic = 0; ic < c; ++ic) {
            const T* plane = input->value.data() + (in * c + ic) * h * w;
            for (std::int64_t oy = 0; oy < oh; ++oy)
                for (std::int64_t ox = 0; ox < ow; ++ox, ++oi) {
                    const std::int64_t y0 = oy * stride, x0 = ox * stride;
                    T best = plane[y0 * w + x0];
                    std::int64_t best_idx = y0 * w + x0;
                    for (std::int64_t ky = 0; ky < k; ++ky)
                        for (std::int64_t kx = 0; kx < k; ++kx) {
                            const std::int64_t idx = (y0 + ky) * w + (x0 + kx);
                            if (plane[idx] > best) {
                                best = plane[idx];
                                best_idx = idx;
                            }
                        }
                    out[oi] = best;
                    (*argmax)[static_cast<std::size_t>(oi)] = (in * c + ic) * h * w + best_idx;
                }
        }

    auto node = std::make_shared<Node<T>>(std::move(out));
    node->op_name = "maxpool2d";
    node->parents = {input};
    node->backprop = [argmax](Node<T>& self) {
        Node<T>& in = *self.parents[0];
        in.ensure_grad();
        const std::int64_t total = self.grad.numel();
        for (std::int64_t i = 0; i < total; ++i) in.grad[(*argmax)[static_cast<std::size_t>(i)]] += self.grad[i];
    };
    return node;
}

template <typename T>
NodePtr<T> linear(const NodePtr<T>& input, const NodePtr<T>& weight, const NodePtr<T>& bias) {
    const Shape& xs = input->value.shape();
    const Shape& ws = weight->value.shape();
    if (xs.size() != 2) throw shape_error("linear input must be [N,D], got " + shape_str(xs));
    if (ws.size() != 2) throw shape_error("linear weight must be [Dout,D], got " + shape_str(ws));
    if (xs[1] != ws[1])
        throw shape_error("linear dimension mismatch: input " + shape_str(xs) + " vs weight " + shape_str(ws));
    const std::int64_t n = xs[0], d = xs[1], dout = ws[0];
    if (bias->value.shape() != Shape{dout})
        throw shape_error("linear bias must be [" + std::to_string(dout) + "], got " + shape_str(bias->value.shape()));

    Tensor<T> out({n, dout});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t o = 0; o < dout; ++o) out.at2(i, o) = bias->value[o];
    gemm_nt(input->value.data(), weight->value.data(), out.data(), n, dout, d);

    auto node = std::make_shared<Node<T>>(std::move(out));
    node->op_name = "linear";
    node->parents = {input, weight, bias};
    node->backprop = [n, d, dout](Node<T>& self) {
        Node<T>& in = *self.parents[0];
        Node<T>& w = *self.parents[1];
        Node<T>& b = *self.parents[2];
        in.ensure_grad();
        w.ensure_grad();
        b.ensure_grad();
        // dX += dOut . W
        gemm_nn(self.grad.data(), w.value.data(), in.grad.data(), n, d, dout);
        // dW += dOut^T . X
        gemm_tn(self.grad.data(), in.value.data(), w.grad.data(), dout, d, n);
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t o = 0; o < dout; ++o) b.grad[o] += self.grad.at2(i, o);
    };
    return node;
}

template <typename T>
NodePtr<T> relu(const NodePtr<T>& input) {
    Tensor<T> out(input->value.shape());
    const std::int64_t total = out.numel();
    for (std::int64_t i = 0; i < total; ++i) out[i] = input->value[i] > T(0) ? input->value[i] : T(0);
    auto node = std::make_shared<Node<T>>(std::move(out));
    node->op_name = "relu";
    node->parents = {input};
    node->backprop = [](Node<T>& self) {
        Node<T>& in = *self.parents[0];
        in.ensure_grad();
        const std::int64_t total = self.grad.numel();
        for (std::int64_t i = 0; i < total; ++i)
            if (in.value[i] > T(0)) in.grad[i] += self.grad[i];  // subgradient 0 at 0
    };
    return node;
}

template <typename T>
NodePtr<T> flatten(const NodePtr<T>& input) {
    const Shape& s = input->value.shape();
    if (s.empty()) throw shape_error("flatten requires at least one dimension");
    std::int64_t d = 1;
    for (std::size_t i = 1; i < s.size(); ++i) d *= s[i];
    auto node = std::make_shared<Node<T>>(input->value.reshaped({s[0], d}));
    node->op_name = "flatten";
    node->parents = {input};
    node->backprop = [](Node<T>& self) {
        Node<T>& in = *self.parents[0];
        in.ensure_grad();
        const std::int64_t total = self.grad.numel();
        for (std::int64_t i = 0; i < total; ++i) in.grad[i] += self.grad[i];
    };
    return node;
}

// Row-wise stabilized softmax of a [N,K] tensor (plain tensor utility).
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
    if (logits.rank() != 2) throw shape_error("softmax expects [N,K], got " + shape_str(logits.shape()));
    const std::int64_t n = logits.dim(0), k = logits.dim(1);
    Tensor<T> out(logits.shape());
    for (std::int64_t i = 0; i < n; ++i) {
        const T* row = logits.data() + i * k;
        T m = row[0];
        for (std::int64_t j = 1; j < k; ++j) m = std::max(m, row[j]);
        T denom = 0;
        T* orow = out.data() + i * k;
        for (std::int64_t j = 0; j < k; ++j) {
            orow[j] = std::exp(row[j] - m);
            denom += orow[j];
        }
        for (std::int64_t j = 0; j < k; ++j) orow[j] /= denom;
    }
    return out;
}

// Mean over the batch of -log softmax(logits)[label].
template <typename T>
NodePtr<T> softmax_cross_entropy(const NodePtr<T>& logits, const std::vector<std::int64_t>& labels) {
    const Shape& s = logits->value.shape();
    if (s.size() != 2) throw shape_error("softmax_cross_entropy expects [N,K] logits, got " + shape_str(s));
    const std::int64_t n = s[0], k = s[1];
    if (static_cast<std::int64_t>(labels.size()) != n)
        throw shape_error("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(n));
    for (std::int64_t i = 0; i < n; ++i)
        if (labels[static_cast<std::size_t>(i)] < 0 || labels[static_cast<std::size_t>(i)] >= k)
            throw shape_error("softmax_cross_entropy: label " + std::to_string(labels[static_cast<std::size_t>(i)]) +
                              " out of range [0," + std::to_string(k) + ")");

    T loss = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const T* row = logits->value.data() + i * k;
        T m = row[0];
        for (std::int64_t j = 1; j < k; ++j) m = std::max(m, row[j]);
        T denom = 0;
        for (std::int64_t j = 0; j < k; ++j) denom += std::exp(row[j] - m);
        const T log_z = m + std::log(denom);
        loss += log_z - row[labels[static_cast<std::size_t>(i)]];
    }
    loss /= static_cast<T>(n);

    auto node = std::make_shared<Node<T>>(Tensor<T>::scalar(loss));
    node->op_name = "softmax_cross_entropy";
    node->parents = {logits};
    node->backprop = [labels, n, k](Node<T>& self) {
        Node<T>& in = *self.parents[0];
        in.ensure_grad();
        const T up = self.grad[0];
        Tensor<T> p = softmax(in.value);
        for (std::int64_t i = 0; i < n; ++i) {
            for (std::int64_t j = 0; j < k; ++j) {
                T g = p.at2(i, j);
                if (j == labels[static_cast<std::size_t>(i)]) g -= T(1);
                in.grad.at2(i, j) += up * g / static_cast<T>(n);
            }
        }
    };
    return node;
}

// --- small helper ops, used by tests and gradient checks ---

template <typename T>
NodePtr<T> sum(const NodePtr<T>& input) {
    auto node = std::make_shared<Node<T>>(Tensor<T>::scalar(input->value.sum()));
    node->op_name = "sum";
    node->parents = {input};
    node->backprop = [](Node<T>& self) {
        Node<T>& in = *self.parents[0];
        in.ensure_grad();
        const T up = self.grad[0];
        const std::int64_t total = in.grad.numel();
        for (std::int64_t i = 0; i < total; ++i) in.grad[i] += up;
    };
    return node;
}

template <typename T>
NodePtr<T> mul(const NodePtr<T>& a, const NodePtr<T>& b) {
    if (!a->value.same_shape(b->value))
        throw shape_error("mul shape mismatch: " + shape_str(a->value.shape()) + " vs " + shape_str(b->value.shape()));
    Tensor<T> out(a->value.shape());
    const std::int64_t total = out.numel();
    for (std::int64_t i = 0; i < total; ++i) out[i] = a->value[i] * b->value[i];
    auto node = std::make_shared<Node<T>>(std::move(out));
    node->op_name = "mul";
    node->parents = {a, b};
    node->backprop = [](Node<T>& self) {
        Node<T>& pa = *self.parents[0];
        Node<T>& pb = *self.parents[1];
        pa.ensure_grad();
        pb.ensure_grad();
        const std::int64_t total = self.grad.numel();
        for (std::int64_t i = 0; i < total; ++i) {
            pa.grad[i] += self.grad[i] * pb.value[i];
            pb.grad[i] += self.grad[i] * pa.value[i];
        }
    };
    return node;
}

}  // namespace shiftlab
