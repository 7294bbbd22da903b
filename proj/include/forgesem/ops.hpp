#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "forgesem/autograd.hpp"
#include "forgesem/kernels.hpp"
#include "forgesem/tensor.hpp"

namespace forgesem::ops {

enum class ActKind { relu, sigmoid, tanh };
enum class PoolMode { global_average_pool, upsample_nearest, upsample_bilinear };

namespace detail {
template <typename T>
TensorT<T>* grad_dst(const ValueT<T>& p) {
    if (p && p->requires_grad) return &p->ensure_grad();
    return nullptr;
}
} // namespace detail

// ---------------------------------------------------------------- conv2d

template <typename T>
ValueT<T> conv2d(const ValueT<T>& x, const ValueT<T>& w, const ValueT<T>& b,
                 int stride, int padding, int groups = 1) {
    FORGESEM_CHECK(x->value.rank() == 4, "conv2d: input must be NCHW");
    FORGESEM_CHECK(w->value.rank() == 4, "conv2d: weights must be OIkk");
    kern::Conv2dDims d;
    d.n = x->value.dim(0);
    d.cin = x->value.dim(1);
    d.h = x->value.dim(2);
    d.w = x->value.dim(3);
    d.cout = w->value.dim(0);
    d.k = w->value.dim(2);
    d.stride = stride;
    d.pad = padding;
    d.groups = groups;
    FORGESEM_CHECK(w->value.dim(3) == d.k, "conv2d: kernel must be square");
    FORGESEM_CHECK(w->value.dim(1) == d.cin / groups,
                   "conv2d: weight input channels mismatch " + w->value.shape_str());
    d.validate();
    if (b) {
        FORGESEM_CHECK(b->value.rank() == 1 && b->value.dim(0) == d.cout,
                       "conv2d: bias shape mismatch");
    }

    TensorT<T> out({d.n, d.cout, d.out_h(), d.out_w()});
    kern::conv2d_forward(out.data(), x->value.data(), w->value.data(),
                         b ? b->value.data() : nullptr, d);

    std::vector<ValueT<T>> parents = b ? std::vector<ValueT<T>>{x, w, b}
                                       : std::vector<ValueT<T>>{x, w};
    return make_node<T>(std::move(out), std::move(parents), [d](NodeT<T>& n) {
        const auto& xv = n.parents[0]->value;
        const auto& wv = n.parents[1]->value;
        if (auto* gx = detail::grad_dst(n.parents[0]))
            kern::conv2d_backward_input(gx->data(), n.grad.data(), wv.data(), d);
        if (auto* gw = detail::grad_dst(n.parents[1]))
            kern::conv2d_backward_weight(gw->data(), n.grad.data(), xv.data(), d);
        if (n.parents.size() > 2) {
            if (auto* gb = detail::grad_dst(n.parents[2]))
                kern::conv2d_backward_bias(gb->data(), n.grad.data(), d);
        }
    });
}

template <typename T>
ValueT<T> conv2d(const ValueT<T>& x, const ValueT<T>& w, int stride, int padding,
                 int groups = 1) {
    return conv2d(x, w, ValueT<T>{}, stride, padding, groups);
}

// ---------------------------------------------------------------- linear

template <typename T>
ValueT<T> linear(const ValueT<T>& x, const ValueT<T>& w, const ValueT<T>& b) {
    FORGESEM_CHECK(x->value.rank() == 2 && w->value.rank() == 2,
                   "linear: x must be NxF, w FxK");
    const int n = x->value.dim(0), f = x->value.dim(1), k = w->value.dim(1);
    FORGESEM_CHECK(w->value.dim(0) == f, "linear: inner dimensions disagree");
    if (b) FORGESEM_CHECK(b->value.rank() == 1 && b->value.dim(0) == k, "linear: bias shape");

    TensorT<T> out({n, k});
    kern::linear_forward(out.data(), x->value.data(), w->value.data(),
                         b ? b->value.data() : nullptr, n, f, k);
    std::vector<ValueT<T>> parents = b ? std::vector<ValueT<T>>{x, w, b}
                                       : std::vector<ValueT<T>>{x, w};
    return make_node<T>(std::move(out), std::move(parents), [n, f, k](NodeT<T>& nd) {
        auto* gx = detail::grad_dst(nd.parents[0]);
        auto* gw = detail::grad_dst(nd.parents[1]);
        TensorT<T>* gb = nd.parents.size() > 2 ? detail::grad_dst(nd.parents[2]) : nullptr;
        kern::linear_backward(gx ? gx->data() : nullptr, gw ? gw->data() : nullptr,
                              gb ? gb->data() : nullptr, nd.grad.data(),
                              nd.parents[0]->value.data(), nd.parents[1]->value.data(), n, f, k);
    });
}

// ----------------------------------------------------------- activations

template <typename T>
ValueT<T> relu(const ValueT<T>& x) {
    TensorT<T> out(x->value.shape());
    for (std::size_t i = 0; i < out.numel(); ++i)
        out[i] = x->value[i] > T(0) ? x->value[i] : T(0);
    return make_node<T>(std::move(out), {x}, [](NodeT<T>& n) {
        if (auto* gx = detail::grad_dst(n.parents[0])) {
            const auto& xv = n.parents[0]->value;
            for (std::size_t i = 0; i < xv.numel(); ++i)
                if (xv[i] > T(0)) (*gx)[i] += n.grad[i];
        }
    });
}

template <typename T>
ValueT<T> sigmoid(const ValueT<T>& x) {
    TensorT<T> out(x->value.shape());
    for (std::size_t i = 0; i < out.numel(); ++i)
        out[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(x->value[i]))));
    return make_node<T>(std::move(out), {x}, [](NodeT<T>& n) {
        if (auto* gx = detail::grad_dst(n.parents[0])) {
            for (std::size_t i = 0; i < n.value.numel(); ++i) {
                const T s = n.value[i];
                (*gx)[i] += n.grad[i] * s * (T(1) - s);
            }
        }
    });
}

template <typename T>
ValueT<T> tanh_(const ValueT<T>& x) {
    TensorT<T> out(x->value.shape());
    for (std::size_t i = 0; i < out.numel(); ++i)
        out[i] = static_cast<T>(std::tanh(static_cast<double>(x->value[i])));
    return make_node<T>(std::move(out), {x}, [](NodeT<T>& n) {
        if (auto* gx = detail::grad_dst(n.parents[0])) {
            for (std::size_t i = 0; i < n.value.numel(); ++i) {
                const T y = n.value[i];
                (*gx)[i] += n.grad[i] * (T(1) - y * y);
            }
        }
    });
}

template <typename T>
ValueT<T> activation(const ValueT<T>& x, ActKind kind) {
    switch (kind) {
        case ActKind::relu: return relu(x);
        case ActKind::sigmoid: return sigmoid(x);
        case ActKind::tanh: return tanh_(x);
    }
    throw contract_error("activation: unknown kind");
}

// ------------------------------------------------------------ elementwise

template <typename T>
ValueT<T> add(const ValueT<T>& a, const ValueT<T>& b) {
    FORGESEM_CHECK(a->value.same_shape(b->value), "add: shape mismatch");
    TensorT<T> out(a->value.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] + b->value[i];
    return make_node<T>(std::move(out), {a, b}, [](NodeT<T>& n) {
        if (auto* ga = detail::grad_dst(n.parents[0]))
            for (std::size_t i = 0; i < n.grad.numel(); ++i) (*ga)[i] += n.grad[i];
        if (auto* gb = detail::grad_dst(n.parents[1]))
            for (std::size_t i = 0; i < n.grad.numel(); ++i) (*gb)[i] += n.grad[i];
    });
}

template <typename T>
ValueT<T> sub(const ValueT<T>& a, const ValueT<T>& b) {
    FORGESEM_CHECK(a->value.same_shape(b->value), "sub: shape mismatch");
    TensorT<T> out(a->value.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] - b->value[i];
    return make_node<T>(std::move(out), {a, b}, [](NodeT<T>& n) {
        if (auto* ga = detail::grad_dst(n.parents[0]))
            for (std::size_t i = 0; i < n.grad.numel(); ++i) (*ga)[i] += n.grad[i];
        if (auto* gb = detail::grad_dst(n.parents[1]))
            for (std::size_t i = 0; i < n.grad.numel(); ++i) (*gb)[i] -= n.grad[i];
    });
}

template <typename T>
ValueT<T> mul(const ValueT<T>& a, const ValueT<T>& b) {
    FORGESEM_CHECK(a->value.same_shape(b->value), "mul: shape mismatch");
    TensorT<T> out(a->value.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * b->value[i];
    return make_node<T>(std::move(out), {a, b}, [](NodeT<T>& n) {
        if (auto* ga = detail::grad_dst(n.parents[0]))
            for (std::size_t i = 0; i < n.grad.numel(); ++i)
                (*ga)[i] += n.grad[i] * n.parents[1]->value[i];
        if (auto* gb = detail::grad_dst(n.parents[1]))
            for (std::size_t i = 0; i < n.grad.numel(); ++i)
                (*gb)[i] += n.grad[i] * n.parents[0]->value[i];
    });
}

template <typename T>
ValueT<T> scale(const ValueT<T>& x, T c) {
    TensorT<T> out(x->value.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x->value[i] * c;
    return make_node<T>(std::move(out), {x}, [c](NodeT<T>& n) {
        if (auto* gx = detail::grad_dst(n.parents[0]))
            for (std::size_t i = 0; i < n.grad.numel(); ++i) (*gx)[i] += n.grad[i] * c;
    });
}

template <typename T>
ValueT<T> add_const(const ValueT<T>& x, T c) {
    TensorT<T> out(x->value.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x->value[i] + c;
    return make_node<T>(std::move(out), {x}, [](NodeT<T>& n) {
        if (auto* gx = detail::grad_dst(n.parents[0]))
            for (std::size_t i = 0; i < n.grad.numel(); ++i) (*gx)[i] += n.grad[i];
    });
}

// ------------------------------------------------------- shape plumbing

template <typename T>
ValueT<T> reshape(const ValueT<T>& x, std::vector<int> shape) {
    TensorT<T> out(std::move(shape), x->value.vec());
    return make_node<T>(std::move(out), {x}, [](NodeT<T>& n) {
        if (auto* gx = detail::grad_dst(n.parents[0]))
            for (std::size_t i = 0; i < n.grad.numel(); ++i) (*gx)[i] += n.grad[i];
    });
}

template <typename T>
ValueT<T> concat_channels(const ValueT<T>& a, const ValueT<T>& b) {
    FORGESEM_CHECK(a->value.rank() == 4 && b->value.rank() == 4, "concat: need NCHW");
    const auto& sa = a->value.shape();
    const auto& sb = b->value.shape();
    FORGESEM_CHECK(sa[0] == sb[0] && sa[2] == sb[2] && sa[3] == sb[3],
                   "concat: non-channel dims must match");
    const int n = sa[0], ca = sa[1], cb = sb[1], h = sa[2], w = sa[3];
    TensorT<T> out({n, ca + cb, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int i = 0; i < n; ++i) {
        std::copy_n(a->value.data() + static_cast<std::size_t>(i) * ca * plane, ca * plane,
                    out.data() + static_cast<std::size_t>(i) * (ca + cb) * plane);
        std::copy_n(b->value.data() + static_cast<std::size_t>(i) * cb * plane, cb * plane,
                    out.data() + (static_cast<std::size_t>(i) * (ca + cb) + ca) * plane);
    }
    return make_node<T>(std::move(out), {a, b}, [n, ca, cb, plane](NodeT<T>& nd) {
        auto* ga = detail::grad_dst(nd.parents[0]);
        auto* gb = detail::grad_dst(nd.parents[1]);
        for (int i = 0; i < n; ++i) {
            const T* g = nd.grad.data() + static_cast<std::size_t>(i) * (ca + cb) * plane;
            if (ga) {
                T* dst = ga->data() + static_cast<std::size_t>(i) * ca * plane;
                for (std::size_t j = 0; j < ca * plane; ++j) dst[j] += g[j];
            }
            if (gb) {
                T* dst = gb->data() + static_cast<std::size_t>(i) * cb * plane;
                for (std::size_t j = 0; j < cb * plane; ++j) dst[j] += g[ca * plane + j];
            }
        }
    });
}

// Channels [c0, c1) of an NCHW tensor.
template <typename T>
ValueT<T> slice_channels(const ValueT<T>& x, int c0, int c1) {
    FORGESEM_CHECK(x->value.rank() == 4, "slice: need NCHW");
    const auto& s = x->value.shape();
    FORGESEM_CHECK(0 <= c0 && c0 < c1 && c1 <= s[1], "slice: bad channel range");
    const int n = s[0], c = s[1], h = s[2], w = s[3], cs = c1 - c0;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    TensorT<T> out({n, cs, h, w});
    for (int i = 0; i < n; ++i)
        std::copy_n(x->value.data() + (static_cast<std::size_t>(i) * c + c0) * plane, cs * plane,
                    out.data() + static_cast<std::size_t>(i) * cs * plane);
    return make_node<T>(std::move(out), {x}, [n, c, c0, cs, plane](NodeT<T>& nd) {
        if (auto* gx = detail::grad_dst(nd.parents[0])) {
            for (int i = 0; i < n; ++i) {
                T* dst = gx->data() + (static_cast<std::size_t>(i) * c + c0) * plane;
                const T* g = nd.grad.data() + static_cast<std::size_t>(i) * cs * plane;
                for (std::size_t j = 0; j < cs * plane; ++j) dst[j] += g[j];
            }
        }
    });
}

// ------------------------------------------------------- pooling / resize

// N,C,H,W -> N,C mean over the spatial plane.
template <typename T>
ValueT<T> global_avg_pool(const ValueT<T>& x) {
    FORGESEM_CHECK(x->value.rank() == 4, "gap: need NCHW");
    const auto& s = x->value.shape();
    const int n = s[0], c = s[1];
    const std::size_t plane = static_cast<std::size_t>(s[2]) * s[3];
    TensorT<T> out({n, c});
    for (int i = 0; i < n * c; ++i) {
        const T* p = x->value.data() + static_cast<std::size_t>(i) * plane;
        double acc = 0.0;
        for (std::size_t j = 0; j < plane; ++j) acc += static_cast<double>(p[j]);
        out[i] = static_cast<T>(acc / static_cast<double>(plane));
    }
    return make_node<T>(std::move(out), {x}, [n, c, plane](NodeT<T>& nd) {
        if (auto* gx = detail::grad_dst(nd.parents[0])) {
            const T inv = static_cast<T>(1.0 / static_cast<double>(plane));
            for (int i = 0; i < n * c; ++i) {
                T* dst = gx->data() + static_cast<std::size_t>(i) * plane;
                const T g = nd.grad[i] * inv;
                for (std::size_t j = 0; j < plane; ++j) dst[j] += g;
            }
        }
    });
}

template <typename T>
ValueT<T> avg_pool2x2(const ValueT<T>& x) {
    FORGESEM_CHECK(x->value.rank() == 4, "avg_pool2x2: need NCHW");
    const auto& s = x->value.shape();
    FORGESEM_CHECK(s[2] % 2 == 0 && s[3] % 2 == 0, "avg_pool2x2: H,W must be even");
    const int n = s[0], c = s[1], h = s[2], w = s[3];
    TensorT<T> out({n, c, h / 2, w / 2});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j)
            for (int oy = 0; oy < h / 2; ++oy)
                for (int ox = 0; ox < w / 2; ++ox) {
                    double acc = static_cast<double>(x->value.at4(i, j, 2 * oy, 2 * ox)) +
                                 static_cast<double>(x->value.at4(i, j, 2 * oy, 2 * ox + 1)) +
                                 static_cast<double>(x->value.at4(i, j, 2 * oy + 1, 2 * ox)) +
                                 static_cast<double>(x->value.at4(i, j, 2 * oy + 1, 2 * ox + 1));
                    out.at4(i, j, oy, ox) = static_cast<T>(acc * 0.25);
                }
    return make_node<T>(std::move(out), {x}, [n, c, h, w](NodeT<T>& nd) {
        if (auto* gx = detail::grad_dst(nd.parents[0])) {
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j)
                    for (int oy = 0; oy < h / 2; ++oy)
                        for (int ox = 0; ox < w / 2; ++ox) {
                            const T g = nd.grad.at4(i, j, oy, ox) * T(0.25);
                            gx->at4(i, j, 2 * oy, 2 * ox) += g;
                            gx->at4(i, j, 2 * oy, 2 * ox + 1) += g;
                            gx->at4(i, j, 2 * oy + 1, 2 * ox) += g;
                            gx->at4(i, j, 2 * oy + 1, 2 * ox + 1) += g;
                        }
        }
    });
}

template <typename T>
ValueT<T> upsample_nearest(const ValueT<T>& x, int factor) {
    FORGESEM_CHECK(x->value.rank() == 4, "upsample: need NCHW");
    FORGESEM_CHECK(factor >= 1, "upsample: factor must be >= 1");
    const auto& s = x->value.shape();
    const int n = s[0], c = s[1], h = s[2], w = s[3];
    TensorT<T> out({n, c, h * factor, w * factor});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j)
            for (int y = 0; y < h * factor; ++y)
                for (int xx = 0; xx < w * factor; ++xx)
                    out.at4(i, j, y, xx) = x->value.at4(i, j, y / factor, xx / factor);
    return make_node<T>(std::move(out), {x}, [n, c, h, w, factor](NodeT<T>& nd) {
        if (auto* gx = detail::grad_dst(nd.parents[0])) {
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j)
                    for (int y = 0; y < h; ++y)
                        for (int xx = 0; xx < w; ++xx) {
                            double acc = 0.0;
                            for (int dy = 0; dy < factor; ++dy)
                                for (int dx = 0; dx < factor; ++dx)
                                    acc += static_cast<double>(
                                        nd.grad.at4(i, j, y * factor + dy, xx * factor + dx));
                            gx->at4(i, j, y, xx) += static_cast<T>(acc);
                        }
        }
    });
}

// Half-pixel-center convention: src = (dst + 0.5) / factor - 0.5, clamped.
template <typename T>
ValueT<T> upsample_bilinear(const ValueT<T>& x, int factor) {
    FORGESEM_CHECK(x->value.rank() == 4, "upsample: need NCHW");
    FORGESEM_CHECK(factor >= 1, "upsample: factor must be >= 1");
    const auto& s = x->value.shape();
    const int n = s[0], c = s[1], h = s[2], w = s[3];
    const int oh = h * factor, ow = w * factor;

    struct Tap {
        int i0, i1;
        double w0, w1;
    };
    auto taps = [](int size, int osize, int factor_) {
        std::vector<Tap> v(static_cast<std::size_t>(osize));
        for (int o = 0; o < osize; ++o) {
            double src = (o + 0.5) / factor_ - 0.5;
            if (src < 0) src = 0;
            if (src > size - 1) src = size - 1;
            int i0 = static_cast<int>(std::floor(src));
            if (i0 > size - 1) i0 = size - 1;
            int i1 = i0 + 1 < size ? i0 + 1 : i0;
            double f = src - i0;
            v[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - f, f};
        }
        return v;
    };
    auto ty = taps(h, oh, factor);
    auto tx = taps(w, ow, factor);

    TensorT<T> out({n, c, oh, ow});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j)
            for (int y = 0; y < oh; ++y)
                for (int xx = 0; xx < ow; ++xx) {
                    const Tap& a = ty[static_cast<std::size_t>(y)];
                    const Tap& b = tx[static_cast<std::size_t>(xx)];
                    double v = a.w0 * (b.w0 * x->value.at4(i, j, a.i0, b.i0) +
                                       b.w1 * x->value.at4(i, j, a.i0, b.i1)) +
                               a.w1 * (b.w0 * x->value.at4(i, j, a.i1, b.i0) +
                                       b.w1 * x->value.at4(i, j, a.i1, b.i1));
                    out.at4(i, j, y, xx) = static_cast<T>(v);
                }
    return make_node<T>(std::move(out), {x}, [n, c, oh, ow, ty, tx](NodeT<T>& nd) {
        if (auto* gx = detail::grad_dst(nd.parents[0])) {
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j)
                    for (int y = 0; y < oh; ++y)
                        for (int xx = 0; xx < ow; ++xx) {
                            const auto& a = ty[static_cast<std::size_t>(y)];
                            const auto& b = tx[static_cast<std::size_t>(xx)];
                            const T g = nd.grad.at4(i, j, y, xx);
                            gx->at4(i, j, a.i0, b.i0) += static_cast<T>(a.w0 * b.w0) * g;
                            gx->at4(i, j, a.i0, b.i1) += static_cast<T>(a.w0 * b.w1) * g;
                            gx->at4(i, j, a.i1, b.i0) += static_cast<T>(a.w1 * b.w0) * g;
                            gx->at4(i, j, a.i1, b.i1) += static_cast<T>(a.w1 * b.w1) * g;
                        }
        }
    });
}

template <typename T>
ValueT<T> pool_resize(const ValueT<T>& x, PoolMode mode, int factor = 1) {
    switch (mode) {
        case PoolMode::global_average_pool: return global_avg_pool(x);
        case PoolMode::upsample_nearest: return upsample_nearest(x, factor);
        case PoolMode::upsample_bilinear: return upsample_bilinear(x, factor);
    }
    throw contract_error("pool_resize: unknown mode");
}

// ------------------------------------------------------------ group norm

// Normalizes over (channels-per-group x H x W) per sample; gamma/beta are
// per-channel. Batch-size independent, which keeps runs reproducible at any
// batch size.
template <typename T>
ValueT<T> group_norm(const ValueT<T>& x, const ValueT<T>& gamma, const ValueT<T>& beta,
                     int groups, double eps = 1e-5) {
    FORGESEM_CHECK(x->value.rank() == 4, "group_norm: need NCHW");
    const auto& s = x->value.shape();
    const int n = s[0], c = s[1], h = s[2], w = s[3];
    FORGESEM_CHECK(groups >= 1 && c % groups == 0, "group_norm: channels % groups != 0");
    FORGESEM_CHECK(gamma->value.numel() == static_cast<std::size_t>(c) &&
                       beta->value.numel() == static_cast<std::size_t>(c),
                   "group_norm: gamma/beta must be per-channel");
    const int cg = c / groups;
    const std::size_t m = static_cast<std::size_t>(cg) * h * w;
    const std::size_t plane = static_cast<std::size_t>(h) * w;

    TensorT<T> out({n, c, h, w});
    // saved statistics per (n, group) for the backward pass
    auto mean = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n) * groups);
    auto invstd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n) * groups);

    for (int i = 0; i < n; ++i) {
        for (int g = 0; g < groups; ++g) {
            const T* base = x->value.data() + (static_cast<std::size_t>(i) * c + g * cg) * plane;
            double mu = 0.0;
            for (std::size_t j = 0; j < m; ++j) mu += static_cast<double>(base[j]);
            mu /= static_cast<double>(m);
            double var = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
                const double dv = static_cast<double>(base[j]) - mu;
                var += dv * dv;
            }
            var /= static_cast<double>(m);
            const double is = 1.0 / std::sqrt(var + eps);
            (*mean)[static_cast<std::size_t>(i) * groups + g] = mu;
            (*invstd)[static_cast<std::size_t>(i) * groups + g] = is;
            T* dst = out.data() + (static_cast<std::size_t>(i) * c + g * cg) * plane;
            for (int cl = 0; cl < cg; ++cl) {
                const double ga = static_cast<double>(gamma->value[g * cg + cl]);
                const double be = static_cast<double>(beta->value[g * cg + cl]);
                for (std::size_t j = 0; j < plane; ++j) {
                    const double xh = (static_cast<double>(base[cl * plane + j]) - mu) * is;
                    dst[cl * plane + j] = static_cast<T>(ga * xh + be);
                }
            }
        }
    }

    return make_node<T>(std::move(out), {x, gamma, beta},
                        [n, c, h, w, groups, cg, m, plane, mean, invstd](NodeT<T>& nd) {
        auto* gx = detail::grad_dst(nd.parents[0]);
        auto* gg = detail::grad_dst(nd.parents[1]);
        auto* gb = detail::grad_dst(nd.parents[2]);
        const auto& xv = nd.parents[0]->value;
        const auto& gamma_v = nd.parents[1]->value;
        for (int i = 0; i < n; ++i) {
            for (int g = 0; g < groups; ++g) {
                const double mu = (*mean)[static_cast<std::size_t>(i) * groups + g];
                const double is = (*invstd)[static_cast<std::size_t>(i) * groups + g];
                const T* xb = xv.data() + (static_cast<std::size_t>(i) * c + g * cg) * plane;
                const T* dyb = nd.grad.data() + (static_cast<std::size_t>(i) * c + g * cg) * plane;
                // sums for the mean/variance chain terms
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (int cl = 0; cl < cg; ++cl) {
                    const double ga = static_cast<double>(gamma_v[g * cg + cl]);
                    for (std::size_t j = 0; j < plane; ++j) {
                        const double xh = (static_cast<double>(xb[cl * plane + j]) - mu) * is;
                        const double dxh = static_cast<double>(dyb[cl * plane + j]) * ga;
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * xh;
                    }
                }
                if (gx) {
                    T* dst = gx->data() + (static_cast<std::size_t>(i) * c + g * cg) * plane;
                    const double inv_m = 1.0 / static_cast<double>(m);
                    for (int cl = 0; cl < cg; ++cl) {
                        const double ga = static_cast<double>(gamma_v[g * cg + cl]);
                        for (std::size_t j = 0; j < plane; ++j) {
                            const double xh = (static_cast<double>(xb[cl * plane + j]) - mu) * is;
                            const double dxh = static_cast<double>(dyb[cl * plane + j]) * ga;
                            const double dx =
                                is * (dxh - inv_m * sum_dxhat - xh * inv_m * sum_dxhat_xhat);
                            dst[cl * plane + j] += static_cast<T>(dx);
                        }
                    }
                }
                if (gg || gb) {
                    for (int cl = 0; cl < cg; ++cl) {
                        double dgam = 0.0, dbet = 0.0;
                        for (std::size_t j = 0; j < plane; ++j) {
                            const double xh =
                                (static_cast<double>(xb[cl * plane + j]) - mu) * is;
                            const double dy = static_cast<double>(dyb[cl * plane + j]);
                            dgam += dy * xh;
                            dbet += dy;
                        }
                        if (gg) (*gg)[g * cg + cl] += static_cast<T>(dgam);
                        if (gb) (*gb)[g * cg + cl] += static_cast<T>(dbet);
                    }
                }
            }
        }
    });
}

// --------------------------------------------- attention / fusion helpers

// Softmax over the spatial plane of an Nx1xHxW score map.
template <typename T>
ValueT<T> softmax_spatial(const ValueT<T>& x) {
    FORGESEM_CHECK(x->value.rank() == 4 && x->value.dim(1) == 1,
                   "softmax_spatial: need Nx1xHxW");
    const int n = x->value.dim(0);
    const std::size_t plane = static_cast<std::size_t>(x->value.dim(2)) * x->value.dim(3);
    TensorT<T> out(x->value.shape());
    for (int i = 0; i < n; ++i) {
        const T* p = x->value.data() + static_cast<std::size_t>(i) * plane;
        T* q = out.data() + static_cast<std::size_t>(i) * plane;
        double mx = -1e300;
        for (std::size_t j = 0; j < plane; ++j)
            mx = std::max(mx, static_cast<double>(p[j]));
        double z = 0.0;
        for (std::size_t j = 0; j < plane; ++j) z += std::exp(static_cast<double>(p[j]) - mx);
        for (std::size_t j = 0; j < plane; ++j)
            q[j] = static_cast<T>(std::exp(static_cast<double>(p[j]) - mx) / z);
    }
    return make_node<T>(std::move(out), {x}, [n, plane](NodeT<T>& nd) {
        if (auto* gx = detail::grad_dst(nd.parents[0])) {
            for (int i = 0; i < n; ++i) {
                const T* y = nd.value.data() + static_cast<std::size_t>(i) * plane;
                const T* dy = nd.grad.data() + static_cast<std::size_t>(i) * plane;
                double dot = 0.0;
                for (std::size_t j = 0; j < plane; ++j)
                    dot += static_cast<double>(dy[j]) * static_cast<double>(y[j]);
                T* dst = gx->data() + static_cast<std::size_t>(i) * plane;
                for (std::size_t j = 0; j < plane; ++j)
                    dst[j] += static_cast<T>(static_cast<double>(y[j]) *
                                             (static_cast<double>(dy[j]) - dot));
            }
        }
    });
}

// N,C,H,W -> N,C sum over the spatial plane.
template <typename T>
ValueT<T> sum_spatial(const ValueT<T>& x) {
    FORGESEM_CHECK(x->value.rank() == 4, "sum_spatial: need NCHW");
    const int n = x->value.dim(0), c = x->value.dim(1);
    const std::size_t plane = static_cast<std::size_t>(x->value.dim(2)) * x->value.dim(3);
    TensorT<T> out({n, c});
    for (int i = 0; i < n * c; ++i) {
        const T* p = x->value.data() + static_cast<std::size_t>(i) * plane;
        double acc = 0.0;
        for (std::size_t j = 0; j < plane; ++j) acc += static_cast<double>(p[j]);
        out[i] = static_cast<T>(acc);
    }
    return make_node<T>(std::move(out), {x}, [n, c, plane](NodeT<T>& nd) {
        if (auto* gx = detail::grad_dst(nd.parents[0])) {
            for (int i = 0; i < n * c; ++i) {
                T* dst = gx->data() + static_cast<std::size_t>(i) * plane;
                for (std::size_t j = 0; j < plane; ++j) dst[j] += nd.grad[i];
            }
        }
    });
}

// N,C -> N,C,H,W by repeating each scalar over the plane.
template <typename T>
ValueT<T> broadcast_spatial(const ValueT<T>& v, int h, int w) {
    FORGESEM_CHECK(v->value.rank() == 2, "broadcast_spatial: need NxC");
    const int n = v->value.dim(0), c = v->value.dim(1);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    TensorT<T> out({n, c, h, w});
    for (int i = 0; i < n * c; ++i) {
        T* dst = out.data() + static_cast<std::size_t>(i) * plane;
        for (std::size_t j = 0; j < plane; ++j) dst[j] = v->value[i];
    }
    return make_node<T>(std::move(out), {v}, [n, c, plane](NodeT<T>& nd) {
        if (auto* gv = detail::grad_dst(nd.parents[0])) {
            for (int i = 0; i < n * c; ++i) {
                const T* g = nd.grad.data() + static_cast<std::size_t>(i) * plane;
                double acc = 0.0;
                for (std::size_t j = 0; j < plane; ++j) acc += static_cast<double>(g[j]);
                (*gv)[i] += static_cast<T>(acc);
            }
        }
    });
}

// Per-pixel gate (Nx1xHxW) times an NxCxHxW map.
template <typename T>
ValueT<T> mul_gate(const ValueT<T>& gate, const ValueT<T>& x) {
    FORGESEM_CHECK(gate->value.rank() == 4 && gate->value.dim(1) == 1, "mul_gate: gate Nx1xHxW");
    FORGESEM_CHECK(x->value.rank() == 4, "mul_gate: x NCHW");
    FORGESEM_CHECK(gate->value.dim(0) == x->value.dim(0) &&
                       gate->value.dim(2) == x->value.dim(2) &&
                       gate->value.dim(3) == x->value.dim(3),
                   "mul_gate: spatial dims mismatch");
    const int n = x->value.dim(0), c = x->value.dim(1);
    const std::size_t plane = static_cast<std::size_t>(x->value.dim(2)) * x->value.dim(3);
    TensorT<T> out(x->value.shape());
    for (int i = 0; i < n; ++i) {
        const T* g = gate->value.data() + static_cast<std::size_t>(i) * plane;
        for (int j = 0; j < c; ++j) {
            const T* p = x->value.data() + (static_cast<std::size_t>(i) * c + j) * plane;
            T* q = out.data() + (static_cast<std::size_t>(i) * c + j) * plane;
            for (std::size_t t = 0; t < plane; ++t) q[t] = g[t] * p[t];
        }
    }
    return make_node<T>(std::move(out), {gate, x}, [n, c, plane](NodeT<T>& nd) {
        auto* gg = detail::grad_dst(nd.parents[0]);
        auto* gx = detail::grad_dst(nd.parents[1]);
        const auto& gate_v = nd.parents[0]->value;
        const auto& xv = nd.parents[1]->value;
        for (int i = 0; i < n; ++i) {
            const T* g = gate_v.data() + static_cast<std::size_t>(i) * plane;
            for (std::size_t t = 0; t < plane; ++t) {
                double acc = 0.0;
                for (int j = 0; j < c; ++j) {
                    const std::size_t off = (static_cast<std::size_t>(i) * c + j) * plane + t;
                    const T dy = nd.grad[off];
                    if (gx) (*gx)[off] += dy * g[t];
                    acc += static_cast<double>(dy) * static_cast<double>(xv[off]);
                }
                if (gg) (*gg)[static_cast<std::size_t>(i) * plane + t] += static_cast<T>(acc);
            }
        }
    });
}

// Per-pixel inner product over channels: (N,E,H,W)x(N,E,H,W) -> N,1,H,W.
template <typename T>
ValueT<T> channel_dot(const ValueT<T>& a, const ValueT<T>& b) {
    FORGESEM_CHECK(a->value.same_shape(b->value) && a->value.rank() == 4,
                   "channel_dot: shapes must match");
    const int n = a->value.dim(0), e = a->value.dim(1);
    const int h = a->value.dim(2), w = a->value.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    TensorT<T> out({n, 1, h, w});
    for (int i = 0; i < n; ++i)
        for (std::size_t t = 0; t < plane; ++t) {
            double acc = 0.0;
            for (int j = 0; j < e; ++j) {
                const std::size_t off = (static_cast<std::size_t>(i) * e + j) * plane + t;
                acc += static_cast<double>(a->value[off]) * static_cast<double>(b->value[off]);
            }
            out[static_cast<std::size_t>(i) * plane + t] = static_cast<T>(acc);
        }
    return make_node<T>(std::move(out), {a, b}, [n, e, plane](NodeT<T>& nd) {
        auto* ga = detail::grad_dst(nd.parents[0]);
        auto* gb = detail::grad_dst(nd.parents[1]);
        const auto& av = nd.parents[0]->value;
        const auto& bv = nd.parents[1]->value;
        for (int i = 0; i < n; ++i)
            for (std::size_t t = 0; t < plane; ++t) {
                const T dy = nd.grad[static_cast<std::size_t>(i) * plane + t];
                for (int j = 0; j < e; ++j) {
                    const std::size_t off = (static_cast<std::size_t>(i) * e + j) * plane + t;
                    if (ga) (*ga)[off] += dy * bv[off];
                    if (gb) (*gb)[off] += dy * av[off];
                }
            }
    });
}

// ------------------------------------------------------ rows / distances

template <typename T>
ValueT<T> concat_rows(const ValueT<T>& a, const ValueT<T>& b) {
    FORGESEM_CHECK(a->value.rank() == 2 && b->value.rank() == 2 &&
                       a->value.dim(1) == b->value.dim(1),
                   "concat_rows: need NxF matrices with equal F");
    const int na = a->value.dim(0), nb = b->value.dim(0), f = a->value.dim(1);
    TensorT<T> out({na + nb, f});
    std::copy_n(a->value.data(), a->value.numel(), out.data());
    std::copy_n(b->value.data(), b->value.numel(), out.data() + a->value.numel());
    return make_node<T>(std::move(out), {a, b}, [na, nb, f](NodeT<T>& nd) {
        const std::size_t split = static_cast<std::size_t>(na) * f;
        if (auto* ga = detail::grad_dst(nd.parents[0]))
            for (std::size_t i = 0; i < split; ++i) (*ga)[i] += nd.grad[i];
        if (auto* gb = detail::grad_dst(nd.parents[1]))
            for (std::size_t i = 0; i < static_cast<std::size_t>(nb) * f; ++i)
                (*gb)[i] += nd.grad[split + i];
    });
}

template <typename T>
ValueT<T> gather_rows(const ValueT<T>& x, std::vector<int> idx) {
    FORGESEM_CHECK(x->value.rank() == 2, "gather_rows: need NxF");
    const int f = x->value.dim(1);
    for (int i : idx)
        FORGESEM_CHECK(i >= 0 && i < x->value.dim(0), "gather_rows: index out of range");
    TensorT<T> out({static_cast<int>(idx.size()), f});
    for (std::size_t m = 0; m < idx.size(); ++m)
        std::copy_n(x->value.data() + static_cast<std::size_t>(idx[m]) * f, f,
                    out.data() + m * f);
    return make_node<T>(std::move(out), {x}, [idx, f](NodeT<T>& nd) {
        if (auto* gx = detail::grad_dst(nd.parents[0])) {
            for (std::size_t m = 0; m < idx.size(); ++m) {
                T* dst = gx->data() + static_cast<std::size_t>(idx[m]) * f;
                const T* g = nd.grad.data() + m * f;
                for (int j = 0; j < f; ++j) dst[j] += g[j];
            }
        }
    });
}

// Row-wise Euclidean distance between two MxF matrices -> length-M vector.
// Gradient at coincident rows is defined as zero.
template <typename T>
ValueT<T> pairwise_l2(const ValueT<T>& a, const ValueT<T>& b) {
    FORGESEM_CHECK(a->value.same_shape(b->value) && a->value.rank() == 2,
                   "pairwise_l2: need matching MxF");
    const int m = a->value.dim(0), f = a->value.dim(1);
    TensorT<T> out({m});
    for (int i = 0; i < m; ++i) {
        double acc = 0.0;
        for (int j = 0; j < f; ++j) {
            const double dv = static_cast<double>(a->value.at2(i, j)) -
                              static_cast<double>(b->value.at2(i, j));
            acc += dv * dv;
        }
        out[static_cast<std::size_t>(i)] = static_cast<T>(std::sqrt(acc));
    }
    return make_node<T>(std::move(out), {a, b}, [m, f](NodeT<T>& nd) {
        auto* ga = detail::grad_dst(nd.parents[0]);
        auto* gb = detail::grad_dst(nd.parents[1]);
        const auto& av = nd.parents[0]->value;
        const auto& bv = nd.parents[1]->value;
        for (int i = 0; i < m; ++i) {
            const double dist = static_cast<double>(nd.value[static_cast<std::size_t>(i)]);
            if (dist <= 0.0) continue;
            const double g = static_cast<double>(nd.grad[static_cast<std::size_t>(i)]) / dist;
            for (int j = 0; j < f; ++j) {
                const double dv = static_cast<double>(av.at2(i, j)) -
                                  static_cast<double>(bv.at2(i, j));
                if (ga) ga->at2(i, j) += static_cast<T>(g * dv);
                if (gb) gb->at2(i, j) -= static_cast<T>(g * dv);
            }
        }
    });
}

// ---------------------------------------------------------------- losses

// Mean over the batch of -log softmax(logits)[label]; log-sum-exp stable.
template <typename T>
ValueT<T> cross_entropy_loss(const ValueT<T>& logits, const std::vector<int>& labels) {
    FORGESEM_CHECK(logits->value.rank() == 2, "cross_entropy: logits must be NxK");
    const int n = logits->value.dim(0), k = logits->value.dim(1);
    FORGESEM_CHECK(static_cast<int>(labels.size()) == n, "cross_entropy: label count mismatch");
    for (int y : labels)
        FORGESEM_CHECK(y >= 0 && y < k, "cross_entropy: label out of range");

    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const T* row = logits->value.data() + static_cast<std::size_t>(i) * k;
        double mx = -1e300;
        for (int j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double z = 0.0;
        for (int j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
        total += std::log(z) + mx - static_cast<double>(row[labels[static_cast<std::size_t>(i)]]);
    }
    TensorT<T> out = TensorT<T>::scalar(static_cast<T>(total / n));
    return make_node<T>(std::move(out), {logits}, [labels, n, k](NodeT<T>& nd) {
        if (auto* gx = detail::grad_dst(nd.parents[0])) {
            const T g = nd.grad[0];
            const auto& lv = nd.parents[0]->value;
            for (int i = 0; i < n; ++i) {
                const T* row = lv.data() + static_cast<std::size_t>(i) * k;
                double mx = -1e300;
                for (int j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
                double z = 0.0;
                for (int j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
                for (int j = 0; j < k; ++j) {
                    double p = std::exp(static_cast<double>(row[j]) - mx) / z;
                    if (j == labels[static_cast<std::size_t>(i)]) p -= 1.0;
                    gx->at2(i, j) += static_cast<T>(p / n) * g;
                }
            }
        }
    });
}

// Mean absolute difference; the subgradient at zero difference is zero.
template <typename T>
ValueT<T> l1_loss(const ValueT<T>& target, const ValueT<T>& recon) {
    FORGESEM_CHECK(target->value.same_shape(recon->value), "l1_loss: shape mismatch");
    const std::size_t n = target->value.numel();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        total += std::fabs(static_cast<double>(target->value[i]) -
                           static_cast<double>(recon->value[i]));
    TensorT<T> out = TensorT<T>::scalar(static_cast<T>(total / static_cast<double>(n)));
    return make_node<T>(std::move(out), {target, recon}, [n](NodeT<T>& nd) {
        auto* gt = detail::grad_dst(nd.parents[0]);
        auto* gr = detail::grad_dst(nd.parents[1]);
        const auto& tv = nd.parents[0]->value;
        const auto& rv = nd.parents[1]->value;
        const T g = nd.grad[0] / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const T d = tv[i] - rv[i];
            const T s = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
            if (gt) (*gt)[i] += g * s;
            if (gr) (*gr)[i] -= g * s;
        }
    });
}

template <typename T>
ValueT<T> sum_all(const ValueT<T>& x) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x->value.numel(); ++i)
        acc += static_cast<double>(x->value[i]);
    TensorT<T> out = TensorT<T>::scalar(static_cast<T>(acc));
    return make_node<T>(std::move(out), {x}, [](NodeT<T>& nd) {
        if (auto* gx = detail::grad_dst(nd.parents[0]))
            for (std::size_t i = 0; i < gx->numel(); ++i) (*gx)[i] += nd.grad[0];
    });
}

template <typename T>
ValueT<T> mean_all(const ValueT<T>& x) {
    const std::size_t n = x->value.numel();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(x->value[i]);
    TensorT<T> out = TensorT<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
    return make_node<T>(std::move(out), {x}, [n](NodeT<T>& nd) {
        if (auto* gx = detail::grad_dst(nd.parents[0])) {
            const T g = nd.grad[0] / static_cast<T>(n);
            for (std::size_t i = 0; i < n; ++i) (*gx)[i] += g;
        }
    });
}

// Scalar combination sum_i w_i * t_i, accumulated in double and rounded
// once, so weighted totals match hand arithmetic rounded to T.
template <typename T>
ValueT<T> weighted_sum(const std::vector<ValueT<T>>& terms, const std::vector<T>& weights) {
    FORGESEM_CHECK(terms.size() == weights.size() && !terms.empty(),
                   "weighted_sum: terms/weights mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < terms.size(); ++i) {
        FORGESEM_CHECK(terms[i]->value.numel() == 1, "weighted_sum: terms must be scalars");
        acc += static_cast<double>(weights[i]) * static_cast<double>(terms[i]->value[0]);
    }
    TensorT<T> out = TensorT<T>::scalar(static_cast<T>(acc));
    return make_node<T>(std::move(out), terms, [weights](NodeT<T>& nd) {
        for (std::size_t i = 0; i < nd.parents.size(); ++i)
            if (auto* g = detail::grad_dst(nd.parents[i])) (*g)[0] += nd.grad[0] * weights[i];
    });
}

// Single element as a scalar node (used to backprop one logit).
template <typename T>
ValueT<T> pick(const ValueT<T>& x, int row, int col) {
    FORGESEM_CHECK(x->value.rank() == 2, "pick: need NxK");
    FORGESEM_CHECK(row >= 0 && row < x->value.dim(0) && col >= 0 && col < x->value.dim(1),
                   "pick: out of range");
    TensorT<T> out = TensorT<T>::scalar(x->value.at2(row, col));
    return make_node<T>(std::move(out), {x}, [row, col](NodeT<T>& nd) {
        if (auto* gx = detail::grad_dst(nd.parents[0])) gx->at2(row, col) += nd.grad[0];
    });
}

// Softmax of one logits row as plain values (inference scoring).
template <typename T>
std::vector<double> softmax_row(const TensorT<T>& logits, int row) {
    const int k = logits.dim(1);
    std::vector<double> p(static_cast<std::size_t>(k));
    double mx = -1e300;
    for (int j = 0; j < k; ++j)
        mx = std::max(mx, static_cast<double>(logits.at2(row, j)));
    double z = 0.0;
    for (int j = 0; j < k; ++j) {
        p[static_cast<std::size_t>(j)] = std::exp(static_cast<double>(logits.at2(row, j)) - mx);
        z += p[static_cast<std::size_t>(j)];
    }
    for (double& v : p) v /= z;
    return p;
}

} // namespace forgesem::ops
