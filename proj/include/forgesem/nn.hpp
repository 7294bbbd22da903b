#pragma once

#include <cmath>
#include <string>

#include "forgesem/autograd.hpp"
#include "forgesem/ops.hpp"
#include "forgesem/rng.hpp"

namespace forgesem::nn {

// Fan-in scaled uniform init. Builders draw from the rng in registration
// order, so one seed fixes every weight in the store.
inline Tensor uniform_init(Pcg32& rng, const std::vector<int>& shape, int fan_in) {
    FORGESEM_CHECK(fan_in >= 1, "init: fan_in must be positive");
    const double b = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor t(shape);
    for (std::size_t i = 0; i < t.numel(); ++i)
        t[i] = static_cast<float>(rng.uniform(-b, b));
    return t;
}

struct Conv2d {
    Value w;
    Value b;
    int stride = 1;
    int padding = 0;
    int groups = 1;

    Value operator()(const Value& x) const {
        return ops::conv2d(x, w, b, stride, padding, groups);
    }
};

inline Conv2d make_conv(ParamStore& ps, Pcg32& rng, const std::string& name, int cin,
                        int cout, int k, int stride, int padding, int groups = 1) {
    FORGESEM_CHECK(cin % groups == 0, "conv init: cin % groups != 0");
    Conv2d c;
    c.w = ps.add(name + ".w", uniform_init(rng, {cout, cin / groups, k, k},
                                           (cin / groups) * k * k))
              .node;
    c.b = ps.add(name + ".b", Tensor::zeros({cout})).node;
    c.stride = stride;
    c.padding = padding;
    c.groups = groups;
    return c;
}

struct Linear {
    Value w;
    Value b;

    Value operator()(const Value& x) const { return ops::linear(x, w, b); }
};

inline Linear make_linear(ParamStore& ps, Pcg32& rng, const std::string& name, int in,
                          int out) {
    Linear l;
    l.w = ps.add(name + ".w", uniform_init(rng, {in, out}, in)).node;
    l.b = ps.add(name + ".b", Tensor::zeros({out})).node;
    return l;
}

struct GroupNorm {
    Value gamma;
    Value beta;
    int groups = 1;

    Value operator()(const Value& x) const {
        return ops::group_norm(x, gamma, beta, groups);
    }
};

inline GroupNorm make_group_norm(ParamStore& ps, const std::string& name, int channels,
                                 int groups) {
    GroupNorm g;
    g.gamma = ps.add(name + ".g", Tensor::full({channels}, 1.0f)).node;
    g.beta = ps.add(name + ".b", Tensor::zeros({channels})).node;
    g.groups = groups;
    return g;
}

// picks a divisor of c near 8 channels per group
inline int norm_groups(int c) {
    for (int g = std::min(8, c); g >= 1; --g)
        if (c % g == 0) return g;
    return 1;
}

// Depthwise 3x3 + pointwise 1x1, normalized and rectified.
struct SepConv {
    Conv2d dw;
    Conv2d pw;
    GroupNorm gn;

    Value operator()(const Value& x) const { return ops::relu(gn(pw(dw(x)))); }
};

inline SepConv make_sepconv(ParamStore& ps, Pcg32& rng, const std::string& name, int cin,
                            int cout, int stride) {
    SepConv s;
    s.dw = make_conv(ps, rng, name + ".dw", cin, cin, 3, stride, 1, cin);
    s.pw = make_conv(ps, rng, name + ".pw", cin, cout, 1, 1, 0);
    s.gn = make_group_norm(ps, name + ".gn", cout, norm_groups(cout));
    return s;
}

// Global additive attention: a spatial softmax over additive query-key
// scores pools a value map into one context vector per image, added back
// as a residual.
struct AttnBlock {
    Conv2d to_q;
    Conv2d to_k;
    Conv2d to_v;
    Conv2d score;

    Value operator()(const Value& x) const {
        const int h = x->value.dim(2), w = x->value.dim(3);
        auto g = ops::global_avg_pool(to_q(x));
        auto e = ops::tanh_(ops::add(to_k(x), ops::broadcast_spatial(g, h, w)));
        auto a = ops::softmax_spatial(score(e));
        auto ctx = ops::sum_spatial(ops::mul_gate(a, to_v(x)));
        return ops::add(x, ops::broadcast_spatial(ctx, h, w));
    }
};

inline AttnBlock make_attn(ParamStore& ps, Pcg32& rng, const std::string& name, int c,
                           int embed) {
    AttnBlock a;
    a.to_q = make_conv(ps, rng, name + ".q", c, embed, 1, 1, 0);
    a.to_k = make_conv(ps, rng, name + ".k", c, embed, 1, 1, 0);
    a.to_v = make_conv(ps, rng, name + ".v", c, c, 1, 1, 0);
    a.score = make_conv(ps, rng, name + ".s", embed, 1, 1, 1, 0);
    return a;
}

// Per-pixel sigmoid gate from embedded feature agreement; blends q into p.
struct PagFuse {
    Conv2d embed_p;
    Conv2d embed_q;

    Value operator()(const Value& p, const Value& q) const {
        FORGESEM_CHECK(p->value.shape() == q->value.shape(), "pag: shape mismatch");
        auto gate = ops::sigmoid(ops::channel_dot(embed_p(p), embed_q(q)));
        auto inv = ops::add_const(ops::scale(gate, -1.0f), 1.0f);
        return ops::add(ops::mul_gate(gate, q), ops::mul_gate(inv, p));
    }
};

inline PagFuse make_pag(ParamStore& ps, Pcg32& rng, const std::string& name, int c,
                        int embed) {
    PagFuse f;
    f.embed_p = make_conv(ps, rng, name + ".p", c, embed, 1, 1, 0);
    f.embed_q = make_conv(ps, rng, name + ".q", c, embed, 1, 1, 0);
    return f;
}

} // namespace forgesem::nn
