#pragma once

// Independent reference implementations used as test oracles. These are
// written straight from the mathematical definitions with different loop
// structure than the production kernels and accumulate in double.

#include <cmath>
#include <vector>

#include "forgesem/tensor.hpp"

namespace oracles {

// Zero-padded cross-correlation, scatter form: walks input pixels and kernel
// taps, accumulating contributions into a double buffer.
inline forgesem::TensorT<double> conv2d_naive(const forgesem::TensorT<double>& x,
                                              const forgesem::TensorT<double>& w,
                                              const std::vector<double>& bias,
                                              int stride, int pad, int groups) {
    const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), ww = x.dim(3);
    const int cout = w.dim(0), k = w.dim(2);
    const int cin_g = cin / groups, cout_g = cout / groups;
    const int oh = (h + 2 * pad - k) / stride + 1;
    const int ow = (ww + 2 * pad - k) / stride + 1;
    forgesem::TensorT<double> out =
        forgesem::TensorT<double>::zeros({n, cout, oh, ow});
    for (int i = 0; i < n; ++i)
        for (int g = 0; g < groups; ++g)
            for (int ci = 0; ci < cin_g; ++ci)
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < ww; ++xx)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const int ny = y + pad - ky;
                                const int nx = xx + pad - kx;
                                if (ny % stride != 0 || nx % stride != 0) continue;
                                const int oy = ny / stride, ox = nx / stride;
                                if (oy < 0 || oy >= oh || ox < 0 || ox >= ow) continue;
                                for (int co = 0; co < cout_g; ++co)
                                    out.at4(i, g * cout_g + co, oy, ox) +=
                                        x.at4(i, g * cin_g + ci, y, xx) *
                                        w.at4(g * cout_g + co, ci, ky, kx);
                            }
    if (!bias.empty())
        for (int i = 0; i < n; ++i)
            for (int co = 0; co < cout; ++co)
                for (int y = 0; y < oh; ++y)
                    for (int xx = 0; xx < ow; ++xx)
                        out.at4(i, co, y, xx) += bias[static_cast<std::size_t>(co)];
    return out;
}

// Separable bilinear upsample: interpolate all rows horizontally first, then
// the intermediate vertically. Half-pixel centers, edges clamped.
inline forgesem::TensorT<double> bilinear_naive(const forgesem::TensorT<double>& x,
                                                int factor) {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int oh = h * factor, ow = w * factor;
    auto src_of = [factor](int o, int size) {
        double s = (o + 0.5) / factor - 0.5;
        if (s < 0) s = 0;
        if (s > size - 1) s = size - 1;
        return s;
    };
    forgesem::TensorT<double> mid = forgesem::TensorT<double>::zeros({n, c, h, ow});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j)
            for (int y = 0; y < h; ++y)
                for (int o = 0; o < ow; ++o) {
                    const double s = src_of(o, w);
                    const int x0 = static_cast<int>(std::floor(s));
                    const int x1 = x0 + 1 < w ? x0 + 1 : x0;
                    const double f = s - x0;
                    mid.at4(i, j, y, o) =
                        (1.0 - f) * x.at4(i, j, y, x0) + f * x.at4(i, j, y, x1);
                }
    forgesem::TensorT<double> out = forgesem::TensorT<double>::zeros({n, c, oh, ow});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j)
            for (int o = 0; o < oh; ++o) {
                const double s = src_of(o, h);
                const int y0 = static_cast<int>(std::floor(s));
                const int y1 = y0 + 1 < h ? y0 + 1 : y0;
                const double f = s - y0;
                for (int xx = 0; xx < ow; ++xx)
                    out.at4(i, j, o, xx) = (1.0 - f) * mid.at4(i, j, y0, xx) +
                                           f * mid.at4(i, j, y1, xx);
            }
    return out;
}

// Straight row-times-matrix product.
inline forgesem::TensorT<double> linear_naive(const forgesem::TensorT<double>& x,
                                              const forgesem::TensorT<double>& w,
                                              const std::vector<double>& bias) {
    const int n = x.dim(0), f = x.dim(1), k = w.dim(1);
    forgesem::TensorT<double> out = forgesem::TensorT<double>::zeros({n, k});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < f; ++j)
            for (int o = 0; o < k; ++o)
                out.at2(i, o) += x.at2(i, j) * w.at2(j, o);
    if (!bias.empty())
        for (int i = 0; i < n; ++i)
            for (int o = 0; o < k; ++o) out.at2(i, o) += bias[static_cast<std::size_t>(o)];
    return out;
}

// O(n^2) Mann-Whitney pair counting, ties worth half.
inline double auc_pairs(const std::vector<double>& pos, const std::vector<double>& neg) {
    double wins = 0.0;
    for (double p : pos)
        for (double q : neg) {
            if (p > q) wins += 1.0;
            else if (p == q) wins += 0.5;
        }
    return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

} // namespace oracles
