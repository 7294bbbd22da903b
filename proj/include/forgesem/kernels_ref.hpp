#pragma once

#include "forgesem/kernels.hpp"

// Serial reference kernels. Same per-element accumulation order as the
// OpenMP versions in kernels.hpp, so outputs must match bit for bit; the
// tests assert that and the benchmark compares their speed.

namespace forgesem::kernref {

using kern::Conv2dDims;

template <typename T>
void conv2d_forward(T* out, const T* in, const T* wgt, const T* bias, const Conv2dDims& d) {
    const int oh = d.out_h(), ow = d.out_w();
    const int cin_g = d.cin / d.groups, cout_g = d.cout / d.groups;
    for (int n = 0; n < d.n; ++n) {
        for (int co = 0; co < d.cout; ++co) {
            const int g = co / cout_g;
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = bias ? static_cast<double>(bias[co]) : 0.0;
                    for (int cil = 0; cil < cin_g; ++cil) {
                        const int ci = g * cin_g + cil;
                        for (int ky = 0; ky < d.k; ++ky) {
                            const int y = oy * d.stride - d.pad + ky;
                            if (y < 0 || y >= d.h) continue;
                            for (int kx = 0; kx < d.k; ++kx) {
                                const int x = ox * d.stride - d.pad + kx;
                                if (x < 0 || x >= d.w) continue;
                                acc += static_cast<double>(
                                           in[((static_cast<std::size_t>(n) * d.cin + ci) * d.h + y) * d.w + x]) *
                                       static_cast<double>(
                                           wgt[((static_cast<std::size_t>(co) * cin_g + cil) * d.k + ky) * d.k + kx]);
                            }
                        }
                    }
                    out[((static_cast<std::size_t>(n) * d.cout + co) * oh + oy) * ow + ox] =
                        static_cast<T>(acc);
                }
            }
        }
    }
}

template <typename T>
void conv2d_backward_input(T* din, const T* dout, const T* wgt, const Conv2dDims& d) {
    const int oh = d.out_h(), ow = d.out_w();
    const int cin_g = d.cin / d.groups, cout_g = d.cout / d.groups;
    for (int n = 0; n < d.n; ++n) {
        for (int ci = 0; ci < d.cin; ++ci) {
            const int g = ci / cin_g;
            const int cil = ci % cin_g;
            for (int y = 0; y < d.h; ++y) {
                for (int x = 0; x < d.w; ++x) {
                    double acc = 0.0;
                    for (int cog = 0; cog < cout_g; ++cog) {
                        const int co = g * cout_g + cog;
                        for (int ky = 0; ky < d.k; ++ky) {
                            const int ynum = y + d.pad - ky;
                            if (ynum < 0 || ynum % d.stride != 0) continue;
                            const int oy = ynum / d.stride;
                            if (oy >= oh) continue;
                            for (int kx = 0; kx < d.k; ++kx) {
                                const int xnum = x + d.pad - kx;
                                if (xnum < 0 || xnum % d.stride != 0) continue;
                                const int ox = xnum / d.stride;
                                if (ox >= ow) continue;
                                acc += static_cast<double>(
                                           wgt[((static_cast<std::size_t>(co) * cin_g + cil) * d.k + ky) * d.k + kx]) *
                                       static_cast<double>(
                                           dout[((static_cast<std::size_t>(n) * d.cout + co) * oh + oy) * ow + ox]);
                            }
                        }
                    }
                    din[((static_cast<std::size_t>(n) * d.cin + ci) * d.h + y) * d.w + x] +=
                        static_cast<T>(acc);
                }
            }
        }
    }
}

template <typename T>
void conv2d_backward_weight(T* dwgt, const T* dout, const T* in, const Conv2dDims& d) {
    const int oh = d.out_h(), ow = d.out_w();
    const int cin_g = d.cin / d.groups, cout_g = d.cout / d.groups;
    for (int co = 0; co < d.cout; ++co) {
        const int g = co / cout_g;
        for (int cil = 0; cil < cin_g; ++cil) {
            const int ci = g * cin_g + cil;
            for (int ky = 0; ky < d.k; ++ky) {
                for (int kx = 0; kx < d.k; ++kx) {
                    double acc = 0.0;
                    for (int n = 0; n < d.n; ++n) {
                        for (int oy = 0; oy < oh; ++oy) {
                            const int y = oy * d.stride - d.pad + ky;
                            if (y < 0 || y >= d.h) continue;
                            for (int ox = 0; ox < ow; ++ox) {
                                const int x = ox * d.stride - d.pad + kx;
                                if (x < 0 || x >= d.w) continue;
                                acc += static_cast<double>(
                                           dout[((static_cast<std::size_t>(n) * d.cout + co) * oh + oy) * ow + ox]) *
                                       static_cast<double>(
                                           in[((static_cast<std::size_t>(n) * d.cin + ci) * d.h + y) * d.w + x]);
                            }
                        }
                    }
                    dwgt[((static_cast<std::size_t>(co) * cin_g + cil) * d.k + ky) * d.k + kx] +=
                        static_cast<T>(acc);
                }
            }
        }
    }
}

template <typename T>
void linear_forward(T* out, const T* x, const T* wgt, const T* bias, int n, int f, int k) {
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < k; ++j) {
            double acc = bias ? static_cast<double>(bias[j]) : 0.0;
            for (int t = 0; t < f; ++t)
                acc += static_cast<double>(x[static_cast<std::size_t>(i) * f + t]) *
                       static_cast<double>(wgt[static_cast<std::size_t>(t) * k + j]);
            out[static_cast<std::size_t>(i) * k + j] = static_cast<T>(acc);
        }
    }
}

} // namespace forgesem::kernref
