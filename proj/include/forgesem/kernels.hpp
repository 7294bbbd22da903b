#pragma once

#include <cstddef>
#include <cstdint>

#include "forgesem/common.hpp"

// OpenMP-parallel compute kernels. Parallelism is always over independent
// output elements; every reduction runs serially inside one element in a
// fixed order with a double accumulator, so results are bit-identical for
// any thread count. kernels_ref.hpp holds the serial counterparts used by
// the tests and the benchmark.

namespace forgesem::kern {

inline constexpr std::size_t kOmpGrain = 2048;

struct Conv2dDims {
    int n = 0, cin = 0, h = 0, w = 0;
    int cout = 0, k = 0, stride = 1, pad = 0, groups = 1;

    int out_h() const { return (h + 2 * pad - k) / stride + 1; }
    int out_w() const { return (w + 2 * pad - k) / stride + 1; }

    void validate() const {
        FORGESEM_CHECK(n > 0 && cin > 0 && h > 0 && w > 0 && cout > 0, "conv2d: empty dims");
        FORGESEM_CHECK(k >= 1 && k % 2 == 1, "conv2d: kernel size must be odd");
        FORGESEM_CHECK(stride >= 1, "conv2d: stride must be >= 1");
        FORGESEM_CHECK(pad >= 0, "conv2d: padding must be >= 0");
        FORGESEM_CHECK(groups >= 1 && cin % groups == 0 && cout % groups == 0,
                       "conv2d: channels not divisible by groups");
        FORGESEM_CHECK(out_h() >= 1 && out_w() >= 1, "conv2d: output would be empty");
    }
};

// in: N*Cin*H*W, wgt: Cout*(Cin/groups)*k*k, bias: Cout or null, out: N*Cout*OH*OW
template <typename T>
void conv2d_forward(T* out, const T* in, const T* wgt, const T* bias, const Conv2dDims& d) {
    const int oh = d.out_h(), ow = d.out_w();
    const int cin_g = d.cin / d.groups, cout_g = d.cout / d.groups;
    const std::int64_t tasks = static_cast<std::int64_t>(d.n) * d.cout;
#pragma omp parallel for schedule(static) if (tasks* oh* ow* cin_g* d.k* d.k > (std::int64_t)kOmpGrain)
    for (std::int64_t t = 0; t < tasks; ++t) {
        const int n = static_cast<int>(t / d.cout);
        const int co = static_cast<int>(t % d.cout);
        const int g = co / cout_g;
        const T* in_n = in + (static_cast<std::size_t>(n) * d.cin + g * cin_g) * d.h * d.w;
        const T* w_co = wgt + static_cast<std::size_t>(co) * cin_g * d.k * d.k;
        T* out_p = out + (static_cast<std::size_t>(n) * d.cout + co) * oh * ow;
        const double b = bias ? static_cast<double>(bias[co]) : 0.0;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                double acc = b;
                const int y0 = oy * d.stride - d.pad;
                const int x0 = ox * d.stride - d.pad;
                for (int cil = 0; cil < cin_g; ++cil) {
                    const T* in_c = in_n + static_cast<std::size_t>(cil) * d.h * d.w;
                    const T* w_c = w_co + static_cast<std::size_t>(cil) * d.k * d.k;
                    for (int ky = 0; ky < d.k; ++ky) {
                        const int y = y0 + ky;
                        if (y < 0 || y >= d.h) continue;
                        for (int kx = 0; kx < d.k; ++kx) {
                            const int x = x0 + kx;
                            if (x < 0 || x >= d.w) continue;
                            acc += static_cast<double>(in_c[static_cast<std::size_t>(y) * d.w + x]) *
                                   static_cast<double>(w_c[ky * d.k + kx]);
                        }
                    }
                }
                out_p[static_cast<std::size_t>(oy) * ow + ox] = static_cast<T>(acc);
            }
        }
    }
}

// Gather formulation: each input-gradient element sums the output gradients
// that touched it, so threads never write the same slot.
template <typename T>
void conv2d_backward_input(T* din, const T* dout, const T* wgt, const Conv2dDims& d) {
    const int oh = d.out_h(), ow = d.out_w();
    const int cin_g = d.cin / d.groups, cout_g = d.cout / d.groups;
    const std::int64_t tasks = static_cast<std::int64_t>(d.n) * d.cin;
#pragma omp parallel for schedule(static) if (tasks* d.h* d.w* cout_g* d.k > (std::int64_t)kOmpGrain)
    for (std::int64_t t = 0; t < tasks; ++t) {
        const int n = static_cast<int>(t / d.cin);
        const int ci = static_cast<int>(t % d.cin);
        const int g = ci / cin_g;
        const int cil = ci % cin_g;
        T* din_p = din + (static_cast<std::size_t>(n) * d.cin + ci) * d.h * d.w;
        for (int y = 0; y < d.h; ++y) {
            for (int x = 0; x < d.w; ++x) {
                double acc = 0.0;
                for (int cog = 0; cog < cout_g; ++cog) {
                    const int co = g * cout_g + cog;
                    const T* w_c = wgt + (static_cast<std::size_t>(co) * cin_g + cil) * d.k * d.k;
                    const T* dout_p = dout + (static_cast<std::size_t>(n) * d.cout + co) * oh * ow;
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
                            acc += static_cast<double>(w_c[ky * d.k + kx]) *
                                   static_cast<double>(dout_p[static_cast<std::size_t>(oy) * ow + ox]);
                        }
                    }
                }
                din_p[static_cast<std::size_t>(y) * d.w + x] += static_cast<T>(acc);
            }
        }
    }
}

template <typename T>
void conv2d_backward_weight(T* dwgt, const T* dout, const T* in, const Conv2dDims& d) {
    const int oh = d.out_h(), ow = d.out_w();
    const int cin_g = d.cin / d.groups, cout_g = d.cout / d.groups;
    const std::int64_t tasks = static_cast<std::int64_t>(d.cout) * cin_g * d.k * d.k;
#pragma omp parallel for schedule(static) if (tasks* d.n* oh* ow > (std::int64_t)kOmpGrain)
    for (std::int64_t t = 0; t < tasks; ++t) {
        const int co = static_cast<int>(t / (cin_g * d.k * d.k));
        const int rem = static_cast<int>(t % (cin_g * d.k * d.k));
        const int cil = rem / (d.k * d.k);
        const int ky = (rem / d.k) % d.k;
        const int kx = rem % d.k;
        const int g = co / cout_g;
        const int ci = g * cin_g + cil;
        double acc = 0.0;
        for (int n = 0; n < d.n; ++n) {
            const T* in_c = in + (static_cast<std::size_t>(n) * d.cin + ci) * d.h * d.w;
            const T* dout_p = dout + (static_cast<std::size_t>(n) * d.cout + co) * oh * ow;
            for (int oy = 0; oy < oh; ++oy) {
                const int y = oy * d.stride - d.pad + ky;
                if (y < 0 || y >= d.h) continue;
                for (int ox = 0; ox < ow; ++ox) {
                    const int x = ox * d.stride - d.pad + kx;
                    if (x < 0 || x >= d.w) continue;
                    acc += static_cast<double>(dout_p[static_cast<std::size_t>(oy) * ow + ox]) *
                           static_cast<double>(in_c[static_cast<std::size_t>(y) * d.w + x]);
                }
            }
        }
        dwgt[t] += static_cast<T>(acc);
    }
}

template <typename T>
void conv2d_backward_bias(T* dbias, const T* dout, const Conv2dDims& d) {
    const int oh = d.out_h(), ow = d.out_w();
#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(d.cout) * d.n * oh * ow > (std::int64_t)kOmpGrain)
    for (int co = 0; co < d.cout; ++co) {
        double acc = 0.0;
        for (int n = 0; n < d.n; ++n) {
            const T* dout_p = dout + (static_cast<std::size_t>(n) * d.cout + co) * oh * ow;
            for (int i = 0; i < oh * ow; ++i) acc += static_cast<double>(dout_p[i]);
        }
        dbias[co] += static_cast<T>(acc);
    }
}

// y[n,k] = sum_f x[n,f] * w[f,k] + b[k]
template <typename T>
void linear_forward(T* out, const T* x, const T* wgt, const T* bias, int n, int f, int k) {
#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(n) * k * f > (std::int64_t)kOmpGrain)
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

template <typename T>
void linear_backward(T* dx, T* dwgt, T* dbias, const T* dout, const T* x, const T* wgt,
                     int n, int f, int k) {
    if (dx) {
#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(n) * f * k > (std::int64_t)kOmpGrain)
        for (int i = 0; i < n; ++i) {
            for (int t = 0; t < f; ++t) {
                double acc = 0.0;
                for (int j = 0; j < k; ++j)
                    acc += static_cast<double>(dout[static_cast<std::size_t>(i) * k + j]) *
                           static_cast<double>(wgt[static_cast<std::size_t>(t) * k + j]);
                dx[static_cast<std::size_t>(i) * f + t] += static_cast<T>(acc);
            }
        }
    }
    if (dwgt) {
#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(f) * k * n > (std::int64_t)kOmpGrain)
        for (int t = 0; t < f; ++t) {
            for (int j = 0; j < k; ++j) {
                double acc = 0.0;
                for (int i = 0; i < n; ++i)
                    acc += static_cast<double>(x[static_cast<std::size_t>(i) * f + t]) *
                           static_cast<double>(dout[static_cast<std::size_t>(i) * k + j]);
                dwgt[static_cast<std::size_t>(t) * k + j] += static_cast<T>(acc);
            }
        }
    }
    if (dbias) {
        for (int j = 0; j < k; ++j) {
            double acc = 0.0;
            for (int i = 0; i < n; ++i)
                acc += static_cast<double>(dout[static_cast<std::size_t>(i) * k + j]);
            dbias[j] += static_cast<T>(acc);
        }
    }
}

} // namespace forgesem::kern
