#pragma once

#include <cmath>
#include <vector>

#include "forgesem/autograd.hpp"
#include "forgesem/log.hpp"
#include "forgesem/ops.hpp"
#include "forgesem/tensor.hpp"

namespace forgesem {

// Adaptive high-pass filter bank. Weights are stored in depthwise-conv
// layout {channels, 1, k, k} so application is a grouped conv2d. The
// projection runs outside the autograd graph: it rewrites the raw parameter
// tensor after each optimizer step.

// g = E - G/sum(G): identity minus a normalized Gaussian. Sums to zero.
template <typename T>
TensorT<T> ahf_init_tensor(int k, double sigma, int channels) {
    FORGESEM_CHECK(k >= 3 && k % 2 == 1, "ahf: kernel size must be odd and >= 3");
    FORGESEM_CHECK(sigma > 0.0, "ahf: sigma must be positive");
    FORGESEM_CHECK(channels >= 1, "ahf: channels must be >= 1");
    const int half = k / 2;
    std::vector<double> gauss(static_cast<std::size_t>(k) * k);
    double total = 0.0;
    for (int y = -half; y <= half; ++y)
        for (int x = -half; x <= half; ++x) {
            const double v = std::exp(-(x * x + y * y) / (2.0 * sigma * sigma));
            gauss[static_cast<std::size_t>(y + half) * k + (x + half)] = v;
            total += v;
        }
    TensorT<T> w({channels, 1, k, k});
    for (int c = 0; c < channels; ++c)
        for (int i = 0; i < k * k; ++i) {
            const double e = (i == (half * k + half)) ? 1.0 : 0.0;
            w[static_cast<std::size_t>(c) * k * k + i] =
                static_cast<T>(e - gauss[static_cast<std::size_t>(i)] / total);
        }
    return w;
}

// Center forced to -1, remaining weights rescaled so they sum to 1
// (zero-DC). Degenerate denominators fall back to a uniform ring, which
// keeps the zero-DC property. Sums run in double so the invariants hold to
// f32 roundoff regardless of k.
template <typename T>
void ahf_project_tensor(TensorT<T>& w) {
    FORGESEM_CHECK(w.rank() == 4 && w.dim(1) == 1 && w.dim(2) == w.dim(3),
                   "ahf: weights must be {channels,1,k,k}");
    const int channels = w.dim(0), k = w.dim(2);
    const int center = (k / 2) * k + (k / 2);
    for (int c = 0; c < channels; ++c) {
        T* g = w.data() + static_cast<std::size_t>(c) * k * k;
        double sum = 0.0;
        for (int i = 0; i < k * k; ++i) sum += static_cast<double>(g[i]);
        const double den = sum - static_cast<double>(g[center]);
        if (std::fabs(den) <= 1e-8) {
            log_warn("ahf_project: degenerate denominator on channel " + std::to_string(c) +
                     ", resetting to uniform ring");
            const T ring = static_cast<T>(1.0 / (k * k - 1));
            for (int i = 0; i < k * k; ++i) g[i] = ring;
        } else {
            for (int i = 0; i < k * k; ++i)
                g[i] = static_cast<T>(static_cast<double>(g[i]) / den);
        }
        g[center] = T(-1);
    }
}

// Depthwise application: one kernel per channel, stride 1, same-size
// zero padding.
template <typename T>
ValueT<T> ahf_apply(const ValueT<T>& kernel, const ValueT<T>& x) {
    FORGESEM_CHECK(kernel->value.rank() == 4 && kernel->value.dim(1) == 1,
                   "ahf: kernel must be {channels,1,k,k}");
    FORGESEM_CHECK(x->value.rank() == 4, "ahf: input must be NCHW");
    const int channels = kernel->value.dim(0);
    const int k = kernel->value.dim(2);
    FORGESEM_CHECK(x->value.dim(1) == channels,
                   "ahf: kernel channels != input channels");
    return ops::conv2d(x, kernel, 1, k / 2, channels);
}

template <typename T>
struct MhfePyramidT {
    std::vector<ValueT<T>> levels;
};

using MhfePyramid = MhfePyramidT<float>;

template <typename T>
struct MhfeMixerT {
    ValueT<T> weight;
    ValueT<T> bias;
};

using MhfeMixer = MhfeMixerT<float>;

// Level l: 3x3 conv mixer over the AHF response of the l-times 2x2
// average-pooled input. Level 0 is full resolution.
template <typename T>
MhfePyramidT<T> mhfe_forward(const ValueT<T>& x, int levels,
                             const std::vector<ValueT<T>>& kernels,
                             const std::vector<MhfeMixerT<T>>& mixers) {
    FORGESEM_CHECK(levels >= 1, "mhfe: levels must be >= 1");
    FORGESEM_CHECK(static_cast<int>(kernels.size()) == levels &&
                       static_cast<int>(mixers.size()) == levels,
                   "mhfe: one kernel and one mixer per level");
    MhfePyramidT<T> out;
    ValueT<T> cur = x;
    for (int l = 0; l < levels; ++l) {
        if (l > 0) cur = ops::avg_pool2x2(cur);
        auto hf = ahf_apply(kernels[static_cast<std::size_t>(l)], cur);
        out.levels.push_back(
            ops::conv2d(hf, mixers[static_cast<std::size_t>(l)].weight,
                        mixers[static_cast<std::size_t>(l)].bias, 1, 1));
    }
    return out;
}

// Convenience bundle for diagnostics and the fixed input-stream filter.
struct AhfKernel {
    int k = 3;
    float sigma = 1.0f;
    int channels = 1;
    Tensor weights;
};

inline AhfKernel ahf_init(int k, float sigma, int channels) {
    AhfKernel a;
    a.k = k;
    a.sigma = sigma;
    a.channels = channels;
    a.weights = ahf_init_tensor<float>(k, sigma, channels);
    return a;
}

inline void ahf_project(AhfKernel& a) { ahf_project_tensor(a.weights); }

// Fixed (unlearned) projected filter used for the raw-image high-frequency
// stream.
inline AhfKernel fixed_highpass(int k, int channels) {
    AhfKernel a = ahf_init(k, 1.0f, channels);
    ahf_project(a);
    return a;
}

// Magnitude of the n x n DFT of one channel's zero-padded kernel.
TensorT<double> freq_response(const AhfKernel& kernel, int channel, int n);

// CSV grid, row-major, header "n=<n>".
std::string freq_response_csv(const TensorT<double>& grid);

} // namespace forgesem
