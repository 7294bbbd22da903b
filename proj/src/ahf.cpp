#include "forgesem/ahf.hpp"

#include <complex>
#include <sstream>

namespace forgesem {

// Separable evaluation: 1-d transforms along rows, then along columns.
TensorT<double> freq_response(const AhfKernel& kernel, int channel, int n) {
    const int k = kernel.k;
    FORGESEM_CHECK(n >= k, "freq_response: n must be >= kernel size");
    FORGESEM_CHECK(channel >= 0 && channel < kernel.channels,
                   "freq_response: channel out of range");
    const float* w = kernel.weights.data() + static_cast<std::size_t>(channel) * k * k;

    const double tau = 6.283185307179586476925286766559;
    // rows[u][x] = sum_y w(y,x) e^{-i tau u y / n}
    std::vector<std::complex<double>> rows(static_cast<std::size_t>(n) * k);
    for (int u = 0; u < n; ++u)
        for (int x = 0; x < k; ++x) {
            std::complex<double> acc(0.0, 0.0);
            for (int y = 0; y < k; ++y) {
                const double ang = -tau * u * y / n;
                acc += static_cast<double>(w[y * k + x]) *
                       std::complex<double>(std::cos(ang), std::sin(ang));
            }
            rows[static_cast<std::size_t>(u) * k + x] = acc;
        }

    TensorT<double> out({n, n});
    for (int u = 0; u < n; ++u)
        for (int v = 0; v < n; ++v) {
            std::complex<double> acc(0.0, 0.0);
            for (int x = 0; x < k; ++x) {
                const double ang = -tau * v * x / n;
                acc += rows[static_cast<std::size_t>(u) * k + x] *
                       std::complex<double>(std::cos(ang), std::sin(ang));
            }
            out.at2(u, v) = std::abs(acc);
        }
    return out;
}

std::string freq_response_csv(const TensorT<double>& grid) {
    std::ostringstream os;
    const int n = grid.dim(0);
    os << "n=" << n << "\n";
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) os << (c ? "," : "") << grid.at2(r, c);
        os << "\n";
    }
    return os.str();
}

} // namespace forgesem
