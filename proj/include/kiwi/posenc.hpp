#pragma once

#include <cmath>
#include <cstdint>

#include "kiwi/tensor.hpp"

namespace kiwi::posenc {

// Fixed sinusoidal features; never trained.

// (1, dim) feature row for a continuous scalar (e.g. a timestep in [0,1]).
inline Tensor scalar_features(double t, int64_t dim) {
    Tensor f({1, dim});
    const int64_t half = dim / 2;
    for (int64_t k = 0; k < half; ++k) {
        const double freq = std::pow(10000.0, -static_cast<double>(k) / std::max<int64_t>(1, half));
        f[2 * k] = std::sin(t * freq * 1000.0);
        f[2 * k + 1] = std::cos(t * freq * 1000.0);
    }
    if (dim % 2) f[dim - 1] = t;
    return f;
}

// (n, dim) table of standard transformer position encodings, positions
// offset.. offset+n-1.
inline Tensor sequence_positions(int64_t n, int64_t dim, int64_t offset = 0) {
    Tensor p({n, dim});
    for (int64_t i = 0; i < n; ++i) {
        const double pos = static_cast<double>(i + offset);
        for (int64_t j = 0; j < dim; j += 2) {
            const double freq = std::pow(10000.0, -static_cast<double>(j) / dim);
            p.at(i, j) = std::sin(pos * freq);
            if (j + 1 < dim) p.at(i, j + 1) = std::cos(pos * freq);
        }
    }
    return p;
}

// One (1, dim) row for a spatiotemporal coordinate; dim is split into three
// bands for (t, y, x).
inline Tensor coord3_features(int64_t ti, int64_t yi, int64_t xi, int64_t dim) {
    Tensor p({1, dim});
    const int64_t band = dim / 3;
    const int64_t coords[3] = {ti, yi, xi};
    for (int b = 0; b < 3; ++b) {
        const int64_t begin = b * band;
        const int64_t end = b == 2 ? dim : begin + band;
        const double pos = static_cast<double>(coords[b]);
        for (int64_t j = begin; j < end; j += 2) {
            const double freq = std::pow(10000.0, -static_cast<double>(j - begin) /
                                                      std::max<int64_t>(1, end - begin));
            p[j] = std::sin(pos * freq);
            if (j + 1 < end) p[j + 1] = std::cos(pos * freq);
        }
    }
    return p;
}

} // namespace kiwi::posenc
