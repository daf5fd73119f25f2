#include "kiwi/codec.hpp"

#include <stdexcept>

namespace kiwi::codec {

LatentVideo encode(const Tensor& v, int f) {
    if (v.ndim() != 4 || v.shape()[3] != 3)
        throw std::invalid_argument("encode expects (T,H,W,3), got " + shape_str(v));
    if (f < 1) throw std::invalid_argument("spatial factor must be >= 1");
    const int64_t T = v.shape()[0], H = v.shape()[1], W = v.shape()[2];
    if (H % f != 0 || W % f != 0)
        throw std::invalid_argument("H and W must be divisible by factor " + std::to_string(f));
    const int64_t h = H / f, w = W / f, C = 3LL * f * f;
    LatentVideo z{Tensor({T, h, w, C}), f};
    for (int64_t t = 0; t < T; ++t)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                const int64_t by = y / f, bx = x / f, dy = y % f, dx = x % f;
                const int64_t cbase = (dy * f + dx) * 3;
                for (int64_t c = 0; c < 3; ++c)
                    z.data[((t * h + by) * w + bx) * C + cbase + c] =
                        v[((t * H + y) * W + x) * 3 + c];
            }
    return z;
}

Tensor decode(const LatentVideo& z) {
    const int f = z.factor;
    if (z.data.ndim() != 4 || f < 1 || z.data.shape()[3] != 3LL * f * f)
        throw std::invalid_argument("decode: malformed latent " + shape_str(z.data) +
                                    " for factor " + std::to_string(f));
    const int64_t T = z.data.shape()[0], h = z.data.shape()[1], w = z.data.shape()[2];
    const int64_t H = h * f, W = w * f, C = 3LL * f * f;
    Tensor v({T, H, W, 3});
    for (int64_t t = 0; t < T; ++t)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                const int64_t by = y / f, bx = x / f, dy = y % f, dx = x % f;
                const int64_t cbase = (dy * f + dx) * 3;
                for (int64_t c = 0; c < 3; ++c)
                    v[((t * H + y) * W + x) * 3 + c] =
                        z.data[((t * h + by) * w + bx) * C + cbase + c];
            }
    return v;
}

} // namespace kiwi::codec
