#pragma once

#include "kiwi/tensor.hpp"

namespace kiwi::codec {

// Exact invertible video codec: space-to-channel rearrangement of
// non-overlapping f x f pixel blocks. No learning, no loss; the generator
// interface stays "latents in, latents out".

struct LatentVideo {
    Tensor data; // (T, H/f, W/f, 3*f*f)
    int factor = 4;
};

// v: (T,H,W,3) with H,W divisible by f. Channel layout of each latent cell:
// c' = (dy*f + dx)*3 + c for the pixel at block offset (dy,dx).
LatentVideo encode(const Tensor& v, int f);
Tensor decode(const LatentVideo& z);

} // namespace kiwi::codec
