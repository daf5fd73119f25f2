#pragma once

#include <optional>
#include <string>

#include "kiwi/autodiff.hpp"
#include "kiwi/codec.hpp"
#include "kiwi/conditioning.hpp"
#include "kiwi/params.hpp"

namespace kiwi::dit {

// Miniature diffusion transformer with hybrid structural conditioning:
// element-wise source injection scaled by a learnable timestep scalar, and
// reference tokens appended to the self-attention sequence. Conditioning
// context enters through cross-attention key/values.

enum class InjectionMode { AddScaled, AddUnscaled, AddSharedEmbed, ChannelConcat };

const char* injection_mode_name(InjectionMode m);
InjectionMode injection_mode_from_name(const std::string& s);

struct DiTConfig {
    int dim = 128;
    int depth = 4;
    int heads = 4;
    int pt = 1, ph = 2, pw = 2;           // patch extents over the latent grid
    InjectionMode injection = InjectionMode::AddScaled;
    bool reference_concat = true;
    int latent_channels = 48;             // 3 * f^2 from the codec
    int codec_factor = 4;                 // used to patchify reference images
    int time_feat = 32;                   // sinusoidal feature width for t
};

struct TokenSequence {
    ad::Var data;          // (N, dim)
    int64_t n_video = 0;   // leading video tokens; remainder are reference
    // latent grid tiling of the video tokens
    int64_t gt = 0, gy = 0, gx = 0;
};

class EditorDiT {
public:
    EditorDiT(const DiTConfig& cfg, uint64_t init_seed, ParamStore& store);

    const DiTConfig& config() const { return cfg_; }

    // gamma(t) = 1 + zero-initialized linear head over sinusoidal features;
    // identically 1 at init.
    ad::Var gamma(double t) const;

    // Linear patch embedding of a latent grid. The source branch uses its own
    // zero-initialized weights.
    ad::Var patch_embed(const codec::LatentVideo& z, bool source_branch) const;

    // Combine the noisy and source token streams per the configured mode.
    // ChannelConcat takes raw latents instead (see forward()).
    ad::Var source_inject(const ad::Var& noisy_tokens, const ad::Var& source_tokens,
                          double t) const;

    // Appends reference tokens (codec + main patch embed + role embedding,
    // positions at one time step past the video) when reference_concat is on.
    TokenSequence ref_concat(TokenSequence seq, const std::optional<Tensor>& reference) const;

    // Full forward: velocity prediction with the shape of `noisy`.
    // source == nullptr removes the source branch entirely.
    ad::Var forward(const codec::LatentVideo& noisy,
                    const codec::LatentVideo* source,
                    double t,
                    const cond::ContextTokens& context,
                    const std::optional<Tensor>& reference = std::nullopt) const;

private:
    ad::Var embed_tokens(const codec::LatentVideo& noisy,
                         const codec::LatentVideo* source, double t,
                         int64_t& gt, int64_t& gy, int64_t& gx) const;
    ad::Var block(const ad::Var& x, int layer, const ad::Var& time_emb,
                  const cond::ContextTokens& context) const;
    ad::Var self_attention(const ad::Var& h, int layer) const;
    ad::Var cross_attention(const ad::Var& h, int layer, const ad::Var& context) const;

    DiTConfig cfg_;
    ParamStore* store_;
};

} // namespace kiwi::dit
