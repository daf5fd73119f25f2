#include "kiwi/dit.hpp"

#include <cmath>
#include <stdexcept>

#include "kiwi/posenc.hpp"
#include "kiwi/rng.hpp"

namespace kiwi::dit {

const char* injection_mode_name(InjectionMode m) {
    switch (m) {
        case InjectionMode::AddScaled: return "add_scaled";
        case InjectionMode::AddUnscaled: return "add_unscaled";
        case InjectionMode::AddSharedEmbed: return "add_shared_embed";
        case InjectionMode::ChannelConcat: return "channel_concat";
    }
    return "?";
}

InjectionMode injection_mode_from_name(const std::string& s) {
    if (s == "add_scaled") return InjectionMode::AddScaled;
    if (s == "add_unscaled") return InjectionMode::AddUnscaled;
    if (s == "add_shared_embed") return InjectionMode::AddSharedEmbed;
    if (s == "channel_concat") return InjectionMode::ChannelConcat;
    throw std::invalid_argument("unknown injection mode: " + s);
}

EditorDiT::EditorDiT(const DiTConfig& cfg, uint64_t init_seed, ParamStore& store)
    : cfg_(cfg), store_(&store) {
    if (cfg.dim % cfg.heads != 0)
        throw std::invalid_argument("dit dim must be divisible by heads");
    Rng rng(Rng::seed_mix(init_seed, 0xD17D17ull));
    const int64_t d = cfg.dim;
    const int64_t patch_in = static_cast<int64_t>(cfg.pt) * cfg.ph * cfg.pw * cfg.latent_channels;

    auto w = [&](int64_t in, int64_t out) { return rng.randn({in, out}, 0.02); };

    store.add("dit", "main_patch_w", w(patch_in, d));
    store.add("dit", "main_patch_b", Tensor::zeros({1, d}));
    if (cfg.injection == InjectionMode::ChannelConcat) {
        store.add("dit", "wide_patch_w", w(2 * patch_in, d));
        store.add("dit", "wide_patch_b", Tensor::zeros({1, d}));
    } else {
        // zero-initialized source branch: annihilates the source term at init
        store.add("dit", "src_patch_w", Tensor::zeros({patch_in, d}));
        store.add("dit", "src_patch_b", Tensor::zeros({1, d}));
    }
    store.add("dit", "gamma_w", Tensor::zeros({cfg.time_feat, 1}));
    // zero-init timestep-scaled residual paths from the noisy/source latents
    // straight to the output: at desk scale the head is narrower than a
    // latent patch, so without them the velocity cannot carry z_t through.
    // the scalars get a small MLP over the time features because the
    // coefficients they must learn are steep in t near 1
    for (const char* nm : {"skip_noisy", "skip_src"}) {
        store.add("dit", std::string(nm) + "_w1", w(cfg.time_feat, cfg.time_feat));
        store.add("dit", std::string(nm) + "_b1", Tensor::zeros({1, cfg.time_feat}));
        store.add("dit", std::string(nm) + "_w2", Tensor::zeros({cfg.time_feat, 1}));
    }
    store.add("dit", "time_w1", w(cfg.time_feat, d));
    store.add("dit", "time_b1", Tensor::zeros({1, d}));
    store.add("dit", "time_w2", w(d, d));
    store.add("dit", "time_b2", Tensor::zeros({1, d}));
    store.add("dit", "role_ref", rng.randn({1, d}, 0.02));

    for (int l = 0; l < cfg.depth; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        for (const char* nm : {"sa_q", "sa_k", "sa_v", "sa_o", "ca_q", "ca_k", "ca_v", "ca_o"}) {
            store.add("dit", p + nm + "_w", w(d, d));
            store.add("dit", p + nm + "_b", Tensor::zeros({1, d}));
        }
        // adaptive layernorm heads start at zero: modulation is the identity
        // until trained
        for (const char* nm : {"mod1_scale", "mod1_shift", "mod2_scale", "mod2_shift"}) {
            store.add("dit", p + nm + "_w", Tensor::zeros({d, d}));
            store.add("dit", p + nm + "_b", Tensor::zeros({1, d}));
        }
        store.add("dit", p + "ffn1_w", w(d, 4 * d));
        store.add("dit", p + "ffn1_b", Tensor::zeros({1, 4 * d}));
        store.add("dit", p + "ffn2_w", w(4 * d, d));
        store.add("dit", p + "ffn2_b", Tensor::zeros({1, d}));
    }
    store.add("dit", "head_w", w(d, patch_in));
    store.add("dit", "head_b", Tensor::zeros({1, patch_in}));
}

ad::Var EditorDiT::gamma(double t) const {
    ad::Var feats = ad::constant(posenc::scalar_features(t, cfg_.time_feat));
    ad::Var head = ad::matmul(feats, ad::leaf(store_->find("dit", "gamma_w")));
    return ad::add_scalar(head, 1.0);
}

namespace {

// (N, pt*ph*pw*C) rows tiling a (T,h,w,C) latent grid, t-major
Tensor patchify_latent(const Tensor& z, int pt, int ph, int pw) {
    const int64_t T = z.shape()[0], h = z.shape()[1], w = z.shape()[2], C = z.shape()[3];
    if (T % pt != 0 || h % ph != 0 || w % pw != 0)
        throw std::invalid_argument("latent grid " + shape_str(z) + " not divisible by patch");
    const int64_t gt = T / pt, gy = h / ph, gx = w / pw;
    Tensor out({gt * gy * gx, static_cast<int64_t>(pt) * ph * pw * C});
    int64_t row = 0;
    for (int64_t ti = 0; ti < gt; ++ti)
        for (int64_t yi = 0; yi < gy; ++yi)
            for (int64_t xi = 0; xi < gx; ++xi, ++row) {
                int64_t col = 0;
                for (int64_t dt = 0; dt < pt; ++dt)
                    for (int64_t dy = 0; dy < ph; ++dy)
                        for (int64_t dx = 0; dx < pw; ++dx)
                            for (int64_t c = 0; c < C; ++c)
                                out.at(row, col++) = z[(((ti * pt + dt) * h + yi * ph + dy) * w +
                                                        xi * pw + dx) * C + c];
            }
    return out;
}

Tensor unpatchify_latent(const Tensor& rows, int64_t gt, int64_t gy, int64_t gx,
                         int pt, int ph, int pw, int64_t C) {
    Tensor z({gt * pt, gy * ph, gx * pw, C});
    const int64_t h = gy * ph, w = gx * pw;
    int64_t row = 0;
    for (int64_t ti = 0; ti < gt; ++ti)
        for (int64_t yi = 0; yi < gy; ++yi)
            for (int64_t xi = 0; xi < gx; ++xi, ++row) {
                int64_t col = 0;
                for (int64_t dt = 0; dt < pt; ++dt)
                    for (int64_t dy = 0; dy < ph; ++dy)
                        for (int64_t dx = 0; dx < pw; ++dx)
                            for (int64_t c = 0; c < C; ++c)
                                z[(((ti * pt + dt) * h + yi * ph + dy) * w + xi * pw + dx) * C + c] =
                                    rows.at(row, col++);
            }
    return z;
}

Tensor grid_positions(int64_t gt, int64_t gy, int64_t gx, int64_t dim, int64_t t_offset = 0) {
    Tensor p({gt * gy * gx, dim});
    int64_t row = 0;
    for (int64_t ti = 0; ti < gt; ++ti)
        for (int64_t yi = 0; yi < gy; ++yi)
            for (int64_t xi = 0; xi < gx; ++xi, ++row) {
                Tensor r = posenc::coord3_features(ti + t_offset, yi, xi, dim);
                for (int64_t j = 0; j < dim; ++j) p.at(row, j) = r[j];
            }
    return p;
}

} // namespace

ad::Var EditorDiT::patch_embed(const codec::LatentVideo& z, bool source_branch) const {
    Tensor rows = patchify_latent(z.data, cfg_.pt, cfg_.ph, cfg_.pw);
    const char* wn = source_branch ? "src_patch_w" : "main_patch_w";
    const char* bn = source_branch ? "src_patch_b" : "main_patch_b";
    return ad::add_rowvec(ad::matmul(ad::constant(std::move(rows)), ad::leaf(store_->find("dit", wn))),
                          ad::leaf(store_->find("dit", bn)));
}

ad::Var EditorDiT::source_inject(const ad::Var& noisy_tokens, const ad::Var& source_tokens,
                                 double t) const {
    if (!noisy_tokens->val.same_shape(source_tokens->val))
        throw std::invalid_argument("source_inject: token count mismatch");
    switch (cfg_.injection) {
        case InjectionMode::AddScaled:
        case InjectionMode::AddSharedEmbed:
            return ad::add(noisy_tokens, ad::scale_by(source_tokens, gamma(t)));
        case InjectionMode::AddUnscaled:
            return ad::add(noisy_tokens, source_tokens);
        case InjectionMode::ChannelConcat:
            throw std::invalid_argument("source_inject: channel_concat embeds jointly");
    }
    throw std::invalid_argument("unknown injection mode");
}

ad::Var EditorDiT::embed_tokens(const codec::LatentVideo& noisy,
                                const codec::LatentVideo* source, double t,
                                int64_t& gt, int64_t& gy, int64_t& gx) const {
    const Tensor& zt = noisy.data;
    gt = zt.shape()[0] / cfg_.pt;
    gy = zt.shape()[1] / cfg_.ph;
    gx = zt.shape()[2] / cfg_.pw;
    if (source && !source->data.same_shape(zt))
        throw std::invalid_argument("source latent shape mismatch");

    if (cfg_.injection == InjectionMode::ChannelConcat) {
        // concatenate latents along channels, then one widened embedding;
        // a missing source contributes zeros
        const int64_t C = zt.shape()[3];
        Tensor joint({zt.shape()[0], zt.shape()[1], zt.shape()[2], 2 * C});
        const int64_t cells = zt.numel() / C;
        for (int64_t i = 0; i < cells; ++i)
            for (int64_t c = 0; c < C; ++c) {
                joint[i * 2 * C + c] = zt[i * C + c];
                joint[i * 2 * C + C + c] = source ? source->data[i * C + c] : 0.0;
            }
        Tensor rows = patchify_latent(joint, cfg_.pt, cfg_.ph, cfg_.pw);
        return ad::add_rowvec(
            ad::matmul(ad::constant(std::move(rows)), ad::leaf(store_->find("dit", "wide_patch_w"))),
            ad::leaf(store_->find("dit", "wide_patch_b")));
    }

    ad::Var tokens = patch_embed(noisy, false);
    if (source) {
        ad::Var src = cfg_.injection == InjectionMode::AddSharedEmbed
                          ? patch_embed(*source, false)
                          : patch_embed(*source, true);
        tokens = source_inject(tokens, src, t);
    }
    return tokens;
}

TokenSequence EditorDiT::ref_concat(TokenSequence seq,
                                    const std::optional<Tensor>& reference) const {
    if (!cfg_.reference_concat || !reference) return seq;
    // pad the reference to codec/patch-divisible dims with white
    const int f = cfg_.codec_factor;
    const int64_t mh = static_cast<int64_t>(f) * cfg_.ph, mw = static_cast<int64_t>(f) * cfg_.pw;
    const int64_t H = reference->shape()[0], W = reference->shape()[1];
    const int64_t Hp = (H + mh - 1) / mh * mh, Wp = (W + mw - 1) / mw * mw;
    Tensor padded = Tensor::full({1, Hp, Wp, 3}, 1.0);
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x)
            for (int64_t c = 0; c < 3; ++c)
                padded[(y * Wp + x) * 3 + c] = (*reference)[(y * W + x) * 3 + c];
    codec::LatentVideo zref = codec::encode(padded, f);
    // main patch embed with time patch extent 1
    Tensor rows = patchify_latent(zref.data, 1, cfg_.ph, cfg_.pw);
    ad::Var ref_tokens = ad::add_rowvec(
        ad::matmul(ad::constant(std::move(rows)), ad::leaf(store_->find("dit", "main_patch_w"))),
        ad::leaf(store_->find("dit", "main_patch_b")));
    ref_tokens = ad::add_rowvec(ref_tokens, ad::leaf(store_->find("dit", "role_ref")));
    const int64_t rgy = zref.data.shape()[1] / cfg_.ph, rgx = zref.data.shape()[2] / cfg_.pw;
    // positions one time index past the video grid
    ref_tokens = ad::add(ref_tokens,
                         ad::constant(grid_positions(1, rgy, rgx, cfg_.dim, seq.gt)));
    seq.data = ad::concat_rows(seq.data, ref_tokens);
    return seq;
}

ad::Var EditorDiT::self_attention(const ad::Var& h, int layer) const {
    const std::string p = "layer" + std::to_string(layer) + ".";
    auto lin = [&](const ad::Var& x, const char* nm) {
        return ad::add_rowvec(ad::matmul(x, ad::leaf(store_->find("dit", p + nm + "_w"))),
                              ad::leaf(store_->find("dit", p + nm + "_b")));
    };
    ad::Var q = lin(h, "sa_q"), k = lin(h, "sa_k"), v = lin(h, "sa_v");
    const int64_t hd = cfg_.dim / cfg_.heads;
    std::vector<ad::Var> heads;
    for (int hh = 0; hh < cfg_.heads; ++hh) {
        ad::Var qh = ad::slice_cols(q, hh * hd, (hh + 1) * hd);
        ad::Var kh = ad::slice_cols(k, hh * hd, (hh + 1) * hd);
        ad::Var vh = ad::slice_cols(v, hh * hd, (hh + 1) * hd);
        ad::Var attn = ad::softmax_rows(
            ad::scale(ad::matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(hd))));
        heads.push_back(ad::matmul(attn, vh));
    }
    return lin(ad::concat_cols(heads), "sa_o");
}

ad::Var EditorDiT::cross_attention(const ad::Var& h, int layer, const ad::Var& context) const {
    if (context->val.cols() != cfg_.dim)
        throw std::invalid_argument("context dim " + std::to_string(context->val.cols()) +
                                    " != model dim " + std::to_string(cfg_.dim));
    const std::string p = "layer" + std::to_string(layer) + ".";
    auto lin = [&](const ad::Var& x, const char* nm) {
        return ad::add_rowvec(ad::matmul(x, ad::leaf(store_->find("dit", p + nm + "_w"))),
                              ad::leaf(store_->find("dit", p + nm + "_b")));
    };
    ad::Var q = lin(h, "ca_q"), k = lin(context, "ca_k"), v = lin(context, "ca_v");
    const int64_t hd = cfg_.dim / cfg_.heads;
    std::vector<ad::Var> heads;
    for (int hh = 0; hh < cfg_.heads; ++hh) {
        ad::Var qh = ad::slice_cols(q, hh * hd, (hh + 1) * hd);
        ad::Var kh = ad::slice_cols(k, hh * hd, (hh + 1) * hd);
        ad::Var vh = ad::slice_cols(v, hh * hd, (hh + 1) * hd);
        ad::Var attn = ad::softmax_rows(
            ad::scale(ad::matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(hd))));
        heads.push_back(ad::matmul(attn, vh));
    }
    return lin(ad::concat_cols(heads), "ca_o");
}

ad::Var EditorDiT::block(const ad::Var& x, int layer, const ad::Var& time_emb,
                         const cond::ContextTokens& context) const {
    const std::string p = "layer" + std::to_string(layer) + ".";
    auto mod_ln = [&](const ad::Var& v, const char* which) {
        ad::Var scale = ad::add_rowvec(
            ad::matmul(time_emb, ad::leaf(store_->find("dit", p + which + "_scale_w"))),
            ad::leaf(store_->find("dit", p + which + "_scale_b")));
        ad::Var shift = ad::add_rowvec(
            ad::matmul(time_emb, ad::leaf(store_->find("dit", p + which + "_shift_w"))),
            ad::leaf(store_->find("dit", p + which + "_shift_b")));
        return ad::add_rowvec(ad::mul_rowvec(ad::layernorm(v), ad::add_scalar(scale, 1.0)),
                              shift);
    };
    ad::Var x1 = ad::add(x, self_attention(mod_ln(x, "mod1"), layer));
    ad::Var x2 = ad::add(x1, cross_attention(ad::layernorm(x1), layer, context.data));
    const std::string q = p;
    ad::Var f = ad::add_rowvec(
        ad::matmul(mod_ln(x2, "mod2"), ad::leaf(store_->find("dit", q + "ffn1_w"))),
        ad::leaf(store_->find("dit", q + "ffn1_b")));
    f = ad::gelu(f);
    f = ad::add_rowvec(ad::matmul(f, ad::leaf(store_->find("dit", q + "ffn2_w"))),
                       ad::leaf(store_->find("dit", q + "ffn2_b")));
    return ad::add(x2, f);
}

ad::Var EditorDiT::forward(const codec::LatentVideo& noisy,
                           const codec::LatentVideo* source,
                           double t,
                           const cond::ContextTokens& context,
                           const std::optional<Tensor>& reference) const {
    int64_t gt = 0, gy = 0, gx = 0;
    ad::Var tokens = embed_tokens(noisy, source, t, gt, gy, gx);
    tokens = ad::add(tokens, ad::constant(grid_positions(gt, gy, gx, cfg_.dim)));

    TokenSequence seq;
    seq.data = tokens;
    seq.n_video = gt * gy * gx;
    seq.gt = gt; seq.gy = gy; seq.gx = gx;
    seq = ref_concat(seq, reference);

    // timestep embedding
    ad::Var e = ad::add_rowvec(
        ad::matmul(ad::constant(posenc::scalar_features(t, cfg_.time_feat)),
                   ad::leaf(store_->find("dit", "time_w1"))),
        ad::leaf(store_->find("dit", "time_b1")));
    e = ad::gelu(e);
    e = ad::add_rowvec(ad::matmul(e, ad::leaf(store_->find("dit", "time_w2"))),
                       ad::leaf(store_->find("dit", "time_b2")));

    ad::Var x = seq.data;
    for (int l = 0; l < cfg_.depth; ++l) x = block(x, l, e, context);

    // output head over video tokens only
    ad::Var vid = ad::slice_rows(x, 0, seq.n_video);
    ad::Var out = ad::add_rowvec(
        ad::matmul(ad::layernorm(vid), ad::leaf(store_->find("dit", "head_w"))),
        ad::leaf(store_->find("dit", "head_b")));

    // timestep-scaled residual paths (exactly zero at init: final layer zeros)
    auto tscale = [&](const std::string& nm) {
        ad::Var f = ad::add_rowvec(
            ad::matmul(ad::constant(posenc::scalar_features(t, cfg_.time_feat)),
                       ad::leaf(store_->find("dit", nm + "_w1"))),
            ad::leaf(store_->find("dit", nm + "_b1")));
        return ad::matmul(ad::gelu(f), ad::leaf(store_->find("dit", nm + "_w2")));
    };
    out = ad::add(out, ad::scale_by(ad::constant(patchify_latent(noisy.data, cfg_.pt,
                                                                 cfg_.ph, cfg_.pw)),
                                    tscale("skip_noisy")));
    if (source)
        out = ad::add(out, ad::scale_by(ad::constant(patchify_latent(source->data, cfg_.pt,
                                                                     cfg_.ph, cfg_.pw)),
                                        tscale("skip_src")));

    // un-patchify back to the latent grid shape via a reshape-compatible view:
    // rows are already (token, patch elements); rebuild the 4D layout exactly
    Tensor dummy = unpatchify_latent(out->val, gt, gy, gx, cfg_.pt, cfg_.ph, cfg_.pw,
                                     noisy.data.shape()[3]);
    // wrap as a graph op so gradients flow back through the scatter
    auto node = std::make_shared<ad::Node>();
    node->val = std::move(dummy);
    node->parents = {out};
    const int pt = cfg_.pt, ph = cfg_.ph, pw = cfg_.pw;
    const int64_t C = noisy.data.shape()[3];
    node->back = [gt, gy, gx, pt, ph, pw, C](ad::Node& self) {
        ad::Var rows = self.parents[0];
        if (rows->grad.numel() != rows->val.numel()) rows->grad = Tensor::zeros(rows->val.shape());
        Tensor g = patchify_latent(self.grad, pt, ph, pw);
        for (int64_t i = 0; i < g.numel(); ++i) rows->grad[i] += g[i];
    };
    return node;
}

} // namespace kiwi::dit
