#include "kiwi/conditioning.hpp"

#include <cmath>
#include <stdexcept>

#include "kiwi/posenc.hpp"
#include "kiwi/rng.hpp"

namespace kiwi::cond {

int query_count(QueryTask task) {
    switch (task) {
        case QueryTask::Image: return 256;
        case QueryTask::Video: return 512;
        case QueryTask::Reference: return 768;
    }
    throw std::invalid_argument("unknown query task");
}

const char* query_task_name(QueryTask task) {
    switch (task) {
        case QueryTask::Image: return "image";
        case QueryTask::Video: return "video";
        case QueryTask::Reference: return "reference";
    }
    return "?";
}

QueryTask query_task_from_name(const std::string& s) {
    if (s == "image") return QueryTask::Image;
    if (s == "video") return QueryTask::Video;
    if (s == "reference") return QueryTask::Reference;
    throw std::invalid_argument("unknown query task: " + s);
}

ad::Var lora_apply(const ad::Var& base_out, const ad::Var& input, const LoraWeights& w) {
    ad::Var delta = ad::matmul(ad::matmul(input, ad::leaf(*w.down)), ad::leaf(*w.up));
    return ad::add(base_out, ad::scale(delta, w.alpha / w.rank));
}

namespace {

Tensor init_weight(Rng& rng, int64_t in, int64_t out, double stddev = 0.02) {
    return rng.randn({in, out}, stddev);
}

} // namespace

Conditioner::Conditioner(const EncoderConfig& cfg, uint64_t init_seed, ParamStore& store)
    : cfg_(cfg), store_(&store) {
    if (cfg.dim % cfg.heads != 0)
        throw std::invalid_argument("encoder dim must be divisible by heads");
    Rng rng(Rng::seed_mix(init_seed, 0xC0DEC0DEull));
    const int64_t d = cfg.dim;
    const int64_t patch_in = 3LL * cfg.image_patch * cfg.image_patch;

    // frozen base
    store.add("encoder-base", "visual_patch_w", init_weight(rng, patch_in, d), false);
    store.add("encoder-base", "visual_patch_b", Tensor::zeros({1, d}), false);
    store.add("encoder-base", "text_embed", init_weight(rng, cfg.text_vocab, d), false);
    store.add("encoder-base", "modality_video", rng.randn({1, d}, 0.02), false);
    store.add("encoder-base", "modality_ref", rng.randn({1, d}, 0.02), false);
    for (int l = 0; l < cfg.depth; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        for (const char* w : {"q", "k", "v", "o"}) {
            store.add("encoder-base", p + w + "_w", init_weight(rng, d, d), false);
            store.add("encoder-base", p + w + "_b", Tensor::zeros({1, d}), false);
        }
        store.add("encoder-base", p + "ln1_g", Tensor::full({1, d}, 1.0), false);
        store.add("encoder-base", p + "ln1_b", Tensor::zeros({1, d}), false);
        store.add("encoder-base", p + "ln2_g", Tensor::full({1, d}, 1.0), false);
        store.add("encoder-base", p + "ln2_b", Tensor::zeros({1, d}), false);
        store.add("encoder-base", p + "ffn1_w", init_weight(rng, d, 4 * d), false);
        store.add("encoder-base", p + "ffn1_b", Tensor::zeros({1, 4 * d}), false);
        store.add("encoder-base", p + "ffn2_w", init_weight(rng, 4 * d, d), false);
        store.add("encoder-base", p + "ffn2_b", Tensor::zeros({1, d}), false);
    }
    store.add("encoder-base", "final_ln_g", Tensor::full({1, d}, 1.0), false);
    store.add("encoder-base", "final_ln_b", Tensor::zeros({1, d}), false);

    // LoRA adapters on the attention projections; up is zero so the delta is
    // exactly zero until training moves it
    if (cfg.lora_on_attention) {
        for (int l = 0; l < cfg.depth; ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            for (const char* w : {"q", "k", "v", "o"}) {
                store.add("lora", p + w + "_down", rng.randn({d, cfg.lora_rank}, 0.02));
                store.add("lora", p + w + "_up", Tensor::zeros({cfg.lora_rank, d}));
            }
        }
    }

    // query banks
    store.add("query-banks", "image", rng.randn({query_count(QueryTask::Image), d}, 0.02));
    store.add("query-banks", "video", rng.randn({query_count(QueryTask::Video), d}, 0.02));
    store.add("query-banks", "reference", rng.randn({query_count(QueryTask::Reference), d}, 0.02));

    // connectors: two-layer MLPs, hidden = 4 * dit_dim
    const int64_t dd = cfg.dit_dim, hidden = 4LL * dd;
    for (const char* c : {"query_conn", "latent_conn"}) {
        const std::string p = std::string(c) + ".";
        store.add("connectors", p + "w1", init_weight(rng, d, hidden));
        store.add("connectors", p + "b1", Tensor::zeros({1, hidden}));
        store.add("connectors", p + "w2", init_weight(rng, hidden, dd));
        store.add("connectors", p + "b2", Tensor::zeros({1, dd}));
    }
    store.add("connectors", "null_context", rng.randn({4, dd}, 0.02));
}

std::vector<int64_t> Conditioner::tokenize(const std::string& text) const {
    std::vector<int64_t> out;
    out.reserve(text.size());
    for (char ch : text) {
        const int c = static_cast<unsigned char>(ch);
        if (c < 32 || c > 126)
            throw std::invalid_argument("unknown text character (code " + std::to_string(c) + ")");
        const int64_t tok = c - 32;
        if (tok >= cfg_.text_vocab)
            throw std::invalid_argument("character outside tokenizer vocabulary");
        out.push_back(tok);
    }
    return out;
}

int64_t Conditioner::visual_token_count(const Tensor& video) const {
    const int64_t H = video.shape()[video.ndim() == 4 ? 1 : 0];
    const int64_t W = video.shape()[video.ndim() == 4 ? 2 : 1];
    const int64_t T = video.ndim() == 4 ? video.shape()[0] : 1;
    if (H % cfg_.image_patch != 0 || W % cfg_.image_patch != 0)
        throw std::invalid_argument("image dims not divisible by patch size");
    return T * (H / cfg_.image_patch) * (W / cfg_.image_patch);
}

namespace {

// pad an (h,w,3) image with white so both sides divide p; references are
// drawn on white, so padding extends the background
Tensor pad_to_multiple(const Tensor& image, int p) {
    const int64_t h = image.shape()[0], w = image.shape()[1];
    const int64_t H = (h + p - 1) / p * p, W = (w + p - 1) / p * p;
    if (H == h && W == w) return image;
    Tensor out = Tensor::full({H, W, 3}, 1.0);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c)
                out[(y * W + x) * 3 + c] = image[(y * w + x) * 3 + c];
    return out;
}

// flatten (T,H,W,3) into (N, p*p*3) patch rows, frame-major then row-major
Tensor patchify(const Tensor& video, int p) {
    const bool has_t = video.ndim() == 4;
    const int64_t T = has_t ? video.shape()[0] : 1;
    const int64_t H = video.shape()[has_t ? 1 : 0];
    const int64_t W = video.shape()[has_t ? 2 : 1];
    if (H % p != 0 || W % p != 0)
        throw std::invalid_argument("image dims not divisible by patch size");
    const int64_t gh = H / p, gw = W / p;
    Tensor out({T * gh * gw, static_cast<int64_t>(p) * p * 3});
    int64_t row = 0;
    for (int64_t t = 0; t < T; ++t)
        for (int64_t gy = 0; gy < gh; ++gy)
            for (int64_t gx = 0; gx < gw; ++gx, ++row) {
                int64_t col = 0;
                for (int64_t dy = 0; dy < p; ++dy)
                    for (int64_t dx = 0; dx < p; ++dx)
                        for (int64_t c = 0; c < 3; ++c)
                            out.at(row, col++) =
                                video[(((t * H) + gy * p + dy) * W + gx * p + dx) * 3 + c];
            }
    return out;
}

} // namespace

ad::Var Conditioner::attn_linear(const ad::Var& x, int layer, const char* which) const {
    const std::string p = "layer" + std::to_string(layer) + ".";
    ad::Var base = ad::add_rowvec(
        ad::matmul(x, ad::leaf(store_->find("encoder-base", p + which + "_w"))),
        ad::leaf(store_->find("encoder-base", p + which + "_b")));
    if (!cfg_.lora_on_attention) return base;
    LoraWeights w;
    w.down = &store_->find("lora", p + which + "_down");
    w.up = &store_->find("lora", p + which + "_up");
    w.alpha = cfg_.lora_alpha;
    w.rank = cfg_.lora_rank;
    return lora_apply(base, x, w);
}

ad::Var Conditioner::encoder_block(const ad::Var& x, int layer) const {
    const std::string p = "layer" + std::to_string(layer) + ".";
    auto ln = [&](const ad::Var& v, const char* g, const char* b) {
        return ad::add_rowvec(
            ad::mul_rowvec(ad::layernorm(v), ad::leaf(store_->find("encoder-base", p + g))),
            ad::leaf(store_->find("encoder-base", p + b)));
    };
    // self-attention, bidirectional
    ad::Var h = ln(x, "ln1_g", "ln1_b");
    ad::Var q = attn_linear(h, layer, "q");
    ad::Var k = attn_linear(h, layer, "k");
    ad::Var v = attn_linear(h, layer, "v");
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
    ad::Var attn_out = attn_linear(ad::concat_cols(heads), layer, "o");
    ad::Var x1 = ad::add(x, attn_out);
    // feed-forward
    ad::Var h2 = ln(x1, "ln2_g", "ln2_b");
    ad::Var f = ad::add_rowvec(
        ad::matmul(h2, ad::leaf(store_->find("encoder-base", p + "ffn1_w"))),
        ad::leaf(store_->find("encoder-base", p + "ffn1_b")));
    f = ad::gelu(f);
    f = ad::add_rowvec(ad::matmul(f, ad::leaf(store_->find("encoder-base", p + "ffn2_w"))),
                       ad::leaf(store_->find("encoder-base", p + "ffn2_b")));
    return ad::add(x1, f);
}

EncodeResult Conditioner::encode_multimodal(const Tensor& source_video,
                                            const std::string& instruction,
                                            const std::optional<Tensor>& reference,
                                            QueryTask task) const {
    const int64_t d = cfg_.dim;
    Param& patch_w = store_->find("encoder-base", "visual_patch_w");
    Param& patch_b = store_->find("encoder-base", "visual_patch_b");

    // video patch tokens
    Tensor vid_patches = patchify(source_video, cfg_.image_patch);
    ad::Var video_tokens = ad::add_rowvec(
        ad::matmul(ad::constant(vid_patches), ad::leaf(patch_w)), ad::leaf(patch_b));
    video_tokens = ad::add_rowvec(video_tokens,
                                  ad::leaf(store_->find("encoder-base", "modality_video")));
    const int64_t n_video = video_tokens->val.rows();

    // text tokens
    std::vector<int64_t> toks = tokenize(instruction);
    ad::Var text_tokens = ad::gather_rows(
        ad::leaf(store_->find("encoder-base", "text_embed")), toks);
    const int64_t n_text = text_tokens->val.rows();

    // optional reference patch tokens
    ad::Var seq = ad::concat_rows(video_tokens, text_tokens);
    int64_t n_ref = 0;
    if (reference) {
        Tensor ref_patches = patchify(pad_to_multiple(*reference, cfg_.image_patch),
                                      cfg_.image_patch);
        ad::Var ref_tokens = ad::add_rowvec(
            ad::matmul(ad::constant(ref_patches), ad::leaf(patch_w)), ad::leaf(patch_b));
        ref_tokens = ad::add_rowvec(ref_tokens,
                                    ad::leaf(store_->find("encoder-base", "modality_ref")));
        n_ref = ref_tokens->val.rows();
        seq = ad::concat_rows(seq, ref_tokens);
    }

    // positions for the content tokens only; the query suffix stays
    // position-free so the bank rows are order-symmetric
    const int64_t n_content = n_video + n_text + n_ref;
    seq = ad::add(seq, ad::constant(posenc::sequence_positions(n_content, d)));

    // query suffix
    Param& bank = store_->find("query-banks", query_task_name(task));
    seq = ad::concat_rows(seq, ad::leaf(bank));
    const int64_t n_query = bank.value.rows();

    const int64_t total = n_content + n_query;
    if (total > cfg_.max_sequence)
        throw std::length_error("sequence length " + std::to_string(total) +
                                " exceeds max_sequence " + std::to_string(cfg_.max_sequence));

    for (int l = 0; l < cfg_.depth; ++l) seq = encoder_block(seq, l);
    seq = ad::add_rowvec(
        ad::mul_rowvec(ad::layernorm(seq), ad::leaf(store_->find("encoder-base", "final_ln_g"))),
        ad::leaf(store_->find("encoder-base", "final_ln_b")));

    EncodeResult r;
    r.hidden = seq;
    r.ref_begin = n_video + n_text;
    r.ref_end = n_video + n_text + n_ref;
    r.query_begin = n_content;
    r.query_end = total;
    return r;
}

namespace {

ad::Var mlp2(const ParamStore& store, const std::string& prefix, const ad::Var& x) {
    auto& s = const_cast<ParamStore&>(store);
    ad::Var h = ad::add_rowvec(ad::matmul(x, ad::leaf(s.find("connectors", prefix + ".w1"))),
                               ad::leaf(s.find("connectors", prefix + ".b1")));
    h = ad::gelu(h);
    return ad::add_rowvec(ad::matmul(h, ad::leaf(s.find("connectors", prefix + ".w2"))),
                          ad::leaf(s.find("connectors", prefix + ".b2")));
}

} // namespace

ad::Var Conditioner::query_connector(const ad::Var& query_hidden) const {
    if (query_hidden->val.cols() != cfg_.dim)
        throw std::invalid_argument("query_connector: input dim mismatch");
    return mlp2(*store_, "query_conn", query_hidden);
}

ad::Var Conditioner::latent_connector(const ad::Var& ref_hidden) const {
    if (ref_hidden->val.cols() != cfg_.dim)
        throw std::invalid_argument("latent_connector: input dim mismatch");
    return mlp2(*store_, "latent_conn", ref_hidden);
}

ContextTokens Conditioner::assemble_context(const ad::Var& query_slice,
                                            const std::optional<ad::Var>& ref_slice) {
    ContextTokens ctx;
    ctx.n_query = query_slice->val.rows();
    if (ref_slice && (*ref_slice)->val.rows() > 0) {
        if ((*ref_slice)->val.cols() != query_slice->val.cols())
            throw std::invalid_argument("assemble_context: dit_dim mismatch");
        ctx.n_ref = (*ref_slice)->val.rows();
        ctx.data = ad::concat_rows(query_slice, *ref_slice);
    } else {
        ctx.data = query_slice;
    }
    return ctx;
}

ContextTokens Conditioner::build_context(const Tensor& source_video,
                                         const std::string& instruction,
                                         const std::optional<Tensor>& reference,
                                         QueryTask task,
                                         bool use_latent_connector) const {
    EncodeResult enc = encode_multimodal(source_video, instruction, reference, task);
    ad::Var q = query_connector(ad::slice_rows(enc.hidden, enc.query_begin, enc.query_end));
    std::optional<ad::Var> r;
    if (use_latent_connector && enc.ref_end > enc.ref_begin)
        r = latent_connector(ad::slice_rows(enc.hidden, enc.ref_begin, enc.ref_end));
    return assemble_context(q, r);
}

} // namespace kiwi::cond
