#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kiwi/autodiff.hpp"
#include "kiwi/params.hpp"
#include "kiwi/tensor.hpp"

namespace kiwi::cond {

// Miniature multimodal encoder standing in for a pretrained MLLM backbone.
// The base transformer is initialized from a fixed seed and frozen; only the
// LoRA adapters, the learnable query banks, and the two connectors train.

struct EncoderConfig {
    int dim = 128;
    int depth = 4;
    int heads = 4;
    int text_vocab = 96;   // printable ASCII, ' '..'~'
    int image_patch = 8;   // pixels per visual patch side
    int max_sequence = 4096;
    int dit_dim = 128;     // connector output dimension
    int lora_rank = 4;
    double lora_alpha = 8.0;
    bool lora_on_attention = true; // adapt q/k/v/o projections
};

enum class QueryTask { Image, Video, Reference };

int query_count(QueryTask task); // 256 / 512 / 768
const char* query_task_name(QueryTask task);
QueryTask query_task_from_name(const std::string& s);

// One low-rank adapter: y = base(x) + (alpha/r) * (x * down) * up, up
// zero-initialized so the delta vanishes at init.
struct LoraWeights {
    Param* down = nullptr; // (in, r)
    Param* up = nullptr;   // (r, out)
    double alpha = 8.0;
    int rank = 4;
};

ad::Var lora_apply(const ad::Var& base_out, const ad::Var& input, const LoraWeights& w);

// Unified conditioning sequence: query-connector rows first, then
// reference-latent rows.
struct ContextTokens {
    ad::Var data;         // (n_query + n_ref, dit_dim)
    int64_t n_query = 0;
    int64_t n_ref = 0;
    bool is_query_segment(int64_t i) const { return i < n_query; }
};

struct EncodeResult {
    ad::Var hidden;        // (N, dim) final hidden states
    int64_t ref_begin = 0, ref_end = 0;     // reference token range [begin,end)
    int64_t query_begin = 0, query_end = 0; // query token range
};

class Conditioner {
public:
    // Registers parameters in `store` under groups "encoder-base" (frozen),
    // "lora", "query-banks", "connectors".
    Conditioner(const EncoderConfig& cfg, uint64_t init_seed, ParamStore& store);

    const EncoderConfig& config() const { return cfg_; }

    // Tokenize printable-ASCII text; throws std::invalid_argument on other
    // characters.
    std::vector<int64_t> tokenize(const std::string& text) const;

    // Interleaved sequence [video patches; text; reference patches; queries]
    // through the frozen transformer with LoRA deltas.
    EncodeResult encode_multimodal(const Tensor& source_video, // (T,H,W,3)
                                   const std::string& instruction,
                                   const std::optional<Tensor>& reference, // (h,w,3)
                                   QueryTask task) const;

    ad::Var query_connector(const ad::Var& query_hidden) const;
    ad::Var latent_connector(const ad::Var& ref_hidden) const;

    static ContextTokens assemble_context(const ad::Var& query_slice,
                                          const std::optional<ad::Var>& ref_slice);

    // Full pathway. use_latent_connector=false reproduces the
    // queries-only ablation: the reference still enters the encoder but
    // contributes no reference-latent rows to the context.
    ContextTokens build_context(const Tensor& source_video,
                                const std::string& instruction,
                                const std::optional<Tensor>& reference,
                                QueryTask task,
                                bool use_latent_connector = true) const;

    int64_t visual_token_count(const Tensor& video) const;

private:
    ad::Var encoder_block(const ad::Var& x, int layer) const;
    ad::Var attn_linear(const ad::Var& x, int layer, const char* which) const;

    EncoderConfig cfg_;
    ParamStore* store_;
};

} // namespace kiwi::cond
