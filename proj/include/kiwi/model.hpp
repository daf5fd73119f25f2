#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "kiwi/codec.hpp"
#include "kiwi/conditioning.hpp"
#include "kiwi/dit.hpp"
#include "kiwi/params.hpp"

namespace kiwi {

// The full editor: conditioning encoder + DiT + exact codec, sharing one
// parameter store.

struct ModelConfig {
    cond::EncoderConfig enc;
    dit::DiTConfig dit;
    int codec_factor = 4;
    uint64_t init_seed = 1234;
    bool use_latent_connector = true; // off = queries-only ablation

    std::string to_json() const;
    static ModelConfig from_json(const std::string& s);
};

// Small preset used by tests and smoke runs: everything shrunk so a
// single-core forward/backward takes milliseconds.
ModelConfig tiny_model_config(uint64_t seed = 1234);

struct SampleInputs {
    Tensor source;                  // (T,H,W,3)
    std::string instruction;
    std::optional<Tensor> reference; // (h,w,3)
};

class EditorModel {
public:
    explicit EditorModel(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }
    ParamStore& store() { return store_; }
    const ParamStore& store() const { return store_; }
    cond::Conditioner& conditioner() { return *conditioner_; }
    dit::EditorDiT& generator() { return *dit_; }

    cond::QueryTask task_for(const SampleInputs& in) const;
    cond::ContextTokens context(const SampleInputs& in) const;
    cond::ContextTokens null_context() const;

    // velocity prediction; source == nullptr removes the source branch
    ad::Var velocity(const codec::LatentVideo& z_t,
                     const codec::LatentVideo* source,
                     double t,
                     const cond::ContextTokens& ctx,
                     const std::optional<Tensor>& reference) const;

private:
    ModelConfig cfg_;
    ParamStore store_;
    std::unique_ptr<cond::Conditioner> conditioner_;
    std::unique_ptr<dit::EditorDiT> dit_;
};

// Binary checkpoint: JSON header (config, lineage, per-param metadata with
// trainability flags) followed by raw little-endian doubles.
void save_checkpoint(const std::string& path, const EditorModel& model,
                     const std::vector<std::string>& lineage);
std::unique_ptr<EditorModel> load_checkpoint(const std::string& path,
                                             std::vector<std::string>* lineage = nullptr);

} // namespace kiwi
