#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kiwi/model.hpp"
#include "kiwi/rng.hpp"
#include "kiwi/world.hpp"

namespace kiwi::train {

// Rectified-flow training: linear path z_t = (1-t) z0 + t z1, constant
// target velocity z1 - z0, Euler integration at inference.

Tensor interpolate(const Tensor& z0, const Tensor& z1, double t);

struct FlowSample {
    codec::LatentVideo z0; // noise
    codec::LatentVideo z1; // target latent
    double t = 0.5;
    SampleInputs inputs;
    bool drop_condition = false;
};

// Single-sample loss graph: ||v(z_t,t,c) - (z1-z0)||^2 averaged over
// elements. Throws std::runtime_error on non-finite loss.
ad::Var flow_loss_graph(const EditorModel& model, const FlowSample& s);

// Forward-only mean loss over a batch.
double flow_loss(const EditorModel& model, const std::vector<FlowSample>& batch);

// Euler sampler; conditioning is computed once and reused across steps.
// Returns the predicted target latent.
codec::LatentVideo euler_sample(const EditorModel& model, const codec::LatentVideo& z0,
                                int steps, const SampleInputs& inputs);

// Sampler entry with an externally supplied constant velocity field, used to
// check Euler exactness independent of any model.
codec::LatentVideo euler_sample_with_field(
    const codec::LatentVideo& z0, int steps,
    const std::function<Tensor(const Tensor&, double)>& field);

struct OptimizerConfig {
    double lr = 1e-3;
    double lr_final_frac = 1.0;  // < 1 enables cosine decay toward lr*frac
    int batch = 1;  // micro-batch per optimizer step
    int accum = 1;  // micro-batches accumulated per step
    uint64_t seed = 0;
    double cond_dropout = 0.0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

class Adam {
public:
    explicit Adam(const OptimizerConfig& cfg) : cfg_(cfg) {}
    void step(std::vector<Param*> params);
    void set_lr(double lr) { cfg_.lr = lr; }
    int64_t steps_taken() const { return t_; }

private:
    OptimizerConfig cfg_;
    int64_t t_ = 0;
};

// with probability p the context is replaced by the learned null tokens and
// the source branch is removed; returns whether the sample was dropped
bool condition_dropout(FlowSample& s, double p, Rng& rng);

enum class DataKind { ImageTriplet, VideoTriplet, ReferenceQuadruplet };
const char* data_kind_name(DataKind k);

struct TrainExample {
    SampleInputs inputs;
    Tensor target; // (T,H,W,3)
};

// Pluggable training-data source; the default draws from the synthetic world.
class DataSource {
public:
    virtual ~DataSource() = default;
    virtual TrainExample sample(DataKind kind, int resolution, int frames, Rng& rng) = 0;
    virtual bool provides(DataKind kind) const = 0;
};

struct SyntheticSourceOptions {
    std::vector<world::EditKind> categories = {
        world::EditKind::LocalRecolor, world::EditKind::LocalReplace,
        world::EditKind::LocalAdd, world::EditKind::LocalRemove,
        world::EditKind::BackgroundChange};
    // >0: draw from a fixed pool of this many seeds (memorization regime)
    int pool_size = 0;
    uint64_t pool_seed = 7;
};

class SyntheticSource : public DataSource {
public:
    explicit SyntheticSource(SyntheticSourceOptions opts = {}) : opts_(std::move(opts)) {}
    TrainExample sample(DataKind kind, int resolution, int frames, Rng& rng) override;
    bool provides(DataKind) const override { return true; }

private:
    SyntheticSourceOptions opts_;
};

struct ResolutionPhase {
    int pixels = 64; // square side
    int steps = 0;   // optimizer steps at this resolution
};

struct CurriculumStage {
    int id = 1;
    std::vector<std::string> trainable_groups;
    std::map<DataKind, double> mix;
    std::vector<ResolutionPhase> schedule;
    int max_frames = 8; // must stay <= 81
    int steps = 100;    // optimizer steps for the stage
};

// The three-stage curriculum with the prescribed freeze sets and mixes.
CurriculumStage standard_stage(int id, int steps, int resolution, int frames = 8);

// Seeded multinomial draw over the mix ratios (normalized internally).
DataKind draw_kind(const std::map<DataKind, double>& mix, Rng& rng);

struct StageResult {
    std::vector<double> losses;             // one per optimizer step
    std::map<DataKind, int64_t> draw_counts;
};

// Runs one stage in place. Verifies afterwards that every group outside the
// trainable set hashes identically to its pre-run state; throws
// std::runtime_error("frozen-parameter drift...") otherwise. Appends one
// JSONL metrics record per step when metrics_path is non-empty. An optional
// callback sees (step, loss) and may return false to stop early.
StageResult run_stage(EditorModel& model, const CurriculumStage& stage,
                      const OptimizerConfig& opt, DataSource& source,
                      const std::string& metrics_path = "",
                      const std::function<bool(int, double)>& on_step = {});

} // namespace kiwi::train
