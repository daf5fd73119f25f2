#include "kiwi/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

using nlohmann::json;

namespace kiwi::train {

Tensor interpolate(const Tensor& z0, const Tensor& z1, double t) {
    if (!z0.same_shape(z1))
        throw std::invalid_argument("interpolate: shape mismatch " + shape_str(z0) +
                                    " vs " + shape_str(z1));
    if (t < 0.0 || t > 1.0) throw std::invalid_argument("interpolate: t outside [0,1]");
    Tensor out(z0.shape());
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = (1.0 - t) * z0[i] + t * z1[i];
    return out;
}

ad::Var flow_loss_graph(const EditorModel& model, const FlowSample& s) {
    if (!s.z0.data.same_shape(s.z1.data))
        throw std::invalid_argument("flow sample: z0/z1 shape mismatch");

    codec::LatentVideo z_t{interpolate(s.z0.data, s.z1.data, s.t), s.z1.factor};

    cond::ContextTokens ctx =
        s.drop_condition ? model.null_context() : model.context(s.inputs);
    std::optional<codec::LatentVideo> src;
    std::optional<Tensor> ref;
    if (!s.drop_condition) {
        src = codec::encode(s.inputs.source, s.z1.factor);
        ref = s.inputs.reference;
    }

    ad::Var v = model.velocity(z_t, src ? &*src : nullptr, s.t, ctx, ref);

    Tensor target(s.z1.data.shape());
    for (int64_t i = 0; i < target.numel(); ++i)
        target[i] = s.z1.data[i] - s.z0.data[i];
    ad::Var loss = ad::mean_sq_diff(v, std::move(target));
    if (!std::isfinite(loss->val[0]))
        throw std::runtime_error("flow loss is non-finite; step aborted");
    return loss;
}

double flow_loss(const EditorModel& model, const std::vector<FlowSample>& batch) {
    if (batch.empty()) throw std::invalid_argument("flow_loss: empty batch");
    double acc = 0.0;
    for (const FlowSample& s : batch) acc += flow_loss_graph(model, s)->val[0];
    return acc / static_cast<double>(batch.size());
}

codec::LatentVideo euler_sample(const EditorModel& model, const codec::LatentVideo& z0,
                                int steps, const SampleInputs& inputs) {
    if (steps < 1) throw std::invalid_argument("euler_sample: steps must be >= 1");
    const cond::ContextTokens ctx = model.context(inputs);
    const codec::LatentVideo src = codec::encode(inputs.source, z0.factor);

    codec::LatentVideo z = z0;
    const double dt = 1.0 / steps;
    for (int k = 0; k < steps; ++k) {
        const double t = static_cast<double>(k) / steps;
        ad::Var v = model.velocity(z, &src, t, ctx, inputs.reference);
        for (int64_t i = 0; i < z.data.numel(); ++i) z.data[i] += dt * v->val[i];
    }
    return z;
}

codec::LatentVideo euler_sample_with_field(
    const codec::LatentVideo& z0, int steps,
    const std::function<Tensor(const Tensor&, double)>& field) {
    if (steps < 1) throw std::invalid_argument("euler_sample: steps must be >= 1");
    codec::LatentVideo z = z0;
    const double dt = 1.0 / steps;
    for (int k = 0; k < steps; ++k) {
        const Tensor v = field(z.data, static_cast<double>(k) / steps);
        if (!v.same_shape(z.data))
            throw std::invalid_argument("velocity field shape mismatch");
        for (int64_t i = 0; i < z.data.numel(); ++i) z.data[i] += dt * v[i];
    }
    return z;
}

void Adam::step(std::vector<Param*> params) {
    if (cfg_.lr <= 0.0) throw std::invalid_argument("learning rate must be positive");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (Param* p : params) {
        if (!p->trainable) continue;
        for (int64_t i = 0; i < p->value.numel(); ++i) {
            const double g = p->grad[i];
            p->adam_m[i] = cfg_.beta1 * p->adam_m[i] + (1.0 - cfg_.beta1) * g;
            p->adam_v[i] = cfg_.beta2 * p->adam_v[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = p->adam_m[i] / bc1;
            const double vhat = p->adam_v[i] / bc2;
            p->value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

bool condition_dropout(FlowSample& s, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0)
        throw std::invalid_argument("condition-dropout probability must be in [0,1)");
    if (p == 0.0) return false;
    if (rng.bernoulli(p)) {
        s.drop_condition = true;
        return true;
    }
    return false;
}

const char* data_kind_name(DataKind k) {
    switch (k) {
        case DataKind::ImageTriplet: return "image";
        case DataKind::VideoTriplet: return "video";
        case DataKind::ReferenceQuadruplet: return "reference";
    }
    return "?";
}

TrainExample SyntheticSource::sample(DataKind kind, int resolution, int frames, Rng& rng) {
    std::vector<world::EditKind> cats = opts_.categories;
    if (kind == DataKind::ReferenceQuadruplet) {
        // removals have no reference image to show
        std::erase(cats, world::EditKind::LocalRemove);
    }
    if (cats.empty()) throw std::runtime_error("no edit categories available for kind");

    uint64_t seed;
    if (opts_.pool_size > 0) {
        seed = Rng::seed_mix(opts_.pool_seed,
                             static_cast<uint64_t>(rng.uniform_int(0, opts_.pool_size - 1)));
    } else {
        seed = rng.engine()();
    }
    const world::EditKind cat =
        cats[static_cast<size_t>(Rng(Rng::seed_mix(seed, 0x5eed)).uniform_int(
            0, static_cast<int64_t>(cats.size()) - 1))];

    world::GenOptions opts;
    opts.height = opts.width = resolution;
    opts.frame_count = kind == DataKind::ImageTriplet ? 1 : frames;
    world::GeneratedSample g = world::make_quadruplet(seed, cat, opts);

    TrainExample ex;
    ex.inputs.source = g.quad.source;
    ex.inputs.instruction = g.quad.instruction;
    if (kind == DataKind::ReferenceQuadruplet) ex.inputs.reference = g.quad.reference;
    ex.target = g.quad.target;
    return ex;
}

CurriculumStage standard_stage(int id, int steps, int resolution, int frames) {
    CurriculumStage s;
    s.id = id;
    s.steps = steps;
    s.max_frames = frames;
    switch (id) {
        case 1:
            s.trainable_groups = {"lora", "query-banks", "connectors"};
            s.mix = {{DataKind::ImageTriplet, 1.0}};
            s.schedule = {{resolution, steps}};
            break;
        case 2:
            s.trainable_groups = {"lora", "query-banks", "connectors", "dit"};
            s.mix = {{DataKind::ImageTriplet, 1.0}, {DataKind::VideoTriplet, 1.0}};
            // resolution ramp: first half at the reduced size
            if (resolution > 32 && steps > 1)
                s.schedule = {{32, steps / 2}, {resolution, steps - steps / 2}};
            else
                s.schedule = {{resolution, steps}};
            break;
        case 3:
            s.trainable_groups = {"lora", "query-banks", "connectors", "dit"};
            s.mix = {{DataKind::ImageTriplet, 2.0},
                     {DataKind::VideoTriplet, 1.0},
                     {DataKind::ReferenceQuadruplet, 1.0}};
            s.schedule = {{resolution, steps}};
            break;
        default:
            throw std::invalid_argument("curriculum stage id must be 1, 2 or 3");
    }
    return s;
}

DataKind draw_kind(const std::map<DataKind, double>& mix, Rng& rng) {
    double total = 0.0;
    for (const auto& [k, w] : mix) {
        if (w < 0.0) throw std::invalid_argument("negative mix weight");
        total += w;
    }
    if (total <= 0.0) throw std::invalid_argument("empty data mix");
    double u = rng.uniform(0.0, total);
    for (const auto& [k, w] : mix) {
        if (u < w) return k;
        u -= w;
    }
    return mix.rbegin()->first;
}

namespace {

int phase_resolution(const std::vector<ResolutionPhase>& schedule, int step) {
    int consumed = 0;
    for (const ResolutionPhase& ph : schedule) {
        consumed += ph.steps;
        if (step < consumed) return ph.pixels;
    }
    return schedule.back().pixels;
}

} // namespace

StageResult run_stage(EditorModel& model, const CurriculumStage& stage,
                      const OptimizerConfig& opt, DataSource& source,
                      const std::string& metrics_path,
                      const std::function<bool(int, double)>& on_step) {
    if (stage.max_frames < 1 || stage.max_frames > 81)
        throw std::invalid_argument("max_frames must be in [1, 81]");
    if (stage.schedule.empty()) throw std::invalid_argument("empty resolution schedule");
    if (opt.batch < 1 || opt.accum < 1)
        throw std::invalid_argument("batch and accum must be positive");
    for (const auto& [k, w] : stage.mix)
        if (w > 0.0 && !source.provides(k))
            throw std::runtime_error(std::string("data source does not provide ") +
                                     data_kind_name(k));

    ParamStore& store = model.store();
    std::map<std::string, uint64_t> pre_hash;
    for (const std::string& g : store.group_names()) {
        pre_hash[g] = store.group_hash(g);
        store.set_group_trainable(g, false);
    }
    for (const std::string& g : stage.trainable_groups) store.set_group_trainable(g, true);

    std::ofstream metrics;
    if (!metrics_path.empty()) {
        metrics.open(metrics_path, std::ios::app);
        if (!metrics) throw std::runtime_error("cannot open metrics log: " + metrics_path);
    }

    Rng rng(Rng::seed_mix(opt.seed, static_cast<uint64_t>(stage.id)));
    Adam adam(opt);
    std::vector<Param*> params = store.all_params();
    const int micro = opt.batch * opt.accum;

    StageResult result;
    for (int step = 0; step < stage.steps; ++step) {
        const int res = phase_resolution(stage.schedule, step);
        if (opt.lr_final_frac < 1.0) {
            const double prog = stage.steps > 1 ? static_cast<double>(step) / (stage.steps - 1)
                                                : 0.0;
            const double w = 0.5 * (1.0 + std::cos(prog * M_PI));
            adam.set_lr(opt.lr * (opt.lr_final_frac + (1.0 - opt.lr_final_frac) * w));
        }
        store.zero_grads();
        double step_loss = 0.0;
        std::map<DataKind, int64_t> step_counts;
        for (int m = 0; m < micro; ++m) {
            const DataKind kind = draw_kind(stage.mix, rng);
            ++result.draw_counts[kind];
            ++step_counts[kind];
            TrainExample ex = source.sample(kind, res, stage.max_frames, rng);

            FlowSample fs;
            fs.z1 = codec::encode(ex.target, model.config().codec_factor);
            fs.z0 = {rng.randn(fs.z1.data.shape()), fs.z1.factor};
            fs.t = rng.uniform(1e-6, 1.0 - 1e-6);
            fs.inputs = std::move(ex.inputs);
            condition_dropout(fs, opt.cond_dropout, rng);

            ad::Var loss = flow_loss_graph(model, fs);
            step_loss += loss->val[0];
            ad::backward(ad::scale(loss, 1.0 / micro));
        }
        step_loss /= micro;
        adam.step(params);
        result.losses.push_back(step_loss);

        if (metrics.is_open()) {
            json counts;
            for (const auto& [k, n] : step_counts) counts[data_kind_name(k)] = n;
            json rec{{"stage", stage.id}, {"step", step}, {"loss", step_loss},
                     {"resolution", res}, {"counts", counts}};
            metrics << rec.dump() << "\n";
        }
        if (on_step && !on_step(step, step_loss)) break;
    }

    for (const std::string& g : store.group_names()) {
        const bool trainable =
            std::find(stage.trainable_groups.begin(), stage.trainable_groups.end(), g) !=
            stage.trainable_groups.end();
        if (!trainable && store.group_hash(g) != pre_hash[g])
            throw std::runtime_error("frozen-parameter drift detected in group " + g);
    }
    return result;
}

} // namespace kiwi::train
