#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "kiwi/image_io.hpp"
#include "kiwi/judge.hpp"
#include "kiwi/model.hpp"
#include "kiwi/pipeline.hpp"
#include "kiwi/training.hpp"
#include "kiwi/world.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace kiwi;

namespace {

// exit codes: 0 success, 64 usage, 2 I/O, 3 sequencing, 1 internal
constexpr int kExitUsage = 64;
constexpr int kExitIo = 2;
constexpr int kExitSequencing = 3;
constexpr int kExitInternal = 1;

struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct seq_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string output_root(const std::string& flag_value) {
    if (!flag_value.empty()) return flag_value;
    if (const char* env = std::getenv("KIWI_OUT")) return env;
    return ".";
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw io_error("cannot create output directory: " + dir);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write: " + path);
    out << text;
    if (!out) throw io_error("write failed: " + path);
}

void write_snapshot(const std::string& dir, const std::string& command, const json& cfg) {
    json j{{"schema", 1}, {"command", command}, {"config", cfg}};
    write_text(dir + "/resolved_config.json", j.dump(2) + "\n");
}

std::string read_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot read: " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

Tensor clamp01(Tensor t) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = std::clamp(t[i], 0.0, 1.0);
    return t;
}

// quantize to u8 grid so PNG output is exact
Tensor quantize255(Tensor t) {
    for (int64_t i = 0; i < t.numel(); ++i)
        t[i] = std::round(std::clamp(t[i], 0.0, 1.0) * 255.0) / 255.0;
    return t;
}

std::vector<world::GeneratedSample> load_dataset(const std::string& dir) {
    const std::string manifest = dir + "/manifest.jsonl";
    std::ifstream in(manifest);
    if (!in) throw io_error("cannot read manifest: " + manifest);
    std::vector<world::GeneratedSample> samples;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        samples.push_back(world::load_sample(dir + "/" + std::string(j.at("dir"))));
    }
    return samples;
}

void write_video(const std::string& dir, const std::string& stem, const Tensor& video) {
    const int64_t t = video.dim(0), h = video.dim(1), w = video.dim(2);
    for (int64_t f = 0; f < t; ++f) {
        Tensor frame({h, w, 3});
        for (int64_t i = 0; i < h * w * 3; ++i) frame[i] = video[f * h * w * 3 + i];
        char name[64];
        std::snprintf(name, sizeof(name), "%s_%04lld.png", stem.c_str(),
                      static_cast<long long>(f));
        img::write_png(dir + "/" + name, frame);
    }
}

Tensor edit_video(const EditorModel& model, const SampleInputs& inputs, int steps,
                  uint64_t seed) {
    const codec::LatentVideo z1_shape = codec::encode(inputs.source, model.config().codec_factor);
    Rng rng(Rng::seed_mix(seed, 0xED17));
    codec::LatentVideo z0{rng.randn(z1_shape.data.shape()), z1_shape.factor};
    return codec::decode(train::euler_sample(model, z0, steps, inputs));
}

// ---------------------------------------------------------------------------

int cmd_synth(int count, const std::vector<std::string>& categories, uint64_t seed,
              int resolution, int frames, const std::string& out_dir) {
    std::vector<world::EditKind> kinds;
    if (categories.empty()) {
        kinds = {world::EditKind::LocalRecolor, world::EditKind::LocalReplace,
                 world::EditKind::LocalAdd, world::EditKind::LocalRemove,
                 world::EditKind::BackgroundChange};
    } else {
        for (const std::string& c : categories) kinds.push_back(world::edit_kind_from_name(c));
    }
    ensure_dir(out_dir);

    world::GenOptions opts;
    opts.height = opts.width = resolution;
    opts.frame_count = frames;

    std::ostringstream manifest;
    Rng rng(seed);
    for (int i = 0; i < count; ++i) {
        const world::EditKind kind =
            kinds[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(kinds.size()) - 1))];
        const uint64_t sample_seed = Rng::seed_mix(seed, static_cast<uint64_t>(i));
        world::GeneratedSample s = world::make_quadruplet(sample_seed, kind, opts);
        char dirname[32];
        std::snprintf(dirname, sizeof(dirname), "sample_%05d", i);
        world::save_sample(out_dir + "/" + dirname, s);
        manifest << json{{"id", i},
                         {"dir", dirname},
                         {"seed", sample_seed},
                         {"category", world::edit_kind_name(kind)},
                         {"instruction", s.quad.instruction}}
                        .dump()
                 << "\n";
    }
    write_text(out_dir + "/manifest.jsonl", manifest.str());

    json cats = json::array();
    for (world::EditKind k : kinds) cats.push_back(world::edit_kind_name(k));
    write_snapshot(out_dir, "synth",
                   {{"count", count}, {"categories", cats}, {"seed", seed},
                    {"resolution", resolution}, {"frames", frames}});
    std::cout << "wrote " << count << " samples to " << out_dir << "\n";
    return 0;
}

int cmd_pipeline(const std::string& in_dir, const std::string& adapters_name,
                 const pipeline::NoiseOptions& noise, pipeline::PipelineConfig cfg,
                 uint64_t seed, const std::string& out_dir) {
    pipeline::AdapterSuite adapters;
    if (adapters_name == "oracle") {
        adapters = pipeline::oracle_adapters();
    } else if (adapters_name == "noisy") {
        adapters = pipeline::noisy_adapters(noise, seed);
    } else {
        throw CLI::ValidationError("--adapters", "unknown adapter suite: " + adapters_name);
    }

    std::vector<pipeline::CandidateRecord> records =
        pipeline::make_records(load_dataset(in_dir));
    pipeline::PipelineResult result = pipeline::run_pipeline(std::move(records), adapters, cfg);

    ensure_dir(out_dir);
    pipeline::write_manifest(out_dir + "/manifest.jsonl", result.records);
    write_text(out_dir + "/funnel.json", result.report.to_json() + "\n");
    write_snapshot(out_dir, "pipeline",
                   {{"input", in_dir}, {"adapters", adapters_name}, {"seed", seed},
                    {"instruct_threshold", cfg.instruct_threshold},
                    {"reference_threshold", cfg.reference_threshold},
                    {"verify_threshold", cfg.verify_threshold},
                    {"dedup_cosine", cfg.dedup_cosine},
                    {"min_side", cfg.min_side},
                    {"workers", cfg.workers}});
    std::cout << result.report.to_table();
    std::cout << "kept quadruplets: " << result.manifest_ids.size() << "\n";
    return 0;
}

int cmd_train(int stage_id, int steps, int resolution, int frames, double lr, int batch,
              int accum, uint64_t seed, const std::string& init_ckpt,
              const std::string& ablation, int pool, const std::string& out_dir) {
    if (stage_id < 1 || stage_id > 3)
        throw CLI::ValidationError("--stage", "stage must be 1, 2 or 3");
    if (stage_id > 1 && init_ckpt.empty())
        throw seq_error("stage " + std::to_string(stage_id) +
                        " requires a prior-stage checkpoint (--init)");

    std::unique_ptr<EditorModel> model;
    std::vector<std::string> lineage;
    if (!init_ckpt.empty()) {
        if (!fs::exists(init_ckpt)) throw io_error("checkpoint not found: " + init_ckpt);
        model = load_checkpoint(init_ckpt, &lineage);
    } else {
        ModelConfig mc = tiny_model_config(seed);
        if (!ablation.empty()) mc.dit.injection = dit::injection_mode_from_name(ablation);
        model = std::make_unique<EditorModel>(mc);
    }

    train::CurriculumStage stage = train::standard_stage(stage_id, steps, resolution, frames);
    train::OptimizerConfig opt;
    opt.lr = lr;
    opt.batch = batch;
    opt.accum = accum;
    opt.seed = seed;

    train::SyntheticSourceOptions src_opts;
    if (pool > 0) {
        src_opts.pool_size = pool;
        src_opts.pool_seed = seed;
    }
    train::SyntheticSource source(src_opts);
    if (stage_id == 3 && !source.provides(train::DataKind::ReferenceQuadruplet))
        throw seq_error("stage 3 requires reference-quadruplet data");

    ensure_dir(out_dir);
    train::StageResult result =
        train::run_stage(*model, stage, opt, source, out_dir + "/metrics.jsonl");

    lineage.push_back("stage" + std::to_string(stage_id) + ":seed" + std::to_string(seed) +
                      ":steps" + std::to_string(steps));
    const std::string ckpt = out_dir + "/checkpoint.ckpt";
    save_checkpoint(ckpt, *model, lineage);

    write_snapshot(out_dir, "train",
                   {{"stage", stage_id}, {"steps", steps}, {"resolution", resolution},
                    {"frames", frames}, {"lr", lr}, {"batch", batch}, {"accum", accum},
                    {"seed", seed}, {"init", init_ckpt}, {"ablation", ablation},
                    {"pool", pool},
                    {"model", json::parse(model->config().to_json())}});

    std::cout << "stage " << stage_id << " done; trainable groups:";
    for (const std::string& g : stage.trainable_groups) std::cout << " " << g;
    std::cout << "\nfinal loss " << (result.losses.empty() ? 0.0 : result.losses.back())
              << "; checkpoint " << ckpt << "\n";
    return 0;
}

int cmd_edit(const std::string& ckpt, const std::string& input_dir,
             const std::string& instruction, const std::string& reference_png, int steps,
             uint64_t seed, const std::string& out_dir) {
    if (!fs::exists(ckpt)) throw io_error("checkpoint not found: " + ckpt);
    std::unique_ptr<EditorModel> model = load_checkpoint(ckpt);

    SampleInputs inputs;
    inputs.instruction = instruction;
    std::vector<Tensor> frames;
    for (int f = 0;; ++f) {
        char name[32];
        std::snprintf(name, sizeof(name), "src_%04d.png", f);
        const std::string path = input_dir + "/" + name;
        if (!fs::exists(path)) break;
        frames.push_back(img::read_png(path));
    }
    if (frames.empty()) throw io_error("no src_*.png frames in " + input_dir);
    const int64_t h = frames[0].dim(0), w = frames[0].dim(1);
    Tensor video({static_cast<int64_t>(frames.size()), h, w, 3});
    for (size_t f = 0; f < frames.size(); ++f)
        for (int64_t i = 0; i < h * w * 3; ++i)
            video[static_cast<int64_t>(f) * h * w * 3 + i] = frames[f][i];
    inputs.source = std::move(video);
    if (!reference_png.empty()) {
        if (!fs::exists(reference_png)) throw io_error("reference not found: " + reference_png);
        inputs.reference = img::read_png(reference_png);
    }

    const Tensor edited = quantize255(edit_video(*model, inputs, steps, seed));
    ensure_dir(out_dir);
    write_video(out_dir, "out", edited);
    write_snapshot(out_dir, "edit",
                   {{"checkpoint", ckpt}, {"input", input_dir},
                    {"instruction", instruction}, {"reference", reference_png},
                    {"steps", steps}, {"seed", seed}});
    std::cout << "wrote " << edited.dim(0) << " frames to " << out_dir << "\n";
    return 0;
}

int cmd_bench(const std::string& ckpt, const std::string& data_dir,
              const std::string& judge_name, const std::string& assets_dir, int steps,
              uint64_t seed, const std::string& out_dir) {
    if (judge_name != "mock")
        throw CLI::ValidationError("--judge", "unknown judge: " + judge_name);
    if (!fs::exists(ckpt)) throw io_error("checkpoint not found: " + ckpt);
    std::unique_ptr<EditorModel> model = load_checkpoint(ckpt);

    std::vector<world::GeneratedSample> dataset = load_dataset(data_dir);
    std::vector<judge::BenchSample> samples;
    for (size_t i = 0; i < dataset.size(); ++i) {
        const world::GeneratedSample& g = dataset[i];
        if (!g.quad.reference) continue; // bench is reference-guided only
        judge::BenchSample b;
        b.id = static_cast<int64_t>(i);
        b.source = g.quad.source;
        b.reference = *g.quad.reference;
        b.instruction = g.quad.instruction;
        b.category = g.edit.kind == world::EditKind::BackgroundChange
                         ? judge::BenchCategory::Background
                         : judge::BenchCategory::Subject;

        SampleInputs inputs;
        inputs.source = b.source;
        inputs.instruction = b.instruction;
        inputs.reference = b.reference;
        b.edited = clamp01(edit_video(*model, inputs, steps,
                                      Rng::seed_mix(seed, static_cast<uint64_t>(i))));
        samples.push_back(std::move(b));
    }
    if (samples.empty())
        throw CLI::ValidationError("--data", "bench manifest has no reference-guided samples");

    judge::BenchReport report =
        judge::run_bench(samples, judge::mock_judge(), assets_dir, judge_name);

    ensure_dir(out_dir);
    write_text(out_dir + "/report.json", report.to_json() + "\n");
    write_snapshot(out_dir, "bench",
                   {{"checkpoint", ckpt}, {"data", data_dir}, {"judge", judge_name},
                    {"steps", steps}, {"seed", seed}});
    std::cout << report.to_table();

    if (report.unjudged * 10 > static_cast<int64_t>(samples.size()))
        throw std::runtime_error("more than 10% of samples unjudged");
    return 0;
}

int cmd_report(const std::string& funnel_path, const std::string& bench_path) {
    if (funnel_path.empty() && bench_path.empty())
        throw CLI::ValidationError("report", "pass --funnel and/or --bench");
    if (!funnel_path.empty()) {
        json j = json::parse(read_text(funnel_path));
        pipeline::FunnelReport r;
        for (size_t i = 0; i < 4; ++i) {
            const json& s = j.at("stages").at(i);
            r.stages[i] = {s.at("input"), s.at("kept"), s.at("dropped")};
        }
        r.instruct_kept = j.at("instruct_kept");
        for (auto& [k, v] : j.at("drop_reasons").items())
            r.drop_reasons[k] = v.get<int64_t>();
        r.partial = j.at("partial");
        std::cout << r.to_table();
    }
    if (!bench_path.empty()) {
        json j = json::parse(read_text(bench_path));
        auto cat = [&](const char* key) {
            const json& c = j.at(key);
            judge::CategoryMeans m;
            m.present = c.at("present");
            m.judged = c.at("judged");
            m.primary = c.at("primary");
            m.secondary = c.at("secondary");
            m.tertiary = c.at("tertiary");
            return m;
        };
        judge::BenchReport r;
        r.subject = cat("subject");
        r.background = cat("background");
        if (j.contains("overall")) r.overall = j.at("overall").get<double>();
        r.unjudged = j.at("unjudged");
        r.judge_name = j.at("judge");
        std::cout << r.to_table();
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"kiwi-edit: reference-guided video editing at desk scale"};
    app.require_subcommand(1);
    app.set_config("--config");

    uint64_t seed = 0;
    std::string out_flag;
    app.add_option("--seed", seed, "global seed")->capture_default_str();
    app.add_option("--out", out_flag, "output root (or env KIWI_OUT)");

    // synth
    auto* synth = app.add_subcommand("synth", "generate synthetic quadruplets");
    int sy_count = 10, sy_res = 64, sy_frames = 8;
    std::vector<std::string> sy_cats;
    synth->add_option("--count", sy_count)->capture_default_str();
    synth->add_option("--categories", sy_cats, "edit categories (default: all)");
    synth->add_option("--resolution", sy_res)->capture_default_str();
    synth->add_option("--frames", sy_frames)->capture_default_str();

    // pipeline
    auto* pipe = app.add_subcommand("pipeline", "run the four-stage curation pipeline");
    std::string pl_in, pl_adapters = "oracle";
    pipeline::PipelineConfig pl_cfg;
    pipeline::NoiseOptions pl_noise;
    pipe->add_option("--in", pl_in, "dataset directory from synth")->required();
    pipe->add_option("--adapters", pl_adapters, "oracle | noisy")->capture_default_str();
    pipe->add_option("--instruct-threshold", pl_cfg.instruct_threshold)->capture_default_str();
    pipe->add_option("--reference-threshold", pl_cfg.reference_threshold)->capture_default_str();
    pipe->add_option("--verify-threshold", pl_cfg.verify_threshold)->capture_default_str();
    pipe->add_option("--dedup-cosine", pl_cfg.dedup_cosine)->capture_default_str();
    pipe->add_option("--min-side", pl_cfg.min_side)->capture_default_str();
    pipe->add_option("--workers", pl_cfg.workers)->capture_default_str();
    pipe->add_option("--ground-fail", pl_noise.ground_fail)->capture_default_str();
    pipe->add_option("--score-noise", pl_noise.score_noise)->capture_default_str();
    pipe->add_option("--verify-noise", pl_noise.verify_noise)->capture_default_str();
    pipe->add_option("--duplicate-rate", pl_noise.duplicate_rate)->capture_default_str();

    // train
    auto* tr = app.add_subcommand("train", "run one curriculum stage");
    int tr_stage = 1, tr_steps = 50, tr_res = 32, tr_frames = 4, tr_batch = 1, tr_accum = 1;
    int tr_pool = 0;
    double tr_lr = 1e-3;
    std::string tr_init, tr_ablation;
    tr->add_option("--stage", tr_stage)->capture_default_str();
    tr->add_option("--steps", tr_steps)->capture_default_str();
    tr->add_option("--resolution", tr_res)->capture_default_str();
    tr->add_option("--frames", tr_frames)->capture_default_str();
    tr->add_option("--lr", tr_lr)->capture_default_str();
    tr->add_option("--batch", tr_batch)->capture_default_str();
    tr->add_option("--accum", tr_accum)->capture_default_str();
    tr->add_option("--init", tr_init, "prior-stage checkpoint");
    tr->add_option("--ablation", tr_ablation,
                   "injection mode: add_scaled | add_unscaled | add_shared_embed | channel_concat");
    tr->add_option("--pool", tr_pool, "finite sample pool size (0 = unlimited)")
        ->capture_default_str();

    // edit
    auto* ed = app.add_subcommand("edit", "apply an edit to a source video");
    std::string ed_ckpt, ed_in, ed_instruction, ed_ref;
    int ed_steps = 50;
    ed->add_option("--ckpt", ed_ckpt)->required();
    ed->add_option("--input", ed_in, "directory with src_%04d.png frames")->required();
    ed->add_option("--instruction", ed_instruction)->required();
    ed->add_option("--reference", ed_ref, "reference PNG (optional)");
    ed->add_option("--steps", ed_steps)->capture_default_str();

    // bench
    auto* be = app.add_subcommand("bench", "edit + judge a benchmark set");
    std::string be_ckpt, be_data, be_judge = "mock", be_assets = "assets/prompts";
    int be_steps = 8;
    be->add_option("--ckpt", be_ckpt)->required();
    be->add_option("--data", be_data, "dataset directory from synth")->required();
    be->add_option("--judge", be_judge)->capture_default_str();
    be->add_option("--assets", be_assets, "prompt template directory")->capture_default_str();
    be->add_option("--steps", be_steps)->capture_default_str();

    // report
    auto* rp = app.add_subcommand("report", "render stored reports");
    std::string rp_funnel, rp_bench;
    rp->add_option("--funnel", rp_funnel, "funnel.json path");
    rp->add_option("--bench", rp_bench, "report.json path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    const std::string root = output_root(out_flag);
    try {
        if (synth->parsed())
            return cmd_synth(sy_count, sy_cats, seed, sy_res, sy_frames, root + "/synth");
        if (pipe->parsed())
            return cmd_pipeline(pl_in, pl_adapters, pl_noise, pl_cfg, seed,
                                root + "/pipeline");
        if (tr->parsed())
            return cmd_train(tr_stage, tr_steps, tr_res, tr_frames, tr_lr, tr_batch,
                             tr_accum, seed, tr_init, tr_ablation, tr_pool,
                             root + "/train_stage" + std::to_string(tr_stage));
        if (ed->parsed())
            return cmd_edit(ed_ckpt, ed_in, ed_instruction, ed_ref, ed_steps, seed,
                            root + "/edit");
        if (be->parsed())
            return cmd_bench(be_ckpt, be_data, be_judge, be_assets, be_steps, seed,
                             root + "/bench");
        if (rp->parsed()) return cmd_report(rp_funnel, rp_bench);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const seq_error& e) {
        std::cerr << "sequencing error: " << e.what() << "\n";
        return kExitSequencing;
    } catch (const io_error& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInternal;
    }
    return kExitUsage;
}
