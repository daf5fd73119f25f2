#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "kiwi/pipeline.hpp"
#include "kiwi/rng.hpp"

using namespace kiwi;

namespace {

std::vector<world::GeneratedSample> clean_samples(int n, uint64_t seed) {
    const world::EditKind kinds[4] = {
        world::EditKind::LocalRecolor, world::EditKind::LocalReplace,
        world::EditKind::LocalAdd, world::EditKind::BackgroundChange};
    std::vector<world::GeneratedSample> out;
    for (int i = 0; i < n; ++i)
        out.push_back(world::make_quadruplet(Rng::seed_mix(seed, static_cast<uint64_t>(i)),
                                             kinds[i % 4]));
    return out;
}

pipeline::PipelineConfig desk_config() {
    pipeline::PipelineConfig cfg;
    cfg.min_side = 8; // synthetic reference crops are small
    return cfg;
}

std::string manifest_string(const std::vector<pipeline::CandidateRecord>& records) {
    namespace fsys = std::filesystem;
    const std::string path =
        (fsys::temp_directory_path() / "kiwi_pipe_manifest.jsonl").string();
    pipeline::write_manifest(path, records);
    std::ifstream in(path);
    std::ostringstream os;
    os << in.rdbuf();
    fsys::remove(path);
    return os.str();
}

} // namespace

TEST_CASE("stage 1 partitions the integer-score fixture exactly") {
    std::vector<pipeline::CandidateRecord> records =
        pipeline::make_records(clean_samples(10, 1));
    for (int i = 0; i < 10; ++i) {
        records[static_cast<size_t>(i)].edit_score = static_cast<double>(i + 1); // 1..10
        records[static_cast<size_t>(i)].sample.edit.kind = world::EditKind::LocalRecolor;
    }

    pipeline::FunnelReport report;
    pipeline::stage1_filter(records, desk_config(), report);

    CHECK(report.instruct_kept == 5); // scores 6..10
    CHECK(report.stages[0].kept == 2); // scores 9, 10 (strict >8)
    CHECK(report.stages[0].input == 10);
    CHECK(report.stages[0].input == report.stages[0].kept + report.stages[0].dropped);
}

TEST_CASE("score exactly 8 passes instruct but not reference (strict bound)") {
    std::vector<pipeline::CandidateRecord> records =
        pipeline::make_records(clean_samples(1, 2));
    records[0].edit_score = 8.0;
    records[0].sample.edit.kind = world::EditKind::LocalRecolor;
    pipeline::FunnelReport report;
    pipeline::stage1_filter(records, desk_config(), report);
    CHECK(report.instruct_kept == 1);
    CHECK_FALSE(records[0].reference_track);
}

TEST_CASE("unscored records drop with a reason; category discipline holds") {
    std::vector<pipeline::CandidateRecord> records =
        pipeline::make_records(clean_samples(2, 3));
    records[1].edit_score = 10.0;
    records[1].sample.edit.kind = world::EditKind::LocalRemove; // not reference-eligible
    pipeline::FunnelReport report;
    pipeline::stage1_filter(records, desk_config(), report);
    CHECK(records[0].disposition == pipeline::Disposition::Dropped);
    CHECK(records[0].drop_reason == "unscored");
    CHECK_FALSE(records[1].reference_track);
    CHECK(report.drop_reasons.at("stage1/unscored") == 1);
}

TEST_CASE("oracle adapters keep every clean record through stages 2-4") {
    pipeline::PipelineResult result = pipeline::run_pipeline(
        pipeline::make_records(clean_samples(24, 4)), pipeline::oracle_adapters(),
        desk_config());

    const pipeline::FunnelReport& r = result.report;
    CHECK(r.stages[0].kept == 24); // oracle scorer gives 10 to all eligible categories
    for (int s = 1; s < 4; ++s) {
        CHECK(r.stages[s].input == r.stages[s - 1].kept);
        CHECK(r.stages[s].dropped == 0);
        CHECK(r.stages[s].kept == r.stages[s].input);
    }
    CHECK(static_cast<int>(result.manifest_ids.size()) == 24);
}

TEST_CASE("oracle grounding equals the analytic annotation box") {
    std::vector<pipeline::CandidateRecord> records =
        pipeline::make_records(clean_samples(4, 5));
    const pipeline::AdapterSuite adapters = pipeline::oracle_adapters();
    for (const pipeline::CandidateRecord& r : records) {
        const world::FrameBox got =
            adapters.grounder(r, pipeline::branch_for(r.sample.edit.kind));
        const world::FrameBox want = world::ground_truth_annotations(r.sample).boxes[0];
        CHECK(got.x0 == want.x0);
        CHECK(got.y0 == want.y0);
        CHECK(got.x1 == want.x1);
        CHECK(got.y1 == want.y1);
    }
}

TEST_CASE("oracle synthesis is pixel-identical to the derived reference") {
    std::vector<pipeline::CandidateRecord> records =
        pipeline::make_records(clean_samples(4, 6));
    const pipeline::AdapterSuite adapters = pipeline::oracle_adapters();
    for (const pipeline::CandidateRecord& r : records) {
        const Tensor got = adapters.synthesizer(r, Tensor::zeros({2, 2}),
                                                pipeline::branch_for(r.sample.edit.kind));
        const Tensor want = world::derive_reference(r.sample.edited_scene, r.sample.edit);
        CHECK(got.vec() == want.vec());
    }
}

TEST_CASE("noisy grounder drops a binomial share at stage 2") {
    const int n = 400;
    pipeline::NoiseOptions noise;
    noise.ground_fail = 0.3;
    pipeline::PipelineResult result = pipeline::run_pipeline(
        pipeline::make_records(clean_samples(n, 7)),
        pipeline::noisy_adapters(noise, 99), desk_config());

    const double expect = n * 0.3;
    const double sigma = std::sqrt(n * 0.3 * 0.7);
    CHECK(std::abs(result.report.stages[1].dropped - expect) <= 3.0 * sigma);
    CHECK(result.report.drop_reasons.count("stage2/no-region") == 1);
}

TEST_CASE("identical embeddings dedup to the lowest id") {
    pipeline::NoiseOptions noise;
    noise.duplicate_rate = 1.0; // every reference becomes the canned image
    pipeline::PipelineResult result = pipeline::run_pipeline(
        pipeline::make_records(clean_samples(6, 8)),
        pipeline::noisy_adapters(noise, 1), desk_config());

    REQUIRE(result.manifest_ids.size() == 1);
    CHECK(result.manifest_ids[0] == 0);
    CHECK(result.report.drop_reasons.at("stage4/duplicate") == 5);
}

TEST_CASE("stage 4 is idempotent on its own output") {
    std::vector<pipeline::CandidateRecord> records =
        pipeline::make_records(clean_samples(8, 9));
    const pipeline::AdapterSuite adapters = pipeline::oracle_adapters();
    pipeline::PipelineResult first =
        pipeline::run_pipeline(std::move(records), adapters, desk_config());

    std::vector<pipeline::CandidateRecord> again = first.records;
    pipeline::FunnelReport report;
    pipeline::stage4_verify_dedup(again, adapters, desk_config(), report);
    for (size_t i = 0; i < again.size(); ++i)
        CHECK(again[i].disposition == first.records[i].disposition);
}

TEST_CASE("worker counts 1 and 8 produce byte-identical manifests") {
    pipeline::NoiseOptions noise;
    noise.ground_fail = 0.2;
    noise.verify_noise = 2.0;
    const pipeline::AdapterSuite adapters = pipeline::noisy_adapters(noise, 5);

    pipeline::PipelineConfig one = desk_config();
    one.workers = 1;
    pipeline::PipelineConfig eight = desk_config();
    eight.workers = 8;

    pipeline::PipelineResult a =
        pipeline::run_pipeline(pipeline::make_records(clean_samples(40, 10)), adapters, one);
    pipeline::PipelineResult b =
        pipeline::run_pipeline(pipeline::make_records(clean_samples(40, 10)), adapters, eight);

    CHECK(manifest_string(a.records) == manifest_string(b.records));
    CHECK(a.report.to_json() == b.report.to_json());
}

TEST_CASE("funnel conservation telescopes across stages") {
    pipeline::NoiseOptions noise;
    noise.ground_fail = 0.25;
    noise.verify_noise = 3.0;
    pipeline::PipelineResult result = pipeline::run_pipeline(
        pipeline::make_records(clean_samples(50, 11)),
        pipeline::noisy_adapters(noise, 3), desk_config());

    for (int s = 0; s < 4; ++s) {
        const pipeline::StageFunnel& f = result.report.stages[static_cast<size_t>(s)];
        CHECK(f.input == f.kept + f.dropped);
        if (s > 0) CHECK(f.input == result.report.stages[static_cast<size_t>(s - 1)].kept);
    }
}

TEST_CASE("non-unit embeddings raise an integrity error") {
    pipeline::AdapterSuite adapters = pipeline::oracle_adapters();
    adapters.embedder = [](const Tensor&) { return std::vector<double>{0.5, 0.5}; };
    std::vector<pipeline::CandidateRecord> records =
        pipeline::make_records(clean_samples(2, 12));
    CHECK_THROWS_AS(pipeline::run_pipeline(std::move(records), adapters, desk_config()),
                    std::runtime_error);
}

TEST_CASE("empty input yields an empty manifest and an all-zero funnel") {
    pipeline::PipelineResult result =
        pipeline::run_pipeline({}, pipeline::oracle_adapters(), desk_config());
    CHECK(result.manifest_ids.empty());
    for (const pipeline::StageFunnel& f : result.report.stages) {
        CHECK(f.input == 0);
        CHECK(f.kept == 0);
        CHECK(f.dropped == 0);
    }
}

TEST_CASE("reference threshold below instruct threshold is rejected") {
    pipeline::PipelineConfig cfg = desk_config();
    cfg.instruct_threshold = 9.0;
    cfg.reference_threshold = 8.0;
    std::vector<pipeline::CandidateRecord> records;
    pipeline::FunnelReport report;
    CHECK_THROWS_AS(pipeline::stage1_filter(records, cfg, report), std::invalid_argument);
}
