#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kiwi/tensor.hpp"
#include "kiwi/world.hpp"

namespace kiwi::pipeline {

// Four-stage data engine: EditScore filter -> ground & segment -> synthesize
// reference -> verify & de-duplicate. Adapters are pluggable so the oracle
// (synthetic-world-backed) and noisy (seeded corruption) suites shipped here
// can be swapped for real model services.

enum class GroundBranch { Edit, Foreground };

enum class Disposition { Pending, Kept, Dropped };

struct CandidateRecord {
    int64_t id = 0;
    world::GeneratedSample sample; // payload + provenance for oracle adapters

    std::optional<double> edit_score; // 0-10
    bool reference_track = false;
    std::optional<world::FrameBox> bbox; // first target frame
    std::optional<Tensor> mask;          // (H,W) in {0,1}
    std::optional<Tensor> reference;     // (h,w,3)
    std::optional<double> verify_score;  // 0-10
    std::vector<double> embedding;       // unit L2 norm

    Disposition disposition = Disposition::Pending;
    int drop_stage = 0;
    std::string drop_reason;
};

struct AdapterSuite {
    // edit_score 0-10 for (source, target, instruction)
    std::function<double(const CandidateRecord&)> scorer;
    // bounding box on the first target frame
    std::function<world::FrameBox(const CandidateRecord&, GroundBranch)> grounder;
    // (H,W) {0,1} mask refined from the box
    std::function<Tensor(const CandidateRecord&, const world::FrameBox&)> segmenter;
    // reference image for the record's branch
    std::function<Tensor(const CandidateRecord&, const Tensor& mask, GroundBranch)> synthesizer;
    // consistency score 0-10 of reference vs edited content
    std::function<double(const CandidateRecord&)> verifier;
    // unit-norm feature vector of an image
    std::function<std::vector<double>(const Tensor& image)> embedder;
};

struct PipelineConfig {
    double instruct_threshold = 6.0;
    double reference_threshold = 8.0; // strict: score must exceed it
    double verify_threshold = 7.0;
    std::vector<world::EditKind> reference_categories = {
        world::EditKind::LocalRecolor, world::EditKind::LocalReplace,
        world::EditKind::LocalAdd, world::EditKind::BackgroundChange};
    double min_aspect = 1.0 / 3.0, max_aspect = 3.0; // w/h bounds
    int min_side = 32;
    double dedup_cosine = 0.95;
    int workers = 1;
};

struct StageFunnel {
    int64_t input = 0, kept = 0, dropped = 0;
};

struct FunnelReport {
    std::array<StageFunnel, 4> stages{}; // reference-track funnel
    int64_t instruct_kept = 0;           // instruct-track records passing stage 1
    std::map<std::string, int64_t> drop_reasons; // "stage2/no-region" -> count
    bool partial = false;

    std::string to_json() const;
    std::string to_table() const;
};

struct PipelineResult {
    std::vector<CandidateRecord> records; // all inputs, with final dispositions
    std::vector<int64_t> manifest_ids;    // kept quadruplets, ascending id
    FunnelReport report;
};

// Stage entry points operate in place; dropped records are terminal.
void stage1_filter(std::vector<CandidateRecord>& records, const PipelineConfig& cfg,
                   FunnelReport& report);
void stage2_ground_segment(std::vector<CandidateRecord>& records, const AdapterSuite& adapters,
                           const PipelineConfig& cfg, FunnelReport& report);
void stage3_synthesize(std::vector<CandidateRecord>& records, const AdapterSuite& adapters,
                       const PipelineConfig& cfg, FunnelReport& report);
void stage4_verify_dedup(std::vector<CandidateRecord>& records, const AdapterSuite& adapters,
                         const PipelineConfig& cfg, FunnelReport& report);

PipelineResult run_pipeline(std::vector<CandidateRecord> records, const AdapterSuite& adapters,
                            const PipelineConfig& cfg);

// Wrap generated samples as pending records with ids 0..n-1.
std::vector<CandidateRecord> make_records(const std::vector<world::GeneratedSample>& samples);

// Ground-truth adapters: scores are always 10, grounding/segmentation come
// from analytic annotations, synthesis from the reference derivation.
AdapterSuite oracle_adapters();

struct NoiseOptions {
    double score_noise = 0.0;   // stddev added to edit scores
    double ground_fail = 0.0;   // probability the grounder returns no region
    double segment_fail = 0.0;  // probability of an inconsistent mask
    double synth_fail = 0.0;    // probability the synthesizer throws
    double verify_noise = 0.0;  // stddev added to verify scores
    double duplicate_rate = 0.0; // probability a record reuses a canned embedding
};

// Oracle adapters with seeded per-record corruption; deterministic in
// (seed, record id) regardless of call order.
AdapterSuite noisy_adapters(const NoiseOptions& opts, uint64_t seed);

// Line-delimited JSON manifest of record metadata (images referenced by
// seed/provenance, not inlined).
void write_manifest(const std::string& path, const std::vector<CandidateRecord>& records);

const char* disposition_name(Disposition d);
const char* branch_name(GroundBranch b);
GroundBranch branch_for(world::EditKind category);

} // namespace kiwi::pipeline
