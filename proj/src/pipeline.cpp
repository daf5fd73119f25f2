#include "kiwi/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>
#include <omp.h>

#include "kiwi/rng.hpp"

using nlohmann::json;

namespace kiwi::pipeline {

const char* disposition_name(Disposition d) {
    switch (d) {
        case Disposition::Pending: return "pending";
        case Disposition::Kept: return "kept";
        case Disposition::Dropped: return "dropped";
    }
    return "?";
}

const char* branch_name(GroundBranch b) {
    return b == GroundBranch::Edit ? "edit" : "foreground";
}

GroundBranch branch_for(world::EditKind category) {
    return category == world::EditKind::BackgroundChange ? GroundBranch::Foreground
                                                         : GroundBranch::Edit;
}

namespace {

void drop(CandidateRecord& r, int stage, const std::string& reason) {
    if (r.disposition != Disposition::Pending) return; // terminal states stick
    r.disposition = Disposition::Dropped;
    r.drop_stage = stage;
    r.drop_reason = reason;
}

void tally_drops(const std::vector<CandidateRecord>& records, int stage,
                 FunnelReport& report) {
    for (const CandidateRecord& r : records)
        if (r.disposition == Disposition::Dropped && r.drop_stage == stage)
            ++report.drop_reasons["stage" + std::to_string(stage) + "/" + r.drop_reason];
}

bool category_allowed(const PipelineConfig& cfg, world::EditKind k) {
    return std::find(cfg.reference_categories.begin(), cfg.reference_categories.end(), k) !=
           cfg.reference_categories.end();
}

void validate(const PipelineConfig& cfg) {
    if (cfg.reference_threshold < cfg.instruct_threshold)
        throw std::invalid_argument("reference threshold must be >= instruct threshold");
    if (cfg.workers < 1) throw std::invalid_argument("workers must be >= 1");
}

std::vector<size_t> live_reference_indices(const std::vector<CandidateRecord>& records) {
    std::vector<size_t> idx;
    for (size_t i = 0; i < records.size(); ++i)
        if (records[i].disposition == Disposition::Pending && records[i].reference_track)
            idx.push_back(i);
    return idx;
}

} // namespace

void stage1_filter(std::vector<CandidateRecord>& records, const PipelineConfig& cfg,
                   FunnelReport& report) {
    validate(cfg);
    StageFunnel& f = report.stages[0];
    for (CandidateRecord& r : records) {
        if (r.disposition != Disposition::Pending) continue;
        ++f.input;
        if (!r.edit_score) {
            drop(r, 1, "unscored");
            continue;
        }
        if (*r.edit_score < cfg.instruct_threshold) {
            drop(r, 1, "low-score");
            continue;
        }
        ++report.instruct_kept;
        r.reference_track = *r.edit_score > cfg.reference_threshold &&
                            category_allowed(cfg, r.sample.edit.kind);
    }
    for (const CandidateRecord& r : records)
        if (r.reference_track) ++f.kept;
    f.dropped = f.input - f.kept;
    tally_drops(records, 1, report);
}

void stage2_ground_segment(std::vector<CandidateRecord>& records,
                           const AdapterSuite& adapters, const PipelineConfig& cfg,
                           FunnelReport& report) {
    const std::vector<size_t> idx = live_reference_indices(records);
    StageFunnel& f = report.stages[1];
    f.input = static_cast<int64_t>(idx.size());

#pragma omp parallel for schedule(dynamic) num_threads(cfg.workers)
    for (int64_t ii = 0; ii < static_cast<int64_t>(idx.size()); ++ii) {
        CandidateRecord& r = records[idx[static_cast<size_t>(ii)]];
        const GroundBranch branch = branch_for(r.sample.edit.kind);
        try {
            world::FrameBox box = adapters.grounder(r, branch);
            if (box.empty()) {
                drop(r, 2, "no-region");
                continue;
            }
            Tensor mask = adapters.segmenter(r, box);
            const int64_t h = mask.dim(0), w = mask.dim(1);
            bool contained = true;
            for (int64_t y = 0; y < h && contained; ++y)
                for (int64_t x = 0; x < w; ++x) {
                    if (mask[y * w + x] == 0.0) continue;
                    const double cx = x + 0.5, cy = y + 0.5;
                    if (cx < box.x0 || cx > box.x1 || cy < box.y0 || cy > box.y1) {
                        contained = false;
                        break;
                    }
                }
            if (!contained) {
                drop(r, 2, "inconsistent-mask");
                continue;
            }
            r.bbox = box;
            r.mask = std::move(mask);
        } catch (const std::exception&) {
            drop(r, 2, "adapter-error");
        }
    }

    for (size_t i : idx)
        if (records[i].disposition == Disposition::Pending) ++f.kept;
    f.dropped = f.input - f.kept;
    tally_drops(records, 2, report);
}

void stage3_synthesize(std::vector<CandidateRecord>& records, const AdapterSuite& adapters,
                       const PipelineConfig& cfg, FunnelReport& report) {
    const std::vector<size_t> idx = live_reference_indices(records);
    StageFunnel& f = report.stages[2];
    f.input = static_cast<int64_t>(idx.size());

#pragma omp parallel for schedule(dynamic) num_threads(cfg.workers)
    for (int64_t ii = 0; ii < static_cast<int64_t>(idx.size()); ++ii) {
        CandidateRecord& r = records[idx[static_cast<size_t>(ii)]];
        if (!r.bbox || !r.mask) {
            drop(r, 3, "missing-grounding");
            continue;
        }
        const GroundBranch branch = branch_for(r.sample.edit.kind);
        try {
            Tensor ref = adapters.synthesizer(r, *r.mask, branch);
            const int64_t h = ref.dim(0), w = ref.dim(1);
            if (h <= 0 || w <= 0) {
                drop(r, 3, "empty-image");
                continue;
            }
            const double aspect = static_cast<double>(w) / static_cast<double>(h);
            if (aspect < cfg.min_aspect || aspect > cfg.max_aspect) {
                drop(r, 3, "aspect-ratio");
                continue;
            }
            if (std::min(h, w) < cfg.min_side) {
                drop(r, 3, "resolution");
                continue;
            }
            if (branch == GroundBranch::Foreground) {
                // clean-background contract: the foreground must be gone
                const Tensor& frame0 = r.sample.quad.target;
                const int64_t fh = frame0.dim(1), fw = frame0.dim(2);
                if (h == fh && w == fw) {
                    bool any_mask = false, all_equal = true;
                    for (int64_t y = 0; y < h; ++y)
                        for (int64_t x = 0; x < w; ++x) {
                            if ((*r.mask)[y * w + x] == 0.0) continue;
                            any_mask = true;
                            for (int64_t c = 0; c < 3; ++c)
                                if (ref[(y * w + x) * 3 + c] !=
                                    frame0[((0 * fh + y) * fw + x) * 3 + c])
                                    all_equal = false;
                        }
                    if (any_mask && all_equal) {
                        drop(r, 3, "foreground-residue");
                        continue;
                    }
                }
            }
            r.reference = std::move(ref);
        } catch (const std::exception&) {
            drop(r, 3, "synth-error");
        }
    }

    for (size_t i : idx)
        if (records[i].disposition == Disposition::Pending) ++f.kept;
    f.dropped = f.input - f.kept;
    tally_drops(records, 3, report);
}

void stage4_verify_dedup(std::vector<CandidateRecord>& records, const AdapterSuite& adapters,
                         const PipelineConfig& cfg, FunnelReport& report) {
    const std::vector<size_t> idx = live_reference_indices(records);
    StageFunnel& f = report.stages[3];
    f.input = static_cast<int64_t>(idx.size());

    for (size_t i : idx) {
        CandidateRecord& r = records[i];
        if (!r.reference) {
            drop(r, 4, "missing-reference");
            continue;
        }
        try {
            r.verify_score = adapters.verifier(r);
        } catch (const std::exception&) {
            drop(r, 4, "adapter-error");
            continue;
        }
        if (*r.verify_score < cfg.verify_threshold) {
            drop(r, 4, "low-verify");
            continue;
        }
        r.embedding = adapters.embedder(*r.reference);
        double norm2 = 0.0;
        for (double v : r.embedding) norm2 += v * v;
        if (std::abs(std::sqrt(norm2) - 1.0) > 1e-6)
            throw std::runtime_error("embedder returned a non-unit vector for record " +
                                     std::to_string(r.id));
    }

    // greedy keep-first dedup in ascending id order
    std::vector<size_t> survivors;
    for (size_t i : idx)
        if (records[i].disposition == Disposition::Pending) survivors.push_back(i);
    std::sort(survivors.begin(), survivors.end(),
              [&](size_t a, size_t b) { return records[a].id < records[b].id; });

    std::vector<const std::vector<double>*> kept;
    for (size_t i : survivors) {
        CandidateRecord& r = records[i];
        bool duplicate = false;
        for (const auto* e : kept) {
            double dot = 0.0;
            for (size_t k = 0; k < e->size() && k < r.embedding.size(); ++k)
                dot += (*e)[k] * r.embedding[k];
            if (dot >= cfg.dedup_cosine) {
                duplicate = true;
                break;
            }
        }
        if (duplicate) {
            drop(r, 4, "duplicate");
        } else {
            r.disposition = Disposition::Kept;
            kept.push_back(&r.embedding);
        }
    }

    for (size_t i : idx)
        if (records[i].disposition == Disposition::Kept) ++f.kept;
    f.dropped = f.input - f.kept;
    tally_drops(records, 4, report);
}

PipelineResult run_pipeline(std::vector<CandidateRecord> records, const AdapterSuite& adapters,
                            const PipelineConfig& cfg) {
    PipelineResult out;
    for (CandidateRecord& r : records) {
        if (r.disposition != Disposition::Pending || r.edit_score) continue;
        try {
            r.edit_score = adapters.scorer(r);
        } catch (const std::exception&) {
            // left unscored; stage 1 drops it with a reason
        }
    }
    stage1_filter(records, cfg, out.report);
    stage2_ground_segment(records, adapters, cfg, out.report);
    stage3_synthesize(records, adapters, cfg, out.report);
    stage4_verify_dedup(records, adapters, cfg, out.report);

    for (const CandidateRecord& r : records)
        if (r.disposition == Disposition::Kept) out.manifest_ids.push_back(r.id);
    std::sort(out.manifest_ids.begin(), out.manifest_ids.end());
    out.records = std::move(records);
    return out;
}

std::vector<CandidateRecord> make_records(const std::vector<world::GeneratedSample>& samples) {
    std::vector<CandidateRecord> records;
    records.reserve(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) {
        CandidateRecord r;
        r.id = static_cast<int64_t>(i);
        r.sample = samples[i];
        records.push_back(std::move(r));
    }
    return records;
}

// ---------------------------------------------------------------------------
// adapter suites

namespace {

std::vector<double> content_embedding(const Tensor& image) {
    // exact-duplicate oracle: the pixel content (quantized to the u8 grid the
    // renderer emits) is hashed and the hash seeds a random unit vector, so
    // identical images share an embedding (cosine 1) while images differing in
    // any pixel land nearly orthogonal — far below any sane dedup threshold
    uint64_t h = 1469598103934665603ull;
    auto mix = [&h](uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 1099511628211ull;
        }
    };
    mix(static_cast<uint64_t>(image.dim(0)));
    mix(static_cast<uint64_t>(image.dim(1)));
    for (int64_t i = 0; i < image.numel(); ++i)
        mix(static_cast<uint64_t>(std::llround(std::clamp(image[i], 0.0, 1.0) * 255.0)));

    Rng rng(h);
    std::vector<double> e(64);
    double norm2 = 0.0;
    for (double& v : e) {
        v = rng.normal();
        norm2 += v * v;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& v : e) v *= inv;
    return e;
}

} // namespace

AdapterSuite oracle_adapters() {
    AdapterSuite a;
    a.scorer = [](const CandidateRecord&) { return 10.0; };
    a.grounder = [](const CandidateRecord& r, GroundBranch) {
        return world::ground_truth_annotations(r.sample).boxes.at(0);
    };
    a.segmenter = [](const CandidateRecord& r, const world::FrameBox&) {
        const Tensor masks = world::ground_truth_annotations(r.sample).masks;
        const int64_t h = masks.dim(1), w = masks.dim(2);
        Tensor m({h, w});
        for (int64_t i = 0; i < h * w; ++i) m[i] = masks[i]; // frame 0
        return m;
    };
    a.synthesizer = [](const CandidateRecord& r, const Tensor&, GroundBranch) {
        return world::derive_reference(r.sample.edited_scene, r.sample.edit);
    };
    a.verifier = [](const CandidateRecord&) { return 10.0; };
    a.embedder = content_embedding;
    return a;
}

AdapterSuite noisy_adapters(const NoiseOptions& opts, uint64_t seed) {
    AdapterSuite base = oracle_adapters();
    AdapterSuite a = base;
    const Rng root(seed);

    if (opts.score_noise > 0.0)
        a.scorer = [base, root, s = opts.score_noise](const CandidateRecord& r) {
            Rng rng = root.fork(static_cast<uint64_t>(r.id) * 8 + 1);
            return std::clamp(base.scorer(r) + rng.normal(0.0, s), 0.0, 10.0);
        };
    if (opts.ground_fail > 0.0)
        a.grounder = [base, root, p = opts.ground_fail](const CandidateRecord& r,
                                                        GroundBranch b) {
            Rng rng = root.fork(static_cast<uint64_t>(r.id) * 8 + 2);
            if (rng.bernoulli(p)) return world::FrameBox{};
            return base.grounder(r, b);
        };
    if (opts.segment_fail > 0.0)
        a.segmenter = [base, root, p = opts.segment_fail](const CandidateRecord& r,
                                                          const world::FrameBox& box) {
            Rng rng = root.fork(static_cast<uint64_t>(r.id) * 8 + 3);
            if (rng.bernoulli(p)) {
                const Tensor& tgt = r.sample.quad.target;
                return Tensor::full({tgt.dim(1), tgt.dim(2)}, 1.0); // spills the box
            }
            return base.segmenter(r, box);
        };
    if (opts.synth_fail > 0.0 || opts.duplicate_rate > 0.0)
        a.synthesizer = [base, root, pf = opts.synth_fail, pd = opts.duplicate_rate](
                            const CandidateRecord& r, const Tensor& m, GroundBranch b) {
            Rng rng = root.fork(static_cast<uint64_t>(r.id) * 8 + 4);
            if (pf > 0.0 && rng.bernoulli(pf))
                throw std::runtime_error("synthesizer failure (injected)");
            if (pd > 0.0 && rng.bernoulli(pd))
                return Tensor::full({33, 33, 3}, 128.0 / 255.0); // canned duplicate
            return base.synthesizer(r, m, b);
        };
    if (opts.verify_noise > 0.0)
        a.verifier = [base, root, s = opts.verify_noise](const CandidateRecord& r) {
            Rng rng = root.fork(static_cast<uint64_t>(r.id) * 8 + 5);
            return std::clamp(base.verifier(r) + rng.normal(0.0, s), 0.0, 10.0);
        };
    return a;
}

// ---------------------------------------------------------------------------
// reporting / persistence

std::string FunnelReport::to_json() const {
    json st = json::array();
    for (const StageFunnel& s : stages)
        st.push_back({{"input", s.input}, {"kept", s.kept}, {"dropped", s.dropped}});
    json reasons;
    for (const auto& [k, v] : drop_reasons) reasons[k] = v;
    return json{{"schema", 1},
                {"stages", st},
                {"instruct_kept", instruct_kept},
                {"drop_reasons", reasons},
                {"partial", partial}}
        .dump();
}

std::string FunnelReport::to_table() const {
    std::ostringstream os;
    os << "stage  input   kept    dropped\n";
    for (size_t i = 0; i < stages.size(); ++i) {
        char line[80];
        std::snprintf(line, sizeof(line), "%-6zu %-7lld %-7lld %-7lld\n", i + 1,
                      static_cast<long long>(stages[i].input),
                      static_cast<long long>(stages[i].kept),
                      static_cast<long long>(stages[i].dropped));
        os << line;
    }
    os << "instruct-track kept: " << instruct_kept << "\n";
    for (const auto& [k, v] : drop_reasons) os << "  " << k << ": " << v << "\n";
    if (partial) os << "WARNING: partial report\n";
    return os.str();
}

void write_manifest(const std::string& path, const std::vector<CandidateRecord>& records) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest: " + path);
    for (const CandidateRecord& r : records) {
        json j{{"schema", 1},
               {"id", r.id},
               {"seed", r.sample.seed},
               {"category", world::edit_kind_name(r.sample.edit.kind)},
               {"instruction", r.sample.quad.instruction},
               {"reference_track", r.reference_track},
               {"disposition", disposition_name(r.disposition)}};
        if (r.edit_score) j["edit_score"] = *r.edit_score;
        if (r.verify_score) j["verify_score"] = *r.verify_score;
        if (r.bbox) j["bbox"] = {r.bbox->x0, r.bbox->y0, r.bbox->x1, r.bbox->y1};
        if (r.reference)
            j["reference_size"] = {r.reference->dim(0), r.reference->dim(1)};
        if (r.disposition == Disposition::Dropped) {
            j["drop_stage"] = r.drop_stage;
            j["drop_reason"] = r.drop_reason;
        }
        if (!r.embedding.empty()) j["embedding"] = r.embedding;
        out << j.dump() << "\n";
    }
    if (!out) throw std::runtime_error("manifest write failed: " + path);
}

} // namespace kiwi::pipeline
