#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "kiwi/tensor.hpp"

namespace kiwi::judge {

// RefVIE-Bench harness: three-dimension 1-5 scoring through a judge adapter,
// hierarchical capping, and six-mean aggregation.

enum class BenchCategory { Subject, Background };

const char* category_name(BenchCategory c);
BenchCategory category_from_name(const std::string& s);

// Dimension line labels as they must appear in the judge's response.
const std::array<std::string, 3>& dimension_names(BenchCategory c);

struct BenchSample {
    int64_t id = 0;
    Tensor source;     // (T,H,W,3)
    Tensor reference;  // (h,w,3)
    std::string instruction;
    BenchCategory category = BenchCategory::Subject;
    Tensor edited;     // (T,H,W,3), system output
};

struct DimensionScores {
    int primary = 1, secondary = 1, tertiary = 1;
};

struct ScoredSample {
    int64_t id = 0;
    BenchCategory category = BenchCategory::Subject;
    bool judged = false;
    DimensionScores raw;    // as parsed
    DimensionScores capped; // post hierarchical cap
    std::string transcript; // judge response, archived for audit
};

// The judge receives the fully substituted rubric prompt; the sample carries
// the attachments. Returns free-form response text.
using JudgeFn = std::function<std::string(const BenchSample&, const std::string& prompt)>;

// Deterministic stand-in judge: scores derive from a hash of the sample id
// and land in 1..5, response uses the exact expected line format.
JudgeFn mock_judge();

// Strict parser for the "Example Response Format" layout: one line per
// dimension, "<name>: <integer 1..5>". Returns nullopt on any deviation.
std::optional<DimensionScores> parse_scores(const std::string& response, BenchCategory c);

DimensionScores apply_cap(const DimensionScores& raw);

// Prompt handling: templates are loaded from disk and "{prompt}" replaced by
// the instruction.
std::string load_prompt_template(const std::string& assets_dir, BenchCategory c);
std::string substitute_prompt(const std::string& tmpl, const std::string& instruction);
uint64_t prompt_hash(const std::string& text);

// Invokes the judge (retrying once on a parse failure); an unparseable second
// response yields judged=false.
ScoredSample score_sample(const BenchSample& sample, const JudgeFn& judge,
                          const std::string& prompt_template);

struct CategoryMeans {
    bool present = false;
    int64_t judged = 0;
    double primary = 0, secondary = 0, tertiary = 0;
};

struct BenchReport {
    CategoryMeans subject;
    CategoryMeans background;
    std::optional<double> overall; // unset when a category is absent
    int64_t unjudged = 0;
    std::string judge_name;
    uint64_t subject_prompt_hash = 0;
    uint64_t background_prompt_hash = 0;
    std::vector<ScoredSample> samples;

    std::string to_json() const;
    std::string to_table() const;
};

BenchReport aggregate(std::vector<ScoredSample> samples);

// Overall under the aggregation rule, from six dimension means ordered
// (subject p/s/t, background p/s/t).
double overall_from_means(const std::array<double, 6>& means);

// Full run: scores every sample against its category rubric and aggregates.
BenchReport run_bench(const std::vector<BenchSample>& samples, const JudgeFn& judge,
                      const std::string& assets_dir, const std::string& judge_name);

} // namespace kiwi::judge
