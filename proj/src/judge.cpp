#include "kiwi/judge.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "kiwi/params.hpp"

using nlohmann::json;

namespace kiwi::judge {

const char* category_name(BenchCategory c) {
    return c == BenchCategory::Subject ? "subject" : "background";
}

BenchCategory category_from_name(const std::string& s) {
    if (s == "subject") return BenchCategory::Subject;
    if (s == "background") return BenchCategory::Background;
    throw std::invalid_argument("unknown bench category: " + s);
}

const std::array<std::string, 3>& dimension_names(BenchCategory c) {
    static const std::array<std::string, 3> subject = {
        "Identity Consistency & Compliance",
        "Temporal Consistency & Texture Fidelity",
        "Physical Integration & Tracking"};
    static const std::array<std::string, 3> background = {
        "Reference Fidelity & Preservation",
        "Matting Quality & Temporal Stability",
        "Visual Harmony & Perspective"};
    return c == BenchCategory::Subject ? subject : background;
}

JudgeFn mock_judge() {
    return [](const BenchSample& sample, const std::string&) {
        const auto& names = dimension_names(sample.category);
        std::ostringstream os;
        os << "Brief reasoning: deterministic mock scores.\n";
        for (int d = 0; d < 3; ++d) {
            const uint64_t h = fnv1a64(&sample.id, sizeof(sample.id),
                                       0xcbf29ce484222325ull + static_cast<uint64_t>(d));
            os << names[static_cast<size_t>(d)] << ": " << 1 + static_cast<int>(h % 5)
               << "\n";
        }
        return os.str();
    };
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

} // namespace

std::optional<DimensionScores> parse_scores(const std::string& response, BenchCategory c) {
    const auto& names = dimension_names(c);
    std::array<std::optional<int>, 3> found;

    std::istringstream in(response);
    std::string line;
    while (std::getline(in, line)) {
        line = trim(line);
        for (size_t d = 0; d < 3; ++d) {
            const std::string prefix = names[d] + ":";
            if (line.rfind(prefix, 0) != 0) continue;
            const std::string rest = trim(line.substr(prefix.size()));
            if (rest.size() != 1 || rest[0] < '1' || rest[0] > '5') return std::nullopt;
            if (found[d]) return std::nullopt; // duplicated dimension line
            found[d] = rest[0] - '0';
        }
    }
    if (!found[0] || !found[1] || !found[2]) return std::nullopt;
    return DimensionScores{*found[0], *found[1], *found[2]};
}

DimensionScores apply_cap(const DimensionScores& raw) {
    DimensionScores c = raw;
    c.secondary = std::min(c.secondary, c.primary);
    c.tertiary = std::min(c.tertiary, c.primary);
    return c;
}

std::string load_prompt_template(const std::string& assets_dir, BenchCategory c) {
    const std::string path = assets_dir + "/" +
                             (c == BenchCategory::Subject ? "judge_subject.txt"
                                                          : "judge_background.txt");
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read prompt template: " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::string substitute_prompt(const std::string& tmpl, const std::string& instruction) {
    const std::string key = "{prompt}";
    std::string out = tmpl;
    const auto pos = out.find(key);
    if (pos == std::string::npos)
        throw std::runtime_error("prompt template has no {prompt} placeholder");
    out.replace(pos, key.size(), instruction);
    return out;
}

uint64_t prompt_hash(const std::string& text) {
    return fnv1a64(text.data(), text.size());
}

ScoredSample score_sample(const BenchSample& sample, const JudgeFn& judge,
                          const std::string& prompt_template) {
    if (sample.edited.numel() == 0)
        throw std::invalid_argument("bench sample has no edited video");
    const std::string prompt = substitute_prompt(prompt_template, sample.instruction);

    ScoredSample out;
    out.id = sample.id;
    out.category = sample.category;
    for (int attempt = 0; attempt < 2; ++attempt) {
        out.transcript = judge(sample, prompt);
        if (auto scores = parse_scores(out.transcript, sample.category)) {
            out.judged = true;
            out.raw = *scores;
            out.capped = apply_cap(*scores);
            return out;
        }
    }
    return out; // unjudged after retry
}

BenchReport aggregate(std::vector<ScoredSample> samples) {
    BenchReport r;
    for (const ScoredSample& s : samples) {
        if (!s.judged) {
            ++r.unjudged;
            continue;
        }
        CategoryMeans& m =
            s.category == BenchCategory::Subject ? r.subject : r.background;
        m.present = true;
        ++m.judged;
        m.primary += s.capped.primary;
        m.secondary += s.capped.secondary;
        m.tertiary += s.capped.tertiary;
    }
    for (CategoryMeans* m : {&r.subject, &r.background})
        if (m->judged > 0) {
            m->primary /= m->judged;
            m->secondary /= m->judged;
            m->tertiary /= m->judged;
        }
    if (r.subject.present && r.background.present)
        r.overall = overall_from_means({r.subject.primary, r.subject.secondary,
                                        r.subject.tertiary, r.background.primary,
                                        r.background.secondary, r.background.tertiary});
    r.samples = std::move(samples);
    return r;
}

double overall_from_means(const std::array<double, 6>& means) {
    double acc = 0.0;
    for (double m : means) acc += m;
    return acc / 6.0;
}

BenchReport run_bench(const std::vector<BenchSample>& samples, const JudgeFn& judge,
                      const std::string& assets_dir, const std::string& judge_name) {
    const std::string subj = load_prompt_template(assets_dir, BenchCategory::Subject);
    const std::string back = load_prompt_template(assets_dir, BenchCategory::Background);

    std::vector<ScoredSample> scored;
    scored.reserve(samples.size());
    for (const BenchSample& s : samples)
        scored.push_back(
            score_sample(s, judge, s.category == BenchCategory::Subject ? subj : back));

    BenchReport r = aggregate(std::move(scored));
    r.judge_name = judge_name;
    r.subject_prompt_hash = prompt_hash(subj);
    r.background_prompt_hash = prompt_hash(back);
    return r;
}

std::string BenchReport::to_json() const {
    auto cat = [](const CategoryMeans& m) {
        return json{{"present", m.present}, {"judged", m.judged},
                    {"primary", m.primary}, {"secondary", m.secondary},
                    {"tertiary", m.tertiary}};
    };
    json per_sample = json::array();
    for (const ScoredSample& s : samples) {
        json j{{"id", s.id},
               {"category", category_name(s.category)},
               {"judged", s.judged}};
        if (s.judged) {
            j["raw"] = {s.raw.primary, s.raw.secondary, s.raw.tertiary};
            j["capped"] = {s.capped.primary, s.capped.secondary, s.capped.tertiary};
        }
        per_sample.push_back(std::move(j));
    }
    json j{{"schema", 1},
           {"judge", judge_name},
           {"subject", cat(subject)},
           {"background", cat(background)},
           {"unjudged", unjudged},
           {"subject_prompt_hash", subject_prompt_hash},
           {"background_prompt_hash", background_prompt_hash},
           {"samples", per_sample}};
    if (overall) j["overall"] = *overall;
    return j.dump();
}

std::string BenchReport::to_table() const {
    std::ostringstream os;
    auto row = [&](const char* name, const CategoryMeans& m, BenchCategory c) {
        const auto& dims = dimension_names(c);
        if (!m.present) {
            os << name << ": absent\n";
            return;
        }
        os << name << " (" << m.judged << " judged)\n";
        char buf[160];
        std::snprintf(buf, sizeof(buf), "  %-42s %.2f\n  %-42s %.2f\n  %-42s %.2f\n",
                      dims[0].c_str(), m.primary, dims[1].c_str(), m.secondary,
                      dims[2].c_str(), m.tertiary);
        os << buf;
    };
    row("Subject Reference", subject, BenchCategory::Subject);
    row("Background Replacement", background, BenchCategory::Background);
    if (overall) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "Overall: %.2f\n", *overall);
        os << buf;
    } else {
        os << "Overall: undefined (missing category)\n";
    }
    if (unjudged > 0) os << "Unjudged samples: " << unjudged << "\n";
    os << "Judge: " << judge_name << "\n";
    return os.str();
}

} // namespace kiwi::judge
