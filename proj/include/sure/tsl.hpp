#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "sure/errors.hpp"
#include "sure/labels.hpp"
#include "sure/study.hpp"

namespace sure {

// Report-level pathology prevalence over a training corpus, index 0..12.
using FreqTable = std::array<std::uint64_t, kNumPathologies>;

// Frequency tiers plus the loss knobs. Findings at or above t1 are common,
// below t2 rare, in between mid-tier; raw weights 1.0 / 1.5 / 2.0 favor the
// rare end. alpha floors the normalized weights, gamma scales the key loss.
// fixed_max pins the normalization maximum M (per-corpus mode); when absent
// M is the max raw weight of the batch at hand.
struct TierConfig {
    std::uint64_t t1 = 20000;
    std::uint64_t t2 = 8000;
    double alpha = 0.1;
    double gamma = 2.0;
    std::optional<double> fixed_max;

    void validate() const {
        if (!(t2 < t1) || t2 == 0) throw ConfigError("tiers must satisfy 0 < t2 < t1");
        if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
        if (gamma < 0.0) throw ConfigError("gamma must be >= 0");
        if (fixed_max && *fixed_max <= 0.0) throw ConfigError("fixed_max must be > 0");
    }
};

inline double raw_weight(std::uint64_t freq, const TierConfig& cfg) {
    cfg.validate();
    if (freq >= cfg.t1) return 1.0;
    if (freq >= cfg.t2) return 1.5;
    return 2.0;
}

// A pathology counts once per report in which any sentence marks it Positive
// or Uncertain. sentence_level switches to counting every sentence mention.
inline FreqTable label_frequencies(const std::vector<Study>& corpus, bool sentence_level = false) {
    FreqTable counts{};
    for (const Study& s : corpus) {
        if (!s.report.label_vectors) throw MissingLabels(s.study_id);
        std::array<bool, kNumPathologies> seen{};
        for (const LabelVector& lv : *s.report.label_vectors) {
            for (std::size_t j = 0; j < kNumPathologies; ++j) {
                const bool hit =
                    lv[j] == FindingLabel::Positive || lv[j] == FindingLabel::Uncertain;
                if (!hit) continue;
                if (sentence_level) ++counts[j];
                else seen[j] = true;
            }
        }
        if (!sentence_level)
            for (std::size_t j = 0; j < kNumPathologies; ++j)
                if (seen[j]) ++counts[j];
    }
    return counts;
}

// Rarity of a sentence is the count of its least frequent asserted finding;
// empty for non-key sentences.
inline std::optional<std::uint64_t> sentence_rarity(const LabelVector& lv, const FreqTable& freq) {
    std::optional<std::uint64_t> rarity;
    for (std::size_t j = 0; j < kNumPathologies; ++j)
        if (lv[j] == FindingLabel::Positive || lv[j] == FindingLabel::Uncertain)
            rarity = rarity ? std::min(*rarity, freq[j]) : freq[j];
    return rarity;
}

struct NormalizedWeights {
    std::vector<double> weights;
    double m = 0.0;
};

// w = alpha + (1 - alpha) * raw / M maps raws into (alpha, 1] keeping order.
inline NormalizedWeights normalize_weights(std::span<const double> raws, const TierConfig& cfg) {
    cfg.validate();
    if (raws.empty()) throw EmptyWeightSet();
    for (double r : raws)
        if (r <= 0.0) throw EmptyWeightSet();
    NormalizedWeights out;
    out.m = cfg.fixed_max.value_or(*std::max_element(raws.begin(), raws.end()));
    out.weights.resize(raws.size());
    for (std::size_t i = 0; i < raws.size(); ++i)
        out.weights[i] = cfg.alpha + (1.0 - cfg.alpha) * raws[i] / out.m;
    return out;
}

inline std::vector<std::string> whitespace_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream is(text);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

// Half-open token index range of one sentence within the report's stream.
struct TokenSpan {
    std::size_t begin = 0;
    std::size_t end = 0;

    friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

inline std::vector<TokenSpan> spans_for_sentences(const std::vector<std::string>& sentences) {
    std::vector<TokenSpan> out;
    out.reserve(sentences.size());
    std::size_t at = 0;
    for (const std::string& s : sentences) {
        const std::size_t n = whitespace_tokens(s).size();
        out.push_back({at, at + n});
        at += n;
    }
    return out;
}

struct WeightPlan {
    std::vector<double> sentence_weights;  // 0 for non-key sentences
    std::vector<double> token_weights;     // broadcast from the owning sentence
    double m = 0.0;                        // normalization maximum; 0 when no key sentence

    friend bool operator==(const WeightPlan&, const WeightPlan&) = default;
};

// Spans must tile the token stream in order; the report must carry label
// vectors aligned with its sentences. Reports with no key sentence get an
// all-zero plan (there is nothing to normalize against).
inline WeightPlan build_weight_plan(const Report& report, const FreqTable& freq,
                                    const TierConfig& cfg, const std::vector<TokenSpan>& spans) {
    cfg.validate();
    if (!report.label_vectors) throw MissingLabels("report without label vectors");
    const auto& labels = *report.label_vectors;
    if (labels.size() != report.sentences.size())
        throw AlignmentError("label vectors do not align with sentences");
    if (spans.size() != report.sentences.size())
        throw AlignmentError("token spans do not align with sentences");
    std::size_t at = 0;
    for (const TokenSpan& sp : spans) {
        if (sp.begin != at || sp.end < sp.begin) throw AlignmentError("token spans do not tile the stream");
        at = sp.end;
    }

    WeightPlan plan;
    plan.sentence_weights.assign(labels.size(), 0.0);
    plan.token_weights.assign(at, 0.0);

    std::vector<double> raws;
    std::vector<std::size_t> key_idx;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (auto rarity = sentence_rarity(labels[i], freq)) {
            raws.push_back(raw_weight(*rarity, cfg));
            key_idx.push_back(i);
        }
    }
    if (raws.empty()) return plan;

    const NormalizedWeights norm = normalize_weights(raws, cfg);
    plan.m = norm.m;
    for (std::size_t k = 0; k < key_idx.size(); ++k) {
        const std::size_t i = key_idx[k];
        plan.sentence_weights[i] = norm.weights[k];
        for (std::size_t t = spans[i].begin; t < spans[i].end; ++t)
            plan.token_weights[t] = norm.weights[k];
    }
    return plan;
}

struct TslLoss {
    double ce = 0.0;
    double key = 0.0;
    double total = 0.0;
};

// total = ce + gamma * key; ce averages every token's loss, key averages the
// weighted losses (non-key tokens carry weight 0). Zero tokens yield zeros.
inline TslLoss tsl_loss(std::span<const double> token_losses, const WeightPlan& plan,
                        const TierConfig& cfg) {
    cfg.validate();
    if (token_losses.size() != plan.token_weights.size())
        throw AlignmentError("token losses do not align with the weight plan");
    TslLoss out;
    if (token_losses.empty()) return out;
    const double n = static_cast<double>(token_losses.size());
    for (std::size_t i = 0; i < token_losses.size(); ++i) {
        out.ce += token_losses[i];
        out.key += plan.token_weights[i] * token_losses[i];
    }
    out.ce /= n;
    out.key /= n;
    out.total = out.ce + cfg.gamma * out.key;
    return out;
}

// d(total)/d(loss_t) = (1 + gamma * w_t) / N. At gamma = 0 this is exactly
// the plain cross-entropy scale 1/N for every token.
inline std::vector<double> tsl_grad_scale(std::span<const double> token_weights, double gamma) {
    if (token_weights.empty()) throw EmptyWeightSet();
    if (gamma < 0.0) throw ConfigError("gamma must be >= 0");
    const double n = static_cast<double>(token_weights.size());
    std::vector<double> out(token_weights.size());
    for (std::size_t i = 0; i < token_weights.size(); ++i)
        out[i] = (1.0 + gamma * token_weights[i]) / n;
    return out;
}

}  // namespace sure
