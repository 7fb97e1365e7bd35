#pragma once

#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sure/errors.hpp"
#include "sure/labels.hpp"
#include "sure/matrix.hpp"

namespace sure {

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeMismatch("cosine: vector lengths differ");
    if (a.empty()) throw ZeroVector();
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw ZeroVector();
    const double sim = dot / (std::sqrt(na) * std::sqrt(nb));
    if (!std::isfinite(sim)) throw NumericalFailure("cosine_similarity");
    return sim;
}

inline std::vector<double> mean_rows(const Matrix& m) {
    if (m.rows() == 0) throw EmptyContext();
    std::vector<double> out(m.cols(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) out[j] += m(i, j);
    for (double& v : out) v /= static_cast<double>(m.rows());
    return out;
}

// Frozen abbreviation guard list for the sentence splitter. A period ending
// one of these words is not a sentence boundary. Compared case-insensitively.
inline constexpr std::array<std::string_view, 6> kAbbreviationGuards = {
    "dr.", "mr.", "mrs.", "ms.", "a.m.", "p.m."};

namespace detail {

inline bool guard_suppresses(const std::string& text, std::size_t dot) {
    std::size_t start = dot;
    while (start > 0 && !std::isspace(static_cast<unsigned char>(text[start - 1]))) --start;
    std::string word = text.substr(start, dot - start + 1);
    for (char& c : word) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    for (std::string_view g : kAbbreviationGuards)
        if (word == g) return true;
    return false;
}

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

}  // namespace detail

// Splits at '.', '!', '?' followed by whitespace or end of text. Decimals
// like "1.5" never split (the dot is not followed by whitespace) and guarded
// abbreviations never split. Terminators stay with their sentence.
inline std::vector<std::string> split_sentences(const std::string& text) {
    std::vector<std::string> out;
    std::size_t begin = 0;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c != '.' && c != '!' && c != '?') continue;
        const bool at_end = i + 1 == text.size();
        if (!at_end && !std::isspace(static_cast<unsigned char>(text[i + 1]))) continue;
        if (c == '.' && detail::guard_suppresses(text, i)) continue;
        std::string s = detail::trim(std::string_view(text).substr(begin, i - begin + 1));
        if (!s.empty()) out.push_back(std::move(s));
        begin = i + 1;
    }
    std::string tail = detail::trim(std::string_view(text).substr(begin));
    if (!tail.empty()) out.push_back(std::move(tail));
    return out;
}

enum class SentenceSource { Prior1, Prior2 };

inline const char* sentence_source_name(SentenceSource s) {
    return s == SentenceSource::Prior1 ? "prior1" : "prior2";
}

struct SentenceRecord {
    std::string text;
    SentenceSource source = SentenceSource::Prior1;
    LabelVector labels;
    std::vector<double> embedding;
    std::optional<double> similarity;  // filled by filter_prior

    friend bool operator==(const SentenceRecord&, const SentenceRecord&) = default;
};

enum class FilterMode { None, Fixed, Dynamic };

inline const char* filter_mode_name(FilterMode m) {
    switch (m) {
        case FilterMode::None: return "none";
        case FilterMode::Fixed: return "fixed";
        case FilterMode::Dynamic: return "dynamic";
    }
    return "none";
}

inline FilterMode filter_mode_from_string(const std::string& s) {
    if (s == "none") return FilterMode::None;
    if (s == "fixed") return FilterMode::Fixed;
    if (s == "dynamic") return FilterMode::Dynamic;
    throw ConfigError("unknown filter mode: " + s + " (want none|fixed|dynamic)");
}

// tau gates every sentence against current image evidence. tau_high_plus is
// the stricter Dynamic-mode gate for Prior2 sentences that assert a finding
// absent from Prior1 (a vanished finding). strict_all_prior2 widens the
// stricter gate to every Prior2 sentence.
struct FilterConfig {
    FilterMode mode = FilterMode::Dynamic;
    double tau = 0.22;
    double tau_high_plus = 0.30;
    bool require_positive = true;
    bool strict_all_prior2 = false;

    void validate() const {
        if (!(tau >= -1.0 && tau <= 1.0 && tau_high_plus >= -1.0 && tau_high_plus <= 1.0))
            throw ConfigError("filter thresholds must lie in [-1, 1]");
        if (mode == FilterMode::Dynamic && !(tau_high_plus > tau))
            throw ConfigError("dynamic mode requires tau_high_plus > tau");
    }
};

using PathologySet = std::array<bool, kNumPathologies>;

// A finding vanished when some Prior2 sentence marks it Positive and no
// Prior1 sentence does. Uncertain does not count on either side.
inline PathologySet vanished_findings(const std::vector<SentenceRecord>& prior1,
                                      const std::vector<SentenceRecord>& prior2) {
    PathologySet in_p1{};
    for (const auto& s : prior1)
        for (std::size_t j = 0; j < kNumPathologies; ++j)
            if (s.labels[j] == FindingLabel::Positive) in_p1[j] = true;
    PathologySet out{};
    for (const auto& s : prior2)
        for (std::size_t j = 0; j < kNumPathologies; ++j)
            if (s.labels[j] == FindingLabel::Positive && !in_p1[j]) out[j] = true;
    return out;
}

enum class DropReason { NoPositiveFinding, BelowTau, BelowTauHighPlus };

inline const char* drop_reason_name(DropReason r) {
    switch (r) {
        case DropReason::NoPositiveFinding: return "no_positive_finding";
        case DropReason::BelowTau: return "below_tau";
        case DropReason::BelowTauHighPlus: return "below_tau_high_plus";
    }
    return "below_tau";
}

struct FilterOutcome {
    std::vector<SentenceRecord> retained;  // Prior1 first, then Prior2, input order within
    std::vector<std::pair<SentenceRecord, DropReason>> dropped;
    std::vector<bool> kept;                // aligned with the input sentence order
};

// Applies the positive-finding gate, then the mode's similarity rule. Every
// record comes back with its similarity filled, retained or not.
inline FilterOutcome filter_prior(const std::vector<SentenceRecord>& sentences,
                                  std::span<const double> image_embedding,
                                  const FilterConfig& cfg) {
    cfg.validate();

    std::vector<std::size_t> p1_idx, p2_idx;
    for (std::size_t i = 0; i < sentences.size(); ++i)
        (sentences[i].source == SentenceSource::Prior1 ? p1_idx : p2_idx).push_back(i);

    std::vector<SentenceRecord> p1, p2;
    for (std::size_t i : p1_idx) p1.push_back(sentences[i]);
    for (std::size_t i : p2_idx) p2.push_back(sentences[i]);
    const PathologySet vanished = vanished_findings(p1, p2);

    FilterOutcome out;
    out.kept.assign(sentences.size(), false);
    auto consider = [&](std::size_t input_idx) {
        SentenceRecord rec = sentences[input_idx];
        rec.similarity = cosine_similarity(rec.embedding, image_embedding);

        if (cfg.require_positive && !has_positive_finding(rec.labels)) {
            out.dropped.emplace_back(std::move(rec), DropReason::NoPositiveFinding);
            return;
        }
        if (cfg.mode == FilterMode::None) {
            out.kept[input_idx] = true;
            out.retained.push_back(std::move(rec));
            return;
        }

        bool strict = false;
        if (cfg.mode == FilterMode::Dynamic && rec.source == SentenceSource::Prior2) {
            if (cfg.strict_all_prior2) {
                strict = true;
            } else {
                for (std::size_t j = 0; j < kNumPathologies && !strict; ++j)
                    if (rec.labels[j] == FindingLabel::Positive && vanished[j]) strict = true;
            }
        }
        const double threshold = strict ? cfg.tau_high_plus : cfg.tau;
        if (*rec.similarity >= threshold) {
            out.kept[input_idx] = true;
            out.retained.push_back(std::move(rec));
        } else {
            out.dropped.emplace_back(std::move(rec),
                                     strict ? DropReason::BelowTauHighPlus : DropReason::BelowTau);
        }
    };

    for (std::size_t i : p1_idx) consider(i);
    for (std::size_t i : p2_idx) consider(i);
    return out;
}

}  // namespace sure
