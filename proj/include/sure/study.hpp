#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "sure/errors.hpp"
#include "sure/labels.hpp"

namespace sure {

// DICOM-style projection annotation. Special carries the raw string verbatim.
enum class ViewKind { PA, AP, Lateral, LL, Unknown, Special };

struct ViewTag {
    ViewKind kind = ViewKind::Unknown;
    std::string text;  // verbatim payload for Special; canonical name otherwise

    static ViewTag from_string(const std::string& s) {
        if (s == "PA") return {ViewKind::PA, s};
        if (s == "AP") return {ViewKind::AP, s};
        if (s == "LATERAL") return {ViewKind::Lateral, s};
        if (s == "LL") return {ViewKind::LL, s};
        if (s == "UNK") return {ViewKind::Unknown, s};
        return {ViewKind::Special, s};
    }

    const std::string& to_string() const { return text; }

    friend bool operator==(const ViewTag&, const ViewTag&) = default;
};

// Classifier probability slots, in corpus order.
inline constexpr std::size_t kProbPA = 0;
inline constexpr std::size_t kProbAP = 1;
inline constexpr std::size_t kProbLateral = 2;
inline constexpr std::size_t kProbOther = 3;

using ViewProbs = std::array<double, 4>;

inline void validate_view_probs(const ViewProbs& p) {
    double sum = 0.0;
    for (double v : p) {
        if (!(v >= 0.0 && v <= 1.0)) throw FormatError("view probability out of [0,1]");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw FormatError("view probabilities do not sum to 1");
}

// Half-open row range into an EMB1 embedding file.
struct EmbeddingRef {
    std::string file;
    std::size_t row_begin = 0;
    std::size_t row_end = 0;

    friend bool operator==(const EmbeddingRef&, const EmbeddingRef&) = default;
};

struct ImageRecord {
    std::string image_id;
    ViewTag view_tag;
    std::optional<ViewProbs> view_probs;
    EmbeddingRef embedding_ref;

    friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

// Findings text plus sentences derived from it by the sentence splitter.
// label_vectors, when present, align 1:1 with sentences. embedding_ref
// points at one EMB1 row per sentence (prior reports only; the filter needs
// sentence embeddings).
struct Report {
    std::string findings_text;
    std::vector<std::string> sentences;
    std::optional<std::vector<LabelVector>> label_vectors;
    std::optional<EmbeddingRef> embedding_ref;

    friend bool operator==(const Report&, const Report&) = default;
};

// One patient visit. prior1 is the most recent prior, prior2 the older one;
// prior2 present implies prior1 present.
struct Study {
    std::string study_id;
    std::vector<ImageRecord> images;
    Report report;
    std::optional<Report> prior1;
    std::optional<Report> prior2;

    friend bool operator==(const Study&, const Study&) = default;
};

inline void validate_report(const Report& r) {
    if (r.label_vectors && r.label_vectors->size() != r.sentences.size())
        throw FormatError("label vector count " + std::to_string(r.label_vectors->size()) +
                          " != sentence count " + std::to_string(r.sentences.size()));
    if (r.embedding_ref &&
        r.embedding_ref->row_end - r.embedding_ref->row_begin != r.sentences.size())
        throw FormatError("embedding row range does not cover one row per sentence");
}

inline void validate_study(const Study& s) {
    if (s.study_id.empty()) throw FormatError("empty study_id");
    if (s.images.empty()) throw FormatError("study " + s.study_id + " has no images");
    for (const auto& img : s.images) {
        if (img.view_probs) validate_view_probs(*img.view_probs);
        if (img.embedding_ref.row_end <= img.embedding_ref.row_begin)
            throw FormatError("image " + img.image_id + " has an empty embedding row range");
    }
    validate_report(s.report);
    if (s.prior1) validate_report(*s.prior1);
    if (s.prior2) validate_report(*s.prior2);
    if (s.prior2 && !s.prior1)
        throw FormatError("study " + s.study_id + " has prior2 without prior1");
}

}  // namespace sure
