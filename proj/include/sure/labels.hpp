#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>

#include "sure/errors.hpp"

namespace sure {

// One slot of a 14-dimensional finding vector. Corpus files encode the
// states as integers: -1 Negative, 0 Absent, 1 Positive, 2 Uncertain.
enum class FindingLabel : std::int8_t { Absent, Negative, Uncertain, Positive };

inline constexpr std::size_t kNumFindings = 14;
inline constexpr std::size_t kNumPathologies = 13;
inline constexpr std::size_t kNoFindingIndex = 13;

// Canonical CheXbert ordering; index 13 is "No Finding".
inline constexpr std::array<std::string_view, kNumFindings> kFindingNames = {
    "Enlarged Cardiomediastinum",
    "Cardiomegaly",
    "Lung Opacity",
    "Lung Lesion",
    "Edema",
    "Consolidation",
    "Pneumonia",
    "Atelectasis",
    "Pneumothorax",
    "Pleural Effusion",
    "Pleural Other",
    "Fracture",
    "Support Devices",
    "No Finding",
};

struct LabelVector {
    std::array<FindingLabel, kNumFindings> labels{};

    FindingLabel operator[](std::size_t i) const { return labels[i]; }
    FindingLabel& operator[](std::size_t i) { return labels[i]; }

    friend bool operator==(const LabelVector&, const LabelVector&) = default;
};

inline int label_to_code(FindingLabel label) {
    switch (label) {
        case FindingLabel::Negative: return -1;
        case FindingLabel::Absent: return 0;
        case FindingLabel::Positive: return 1;
        case FindingLabel::Uncertain: return 2;
    }
    return 0;
}

// Throws InvalidLabelCode on any entry outside {-1, 0, 1, 2}.
inline LabelVector parse_label_vector(std::span<const int, kNumFindings> raw) {
    LabelVector lv;
    for (std::size_t i = 0; i < kNumFindings; ++i) {
        switch (raw[i]) {
            case -1: lv[i] = FindingLabel::Negative; break;
            case 0: lv[i] = FindingLabel::Absent; break;
            case 1: lv[i] = FindingLabel::Positive; break;
            case 2: lv[i] = FindingLabel::Uncertain; break;
            default: throw InvalidLabelCode(i, raw[i]);
        }
    }
    return lv;
}

inline LabelVector parse_label_vector(const std::array<int, kNumFindings>& raw) {
    return parse_label_vector(std::span<const int, kNumFindings>(raw));
}

inline std::array<int, kNumFindings> serialize_label_vector(const LabelVector& lv) {
    std::array<int, kNumFindings> raw{};
    for (std::size_t i = 0; i < kNumFindings; ++i) raw[i] = label_to_code(lv[i]);
    return raw;
}

// Key diagnostic sentence: any of the 13 pathology slots Positive or
// Uncertain. The "No Finding" slot never counts.
inline bool is_key_sentence(const LabelVector& lv) {
    for (std::size_t i = 0; i < kNumPathologies; ++i) {
        if (lv[i] == FindingLabel::Positive || lv[i] == FindingLabel::Uncertain) return true;
    }
    return false;
}

// Retention gate: Positive only. Uncertain is deliberately excluded here
// even though it counts toward key-sentence status.
inline bool has_positive_finding(const LabelVector& lv) {
    for (std::size_t i = 0; i < kNumPathologies; ++i) {
        if (lv[i] == FindingLabel::Positive) return true;
    }
    return false;
}

}  // namespace sure
