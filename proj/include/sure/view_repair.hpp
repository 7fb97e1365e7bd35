#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "sure/errors.hpp"
#include "sure/study.hpp"

namespace sure {

enum class RepairFallback { ExcludeImage, TreatAsFrontal };

// theta_assign gates resolving a blank (UNK/special) tag; theta_override gates
// overturning an explicit human tag, which demands more evidence.
struct RepairPolicy {
    double theta_assign = 0.70;
    double theta_override = 0.90;
    RepairFallback fallback = RepairFallback::ExcludeImage;

    void validate() const {
        if (!(theta_assign > 0.0 && theta_assign <= theta_override && theta_override <= 1.0))
            throw ConfigError("repair thresholds must satisfy 0 < theta_assign <= theta_override <= 1");
    }
};

enum class ResolvedView { PA, AP, Lateral, Excluded };

enum class RepairProvenance { KeptOriginal, ResolvedUnknown, Overridden, FellBack };

struct RepairedView {
    ResolvedView resolved = ResolvedView::Excluded;
    RepairProvenance provenance = RepairProvenance::FellBack;
    double confidence = 0.0;

    friend bool operator==(const RepairedView&, const RepairedView&) = default;
};

inline bool is_frontal(ResolvedView v) { return v == ResolvedView::PA || v == ResolvedView::AP; }

namespace detail {

// Lowest index wins ties, so repair decisions are order-independent.
inline std::size_t argmax_prob(const ViewProbs& p) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < p.size(); ++i)
        if (p[i] > p[best]) best = i;
    return best;
}

inline ResolvedView class_of_prob_index(std::size_t i) {
    switch (i) {
        case kProbPA: return ResolvedView::PA;
        case kProbAP: return ResolvedView::AP;
        case kProbLateral: return ResolvedView::Lateral;
        default: return ResolvedView::Excluded;  // OTHER
    }
}

// Explicit tags normalized to the classifier's class set; LL is a lateral.
inline std::optional<ResolvedView> explicit_class(ViewKind kind) {
    switch (kind) {
        case ViewKind::PA: return ResolvedView::PA;
        case ViewKind::AP: return ResolvedView::AP;
        case ViewKind::Lateral:
        case ViewKind::LL: return ResolvedView::Lateral;
        default: return std::nullopt;
    }
}

inline std::size_t prob_index_of_class(ResolvedView v) {
    switch (v) {
        case ResolvedView::PA: return kProbPA;
        case ResolvedView::AP: return kProbAP;
        case ResolvedView::Lateral: return kProbLateral;
        default: return kProbOther;
    }
}

}  // namespace detail

// Deterministic, total repair of one view annotation. Explicit tags are kept
// unless the classifier contradicts their frontal/lateral side with at least
// theta_override confidence; blanks resolve at theta_assign or fall back.
inline RepairedView repair_view(const ViewTag& tag, const std::optional<ViewProbs>& probs,
                                const RepairPolicy& policy) {
    policy.validate();
    const auto explicit_cls = detail::explicit_class(tag.kind);

    if (explicit_cls) {
        if (!probs) return {*explicit_cls, RepairProvenance::KeptOriginal, 1.0};
        const std::size_t top = detail::argmax_prob(*probs);
        const ResolvedView top_cls = detail::class_of_prob_index(top);
        const bool same_side = (top_cls != ResolvedView::Excluded) &&
                               (is_frontal(top_cls) == is_frontal(*explicit_cls));
        if (!same_side && (*probs)[top] >= policy.theta_override)
            return {top_cls, RepairProvenance::Overridden, (*probs)[top]};
        return {*explicit_cls, RepairProvenance::KeptOriginal,
                (*probs)[detail::prob_index_of_class(*explicit_cls)]};
    }

    // UNK or special projection string.
    if (probs) {
        const std::size_t top = detail::argmax_prob(*probs);
        if ((*probs)[top] >= policy.theta_assign)
            return {detail::class_of_prob_index(top), RepairProvenance::ResolvedUnknown,
                    (*probs)[top]};
    }
    const ResolvedView fell = policy.fallback == RepairFallback::TreatAsFrontal
                                  ? ResolvedView::AP
                                  : ResolvedView::Excluded;
    const double conf = probs ? (*probs)[detail::argmax_prob(*probs)] : 0.0;
    return {fell, RepairProvenance::FellBack, conf};
}

inline const char* resolved_view_name(ResolvedView v) {
    switch (v) {
        case ResolvedView::PA: return "PA";
        case ResolvedView::AP: return "AP";
        case ResolvedView::Lateral: return "LATERAL";
        case ResolvedView::Excluded: return "EXCLUDED";
    }
    return "EXCLUDED";
}

inline const char* provenance_name(RepairProvenance p) {
    switch (p) {
        case RepairProvenance::KeptOriginal: return "kept_original";
        case RepairProvenance::ResolvedUnknown: return "resolved_unknown";
        case RepairProvenance::Overridden: return "overridden";
        case RepairProvenance::FellBack: return "fell_back";
    }
    return "fell_back";
}

struct SplitResult {
    std::vector<ImageRecord> frontal;
    std::vector<ImageRecord> lateral;
    std::vector<RepairedView> audit;  // one entry per input image, in input order
};

// Partitions a study's images into frontal and lateral sets; excluded images
// appear only in the audit. Throws NoUsableViews when nothing survives.
inline SplitResult split_views(const Study& study, const RepairPolicy& policy) {
    SplitResult out;
    out.audit.reserve(study.images.size());
    for (const auto& img : study.images) {
        const RepairedView rv = repair_view(img.view_tag, img.view_probs, policy);
        out.audit.push_back(rv);
        if (rv.resolved == ResolvedView::Excluded) continue;
        ImageRecord repaired = img;
        repaired.view_tag = ViewTag::from_string(resolved_view_name(rv.resolved));
        (is_frontal(rv.resolved) ? out.frontal : out.lateral).push_back(std::move(repaired));
    }
    if (out.frontal.empty() && out.lateral.empty()) throw NoUsableViews(study.study_id);
    return out;
}

}  // namespace sure
