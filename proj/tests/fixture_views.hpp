#pragma once

// Hand-written oracle table for view repair under the default policy
// (theta_assign=0.70, theta_override=0.90, fallback=ExcludeImage). 50 images
// covering every tag family x probability pattern, including both override
// thresholds exactly at the boundary. Expected values were derived by hand
// from the policy rules, not from the implementation.

#include <array>
#include <optional>
#include <vector>

#include "sure/study.hpp"
#include "sure/view_repair.hpp"

namespace fixture {

struct ViewCase {
    const char* tag;
    std::optional<sure::ViewProbs> probs;  // {PA, AP, LATERAL, OTHER}
    sure::ResolvedView resolved;
    sure::RepairProvenance provenance;
    double confidence;
};

inline std::vector<ViewCase> view_cases() {
    using sure::ResolvedView;
    using sure::RepairProvenance;
    using P = sure::ViewProbs;
    const auto K = RepairProvenance::KeptOriginal;
    const auto R = RepairProvenance::ResolvedUnknown;
    const auto O = RepairProvenance::Overridden;
    const auto F = RepairProvenance::FellBack;
    const auto PA = ResolvedView::PA;
    const auto AP = ResolvedView::AP;
    const auto LA = ResolvedView::Lateral;
    const auto EX = ResolvedView::Excluded;

    return {
        // Explicit PA
        {"PA", std::nullopt, PA, K, 1.0},
        {"PA", P{0.97, 0.01, 0.01, 0.01}, PA, K, 0.97},
        {"PA", P{0.01, 0.97, 0.01, 0.01}, PA, K, 0.01},   // AP top: same side, keep
        {"PA", P{0.02, 0.02, 0.95, 0.01}, LA, O, 0.95},   // cross side above threshold
        {"PA", P{0.05, 0.05, 0.88, 0.02}, PA, K, 0.05},   // cross side below threshold
        {"PA", P{0.02, 0.02, 0.90, 0.06}, LA, O, 0.90},   // boundary: >= overrides
        {"PA", P{0.01, 0.01, 0.01, 0.97}, EX, O, 0.97},   // confident OTHER excludes
        {"PA", P{0.25, 0.25, 0.25, 0.25}, PA, K, 0.25},   // tie: lowest index wins
        // Explicit AP
        {"AP", std::nullopt, AP, K, 1.0},
        {"AP", P{0.10, 0.80, 0.06, 0.04}, AP, K, 0.80},
        {"AP", P{0.95, 0.03, 0.01, 0.01}, AP, K, 0.03},   // PA top: same side
        {"AP", P{0.02, 0.02, 0.95, 0.01}, LA, O, 0.95},
        {"AP", P{0.04, 0.05, 0.89, 0.02}, AP, K, 0.05},
        {"AP", P{0.02, 0.02, 0.01, 0.95}, EX, O, 0.95},
        // Explicit LATERAL
        {"LATERAL", std::nullopt, LA, K, 1.0},
        {"LATERAL", P{0.005, 0.005, 0.99, 0.0}, LA, K, 0.99},
        {"LATERAL", P{0.95, 0.02, 0.02, 0.01}, PA, O, 0.95},
        {"LATERAL", P{0.03, 0.92, 0.03, 0.02}, AP, O, 0.92},
        {"LATERAL", P{0.85, 0.05, 0.08, 0.02}, LA, K, 0.08},
        {"LATERAL", P{0.0, 0.005, 0.005, 0.99}, EX, O, 0.99},
        // Explicit LL, normalized to the lateral class
        {"LL", std::nullopt, LA, K, 1.0},
        {"LL", P{0.02, 0.95, 0.02, 0.01}, AP, O, 0.95},
        {"LL", P{0.04, 0.03, 0.90, 0.03}, LA, K, 0.90},
        {"LL", P{0.05, 0.89, 0.04, 0.02}, LA, K, 0.04},
        // UNK
        {"UNK", std::nullopt, EX, F, 0.0},
        {"UNK", P{0.75, 0.10, 0.10, 0.05}, PA, R, 0.75},
        {"UNK", P{0.10, 0.70, 0.10, 0.10}, AP, R, 0.70},  // boundary: >= resolves
        {"UNK", P{0.02, 0.02, 0.95, 0.01}, LA, R, 0.95},
        {"UNK", P{0.005, 0.0, 0.005, 0.99}, EX, R, 0.99},  // confidently OTHER
        {"UNK", P{0.65, 0.20, 0.10, 0.05}, EX, F, 0.65},
        // OTHER top below override threshold never disturbs an explicit tag
        {"PA", P{0.06, 0.05, 0.04, 0.85}, PA, K, 0.06},
        {"UNK", P{0.10, 0.10, 0.69, 0.11}, EX, F, 0.69},
        // Special projection strings behave like UNK
        {"SWIMMERS", std::nullopt, EX, F, 0.0},
        {"SWIMMERS", P{0.05, 0.90, 0.03, 0.02}, AP, R, 0.90},
        {"LORDOTIC", P{0.14, 0.10, 0.71, 0.05}, LA, R, 0.71},
        {"XTABLE", P{0.20, 0.15, 0.35, 0.30}, EX, F, 0.35},
        // More boundary coverage
        {"PA", P{0.89, 0.03, 0.05, 0.03}, PA, K, 0.89},
        {"AP", P{0.05, 0.90, 0.03, 0.02}, AP, K, 0.90},
        {"LATERAL", P{0.03, 0.02, 0.90, 0.05}, LA, K, 0.90},
        {"LL", P{0.90, 0.04, 0.03, 0.03}, PA, O, 0.90},
        {"UNK", P{0.70, 0.10, 0.10, 0.10}, PA, R, 0.70},
        {"UNK", P{0.05, 0.70, 0.15, 0.10}, AP, R, 0.70},
        {"UNK", P{0.15, 0.15, 0.70, 0.0}, LA, R, 0.70},
        {"UNK", P{0.0, 0.0, 0.0, 1.0}, EX, R, 1.0},
        {"PA", P{0.0, 0.0, 1.0, 0.0}, LA, O, 1.0},
        {"LATERAL", P{1.0, 0.0, 0.0, 0.0}, PA, O, 1.0},
        {"AP", P{0.0, 0.0, 0.89, 0.11}, AP, K, 0.0},
        {"SWIMMERS", P{0.25, 0.25, 0.25, 0.25}, EX, F, 0.25},
        {"LATERAL", P{0.04, 0.05, 0.06, 0.85}, LA, K, 0.06},
        {"UNK", P{0.69, 0.11, 0.10, 0.10}, EX, F, 0.69},
    };
}

}  // namespace fixture
