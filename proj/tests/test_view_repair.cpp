#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <string>
#include <vector>

#include "fixture_views.hpp"
#include "sure/errors.hpp"
#include "sure/study.hpp"
#include "sure/view_repair.hpp"

using namespace sure;

namespace {

Study study_from_cases(const std::vector<fixture::ViewCase>& cases) {
    Study s;
    s.study_id = "fixture";
    for (std::size_t i = 0; i < cases.size(); ++i) {
        ImageRecord img;
        img.image_id = "img" + std::to_string(i);
        img.view_tag = ViewTag::from_string(cases[i].tag);
        img.view_probs = cases[i].probs;
        img.embedding_ref = {"unused.emb", i, i + 1};
        s.images.push_back(std::move(img));
    }
    s.report.findings_text = "unremarkable.";
    s.report.sentences = {"unremarkable."};
    return s;
}

}  // namespace

TEST_CASE("fixture of 50 view annotations repairs exactly as tabulated", "[view_repair]") {
    const RepairPolicy policy;
    const auto cases = fixture::view_cases();
    REQUIRE(cases.size() == 50);
    for (std::size_t i = 0; i < cases.size(); ++i) {
        INFO("case " << i << " tag=" << cases[i].tag);
        const ViewTag tag = ViewTag::from_string(cases[i].tag);
        const RepairedView got = repair_view(tag, cases[i].probs, policy);
        REQUIRE(got.resolved == cases[i].resolved);
        REQUIRE(got.provenance == cases[i].provenance);
        REQUIRE(got.confidence == cases[i].confidence);
    }
}

TEST_CASE("split partitions every image into frontal, lateral, or audit-only", "[view_repair]") {
    const RepairPolicy policy;
    const auto cases = fixture::view_cases();
    const Study s = study_from_cases(cases);
    const SplitResult split = split_views(s, policy);

    REQUIRE(split.audit.size() == cases.size());
    std::size_t frontal = 0, lateral = 0, excluded = 0;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        REQUIRE(split.audit[i].resolved == cases[i].resolved);
        REQUIRE(split.audit[i].provenance == cases[i].provenance);
        if (split.audit[i].resolved == ResolvedView::Excluded)
            ++excluded;
        else if (is_frontal(split.audit[i].resolved))
            ++frontal;
        else
            ++lateral;
    }
    REQUIRE(split.frontal.size() == frontal);
    REQUIRE(split.lateral.size() == lateral);
    REQUIRE(frontal + lateral + excluded == cases.size());

    // Survivors carry canonical tags and keep their input order.
    std::vector<std::string> want_frontal, want_lateral;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        if (cases[i].resolved == ResolvedView::Excluded) continue;
        (is_frontal(cases[i].resolved) ? want_frontal : want_lateral)
            .push_back("img" + std::to_string(i));
    }
    for (std::size_t i = 0; i < split.frontal.size(); ++i) {
        REQUIRE(split.frontal[i].image_id == want_frontal[i]);
        const auto k = split.frontal[i].view_tag.kind;
        REQUIRE((k == ViewKind::PA || k == ViewKind::AP));
    }
    for (std::size_t i = 0; i < split.lateral.size(); ++i) {
        REQUIRE(split.lateral[i].image_id == want_lateral[i]);
        REQUIRE(split.lateral[i].view_tag.kind == ViewKind::Lateral);
    }
}

TEST_CASE("repair is idempotent: a repaired study re-splits unchanged", "[view_repair]") {
    const RepairPolicy policy;
    const Study s = study_from_cases(fixture::view_cases());
    const SplitResult first = split_views(s, policy);

    Study again = s;
    again.images.clear();
    for (const auto& img : first.frontal) again.images.push_back(img);
    for (const auto& img : first.lateral) again.images.push_back(img);

    const SplitResult second = split_views(again, policy);
    for (const auto& rv : second.audit)
        REQUIRE(rv.provenance == RepairProvenance::KeptOriginal);
    REQUIRE(second.frontal.size() == first.frontal.size());
    REQUIRE(second.lateral.size() == first.lateral.size());
    for (std::size_t i = 0; i < first.frontal.size(); ++i)
        REQUIRE(second.frontal[i].image_id == first.frontal[i].image_id);
    for (std::size_t i = 0; i < first.lateral.size(); ++i)
        REQUIRE(second.lateral[i].image_id == first.lateral[i].image_id);
}

TEST_CASE("raising theta_override never creates more overrides", "[view_repair]") {
    const auto cases = fixture::view_cases();
    std::size_t prev = cases.size() + 1;
    for (double to : {0.90, 0.92, 0.95, 0.97, 1.0}) {
        RepairPolicy policy;
        policy.theta_override = to;
        std::size_t overridden = 0;
        for (const auto& c : cases) {
            const auto rv = repair_view(ViewTag::from_string(c.tag), c.probs, policy);
            if (rv.provenance == RepairProvenance::Overridden) ++overridden;
        }
        REQUIRE(overridden <= prev);
        prev = overridden;
    }
}

TEST_CASE("raising theta_assign never resolves more blanks", "[view_repair]") {
    const auto cases = fixture::view_cases();
    std::size_t prev = cases.size() + 1;
    for (double ta : {0.10, 0.30, 0.50, 0.70, 0.90}) {
        RepairPolicy policy;
        policy.theta_assign = ta;
        std::size_t resolved = 0;
        for (const auto& c : cases) {
            const auto rv = repair_view(ViewTag::from_string(c.tag), c.probs, policy);
            if (rv.provenance == RepairProvenance::ResolvedUnknown) ++resolved;
        }
        REQUIRE(resolved <= prev);
        prev = resolved;
    }
}

TEST_CASE("argmax ties resolve to the lowest probability slot", "[view_repair]") {
    RepairPolicy policy;
    policy.theta_assign = 0.40;
    const ViewProbs tied = {0.45, 0.45, 0.05, 0.05};
    const auto rv = repair_view(ViewTag::from_string("UNK"), tied, policy);
    REQUIRE(rv.resolved == ResolvedView::PA);
    REQUIRE(rv.provenance == RepairProvenance::ResolvedUnknown);
    REQUIRE(rv.confidence == 0.45);
}

TEST_CASE("treat-as-frontal fallback lands on AP", "[view_repair]") {
    RepairPolicy policy;
    policy.fallback = RepairFallback::TreatAsFrontal;

    const auto blank = repair_view(ViewTag::from_string("UNK"), std::nullopt, policy);
    REQUIRE(blank.resolved == ResolvedView::AP);
    REQUIRE(blank.provenance == RepairProvenance::FellBack);
    REQUIRE(blank.confidence == 0.0);

    const ViewProbs weak = {0.40, 0.30, 0.20, 0.10};
    const auto low = repair_view(ViewTag::from_string("SWIMMERS"), weak, policy);
    REQUIRE(low.resolved == ResolvedView::AP);
    REQUIRE(low.provenance == RepairProvenance::FellBack);
    REQUIRE(low.confidence == 0.40);
}

TEST_CASE("a study with no usable views is rejected by name", "[view_repair]") {
    Study s;
    s.study_id = "hopeless";
    for (int i = 0; i < 2; ++i) {
        ImageRecord img;
        img.image_id = "u" + std::to_string(i);
        img.view_tag = ViewTag::from_string("UNK");
        img.embedding_ref = {"unused.emb", 0, 1};
        s.images.push_back(std::move(img));
    }
    try {
        split_views(s, RepairPolicy{});
        FAIL("expected NoUsableViews");
    } catch (const NoUsableViews& e) {
        REQUIRE(e.study_id == "hopeless");
    }

    RepairPolicy frontal;
    frontal.fallback = RepairFallback::TreatAsFrontal;
    const SplitResult split = split_views(s, frontal);
    REQUIRE(split.frontal.size() == 2);
    REQUIRE(split.lateral.empty());
}

TEST_CASE("repair policy rejects inverted or out-of-range thresholds", "[view_repair]") {
    RepairPolicy inverted;
    inverted.theta_assign = 0.95;
    inverted.theta_override = 0.90;
    REQUIRE_THROWS_AS(repair_view(ViewTag::from_string("PA"), std::nullopt, inverted),
                      ConfigError);

    RepairPolicy high;
    high.theta_override = 1.5;
    REQUIRE_THROWS_AS(repair_view(ViewTag::from_string("PA"), std::nullopt, high), ConfigError);

    RepairPolicy zero;
    zero.theta_assign = 0.0;
    REQUIRE_THROWS_AS(repair_view(ViewTag::from_string("PA"), std::nullopt, zero), ConfigError);
}
