#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

#include "sure/errors.hpp"
#include "sure/rng.hpp"
#include "sure/study.hpp"
#include "sure/tsl.hpp"

using namespace sure;

namespace {

LabelVector with_labels(std::vector<std::pair<std::size_t, FindingLabel>> slots) {
    LabelVector lv;
    for (const auto& [idx, label] : slots) lv[idx] = label;
    return lv;
}

Study labeled_study(std::string id, std::vector<LabelVector> labels) {
    Study s;
    s.study_id = std::move(id);
    s.report.label_vectors = std::move(labels);
    return s;
}

}  // namespace

TEST_CASE("tier boundaries are exact at t1 and t2", "[tsl]") {
    const TierConfig cfg;  // t1=20000 t2=8000
    REQUIRE(raw_weight(cfg.t1, cfg) == 1.0);
    REQUIRE(raw_weight(cfg.t1 + 1, cfg) == 1.0);
    REQUIRE(raw_weight(cfg.t1 - 1, cfg) == 1.5);
    REQUIRE(raw_weight(cfg.t2, cfg) == 1.5);
    REQUIRE(raw_weight(cfg.t2 - 1, cfg) == 2.0);
    REQUIRE(raw_weight(0, cfg) == 2.0);

    TierConfig custom;
    custom.t1 = 400;
    custom.t2 = 100;
    REQUIRE(raw_weight(400, custom) == 1.0);
    REQUIRE(raw_weight(399, custom) == 1.5);
    REQUIRE(raw_weight(100, custom) == 1.5);
    REQUIRE(raw_weight(99, custom) == 2.0);
}

TEST_CASE("tier configuration is validated", "[tsl]") {
    TierConfig inverted;
    inverted.t1 = 100;
    inverted.t2 = 100;
    REQUIRE_THROWS_AS(raw_weight(0, inverted), ConfigError);

    TierConfig zero_t2;
    zero_t2.t2 = 0;
    REQUIRE_THROWS_AS(raw_weight(0, zero_t2), ConfigError);

    TierConfig alpha1;
    alpha1.alpha = 1.0;
    REQUIRE_THROWS_AS(raw_weight(0, alpha1), ConfigError);

    TierConfig neg_gamma;
    neg_gamma.gamma = -0.5;
    REQUIRE_THROWS_AS(raw_weight(0, neg_gamma), ConfigError);

    TierConfig bad_max;
    bad_max.fixed_max = 0.0;
    REQUIRE_THROWS_AS(raw_weight(0, bad_max), ConfigError);
}

TEST_CASE("the worked normalization case lands on 0.55, 0.775, 1.0", "[tsl]") {
    const TierConfig cfg;
    const std::vector<double> raws = {1.0, 1.5, 2.0};
    const NormalizedWeights norm = normalize_weights(raws, cfg);
    REQUIRE(norm.m == 2.0);
    REQUIRE(std::abs(norm.weights[0] - 0.55) <= 1e-12);
    REQUIRE(std::abs(norm.weights[1] - 0.775) <= 1e-12);
    REQUIRE(std::abs(norm.weights[2] - 1.0) <= 1e-12);
}

TEST_CASE("normalized weights stay in [alpha, 1] over many random draws", "[tsl]") {
    const TierConfig cfg;
    Rng rng(7);
    for (int batch = 0; batch < 500; ++batch) {
        const std::size_t n = 1 + rng.uniform_int(20);
        std::vector<double> raws;
        for (std::size_t i = 0; i < n; ++i)
            raws.push_back(raw_weight(rng.uniform_int(40001), cfg));
        const NormalizedWeights norm = normalize_weights(raws, cfg);
        double max_w = 0.0;
        for (double w : norm.weights) {
            REQUIRE(w >= cfg.alpha);
            REQUIRE(w <= 1.0);
            max_w = std::max(max_w, w);
        }
        REQUIRE(max_w == 1.0);  // the batch maximum always normalizes to 1
    }
}

TEST_CASE("weight normalization rejects empty or non-positive input", "[tsl]") {
    const TierConfig cfg;
    REQUIRE_THROWS_AS(normalize_weights(std::vector<double>{}, cfg), EmptyWeightSet);
    REQUIRE_THROWS_AS(normalize_weights(std::vector<double>{1.0, 0.0}, cfg), EmptyWeightSet);
    REQUIRE_THROWS_AS(normalize_weights(std::vector<double>{-1.0}, cfg), EmptyWeightSet);
}

TEST_CASE("fixed_max pins the normalization maximum across batches", "[tsl]") {
    TierConfig pinned;
    pinned.fixed_max = 2.0;
    const NormalizedWeights a = normalize_weights(std::vector<double>{1.0}, pinned);
    REQUIRE(a.m == 2.0);
    REQUIRE(std::abs(a.weights[0] - 0.55) <= 1e-12);

    const TierConfig batch_scoped;
    const NormalizedWeights b = normalize_weights(std::vector<double>{1.0}, batch_scoped);
    REQUIRE(b.m == 1.0);
    REQUIRE(b.weights[0] == 1.0);
}

TEST_CASE("report-level frequencies count a finding once per report", "[tsl]") {
    std::vector<Study> corpus;
    corpus.push_back(labeled_study(
        "a", {with_labels({{4, FindingLabel::Positive}, {1, FindingLabel::Uncertain}}),
              with_labels({{4, FindingLabel::Positive}})}));
    corpus.push_back(labeled_study("b", {with_labels({{4, FindingLabel::Uncertain}})}));
    corpus.push_back(labeled_study(
        "c", {with_labels({{4, FindingLabel::Negative},
                           {kNoFindingIndex, FindingLabel::Positive}})}));

    const FreqTable report_level = label_frequencies(corpus);
    REQUIRE(report_level[4] == 2);  // two reports mention edema, repeats collapse
    REQUIRE(report_level[1] == 1);
    REQUIRE(report_level[0] == 0);  // negative and absent never count

    const FreqTable sentence_level = label_frequencies(corpus, true);
    REQUIRE(sentence_level[4] == 3);
    REQUIRE(sentence_level[1] == 1);
}

TEST_CASE("frequency counting requires label vectors", "[tsl]") {
    Study bare;
    bare.study_id = "unlabeled";
    try {
        label_frequencies({bare});
        FAIL("expected MissingLabels");
    } catch (const MissingLabels& e) {
        REQUIRE(e.study_id == "unlabeled");
    }
}

TEST_CASE("sentence rarity is the least frequent asserted finding", "[tsl]") {
    FreqTable freq{};
    freq[4] = 100;
    freq[11] = 5;
    REQUIRE(*sentence_rarity(with_labels({{4, FindingLabel::Positive},
                                          {11, FindingLabel::Positive}}),
                             freq) == 5);
    REQUIRE(*sentence_rarity(with_labels({{4, FindingLabel::Uncertain}}), freq) == 100);
    REQUIRE_FALSE(sentence_rarity(with_labels({{4, FindingLabel::Negative}}), freq));
    REQUIRE_FALSE(sentence_rarity(LabelVector{}, freq));
    // The No Finding slot is not a pathology and never produces a rarity.
    REQUIRE_FALSE(sentence_rarity(with_labels({{kNoFindingIndex, FindingLabel::Positive}}),
                                  freq));
}

TEST_CASE("token spans tile the whitespace token stream", "[tsl]") {
    const std::vector<std::string> sentences = {"one two three.", "four five.", "six."};
    const auto spans = spans_for_sentences(sentences);
    REQUIRE((spans == std::vector<TokenSpan>{{0, 3}, {3, 5}, {5, 6}}));
    REQUIRE(spans_for_sentences({}).empty());
    REQUIRE((spans_for_sentences({"a", "", "b"}) ==
             std::vector<TokenSpan>{{0, 1}, {1, 1}, {1, 2}}));
}

TEST_CASE("weight plans broadcast sentence weights over their tokens", "[tsl]") {
    FreqTable freq{};
    freq[4] = 30000;  // common: raw 1.0
    freq[11] = 5;     // rare: raw 2.0

    Report report;
    report.sentences = {"edema is present.", "the patient is comfortable.",
                        "fracture is present."};
    report.label_vectors = std::vector<LabelVector>{
        with_labels({{4, FindingLabel::Positive}}),
        LabelVector{},
        with_labels({{11, FindingLabel::Positive}}),
    };
    const auto spans = spans_for_sentences(report.sentences);
    const TierConfig cfg;
    const WeightPlan plan = build_weight_plan(report, freq, cfg, spans);

    REQUIRE(plan.m == 2.0);
    REQUIRE(plan.sentence_weights.size() == 3);
    REQUIRE(std::abs(plan.sentence_weights[0] - 0.55) <= 1e-12);
    REQUIRE(plan.sentence_weights[1] == 0.0);
    REQUIRE(std::abs(plan.sentence_weights[2] - 1.0) <= 1e-12);

    REQUIRE(plan.token_weights.size() == 10);
    for (std::size_t t = 0; t < 3; ++t)
        REQUIRE(plan.token_weights[t] == plan.sentence_weights[0]);
    for (std::size_t t = 3; t < 7; ++t) REQUIRE(plan.token_weights[t] == 0.0);
    for (std::size_t t = 7; t < 10; ++t)
        REQUIRE(plan.token_weights[t] == plan.sentence_weights[2]);
}

TEST_CASE("a report with no key sentence gets an all-zero plan", "[tsl]") {
    FreqTable freq{};
    Report report;
    report.sentences = {"the patient is comfortable.", "no fracture."};
    report.label_vectors = std::vector<LabelVector>{
        LabelVector{}, with_labels({{11, FindingLabel::Negative}})};
    const WeightPlan plan = build_weight_plan(report, freq, TierConfig{},
                                              spans_for_sentences(report.sentences));
    REQUIRE(plan.m == 0.0);
    for (double w : plan.sentence_weights) REQUIRE(w == 0.0);
    for (double w : plan.token_weights) REQUIRE(w == 0.0);
}

TEST_CASE("weight plans reject misaligned inputs", "[tsl]") {
    FreqTable freq{};
    Report report;
    report.sentences = {"edema is present."};
    report.label_vectors = std::vector<LabelVector>{with_labels({{4, FindingLabel::Positive}})};

    REQUIRE_THROWS_AS(build_weight_plan(report, freq, TierConfig{}, {}), AlignmentError);

    std::vector<TokenSpan> gap = {{1, 3}};
    REQUIRE_THROWS_AS(build_weight_plan(report, freq, TierConfig{}, gap), AlignmentError);

    Report unlabeled;
    unlabeled.sentences = {"edema is present."};
    REQUIRE_THROWS_AS(build_weight_plan(unlabeled, freq, TierConfig{},
                                        spans_for_sentences(unlabeled.sentences)),
                      MissingLabels);

    Report short_labels = report;
    short_labels.sentences.push_back("another.");
    REQUIRE_THROWS_AS(build_weight_plan(short_labels, freq, TierConfig{},
                                        spans_for_sentences(short_labels.sentences)),
                      AlignmentError);
}

TEST_CASE("the worked loss case totals 4.05", "[tsl]") {
    WeightPlan plan;
    plan.token_weights = {0.55, 1.0};
    const std::vector<double> losses = {1.0, 2.0};
    TierConfig cfg;  // gamma = 2
    const TslLoss loss = tsl_loss(losses, plan, cfg);
    REQUIRE(std::abs(loss.ce - 1.5) <= 1e-12);
    REQUIRE(std::abs(loss.key - 1.275) <= 1e-12);
    REQUIRE(std::abs(loss.total - 4.05) <= 1e-12);
}

TEST_CASE("uniform unit weights collapse the loss to (1 + gamma) * ce", "[tsl]") {
    Rng rng(3);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng.uniform_int(50);
        std::vector<double> losses;
        for (std::size_t i = 0; i < n; ++i) losses.push_back(rng.uniform() * 5.0);
        WeightPlan plan;
        plan.token_weights.assign(n, 1.0);

        TierConfig cfg;
        cfg.gamma = (trial % 3 == 0) ? 0.0 : (trial % 3 == 1 ? 0.5 : 2.0);
        const TslLoss loss = tsl_loss(losses, plan, cfg);
        REQUIRE(std::abs(loss.total - (1.0 + cfg.gamma) * loss.ce) <= 1e-12);
        REQUIRE(loss.key == loss.ce);  // unit weights make the sums identical
    }
}

TEST_CASE("loss handles empty input and rejects misalignment", "[tsl]") {
    const TslLoss zero = tsl_loss({}, WeightPlan{}, TierConfig{});
    REQUIRE(zero.ce == 0.0);
    REQUIRE(zero.key == 0.0);
    REQUIRE(zero.total == 0.0);

    WeightPlan plan;
    plan.token_weights = {1.0, 1.0};
    REQUIRE_THROWS_AS(tsl_loss(std::vector<double>{1.0}, plan, TierConfig{}), AlignmentError);
}

TEST_CASE("gradient scales follow (1 + gamma * w) / n", "[tsl]") {
    const std::vector<double> weights = {0.55, 1.0};
    const auto scales = tsl_grad_scale(weights, 2.0);
    REQUIRE(std::abs(scales[0] - 1.05) <= 1e-12);
    REQUIRE(std::abs(scales[1] - 1.5) <= 1e-12);

    const auto plain = tsl_grad_scale(weights, 0.0);
    REQUIRE(plain[0] == 0.5);
    REQUIRE(plain[1] == 0.5);

    REQUIRE_THROWS_AS(tsl_grad_scale(std::vector<double>{}, 1.0), EmptyWeightSet);
    REQUIRE_THROWS_AS(tsl_grad_scale(weights, -1.0), ConfigError);
}
