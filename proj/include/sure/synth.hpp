#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "sure/cef.hpp"
#include "sure/corpus.hpp"
#include "sure/emb_io.hpp"
#include "sure/errors.hpp"
#include "sure/labels.hpp"
#include "sure/matrix.hpp"
#include "sure/rng.hpp"
#include "sure/study.hpp"
#include "sure/tsl.hpp"

namespace sure {

// Synthetic desk-scale corpus with a long-tailed finding distribution and
// fully controlled embedding geometry, so filter and loss behavior can be
// checked against generator bookkeeping instead of a trained model.

struct SynthVocab {
    std::array<std::string, kNumPathologies> finding_keywords = {
        "widening",    "cardiomegaly", "opacity",  "lesion",   "edema",
        "consolidation", "pneumonia",  "atelectasis", "pneumothorax", "effusion",
        "thickening",  "fracture",     "device"};
    std::vector<std::string> filler = {
        "the patient is comfortable.",
        "imaging technique is adequate.",
        "comparison was made with earlier imaging.",
    };
    std::string prior_filler = "stable appearance overall.";
};

struct SynthConfig {
    std::size_t n_studies = 2000;
    double zipf_s = 1.3;
    double base_rate = 0.55;   // marginal of the most common finding
    double stale_rate = 0.3;   // chance an inactive finding persists in prior2
    std::uint64_t seed = 1;
    std::size_t emb_dim = 16;
    SynthVocab vocab;

    // Cosine bands: active-finding sentences sit well above any gate, stale
    // sentences straddle both gates, filler sits below everything.
    double active_sim_lo = 0.5, active_sim_hi = 0.8;
    double stale_sim_lo = 0.15, stale_sim_hi = 0.35;
    double filler_sim_lo = 0.0, filler_sim_hi = 0.1;

    void validate() const {
        if (n_studies == 0) throw ConfigError("n_studies must be >= 1");
        if (!(zipf_s > 0.0)) throw ConfigError("zipf_s must be > 0");
        if (!(base_rate > 0.0 && base_rate <= 1.0)) throw ConfigError("base_rate must be in (0, 1]");
        if (!(stale_rate >= 0.0 && stale_rate <= 1.0))
            throw ConfigError("stale_rate must be in [0, 1]");
        if (emb_dim < kNumPathologies + 1)
            throw ConfigError("emb_dim must exceed the pathology count");
    }

    double marginal(std::size_t finding) const {
        return base_rate / std::pow(static_cast<double>(finding + 1), zipf_s);
    }
};

// Deterministic keyword micro-labeler: Positive when a finding keyword
// occurs, Negative when it is immediately preceded by "no ", Absent
// otherwise. Slot 13 (No Finding) is never set.
inline LabelVector keyword_label(const std::string& sentence, const SynthVocab& vocab) {
    std::string lower = sentence;
    for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    LabelVector lv;
    for (std::size_t j = 0; j < kNumPathologies; ++j) {
        const std::string& kw = vocab.finding_keywords[j];
        const std::size_t pos = lower.find(kw);
        if (pos == std::string::npos) continue;
        const bool negated = pos >= 3 && lower.compare(pos - 3, 3, "no ") == 0;
        lv[j] = negated ? FindingLabel::Negative : FindingLabel::Positive;
    }
    return lv;
}

// Per-study generator bookkeeping, the oracle for filter and loss tests.
struct StudyTruth {
    std::array<bool, kNumPathologies> active{};
    std::vector<int> prior1_findings;  // per prior1 sentence: finding index, -1 for filler
    std::vector<int> prior2_findings;
    std::vector<bool> prior2_stale;    // aligned with prior2 sentences
};

struct StudyBlobs {
    Matrix image_tokens;  // all images' rows back to back, ranges in ImageRecords
    Matrix prior_rows;    // prior1 sentence embeddings, then prior2's
};

struct SynthResult {
    std::vector<Study> studies;
    std::vector<StudyTruth> truths;
    std::vector<StudyBlobs> blobs;
    FreqTable freq{};  // reports in which each finding is active
};

namespace detail {

inline void normalize_in_place(std::vector<double>& v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n == 0.0) throw ZeroVector();
    for (double& x : v) x /= n;
}

// Orthonormal basis per corpus: one signature direction per pathology plus a
// neutral direction for finding-free studies. Gram-Schmidt over random draws.
inline std::vector<std::vector<double>> make_signatures(std::size_t count, std::size_t dim,
                                                        Rng& rng) {
    std::vector<std::vector<double>> basis;
    while (basis.size() < count) {
        std::vector<double> v(dim);
        for (double& x : v) x = rng.normal(0.0, 1.0);
        for (const auto& u : basis) {
            double dot = 0.0;
            for (std::size_t i = 0; i < dim; ++i) dot += v[i] * u[i];
            for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * u[i];
        }
        double n = 0.0;
        for (double x : v) n += x * x;
        if (n < 1e-8) continue;  // unlucky draw, resample
        normalize_in_place(v);
        basis.push_back(std::move(v));
    }
    return basis;
}

// Unit vector at exact cosine c to unit vector v: t = c v + sqrt(1-c^2) w
// with w a unit vector orthogonal to v.
inline std::vector<double> at_cosine(const std::vector<double>& v, double c, Rng& rng) {
    const std::size_t dim = v.size();
    std::vector<double> w(dim);
    for (int attempt = 0; attempt < 64; ++attempt) {
        for (double& x : w) x = rng.normal(0.0, 1.0);
        double dot = 0.0;
        for (std::size_t i = 0; i < dim; ++i) dot += w[i] * v[i];
        for (std::size_t i = 0; i < dim; ++i) w[i] -= dot * v[i];
        double n = 0.0;
        for (double x : w) n += x * x;
        if (n > 1e-8) {
            normalize_in_place(w);
            std::vector<double> t(dim);
            const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
            for (std::size_t i = 0; i < dim; ++i) t[i] = c * v[i] + s * w[i];
            return t;
        }
    }
    throw NumericalFailure("at_cosine");
}

}  // namespace detail

// Deterministic given the seed. Every study keeps one explicitly tagged
// frontal image, and every image's token rows average exactly to the study
// direction (noise is added in cancelling pairs), so the pipeline's pooled
// image vector hits the constructed cosine bands exactly.
inline SynthResult generate_corpus(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    SynthResult out;
    out.studies.reserve(cfg.n_studies);

    const auto signatures = detail::make_signatures(kNumPathologies + 1, cfg.emb_dim, rng);
    const auto& neutral = signatures[kNumPathologies];

    for (std::size_t idx = 0; idx < cfg.n_studies; ++idx) {
        Study s;
        StudyTruth truth;
        StudyBlobs blobs;
        char buf[16];
        std::snprintf(buf, sizeof(buf), "s%06zu", idx);
        s.study_id = buf;

        for (std::size_t j = 0; j < kNumPathologies; ++j)
            truth.active[j] = rng.uniform() < cfg.marginal(j);

        // Study direction: normalized sum of active signatures.
        std::vector<double> v(cfg.emb_dim, 0.0);
        bool any_active = false;
        for (std::size_t j = 0; j < kNumPathologies; ++j) {
            if (!truth.active[j]) continue;
            any_active = true;
            for (std::size_t i = 0; i < cfg.emb_dim; ++i) v[i] += signatures[j][i];
        }
        if (!any_active) v = neutral;
        detail::normalize_in_place(v);
        if (any_active)
            for (std::size_t j = 0; j < kNumPathologies; ++j)
                if (truth.active[j]) ++out.freq[j];

        // Images: 1-2 frontal, 0-1 lateral, 4 token rows each. Rows come in
        // v +/- noise pairs so each image's mean is exactly v (half scale
        // for laterals, same direction).
        const std::size_t n_frontal = rng.uniform() < 0.7 ? 1 : 2;
        const std::size_t n_lateral = rng.uniform() < 0.5 ? 0 : 1;
        const std::size_t rows_per_image = 4;
        blobs.image_tokens = Matrix((n_frontal + n_lateral) * rows_per_image, cfg.emb_dim);
        std::size_t row_at = 0;
        for (std::size_t img = 0; img < n_frontal + n_lateral; ++img) {
            const bool lateral = img >= n_frontal;
            const double image_scale = lateral ? 0.5 : 1.0;
            ImageRecord rec;
            rec.image_id = s.study_id + "_i" + std::to_string(img);
            if (lateral) {
                rec.view_tag = ViewTag::from_string(rng.uniform() < 0.5 ? "LATERAL" : "LL");
            } else if (img == 0) {
                rec.view_tag = ViewTag::from_string(rng.uniform() < 0.6 ? "PA" : "AP");
            } else if (rng.uniform() < 0.25) {
                rec.view_tag = ViewTag::from_string("UNK");
                rec.view_probs = ViewProbs{0.04, 0.90, 0.03, 0.03};
            } else {
                rec.view_tag = ViewTag::from_string("AP");
            }
            rec.embedding_ref = {s.study_id + ".image.emb", row_at, row_at + rows_per_image};
            for (std::size_t pair = 0; pair < rows_per_image / 2; ++pair) {
                std::vector<double> noise(cfg.emb_dim);
                for (double& x : noise) x = rng.normal(0.0, 0.1);
                for (std::size_t i = 0; i < cfg.emb_dim; ++i) {
                    blobs.image_tokens(row_at + 2 * pair, i) = image_scale * (v[i] + noise[i]);
                    blobs.image_tokens(row_at + 2 * pair + 1, i) = image_scale * (v[i] - noise[i]);
                }
            }
            row_at += rows_per_image;
            s.images.push_back(std::move(rec));
        }

        // Current report: one positive sentence per active finding, a few
        // negative mentions, one filler sentence.
        std::vector<std::string> sentences;
        for (std::size_t j = 0; j < kNumPathologies; ++j)
            if (truth.active[j])
                sentences.push_back(cfg.vocab.finding_keywords[j] + " is present.");
        for (std::size_t j = 0; j < kNumPathologies; ++j)
            if (!truth.active[j] && rng.uniform() < 0.1)
                sentences.push_back("no " + cfg.vocab.finding_keywords[j] + ".");
        sentences.push_back(
            cfg.vocab.filler[rng.uniform_int(cfg.vocab.filler.size())]);

        s.report.findings_text.clear();
        for (const std::string& snt : sentences) {
            if (!s.report.findings_text.empty()) s.report.findings_text += ' ';
            s.report.findings_text += snt;
        }
        s.report.sentences = split_sentences(s.report.findings_text);
        std::vector<LabelVector> labels;
        for (const std::string& snt : s.report.sentences)
            labels.push_back(keyword_label(snt, cfg.vocab));
        s.report.label_vectors = std::move(labels);

        // Priors. prior1 revisits active findings; prior2 revisits active
        // findings and carries stale ones (inactive now, absent from prior1,
        // so every stale mention is a vanished finding).
        const bool has_p1 = rng.uniform() < 0.9;
        const bool has_p2 = has_p1 && rng.uniform() < 0.8;
        std::vector<std::vector<double>> prior_embs;

        auto build_prior = [&](bool is_p2) {
            Report prior;
            std::vector<std::string> lines;
            std::vector<int> findings;
            std::vector<bool> stale_flags;
            for (std::size_t j = 0; j < kNumPathologies; ++j) {
                const bool mention_active =
                    truth.active[j] && rng.uniform() < (is_p2 ? 0.7 : 0.8);
                const bool mention_stale =
                    is_p2 && !truth.active[j] && rng.uniform() < cfg.stale_rate * cfg.marginal(j);
                if (!mention_active && !mention_stale) continue;
                lines.push_back(cfg.vocab.finding_keywords[j] + " is again noted.");
                findings.push_back(static_cast<int>(j));
                stale_flags.push_back(mention_stale);
                const double c = mention_stale
                                     ? rng.uniform(cfg.stale_sim_lo, cfg.stale_sim_hi)
                                     : rng.uniform(cfg.active_sim_lo, cfg.active_sim_hi);
                prior_embs.push_back(detail::at_cosine(v, c, rng));
            }
            if (rng.uniform() < 0.5) {
                lines.push_back(cfg.vocab.prior_filler);
                findings.push_back(-1);
                stale_flags.push_back(false);
                prior_embs.push_back(detail::at_cosine(
                    v, rng.uniform(cfg.filler_sim_lo, cfg.filler_sim_hi), rng));
            }
            for (const std::string& line : lines) {
                if (!prior.findings_text.empty()) prior.findings_text += ' ';
                prior.findings_text += line;
            }
            prior.sentences = split_sentences(prior.findings_text);
            std::vector<LabelVector> plabels;
            for (const std::string& snt : prior.sentences)
                plabels.push_back(keyword_label(snt, cfg.vocab));
            prior.label_vectors = std::move(plabels);
            if (is_p2) {
                truth.prior2_findings = findings;
                truth.prior2_stale = stale_flags;
            } else {
                truth.prior1_findings = findings;
            }
            return prior;
        };

        if (has_p1) s.prior1 = build_prior(false);
        if (has_p2) s.prior2 = build_prior(true);

        blobs.prior_rows = Matrix(prior_embs.size(), cfg.emb_dim);
        for (std::size_t r = 0; r < prior_embs.size(); ++r)
            for (std::size_t i = 0; i < cfg.emb_dim; ++i)
                blobs.prior_rows(r, i) = prior_embs[r][i];

        const std::size_t p1_count = s.prior1 ? s.prior1->sentences.size() : 0;
        const std::size_t p2_count = s.prior2 ? s.prior2->sentences.size() : 0;
        if (p1_count > 0)
            s.prior1->embedding_ref = EmbeddingRef{s.study_id + ".priors.emb", 0, p1_count};
        if (p2_count > 0)
            s.prior2->embedding_ref =
                EmbeddingRef{s.study_id + ".priors.emb", p1_count, p1_count + p2_count};

        validate_study(s);
        out.studies.push_back(std::move(s));
        out.truths.push_back(std::move(truth));
        out.blobs.push_back(std::move(blobs));
    }
    return out;
}

// Writes corpus.jsonl plus one image and one prior embedding file per study.
inline void write_synth_tree(const std::filesystem::path& dir, const SynthResult& synth) {
    std::filesystem::create_directories(dir);
    write_corpus(dir / "corpus.jsonl", synth.studies);
    for (std::size_t i = 0; i < synth.studies.size(); ++i) {
        const std::string& id = synth.studies[i].study_id;
        write_embeddings(dir / (id + ".image.emb"), synth.blobs[i].image_tokens);
        write_embeddings(dir / (id + ".priors.emb"), synth.blobs[i].prior_rows);
    }
}

}  // namespace sure
