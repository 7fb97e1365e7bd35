#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sure/cef.hpp"
#include "sure/corpus.hpp"
#include "sure/errors.hpp"
#include "sure/pipeline.hpp"
#include "sure/synth.hpp"
#include "sure/toy_decoder.hpp"
#include "sure/tsl.hpp"

namespace sure {

// Desk-scale experiment defaults. The tier cutoffs are scaled to the small
// corpus: with ~2000 studies the common findings land in the hundreds, so
// t1=400/t2=100 splits them into the same three tiers the full-size cutoffs
// produce on a full-size corpus.
struct LabConfig {
    SynthConfig synth;
    std::size_t n_seeds = 5;
    TrainConfig train;
    std::vector<double> taus = {0.22};
    std::vector<FilterMode> modes = {FilterMode::None, FilterMode::Fixed, FilterMode::Dynamic};
    double tau_high_delta = 0.08;  // dynamic strict gate sits this far above tau

    // The trainer's own 5-epoch default is fine for smoke runs; the imbalance
    // experiment needs the rare findings to sit at the learning frontier, which
    // takes ~80 epochs on the 2000-study corpus (about 3 CPU minutes for the
    // full 5-seed protocol).
    LabConfig() {
        train.tiers.t1 = 400;
        train.tiers.t2 = 100;
        train.epochs = 80;
    }

    void validate() const {
        synth.validate();
        train.validate();
        if (n_seeds == 0) throw ConfigError("n_seeds must be >= 1");
        if (taus.empty() || modes.empty()) throw ConfigError("ablation grid must be non-empty");
        if (!(tau_high_delta > 0.0)) throw ConfigError("tau_high_delta must be > 0");
    }
};

namespace detail {

inline LabConfig lab_config_from_json(const Json& j) {
    LabConfig cfg;
    if (j.contains("n_studies")) cfg.synth.n_studies = j.at("n_studies").get<std::size_t>();
    if (j.contains("zipf_s")) cfg.synth.zipf_s = j.at("zipf_s").get<double>();
    if (j.contains("base_rate")) cfg.synth.base_rate = j.at("base_rate").get<double>();
    if (j.contains("stale_rate")) cfg.synth.stale_rate = j.at("stale_rate").get<double>();
    if (j.contains("emb_dim")) cfg.synth.emb_dim = j.at("emb_dim").get<std::size_t>();
    if (j.contains("seed")) {
        cfg.synth.seed = j.at("seed").get<std::uint64_t>();
        cfg.train.seed = cfg.synth.seed;
    }
    if (j.contains("n_seeds")) cfg.n_seeds = j.at("n_seeds").get<std::size_t>();
    if (j.contains("epochs")) cfg.train.epochs = j.at("epochs").get<std::size_t>();
    if (j.contains("lr")) cfg.train.lr = j.at("lr").get<double>();
    if (j.contains("batch_size")) cfg.train.batch_size = j.at("batch_size").get<std::size_t>();
    if (j.contains("hidden")) cfg.train.hidden = j.at("hidden").get<std::size_t>();
    if (j.contains("n_queries")) cfg.train.n_queries = j.at("n_queries").get<std::size_t>();
    if (j.contains("t1")) cfg.train.tiers.t1 = j.at("t1").get<std::uint64_t>();
    if (j.contains("t2")) cfg.train.tiers.t2 = j.at("t2").get<std::uint64_t>();
    if (j.contains("alpha")) cfg.train.tiers.alpha = j.at("alpha").get<double>();
    if (j.contains("gamma")) cfg.train.tiers.gamma = j.at("gamma").get<double>();
    if (j.contains("taus")) cfg.taus = j.at("taus").get<std::vector<double>>();
    if (j.contains("tau_high_delta")) cfg.tau_high_delta = j.at("tau_high_delta").get<double>();
    if (j.contains("modes")) {
        cfg.modes.clear();
        for (const auto& m : j.at("modes"))
            cfg.modes.push_back(filter_mode_from_string(m.get<std::string>()));
    }
    return cfg;
}

}  // namespace detail

inline LabConfig lab_config_from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open lab config: " + path.string());
    detail::Json j;
    try {
        j = detail::Json::parse(in);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("lab config is not valid JSON: ") + e.what());
    }
    return detail::lab_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Class-imbalance experiment: paired CE vs TSL runs per seed. Both runs of a
// pair see the same corpus, the same init, and the same batch schedule; only
// the per-token loss weighting differs.

struct SeedRun {
    std::uint64_t seed = 0;
    std::array<double, kNumPathologies> f1_ce{};
    std::array<double, kNumPathologies> f1_tsl{};
    std::array<std::size_t, 3> rare{};    // 3 least frequent findings this corpus
    std::array<std::size_t, 3> common{};  // 3 most frequent
    double rare_mean_ce = 0.0, rare_mean_tsl = 0.0;
    double common_mean_ce = 0.0, common_mean_tsl = 0.0;
    bool tsl_wins_rare = false;
};

struct ImbalanceReport {
    std::vector<SeedRun> runs;
    std::size_t wins = 0;           // seeds where TSL beat CE on the rare tier
    double mean_common_ce = 0.0;
    double mean_common_tsl = 0.0;
    double common_drop = 0.0;       // mean_common_ce - mean_common_tsl
};

namespace detail {

// Indices sorted by (frequency, index); front is the rare end.
inline std::vector<std::size_t> findings_by_frequency(const FreqTable& freq) {
    std::vector<std::size_t> idx(kNumPathologies);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return freq[a] != freq[b] ? freq[a] < freq[b] : a < b;
    });
    return idx;
}

}  // namespace detail

inline ImbalanceReport imbalance_experiment(const LabConfig& cfg) {
    cfg.validate();
    ImbalanceReport report;
    for (std::size_t i = 0; i < cfg.n_seeds; ++i) {
        SeedRun run;
        run.seed = cfg.synth.seed + i;

        SynthConfig synth = cfg.synth;
        synth.seed = run.seed;
        const SynthResult corpus = generate_corpus(synth);

        TrainConfig tc = cfg.train;
        tc.seed = run.seed;
        tc.mode = LossMode::CE;
        const TrainResult ce = train_toy(corpus, synth.vocab, tc);
        tc.mode = LossMode::TSL;
        const TrainResult tsl = train_toy(corpus, synth.vocab, tc);

        for (std::size_t j = 0; j < kNumPathologies; ++j) {
            run.f1_ce[j] = ce.metrics.finding[j].f1;
            run.f1_tsl[j] = tsl.metrics.finding[j].f1;
        }

        const auto order = detail::findings_by_frequency(corpus.freq);
        for (std::size_t k = 0; k < 3; ++k) {
            run.rare[k] = order[k];
            run.common[k] = order[kNumPathologies - 1 - k];
            run.rare_mean_ce += run.f1_ce[order[k]] / 3.0;
            run.rare_mean_tsl += run.f1_tsl[order[k]] / 3.0;
            run.common_mean_ce += run.f1_ce[order[kNumPathologies - 1 - k]] / 3.0;
            run.common_mean_tsl += run.f1_tsl[order[kNumPathologies - 1 - k]] / 3.0;
        }
        run.tsl_wins_rare = run.rare_mean_tsl > run.rare_mean_ce;
        if (run.tsl_wins_rare) ++report.wins;
        report.mean_common_ce += run.common_mean_ce;
        report.mean_common_tsl += run.common_mean_tsl;
        report.runs.push_back(run);
    }
    report.mean_common_ce /= static_cast<double>(cfg.n_seeds);
    report.mean_common_tsl /= static_cast<double>(cfg.n_seeds);
    report.common_drop = report.mean_common_ce - report.mean_common_tsl;
    return report;
}

namespace detail {

inline Json imbalance_to_json(const ImbalanceReport& report) {
    Json j;
    Json runs = Json::array();
    for (const SeedRun& r : report.runs) {
        Json jr;
        jr["seed"] = r.seed;
        Json per = Json::array();
        for (std::size_t k = 0; k < kNumPathologies; ++k)
            per.push_back({{"finding", kFindingNames[k]},
                           {"f1_ce", r.f1_ce[k]},
                           {"f1_tsl", r.f1_tsl[k]}});
        jr["per_finding"] = per;
        auto names = [](const std::array<std::size_t, 3>& idx) {
            Json a = Json::array();
            for (std::size_t k : idx) a.push_back(kFindingNames[k]);
            return a;
        };
        jr["rare_findings"] = names(r.rare);
        jr["common_findings"] = names(r.common);
        jr["rare_mean_f1"] = {{"ce", r.rare_mean_ce}, {"tsl", r.rare_mean_tsl}};
        jr["common_mean_f1"] = {{"ce", r.common_mean_ce}, {"tsl", r.common_mean_tsl}};
        jr["tsl_wins_rare"] = r.tsl_wins_rare;
        runs.push_back(jr);
    }
    j["runs"] = runs;
    j["seeds"] = report.runs.size();
    j["rare_tier_wins"] = report.wins;
    j["mean_common_f1"] = {{"ce", report.mean_common_ce}, {"tsl", report.mean_common_tsl}};
    j["common_f1_drop"] = report.common_drop;
    return j;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Filter ablation: mode x tau grid over one synthetic corpus, measured against
// the generator's own bookkeeping. Stale sentences are Prior2 mentions of
// findings that are no longer active; relevant sentences assert a finding the
// current study actually has.

struct AblationRow {
    FilterMode mode = FilterMode::None;
    double tau = 0.0;
    double tau_high_plus = 0.0;
    std::uint64_t stale_total = 0, stale_kept = 0;
    std::uint64_t relevant_total = 0, relevant_kept = 0;
    double retained_stale_rate = 0.0;
    double retained_relevant_rate = 0.0;
};

namespace detail {

inline std::vector<SentenceRecord> prior_records_from_blobs(const Study& s,
                                                            const StudyBlobs& blobs) {
    std::vector<SentenceRecord> out;
    auto add = [&](const std::optional<Report>& prior, SentenceSource source) {
        if (!prior || prior->sentences.empty()) return;
        if (!prior->embedding_ref) throw MissingLabels("prior report without embedding reference");
        const EmbeddingRef& ref = *prior->embedding_ref;
        const Matrix rows = take_rows(blobs.prior_rows, ref.row_begin, ref.row_end);
        auto recs = prior_sentence_records(*prior, source, rows);
        out.insert(out.end(), recs.begin(), recs.end());
    };
    add(s.prior1, SentenceSource::Prior1);
    add(s.prior2, SentenceSource::Prior2);
    return out;
}

inline std::vector<double> image_direction_from_blobs(const Study& s, const Matrix& tokens,
                                                      const RepairPolicy& policy) {
    const SplitResult split = split_views(s, policy);
    std::vector<Matrix> per_image;
    auto add = [&](const std::vector<ImageRecord>& imgs) {
        for (const auto& img : imgs)
            per_image.push_back(
                take_rows(tokens, img.embedding_ref.row_begin, img.embedding_ref.row_end));
    };
    add(split.frontal);
    add(split.lateral);
    return mean_image_pool(per_image);
}

}  // namespace detail

inline std::vector<AblationRow> filter_ablation(const SynthResult& corpus,
                                                const RepairPolicy& repair,
                                                std::span<const FilterMode> modes,
                                                std::span<const double> taus,
                                                double tau_high_delta = 0.08) {
    if (!(tau_high_delta > 0.0)) throw ConfigError("tau_high_delta must be > 0");

    // Per-study inputs are mode-independent; build them once.
    struct Prepared {
        std::vector<SentenceRecord> records;
        std::vector<double> image_dir;
        std::vector<bool> is_stale;     // aligned with records
        std::vector<bool> is_relevant;  // aligned with records
    };
    std::vector<Prepared> prepared;
    prepared.reserve(corpus.studies.size());
    for (std::size_t i = 0; i < corpus.studies.size(); ++i) {
        const Study& s = corpus.studies[i];
        const StudyTruth& truth = corpus.truths[i];
        Prepared p;
        p.records = detail::prior_records_from_blobs(s, corpus.blobs[i]);
        if (p.records.empty()) continue;
        p.image_dir = detail::image_direction_from_blobs(s, corpus.blobs[i].image_tokens, repair);

        const std::size_t n1 = truth.prior1_findings.size();
        for (std::size_t k = 0; k < p.records.size(); ++k) {
            const bool from_p2 = p.records[k].source == SentenceSource::Prior2;
            const int finding = from_p2 ? truth.prior2_findings[k - n1]
                                        : truth.prior1_findings[k];
            p.is_stale.push_back(from_p2 && truth.prior2_stale[k - n1]);
            p.is_relevant.push_back(finding >= 0 &&
                                    truth.active[static_cast<std::size_t>(finding)]);
        }
        prepared.push_back(std::move(p));
    }

    std::vector<AblationRow> rows;
    for (const FilterMode mode : modes) {
        for (const double tau : taus) {
            AblationRow row;
            row.mode = mode;
            row.tau = tau;
            row.tau_high_plus = tau + tau_high_delta;
            FilterConfig fc;
            fc.mode = mode;
            fc.tau = tau;
            fc.tau_high_plus = row.tau_high_plus;
            for (const Prepared& p : prepared) {
                const FilterOutcome outcome = filter_prior(p.records, p.image_dir, fc);
                for (std::size_t k = 0; k < p.records.size(); ++k) {
                    if (p.is_stale[k]) {
                        ++row.stale_total;
                        if (outcome.kept[k]) ++row.stale_kept;
                    }
                    if (p.is_relevant[k]) {
                        ++row.relevant_total;
                        if (outcome.kept[k]) ++row.relevant_kept;
                    }
                }
            }
            row.retained_stale_rate =
                row.stale_total == 0 ? 0.0
                                     : static_cast<double>(row.stale_kept) /
                                           static_cast<double>(row.stale_total);
            row.retained_relevant_rate =
                row.relevant_total == 0 ? 0.0
                                        : static_cast<double>(row.relevant_kept) /
                                              static_cast<double>(row.relevant_total);
            rows.push_back(row);
        }
    }
    return rows;
}

namespace detail {

inline Json ablation_to_json(const std::vector<AblationRow>& rows) {
    Json j;
    Json table = Json::array();
    for (const AblationRow& r : rows) {
        table.push_back({{"mode", filter_mode_name(r.mode)},
                         {"tau", r.tau},
                         {"tau_high_plus", r.tau_high_plus},
                         {"stale_total", r.stale_total},
                         {"stale_kept", r.stale_kept},
                         {"retained_stale_rate", r.retained_stale_rate},
                         {"relevant_total", r.relevant_total},
                         {"relevant_kept", r.relevant_kept},
                         {"retained_relevant_rate", r.retained_relevant_rate}});
    }
    j["rows"] = table;

    // Fixed-vs-dynamic comparison at each tau present for both modes.
    Json comparisons = Json::array();
    for (const AblationRow& d : rows) {
        if (d.mode != FilterMode::Dynamic) continue;
        for (const AblationRow& f : rows) {
            if (f.mode != FilterMode::Fixed || f.tau != d.tau) continue;
            Json c;
            c["tau"] = d.tau;
            c["stale_rate_fixed"] = f.retained_stale_rate;
            c["stale_rate_dynamic"] = d.retained_stale_rate;
            c["stale_reduced"] = d.retained_stale_rate < f.retained_stale_rate;
            c["relevant_ratio"] =
                f.retained_relevant_rate == 0.0
                    ? 1.0
                    : d.retained_relevant_rate / f.retained_relevant_rate;
            comparisons.push_back(c);
        }
    }
    j["dynamic_vs_fixed"] = comparisons;
    return j;
}

}  // namespace detail

}  // namespace sure
