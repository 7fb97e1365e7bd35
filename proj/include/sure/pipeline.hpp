#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "sure/cef.hpp"
#include "sure/corpus.hpp"
#include "sure/emb_io.hpp"
#include "sure/errors.hpp"
#include "sure/log.hpp"
#include "sure/matrix.hpp"
#include "sure/resampler.hpp"
#include "sure/study.hpp"
#include "sure/tsl.hpp"
#include "sure/view_repair.hpp"

namespace sure {

inline const char* fallback_name(RepairFallback f) {
    return f == RepairFallback::TreatAsFrontal ? "treat_as_frontal" : "exclude";
}

inline RepairFallback fallback_from_string(const std::string& s) {
    if (s == "exclude") return RepairFallback::ExcludeImage;
    if (s == "treat_as_frontal") return RepairFallback::TreatAsFrontal;
    throw ConfigError("unknown repair fallback: " + s + " (want exclude|treat_as_frontal)");
}

inline const char* init_scheme_name(InitScheme s) {
    return s == InitScheme::Identity ? "identity" : "scaled_gaussian";
}

inline InitScheme init_scheme_from_string(const std::string& s) {
    if (s == "identity") return InitScheme::Identity;
    if (s == "scaled_gaussian") return InitScheme::ScaledGaussian;
    throw ConfigError("unknown init scheme: " + s + " (want identity|scaled_gaussian)");
}

struct ResamplerConfig {
    std::size_t n_queries = 8;
    std::size_t dim = 16;       // must match the embedding files' column count
    std::size_t dim_out = 32;
    std::uint64_t seed = 7;
    InitScheme scheme = InitScheme::ScaledGaussian;
    bool share_lateral = false;  // tie the lateral resampler's weights to the frontal one's

    void validate() const {
        if (n_queries == 0 || dim == 0 || dim_out == 0)
            throw ConfigError("resampler dims must be >= 1");
        if (scheme == InitScheme::Identity && dim != dim_out)
            throw ConfigError("identity init requires dim == dim_out");
    }
};

struct PipelineConfig {
    std::filesystem::path corpus;
    std::filesystem::path emb_dir;
    std::filesystem::path out_dir;
    std::size_t workers = 1;
    RepairPolicy repair;
    FilterConfig filter;
    TierConfig tsl;
    ResamplerConfig resampler;

    void validate() const {
        if (corpus.empty()) throw ConfigError("corpus path is required");
        if (emb_dir.empty()) throw ConfigError("emb_dir path is required");
        if (out_dir.empty()) throw ConfigError("out_dir path is required");
        if (!std::filesystem::exists(corpus))
            throw ConfigError("corpus not found: " + corpus.string());
        if (!std::filesystem::is_directory(emb_dir))
            throw ConfigError("emb_dir is not a directory: " + emb_dir.string());
        if (workers == 0) throw ConfigError("workers must be >= 1");
        repair.validate();
        filter.validate();
        tsl.validate();
        resampler.validate();
    }
};

namespace detail {

// Every field is optional in the file; absent fields keep their defaults, and
// the effective config echo writes the fully resolved values back out.
inline PipelineConfig pipeline_config_from_json(const Json& j) {
    PipelineConfig cfg;
    if (j.contains("corpus")) cfg.corpus = j.at("corpus").get<std::string>();
    if (j.contains("emb_dir")) cfg.emb_dir = j.at("emb_dir").get<std::string>();
    if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("workers")) cfg.workers = j.at("workers").get<std::size_t>();
    if (j.contains("repair")) {
        const Json& r = j.at("repair");
        if (r.contains("theta_assign")) cfg.repair.theta_assign = r.at("theta_assign").get<double>();
        if (r.contains("theta_override"))
            cfg.repair.theta_override = r.at("theta_override").get<double>();
        if (r.contains("fallback"))
            cfg.repair.fallback = fallback_from_string(r.at("fallback").get<std::string>());
    }
    if (j.contains("filter")) {
        const Json& f = j.at("filter");
        if (f.contains("mode")) cfg.filter.mode = filter_mode_from_string(f.at("mode").get<std::string>());
        if (f.contains("tau")) cfg.filter.tau = f.at("tau").get<double>();
        if (f.contains("tau_high_plus")) cfg.filter.tau_high_plus = f.at("tau_high_plus").get<double>();
        if (f.contains("require_positive"))
            cfg.filter.require_positive = f.at("require_positive").get<bool>();
        if (f.contains("strict_all_prior2"))
            cfg.filter.strict_all_prior2 = f.at("strict_all_prior2").get<bool>();
    }
    if (j.contains("tsl")) {
        const Json& t = j.at("tsl");
        if (t.contains("t1")) cfg.tsl.t1 = t.at("t1").get<std::uint64_t>();
        if (t.contains("t2")) cfg.tsl.t2 = t.at("t2").get<std::uint64_t>();
        if (t.contains("alpha")) cfg.tsl.alpha = t.at("alpha").get<double>();
        if (t.contains("gamma")) cfg.tsl.gamma = t.at("gamma").get<double>();
        if (t.contains("fixed_max") && !t.at("fixed_max").is_null())
            cfg.tsl.fixed_max = t.at("fixed_max").get<double>();
    }
    if (j.contains("resampler")) {
        const Json& r = j.at("resampler");
        if (r.contains("n_queries")) cfg.resampler.n_queries = r.at("n_queries").get<std::size_t>();
        if (r.contains("dim")) cfg.resampler.dim = r.at("dim").get<std::size_t>();
        if (r.contains("dim_out")) cfg.resampler.dim_out = r.at("dim_out").get<std::size_t>();
        if (r.contains("seed")) cfg.resampler.seed = r.at("seed").get<std::uint64_t>();
        if (r.contains("init"))
            cfg.resampler.scheme = init_scheme_from_string(r.at("init").get<std::string>());
        if (r.contains("share_lateral")) cfg.resampler.share_lateral = r.at("share_lateral").get<bool>();
    }
    return cfg;
}

inline Json pipeline_config_to_json(const PipelineConfig& cfg) {
    Json j;
    j["corpus"] = cfg.corpus.string();
    j["emb_dir"] = cfg.emb_dir.string();
    j["out_dir"] = cfg.out_dir.string();
    j["workers"] = cfg.workers;
    j["repair"] = {{"theta_assign", cfg.repair.theta_assign},
                   {"theta_override", cfg.repair.theta_override},
                   {"fallback", fallback_name(cfg.repair.fallback)}};
    j["filter"] = {{"mode", filter_mode_name(cfg.filter.mode)},
                   {"tau", cfg.filter.tau},
                   {"tau_high_plus", cfg.filter.tau_high_plus},
                   {"require_positive", cfg.filter.require_positive},
                   {"strict_all_prior2", cfg.filter.strict_all_prior2}};
    j["tsl"] = {{"t1", cfg.tsl.t1},
                {"t2", cfg.tsl.t2},
                {"alpha", cfg.tsl.alpha},
                {"gamma", cfg.tsl.gamma},
                {"fixed_max", cfg.tsl.fixed_max ? Json(*cfg.tsl.fixed_max) : Json(nullptr)}};
    j["resampler"] = {{"n_queries", cfg.resampler.n_queries},
                      {"dim", cfg.resampler.dim},
                      {"dim_out", cfg.resampler.dim_out},
                      {"seed", cfg.resampler.seed},
                      {"init", init_scheme_name(cfg.resampler.scheme)},
                      {"share_lateral", cfg.resampler.share_lateral}};
    return j;
}

}  // namespace detail

inline PipelineConfig pipeline_config_from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    detail::Json j;
    try {
        j = detail::Json::parse(in);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return detail::pipeline_config_from_json(j);
}

// One image's token rows, the unit the resampler and the pooled image
// direction are both built from.
inline Matrix image_rows(const ImageRecord& img, const std::filesystem::path& emb_dir) {
    const EmbeddingRef& ref = img.embedding_ref;
    if (ref.row_end <= ref.row_begin)
        throw ShapeMismatch("empty embedding row range for image " + img.image_id);
    const Matrix all = read_embeddings(emb_dir / ref.file);
    if (ref.row_end > all.rows())
        throw ShapeMismatch("embedding row range out of bounds for image " + img.image_id);
    Matrix out(ref.row_end - ref.row_begin, all.cols());
    for (std::size_t r = ref.row_begin; r < ref.row_end; ++r)
        for (std::size_t c = 0; c < all.cols(); ++c) out(r - ref.row_begin, c) = all(r, c);
    return out;
}

// v_i of the filter: mean over images of each image's mean token row.
inline std::vector<double> mean_image_pool(const std::vector<Matrix>& per_image_rows) {
    if (per_image_rows.empty()) throw EmptyContext();
    const std::size_t dim = per_image_rows.front().cols();
    std::vector<double> acc(dim, 0.0);
    for (const Matrix& m : per_image_rows) {
        if (m.rows() == 0) throw EmptyContext();
        if (m.cols() != dim) throw ShapeMismatch("pooled images disagree on dimension");
        for (std::size_t c = 0; c < dim; ++c) {
            double s = 0.0;
            for (std::size_t r = 0; r < m.rows(); ++r) s += m(r, c);
            acc[c] += s / static_cast<double>(m.rows());
        }
    }
    for (double& x : acc) x /= static_cast<double>(per_image_rows.size());
    return acc;
}

// Sentence records for one prior report; rows must align one per sentence.
inline std::vector<SentenceRecord> prior_sentence_records(const Report& prior,
                                                          SentenceSource source,
                                                          const Matrix& rows) {
    if (!prior.label_vectors) throw MissingLabels("prior report without label vectors");
    if (prior.label_vectors->size() != prior.sentences.size())
        throw AlignmentError("prior labels do not align with sentences");
    if (rows.rows() != prior.sentences.size())
        throw AlignmentError("prior embedding rows do not align with sentences");
    std::vector<SentenceRecord> out;
    out.reserve(prior.sentences.size());
    for (std::size_t k = 0; k < prior.sentences.size(); ++k) {
        SentenceRecord rec;
        rec.text = prior.sentences[k];
        rec.source = source;
        rec.labels = (*prior.label_vectors)[k];
        rec.embedding.assign(rows.row(k).begin(), rows.row(k).end());
        out.push_back(std::move(rec));
    }
    return out;
}

// A prior participates when it has sentences; it then must carry an embedding
// reference whose row range matches them.
inline std::optional<Matrix> prior_rows_for(const Report& prior,
                                            const std::filesystem::path& emb_dir) {
    if (prior.sentences.empty()) return std::nullopt;
    if (!prior.embedding_ref) throw MissingLabels("prior report without embedding reference");
    const EmbeddingRef& ref = *prior.embedding_ref;
    const Matrix all = read_embeddings(emb_dir / ref.file);
    if (ref.row_end > all.rows() || ref.row_end - ref.row_begin != prior.sentences.size())
        throw AlignmentError("prior embedding row range does not match sentences");
    Matrix out(prior.sentences.size(), all.cols());
    for (std::size_t r = ref.row_begin; r < ref.row_end; ++r)
        for (std::size_t c = 0; c < all.cols(); ++c) out(r - ref.row_begin, c) = all(r, c);
    return out;
}

// Everything the fuser and the filter need from a study's images.
struct StudyFeatures {
    SplitResult split;
    Matrix h_frontal;               // usable frontal rows, concatenated
    Matrix h_lateral;               // usable lateral rows; zero rows when none
    std::vector<double> image_dir;  // mean of per-image mean rows
};

// expected_dim 0 means "whatever the first image has", still enforced to be
// consistent across the study.
inline StudyFeatures gather_study_features(const Study& study, const RepairPolicy& repair,
                                           const std::filesystem::path& emb_dir,
                                           std::size_t expected_dim = 0) {
    StudyFeatures out;
    out.split = split_views(study, repair);
    std::vector<Matrix> pooled_inputs;
    auto gather = [&](const std::vector<ImageRecord>& imgs) {
        Matrix acc(0, expected_dim);
        for (const auto& img : imgs) {
            Matrix rows = image_rows(img, emb_dir);
            if (expected_dim == 0) expected_dim = rows.cols();
            if (rows.cols() != expected_dim)
                throw ShapeMismatch("embedding dim " + std::to_string(rows.cols()) +
                                    " does not match the configured dim for image " +
                                    img.image_id);
            pooled_inputs.push_back(rows);
            acc = acc.rows() == 0 ? std::move(rows) : vconcat(acc, rows);
        }
        return acc;
    };
    out.h_frontal = gather(out.split.frontal);
    out.h_lateral = gather(out.split.lateral);
    out.image_dir = mean_image_pool(pooled_inputs);
    return out;
}

// Prior1 records first, then Prior2, each in sentence order.
inline std::vector<SentenceRecord> study_prior_records(const Study& study,
                                                       const std::filesystem::path& emb_dir) {
    std::vector<SentenceRecord> records;
    auto add = [&](const std::optional<Report>& prior, SentenceSource source) {
        if (!prior) return;
        if (auto rows = prior_rows_for(*prior, emb_dir)) {
            auto recs = prior_sentence_records(*prior, source, *rows);
            records.insert(records.end(), recs.begin(), recs.end());
        }
    };
    add(study.prior1, SentenceSource::Prior1);
    add(study.prior2, SentenceSource::Prior2);
    return records;
}

struct StudyBundle {
    std::string study_id;
    bool ok = false;
    std::string error;                   // skip reason when !ok
    std::vector<std::string> image_ids;  // aligned with audit
    std::vector<RepairedView> audit;
    Matrix fused;
    FilterOutcome filtered;
    WeightPlan plan;
};

namespace detail {

inline StudyBundle process_study(const Study& study, const PipelineConfig& cfg,
                                 const FuserParams& fuser, const FreqTable& freq) {
    StudyBundle bundle;
    bundle.study_id = study.study_id;
    for (const auto& img : study.images) bundle.image_ids.push_back(img.image_id);
    try {
        // Audit first so even a skipped study has every image accounted for.
        for (const auto& img : study.images)
            bundle.audit.push_back(repair_view(img.view_tag, img.view_probs, cfg.repair));
        const StudyFeatures feats =
            gather_study_features(study, cfg.repair, cfg.emb_dir, cfg.resampler.dim);

        const Matrix* hl = feats.h_lateral.rows() > 0 ? &feats.h_lateral : nullptr;
        bundle.fused = favr_fuse(feats.h_frontal, hl, fuser);

        bundle.filtered =
            filter_prior(study_prior_records(study, cfg.emb_dir), feats.image_dir, cfg.filter);

        const auto spans = spans_for_sentences(study.report.sentences);
        bundle.plan = build_weight_plan(study.report, freq, cfg.tsl, spans);
        bundle.ok = true;
    } catch (const Error& e) {
        bundle.error = e.what();
    }
    return bundle;
}

inline Json bundle_to_json(const StudyBundle& b, const std::string& fused_file) {
    Json j;
    j["study_id"] = b.study_id;
    j["status"] = b.ok ? "ok" : "skipped";
    if (!b.ok) j["error"] = b.error;
    Json views = Json::array();
    for (std::size_t i = 0; i < b.audit.size(); ++i) {
        views.push_back({{"image_id", b.image_ids[i]},
                         {"resolved", resolved_view_name(b.audit[i].resolved)},
                         {"provenance", provenance_name(b.audit[i].provenance)},
                         {"confidence", b.audit[i].confidence}});
    }
    j["views"] = views;
    if (!b.ok) return j;

    j["fused_file"] = fused_file;
    j["fused_rows"] = b.fused.rows();
    j["fused_dim"] = b.fused.cols();
    Json retained = Json::array();
    for (const SentenceRecord& r : b.filtered.retained)
        retained.push_back({{"text", r.text},
                            {"source", sentence_source_name(r.source)},
                            {"similarity", r.similarity.value_or(0.0)}});
    Json dropped = Json::array();
    for (const auto& [r, reason] : b.filtered.dropped)
        dropped.push_back({{"text", r.text},
                           {"source", sentence_source_name(r.source)},
                           {"similarity", r.similarity.value_or(0.0)},
                           {"reason", drop_reason_name(reason)}});
    j["prior"] = {{"retained", retained}, {"dropped", dropped}};
    j["weights"] = {{"m", b.plan.m},
                    {"sentence_weights", b.plan.sentence_weights},
                    {"token_weights", b.plan.token_weights}};
    return j;
}

}  // namespace detail

struct PipelineSummary {
    std::size_t studies = 0;       // parsed studies
    std::size_t parse_errors = 0;  // bad corpus lines
    std::size_t fused = 0;
    std::size_t skipped = 0;
    std::map<std::string, std::size_t> skip_reasons;
    std::size_t retained_sentences = 0;
    std::map<std::string, std::size_t> drop_reasons;
};

// Work is sharded over a thread pool but every output is written after the
// join, in corpus order, so any worker count produces identical bytes.
inline PipelineSummary run_pipeline(const PipelineConfig& cfg) {
    cfg.validate();
    const CorpusLoad load = load_corpus(cfg.corpus);
    for (const ParseError& e : load.errors) log_error(e.what());

    std::vector<Study> labeled;
    for (const Study& s : load.studies)
        if (s.report.label_vectors) labeled.push_back(s);
    FreqTable freq{};
    if (!labeled.empty()) freq = label_frequencies(labeled);

    const FuserParams fuser = [&] {
        FuserParams p = init_params(cfg.resampler.seed, cfg.resampler.n_queries,
                                    cfg.resampler.dim, cfg.resampler.dim_out,
                                    cfg.resampler.scheme);
        if (cfg.resampler.share_lateral) tie_lateral_weights(p);
        return p;
    }();

    const std::size_t n = load.studies.size();
    std::vector<StudyBundle> bundles(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) break;
            bundles[i] = detail::process_study(load.studies[i], cfg, fuser, freq);
        }
    };
    const std::size_t n_threads = std::min<std::size_t>(cfg.workers, std::max<std::size_t>(n, 1));
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t + 1 < n_threads; ++t) pool.emplace_back(worker);
    worker();
    for (std::thread& t : pool) t.join();

    std::filesystem::create_directories(cfg.out_dir);
    std::ofstream bundle_out(cfg.out_dir / "bundles.jsonl", std::ios::trunc);
    if (!bundle_out) throw FormatError("cannot create bundles.jsonl");

    PipelineSummary summary;
    summary.studies = n;
    summary.parse_errors = load.errors.size();
    for (const StudyBundle& b : bundles) {
        const std::string fused_file = b.study_id + ".fused.emb";
        if (b.ok) {
            ++summary.fused;
            write_embeddings(cfg.out_dir / fused_file, b.fused);
            summary.retained_sentences += b.filtered.retained.size();
            for (const auto& [rec, reason] : b.filtered.dropped)
                ++summary.drop_reasons[drop_reason_name(reason)];
        } else {
            ++summary.skipped;
            ++summary.skip_reasons[b.error];
            log_info("skipped " + b.study_id + ": " + b.error);
        }
        bundle_out << detail::bundle_to_json(b, fused_file).dump() << '\n';
    }
    if (!bundle_out) throw FormatError("short write to bundles.jsonl");
    bundle_out.close();

    detail::Json sj;
    sj["studies"] = summary.studies;
    sj["parse_errors"] = summary.parse_errors;
    sj["fused"] = summary.fused;
    sj["skipped"] = summary.skipped;
    sj["skip_reasons"] = summary.skip_reasons;
    sj["retained_sentences"] = summary.retained_sentences;
    sj["drop_reasons"] = summary.drop_reasons;
    std::ofstream summary_out(cfg.out_dir / "summary.json", std::ios::trunc);
    summary_out << sj.dump(2) << '\n';

    std::ofstream config_out(cfg.out_dir / "effective_config.json", std::ios::trunc);
    config_out << detail::pipeline_config_to_json(cfg).dump(2) << '\n';
    return summary;
}

}  // namespace sure
