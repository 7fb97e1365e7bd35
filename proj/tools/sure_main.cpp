#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sure/cef.hpp"
#include "sure/corpus.hpp"
#include "sure/emb_io.hpp"
#include "sure/errors.hpp"
#include "sure/lab.hpp"
#include "sure/log.hpp"
#include "sure/pipeline.hpp"
#include "sure/resampler.hpp"
#include "sure/synth.hpp"
#include "sure/tsl.hpp"
#include "sure/view_repair.hpp"

namespace {

using sure::detail::Json;

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw sure::ConfigError("cannot create output file: " + path.string());
    return out;
}

// Shared flags: most subcommands walk a corpus and log-and-skip bad studies.
struct CorpusWalk {
    std::size_t studies = 0;
    std::size_t written = 0;
    std::size_t skipped = 0;
    std::size_t parse_errors = 0;
};

void print_walk(const char* tool, const CorpusWalk& walk) {
    Json j;
    j["tool"] = tool;
    j["studies"] = walk.studies;
    j["written"] = walk.written;
    j["skipped"] = walk.skipped;
    j["parse_errors"] = walk.parse_errors;
    std::cout << j.dump() << '\n';
}

void cmd_repair_views(const std::string& corpus_path, const std::string& out_path,
                      const std::string& audit_path, const sure::RepairPolicy& policy) {
    policy.validate();
    const sure::CorpusLoad load = sure::load_corpus(corpus_path);
    for (const auto& e : load.errors) sure::log_error(e.what());

    std::ofstream out = open_out(out_path);
    std::ofstream audit;
    if (!audit_path.empty()) audit = open_out(audit_path);

    CorpusWalk walk;
    walk.studies = load.studies.size();
    walk.parse_errors = load.errors.size();
    for (const sure::Study& s : load.studies) {
        Json ja;
        ja["study_id"] = s.study_id;
        Json views = Json::array();
        for (const auto& img : s.images) {
            const sure::RepairedView rv = sure::repair_view(img.view_tag, img.view_probs, policy);
            views.push_back({{"image_id", img.image_id},
                             {"original", img.view_tag.to_string()},
                             {"resolved", sure::resolved_view_name(rv.resolved)},
                             {"provenance", sure::provenance_name(rv.provenance)},
                             {"confidence", rv.confidence}});
        }
        ja["views"] = views;
        if (audit.is_open()) audit << ja.dump() << '\n';

        try {
            const sure::SplitResult split = sure::split_views(s, policy);
            sure::Study repaired = s;
            repaired.images.clear();
            for (const auto& img : split.frontal) repaired.images.push_back(img);
            for (const auto& img : split.lateral) repaired.images.push_back(img);
            out << sure::study_to_jsonl(repaired) << '\n';
            ++walk.written;
        } catch (const sure::Error& e) {
            sure::log_info("skipped " + s.study_id + ": " + e.what());
            ++walk.skipped;
        }
    }
    print_walk("repair-views", walk);
}

void cmd_cef_filter(const std::string& corpus_path, const std::string& emb_dir,
                    const std::string& out_path, const sure::RepairPolicy& policy,
                    const sure::FilterConfig& filter) {
    filter.validate();
    const sure::CorpusLoad load = sure::load_corpus(corpus_path);
    for (const auto& e : load.errors) sure::log_error(e.what());

    std::ofstream out = open_out(out_path);
    CorpusWalk walk;
    walk.studies = load.studies.size();
    walk.parse_errors = load.errors.size();
    for (const sure::Study& s : load.studies) {
        try {
            const sure::StudyFeatures feats = sure::gather_study_features(s, policy, emb_dir);
            const sure::FilterOutcome outcome =
                sure::filter_prior(sure::study_prior_records(s, emb_dir), feats.image_dir, filter);
            Json j;
            j["study_id"] = s.study_id;
            Json retained = Json::array();
            for (const auto& r : outcome.retained)
                retained.push_back({{"text", r.text},
                                    {"source", sure::sentence_source_name(r.source)},
                                    {"similarity", r.similarity.value_or(0.0)}});
            Json dropped = Json::array();
            for (const auto& [r, reason] : outcome.dropped)
                dropped.push_back({{"text", r.text},
                                   {"source", sure::sentence_source_name(r.source)},
                                   {"similarity", r.similarity.value_or(0.0)},
                                   {"reason", sure::drop_reason_name(reason)}});
            j["retained"] = retained;
            j["dropped"] = dropped;
            out << j.dump() << '\n';
            ++walk.written;
        } catch (const sure::Error& e) {
            sure::log_info("skipped " + s.study_id + ": " + e.what());
            ++walk.skipped;
        }
    }
    print_walk("cef-filter", walk);
}

void cmd_tsl_weights(const std::string& corpus_path, const std::string& out_path,
                     const std::string& freq_out, const sure::TierConfig& tiers,
                     bool sentence_level) {
    tiers.validate();
    const sure::CorpusLoad load = sure::load_corpus(corpus_path);
    for (const auto& e : load.errors) sure::log_error(e.what());

    std::vector<sure::Study> labeled;
    for (const auto& s : load.studies)
        if (s.report.label_vectors) labeled.push_back(s);
    if (labeled.empty()) throw sure::ConfigError("no study carries report labels");
    const sure::FreqTable freq = sure::label_frequencies(labeled, sentence_level);

    if (!freq_out.empty()) {
        Json jf;
        for (std::size_t j = 0; j < sure::kNumPathologies; ++j)
            jf[sure::kFindingNames[j]] = freq[j];
        open_out(freq_out) << jf.dump(2) << '\n';
    }

    std::ofstream out = open_out(out_path);
    CorpusWalk walk;
    walk.studies = load.studies.size();
    walk.parse_errors = load.errors.size();
    for (const sure::Study& s : load.studies) {
        try {
            const auto spans = sure::spans_for_sentences(s.report.sentences);
            const sure::WeightPlan plan =
                sure::build_weight_plan(s.report, freq, tiers, spans);
            Json j;
            j["study_id"] = s.study_id;
            j["m"] = plan.m;
            j["sentence_weights"] = plan.sentence_weights;
            j["token_weights"] = plan.token_weights;
            out << j.dump() << '\n';
            ++walk.written;
        } catch (const sure::Error& e) {
            sure::log_info("skipped " + s.study_id + ": " + e.what());
            ++walk.skipped;
        }
    }
    print_walk("tsl-weights", walk);
}

void cmd_favr_fuse(const std::string& corpus_path, const std::string& emb_dir,
                   const std::string& out_dir, const sure::ResamplerConfig& rcfg,
                   const sure::RepairPolicy& policy) {
    rcfg.validate();
    const sure::CorpusLoad load = sure::load_corpus(corpus_path);
    for (const auto& e : load.errors) sure::log_error(e.what());
    std::filesystem::create_directories(out_dir);

    sure::FuserParams fuser = sure::init_params(rcfg.seed, rcfg.n_queries, rcfg.dim,
                                                rcfg.dim_out, rcfg.scheme);
    if (rcfg.share_lateral) sure::tie_lateral_weights(fuser);

    CorpusWalk walk;
    walk.studies = load.studies.size();
    walk.parse_errors = load.errors.size();
    for (const sure::Study& s : load.studies) {
        try {
            const sure::StudyFeatures feats =
                sure::gather_study_features(s, policy, emb_dir, rcfg.dim);
            const sure::Matrix* hl = feats.h_lateral.rows() > 0 ? &feats.h_lateral : nullptr;
            const sure::Matrix fused = sure::favr_fuse(feats.h_frontal, hl, fuser);
            sure::write_embeddings(std::filesystem::path(out_dir) / (s.study_id + ".fused.emb"),
                                   fused);
            ++walk.written;
        } catch (const sure::Error& e) {
            sure::log_info("skipped " + s.study_id + ": " + e.what());
            ++walk.skipped;
        }
    }
    print_walk("favr-fuse", walk);
}

int cmd_gradcheck(std::uint64_t base_seed, std::size_t n_seeds, double eps, double tol) {
    double worst = 0.0;
    bool ok = true;
    for (std::size_t i = 0; i < n_seeds; ++i) {
        sure::Rng rng(base_seed + i);
        const std::size_t n_q = 1 + rng.uniform_int(4);
        const std::size_t dim = 1 + rng.uniform_int(8);
        const std::size_t d_out = 1 + rng.uniform_int(4);
        const std::size_t n_f = 1 + rng.uniform_int(6);
        const std::size_t n_l = rng.uniform_int(7);  // 0 means no lateral

        auto fill = [&](sure::Matrix& m) {
            for (std::size_t r = 0; r < m.rows(); ++r)
                for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) = rng.normal(0.0, 1.0);
        };

        sure::FuserParams fuser = sure::init_params(rng.next_u64(), n_q, dim, d_out,
                                                    sure::InitScheme::ScaledGaussian);
        sure::Matrix h_f(n_f, dim), h_l(n_l, dim);
        fill(h_f);
        fill(h_l);
        const sure::Matrix* hl = n_l > 0 ? &h_l : nullptr;
        const sure::GradCheckReport fuse_rep = sure::grad_check_fuser(fuser, h_f, hl, eps, tol);

        sure::AttentionParams attn{sure::Matrix(dim, dim), sure::Matrix(dim, dim),
                                   sure::Matrix(dim, dim)};
        fill(attn.w_q);
        fill(attn.w_k);
        fill(attn.w_v);
        sure::Matrix queries(n_q, dim), context(n_f, dim);
        fill(queries);
        fill(context);
        const sure::GradCheckReport attend_rep =
            sure::grad_check_attend(queries, context, attn, eps, tol);

        worst = std::max({worst, fuse_rep.max_rel_err, attend_rep.max_rel_err});
        ok = ok && fuse_rep.pass && attend_rep.pass;
        sure::log_debug("gradcheck seed " + std::to_string(base_seed + i) +
                        " fuse=" + std::to_string(fuse_rep.max_rel_err) +
                        " attend=" + std::to_string(attend_rep.max_rel_err));
    }
    Json j;
    j["tool"] = "gradcheck";
    j["seeds"] = n_seeds;
    j["eps"] = eps;
    j["tol"] = tol;
    j["max_rel_err"] = worst;
    j["pass"] = ok;
    std::cout << j.dump() << '\n';
    return ok ? 0 : 1;
}

void cmd_lab_imbalance(const std::string& config_path, const std::string& out_path) {
    sure::LabConfig cfg;
    if (!config_path.empty()) cfg = sure::lab_config_from_file(config_path);
    cfg.validate();
    const sure::ImbalanceReport report = sure::imbalance_experiment(cfg);
    open_out(out_path) << sure::detail::imbalance_to_json(report).dump(2) << '\n';
    Json j;
    j["tool"] = "lab-imbalance";
    j["seeds"] = report.runs.size();
    j["rare_tier_wins"] = report.wins;
    j["common_f1_drop"] = report.common_drop;
    std::cout << j.dump() << '\n';
}

void cmd_lab_ablation(const std::string& config_path, const std::string& out_path) {
    sure::LabConfig cfg;
    if (!config_path.empty()) cfg = sure::lab_config_from_file(config_path);
    cfg.validate();
    const sure::SynthResult corpus = sure::generate_corpus(cfg.synth);
    const auto rows = sure::filter_ablation(corpus, cfg.train.repair, cfg.modes, cfg.taus,
                                            cfg.tau_high_delta);
    open_out(out_path) << sure::detail::ablation_to_json(rows).dump(2) << '\n';
    Json j;
    j["tool"] = "lab-filter-ablation";
    j["rows"] = rows.size();
    std::cout << j.dump() << '\n';
}

void cmd_gen_corpus(const std::string& out_dir, const sure::SynthConfig& cfg) {
    cfg.validate();
    const sure::SynthResult synth = sure::generate_corpus(cfg);
    sure::write_synth_tree(out_dir, synth);

    Json jf;
    for (std::size_t j = 0; j < sure::kNumPathologies; ++j)
        jf[sure::kFindingNames[j]] = synth.freq[j];
    open_out(std::filesystem::path(out_dir) / "freq.json") << jf.dump(2) << '\n';

    std::ofstream truth = open_out(std::filesystem::path(out_dir) / "truth.jsonl");
    for (std::size_t i = 0; i < synth.studies.size(); ++i) {
        const sure::StudyTruth& t = synth.truths[i];
        Json j;
        j["study_id"] = synth.studies[i].study_id;
        Json active = Json::array();
        for (std::size_t k = 0; k < sure::kNumPathologies; ++k)
            if (t.active[k]) active.push_back(sure::kFindingNames[k]);
        j["active"] = active;
        j["prior1_findings"] = t.prior1_findings;
        j["prior2_findings"] = t.prior2_findings;
        j["prior2_stale"] = t.prior2_stale;
        truth << j.dump() << '\n';
    }

    Json j;
    j["tool"] = "gen-corpus";
    j["studies"] = synth.studies.size();
    j["out_dir"] = out_dir;
    std::cout << j.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SURE-style study preparation: view repair, fused features, prior filtering, "
                 "loss weight plans, and a synthetic verification lab"};
    app.require_subcommand(1);
    int rc = 0;

    // repair-views --------------------------------------------------------
    auto* repair = app.add_subcommand("repair-views", "Repair view tags and split usable views");
    std::string rp_corpus, rp_out, rp_audit;
    sure::RepairPolicy rp_policy;
    std::string rp_fallback = "exclude";
    repair->add_option("--corpus", rp_corpus, "JSONL corpus")->required();
    repair->add_option("--out", rp_out, "repaired corpus JSONL")->required();
    repair->add_option("--audit", rp_audit, "per-image audit JSONL");
    repair->add_option("--theta-assign", rp_policy.theta_assign,
                       "confidence to resolve an unknown tag");
    repair->add_option("--theta-override", rp_policy.theta_override,
                       "confidence to overturn an explicit tag");
    repair->add_option("--fallback", rp_fallback, "exclude|treat_as_frontal");
    repair->callback([&] {
        rp_policy.fallback = sure::fallback_from_string(rp_fallback);
        cmd_repair_views(rp_corpus, rp_out, rp_audit, rp_policy);
    });

    // cef-filter ----------------------------------------------------------
    auto* cef = app.add_subcommand("cef-filter", "Filter prior-report sentences by similarity");
    std::string cf_corpus, cf_emb, cf_out;
    std::string cf_mode = "dynamic";
    sure::FilterConfig cf_filter;
    sure::RepairPolicy cf_policy;
    bool cf_keep_nonpositive = false;
    cef->add_option("--corpus", cf_corpus, "JSONL corpus")->required();
    cef->add_option("--emb-dir", cf_emb, "embedding directory")->required();
    cef->add_option("--out", cf_out, "filter decisions JSONL")->required();
    cef->add_option("--mode", cf_mode, "none|fixed|dynamic");
    cef->add_option("--tau", cf_filter.tau, "similarity gate");
    cef->add_option("--tau-high-plus", cf_filter.tau_high_plus,
                    "strict gate for vanished-finding sentences");
    cef->add_flag("--keep-nonpositive", cf_keep_nonpositive,
                  "keep sentences with no positive finding");
    cef->add_flag("--strict-all-prior2", cf_filter.strict_all_prior2,
                  "apply the strict gate to every Prior2 sentence");
    cef->callback([&] {
        cf_filter.mode = sure::filter_mode_from_string(cf_mode);
        cf_filter.require_positive = !cf_keep_nonpositive;
        cmd_cef_filter(cf_corpus, cf_emb, cf_out, cf_policy, cf_filter);
    });

    // tsl-weights ---------------------------------------------------------
    auto* tsl = app.add_subcommand("tsl-weights", "Build per-sentence/per-token weight plans");
    std::string tw_corpus, tw_out, tw_freq_out;
    sure::TierConfig tw_tiers;
    double tw_fixed_max = 0.0;
    bool tw_sentence_level = false;
    tsl->add_option("--corpus", tw_corpus, "JSONL corpus")->required();
    tsl->add_option("--out", tw_out, "weight plans JSONL")->required();
    tsl->add_option("--freq-out", tw_freq_out, "write the frequency table here");
    tsl->add_option("--t1", tw_tiers.t1, "common-tier threshold");
    tsl->add_option("--t2", tw_tiers.t2, "rare-tier threshold");
    tsl->add_option("--alpha", tw_tiers.alpha, "weight floor");
    tsl->add_option("--gamma", tw_tiers.gamma, "key-loss scale");
    tsl->add_option("--fixed-max", tw_fixed_max, "pin the normalization maximum M");
    tsl->add_flag("--sentence-level", tw_sentence_level, "count per sentence, not per report");
    tsl->callback([&] {
        if (tw_fixed_max > 0.0) tw_tiers.fixed_max = tw_fixed_max;
        cmd_tsl_weights(tw_corpus, tw_out, tw_freq_out, tw_tiers, tw_sentence_level);
    });

    // favr-fuse -----------------------------------------------------------
    auto* fuse = app.add_subcommand("favr-fuse", "Fuse view embeddings into fixed-size features");
    std::string ff_corpus, ff_emb, ff_out;
    sure::ResamplerConfig ff_rcfg;
    sure::RepairPolicy ff_policy;
    std::string ff_init = "scaled_gaussian";
    fuse->add_option("--corpus", ff_corpus, "JSONL corpus")->required();
    fuse->add_option("--emb-dir", ff_emb, "embedding directory")->required();
    fuse->add_option("--out-dir", ff_out, "directory for <study>.fused.emb files")->required();
    fuse->add_option("--n-queries", ff_rcfg.n_queries, "fused rows");
    fuse->add_option("--dim", ff_rcfg.dim, "input embedding dim");
    fuse->add_option("--dim-out", ff_rcfg.dim_out, "fused dim");
    fuse->add_option("--seed", ff_rcfg.seed, "parameter init seed");
    fuse->add_option("--init", ff_init, "identity|scaled_gaussian");
    fuse->add_flag("--share-lateral", ff_rcfg.share_lateral,
                   "tie lateral resampler weights to the frontal ones");
    fuse->callback([&] {
        ff_rcfg.scheme = sure::init_scheme_from_string(ff_init);
        cmd_favr_fuse(ff_corpus, ff_emb, ff_out, ff_rcfg, ff_policy);
    });

    // run -------------------------------------------------------------
    auto* run = app.add_subcommand("run", "Full pipeline: repair, fuse, filter, weight plans");
    std::string run_config;
    std::size_t run_workers = 0;
    run->add_option("--config", run_config, "pipeline config JSON")->required();
    run->add_option("--workers", run_workers, "override the config's worker count");
    run->callback([&] {
        sure::PipelineConfig cfg = sure::pipeline_config_from_file(run_config);
        if (run_workers > 0) cfg.workers = run_workers;
        const sure::PipelineSummary summary = sure::run_pipeline(cfg);
        Json j;
        j["tool"] = "run";
        j["studies"] = summary.studies;
        j["parse_errors"] = summary.parse_errors;
        j["fused"] = summary.fused;
        j["skipped"] = summary.skipped;
        j["retained_sentences"] = summary.retained_sentences;
        std::cout << j.dump() << '\n';
    });

    // gradcheck ---------------------------------------------------------
    auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of both backward passes");
    std::uint64_t gc_seed = 1;
    std::size_t gc_seeds = 20;
    double gc_eps = 1e-4, gc_tol = 1e-4;
    grad->add_option("--seed", gc_seed, "base seed");
    grad->add_option("--seeds", gc_seeds, "number of seeded trials");
    grad->add_option("--eps", gc_eps, "finite-difference step");
    grad->add_option("--tol", gc_tol, "max relative error accepted");
    grad->callback([&] { rc = cmd_gradcheck(gc_seed, gc_seeds, gc_eps, gc_tol); });

    // lab -----------------------------------------------------------------
    auto* lab = app.add_subcommand("lab", "Synthetic-corpus experiments");
    lab->require_subcommand(1);
    auto* imb = lab->add_subcommand("imbalance", "Paired CE vs TSL training across seeds");
    std::string li_config, li_out;
    imb->add_option("--config", li_config, "lab config JSON (defaults apply when omitted)");
    imb->add_option("--out", li_out, "report JSON")->required();
    imb->callback([&] { cmd_lab_imbalance(li_config, li_out); });

    auto* abl = lab->add_subcommand("filter-ablation", "Mode x tau retention table");
    std::string la_config, la_out;
    abl->add_option("--config", la_config, "lab config JSON (defaults apply when omitted)");
    abl->add_option("--out", la_out, "table JSON")->required();
    abl->callback([&] { cmd_lab_ablation(la_config, la_out); });

    // gen-corpus ----------------------------------------------------------
    auto* gen = app.add_subcommand("gen-corpus", "Write a synthetic corpus tree");
    std::string gen_out;
    sure::SynthConfig gen_cfg;
    gen->add_option("--out-dir", gen_out, "output directory")->required();
    gen->add_option("--n-studies", gen_cfg.n_studies, "study count");
    gen->add_option("--seed", gen_cfg.seed, "generator seed");
    gen->add_option("--zipf-s", gen_cfg.zipf_s, "Zipf exponent");
    gen->add_option("--base-rate", gen_cfg.base_rate, "most common finding's marginal");
    gen->add_option("--stale-rate", gen_cfg.stale_rate, "stale Prior2 mention rate");
    gen->add_option("--emb-dim", gen_cfg.emb_dim, "embedding dimension");
    gen->callback([&] { cmd_gen_corpus(gen_out, gen_cfg); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const sure::ConfigError& e) {
        sure::log_error(e.what());
        return 1;
    } catch (const sure::Error& e) {
        sure::log_error(e.what());
        return 2;
    } catch (const std::exception& e) {
        sure::log_error(e.what());
        return 2;
    }
    return rc;
}
