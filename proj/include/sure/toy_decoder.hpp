#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include "sure/cef.hpp"
#include "sure/errors.hpp"
#include "sure/labels.hpp"
#include "sure/matrix.hpp"
#include "sure/resampler.hpp"
#include "sure/rng.hpp"
#include "sure/study.hpp"
#include "sure/synth.hpp"
#include "sure/tsl.hpp"
#include "sure/view_repair.hpp"

namespace sure {

// A deliberately tiny autoregressive word decoder: token embeddings, one
// cross-attention block over the fused image features, a linear head. Small
// enough to train in seconds, big enough to feel the loss weighting.

struct Vocab {
    std::vector<std::string> words;  // id -> word; 0 <bos>, 1 <eos>, 2 <unk>
    std::unordered_map<std::string, int> index;

    static constexpr int kBos = 0;
    static constexpr int kEos = 1;
    static constexpr int kUnk = 2;

    int id(const std::string& w) const {
        auto it = index.find(w);
        return it == index.end() ? kUnk : it->second;
    }
};

// Vocabulary over current-report text only; sorted for determinism.
inline Vocab build_vocab(const std::vector<Study>& studies) {
    std::vector<std::string> all;
    for (const Study& s : studies)
        for (const std::string& w : whitespace_tokens(s.report.findings_text)) all.push_back(w);
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    Vocab v;
    v.words = {"<bos>", "<eos>", "<unk>"};
    for (std::string& w : all) v.words.push_back(std::move(w));
    for (std::size_t i = 0; i < v.words.size(); ++i) v.index[v.words[i]] = static_cast<int>(i);
    return v;
}

struct TinyDecoder {
    Matrix embed;          // V x h
    AttentionParams attn;  // h x h, queries are token states, context is Z
    Matrix w_out;          // h x V
    FuserParams fuser;

    std::size_t param_count() const {
        auto n = [](const Matrix& m) { return m.rows() * m.cols(); };
        return n(embed) + n(attn.w_q) + n(attn.w_k) + n(attn.w_v) + n(w_out) + n(fuser.queries) +
               3 * n(fuser.frontal.w_q) + 3 * n(fuser.lateral.w_q) + n(fuser.proj) +
               fuser.bias.size();
    }
};

enum class LossMode { CE, TSL };

inline const char* loss_mode_name(LossMode m) { return m == LossMode::CE ? "ce" : "tsl"; }

struct TrainConfig {
    std::size_t hidden = 32;     // decoder width; also the fuser's output dim
    std::size_t n_queries = 8;   // fused feature rows
    double lr = 0.05;
    std::size_t batch_size = 32;
    std::size_t epochs = 5;
    double eval_fraction = 0.2;  // trailing studies held out
    std::size_t max_decode_len = 32;
    LossMode mode = LossMode::TSL;
    TierConfig tiers;            // gamma is ignored under CE (treated as 0)
    RepairPolicy repair;
    std::uint64_t seed = 1;

    void validate() const {
        if (hidden == 0 || n_queries == 0) throw ConfigError("decoder dims must be >= 1");
        if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
        if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
        if (!(eval_fraction > 0.0 && eval_fraction < 1.0))
            throw ConfigError("eval_fraction must be in (0, 1)");
        tiers.validate();
    }
};

struct PerFinding {
    std::uint64_t tp = 0, fp = 0, fn = 0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct EvalMetrics {
    std::array<PerFinding, kNumPathologies> finding{};
};

struct TrainResult {
    EvalMetrics metrics;
    std::vector<double> epoch_losses;
    std::size_t param_count = 0;
    std::size_t train_studies = 0;
    std::size_t eval_studies = 0;
};

namespace detail {

struct StudyViews {
    Matrix frontal;
    Matrix lateral;  // may have zero rows
};

inline Matrix take_rows(const Matrix& src, std::size_t begin, std::size_t end) {
    Matrix out(end - begin, src.cols());
    for (std::size_t r = begin; r < end; ++r)
        for (std::size_t c = 0; c < src.cols(); ++c) out(r - begin, c) = src(r, c);
    return out;
}

inline StudyViews views_from_blobs(const Study& s, const Matrix& image_tokens,
                                   const RepairPolicy& policy) {
    const SplitResult split = split_views(s, policy);
    StudyViews out;
    auto gather = [&](const std::vector<ImageRecord>& imgs) {
        std::size_t rows = 0;
        for (const auto& img : imgs) rows += img.embedding_ref.row_end - img.embedding_ref.row_begin;
        Matrix m(rows, image_tokens.cols());
        std::size_t at = 0;
        for (const auto& img : imgs)
            for (std::size_t r = img.embedding_ref.row_begin; r < img.embedding_ref.row_end; ++r) {
                for (std::size_t c = 0; c < image_tokens.cols(); ++c) m(at, c) = image_tokens(r, c);
                ++at;
            }
        return m;
    };
    out.frontal = gather(split.frontal);
    out.lateral = gather(split.lateral);
    return out;
}

struct DecoderGrads {
    Matrix embed;
    AttentionParams attn;
    Matrix w_out;
    FuserParams fuser;
};

inline DecoderGrads zero_like(const TinyDecoder& m) {
    auto z = [](const Matrix& x) { return Matrix(x.rows(), x.cols()); };
    DecoderGrads g;
    g.embed = z(m.embed);
    g.attn = {z(m.attn.w_q), z(m.attn.w_k), z(m.attn.w_v)};
    g.w_out = z(m.w_out);
    g.fuser.queries = z(m.fuser.queries);
    g.fuser.frontal = {z(m.fuser.frontal.w_q), z(m.fuser.frontal.w_k), z(m.fuser.frontal.w_v)};
    g.fuser.lateral = {z(m.fuser.lateral.w_q), z(m.fuser.lateral.w_k), z(m.fuser.lateral.w_v)};
    g.fuser.proj = z(m.fuser.proj);
    g.fuser.bias.assign(m.fuser.bias.size(), 0.0);
    return g;
}

// Teacher-forced forward + backward for one study. grad_scale[t] multiplies
// position t's cross-entropy gradient; returns the unweighted per-position
// losses so the caller can aggregate any way it likes.
inline std::vector<double> study_backward(const TinyDecoder& model, const StudyViews& views,
                                          const std::vector<int>& inputs,
                                          const std::vector<int>& targets,
                                          const std::vector<double>& grad_scale,
                                          DecoderGrads& grads) {
    const std::size_t n = inputs.size();
    const std::size_t h = model.embed.cols();
    const std::size_t vsize = model.w_out.cols();

    Matrix x(n, h);
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t c = 0; c < h; ++c) x(t, c) = model.embed(inputs[t], c);

    FuseCache fuse_cache;
    const Matrix* hl = views.lateral.rows() > 0 ? &views.lateral : nullptr;
    Matrix z = favr_fuse(views.frontal, hl, model.fuser, &fuse_cache);

    AttendCache attn_cache;
    Matrix ctx = cross_attend(x, z, model.attn, &attn_cache);

    Matrix states = x;
    add_inplace(states, ctx);
    Matrix logits = matmul(states, model.w_out);

    std::vector<double> losses(n);
    Matrix d_logits(n, vsize);
    for (std::size_t t = 0; t < n; ++t) {
        double mx = logits(t, 0);
        for (std::size_t j = 1; j < vsize; ++j) mx = std::max(mx, logits(t, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < vsize; ++j) sum += std::exp(logits(t, j) - mx);
        const double lse = mx + std::log(sum);
        losses[t] = lse - logits(t, static_cast<std::size_t>(targets[t]));
        for (std::size_t j = 0; j < vsize; ++j) {
            const double p = std::exp(logits(t, j) - lse);
            const double onehot = j == static_cast<std::size_t>(targets[t]) ? 1.0 : 0.0;
            d_logits(t, j) = (p - onehot) * grad_scale[t];
        }
    }

    add_inplace(grads.w_out, matmul_at(states, d_logits));
    Matrix d_states = matmul_bt(d_logits, model.w_out);

    AttendGrads ag = cross_attend_backward(attn_cache, model.attn, d_states);
    add_inplace(grads.attn.w_q, ag.d_wq);
    add_inplace(grads.attn.w_k, ag.d_wk);
    add_inplace(grads.attn.w_v, ag.d_wv);

    Matrix d_x = d_states;
    add_inplace(d_x, ag.d_queries);
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t c = 0; c < h; ++c) grads.embed(inputs[t], c) += d_x(t, c);

    FuseGrads fg = favr_fuse_backward(fuse_cache, model.fuser, ag.d_context);
    add_inplace(grads.fuser.queries, fg.d_params.queries);
    add_inplace(grads.fuser.frontal.w_q, fg.d_params.frontal.w_q);
    add_inplace(grads.fuser.frontal.w_k, fg.d_params.frontal.w_k);
    add_inplace(grads.fuser.frontal.w_v, fg.d_params.frontal.w_v);
    add_inplace(grads.fuser.lateral.w_q, fg.d_params.lateral.w_q);
    add_inplace(grads.fuser.lateral.w_k, fg.d_params.lateral.w_k);
    add_inplace(grads.fuser.lateral.w_v, fg.d_params.lateral.w_v);
    add_inplace(grads.fuser.proj, fg.d_params.proj);
    for (std::size_t j = 0; j < grads.fuser.bias.size(); ++j)
        grads.fuser.bias[j] += fg.d_params.bias[j];
    return losses;
}

inline void sgd_step(TinyDecoder& model, const DecoderGrads& grads, double lr) {
    auto upd = [lr](Matrix& p, const Matrix& g) {
        for (std::size_t i = 0; i < p.rows(); ++i)
            for (std::size_t j = 0; j < p.cols(); ++j) p(i, j) -= lr * g(i, j);
    };
    upd(model.embed, grads.embed);
    upd(model.attn.w_q, grads.attn.w_q);
    upd(model.attn.w_k, grads.attn.w_k);
    upd(model.attn.w_v, grads.attn.w_v);
    upd(model.w_out, grads.w_out);
    upd(model.fuser.queries, grads.fuser.queries);
    upd(model.fuser.frontal.w_q, grads.fuser.frontal.w_q);
    upd(model.fuser.frontal.w_k, grads.fuser.frontal.w_k);
    upd(model.fuser.frontal.w_v, grads.fuser.frontal.w_v);
    upd(model.fuser.lateral.w_q, grads.fuser.lateral.w_q);
    upd(model.fuser.lateral.w_k, grads.fuser.lateral.w_k);
    upd(model.fuser.lateral.w_v, grads.fuser.lateral.w_v);
    upd(model.fuser.proj, grads.fuser.proj);
    for (std::size_t j = 0; j < model.fuser.bias.size(); ++j)
        model.fuser.bias[j] -= lr * grads.fuser.bias[j];
}

inline std::string greedy_decode(const TinyDecoder& model, const StudyViews& views,
                                 const Vocab& vocab, std::size_t max_len) {
    const Matrix* hl = views.lateral.rows() > 0 ? &views.lateral : nullptr;
    Matrix z = favr_fuse(views.frontal, hl, model.fuser);
    const std::size_t h = model.embed.cols();
    const std::size_t vsize = model.w_out.cols();

    std::vector<int> tokens = {Vocab::kBos};
    std::string text;
    for (std::size_t step = 0; step < max_len; ++step) {
        Matrix x(tokens.size(), h);
        for (std::size_t t = 0; t < tokens.size(); ++t)
            for (std::size_t c = 0; c < h; ++c) x(t, c) = model.embed(tokens[t], c);
        Matrix ctx = cross_attend(x, z, model.attn);
        const std::size_t last = tokens.size() - 1;
        int best = 0;
        double best_score = -1e300;
        for (std::size_t j = 0; j < vsize; ++j) {
            double score = 0.0;
            for (std::size_t c = 0; c < h; ++c)
                score += (x(last, c) + ctx(last, c)) * model.w_out(c, j);
            if (score > best_score) {
                best_score = score;
                best = static_cast<int>(j);
            }
        }
        if (best == Vocab::kEos) break;
        if (!text.empty()) text += ' ';
        text += vocab.words[static_cast<std::size_t>(best)];
        tokens.push_back(best);
    }
    return text;
}

inline PathologySet predicted_positive(const std::string& text, const SynthVocab& vocab) {
    PathologySet out{};
    for (const std::string& sentence : split_sentences(text)) {
        const LabelVector lv = keyword_label(sentence, vocab);
        for (std::size_t j = 0; j < kNumPathologies; ++j)
            if (lv[j] == FindingLabel::Positive) out[j] = true;
    }
    return out;
}

}  // namespace detail

// Trains with one code path for both modes: the per-token gradient scale is
// (1 + gamma * w_t) / N, and CE simply runs at gamma = 0, so the CE and
// TSL(gamma=0) trajectories are bitwise identical by construction.
inline TrainResult train_toy(const SynthResult& corpus, const SynthVocab& synth_vocab,
                             const TrainConfig& cfg) {
    cfg.validate();
    const std::size_t total = corpus.studies.size();
    if (total < 5) throw ConfigError("corpus too small to split");
    const std::size_t eval_count =
        std::max<std::size_t>(1, static_cast<std::size_t>(cfg.eval_fraction * total));
    const std::size_t train_count = total - eval_count;

    const Vocab vocab = build_vocab(corpus.studies);
    const double gamma = cfg.mode == LossMode::CE ? 0.0 : cfg.tiers.gamma;

    // Frequencies from the training split only.
    std::vector<Study> train_studies(corpus.studies.begin(),
                                     corpus.studies.begin() + train_count);
    const FreqTable freq = label_frequencies(train_studies);

    // Precompute per-study teacher-forcing rows and repaired views.
    struct Prepared {
        detail::StudyViews views;
        std::vector<int> inputs, targets;
        std::vector<double> raws;            // key-sentence raw weights
        std::vector<TokenSpan> key_spans;    // spans of those key sentences
        std::size_t n_tokens = 0;
    };
    std::vector<Prepared> prep(total);
    for (std::size_t i = 0; i < total; ++i) {
        const Study& s = corpus.studies[i];
        Prepared p;
        p.views = detail::views_from_blobs(s, corpus.blobs[i].image_tokens, cfg.repair);
        const std::vector<std::string> words = whitespace_tokens(s.report.findings_text);
        // inputs = [bos, w1..wm], targets = [w1..wm, eos]; both length m+1.
        p.inputs.push_back(Vocab::kBos);
        for (const std::string& w : words) {
            const int id = vocab.id(w);
            p.inputs.push_back(id);
            p.targets.push_back(id);
        }
        p.targets.push_back(Vocab::kEos);
        p.n_tokens = p.targets.size();

        if (!s.report.label_vectors) throw MissingLabels(s.study_id);
        const auto spans = spans_for_sentences(s.report.sentences);
        for (std::size_t k = 0; k < spans.size(); ++k) {
            if (auto rarity = sentence_rarity((*s.report.label_vectors)[k], freq)) {
                p.raws.push_back(raw_weight(*rarity, cfg.tiers));
                p.key_spans.push_back(spans[k]);
            }
        }
        prep[i] = std::move(p);
    }

    Rng rng(cfg.seed);
    TinyDecoder model;
    const std::size_t vsize = vocab.words.size();
    const std::size_t image_dim = corpus.blobs.empty() ? 0 : corpus.blobs[0].image_tokens.cols();
    model.fuser = init_params(rng.next_u64(), cfg.n_queries, image_dim, cfg.hidden,
                              InitScheme::ScaledGaussian);
    const double stddev = 1.0 / std::sqrt(static_cast<double>(cfg.hidden));
    auto fill = [&](Matrix& m) {
        for (std::size_t i = 0; i < m.rows(); ++i)
            for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) = rng.normal(0.0, stddev);
    };
    model.embed = Matrix(vsize, cfg.hidden);
    fill(model.embed);
    model.attn = {Matrix(cfg.hidden, cfg.hidden), Matrix(cfg.hidden, cfg.hidden),
                  Matrix(cfg.hidden, cfg.hidden)};
    fill(model.attn.w_q);
    fill(model.attn.w_k);
    fill(model.attn.w_v);
    model.w_out = Matrix(cfg.hidden, vsize);
    fill(model.w_out);

    TrainResult result;
    result.param_count = model.param_count();
    result.train_studies = train_count;
    result.eval_studies = eval_count;

    std::vector<std::size_t> order(train_count);
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Fisher-Yates with the run's own rng keeps the schedule deterministic.
        for (std::size_t i = train_count; i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(rng.uniform_int(i));
            std::swap(order[i - 1], order[j]);
        }
        double epoch_loss = 0.0;
        std::size_t epoch_tokens = 0;
        for (std::size_t start = 0; start < train_count; start += cfg.batch_size) {
            const std::size_t stop = std::min(train_count, start + cfg.batch_size);
            const double inv_batch = 1.0 / static_cast<double>(stop - start);

            // Batch-scoped normalization maximum over all key raws.
            double batch_max = 0.0;
            for (std::size_t b = start; b < stop; ++b)
                for (double r : prep[order[b]].raws) batch_max = std::max(batch_max, r);

            detail::DecoderGrads grads = detail::zero_like(model);
            for (std::size_t b = start; b < stop; ++b) {
                const Prepared& p = prep[order[b]];
                std::vector<double> weights(p.n_tokens, 0.0);
                if (batch_max > 0.0) {
                    for (std::size_t k = 0; k < p.raws.size(); ++k) {
                        const double w =
                            cfg.tiers.alpha + (1.0 - cfg.tiers.alpha) * p.raws[k] / batch_max;
                        for (std::size_t t = p.key_spans[k].begin; t < p.key_spans[k].end; ++t)
                            weights[t] = w;
                    }
                }
                std::vector<double> scale(p.n_tokens);
                const double inv_n = 1.0 / static_cast<double>(p.n_tokens);
                for (std::size_t t = 0; t < p.n_tokens; ++t)
                    scale[t] = (1.0 + gamma * weights[t]) * inv_n * inv_batch;
                const std::vector<double> losses = detail::study_backward(
                    model, p.views, p.inputs, p.targets, scale, grads);
                for (std::size_t t = 0; t < losses.size(); ++t) {
                    const double contrib = (1.0 + gamma * weights[t]) * losses[t];
                    if (!std::isfinite(contrib)) throw TrainingDiverged("non-finite loss");
                    epoch_loss += contrib;
                }
                epoch_tokens += p.n_tokens;
            }
            detail::sgd_step(model, grads, cfg.lr);
        }
        result.epoch_losses.push_back(epoch_loss / static_cast<double>(epoch_tokens));
    }

    // Evaluation: greedy decode, keyword-label the text, score per finding.
    for (std::size_t i = train_count; i < total; ++i) {
        const std::string text =
            detail::greedy_decode(model, prep[i].views, vocab, cfg.max_decode_len);
        const PathologySet pred = detail::predicted_positive(text, synth_vocab);
        for (std::size_t j = 0; j < kNumPathologies; ++j) {
            const bool truth = corpus.truths[i].active[j];
            if (pred[j] && truth) ++result.metrics.finding[j].tp;
            else if (pred[j] && !truth) ++result.metrics.finding[j].fp;
            else if (!pred[j] && truth) ++result.metrics.finding[j].fn;
        }
    }
    for (PerFinding& f : result.metrics.finding) {
        f.precision = f.tp + f.fp == 0 ? 0.0
                                       : static_cast<double>(f.tp) /
                                             static_cast<double>(f.tp + f.fp);
        f.recall = f.tp + f.fn == 0
                       ? 0.0
                       : static_cast<double>(f.tp) / static_cast<double>(f.tp + f.fn);
        f.f1 = f.precision + f.recall == 0.0
                   ? 0.0
                   : 2.0 * f.precision * f.recall / (f.precision + f.recall);
    }
    return result;
}

}  // namespace sure
