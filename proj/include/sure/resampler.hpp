#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "sure/errors.hpp"
#include "sure/matrix.hpp"
#include "sure/rng.hpp"

namespace sure {

// Single-head scaled dot-product cross-attention with learned projections.
// No residual or norm layers; the fuser is deliberately the smallest thing
// that still has the right gradient structure.

struct AttentionParams {
    Matrix w_q, w_k, w_v;  // each dim x dim
};

struct AttendCache {
    Matrix queries_in, context;
    Matrix q, k, v;
    Matrix attn;  // softmax rows, one row per query
};

inline Matrix cross_attend(const Matrix& queries, const Matrix& context,
                           const AttentionParams& p, AttendCache* cache = nullptr) {
    if (context.rows() == 0) throw EmptyContext();
    const std::size_t dim = queries.cols();
    if (context.cols() != dim) throw ShapeMismatch("attend: query/context dims differ");
    if (p.w_q.rows() != dim || p.w_q.cols() != dim || p.w_k.rows() != dim ||
        p.w_k.cols() != dim || p.w_v.rows() != dim || p.w_v.cols() != dim)
        throw ShapeMismatch("attend: projection shape");

    Matrix q = matmul(queries, p.w_q);
    Matrix k = matmul(context, p.w_k);
    Matrix v = matmul(context, p.w_v);

    Matrix scores = matmul_bt(q, k);
    scale_inplace(scores, 1.0 / std::sqrt(static_cast<double>(dim)));
    softmax_rows_inplace(scores);

    Matrix out = matmul(scores, v);
    if (!out.all_finite()) throw NumericalFailure("cross_attend");

    if (cache) {
        cache->queries_in = queries;
        cache->context = context;
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->attn = std::move(scores);
    }
    return out;
}

struct AttendGrads {
    Matrix d_queries, d_context;
    Matrix d_wq, d_wk, d_wv;
};

inline AttendGrads cross_attend_backward(const AttendCache& c, const AttentionParams& p,
                                         const Matrix& d_out) {
    const std::size_t dim = c.queries_in.cols();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim));

    Matrix d_attn = matmul_bt(d_out, c.v);
    Matrix d_v = matmul_at(c.attn, d_out);

    // Softmax jacobian per row: dS_ij = A_ij (dA_ij - sum_k A_ik dA_ik).
    Matrix d_scores(c.attn.rows(), c.attn.cols());
    for (std::size_t i = 0; i < c.attn.rows(); ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c.attn.cols(); ++j) dot += c.attn(i, j) * d_attn(i, j);
        for (std::size_t j = 0; j < c.attn.cols(); ++j)
            d_scores(i, j) = c.attn(i, j) * (d_attn(i, j) - dot);
    }

    Matrix d_q = matmul(d_scores, c.k);
    scale_inplace(d_q, scale);
    Matrix d_k = matmul_at(d_scores, c.q);
    scale_inplace(d_k, scale);

    AttendGrads g;
    g.d_wq = matmul_at(c.queries_in, d_q);
    g.d_wk = matmul_at(c.context, d_k);
    g.d_wv = matmul_at(c.context, d_v);
    g.d_queries = matmul_bt(d_q, p.w_q);
    g.d_context = matmul_bt(d_k, p.w_k);
    add_inplace(g.d_context, matmul_bt(d_v, p.w_v));
    return g;
}

// Two chained attention blocks plus an output projection. Frontal tokens are
// summarized by learned latent queries; the lateral pass reuses the frontal
// summary as its queries, so lateral evidence refines rather than replaces.
struct FuserParams {
    Matrix queries;  // n_queries x dim
    AttentionParams frontal;
    AttentionParams lateral;
    Matrix proj;               // 2*dim x dim_out
    std::vector<double> bias;  // dim_out
};

inline void validate_fuser(const FuserParams& p) {
    const std::size_t dim = p.queries.cols();
    if (p.queries.rows() == 0 || dim == 0) throw ShapeMismatch("fuser: empty query bank");
    if (p.proj.rows() != 2 * dim) throw ShapeMismatch("fuser: proj must have 2*dim rows");
    if (p.bias.size() != p.proj.cols()) throw ShapeMismatch("fuser: bias/proj width mismatch");
}

struct FuseCache {
    AttendCache frontal;
    std::optional<AttendCache> lateral;
    Matrix tf, tl, cat;
};

// Missing or empty lateral context degrades to a zero lateral summary so the
// projection sees a constant, not a different shape.
inline Matrix favr_fuse(const Matrix& h_frontal, const Matrix* h_lateral, const FuserParams& p,
                        FuseCache* cache = nullptr) {
    validate_fuser(p);
    if (h_frontal.rows() == 0) throw MissingFrontal();

    AttendCache front_cache;
    Matrix tf = cross_attend(p.queries, h_frontal, p.frontal, &front_cache);

    const bool has_lateral = h_lateral != nullptr && h_lateral->rows() > 0;
    Matrix tl;
    AttendCache lat_cache;
    if (has_lateral) {
        tl = cross_attend(tf, *h_lateral, p.lateral, &lat_cache);
    } else {
        tl = Matrix(tf.rows(), tf.cols());
    }

    Matrix cat = hconcat(tf, tl);
    Matrix z = matmul(cat, p.proj);
    for (std::size_t i = 0; i < z.rows(); ++i)
        for (std::size_t j = 0; j < z.cols(); ++j) z(i, j) += p.bias[j];
    if (!z.all_finite()) throw NumericalFailure("favr_fuse");

    if (cache) {
        cache->frontal = std::move(front_cache);
        if (has_lateral) cache->lateral = std::move(lat_cache);
        else cache->lateral.reset();
        cache->tf = std::move(tf);
        cache->tl = std::move(tl);
        cache->cat = std::move(cat);
    }
    return z;
}

struct FuseGrads {
    Matrix d_h_frontal;
    Matrix d_h_lateral;  // zero-size when the forward pass had no lateral
    FuserParams d_params;
};

inline FuseGrads favr_fuse_backward(const FuseCache& c, const FuserParams& p, const Matrix& d_z) {
    const std::size_t dim = p.queries.cols();
    FuseGrads g;

    g.d_params.bias.assign(p.bias.size(), 0.0);
    for (std::size_t i = 0; i < d_z.rows(); ++i)
        for (std::size_t j = 0; j < d_z.cols(); ++j) g.d_params.bias[j] += d_z(i, j);
    g.d_params.proj = matmul_at(c.cat, d_z);

    Matrix d_cat = matmul_bt(d_z, p.proj);
    Matrix d_tf(d_cat.rows(), dim);
    Matrix d_tl(d_cat.rows(), dim);
    for (std::size_t i = 0; i < d_cat.rows(); ++i)
        for (std::size_t j = 0; j < dim; ++j) {
            d_tf(i, j) = d_cat(i, j);
            d_tl(i, j) = d_cat(i, dim + j);
        }

    if (c.lateral) {
        AttendGrads lat = cross_attend_backward(*c.lateral, p.lateral, d_tl);
        add_inplace(d_tf, lat.d_queries);  // tf fed the lateral block as queries
        g.d_h_lateral = std::move(lat.d_context);
        g.d_params.lateral = {std::move(lat.d_wq), std::move(lat.d_wk), std::move(lat.d_wv)};
    } else {
        g.d_params.lateral = {Matrix(dim, dim), Matrix(dim, dim), Matrix(dim, dim)};
    }

    AttendGrads front = cross_attend_backward(c.frontal, p.frontal, d_tf);
    g.d_h_frontal = std::move(front.d_context);
    g.d_params.queries = std::move(front.d_queries);
    g.d_params.frontal = {std::move(front.d_wq), std::move(front.d_wk), std::move(front.d_wv)};
    return g;
}

enum class InitScheme { Identity, ScaledGaussian };

// Identity start (requires dim_out == dim): zero queries attend uniformly,
// every projection is the identity, proj averages the frontal and lateral
// halves. ScaledGaussian draws every weight entry from N(0, 1/sqrt(dim)).
inline FuserParams init_params(std::uint64_t seed, std::size_t n_queries, std::size_t dim,
                               std::size_t dim_out, InitScheme scheme) {
    if (n_queries == 0 || dim == 0 || dim_out == 0)
        throw ShapeMismatch("init_params: dims must be >= 1");
    FuserParams p;
    if (scheme == InitScheme::Identity) {
        if (dim_out != dim) throw ShapeMismatch("identity init requires dim_out == dim");
        p.queries = Matrix(n_queries, dim);
        p.frontal = {identity(dim), identity(dim), identity(dim)};
        p.lateral = {identity(dim), identity(dim), identity(dim)};
        p.proj = Matrix(2 * dim, dim);
        for (std::size_t j = 0; j < dim; ++j) {
            p.proj(j, j) = 0.5;
            p.proj(dim + j, j) = 0.5;
        }
        p.bias.assign(dim, 0.0);
        return p;
    }
    Rng rng(seed);
    const double stddev = 1.0 / std::sqrt(static_cast<double>(dim));
    auto fill = [&](Matrix& m) {
        for (std::size_t i = 0; i < m.rows(); ++i)
            for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) = rng.normal(0.0, stddev);
    };
    p.queries = Matrix(n_queries, dim);
    fill(p.queries);
    p.frontal = {Matrix(dim, dim), Matrix(dim, dim), Matrix(dim, dim)};
    p.lateral = {Matrix(dim, dim), Matrix(dim, dim), Matrix(dim, dim)};
    fill(p.frontal.w_q);
    fill(p.frontal.w_k);
    fill(p.frontal.w_v);
    fill(p.lateral.w_q);
    fill(p.lateral.w_k);
    fill(p.lateral.w_v);
    p.proj = Matrix(2 * dim, dim_out);
    fill(p.proj);
    p.bias.assign(dim_out, 0.0);
    return p;
}

// The lateral resampler may share the frontal one's projections; sharing is
// a copy, so training keeps them independent afterwards.
inline void tie_lateral_weights(FuserParams& p) { p.lateral = p.frontal; }

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    bool pass = false;
};

namespace detail {

inline double sum_squares(const Matrix& m) {
    double l = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) l += m(i, j) * m(i, j);
    return l;
}

inline Matrix two_times(const Matrix& m) {
    Matrix d = m;
    scale_inplace(d, 2.0);
    return d;
}

inline void check_finite_grad(const Matrix& g, const char* where) {
    if (!g.all_finite()) throw NumericalFailure(where);
}

struct GradProbe {
    double eps;
    GradCheckReport* report;

    // Restores each slot before the next evaluation; const params stay
    // unchanged on return.
    template <typename LossFn>
    void scalar(double* slot, double analytic, LossFn&& loss) {
        const double save = *slot;
        *slot = save + eps;
        const double up = loss();
        *slot = save - eps;
        const double down = loss();
        *slot = save;
        const double fd = (up - down) / (2.0 * eps);
        const double rel =
            std::abs(analytic - fd) / std::max({1.0, std::abs(analytic), std::abs(fd)});
        report->max_rel_err = std::max(report->max_rel_err, rel);
        ++report->checked;
    }

    template <typename LossFn>
    void matrix(const Matrix& m, const Matrix& g, LossFn&& loss) {
        check_finite_grad(g, "grad_check");
        Matrix& mm = const_cast<Matrix&>(m);
        for (std::size_t i = 0; i < mm.rows(); ++i)
            for (std::size_t j = 0; j < mm.cols(); ++j) scalar(&mm(i, j), g(i, j), loss);
    }
};

}  // namespace detail

// Central finite differences against the analytic backward pass through the
// probe loss L = sum of squares of the output. Checks every parameter and
// every input entry.
inline GradCheckReport grad_check_attend(const Matrix& queries, const Matrix& context,
                                         const AttentionParams& params, double eps = 1e-4,
                                         double tol = 1e-4) {
    AttendCache cache;
    Matrix out = cross_attend(queries, context, params, &cache);
    AttendGrads grads = cross_attend_backward(cache, params, detail::two_times(out));

    GradCheckReport report;
    detail::GradProbe probe{eps, &report};
    auto loss = [&] { return detail::sum_squares(cross_attend(queries, context, params)); };
    probe.matrix(params.w_q, grads.d_wq, loss);
    probe.matrix(params.w_k, grads.d_wk, loss);
    probe.matrix(params.w_v, grads.d_wv, loss);
    probe.matrix(queries, grads.d_queries, loss);
    probe.matrix(context, grads.d_context, loss);
    report.pass = report.max_rel_err <= tol;
    return report;
}

inline GradCheckReport grad_check_fuser(const FuserParams& params, const Matrix& h_frontal,
                                        const Matrix* h_lateral, double eps = 1e-4,
                                        double tol = 1e-4) {
    FuseCache cache;
    Matrix z = favr_fuse(h_frontal, h_lateral, params, &cache);
    FuseGrads grads = favr_fuse_backward(cache, params, detail::two_times(z));

    const bool has_lateral = h_lateral != nullptr && h_lateral->rows() > 0;
    GradCheckReport report;
    detail::GradProbe probe{eps, &report};
    auto loss = [&] { return detail::sum_squares(favr_fuse(h_frontal, h_lateral, params)); };

    probe.matrix(params.queries, grads.d_params.queries, loss);
    probe.matrix(params.frontal.w_q, grads.d_params.frontal.w_q, loss);
    probe.matrix(params.frontal.w_k, grads.d_params.frontal.w_k, loss);
    probe.matrix(params.frontal.w_v, grads.d_params.frontal.w_v, loss);
    if (has_lateral) {
        probe.matrix(params.lateral.w_q, grads.d_params.lateral.w_q, loss);
        probe.matrix(params.lateral.w_k, grads.d_params.lateral.w_k, loss);
        probe.matrix(params.lateral.w_v, grads.d_params.lateral.w_v, loss);
    }
    probe.matrix(params.proj, grads.d_params.proj, loss);
    for (std::size_t j = 0; j < params.bias.size(); ++j)
        probe.scalar(const_cast<double*>(&params.bias[j]), grads.d_params.bias[j], loss);
    probe.matrix(h_frontal, grads.d_h_frontal, loss);
    if (has_lateral) probe.matrix(*h_lateral, grads.d_h_lateral, loss);

    report.pass = report.max_rel_err <= tol;
    return report;
}

}  // namespace sure
