#include "flowsg/denoiser/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "flowsg/errors.hpp"

namespace flowsg::denoiser {

namespace numkit = flowsg::numkit;

namespace {

constexpr double kInitStd = 0.02;
constexpr double kMomentEps = 1e-6;   // inside the standardised-moment sqrt
constexpr double kDiagFill = -1e30;   // exact zero self-attention mass

void fill_normal(numkit::Array& a, numkit::RngStream& rng, double std_dev) {
    for (double& v : a.data) v = std_dev * rng.normal();
}

void add_linear(DenoiserParams& p, numkit::RngStream& rng, const std::string& prefix,
                std::size_t in, std::size_t out, bool zero) {
    numkit::Array w(in, out, 0.0);
    if (!zero) fill_normal(w, rng, kInitStd);
    p.tensors[prefix + ".w"] = std::move(w);
    p.tensors[prefix + ".b"] = numkit::Array(1, out, 0.0);
}

// AdaLN modulation: scale and shift projections from the conditioning vector,
// both zero so the block starts as plain layer norm.
void add_adaln(DenoiserParams& p, numkit::RngStream& rng, const std::string& prefix,
               std::size_t d_cond, std::size_t width) {
    add_linear(p, rng, prefix + ".scale", d_cond, width, true);
    add_linear(p, rng, prefix + ".shift", d_cond, width, true);
}

// Forward-pass helper: tensors bound onto one tape, looked up by name.
struct Bound {
    const std::map<std::string, int>* ids = nullptr;

    int at(const std::string& name) const {
        const auto it = ids->find(name);
        if (it == ids->end())
            throw std::logic_error("denoiser: missing parameter " + name);
        return it->second;
    }
    numkit::LinearParams lin(const std::string& prefix) const {
        return {at(prefix + ".w"), at(prefix + ".b")};
    }
    numkit::FilmParams film(const std::string& prefix) const {
        return {lin(prefix + ".scale"), lin(prefix + ".shift")};
    }
    numkit::AdalnParams ada(const std::string& prefix) const {
        return {film(prefix), 1e-5};
    }
};

std::string blk(int l, const std::string& rest) {
    return "den.blk" + std::to_string(l) + "." + rest;
}

void check_state(const DenoiserConfig& cfg, const transport::GraphState& g) {
    g.validate();
    if (g.n_nodes < 2) throw std::invalid_argument("denoiser: need at least two nodes");
    if (g.alpha.k_class != cfg.k_class || g.alpha.k_app != cfg.k_app ||
        g.alpha.k_rel != cfg.k_rel || g.alpha.m_obj != cfg.m_obj || g.alpha.m_rel != cfg.m_rel)
        throw std::invalid_argument("denoiser: state alphabets do not match the config");
    if (g.d_ctx != cfg.d_ctx)
        throw std::invalid_argument("denoiser: context width does not match the config");
    if (g.n_ctx == 0) throw ConfigError("denoiser: empty context");
}

}  // namespace

// Raw-moment algebra keeps every cross-node reduction a sorted sum.
NeighborMoments neighbor_moments(numkit::Tape& t, int v, std::size_t n) {
    const int mu = t.mean_others(v);

    // Deviations v_j - mu_i per ordered pair, averaged back to the source
    // node through a constant grouping matrix. Powered sums then run at the
    // spread scale; assembling central moments from raw ones instead cancels
    // catastrophically once the spread is small, and the standardising ratios
    // amplify the rubble into visible output noise.
    const auto pairs = transport::edge_pairs(n);
    std::vector<std::size_t> src(pairs.size()), dst(pairs.size());
    for (std::size_t r = 0; r < pairs.size(); ++r) {
        src[r] = static_cast<std::size_t>(pairs[r].first);
        dst[r] = static_cast<std::size_t>(pairs[r].second);
    }
    const int d = t.sub(t.gather_rows(v, dst), t.gather_rows(mu, src));
    numkit::Array g(n, pairs.size(), 0.0);
    for (std::size_t r = 0; r < pairs.size(); ++r)
        g.at(src[r], r) = 1.0 / static_cast<double>(n - 1);
    const int group = t.input(std::move(g));

    const int d2 = t.mul(d, d);
    const int var = t.matmul_sorted(group, d2);
    const int c3 = t.matmul_sorted(group, t.mul(d2, d));
    const int c4 = t.matmul_sorted(group, t.mul(d2, d2));
    const int sig = t.sqrt_op(t.add_const(var, kMomentEps));
    const int sig2 = t.mul(sig, sig);

    // Standardised moments are undefined below three neighbors.
    const double gate = (n >= 4) ? 1.0 : 0.0;
    const int skew = t.scale(t.div(c3, t.mul(sig2, sig)), gate);
    const int kurt = t.scale(t.div(c4, t.mul(sig2, sig2)), gate);
    return {mu, var, skew, kurt};
}

namespace {

int maybe_dropout(numkit::Tape& t, int x, double rate, numkit::RngStream* rng) {
    if (rate <= 0.0 || rng == nullptr) return x;
    const numkit::Array& v = t.value(x);
    numkit::Array mask(v.shape, 0.0);
    const double keep = 1.0 - rate;
    for (double& m : mask.data) m = rng->uniform() >= rate ? 1.0 / keep : 0.0;
    return t.mul(x, t.input(std::move(mask)));
}

}  // namespace

void DenoiserConfig::validate() const {
    if (l_blocks < 1) throw ConfigError("denoiser: l_blocks must be positive");
    if (d_model < 4 || d_model % 4 != 0)
        throw ConfigError("denoiser: d_model must be a positive multiple of 4");
    if (heads < 1 || d_model % heads != 0)
        throw ConfigError("denoiser: heads must divide d_model");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("denoiser: dropout outside [0, 1)");
    if (k_class < 2 || k_app < 1 || k_rel < 1 || m_obj < 1 || m_rel < 1)
        throw ConfigError("denoiser: alphabet sizes must be positive");
    if (time_dim < 2 || time_dim % 2 != 0)
        throw ConfigError("denoiser: time_dim must be positive and even");
    if (w_app < 1 || w_rel < 1) throw ConfigError("denoiser: embedding widths must be positive");
    if (d_ctx == 0) throw ConfigError("denoiser: d_ctx must be positive");
}

std::vector<double> time_code(double t, int dim) {
    if (dim < 2 || dim % 2 != 0)
        throw std::invalid_argument("time_code: dim must be positive and even");
    const int half = dim / 2;
    std::vector<double> out(static_cast<std::size_t>(dim));
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                     static_cast<double>(half));
        const double arg = 1000.0 * t * freq;
        out[static_cast<std::size_t>(i)] = std::cos(arg);
        out[static_cast<std::size_t>(half + i)] = std::sin(arg);
    }
    return out;
}

DenoiserParams init_params(const DenoiserConfig& cfg, numkit::RngStream& rng,
                           const tokenizer::Codebook* app_cb, const tokenizer::Codebook* rel_cb) {
    cfg.validate();
    DenoiserParams p;
    p.cfg = cfg;
    const std::size_t d = static_cast<std::size_t>(cfg.d_model);
    const std::size_t T = static_cast<std::size_t>(cfg.time_dim);
    const std::size_t wc = d / 4;
    const std::size_t wb = d / 4;
    const std::size_t wa = static_cast<std::size_t>(cfg.w_app);
    const std::size_t wr = static_cast<std::size_t>(cfg.w_rel);

    add_linear(p, rng, "den.time.fc1", T, d, false);
    add_linear(p, rng, "den.time.fc2", d, d, false);

    numkit::Array cls_emb(static_cast<std::size_t>(cfg.k_class), wc);
    fill_normal(cls_emb, rng, kInitStd);
    p.tensors["den.emb.class.w"] = std::move(cls_emb);

    const auto token_table = [&](const tokenizer::Codebook* cb, int k, std::size_t w, int m,
                                 const std::string& what) {
        numkit::Array tab(static_cast<std::size_t>(k) + 1, w);
        fill_normal(tab, rng, kInitStd);
        if (cb != nullptr) {
            if (cb->k != static_cast<std::size_t>(k) ||
                cb->d != w * static_cast<std::size_t>(what == "app" ? cfg.m_obj : cfg.m_rel))
                throw ConfigError("denoiser: " + what + " codebook shape does not match config");
            const std::size_t col0 = static_cast<std::size_t>(m) * w;
            for (std::size_t r = 0; r < cb->k; ++r)
                for (std::size_t c = 0; c < w; ++c)
                    tab.data[r * w + c] = cb->entries.data[r * cb->d + col0 + c];
        }
        return tab;
    };
    for (int m = 0; m < cfg.m_obj; ++m)
        p.tensors["den.emb.app" + std::to_string(m) + ".w"] =
            token_table(app_cb, cfg.k_app, wa, m, "app");
    for (int m = 0; m < cfg.m_rel; ++m)
        p.tensors["den.emb.rel" + std::to_string(m) + ".w"] =
            token_table(rel_cb, cfg.k_rel, wr, m, "rel");

    add_linear(p, rng, "den.emb.box.fc1", 4, d, false);
    add_linear(p, rng, "den.emb.box.fc2", d, wb, false);
    add_linear(p, rng, "den.emb.node", wc + wa + wb, d, false);
    add_linear(p, rng, "den.emb.edge", wr, d, false);
    add_linear(p, rng, "den.emb.ctx", cfg.d_ctx, d, false);

    for (int l = 0; l < cfg.l_blocks; ++l) {
        add_adaln(p, rng, blk(l, "ca.ada"), d, d);
        add_linear(p, rng, blk(l, "ca.q"), d, d, false);
        add_linear(p, rng, blk(l, "ca.k"), d, d, false);
        add_linear(p, rng, blk(l, "ca.v"), d, d, false);
        add_linear(p, rng, blk(l, "ca.out"), d, d, true);

        add_adaln(p, rng, blk(l, "sa.ada"), d, d);
        add_linear(p, rng, blk(l, "sa.q"), d, d, false);
        add_linear(p, rng, blk(l, "sa.k"), d, d, false);
        add_linear(p, rng, blk(l, "sa.v"), d, d, false);
        add_linear(p, rng, blk(l, "sa.out"), d, d, true);
        add_adaln(p, rng, blk(l, "sa.film"), d, d);  // FiLM of edge states by the time code
        add_linear(p, rng, blk(l, "sa.bias"), d, static_cast<std::size_t>(cfg.heads), false);

        add_adaln(p, rng, blk(l, "fma.ada"), d, d);
        add_linear(p, rng, blk(l, "fma.v"), d, d, false);
        add_linear(p, rng, blk(l, "fma.gate"), T + 1 + d, 4, true);
        add_linear(p, rng, blk(l, "fma.mlp.fc1"), d, 4 * d, false);
        add_linear(p, rng, blk(l, "fma.mlp.fc2"), 4 * d, d, true);

        add_adaln(p, rng, blk(l, "edge.ada"), d, 4 * d + T);
        add_linear(p, rng, blk(l, "edge.mlp.fc1"), 4 * d + T, d, false);
        add_linear(p, rng, blk(l, "edge.mlp.fc2"), d, d, true);
    }

    add_adaln(p, rng, "den.head.node_ada", d, d);
    add_linear(p, rng, "den.head.box", d, 4, true);
    add_linear(p, rng, "den.head.cls", d, static_cast<std::size_t>(cfg.k_class), true);
    for (int m = 0; m < cfg.m_obj; ++m)
        add_linear(p, rng, "den.head.app" + std::to_string(m), d,
                   static_cast<std::size_t>(cfg.k_app) + 1, true);
    add_adaln(p, rng, "den.head.rel_ada", d, d);
    for (int m = 0; m < cfg.m_rel; ++m)
        add_linear(p, rng, "den.head.rel" + std::to_string(m), d,
                   static_cast<std::size_t>(cfg.k_rel) + 1, true);
    return p;
}

ForwardIds forward(numkit::Tape& t, const DenoiserParams& p, const transport::GraphState& g,
                   double time, numkit::RngStream* dropout_rng) {
    const DenoiserConfig& cfg = p.cfg;
    cfg.validate();
    check_state(cfg, g);
    if (!(time >= 0.0 && time <= 1.0))
        throw std::domain_error("denoiser: time outside [0, 1]");

    const std::size_t n = g.n_nodes;
    const auto pairs = transport::edge_pairs(n);
    const std::size_t n_edges = pairs.size();
    const std::size_t d = static_cast<std::size_t>(cfg.d_model);
    const std::size_t dh = d / static_cast<std::size_t>(cfg.heads);

    ForwardIds out;
    // Bind tensors in name order so node creation is reproducible.
    for (const auto& [name, arr] : p.tensors) out.params[name] = t.param(arr);
    Bound bd{&out.params};

    // Conditioning: sinusoidal time code through a two-layer MLP.
    numkit::Array phi_arr(1, static_cast<std::size_t>(cfg.time_dim));
    phi_arr.data = time_code(time, cfg.time_dim);
    const int phi = t.input(std::move(phi_arr));
    const int cond = numkit::mlp(t, phi, {bd.lin("den.time.fc1"), bd.lin("den.time.fc2")});

    // Node embedding: class row, summed slot-token rows, box encoder.
    std::vector<std::size_t> cls_idx(n);
    for (std::size_t i = 0; i < n; ++i) cls_idx[i] = static_cast<std::size_t>(g.classes[i]);
    const int cls_emb = t.gather_rows(bd.at("den.emb.class.w"), cls_idx);

    int app_emb = -1;
    for (int m = 0; m < cfg.m_obj; ++m) {
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i)
            idx[i] = static_cast<std::size_t>(
                g.app_tokens[i * static_cast<std::size_t>(cfg.m_obj) +
                             static_cast<std::size_t>(m)]);
        const int rows = t.gather_rows(bd.at("den.emb.app" + std::to_string(m) + ".w"), idx);
        app_emb = m == 0 ? rows : t.add(app_emb, rows);
    }

    numkit::Array box_arr(n, 4);
    box_arr.data = g.boxes;
    const int boxes = t.input(std::move(box_arr));
    const int box_enc =
        numkit::mlp(t, boxes, {bd.lin("den.emb.box.fc1"), bd.lin("den.emb.box.fc2")});

    int h = numkit::linear(t, t.concat_cols({cls_emb, app_emb, box_enc}), bd.lin("den.emb.node"));

    // Edge embedding: summed relation slot-token rows.
    int rel_emb = -1;
    for (int m = 0; m < cfg.m_rel; ++m) {
        std::vector<std::size_t> idx(n_edges);
        for (std::size_t e = 0; e < n_edges; ++e)
            idx[e] = static_cast<std::size_t>(
                g.rel_tokens[e * static_cast<std::size_t>(cfg.m_rel) +
                             static_cast<std::size_t>(m)]);
        const int rows = t.gather_rows(bd.at("den.emb.rel" + std::to_string(m) + ".w"), idx);
        rel_emb = m == 0 ? rows : t.add(rel_emb, rows);
    }
    int e = numkit::linear(t, rel_emb, bd.lin("den.emb.edge"));

    numkit::Array ctx_arr(g.n_ctx, g.d_ctx);
    ctx_arr.data = g.context;
    const int ctx = numkit::linear(t, t.input(std::move(ctx_arr)), bd.lin("den.emb.ctx"));

    std::vector<std::size_t> src(n_edges), dst(n_edges);
    for (std::size_t ei = 0; ei < n_edges; ++ei) {
        src[ei] = static_cast<std::size_t>(pairs[ei].first);
        dst[ei] = static_cast<std::size_t>(pairs[ei].second);
    }

    for (int l = 0; l < cfg.l_blocks; ++l) {
        // Cross-attention from nodes to the context tokens.
        {
            const int x = numkit::adaln(t, h, cond, bd.ada(blk(l, "ca.ada")));
            const int q = numkit::linear(t, x, bd.lin(blk(l, "ca.q")));
            const int k = numkit::linear(t, ctx, bd.lin(blk(l, "ca.k")));
            const int v = numkit::linear(t, ctx, bd.lin(blk(l, "ca.v")));
            std::vector<int> heads_out, attn_ids;
            for (int hd = 0; hd < cfg.heads; ++hd) {
                const std::size_t c0 = static_cast<std::size_t>(hd) * dh;
                const int qh = t.slice_cols(q, c0, c0 + dh);
                const int kh = t.slice_cols(k, c0, c0 + dh);
                const int vh = t.slice_cols(v, c0, c0 + dh);
                const int attn = t.softmax_rows(
                    t.scale(t.matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh))));
                attn_ids.push_back(attn);
                heads_out.push_back(t.matmul_sorted(attn, vh));
            }
            out.cross_attn.push_back(std::move(attn_ids));
            const int o = numkit::linear(t, t.concat_cols(heads_out), bd.lin(blk(l, "ca.out")));
            h = t.add(h, maybe_dropout(t, o, cfg.dropout, dropout_rng));
        }

        // Relation-modulated self-attention: per-head bias from the
        // time-FiLMed edge state, exact zero mass on the diagonal.
        {
            const int x = numkit::adaln(t, h, cond, bd.ada(blk(l, "sa.ada")));
            const int q = numkit::linear(t, x, bd.lin(blk(l, "sa.q")));
            const int k = numkit::linear(t, x, bd.lin(blk(l, "sa.k")));
            const int v = numkit::linear(t, x, bd.lin(blk(l, "sa.v")));
            const int fe = numkit::film(t, e, cond, bd.film(blk(l, "sa.film")));
            const int bias = numkit::linear(t, fe, bd.lin(blk(l, "sa.bias")));
            std::vector<int> heads_out, attn_ids;
            for (int hd = 0; hd < cfg.heads; ++hd) {
                const std::size_t c0 = static_cast<std::size_t>(hd) * dh;
                const int qh = t.slice_cols(q, c0, c0 + dh);
                const int kh = t.slice_cols(k, c0, c0 + dh);
                const int vh = t.slice_cols(v, c0, c0 + dh);
                const int b = t.edges_to_matrix(
                    t.slice_cols(bias, static_cast<std::size_t>(hd),
                                 static_cast<std::size_t>(hd) + 1),
                    pairs, n, kDiagFill);
                const int logits = t.add(
                    t.scale(t.matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh))), b);
                const int attn = t.softmax_rows(logits);
                attn_ids.push_back(attn);
                heads_out.push_back(t.matmul_sorted(attn, vh));
            }
            out.self_attn.push_back(std::move(attn_ids));
            const int o = numkit::linear(t, t.concat_cols(heads_out), bd.lin(blk(l, "sa.out")));
            h = t.add(h, maybe_dropout(t, o, cfg.dropout, dropout_rng));
        }

        // Flow-conditioned message aggregation over neighbor value moments.
        int msg = -1;
        if (cfg.use_fma) {
            const int v = numkit::linear(t, h, bd.lin(blk(l, "fma.v")));
            const NeighborMoments mom = neighbor_moments(t, v, n);

            const int phi_rows = t.broadcast_row(phi, n);
            numkit::Array deg_col(n, 1, std::log1p(static_cast<double>(n - 1)));
            const int deg = t.input(std::move(deg_col));
            const int rbar = t.edge_mean_per_node(e, pairs, n);
            const int gate = t.softmax_rows(numkit::linear(
                t, t.concat_cols({phi_rows, deg, rbar}), bd.lin(blk(l, "fma.gate"))));
            out.fma_gate.push_back(gate);

            const int banked[4] = {mom.mean, mom.var, mom.skew, mom.kurt};
            for (int b = 0; b < 4; ++b) {
                const int gb = t.slice_cols(gate, static_cast<std::size_t>(b),
                                            static_cast<std::size_t>(b) + 1);
                const int term = t.mul_colvec(banked[b], gb);
                msg = b == 0 ? term : t.add(msg, term);
            }
            const int upd = numkit::mlp(t, numkit::adaln(t, msg, cond, bd.ada(blk(l, "fma.ada"))),
                                        {bd.lin(blk(l, "fma.mlp.fc1")),
                                         bd.lin(blk(l, "fma.mlp.fc2"))});
            h = t.add(h, maybe_dropout(t, upd, cfg.dropout, dropout_rng));
        } else {
            msg = t.input(numkit::Array(n, d, 0.0));
        }

        // Edge refinement from both endpoints and their messages.
        {
            const int hi = t.gather_rows(h, src);
            const int hj = t.gather_rows(h, dst);
            const int mi = t.gather_rows(msg, src);
            const int mj = t.gather_rows(msg, dst);
            const int phi_e = t.broadcast_row(phi, n_edges);
            const int z = t.concat_cols({hi, hj, mi, mj, phi_e});
            const int upd = numkit::mlp(t, numkit::adaln(t, z, cond, bd.ada(blk(l, "edge.ada"))),
                                        {bd.lin(blk(l, "edge.mlp.fc1")),
                                         bd.lin(blk(l, "edge.mlp.fc2"))});
            e = t.add(e, maybe_dropout(t, upd, cfg.dropout, dropout_rng));
        }
    }

    const int xn = numkit::adaln(t, h, cond, bd.ada("den.head.node_ada"));
    out.v_box = numkit::linear(t, xn, bd.lin("den.head.box"));
    out.class_logits = numkit::linear(t, xn, bd.lin("den.head.cls"));
    for (int m = 0; m < cfg.m_obj; ++m)
        out.app_logits.push_back(
            numkit::linear(t, xn, bd.lin("den.head.app" + std::to_string(m))));

    const int xe = numkit::adaln(t, e, cond, bd.ada("den.head.rel_ada"));
    for (int m = 0; m < cfg.m_rel; ++m)
        out.rel_logits.push_back(
            numkit::linear(t, xe, bd.lin("den.head.rel" + std::to_string(m))));
    return out;
}

namespace {

void softmax_into(const numkit::Array& logits, std::size_t row, double* dst) {
    const std::size_t kc = logits.cols();
    const double* src = logits.data.data() + row * kc;
    double mx = src[0];
    for (std::size_t c = 1; c < kc; ++c) mx = std::max(mx, src[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < kc; ++c) {
        dst[c] = std::exp(src[c] - mx);
        sum += dst[c];
    }
    for (std::size_t c = 0; c < kc; ++c) dst[c] /= sum;
}

}  // namespace

transport::DenoiserEval eval(const DenoiserParams& p, const transport::GraphState& g,
                             double time) {
    numkit::Tape t;
    const ForwardIds ids = forward(t, p, g, time);
    const std::size_t n = g.n_nodes;
    const std::size_t n_edges = transport::edge_count(n);
    const std::size_t m_obj = static_cast<std::size_t>(p.cfg.m_obj);
    const std::size_t m_rel = static_cast<std::size_t>(p.cfg.m_rel);
    const std::size_t ka1 = static_cast<std::size_t>(p.cfg.k_app) + 1;
    const std::size_t kr1 = static_cast<std::size_t>(p.cfg.k_rel) + 1;
    const std::size_t kc = static_cast<std::size_t>(p.cfg.k_class);

    transport::DenoiserEval ev;
    ev.box_velocity = t.value(ids.v_box).data;

    ev.class_post.resize(n * kc);
    const numkit::Array& cls = t.value(ids.class_logits);
    for (std::size_t i = 0; i < n; ++i) softmax_into(cls, i, ev.class_post.data() + i * kc);

    ev.app_post.resize(n * m_obj * ka1);
    for (std::size_t m = 0; m < m_obj; ++m) {
        const numkit::Array& lg = t.value(ids.app_logits[m]);
        for (std::size_t i = 0; i < n; ++i)
            softmax_into(lg, i, ev.app_post.data() + (i * m_obj + m) * ka1);
    }

    ev.rel_post.resize(n_edges * m_rel * kr1);
    for (std::size_t m = 0; m < m_rel; ++m) {
        const numkit::Array& lg = t.value(ids.rel_logits[m]);
        for (std::size_t e = 0; e < n_edges; ++e)
            softmax_into(lg, e, ev.rel_post.data() + (e * m_rel + m) * kr1);
    }
    return ev;
}

transport::DenoiserFn as_denoiser_fn(const DenoiserParams& p) {
    return [&p](const transport::GraphState& g, double time) { return eval(p, g, time); };
}

}  // namespace flowsg::denoiser
