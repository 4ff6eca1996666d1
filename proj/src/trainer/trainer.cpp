#include "flowsg/trainer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "flowsg/errors.hpp"
#include "flowsg/flowpaths/paths.hpp"

namespace flowsg::trainer {

namespace {

constexpr std::uint64_t kTrainStream = 0x7261a11;
constexpr std::uint64_t kValStream = 0x7261a12;
constexpr std::uint64_t kDropStream = 0x7261a13;

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0')
        throw ConfigError("config: bad number for " + key + ": '" + v + "'");
    return x;
}

long long parse_int(const std::string& key, const std::string& v) {
    const double x = parse_double(key, v);
    if (x != std::floor(x)) throw ConfigError("config: " + key + " must be an integer");
    return static_cast<long long>(x);
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config: " + key + " wants true/false, got '" + v + "'");
}

}  // namespace

void TrainConfig::validate() const {
    if (!(lambda >= 0.0)) throw ConfigError("config: lambda must be >= 0");
    if (!(lr >= 0.0)) throw ConfigError("config: lr must be >= 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("config: weight_decay must be >= 0");
    if (batch < 1) throw ConfigError("config: batch must be >= 1");
    if (iterations < 1) throw ConfigError("config: iterations must be >= 1");
    if (!(edge_only_prob >= 0.0 && edge_only_prob <= 1.0))
        throw ConfigError("config: edge_only_prob must lie in [0, 1]");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("config: beta1 must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("config: beta2 must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("config: eps must be > 0");
    if (warmup < 0) throw ConfigError("config: warmup must be >= 0");
    if (val_every < 1) throw ConfigError("config: val_every must be >= 1");
    if (val_batches < 1) throw ConfigError("config: val_batches must be >= 1");
    flowpaths::Scheduler::parse(schedule);
}

TrainConfig config_from_map(const std::map<std::string, std::string>& kv, TrainConfig base) {
    for (const auto& [key, value] : kv) {
        if (key == "lambda")
            base.lambda = parse_double(key, value);
        else if (key == "lr")
            base.lr = parse_double(key, value);
        else if (key == "weight_decay")
            base.weight_decay = parse_double(key, value);
        else if (key == "batch")
            base.batch = static_cast<int>(parse_int(key, value));
        else if (key == "iterations")
            base.iterations = static_cast<int>(parse_int(key, value));
        else if (key == "edge_only_prob")
            base.edge_only_prob = parse_double(key, value);
        else if (key == "beta1")
            base.beta1 = parse_double(key, value);
        else if (key == "beta2")
            base.beta2 = parse_double(key, value);
        else if (key == "eps")
            base.eps = parse_double(key, value);
        else if (key == "seed")
            base.seed = static_cast<std::uint64_t>(parse_int(key, value));
        else if (key == "warmup")
            base.warmup = static_cast<int>(parse_int(key, value));
        else if (key == "transport_classes")
            base.transport_classes = parse_bool(key, value);
        else if (key == "schedule")
            base.schedule = value;
        else if (key == "val_every")
            base.val_every = static_cast<int>(parse_int(key, value));
        else if (key == "val_batches")
            base.val_batches = static_cast<int>(parse_int(key, value));
        else
            throw ConfigError("config: unknown key '" + key + "'");
    }
    base.validate();
    return base;
}

TrainConfig config_from_file(const std::string& path, TrainConfig base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: " + path + ":" + std::to_string(line_no) +
                              " is not key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError("config: " + path + ":" + std::to_string(line_no) +
                              " has an empty key or value");
        if (!kv.emplace(key, value).second)
            throw ConfigError("config: duplicate key '" + key + "' in " + path);
    }
    return config_from_map(kv, base);
}

void save_config(const std::string& path, const TrainConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw ConfigError("config: cannot write " + path);
    char buf[64];
    auto put = [&](const char* key, double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        out << key << " = " << buf << "\n";
    };
    put("lambda", cfg.lambda);
    put("lr", cfg.lr);
    put("weight_decay", cfg.weight_decay);
    out << "batch = " << cfg.batch << "\n";
    out << "iterations = " << cfg.iterations << "\n";
    put("edge_only_prob", cfg.edge_only_prob);
    put("beta1", cfg.beta1);
    put("beta2", cfg.beta2);
    put("eps", cfg.eps);
    out << "seed = " << cfg.seed << "\n";
    out << "warmup = " << cfg.warmup << "\n";
    out << "transport_classes = " << (cfg.transport_classes ? "true" : "false") << "\n";
    out << "schedule = " << cfg.schedule << "\n";
    out << "val_every = " << cfg.val_every << "\n";
    out << "val_batches = " << cfg.val_batches << "\n";
}

Batch make_batch(const std::vector<transport::TargetGraph>& dataset, const TrainConfig& cfg,
                 int step, const numkit::RngStream& base) {
    if (dataset.empty()) throw DataError("make_batch: empty dataset");
    const auto sched = flowpaths::Scheduler::parse(cfg.schedule);
    Batch b;
    b.examples.reserve(static_cast<std::size_t>(cfg.batch));
    for (int k = 0; k < cfg.batch; ++k) {
        const std::uint64_t key =
            static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(cfg.batch) +
            static_cast<std::uint64_t>(k);
        numkit::RngStream rng = base.substream(key);
        TrainExample ex;
        ex.stream_key = key;
        ex.target_index = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(dataset.size())));
        ex.t = rng.uniform();
        ex.edge_only = rng.uniform() < cfg.edge_only_prob;
        const auto& target = dataset[ex.target_index];
        auto corr = flowpaths::sample_corruption(target, sched, ex.t, rng, cfg.transport_classes);
        ex.state = std::move(corr.state);
        ex.u_star = std::move(corr.box_velocity);
        if (ex.edge_only) {
            ex.state.boxes = target.boxes;
            ex.state.app_tokens = target.app_tokens;
            if (cfg.transport_classes) ex.state.classes = target.gt_classes;
        }
        b.examples.push_back(std::move(ex));
    }
    return b;
}

int cfm_loss(numkit::Tape& tape, int v_pred, const std::vector<double>& u_star,
             const std::vector<double>& mask) {
    const numkit::Array& v = tape.value(v_pred);
    if (v.numel() != u_star.size() || v.numel() != mask.size())
        throw std::invalid_argument("cfm_loss: shape mismatch");
    std::size_t live = 0;
    for (double m : mask) {
        if (m != 0.0 && m != 1.0) throw std::invalid_argument("cfm_loss: mask entries must be 0 or 1");
        if (m == 1.0) ++live;
    }
    numkit::Array u = v;
    u.data = u_star;
    numkit::Array mk = v;
    mk.data = mask;
    const int diff = tape.sub(v_pred, tape.input(std::move(u)));
    const int sq = tape.mul(diff, diff);
    const int masked = tape.mul(sq, tape.input(std::move(mk)));
    return tape.scale(tape.sum_all(masked), live == 0 ? 0.0 : 1.0 / static_cast<double>(live));
}

int dfm_loss(numkit::Tape& tape, const std::vector<int>& app_logit_ids,
             const std::vector<int>& rel_logit_ids, const std::vector<int>& app_targets,
             const std::vector<int>& rel_targets, const transport::Alphabets& alpha,
             bool include_app) {
    const std::size_t m_obj = static_cast<std::size_t>(alpha.m_obj);
    const std::size_t m_rel = static_cast<std::size_t>(alpha.m_rel);
    if (app_logit_ids.size() != m_obj || rel_logit_ids.size() != m_rel)
        throw std::invalid_argument("dfm_loss: logit head count does not match the alphabets");
    if (app_targets.size() % m_obj != 0 || rel_targets.size() % m_rel != 0)
        throw std::invalid_argument("dfm_loss: target lengths are not slot-aligned");
    const std::size_t n = app_targets.size() / m_obj;
    const std::size_t e = rel_targets.size() / m_rel;

    auto check_targets = [](const std::vector<int>& ts, int k_real, const char* what) {
        for (int t : ts) {
            if (t == k_real)
                throw std::invalid_argument(std::string("dfm_loss: ") + what +
                                            " target is the mask token");
            if (t < 0 || t > k_real)
                throw std::invalid_argument(std::string("dfm_loss: ") + what +
                                            " target out of range");
        }
    };
    check_targets(app_targets, alpha.k_app, "appearance");
    check_targets(rel_targets, alpha.k_rel, "relation");

    double slots = static_cast<double>(e * m_rel);
    if (include_app) slots += static_cast<double>(n * m_obj);
    int acc = -1;
    auto add_term = [&](int logits, const std::vector<int>& flat, std::size_t rows,
                        std::size_t stride, std::size_t slot) {
        if (tape.value(logits).rows() != rows)
            throw std::invalid_argument("dfm_loss: logit row count mismatch");
        std::vector<std::size_t> ts(rows);
        for (std::size_t i = 0; i < rows; ++i)
            ts[i] = static_cast<std::size_t>(flat[i * stride + slot]);
        const int summed =
            tape.scale(tape.cross_entropy(logits, std::move(ts)), static_cast<double>(rows));
        acc = acc < 0 ? summed : tape.add(acc, summed);
    };
    if (include_app)
        for (std::size_t m = 0; m < m_obj; ++m) add_term(app_logit_ids[m], app_targets, n, m_obj, m);
    for (std::size_t m = 0; m < m_rel; ++m) add_term(rel_logit_ids[m], rel_targets, e, m_rel, m);
    if (acc < 0) return tape.input(numkit::Array::scalar(0.0));
    return tape.scale(acc, 1.0 / slots);
}

double total_loss(double cfm, double dfm, double lambda) {
    if (!(lambda >= 0.0)) throw std::invalid_argument("total_loss: lambda must be >= 0");
    return cfm + lambda * dfm;
}

LossIds example_loss(numkit::Tape& tape, const denoiser::ForwardIds& fwd, const TrainExample& ex,
                     const transport::TargetGraph& target, const TrainConfig& cfg) {
    LossIds ids;
    const std::vector<double> mask(ex.u_star.size(), ex.edge_only ? 0.0 : 1.0);
    ids.cfm = cfm_loss(tape, fwd.v_box, ex.u_star, mask);
    ids.dfm = dfm_loss(tape, fwd.app_logits, fwd.rel_logits, target.app_tokens, target.rel_tokens,
                       target.alpha, !ex.edge_only);
    ids.total = tape.add(ids.cfm, tape.scale(ids.dfm, cfg.lambda));
    if (cfg.transport_classes && !ex.edge_only) {
        std::vector<std::size_t> cls(target.gt_classes.size());
        for (std::size_t i = 0; i < cls.size(); ++i)
            cls[i] = static_cast<std::size_t>(target.gt_classes[i]);
        ids.cls = tape.cross_entropy(fwd.class_logits, std::move(cls));
        ids.total = tape.add(ids.total, tape.scale(ids.cls, cfg.lambda));
    }
    return ids;
}

AdamW::AdamW(double beta1, double beta2, double eps, double weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw std::invalid_argument("AdamW: betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw std::invalid_argument("AdamW: eps must be > 0");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("AdamW: weight_decay must be >= 0");
}

void AdamW::step(numkit::TensorMap& params, const numkit::TensorMap& grads, double lr) {
    if (!(lr >= 0.0)) throw std::invalid_argument("AdamW: lr must be >= 0");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& [name, p] : params) {
        const auto git = grads.find(name);
        if (git == grads.end()) throw std::invalid_argument("AdamW: missing gradient for " + name);
        const numkit::Array& g = git->second;
        if (!p.same_shape(g)) throw std::invalid_argument("AdamW: gradient shape mismatch for " + name);
        numkit::Array& m = m_.try_emplace(name, p.shape, 0.0).first->second;
        numkit::Array& v = v_.try_emplace(name, p.shape, 0.0).first->second;
        const double shrink = 1.0 - lr * weight_decay_;
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            m.data[i] = beta1_ * m.data[i] + (1.0 - beta1_) * g.data[i];
            v.data[i] = beta2_ * v.data[i] + (1.0 - beta2_) * g.data[i] * g.data[i];
            p.data[i] *= shrink;
            p.data[i] -= lr * (m.data[i] / bc1) / (std::sqrt(v.data[i] / bc2) + eps_);
        }
    }
}

SlotMarginals slot_marginals_from_targets(const std::vector<transport::TargetGraph>& dataset) {
    if (dataset.empty()) throw DataError("slot_marginals_from_targets: empty dataset");
    const auto& a = dataset.front().alpha;
    SlotMarginals out;
    out.app.assign(static_cast<std::size_t>(a.m_obj),
                   std::vector<double>(static_cast<std::size_t>(a.k_app), 0.0));
    out.rel.assign(static_cast<std::size_t>(a.m_rel),
                   std::vector<double>(static_cast<std::size_t>(a.k_rel), 0.0));
    auto tally = [](std::vector<std::vector<double>>& pmf, const std::vector<int>& tokens,
                    int k_real, const char* what) {
        const std::size_t slots = pmf.size();
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            const int tk = tokens[i];
            if (tk < 0 || tk >= k_real)
                throw DataError(std::string("slot_marginals_from_targets: ") + what +
                                " token out of range");
            pmf[i % slots][static_cast<std::size_t>(tk)] += 1.0;
        }
    };
    for (const auto& tg : dataset) {
        if (!(tg.alpha.k_app == a.k_app && tg.alpha.k_rel == a.k_rel && tg.alpha.m_obj == a.m_obj &&
              tg.alpha.m_rel == a.m_rel))
            throw DataError("slot_marginals_from_targets: mixed alphabets");
        tally(out.app, tg.app_tokens, a.k_app, "appearance");
        tally(out.rel, tg.rel_tokens, a.k_rel, "relation");
    }
    for (auto* table : {&out.app, &out.rel})
        for (auto& row : *table) {
            double total = 0.0;
            for (double c : row) total += c;
            if (total <= 0.0) throw DataError("slot_marginals_from_targets: empty slot");
            for (double& c : row) c /= total;
        }
    return out;
}

namespace {

numkit::Array pack_rows(const std::vector<std::vector<double>>& rows) {
    numkit::Array a(rows.size(), rows.front().size(), 0.0);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j) a.at(i, j) = rows[i][j];
    return a;
}

std::vector<std::vector<double>> unpack_rows(const numkit::Array& a) {
    std::vector<std::vector<double>> rows(a.rows(), std::vector<double>(a.cols(), 0.0));
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) rows[i][j] = a.at(i, j);
    return rows;
}

}  // namespace

void save_bundle(const std::string& path, const ModelBundle& bundle) {
    const auto& c = bundle.params.cfg;
    numkit::TensorMap out = bundle.params.tensors;
    numkit::Array meta(1, 14, 0.0);
    meta.data = {static_cast<double>(c.l_blocks), static_cast<double>(c.heads),
                 static_cast<double>(c.d_model),  c.dropout,
                 static_cast<double>(c.k_class),  static_cast<double>(c.k_app),
                 static_cast<double>(c.k_rel),    static_cast<double>(c.m_obj),
                 static_cast<double>(c.m_rel),    static_cast<double>(c.time_dim),
                 static_cast<double>(c.w_app),    static_cast<double>(c.w_rel),
                 static_cast<double>(c.d_ctx),    c.use_fma ? 1.0 : 0.0};
    out.emplace("meta.denoiser", std::move(meta));
    out.emplace("meta.schedule",
                numkit::Array::scalar(bundle.sched.kind == flowpaths::SchedulerKind::linear ? 0.0
                                                                                           : 1.0));
    out.emplace("init.app_pmf", pack_rows(bundle.marginals.app));
    out.emplace("init.rel_pmf", pack_rows(bundle.marginals.rel));
    numkit::save_checkpoint(path, out);
}

ModelBundle load_bundle(const std::string& path) {
    numkit::TensorMap all = numkit::load_checkpoint(path);
    auto take = [&](const char* key) -> numkit::Array {
        auto it = all.find(key);
        if (it == all.end()) throw DataError(std::string("bundle: missing tensor ") + key);
        return it->second;
    };
    const numkit::Array meta = take("meta.denoiser");
    if (meta.numel() != 14) throw DataError("bundle: meta.denoiser has the wrong size");
    ModelBundle b;
    auto as_int = [&](std::size_t i) { return static_cast<int>(std::llround(meta.data[i])); };
    denoiser::DenoiserConfig& c = b.params.cfg;
    c.l_blocks = as_int(0);
    c.heads = as_int(1);
    c.d_model = as_int(2);
    c.dropout = meta.data[3];
    c.k_class = as_int(4);
    c.k_app = as_int(5);
    c.k_rel = as_int(6);
    c.m_obj = as_int(7);
    c.m_rel = as_int(8);
    c.time_dim = as_int(9);
    c.w_app = as_int(10);
    c.w_rel = as_int(11);
    c.d_ctx = as_int(12);
    c.use_fma = meta.data[13] != 0.0;
    c.validate();
    b.sched.kind = take("meta.schedule").data[0] == 0.0 ? flowpaths::SchedulerKind::linear
                                                        : flowpaths::SchedulerKind::cosine;
    b.marginals.app = unpack_rows(take("init.app_pmf"));
    b.marginals.rel = unpack_rows(take("init.rel_pmf"));
    if (b.marginals.app.size() != static_cast<std::size_t>(c.m_obj) ||
        b.marginals.rel.size() != static_cast<std::size_t>(c.m_rel))
        throw DataError("bundle: marginal tables do not match the alphabets");
    for (auto& [name, arr] : all)
        if (name.rfind("den.", 0) == 0) b.params.tensors.emplace(name, std::move(arr));
    if (b.params.tensors.empty()) throw DataError("bundle: no denoiser tensors");
    return b;
}

namespace {

double validation_loss(const denoiser::DenoiserParams& params,
                       const std::vector<TrainExample>& val_examples,
                       const std::vector<transport::TargetGraph>& val_set,
                       const TrainConfig& cfg) {
    double total = 0.0;
    for (const auto& ex : val_examples) {
        numkit::Tape tape;
        const auto fwd = denoiser::forward(tape, params, ex.state, ex.t);
        const auto ids = example_loss(tape, fwd, ex, val_set[ex.target_index], cfg);
        total += tape.value(ids.total).data[0];
    }
    return total / static_cast<double>(val_examples.size());
}

}  // namespace

TrainReport train(const TrainConfig& cfg, const std::vector<transport::TargetGraph>& train_set,
                  const std::vector<transport::TargetGraph>& val_set,
                  denoiser::DenoiserParams params, const std::string& out_dir, bool verbose) {
    cfg.validate();
    params.cfg.validate();
    if (train_set.empty()) throw DataError("train: empty training set");
    if (val_set.empty()) throw DataError("train: empty validation set");
    const auto& a0 = train_set.front().alpha;
    if (a0.k_class != params.cfg.k_class || a0.k_app != params.cfg.k_app ||
        a0.k_rel != params.cfg.k_rel || a0.m_obj != params.cfg.m_obj ||
        a0.m_rel != params.cfg.m_rel)
        throw std::invalid_argument("train: dataset alphabets do not match the model");
    std::filesystem::create_directories(out_dir);

    const auto sched = flowpaths::Scheduler::parse(cfg.schedule);
    const SlotMarginals marginals = slot_marginals_from_targets(train_set);

    // Frozen validation batches: fixed scenes, times, and corruption draws so
    // successive validations differ only through the parameters.
    std::vector<TrainExample> val_examples;
    {
        const numkit::RngStream val_base(cfg.seed, kValStream);
        const std::size_t n_vex =
            static_cast<std::size_t>(cfg.val_batches) * static_cast<std::size_t>(cfg.batch);
        val_examples.reserve(n_vex);
        for (std::size_t v = 0; v < n_vex; ++v) {
            numkit::RngStream rng = val_base.substream(v);
            TrainExample ex;
            ex.stream_key = v;
            ex.target_index = v % val_set.size();
            ex.t = rng.uniform();
            auto corr = flowpaths::sample_corruption(val_set[ex.target_index], sched, ex.t, rng,
                                                     cfg.transport_classes);
            ex.state = std::move(corr.state);
            ex.u_star = std::move(corr.box_velocity);
            val_examples.push_back(std::move(ex));
        }
    }

    TrainReport report;
    report.curve_path = (std::filesystem::path(out_dir) / "loss.tsv").string();
    report.last_path = (std::filesystem::path(out_dir) / "last.gflw").string();
    report.best_path = (std::filesystem::path(out_dir) / "best.gflw").string();
    std::ofstream curve(report.curve_path);
    if (!curve) throw ConfigError("train: cannot write " + report.curve_path);
    curve << "step\ttrain_loss\tval_loss\n";
    char buf[160];

    AdamW adam(cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
    const numkit::RngStream base(cfg.seed, kTrainStream);
    const numkit::RngStream drop_base(cfg.seed, kDropStream);
    const double inv_batch = 1.0 / static_cast<double>(cfg.batch);

    double window_sum = 0.0;
    int window_len = 0;
    double best_val = std::numeric_limits<double>::infinity();

    for (int step = 0; step < cfg.iterations; ++step) {
        Batch batch = make_batch(train_set, cfg, step, base);
        numkit::TensorMap grads;
        for (const auto& [name, arr] : params.tensors) grads.emplace(name, numkit::Array(arr.shape, 0.0));
        double loss_sum = 0.0;
        for (const auto& ex : batch.examples) {
            numkit::Tape tape;
            numkit::RngStream drop = drop_base.substream(ex.stream_key);
            numkit::RngStream* drop_ptr = params.cfg.dropout > 0.0 ? &drop : nullptr;
            const auto fwd = denoiser::forward(tape, params, ex.state, ex.t, drop_ptr);
            const auto ids = example_loss(tape, fwd, ex, train_set[ex.target_index], cfg);
            tape.backward(ids.total);
            loss_sum += tape.value(ids.total).data[0];
            for (const auto& [name, id] : fwd.params) {
                const numkit::Array& g = tape.grad(id);
                numkit::Array& acc = grads.at(name);
                for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += g.data[i];
            }
        }
        const double batch_loss = loss_sum * inv_batch;
        if (!std::isfinite(batch_loss)) {
            std::snprintf(buf, sizeof(buf),
                          "train: non-finite loss at step %d (seed %llu, example streams "
                          "%llu..%llu)",
                          step + 1, static_cast<unsigned long long>(cfg.seed),
                          static_cast<unsigned long long>(batch.examples.front().stream_key),
                          static_cast<unsigned long long>(batch.examples.back().stream_key));
            throw std::runtime_error(buf);
        }
        for (auto& [name, g] : grads)
            for (double& x : g.data) x *= inv_batch;
        const double lr_t = cfg.warmup > 0
                                ? cfg.lr * std::min(1.0, static_cast<double>(step + 1) /
                                                             static_cast<double>(cfg.warmup))
                                : cfg.lr;
        adam.step(params.tensors, grads, lr_t);

        window_sum += batch_loss;
        ++window_len;
        const int done = step + 1;
        if (done % cfg.val_every == 0 || done == cfg.iterations) {
            const double val = validation_loss(params, val_examples, val_set, cfg);
            LossRow row{done, window_sum / window_len, val};
            report.rows.push_back(row);
            std::snprintf(buf, sizeof(buf), "%d\t%.17g\t%.17g\n", row.step, row.train_loss,
                          row.val_loss);
            curve << buf;
            curve.flush();
            window_sum = 0.0;
            window_len = 0;
            if (val < best_val) {
                best_val = val;
                report.best_val = val;
                report.best_val_step = done;
                save_bundle(report.best_path, ModelBundle{params, sched, marginals});
            }
            report.final_val = val;
            if (verbose)
                std::printf("step %6d  train %.6f  val %.6f\n", row.step, row.train_loss, val);
        }
    }

    save_bundle(report.last_path, ModelBundle{params, sched, marginals});
    save_config((std::filesystem::path(out_dir) / "train_config.txt").string(), cfg);
    return report;
}

}  // namespace flowsg::trainer
