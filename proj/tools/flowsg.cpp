// Command line front end for the full pipeline: dataset generation, codebook
// training, denoiser training, sampling, protocol evaluation, trajectory
// dumps and the init / message-aggregation ablations.
//
// Exit codes: 0 on success, 2 on configuration problems (bad flags, unknown
// subcommands, missing input files), 1 on runtime failures.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "flowsg/denoiser/denoiser.hpp"
#include "flowsg/errors.hpp"
#include "flowsg/evalcli/protocol.hpp"
#include "flowsg/flowpaths/scheduler.hpp"
#include "flowsg/numkit/rng.hpp"
#include "flowsg/tokenizer/codebook.hpp"
#include "flowsg/tokenizer/phrase_table.hpp"
#include "flowsg/tokenizer/scene_encoding.hpp"
#include "flowsg/trainer/trainer.hpp"
#include "flowsg/transport/init.hpp"
#include "flowsg/transport/ode.hpp"
#include "flowsg/world/dataset.hpp"
#include "flowsg/world/world.hpp"

namespace {

using namespace flowsg;

// Rng stream tags; the trainer and the eval protocol pin theirs, the CLI adds
// its own for codebook training and parameter init.
constexpr std::uint64_t kObjVqStream = 0x7261a15;
constexpr std::uint64_t kRelVqStream = 0x7261a16;
constexpr std::uint64_t kParamInitStream = 0x7261a17;

void require_file(const std::string& path, const std::string& what) {
    if (!std::filesystem::exists(path))
        throw ConfigError(what + " not found: " + path);
}

// Deterministic key/value echo of one command invocation; no timestamps so
// reruns produce identical files.
void write_manifest(const std::string& path,
                    const std::vector<std::pair<std::string, std::string>>& rows) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    for (const auto& [k, v] : rows) out << k << '\t' << v << '\n';
}

std::string join_ints(const std::vector<int>& xs) {
    std::ostringstream os;
    for (std::size_t i = 0; i < xs.size(); ++i) os << (i ? "," : "") << xs[i];
    return os.str();
}

std::string split_file(const std::string& data_dir, const std::string& split) {
    if (split != "train" && split != "val" && split != "test")
        throw ConfigError("unknown split: " + split);
    return data_dir + "/" + split + ".jsonl";
}

evalcli::SamplerAssets load_assets(const std::string& bundle_path, const std::string& data_dir,
                                   const std::string& vq_dir) {
    require_file(bundle_path, "model bundle");
    require_file(data_dir + "/world.txt", "world config echo");
    require_file(vq_dir + "/obj_codebook.gflw", "object codebook");
    require_file(vq_dir + "/rel_codebook.gflw", "relation codebook");
    require_file(vq_dir + "/phrases.tsv", "phrase table");
    evalcli::SamplerAssets assets;
    assets.bundle = trainer::load_bundle(bundle_path);
    assets.obj_cb = tokenizer::load_codebook(vq_dir + "/obj_codebook.gflw");
    assets.rel_cb = tokenizer::load_relation_codebook(vq_dir + "/rel_codebook.gflw");
    assets.phrases = tokenizer::load_phrase_table(vq_dir + "/phrases.tsv");
    assets.world_cfg = world::load_world_config(data_dir + "/world.txt");
    assets.validate();
    return assets;
}

std::vector<world::Scene> load_split(const std::string& data_dir, const std::string& split,
                                     const world::WorldConfig& wc) {
    const std::string path = split_file(data_dir, split);
    require_file(path, split + " split");
    return world::load_scenes(path, wc);
}

// ---------------------------------------------------------------- make-data

struct MakeDataOpts {
    std::string out;
    std::string config;
    std::size_t scenes = 10000;
    world::WorldConfig wc;
    CLI::Option *o_seed = nullptr, *o_n_min = nullptr, *o_n_max = nullptr, *o_classes = nullptr,
                *o_d_app = nullptr, *o_d_ctx = nullptr, *o_flip = nullptr;
    std::uint64_t seed = 0;
    std::size_t n_min = 2, n_max = 6;
    int k_classes = 8;
    std::size_t d_app = 32, d_ctx = 32;
    double label_flip = 0.1;
};

int run_make_data(const MakeDataOpts& o) {
    world::WorldConfig wc;
    if (!o.config.empty()) {
        require_file(o.config, "world config");
        wc = world::load_world_config(o.config);
    }
    if (o.o_seed->count() > 0) wc.seed = o.seed;
    if (o.o_n_min->count() > 0) wc.n_min = o.n_min;
    if (o.o_n_max->count() > 0) wc.n_max = o.n_max;
    if (o.o_classes->count() > 0) wc.k_classes = o.k_classes;
    if (o.o_d_app->count() > 0) wc.d_app = o.d_app;
    if (o.o_d_ctx->count() > 0) wc.d_ctx = o.d_ctx;
    if (o.o_flip->count() > 0) wc.label_flip = o.label_flip;
    wc.validate();

    const auto counts = world::make_dataset(wc, o.scenes, o.out);
    write_manifest(o.out + "/manifest.txt",
                   {{"command", "make-data"},
                    {"seed", std::to_string(wc.seed)},
                    {"scenes", std::to_string(o.scenes)},
                    {"train", std::to_string(counts.train)},
                    {"val", std::to_string(counts.val)},
                    {"test", std::to_string(counts.test)},
                    {"world_config", o.out + "/world.txt"},
                    {"marginals", o.out + "/marginals.json"}});
    std::cout << "dataset: " << o.scenes << " scenes -> " << o.out << " (train " << counts.train
              << ", val " << counts.val << ", test " << counts.test << ")\n";
    return 0;
}

// ----------------------------------------------------------------- train-vq

struct TrainVqOpts {
    std::string data, out;
    std::size_t k = 64;
    int m_obj = 4;
    std::size_t k_rel = 7;
    int m_rel = 4;
    std::size_t phrase_dim = 32;
    int epochs = 50;
    std::uint64_t seed = 0;
};

int run_train_vq(const TrainVqOpts& o) {
    require_file(o.data + "/world.txt", "world config echo");
    const auto wc = world::load_world_config(o.data + "/world.txt");
    if (o.m_obj < 1 || wc.d_app % static_cast<std::size_t>(o.m_obj) != 0)
        throw ConfigError("appearance dim " + std::to_string(wc.d_app) +
                          " is not divisible into " + std::to_string(o.m_obj) + " slots");
    if (o.m_rel < 1 || o.phrase_dim % static_cast<std::size_t>(o.m_rel) != 0)
        throw ConfigError("phrase dim " + std::to_string(o.phrase_dim) +
                          " is not divisible into " + std::to_string(o.m_rel) + " slots");

    const auto scenes = load_split(o.data, "train", wc);
    std::vector<std::vector<double>> features;
    for (const auto& s : scenes)
        for (std::size_t i = 0; i < s.n_objects; ++i)
            features.emplace_back(s.appearance.begin() + static_cast<long>(i * wc.d_app),
                                  s.appearance.begin() + static_cast<long>((i + 1) * wc.d_app));

    tokenizer::VqTrainOptions vopt;
    vopt.epochs = o.epochs;
    numkit::RngStream obj_rng(o.seed, kObjVqStream);
    tokenizer::VqTrainReport obj_rep;
    const auto obj_cb = tokenizer::train_vq(features, o.k, o.m_obj, vopt, obj_rng, &obj_rep);
    const double variance = tokenizer::dataset_variance(features);

    const auto table = tokenizer::make_phrase_table(wc.phrases, o.phrase_dim, o.seed);
    numkit::RngStream rel_rng(o.seed, kRelVqStream);
    tokenizer::VqTrainReport rel_rep;
    const auto rel_cb =
        tokenizer::build_relation_codebook(table, o.k_rel, o.m_rel, vopt, rel_rng, &rel_rep);

    std::filesystem::create_directories(o.out);
    tokenizer::save_codebook(o.out + "/obj_codebook.gflw", obj_cb);
    tokenizer::save_relation_codebook(o.out + "/rel_codebook.gflw", rel_cb);
    tokenizer::save_phrase_table(o.out + "/phrases.tsv", table);

    std::ostringstream stats;
    stats.precision(17);
    stats << "stat\tvalue\n"
          << "obj_mse\t" << obj_rep.final_mse << "\n"
          << "obj_variance\t" << variance << "\n"
          << "obj_mse_over_variance\t" << (variance > 0 ? obj_rep.final_mse / variance : 0.0)
          << "\n"
          << "obj_utilization\t" << obj_rep.utilization << "\n"
          << "rel_mse\t" << rel_rep.final_mse << "\n"
          << "rel_utilization\t" << rel_rep.utilization << "\n";
    {
        std::ofstream sf(o.out + "/vq_stats.tsv");
        if (!sf) throw DataError("cannot open for writing: " + o.out + "/vq_stats.tsv");
        sf << stats.str();
    }
    write_manifest(o.out + "/manifest.txt",
                   {{"command", "train-vq"},
                    {"data", o.data},
                    {"seed", std::to_string(o.seed)},
                    {"k", std::to_string(o.k)},
                    {"m_obj", std::to_string(o.m_obj)},
                    {"k_rel", std::to_string(o.k_rel)},
                    {"m_rel", std::to_string(o.m_rel)},
                    {"phrase_dim", std::to_string(o.phrase_dim)},
                    {"epochs", std::to_string(o.epochs)},
                    {"obj_codebook", o.out + "/obj_codebook.gflw"},
                    {"rel_codebook", o.out + "/rel_codebook.gflw"},
                    {"phrase_table", o.out + "/phrases.tsv"}});
    std::cout << "object codebook: k " << obj_cb.k << ", utilization " << obj_rep.utilization
              << ", mse/variance "
              << (variance > 0 ? obj_rep.final_mse / variance : 0.0) << "\n"
              << "relation codebook: k " << rel_cb.codebook.k << ", tuples "
              << rel_cb.phrase_tokens.size() << "\n"
              << "artifacts -> " << o.out << "\n";
    return 0;
}

// -------------------------------------------------------------------- train

struct TrainOpts {
    std::string data, vq, out, config;
    trainer::TrainConfig tc;  // shadow values bound to flags
    CLI::Option *o_iterations = nullptr, *o_batch = nullptr, *o_lr = nullptr, *o_lambda = nullptr,
                *o_wd = nullptr, *o_edge_only = nullptr, *o_seed = nullptr, *o_warmup = nullptr,
                *o_schedule = nullptr, *o_val_every = nullptr, *o_val_batches = nullptr,
                *o_transport_classes = nullptr;
    int d_model = 64, blocks = 2, heads = 4, time_dim = 64, m_obj = 4;
    int w_app = 0, w_rel = 0;  // 0 derives the width from the codebook chunk
    double dropout = 0.0;
    bool no_fma = false;
    bool no_codebook_init = false;
    bool quiet = false;
};

transport::TargetGraph encode_one(const world::Scene& s, const world::WorldConfig& wc,
                                  const tokenizer::Codebook& obj_cb,
                                  const tokenizer::RelationCodebook& rel_cb, int m_obj) {
    const auto det = world::detector_oracle(s, wc);
    return tokenizer::encode_scene(s, det, obj_cb, rel_cb, wc, m_obj);
}

int run_train(const TrainOpts& o) {
    trainer::TrainConfig tc;
    if (!o.config.empty()) {
        require_file(o.config, "train config");
        tc = trainer::config_from_file(o.config);
    }
    if (o.o_iterations->count() > 0) tc.iterations = o.tc.iterations;
    if (o.o_batch->count() > 0) tc.batch = o.tc.batch;
    if (o.o_lr->count() > 0) tc.lr = o.tc.lr;
    if (o.o_lambda->count() > 0) tc.lambda = o.tc.lambda;
    if (o.o_wd->count() > 0) tc.weight_decay = o.tc.weight_decay;
    if (o.o_edge_only->count() > 0) tc.edge_only_prob = o.tc.edge_only_prob;
    if (o.o_seed->count() > 0) tc.seed = o.tc.seed;
    if (o.o_warmup->count() > 0) tc.warmup = o.tc.warmup;
    if (o.o_schedule->count() > 0) tc.schedule = o.tc.schedule;
    if (o.o_val_every->count() > 0) tc.val_every = o.tc.val_every;
    if (o.o_val_batches->count() > 0) tc.val_batches = o.tc.val_batches;
    if (o.o_transport_classes->count() > 0) tc.transport_classes = true;
    tc.validate();

    require_file(o.data + "/world.txt", "world config echo");
    require_file(o.vq + "/obj_codebook.gflw", "object codebook");
    require_file(o.vq + "/rel_codebook.gflw", "relation codebook");
    require_file(o.vq + "/phrases.tsv", "phrase table");
    const auto wc = world::load_world_config(o.data + "/world.txt");
    const auto obj_cb = tokenizer::load_codebook(o.vq + "/obj_codebook.gflw");
    const auto rel_cb = tokenizer::load_relation_codebook(o.vq + "/rel_codebook.gflw");
    const auto table = tokenizer::load_phrase_table(o.vq + "/phrases.tsv");

    if (obj_cb.d != wc.d_app)
        throw DataError("object codebook dim " + std::to_string(obj_cb.d) +
                        " does not match world appearance dim " + std::to_string(wc.d_app));
    if (o.m_obj < 1 || obj_cb.d % static_cast<std::size_t>(o.m_obj) != 0)
        throw ConfigError("object codebook dim " + std::to_string(obj_cb.d) +
                          " is not divisible into " + std::to_string(o.m_obj) + " slots");
    const int m_rel = static_cast<int>(rel_cb.phrase_tokens.empty()
                                           ? 0
                                           : rel_cb.phrase_tokens.front().size());
    if (m_rel < 1 || rel_cb.codebook.d % static_cast<std::size_t>(m_rel) != 0)
        throw DataError("relation codebook tuples are unusable");

    denoiser::DenoiserConfig dc;
    dc.l_blocks = o.blocks;
    dc.heads = o.heads;
    dc.d_model = o.d_model;
    dc.dropout = o.dropout;
    dc.k_class = wc.k_classes;
    dc.k_app = static_cast<int>(obj_cb.k);
    dc.k_rel = static_cast<int>(rel_cb.codebook.k);
    dc.m_obj = o.m_obj;
    dc.m_rel = m_rel;
    dc.time_dim = o.time_dim;
    dc.w_app = o.w_app > 0 ? o.w_app
                           : static_cast<int>(obj_cb.d / static_cast<std::size_t>(o.m_obj));
    dc.w_rel = o.w_rel > 0 ? o.w_rel
                           : static_cast<int>(rel_cb.codebook.d / static_cast<std::size_t>(m_rel));
    dc.d_ctx = wc.d_ctx;
    dc.use_fma = !o.no_fma;
    dc.validate();

    const auto train_scenes = load_split(o.data, "train", wc);
    const auto val_scenes = load_split(o.data, "val", wc);
    std::vector<transport::TargetGraph> train_set, val_set;
    train_set.reserve(train_scenes.size());
    val_set.reserve(val_scenes.size());
    for (const auto& s : train_scenes)
        train_set.push_back(encode_one(s, wc, obj_cb, rel_cb, o.m_obj));
    for (const auto& s : val_scenes) val_set.push_back(encode_one(s, wc, obj_cb, rel_cb, o.m_obj));

    numkit::RngStream init_rng(tc.seed, kParamInitStream);
    auto params = o.no_codebook_init
                      ? denoiser::init_params(dc, init_rng)
                      : denoiser::init_params(dc, init_rng, &obj_cb, &rel_cb.codebook);

    std::filesystem::create_directories(o.out);
    const auto report = trainer::train(tc, train_set, val_set, std::move(params), o.out, !o.quiet);

    write_manifest(o.out + "/manifest.txt",
                   {{"command", "train"},
                    {"data", o.data},
                    {"vq", o.vq},
                    {"seed", std::to_string(tc.seed)},
                    {"iterations", std::to_string(tc.iterations)},
                    {"batch", std::to_string(tc.batch)},
                    {"schedule", tc.schedule},
                    {"d_model", std::to_string(dc.d_model)},
                    {"blocks", std::to_string(dc.l_blocks)},
                    {"heads", std::to_string(dc.heads)},
                    {"use_fma", dc.use_fma ? "1" : "0"},
                    {"train_scenes", std::to_string(train_set.size())},
                    {"val_scenes", std::to_string(val_set.size())},
                    {"last", report.last_path},
                    {"best", report.best_path},
                    {"curve", report.curve_path}});
    std::cout << "best val " << report.best_val << " at step " << report.best_val_step
              << ", final val " << report.final_val << "\n"
              << "checkpoints: " << report.last_path << ", " << report.best_path << "\n";
    return 0;
}

// ----------------------------------------------------- shared eval plumbing

struct EvalFlags {
    std::string bundle, data, vq, split = "test";
    std::string mode = "predcls", init = "masking", ode = "euler";
    int steps = 10, workers = 1;
    std::vector<int> ks = {10, 20};
    double iou = 0.5;
    std::uint64_t seed = 0;
    std::size_t max_scenes = 0;
};

void add_eval_flags(CLI::App* sub, EvalFlags& f, bool with_protocol = true) {
    sub->add_option("--bundle", f.bundle, "model bundle checkpoint")->required();
    sub->add_option("--data", f.data, "dataset directory")->required();
    sub->add_option("--vq", f.vq, "codebook directory")->required();
    sub->add_option("--split", f.split, "dataset split")->default_val("test");
    sub->add_option("--steps", f.steps, "sampling steps")->default_val(10);
    sub->add_option("--init", f.init, "source distribution: uniform|masking|marginal|absorbing")
        ->default_val("masking");
    sub->add_option("--ode", f.ode, "box integrator: euler|midpoint")->default_val("euler");
    sub->add_option("--seed", f.seed, "evaluation seed")->default_val(0);
    if (with_protocol) {
        sub->add_option("--mode", f.mode, "protocol: predcls|sgdet")->default_val("predcls");
        sub->add_option("--k", f.ks, "recall cutoffs")->delimiter(',');
        sub->add_option("--iou", f.iou, "triplet match IoU threshold")->default_val(0.5);
        sub->add_option("--workers", f.workers, "evaluation threads")->default_val(1);
        sub->add_option("--max-scenes", f.max_scenes, "cap on evaluated scenes, 0 = all")
            ->default_val(0);
    }
}

evalcli::EvalOptions to_eval_options(const EvalFlags& f) {
    evalcli::EvalOptions opt;
    opt.mode = evalcli::parse_mode(f.mode);
    opt.init = transport::parse_init_kind(f.init);
    opt.n_steps = f.steps;
    opt.ode = transport::parse_ode_method(f.ode);
    opt.ks = f.ks;
    opt.iou_thresh = f.iou;
    opt.seed = f.seed;
    opt.workers = f.workers;
    opt.max_scenes = f.max_scenes;
    opt.validate();
    return opt;
}

// --------------------------------------------------------------------- eval

struct EvalOpts {
    EvalFlags f;
    std::string out;
};

int run_eval(const EvalOpts& o) {
    const auto opt = to_eval_options(o.f);
    const auto assets = load_assets(o.f.bundle, o.f.data, o.f.vq);
    const auto scenes = load_split(o.f.data, o.f.split, assets.world_cfg);
    const auto report = evalcli::run_protocol(assets, scenes, opt);

    std::filesystem::create_directories(o.out);
    evalcli::save_metrics(o.out + "/metrics.tsv", report, assets.phrases.phrases);
    write_manifest(o.out + "/manifest.txt",
                   {{"command", "eval"},
                    {"bundle", o.f.bundle},
                    {"data", o.f.data},
                    {"vq", o.f.vq},
                    {"split", o.f.split},
                    {"mode", evalcli::mode_name(opt.mode)},
                    {"init", transport::init_kind_name(opt.init)},
                    {"steps", std::to_string(opt.n_steps)},
                    {"ode", transport::ode_method_name(opt.ode)},
                    {"seed", std::to_string(opt.seed)},
                    {"workers", std::to_string(opt.workers)},
                    {"iou", std::to_string(opt.iou_thresh)},
                    {"k", join_ints(opt.ks)},
                    {"max_scenes", std::to_string(opt.max_scenes)},
                    {"n_scenes", std::to_string(report.n_scenes)},
                    {"metrics", o.out + "/metrics.tsv"}});
    std::cout << evalcli::metrics_summary(report, assets.phrases.phrases)
              << "metrics -> " << o.out << "/metrics.tsv\n";
    return 0;
}

// ------------------------------------------------------------------- sample

struct SampleOpts {
    EvalFlags f;
    std::string out;
    std::size_t count = 4;
};

int run_sample(const SampleOpts& o) {
    const auto opt = to_eval_options(o.f);
    const auto assets = load_assets(o.f.bundle, o.f.data, o.f.vq);
    auto scenes = load_split(o.f.data, o.f.split, assets.world_cfg);
    if (scenes.size() > o.count) scenes.resize(o.count);
    const auto model = denoiser::as_denoiser_fn(assets.bundle.params);

    std::ofstream out(o.out);
    if (!out) throw DataError("cannot open for writing: " + o.out);
    for (const auto& scene : scenes) {
        numkit::RngStream base(opt.seed, 0x7261a14);
        auto rng = base.substream(scene.id);
        const auto ev = evalcli::eval_scene(model, assets, scene, opt, rng);
        nlohmann::json rec;
        rec["id"] = scene.id;
        rec["mode"] = evalcli::mode_name(opt.mode);
        auto& trips = rec["triplets"] = nlohmann::json::array();
        for (const auto& p : ev.predictions) {
            nlohmann::json t;
            t["subj"] = p.subj;
            t["obj"] = p.obj;
            t["subj_class"] = p.subj_class;
            t["obj_class"] = p.obj_class;
            t["predicate"] = assets.phrases.phrases.at(static_cast<std::size_t>(p.predicate));
            t["score"] = p.score;
            t["subj_box"] = p.subj_box;
            t["obj_box"] = p.obj_box;
            trips.push_back(std::move(t));
        }
        out << rec.dump() << '\n';
    }
    std::cout << "sampled " << scenes.size() << " scenes -> " << o.out << "\n";
    return 0;
}

// ---------------------------------------------------------------- dump-traj

struct DumpOpts {
    EvalFlags f;
    std::string out;
    std::size_t index = 0;
    std::uint64_t scene_id = 0;
    CLI::Option* o_scene_id = nullptr;
};

int run_dump(const DumpOpts& o) {
    auto opt = to_eval_options(o.f);
    opt.mode = evalcli::parse_mode(o.f.mode);
    const auto assets = load_assets(o.f.bundle, o.f.data, o.f.vq);
    const auto scenes = load_split(o.f.data, o.f.split, assets.world_cfg);
    if (scenes.empty()) throw DataError("split " + o.f.split + " is empty");

    const world::Scene* scene = nullptr;
    if (o.o_scene_id->count() > 0) {
        for (const auto& s : scenes)
            if (s.id == o.scene_id) scene = &s;
        if (scene == nullptr)
            throw ConfigError("scene id " + std::to_string(o.scene_id) + " is not in split " +
                              o.f.split);
    } else {
        if (o.index >= scenes.size())
            throw ConfigError("scene index " + std::to_string(o.index) + " out of range, split " +
                              o.f.split + " holds " + std::to_string(scenes.size()));
        scene = &scenes[o.index];
    }
    evalcli::dump_trajectory(assets, *scene, opt, o.out);
    std::cout << "trajectory of scene " << scene->id << " (" << (opt.n_steps + 1)
              << " records) -> " << o.out << "\n";
    return 0;
}

// ------------------------------------------------------------------- ablate

struct AblateOpts {
    EvalFlags f;
    std::string out, sweep, bundle_nofma;
};

int run_ablate(const AblateOpts& o) {
    auto opt = to_eval_options(o.f);
    const auto assets = load_assets(o.f.bundle, o.f.data, o.f.vq);
    const auto scenes = load_split(o.f.data, o.f.split, assets.world_cfg);
    std::filesystem::create_directories(o.out);

    const int k_top = opt.ks.back();
    std::vector<std::pair<std::string, std::string>> manifest{{"command", "ablate"},
                                                              {"sweep", o.sweep},
                                                              {"bundle", o.f.bundle},
                                                              {"data", o.f.data},
                                                              {"vq", o.f.vq},
                                                              {"split", o.f.split},
                                                              {"mode", o.f.mode},
                                                              {"steps", std::to_string(opt.n_steps)},
                                                              {"seed", std::to_string(opt.seed)},
                                                              {"k", join_ints(opt.ks)}};
    std::ostringstream tbl;
    tbl.precision(4);
    tbl << std::fixed;

    if (o.sweep == "init") {
        tbl << "init        R@" << k_top << "    mR@" << k_top << "\n";
        for (const auto kind : {transport::InitKind::uniform, transport::InitKind::masking,
                                transport::InitKind::marginal, transport::InitKind::absorbing}) {
            opt.init = kind;
            const auto rep = evalcli::run_protocol(assets, scenes, opt);
            const std::string name = transport::init_kind_name(kind);
            const std::string path = o.out + "/init_" + name + ".tsv";
            evalcli::save_metrics(path, rep, assets.phrases.phrases);
            manifest.emplace_back("metrics_" + name, path);
            tbl << name << std::string(name.size() < 12 ? 12 - name.size() : 1, ' ')
                << rep.recall.back() << "  " << rep.mean_recall.back() << "\n";
        }
    } else if (o.sweep == "fma") {
        if (o.bundle_nofma.empty())
            throw ConfigError("--sweep fma needs --bundle-nofma (train the twin with --no-fma)");
        auto assets_off = load_assets(o.bundle_nofma, o.f.data, o.f.vq);
        manifest.emplace_back("bundle_nofma", o.bundle_nofma);

        tbl << "variant   use_fma   R@" << k_top << "    mR@" << k_top << "\n";
        const auto rep_on = evalcli::run_protocol(assets, scenes, opt);
        evalcli::save_metrics(o.out + "/fma_on.tsv", rep_on, assets.phrases.phrases);
        manifest.emplace_back("metrics_fma_on", o.out + "/fma_on.tsv");
        tbl << "full      " << (assets.bundle.params.cfg.use_fma ? "yes" : "no ") << "       "
            << rep_on.recall.back() << "  " << rep_on.mean_recall.back() << "\n";

        const auto rep_off = evalcli::run_protocol(assets_off, scenes, opt);
        evalcli::save_metrics(o.out + "/fma_off.tsv", rep_off, assets.phrases.phrases);
        manifest.emplace_back("metrics_fma_off", o.out + "/fma_off.tsv");
        tbl << "no-fma    " << (assets_off.bundle.params.cfg.use_fma ? "yes" : "no ") << "       "
            << rep_off.recall.back() << "  " << rep_off.mean_recall.back() << "\n";
        tbl << "delta mR@" << k_top << ": "
            << rep_on.mean_recall.back() - rep_off.mean_recall.back() << "\n";
    } else {
        throw ConfigError("unknown sweep: " + o.sweep + " (expected init or fma)");
    }

    write_manifest(o.out + "/manifest.txt", manifest);
    std::cout << tbl.str() << "results -> " << o.out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hybrid flow matching for conditional scene-graph generation"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    MakeDataOpts md;
    auto* c_md = app.add_subcommand("make-data", "generate a synthetic dataset");
    c_md->add_option("--out", md.out, "output directory")->required();
    c_md->add_option("--scenes", md.scenes, "total scene count")->default_val(10000);
    c_md->add_option("--config", md.config, "world config file to start from");
    md.o_seed = c_md->add_option("--seed", md.seed, "generator seed");
    md.o_n_min = c_md->add_option("--n-min", md.n_min, "min objects per scene");
    md.o_n_max = c_md->add_option("--n-max", md.n_max, "max objects per scene");
    md.o_classes = c_md->add_option("--classes", md.k_classes, "object class count");
    md.o_d_app = c_md->add_option("--d-app", md.d_app, "appearance feature dim");
    md.o_d_ctx = c_md->add_option("--d-ctx", md.d_ctx, "context token dim");
    md.o_flip = c_md->add_option("--label-flip", md.label_flip, "detector class flip prob");

    TrainVqOpts tv;
    auto* c_tv = app.add_subcommand("train-vq", "train the object and relation codebooks");
    c_tv->add_option("--data", tv.data, "dataset directory")->required();
    c_tv->add_option("--out", tv.out, "output directory")->required();
    c_tv->add_option("--k", tv.k, "object codebook entries")->default_val(64);
    c_tv->add_option("--m-obj", tv.m_obj, "appearance slots per node")->default_val(4);
    c_tv->add_option("--k-rel", tv.k_rel, "relation codebook entries")->default_val(7);
    c_tv->add_option("--m-rel", tv.m_rel, "relation slots per edge")->default_val(4);
    c_tv->add_option("--phrase-dim", tv.phrase_dim, "phrase embedding dim")->default_val(32);
    c_tv->add_option("--epochs", tv.epochs, "k-means epochs")->default_val(50);
    c_tv->add_option("--seed", tv.seed, "codebook training seed")->default_val(0);

    TrainOpts tr;
    auto* c_tr = app.add_subcommand("train", "train the denoiser");
    c_tr->add_option("--data", tr.data, "dataset directory")->required();
    c_tr->add_option("--vq", tr.vq, "codebook directory")->required();
    c_tr->add_option("--out", tr.out, "output directory")->required();
    c_tr->add_option("--config", tr.config, "train config file (key = value)");
    tr.o_iterations = c_tr->add_option("--iterations", tr.tc.iterations, "optimizer steps");
    tr.o_batch = c_tr->add_option("--batch", tr.tc.batch, "examples per step");
    tr.o_lr = c_tr->add_option("--lr", tr.tc.lr, "learning rate");
    tr.o_lambda = c_tr->add_option("--lambda", tr.tc.lambda, "categorical loss weight");
    tr.o_wd = c_tr->add_option("--weight-decay", tr.tc.weight_decay, "AdamW weight decay");
    tr.o_edge_only = c_tr->add_option("--edge-only-prob", tr.tc.edge_only_prob,
                                      "fraction of edge-only examples");
    tr.o_seed = c_tr->add_option("--seed", tr.tc.seed, "training seed");
    tr.o_warmup = c_tr->add_option("--warmup", tr.tc.warmup, "lr warmup steps");
    tr.o_schedule = c_tr->add_option("--schedule", tr.tc.schedule,
                                     "interpolation schedule: linear|cosine");
    tr.o_val_every = c_tr->add_option("--val-every", tr.tc.val_every, "steps between validations");
    tr.o_val_batches = c_tr->add_option("--val-batches", tr.tc.val_batches,
                                        "batches per validation");
    tr.o_transport_classes = c_tr->add_flag("--transport-classes", "denoise classes too");
    c_tr->add_option("--d-model", tr.d_model, "model width")->default_val(64);
    c_tr->add_option("--blocks", tr.blocks, "transformer blocks")->default_val(2);
    c_tr->add_option("--heads", tr.heads, "attention heads")->default_val(4);
    c_tr->add_option("--time-dim", tr.time_dim, "sinusoidal time code width")->default_val(64);
    c_tr->add_option("--w-app", tr.w_app, "appearance embedding width, 0 = codebook chunk")
        ->default_val(0);
    c_tr->add_option("--w-rel", tr.w_rel, "relation embedding width, 0 = codebook chunk")
        ->default_val(0);
    c_tr->add_option("--dropout", tr.dropout, "attention dropout")->default_val(0.0);
    c_tr->add_flag("--no-fma", tr.no_fma, "disable flow-conditioned message aggregation");
    c_tr->add_flag("--no-codebook-init", tr.no_codebook_init,
                   "random token embeddings instead of codebook chunks");
    c_tr->add_flag("--quiet", tr.quiet, "suppress progress lines");

    EvalOpts ev;
    auto* c_ev = app.add_subcommand("eval", "run a recall protocol over a split");
    add_eval_flags(c_ev, ev.f);
    c_ev->add_option("--out", ev.out, "output directory")->required();

    SampleOpts sm;
    auto* c_sm = app.add_subcommand("sample", "generate graphs for a few scenes");
    add_eval_flags(c_sm, sm.f);
    sm.f.mode = "sgdet";
    c_sm->get_option("--mode")->default_val("sgdet");
    c_sm->add_option("--count", sm.count, "scenes to sample")->default_val(4);
    c_sm->add_option("--out", sm.out, "output JSONL file")->required();

    DumpOpts dp;
    auto* c_dp = app.add_subcommand("dump-traj", "record one scene's sampling trajectory");
    add_eval_flags(c_dp, dp.f, /*with_protocol=*/false);
    c_dp->add_option("--mode", dp.f.mode, "protocol: predcls|sgdet")->default_val("sgdet");
    c_dp->add_option("--index", dp.index, "scene position in the split")->default_val(0);
    dp.o_scene_id = c_dp->add_option("--scene-id", dp.scene_id, "scene id instead of --index");
    c_dp->add_option("--out", dp.out, "output JSONL file")->required();

    AblateOpts ab;
    auto* c_ab = app.add_subcommand("ablate", "compare init strategies or message aggregation");
    add_eval_flags(c_ab, ab.f);
    c_ab->add_option("--sweep", ab.sweep, "what to vary: init|fma")->required();
    c_ab->add_option("--bundle-nofma", ab.bundle_nofma, "bundle trained with --no-fma");
    c_ab->add_option("--out", ab.out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand(c_md)) return run_make_data(md);
        if (app.got_subcommand(c_tv)) return run_train_vq(tv);
        if (app.got_subcommand(c_tr)) return run_train(tr);
        if (app.got_subcommand(c_ev)) return run_eval(ev);
        if (app.got_subcommand(c_sm)) return run_sample(sm);
        if (app.got_subcommand(c_dp)) return run_dump(dp);
        if (app.got_subcommand(c_ab)) return run_ablate(ab);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
