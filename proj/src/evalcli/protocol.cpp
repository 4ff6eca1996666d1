#include "flowsg/evalcli/protocol.hpp"

#include <algorithm>
#include <exception>
#include <fstream>
#include <thread>
#include <vector>

#include "flowsg/denoiser/denoiser.hpp"
#include "flowsg/errors.hpp"
#include "json.hpp"

namespace flowsg::evalcli {

namespace {

using nlohmann::json;

// Evaluation stream tag; scene streams hang off it keyed by scene id, so the
// draws a scene sees do not depend on worker count or visit order.
constexpr std::uint64_t kEvalStream = 0x7261a14;

struct ProtocolSample {
    world::DetectorView det;
    transport::TargetGraph target;
    transport::SampleResult result;
};

ProtocolSample protocol_sample(const transport::DenoiserFn& model, const SamplerAssets& assets,
                               const world::Scene& scene, const EvalOptions& opt,
                               numkit::RngStream& rng) {
    ProtocolSample out;
    out.det = world::detector_oracle(scene, assets.world_cfg);
    out.target = tokenizer::encode_scene(scene, out.det, assets.obj_cb, assets.rel_cb,
                                         assets.world_cfg, assets.bundle.params.cfg.m_obj);
    const transport::InitStrategy strategy =
        make_init_strategy(opt.init, assets.bundle.marginals);
    transport::GraphState state = transport::init_state(out.target, strategy, rng);
    if (opt.mode == ProtocolMode::predcls) {
        // Ground-truth nodes: only the relation channel is left to generate,
        // mirroring the edge-only training mode.
        state.boxes = out.target.boxes;
        state.classes = out.target.gt_classes;
        state.app_tokens = out.target.app_tokens;
    }
    transport::SampleOptions sopt;
    sopt.n_steps = opt.n_steps;
    sopt.sched = assets.bundle.sched;
    sopt.ode = opt.ode;
    sopt.transport_boxes = opt.mode == ProtocolMode::sgdet;
    sopt.transport_app = opt.mode == ProtocolMode::sgdet;
    sopt.transport_rel = true;
    sopt.transport_classes = false;
    out.result = transport::hybrid_sample(model, state, sopt, rng);
    return out;
}

std::vector<int> resolved_tokens(const std::vector<int>& tokens, const std::vector<double>& post,
                                 int k_real) {
    const std::size_t width = static_cast<std::size_t>(k_real + 1);
    std::vector<int> out = tokens;
    for (std::size_t s = 0; s < out.size(); ++s)
        if (out[s] == k_real)
            out[s] = transport::argmax_real(post.data() + s * width,
                                            static_cast<std::size_t>(k_real));
    return out;
}

std::vector<double> slot_entropies(const std::vector<double>& post, int width) {
    const std::size_t rows = post.size() / static_cast<std::size_t>(width);
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r)
        out[r] = transport::pmf_entropy(post.data() + r * static_cast<std::size_t>(width),
                                        static_cast<std::size_t>(width));
    return out;
}

json nested_boxes(const std::vector<double>& boxes) {
    json rows = json::array();
    for (std::size_t i = 0; i * 4 < boxes.size(); ++i)
        rows.push_back({boxes[i * 4], boxes[i * 4 + 1], boxes[i * 4 + 2], boxes[i * 4 + 3]});
    return rows;
}

}  // namespace

ProtocolMode parse_mode(const std::string& name) {
    if (name == "predcls") return ProtocolMode::predcls;
    if (name == "sgdet") return ProtocolMode::sgdet;
    throw ConfigError("unknown protocol mode: " + name);
}

std::string mode_name(ProtocolMode m) {
    return m == ProtocolMode::predcls ? "predcls" : "sgdet";
}

void EvalOptions::validate() const {
    if (n_steps < 1) throw ConfigError("eval: n_steps must be >= 1");
    if (ks.empty()) throw ConfigError("eval: at least one K required");
    for (int k : ks)
        if (k < 1) throw ConfigError("eval: K values must be positive");
    if (!(iou_thresh > 0.0) || iou_thresh > 1.0)
        throw ConfigError("eval: iou_thresh must lie in (0, 1]");
    if (workers < 1) throw ConfigError("eval: workers must be >= 1");
}

void SamplerAssets::validate() const {
    const auto& cfg = bundle.params.cfg;
    if (static_cast<std::size_t>(cfg.k_app) != obj_cb.k)
        throw DataError("assets: appearance codebook size disagrees with the model");
    if (static_cast<std::size_t>(cfg.k_rel) != rel_cb.codebook.k)
        throw DataError("assets: relation codebook size disagrees with the model");
    if (rel_cb.phrase_tokens.size() != phrases.phrases.size())
        throw DataError("assets: relation codebook does not cover the phrase table");
    for (const auto& tuple : rel_cb.phrase_tokens)
        if (tuple.size() != static_cast<std::size_t>(cfg.m_rel))
            throw DataError("assets: relation slot count disagrees with the model");
    if (world_cfg.phrases != phrases.phrases)
        throw DataError("assets: phrase table does not match the world vocabulary");
    if (world_cfg.d_ctx != cfg.d_ctx)
        throw DataError("assets: context width disagrees with the model");
    if (world_cfg.k_classes != cfg.k_class)
        throw DataError("assets: class count disagrees with the model");
}

transport::InitStrategy make_init_strategy(transport::InitKind kind,
                                           const trainer::SlotMarginals& marginals) {
    transport::InitStrategy st;
    st.kind = kind;
    st.app_slot_pmf = marginals.app;
    st.rel_slot_pmf = marginals.rel;
    return st;
}

SceneEval eval_scene(const transport::DenoiserFn& model, const SamplerAssets& assets,
                     const world::Scene& scene, const EvalOptions& opt,
                     numkit::RngStream& rng) {
    const ProtocolSample run = protocol_sample(model, assets, scene, opt, rng);

    std::vector<int> classes = run.target.gt_classes;
    std::vector<double> conf(scene.n_objects, 1.0);
    if (opt.mode == ProtocolMode::sgdet) {
        classes = run.det.classes;
        conf = run.det.scores;
    }
    SceneEval out;
    out.predictions = extract_triplets(run.result.final_eval, run.result.final_state.boxes,
                                       classes, conf, run.target.alpha, scene.n_objects,
                                       assets.rel_cb, assets.phrases);
    out.ground_truth = scene_ground_truth(scene);
    return out;
}

MetricsReport run_protocol(const SamplerAssets& assets, const std::vector<world::Scene>& scenes,
                           const EvalOptions& opt) {
    opt.validate();
    assets.validate();
    const std::size_t count = opt.max_scenes == 0
                                  ? scenes.size()
                                  : std::min(opt.max_scenes, scenes.size());
    const transport::DenoiserFn model = denoiser::as_denoiser_fn(assets.bundle.params);
    const numkit::RngStream base(opt.seed, kEvalStream);

    std::vector<SceneEval> results(count);
    const int workers = std::min<int>(opt.workers, std::max<std::size_t>(count, 1));
    const auto run_slice = [&](int w) {
        for (std::size_t i = static_cast<std::size_t>(w); i < count;
             i += static_cast<std::size_t>(workers)) {
            numkit::RngStream rng = base.substream(scenes[i].id);
            results[i] = eval_scene(model, assets, scenes[i], opt, rng);
        }
    };
    if (workers <= 1) {
        run_slice(0);
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                try {
                    run_slice(w);
                } catch (...) {
                    errors[static_cast<std::size_t>(w)] = std::current_exception();
                }
            });
        for (auto& th : pool) th.join();
        for (const auto& e : errors)
            if (e) std::rethrow_exception(e);
    }
    return recall_at_k(results, opt.ks, opt.iou_thresh);
}

void dump_trajectory(const SamplerAssets& assets, const world::Scene& scene,
                     const EvalOptions& opt, const std::string& out_path) {
    opt.validate();
    assets.validate();
    const transport::DenoiserFn model = denoiser::as_denoiser_fn(assets.bundle.params);
    numkit::RngStream rng = numkit::RngStream(opt.seed, kEvalStream).substream(scene.id);
    const ProtocolSample run = protocol_sample(model, assets, scene, opt, rng);
    const auto& a = run.target.alpha;

    std::ofstream os(out_path, std::ios::trunc);
    if (!os) throw DataError("cannot open for writing: " + out_path);
    for (std::size_t k = 0; k < run.result.trajectory.size(); ++k) {
        const transport::GraphState& s = run.result.trajectory[k];
        const double t = static_cast<double>(k) / static_cast<double>(opt.n_steps);
        const transport::DenoiserEval ev =
            k + 1 == run.result.trajectory.size() ? run.result.final_eval : model(s, t);

        json rec;
        rec["t"] = t;
        rec["boxes"] = nested_boxes(s.boxes);
        rec["classes"] = s.classes;
        rec["app_tokens"] = s.app_tokens;
        rec["rel_tokens"] = s.rel_tokens;
        const auto app_read = resolved_tokens(s.app_tokens, ev.app_post, a.k_app);
        const auto rel_read = resolved_tokens(s.rel_tokens, ev.rel_post, a.k_rel);
        rec["app_readout"] = app_read;
        rec["rel_readout"] = rel_read;
        json preds = json::array();
        const std::size_t m = static_cast<std::size_t>(a.m_rel);
        for (std::size_t e = 0; e * m < rel_read.size(); ++e) {
            const std::vector<int> tuple(rel_read.begin() + static_cast<std::ptrdiff_t>(e * m),
                                         rel_read.begin() +
                                             static_cast<std::ptrdiff_t>((e + 1) * m));
            const int phrase = tokenizer::nn_decode(tuple, assets.rel_cb.codebook,
                                                    assets.phrases);
            preds.push_back(assets.phrases.phrases[static_cast<std::size_t>(phrase)]);
        }
        rec["predicates"] = std::move(preds);
        rec["app_entropy"] = slot_entropies(ev.app_post, a.k_app + 1);
        rec["rel_entropy"] = slot_entropies(ev.rel_post, a.k_rel + 1);
        rec["mean_entropy"] = run.result.step_entropy[k];
        os << rec.dump() << '\n';
    }
    if (!os) throw DataError("write failed: " + out_path);
}

}  // namespace flowsg::evalcli
