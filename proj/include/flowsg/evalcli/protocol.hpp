#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowsg/evalcli/metrics.hpp"
#include "flowsg/tokenizer/scene_encoding.hpp"
#include "flowsg/trainer/trainer.hpp"
#include "flowsg/transport/init.hpp"
#include "flowsg/world/dataset.hpp"

namespace flowsg::evalcli {

// predcls keeps boxes, classes and appearance at ground truth and transports
// relation slots only; sgdet conditions on the detector classes and
// transports boxes, appearance and relations.
enum class ProtocolMode { predcls, sgdet };

ProtocolMode parse_mode(const std::string& name);  // ConfigError on unknown name
std::string mode_name(ProtocolMode m);

struct EvalOptions {
    ProtocolMode mode = ProtocolMode::predcls;
    transport::InitKind init = transport::InitKind::masking;
    int n_steps = 10;
    transport::OdeMethod ode = transport::OdeMethod::euler;
    std::vector<int> ks = {10, 20};
    double iou_thresh = 0.5;
    std::uint64_t seed = 0;
    int workers = 1;
    std::size_t max_scenes = 0;  // 0 keeps the whole split

    void validate() const;  // ConfigError on out-of-range fields
};

// Everything sampling-time evaluation needs in one place. The world config
// must be the one the dataset was generated with, or the detector view (and
// with it the conditioning) silently changes.
struct SamplerAssets {
    trainer::ModelBundle bundle;
    tokenizer::Codebook obj_cb;
    tokenizer::RelationCodebook rel_cb;
    tokenizer::PhraseTable phrases;
    world::WorldConfig world_cfg;

    void validate() const;  // DataError when pieces disagree
};

// Source strategy of the given kind with its slot PMFs taken from the
// training-corpus marginals stored in the bundle.
transport::InitStrategy make_init_strategy(transport::InitKind kind,
                                           const trainer::SlotMarginals& marginals);

// Samples one scene under the protocol and extracts its ranked triplets.
// The stream must be dedicated to this scene; every draw it makes is local,
// so scenes can run on any worker in any order without changing results.
SceneEval eval_scene(const transport::DenoiserFn& model, const SamplerAssets& assets,
                     const world::Scene& scene, const EvalOptions& opt,
                     numkit::RngStream& rng);

// Full split evaluation. Scenes are distributed over opt.workers threads,
// each writing its own result slot; the metric reduction runs serially over
// the slots, so any worker count produces identical output.
MetricsReport run_protocol(const SamplerAssets& assets, const std::vector<world::Scene>& scenes,
                           const EvalOptions& opt);

// Writes one JSON object per sampling step (n_steps + 1 lines): time, raw
// boxes and tokens, a mask-resolved readout with decoded predicates, and
// per-slot posterior entropies. The first record is the untouched t=0 state.
void dump_trajectory(const SamplerAssets& assets, const world::Scene& scene,
                     const EvalOptions& opt, const std::string& out_path);

}  // namespace flowsg::evalcli
