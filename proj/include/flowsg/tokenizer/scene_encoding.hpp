#pragma once

#include "flowsg/tokenizer/phrase_table.hpp"
#include "flowsg/transport/graph_state.hpp"
#include "flowsg/world/world.hpp"

namespace flowsg::tokenizer {

// Turns a raw scene into the flow endpoint: appearance features become slot
// tokens, predicates become relation slot tuples, the detector view supplies
// conditioning classes.
transport::TargetGraph encode_scene(const world::Scene& scene, const world::DetectorView& det,
                                    const Codebook& obj_cb, const RelationCodebook& rel_cb,
                                    const world::WorldConfig& cfg, int m_obj);

}  // namespace flowsg::tokenizer
