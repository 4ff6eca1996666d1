#pragma once

#include <string>
#include <vector>

#include "flowsg/numkit/rng.hpp"
#include "flowsg/transport/graph_state.hpp"

namespace flowsg::transport {

enum class InitKind { uniform, masking, marginal, absorbing };

InitKind parse_init_kind(const std::string& name);  // ConfigError on unknown name
std::string init_kind_name(InitKind k);

// Source distribution for the categorical slots at t = 0.
//   uniform:   uniform over the real tokens (mask excluded)
//   masking:   the mask token with probability one
//   marginal:  the training-corpus marginal of each slot position
//   absorbing: the mode of that marginal with probability one
// Slot PMFs cover real tokens only and are required for marginal/absorbing.
struct InitStrategy {
    InitKind kind = InitKind::masking;
    std::vector<std::vector<double>> app_slot_pmf;  // m_obj rows of k_app
    std::vector<std::vector<double>> rel_slot_pmf;  // m_rel rows of k_rel

    int draw_app(int slot, const Alphabets& a, numkit::RngStream& rng) const;
    int draw_rel(int slot, const Alphabets& a, numkit::RngStream& rng) const;
};

// t = 0 state for a full generation run: Gaussian boxes, detector classes,
// app/rel slots drawn from the strategy. Draw order is boxes, app, rel.
GraphState init_state(const TargetGraph& cond, const InitStrategy& strategy,
                      numkit::RngStream& rng);

}  // namespace flowsg::transport
