#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "flowsg/transport/graph_state.hpp"
#include "flowsg/transport/sampler.hpp"

// Denoiser that knows the target graph exactly: posteriors are point masses
// on the target tokens and the velocity is the conditional-path field
// kappa_dot / (1 - kappa) * (g1 - x), which transports any point onto the
// target. Lets transport tests run without a trained model.
namespace testsupport {

inline flowsg::transport::DenoiserFn oracle_denoiser(
    const flowsg::transport::TargetGraph& target, flowsg::flowpaths::Scheduler sched,
    double denom_clamp = 1e-3) {
    return [target, sched, denom_clamp](const flowsg::transport::GraphState& s,
                                        double t) -> flowsg::transport::DenoiserEval {
        using flowsg::transport::edge_count;
        const auto& a = target.alpha;
        flowsg::transport::DenoiserEval ev;
        const double k = sched.kappa(t);
        const double coeff = sched.kappa_dot(t) / std::max(1.0 - k, denom_clamp);
        ev.box_velocity.resize(s.boxes.size());
        for (std::size_t i = 0; i < s.boxes.size(); ++i)
            ev.box_velocity[i] = coeff * (target.boxes[i] - s.boxes[i]);

        ev.class_post.assign(s.n_nodes * static_cast<std::size_t>(a.k_class), 0.0);
        for (std::size_t i = 0; i < s.n_nodes; ++i)
            ev.class_post[i * a.k_class + static_cast<std::size_t>(target.gt_classes[i])] = 1.0;

        ev.app_post.assign(s.n_nodes * static_cast<std::size_t>(a.m_obj) *
                               static_cast<std::size_t>(a.k_app + 1),
                           0.0);
        for (std::size_t sl = 0; sl < target.app_tokens.size(); ++sl)
            ev.app_post[sl * static_cast<std::size_t>(a.k_app + 1) +
                        static_cast<std::size_t>(target.app_tokens[sl])] = 1.0;

        ev.rel_post.assign(edge_count(s.n_nodes) * static_cast<std::size_t>(a.m_rel) *
                               static_cast<std::size_t>(a.k_rel + 1),
                           0.0);
        for (std::size_t sl = 0; sl < target.rel_tokens.size(); ++sl)
            ev.rel_post[sl * static_cast<std::size_t>(a.k_rel + 1) +
                        static_cast<std::size_t>(target.rel_tokens[sl])] = 1.0;
        return ev;
    };
}

}  // namespace testsupport
