#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "flowsg/flowpaths/scheduler.hpp"
#include "flowsg/numkit/rng.hpp"
#include "flowsg/transport/graph_state.hpp"
#include "flowsg/transport/ode.hpp"
#include "flowsg/transport/rates.hpp"

namespace flowsg::transport {

// One denoiser evaluation at (state, t). Posteriors are row-major with one
// row per slot: classes n x k_class (real classes only), appearance
// (n * m_obj) x (k_app + 1), relations (n_edges * m_rel) x (k_rel + 1).
struct DenoiserEval {
    std::vector<double> box_velocity;  // n * 4
    std::vector<double> class_post;
    std::vector<double> app_post;
    std::vector<double> rel_post;
};

using DenoiserFn = std::function<DenoiserEval(const GraphState&, double t)>;

struct SampleOptions {
    int n_steps = 10;
    flowpaths::Scheduler sched;
    OdeMethod ode = OdeMethod::euler;
    double rate_clamp = 1e-3;
    bool transport_boxes = true;
    bool transport_app = true;
    bool transport_rel = true;
    bool transport_classes = false;
};

struct SampleResult {
    GraphState final_state;              // after readout
    std::vector<GraphState> trajectory;  // n_steps + 1 raw states
    DenoiserEval final_eval;             // model outputs at t = 1
    std::vector<double> step_entropy;    // mean posterior entropy per eval
};

// Uniform grid t_k = k / n_steps. Each step advances boxes by one ODE step of
// the predicted velocity and every transported categorical slot by one CTMC
// Euler jump (one uniform draw per slot, in a fixed slot order). Readout
// resolves tokens still at mask with the argmax over real tokens of the
// final posterior and clamps boxes to the unit canvas.
SampleResult hybrid_sample(const DenoiserFn& model, const GraphState& init,
                           const SampleOptions& opt, numkit::RngStream& rng);

double pmf_entropy(const double* p, std::size_t n);
int argmax_real(const double* p, std::size_t n_real);

}  // namespace flowsg::transport
