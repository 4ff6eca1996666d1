#pragma once

#include <vector>

#include "flowsg/flowpaths/scheduler.hpp"
#include "flowsg/numkit/rng.hpp"
#include "flowsg/transport/graph_state.hpp"

namespace flowsg::flowpaths {

struct ContinuousPathPoint {
    std::vector<double> value;     // (1 - kappa) g0 + kappa g1
    std::vector<double> velocity;  // kappa_dot (g1 - g0)
};

ContinuousPathPoint interp_continuous(const std::vector<double>& g0,
                                      const std::vector<double>& g1, const Scheduler& sched,
                                      double t);

// Two-point mixture (1 - kappa) q0 + kappa q1 over one categorical alphabet.
// Inputs must be PMFs (non-negative, summing to 1 within 1e-9).
std::vector<double> interp_discrete(const std::vector<double>& q0, const std::vector<double>& q1,
                                    const Scheduler& sched, double t);

// One corruption draw for training: boxes move along a Gaussian-source linear
// path; each categorical slot is drawn from its two-point path. Token sources:
// appearance and relation slots start from the mask token, classes start from
// the detector class (and only move when transport_classes is set).
struct CorruptionSample {
    transport::GraphState state;
    std::vector<double> box_velocity;  // n * 4, matches state.boxes layout
};

CorruptionSample sample_corruption(const transport::TargetGraph& target, const Scheduler& sched,
                                   double t, numkit::RngStream& rng,
                                   bool transport_classes = false);

}  // namespace flowsg::flowpaths
