#include "flowsg/flowpaths/paths.hpp"

#include <cmath>
#include <stdexcept>

namespace flowsg::flowpaths {

namespace {
void check_pmf(const std::vector<double>& q, const char* which) {
    double sum = 0.0;
    for (double p : q) {
        if (!(p >= 0.0))
            throw std::invalid_argument(std::string("interp_discrete: ") + which +
                                        " has a negative entry");
        sum += p;
    }
    if (std::fabs(sum - 1.0) > 1e-9)
        throw std::invalid_argument(std::string("interp_discrete: ") + which +
                                    " does not sum to 1");
}
}  // namespace

ContinuousPathPoint interp_continuous(const std::vector<double>& g0,
                                      const std::vector<double>& g1, const Scheduler& sched,
                                      double t) {
    if (g0.size() != g1.size())
        throw std::invalid_argument("interp_continuous: endpoint size mismatch");
    const double k = sched.kappa(t);
    const double kd = sched.kappa_dot(t);
    ContinuousPathPoint out;
    out.value.resize(g0.size());
    out.velocity.resize(g0.size());
    for (std::size_t i = 0; i < g0.size(); ++i) {
        out.value[i] = (1.0 - k) * g0[i] + k * g1[i];
        out.velocity[i] = kd * (g1[i] - g0[i]);
    }
    return out;
}

std::vector<double> interp_discrete(const std::vector<double>& q0, const std::vector<double>& q1,
                                    const Scheduler& sched, double t) {
    if (q0.size() != q1.size())
        throw std::invalid_argument("interp_discrete: endpoint size mismatch");
    check_pmf(q0, "q0");
    check_pmf(q1, "q1");
    const double k = sched.kappa(t);
    std::vector<double> out(q0.size());
    for (std::size_t i = 0; i < q0.size(); ++i) out[i] = (1.0 - k) * q0[i] + k * q1[i];
    return out;
}

CorruptionSample sample_corruption(const transport::TargetGraph& target, const Scheduler& sched,
                                   double t, numkit::RngStream& rng, bool transport_classes) {
    const double k = sched.kappa(t);
    const double kd = sched.kappa_dot(t);
    const auto& a = target.alpha;

    CorruptionSample out;
    transport::GraphState& s = out.state;
    s.n_nodes = target.n_nodes;
    s.alpha = a;
    s.context = target.context;
    s.n_ctx = target.n_ctx;
    s.d_ctx = target.d_ctx;

    // Boxes: Gaussian source, draw order is fixed (boxes, classes, app, rel)
    // so one stream per example reproduces exactly.
    s.boxes.resize(target.boxes.size());
    out.box_velocity.resize(target.boxes.size());
    for (std::size_t i = 0; i < target.boxes.size(); ++i) {
        const double g0 = rng.normal();
        s.boxes[i] = (1.0 - k) * g0 + k * target.boxes[i];
        out.box_velocity[i] = kd * (target.boxes[i] - g0);
    }

    // Each categorical slot sits at its target with probability kappa and at
    // its source otherwise; that is exactly the two-point path marginal.
    s.classes.resize(target.n_nodes);
    for (std::size_t i = 0; i < target.n_nodes; ++i) {
        if (transport_classes)
            s.classes[i] = rng.uniform() < k ? target.gt_classes[i] : target.det_classes[i];
        else
            s.classes[i] = target.det_classes[i];
    }

    s.app_tokens.resize(target.app_tokens.size());
    for (std::size_t i = 0; i < target.app_tokens.size(); ++i)
        s.app_tokens[i] = rng.uniform() < k ? target.app_tokens[i] : a.k_app;

    s.rel_tokens.resize(target.rel_tokens.size());
    for (std::size_t i = 0; i < target.rel_tokens.size(); ++i)
        s.rel_tokens[i] = rng.uniform() < k ? target.rel_tokens[i] : a.k_rel;

    return out;
}

}  // namespace flowsg::flowpaths
