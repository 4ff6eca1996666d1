#include "flowsg/transport/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace flowsg::transport {

namespace {

void check_eval(const DenoiserEval& ev, const GraphState& s) {
    const std::size_t n = s.n_nodes;
    const std::size_t n_e = edge_count(n);
    const auto& a = s.alpha;
    if (ev.box_velocity.size() != n * 4)
        throw std::invalid_argument("hybrid_sample: box_velocity size mismatch");
    if (ev.class_post.size() != n * static_cast<std::size_t>(a.k_class))
        throw std::invalid_argument("hybrid_sample: class_post size mismatch");
    if (ev.app_post.size() != n * static_cast<std::size_t>(a.m_obj) *
                                  static_cast<std::size_t>(a.k_app + 1))
        throw std::invalid_argument("hybrid_sample: app_post size mismatch");
    if (ev.rel_post.size() != n_e * static_cast<std::size_t>(a.m_rel) *
                                  static_cast<std::size_t>(a.k_rel + 1))
        throw std::invalid_argument("hybrid_sample: rel_post size mismatch");
}

// Advance every slot of one token family by one jump step.
void step_tokens(std::vector<int>& tokens, const std::vector<double>& post, int width,
                 const flowpaths::Scheduler& sched, double t, double dt, double clamp,
                 numkit::RngStream& rng) {
    std::vector<double> row(static_cast<std::size_t>(width));
    for (std::size_t s = 0; s < tokens.size(); ++s) {
        const double* p = post.data() + s * static_cast<std::size_t>(width);
        row.assign(p, p + width);
        const SlotRates rates = assemble_rates(row, tokens[s], sched, t, clamp);
        tokens[s] = ctmc_euler_slot(rates, dt, rng.uniform());
    }
}

double family_entropy(const std::vector<double>& post, int width, double& weight_out) {
    double h = 0.0;
    const std::size_t rows = post.size() / static_cast<std::size_t>(width);
    for (std::size_t r = 0; r < rows; ++r)
        h += pmf_entropy(post.data() + r * static_cast<std::size_t>(width),
                         static_cast<std::size_t>(width));
    weight_out = static_cast<double>(rows);
    return h;
}

double mean_entropy(const DenoiserEval& ev, const GraphState& s) {
    double h = 0.0, total = 0.0, w = 0.0;
    h += family_entropy(ev.app_post, s.alpha.k_app + 1, w);
    total += w;
    if (!ev.rel_post.empty()) {
        h += family_entropy(ev.rel_post, s.alpha.k_rel + 1, w);
        total += w;
    }
    return total > 0.0 ? h / total : 0.0;
}

}  // namespace

double pmf_entropy(const double* p, std::size_t n) {
    double h = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
    return h;
}

int argmax_real(const double* p, std::size_t n_real) {
    return static_cast<int>(std::max_element(p, p + n_real) - p);
}

SampleResult hybrid_sample(const DenoiserFn& model, const GraphState& init,
                           const SampleOptions& opt, numkit::RngStream& rng) {
    if (opt.n_steps < 1) throw std::invalid_argument("hybrid_sample: n_steps must be >= 1");
    init.validate();

    SampleResult out;
    GraphState state = init;
    out.trajectory.reserve(static_cast<std::size_t>(opt.n_steps) + 1);
    out.trajectory.push_back(state);

    const double dt = 1.0 / static_cast<double>(opt.n_steps);
    const auto& a = init.alpha;

    for (int k = 0; k < opt.n_steps; ++k) {
        const double t = static_cast<double>(k) * dt;
        const DenoiserEval ev = model(state, t);
        check_eval(ev, state);
        out.step_entropy.push_back(mean_entropy(ev, state));

        if (opt.transport_boxes) {
            const VelocityFn vfn = [&](const std::vector<double>& boxes,
                                       double tq) -> std::vector<double> {
                if (boxes == state.boxes && tq == t) return ev.box_velocity;
                GraphState probe = state;
                probe.boxes = boxes;
                DenoiserEval mid = model(probe, tq);
                check_eval(mid, probe);
                return mid.box_velocity;
            };
            state.boxes = ode_step(state.boxes, vfn, t, dt, opt.ode);
        }
        if (opt.transport_classes) {
            std::vector<double> row(static_cast<std::size_t>(a.k_class));
            for (std::size_t i = 0; i < state.n_nodes; ++i) {
                const double* p = ev.class_post.data() + i * static_cast<std::size_t>(a.k_class);
                row.assign(p, p + a.k_class);
                const SlotRates rates = assemble_rates(row, state.classes[i], opt.sched, t,
                                                       opt.rate_clamp);
                state.classes[i] = ctmc_euler_slot(rates, dt, rng.uniform());
            }
        }
        if (opt.transport_app)
            step_tokens(state.app_tokens, ev.app_post, a.k_app + 1, opt.sched, t, dt,
                        opt.rate_clamp, rng);
        if (opt.transport_rel)
            step_tokens(state.rel_tokens, ev.rel_post, a.k_rel + 1, opt.sched, t, dt,
                        opt.rate_clamp, rng);

        out.trajectory.push_back(state);
    }

    out.final_eval = model(state, 1.0);
    check_eval(out.final_eval, state);
    out.step_entropy.push_back(mean_entropy(out.final_eval, state));

    // Readout: resolve residual masks with the final posterior, clamp boxes.
    GraphState fin = state;
    for (std::size_t s = 0; s < fin.app_tokens.size(); ++s)
        if (fin.app_tokens[s] == a.k_app)
            fin.app_tokens[s] = argmax_real(
                out.final_eval.app_post.data() + s * static_cast<std::size_t>(a.k_app + 1),
                static_cast<std::size_t>(a.k_app));
    for (std::size_t s = 0; s < fin.rel_tokens.size(); ++s)
        if (fin.rel_tokens[s] == a.k_rel)
            fin.rel_tokens[s] = argmax_real(
                out.final_eval.rel_post.data() + s * static_cast<std::size_t>(a.k_rel + 1),
                static_cast<std::size_t>(a.k_rel));
    if (opt.transport_boxes)
        for (double& b : fin.boxes) b = std::clamp(b, 0.0, 1.0);
    out.final_state = std::move(fin);
    return out;
}

}  // namespace flowsg::transport
