#include "flowsg/transport/init.hpp"

#include <algorithm>
#include <stdexcept>

#include "flowsg/errors.hpp"

namespace flowsg::transport {

InitKind parse_init_kind(const std::string& name) {
    if (name == "uniform") return InitKind::uniform;
    if (name == "masking") return InitKind::masking;
    if (name == "marginal") return InitKind::marginal;
    if (name == "absorbing") return InitKind::absorbing;
    throw ConfigError("unknown init strategy '" + name +
                      "' (expected uniform, masking, marginal or absorbing)");
}

std::string init_kind_name(InitKind k) {
    switch (k) {
        case InitKind::uniform: return "uniform";
        case InitKind::masking: return "masking";
        case InitKind::marginal: return "marginal";
        case InitKind::absorbing: return "absorbing";
    }
    throw std::logic_error("init_kind_name: unknown kind");
}

namespace {

int draw_slot(InitKind kind, const std::vector<std::vector<double>>& pmfs, int slot,
              int k_real, int mask_token, numkit::RngStream& rng) {
    switch (kind) {
        case InitKind::uniform: return rng.uniform_int(k_real);
        case InitKind::masking: return mask_token;
        case InitKind::marginal:
        case InitKind::absorbing: {
            if (slot < 0 || static_cast<std::size_t>(slot) >= pmfs.size())
                throw std::invalid_argument("InitStrategy: missing slot marginals");
            const auto& pmf = pmfs[static_cast<std::size_t>(slot)];
            if (pmf.size() != static_cast<std::size_t>(k_real))
                throw std::invalid_argument("InitStrategy: slot marginal has wrong size");
            if (kind == InitKind::marginal) return rng.categorical(pmf);
            return static_cast<int>(
                std::max_element(pmf.begin(), pmf.end()) - pmf.begin());
        }
    }
    throw std::logic_error("InitStrategy: unknown kind");
}

}  // namespace

int InitStrategy::draw_app(int slot, const Alphabets& a, numkit::RngStream& rng) const {
    return draw_slot(kind, app_slot_pmf, slot, a.k_app, a.k_app, rng);
}

int InitStrategy::draw_rel(int slot, const Alphabets& a, numkit::RngStream& rng) const {
    return draw_slot(kind, rel_slot_pmf, slot, a.k_rel, a.k_rel, rng);
}

GraphState init_state(const TargetGraph& cond, const InitStrategy& strategy,
                      numkit::RngStream& rng) {
    GraphState s;
    s.n_nodes = cond.n_nodes;
    s.alpha = cond.alpha;
    s.classes = cond.det_classes;
    s.context = cond.context;
    s.n_ctx = cond.n_ctx;
    s.d_ctx = cond.d_ctx;
    s.boxes.resize(cond.n_nodes * 4);
    for (double& b : s.boxes) b = rng.normal();
    s.app_tokens.resize(cond.n_nodes * static_cast<std::size_t>(cond.alpha.m_obj));
    for (std::size_t i = 0; i < cond.n_nodes; ++i)
        for (int m = 0; m < cond.alpha.m_obj; ++m)
            s.app_tokens[i * cond.alpha.m_obj + m] = strategy.draw_app(m, cond.alpha, rng);
    const std::size_t n_e = edge_count(cond.n_nodes);
    s.rel_tokens.resize(n_e * static_cast<std::size_t>(cond.alpha.m_rel));
    for (std::size_t e = 0; e < n_e; ++e)
        for (int m = 0; m < cond.alpha.m_rel; ++m)
            s.rel_tokens[e * cond.alpha.m_rel + m] = strategy.draw_rel(m, cond.alpha, rng);
    return s;
}

}  // namespace flowsg::transport
