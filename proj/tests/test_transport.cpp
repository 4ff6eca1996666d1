#include <cmath>
#include <map>
#include <vector>

#include "doctest.h"
#include "flowsg/errors.hpp"
#include "flowsg/transport/graph_state.hpp"
#include "flowsg/transport/init.hpp"
#include "flowsg/transport/ode.hpp"
#include "flowsg/transport/rates.hpp"
#include "flowsg/transport/sampler.hpp"
#include "support/expm.hpp"
#include "support/oracle_denoiser.hpp"

using namespace flowsg;
using namespace flowsg::transport;
using flowsg::flowpaths::Scheduler;
using flowsg::flowpaths::SchedulerKind;

namespace {

TargetGraph demo_target() {
    TargetGraph g;
    g.n_nodes = 4;
    g.alpha = {5, 8, 4, 2, 3};
    g.det_classes = {0, 1, 2, 3};
    g.gt_classes = {0, 1, 2, 4};
    g.app_tokens = {0, 1, 2, 3, 4, 5, 6, 7};
    g.rel_tokens.assign(edge_count(4) * 3, 0);
    for (std::size_t i = 0; i < g.rel_tokens.size(); ++i)
        g.rel_tokens[i] = static_cast<int>(i % 4);
    g.boxes.assign(4 * 4, 0.0);
    for (std::size_t i = 0; i < g.boxes.size(); ++i)
        g.boxes[i] = 0.05 + 0.9 * static_cast<double>(i) / g.boxes.size();
    g.context = {0.5, -0.5, 0.25, 0.0};
    g.n_ctx = 2;
    g.d_ctx = 2;
    return g;
}

// Build the full generator matrix implied by assemble_rates for a fixed
// posterior, so the chain can be compared against its exact exponential.
std::vector<double> generator_matrix(const std::vector<double>& posterior, const Scheduler& s,
                                     double t, double clamp) {
    const std::size_t n = posterior.size();
    std::vector<double> r(n * n, 0.0);
    for (std::size_t z = 0; z < n; ++z) {
        const SlotRates row = assemble_rates(posterior, static_cast<int>(z), s, t, clamp);
        for (std::size_t j = 0; j < n; ++j)
            if (j != z) r[z * n + j] = row.rate[j];
        r[z * n + z] = -row.total;
    }
    return r;
}

}  // namespace

TEST_CASE("edge enumeration is row-major without the diagonal") {
    const auto pairs = edge_pairs(3);
    REQUIRE(pairs.size() == 6);
    CHECK(pairs[0] == std::make_pair(0, 1));
    CHECK(pairs[1] == std::make_pair(0, 2));
    CHECK(pairs[2] == std::make_pair(1, 0));
    CHECK(pairs[3] == std::make_pair(1, 2));
    CHECK(pairs[4] == std::make_pair(2, 0));
    CHECK(pairs[5] == std::make_pair(2, 1));
    for (std::size_t e = 0; e < pairs.size(); ++e)
        CHECK(edge_index(static_cast<std::size_t>(pairs[e].first),
                         static_cast<std::size_t>(pairs[e].second), 3) == e);
    CHECK(edge_count(5) == 20);
    CHECK(edge_count(1) == 0);
    CHECK_THROWS_AS(edge_index(1, 1, 3), std::out_of_range);
}

TEST_CASE("assembled rates are non-negative with zero self-rate") {
    const std::vector<double> post = {0.5, 0.3, 0.2};
    const Scheduler s{SchedulerKind::linear};
    const SlotRates r = assemble_rates(post, 0, s, 0.5);
    CHECK(r.rate[0] == 0.0);
    CHECK(r.rate[1] == doctest::Approx(0.6).epsilon(1e-14));  // 1/(1-0.5) * 0.3
    CHECK(r.rate[2] == doctest::Approx(0.4).epsilon(1e-14));
    CHECK(r.total == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("rate denominator clamps near t = 1") {
    const std::vector<double> post = {0.0, 1.0};
    const Scheduler s{SchedulerKind::linear};
    const SlotRates r = assemble_rates(post, 0, s, 0.9999, 1e-3);
    // 1 - kappa = 1e-4 < 1e-3, so the clamp takes over: rate = 1 / 1e-3.
    CHECK(r.rate[1] == doctest::Approx(1000.0).epsilon(1e-9));
}

TEST_CASE("assemble_rates validates its inputs") {
    const Scheduler s{SchedulerKind::linear};
    CHECK_THROWS_AS(assemble_rates({0.5, 0.5}, 3, s, 0.5), std::out_of_range);
    CHECK_THROWS_AS(assemble_rates({-0.1, 1.1}, 0, s, 0.5), std::invalid_argument);
}

TEST_CASE("euler jump uses one draw and the rate-proportional destination") {
    SlotRates r;
    r.current = 0;
    r.rate = {0.0, 0.6, 0.4};
    r.total = 1.0;
    // dt * total = 1, so any u jumps; destination comes from the scaled draw.
    CHECK(ctmc_euler_slot(r, 1.0, 0.5) == 1);
    CHECK(ctmc_euler_slot(r, 1.0, 0.59) == 1);
    CHECK(ctmc_euler_slot(r, 1.0, 0.61) == 2);
    CHECK(ctmc_euler_slot(r, 1.0, 0.99) == 2);
    // Small dt: jump probability dt * total = 0.01.
    CHECK(ctmc_euler_slot(r, 0.01, 0.5) == 0);
    CHECK(ctmc_euler_slot(r, 0.01, 0.009) != 0);
    CHECK_THROWS_AS(ctmc_euler_slot(r, 0.0, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(ctmc_euler_slot(r, 0.1, 1.0), std::invalid_argument);
}

TEST_CASE("master equation step conserves probability mass") {
    const std::vector<double> post = {0.6, 0.3, 0.1};
    const Scheduler s{SchedulerKind::linear};
    std::vector<double> pmf = {0.2, 0.5, 0.3};
    const auto rates_of = [&](int z) { return assemble_rates(post, z, s, 0.25); };
    for (int i = 0; i < 50; ++i) pmf = master_equation_step(pmf, rates_of, 0.01);
    double sum = 0.0;
    for (double p : pmf) {
        CHECK(p >= -1e-12);
        sum += p;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("master equation Euler approaches the exact exponential") {
    const std::vector<double> post = {0.7, 0.2, 0.1, 0.0};
    const Scheduler s{SchedulerKind::linear};
    const double t_star = 0.3, horizon = 1.0;
    const auto rates_of = [&](int z) { return assemble_rates(post, z, s, t_star); };
    const auto gen = generator_matrix(post, s, t_star, 1e-3);

    std::vector<double> pmf = {0.0, 0.0, 0.0, 1.0};
    const int steps = 2000;
    for (int i = 0; i < steps; ++i) pmf = master_equation_step(pmf, rates_of, horizon / steps);

    auto scaled = gen;
    for (double& x : scaled) x *= horizon;
    const auto truth = testsupport::vec_mat({0.0, 0.0, 0.0, 1.0},
                                            testsupport::expm(scaled, 4), 4);
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::fabs(pmf[j] - truth[j]) < 2e-3);
}

TEST_CASE("simulated chain matches the matrix exponential") {
    // Constant generator frozen at t* so the exact law is p0 expm(T R).
    const std::vector<double> post = {0.7, 0.2, 0.1, 0.0};
    const Scheduler s{SchedulerKind::linear};
    const double t_star = 0.3, horizon = 1.0, dt = 1e-3;
    const int n_states = 4, mask = 3;

    std::vector<SlotRates> by_state(n_states);
    for (int z = 0; z < n_states; ++z) by_state[z] = assemble_rates(post, z, s, t_star);

    const int n_paths = 100000;
    const int n_steps = static_cast<int>(horizon / dt);
    std::vector<double> counts(n_states, 0.0);
    numkit::RngStream root(2718);
    for (int p = 0; p < n_paths; ++p) {
        auto rng = root.substream(static_cast<std::uint64_t>(p));
        int z = mask;
        for (int k = 0; k < n_steps; ++k)
            z = ctmc_euler_slot(by_state[static_cast<std::size_t>(z)], dt, rng.uniform());
        counts[static_cast<std::size_t>(z)] += 1.0;
    }
    for (double& c : counts) c /= n_paths;

    auto scaled = generator_matrix(post, s, t_star, 1e-3);
    for (double& x : scaled) x *= horizon;
    std::vector<double> p0(n_states, 0.0);
    p0[mask] = 1.0;
    const auto truth = testsupport::vec_mat(p0, testsupport::expm(scaled, 4), 4);

    double tv = 0.0;
    for (int j = 0; j < n_states; ++j) tv += std::fabs(counts[j] - truth[j]);
    tv *= 0.5;
    INFO("total variation ", tv);
    CHECK(tv < 5e-3);
}

TEST_CASE("ode euler is exact for constant velocity") {
    const VelocityFn v = [](const std::vector<double>&, double) {
        return std::vector<double>{2.0, -1.0};
    };
    std::vector<double> x = {0.0, 1.0};
    for (int k = 0; k < 10; ++k)
        x = ode_step(x, v, k * 0.1, 0.1, OdeMethod::euler);
    CHECK(x[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(x[1] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("ode midpoint integrates linear-in-time velocity exactly") {
    const VelocityFn v = [](const std::vector<double>&, double t) {
        return std::vector<double>{1.0 + 3.0 * t};
    };
    std::vector<double> x = {0.0};
    const int steps = 7;
    for (int k = 0; k < steps; ++k)
        x = ode_step(x, v, static_cast<double>(k) / steps, 1.0 / steps, OdeMethod::midpoint);
    // integral of 1 + 3t over [0,1] = 2.5
    CHECK(x[0] == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("ode method parsing") {
    CHECK(parse_ode_method("euler") == OdeMethod::euler);
    CHECK(parse_ode_method("midpoint") == OdeMethod::midpoint);
    CHECK_THROWS_AS(parse_ode_method("rk4"), ConfigError);
}

TEST_CASE("init strategies produce the advertised sources") {
    const auto target = demo_target();
    numkit::RngStream rng(42);

    InitStrategy masking{InitKind::masking, {}, {}};
    const GraphState sm = init_state(target, masking, rng);
    sm.validate();
    for (int tok : sm.app_tokens) CHECK(tok == target.alpha.k_app);
    for (int tok : sm.rel_tokens) CHECK(tok == target.alpha.k_rel);
    CHECK(sm.classes == target.det_classes);
    CHECK(sm.context == target.context);

    InitStrategy uniform{InitKind::uniform, {}, {}};
    int mask_seen = 0;
    std::vector<int> counts(static_cast<std::size_t>(target.alpha.k_rel), 0);
    for (int rep = 0; rep < 2000; ++rep) {
        const GraphState su = init_state(target, uniform, rng);
        for (int tok : su.rel_tokens) {
            if (tok == target.alpha.k_rel)
                ++mask_seen;
            else
                ++counts[static_cast<std::size_t>(tok)];
        }
    }
    CHECK(mask_seen == 0);
    const double expect = 2000.0 * edge_count(4) * 3 / target.alpha.k_rel;
    for (int c : counts) CHECK(std::fabs(c - expect) / expect < 0.05);

    InitStrategy marginal;
    marginal.kind = InitKind::marginal;
    marginal.app_slot_pmf = {{0.125, 0.125, 0.125, 0.125, 0.125, 0.125, 0.125, 0.125},
                             {0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0}};
    marginal.rel_slot_pmf = {{0.7, 0.1, 0.1, 0.1},
                             {0.1, 0.7, 0.1, 0.1},
                             {0.25, 0.25, 0.25, 0.25}};
    int slot1_low = 0, total1 = 0;
    for (int rep = 0; rep < 3000; ++rep) {
        const GraphState sg = init_state(target, marginal, rng);
        for (std::size_t i = 0; i < 4; ++i) {
            const int tok = sg.app_tokens[i * 2 + 1];
            CHECK(tok <= 1);  // slot 1 marginal places mass on tokens 0 and 1 only
            ++total1;
            if (tok == 0) ++slot1_low;
        }
    }
    CHECK(std::fabs(slot1_low / static_cast<double>(total1) - 0.5) < 0.03);

    InitStrategy absorbing = marginal;
    absorbing.kind = InitKind::absorbing;
    const GraphState sa = init_state(target, absorbing, rng);
    const std::size_t n_e = edge_count(4);
    for (std::size_t e = 0; e < n_e; ++e) {
        CHECK(sa.rel_tokens[e * 3 + 0] == 0);
        CHECK(sa.rel_tokens[e * 3 + 1] == 1);
        CHECK(sa.rel_tokens[e * 3 + 2] == 0);  // ties break to the lowest index
    }

    InitStrategy broken;
    broken.kind = InitKind::marginal;
    CHECK_THROWS_AS(init_state(target, broken, rng), std::invalid_argument);
}

TEST_CASE("init strategy names round trip") {
    for (const char* name : {"uniform", "masking", "marginal", "absorbing"})
        CHECK(init_kind_name(parse_init_kind(name)) == name);
    CHECK_THROWS_AS(parse_init_kind("gauss"), ConfigError);
}

TEST_CASE("hybrid sampling with an oracle denoiser recovers the target") {
    const auto target = demo_target();
    const auto model = testsupport::oracle_denoiser(target, Scheduler{});
    numkit::RngStream rng(7);

    SampleOptions opt;
    opt.n_steps = 10;
    InitStrategy masking{InitKind::masking, {}, {}};
    numkit::RngStream init_rng(11);
    const GraphState start = init_state(target, masking, init_rng);
    const SampleResult res = hybrid_sample(model, start, opt, rng);

    CHECK(res.trajectory.size() == 11);
    CHECK(res.step_entropy.size() == 11);
    CHECK(res.final_state.app_tokens == target.app_tokens);
    CHECK(res.final_state.rel_tokens == target.rel_tokens);
    for (std::size_t i = 0; i < target.boxes.size(); ++i)
        CHECK(std::fabs(res.final_state.boxes[i] - target.boxes[i]) < 0.01);
    // Oracle posteriors are point masses, so entropy is zero throughout.
    for (double h : res.step_entropy) CHECK(h == 0.0);
}

TEST_CASE("hybrid sampling is deterministic given the stream") {
    const auto target = demo_target();
    const auto model = testsupport::oracle_denoiser(target, Scheduler{});
    SampleOptions opt;
    InitStrategy uniform{InitKind::uniform, {}, {}};

    auto run = [&] {
        numkit::RngStream init_rng(3);
        numkit::RngStream rng(4);
        const GraphState start = init_state(target, uniform, init_rng);
        return hybrid_sample(model, start, opt, rng);
    };
    const SampleResult a = run();
    const SampleResult b = run();
    CHECK(a.final_state.boxes == b.final_state.boxes);
    CHECK(a.final_state.app_tokens == b.final_state.app_tokens);
    CHECK(a.final_state.rel_tokens == b.final_state.rel_tokens);
    for (std::size_t k = 0; k < a.trajectory.size(); ++k) {
        CHECK(a.trajectory[k].rel_tokens == b.trajectory[k].rel_tokens);
        CHECK(a.trajectory[k].boxes == b.trajectory[k].boxes);
    }
}

TEST_CASE("fixed nodes stay fixed when their transport is disabled") {
    const auto target = demo_target();
    const auto model = testsupport::oracle_denoiser(target, Scheduler{});
    numkit::RngStream rng(9);

    // Relation-only transport from a clean graph, the conditioned protocol.
    GraphState start;
    start.n_nodes = target.n_nodes;
    start.alpha = target.alpha;
    start.classes = target.gt_classes;
    start.app_tokens = target.app_tokens;
    start.boxes = target.boxes;
    start.context = target.context;
    start.n_ctx = target.n_ctx;
    start.d_ctx = target.d_ctx;
    start.rel_tokens.assign(edge_count(target.n_nodes) *
                                static_cast<std::size_t>(target.alpha.m_rel),
                            target.alpha.k_rel);

    SampleOptions opt;
    opt.transport_boxes = false;
    opt.transport_app = false;
    const SampleResult res = hybrid_sample(model, start, opt, rng);
    CHECK(res.final_state.boxes == target.boxes);
    CHECK(res.final_state.app_tokens == target.app_tokens);
    CHECK(res.final_state.classes == target.gt_classes);
    CHECK(res.final_state.rel_tokens == target.rel_tokens);
}

TEST_CASE("graph state validation catches inconsistencies") {
    GraphState s;
    s.n_nodes = 2;
    s.alpha = {3, 4, 2, 1, 1};
    s.classes = {0, 1};
    s.app_tokens = {0, 4};  // 4 == mask is legal
    s.rel_tokens = {0, 2};
    s.boxes.assign(8, 0.5);
    s.validate();
    s.rel_tokens = {0, 3};  // beyond mask
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s.rel_tokens = {0};
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}
