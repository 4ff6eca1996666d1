#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "flowsg/denoiser/denoiser.hpp"
#include "flowsg/errors.hpp"
#include "flowsg/flowpaths/paths.hpp"
#include "flowsg/flowpaths/scheduler.hpp"
#include "flowsg/numkit/grad_check.hpp"
#include "flowsg/numkit/rng.hpp"
#include "flowsg/numkit/tape.hpp"
#include "flowsg/trainer/trainer.hpp"
#include "flowsg/transport/graph_state.hpp"

using namespace flowsg;

namespace {

denoiser::DenoiserConfig small_cfg() {
    denoiser::DenoiserConfig cfg;
    cfg.l_blocks = 1;
    cfg.heads = 2;
    cfg.d_model = 8;
    cfg.k_class = 3;
    cfg.k_app = 5;
    cfg.k_rel = 4;
    cfg.m_obj = 2;
    cfg.m_rel = 2;
    cfg.time_dim = 8;
    cfg.w_app = 4;
    cfg.w_rel = 4;
    cfg.d_ctx = 6;
    return cfg;
}

transport::Alphabets small_alpha() {
    transport::Alphabets a;
    a.k_class = 3;
    a.k_app = 5;
    a.k_rel = 4;
    a.m_obj = 2;
    a.m_rel = 2;
    return a;
}

transport::TargetGraph make_target(std::size_t n, numkit::RngStream& rng) {
    transport::TargetGraph tg;
    tg.n_nodes = n;
    tg.alpha = small_alpha();
    tg.det_classes.resize(n);
    tg.gt_classes.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        tg.gt_classes[i] = rng.uniform_int(tg.alpha.k_class);
        tg.det_classes[i] = rng.uniform_int(tg.alpha.k_class);
    }
    tg.app_tokens.resize(n * 2);
    for (auto& tk : tg.app_tokens) tk = rng.uniform_int(tg.alpha.k_app);
    const std::size_t e = transport::edge_count(n);
    tg.rel_tokens.resize(e * 2);
    for (auto& tk : tg.rel_tokens) tk = rng.uniform_int(tg.alpha.k_rel);
    tg.boxes.resize(n * 4);
    for (auto& b : tg.boxes) b = 0.3 * rng.normal();
    tg.n_ctx = n + 1;
    tg.d_ctx = 6;
    tg.context.resize(tg.n_ctx * 6);
    for (auto& c : tg.context) c = rng.normal();
    return tg;
}

std::vector<transport::TargetGraph> make_dataset(std::size_t count, std::uint64_t seed) {
    numkit::RngStream rng(seed);
    std::vector<transport::TargetGraph> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(make_target(2 + i % 3, rng));
    return out;
}

denoiser::DenoiserParams warm_params(std::uint64_t seed, double scale = 0.05) {
    numkit::RngStream rng(seed);
    auto p = denoiser::init_params(small_cfg(), rng);
    numkit::RngStream w(seed + 1);
    for (auto& [name, arr] : p.tensors)
        for (auto& v : arr.data) v += scale * w.normal();
    return p;
}

std::string temp_dir(const char* tag) {
    auto dir = std::filesystem::temp_directory_path() / (std::string("flowsg_trainer_") + tag);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

}  // namespace

TEST_CASE("train config defaults, file round trip, and rejection of bad input") {
    trainer::TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.lambda == 1.0);
    CHECK(cfg.lr == 1e-4);
    CHECK(cfg.weight_decay == 0.02);
    CHECK(cfg.beta1 == 0.9);
    CHECK(cfg.beta2 == 0.999);
    CHECK(cfg.eps == 1e-8);
    CHECK(cfg.edge_only_prob == 0.2);
    CHECK(cfg.schedule == "cosine");

    const auto dir = temp_dir("config");
    cfg.lambda = 2.5;
    cfg.batch = 7;
    cfg.seed = 99;
    cfg.transport_classes = true;
    trainer::save_config(dir + "/c.txt", cfg);
    const auto back = trainer::config_from_file(dir + "/c.txt");
    CHECK(back.lambda == cfg.lambda);
    CHECK(back.batch == cfg.batch);
    CHECK(back.seed == cfg.seed);
    CHECK(back.transport_classes == cfg.transport_classes);
    CHECK(back.schedule == cfg.schedule);

    {
        std::ofstream f(dir + "/partial.txt");
        f << "# comment line\n\n  lr = 0.5   # trailing comment\nbatch=3\n";
    }
    const auto partial = trainer::config_from_file(dir + "/partial.txt");
    CHECK(partial.lr == 0.5);
    CHECK(partial.batch == 3);
    CHECK(partial.lambda == 1.0);  // untouched default

    CHECK_THROWS_AS(trainer::config_from_map({{"bogus", "1"}}), ConfigError);
    CHECK_THROWS_AS(trainer::config_from_map({{"lr", "fast"}}), ConfigError);
    CHECK_THROWS_AS(trainer::config_from_map({{"batch", "2.5"}}), ConfigError);
    CHECK_THROWS_AS(trainer::config_from_map({{"transport_classes", "yes"}}), ConfigError);
    CHECK_THROWS_AS(trainer::config_from_map({{"lambda", "-1"}}), ConfigError);
    CHECK_THROWS_AS(trainer::config_from_map({{"edge_only_prob", "1.5"}}), ConfigError);
    CHECK_THROWS_AS(trainer::config_from_map({{"schedule", "quadratic"}}), ConfigError);
    CHECK_THROWS_AS(trainer::config_from_file(dir + "/nope.txt"), ConfigError);
    {
        std::ofstream f(dir + "/bad.txt");
        f << "just words\n";
    }
    CHECK_THROWS_AS(trainer::config_from_file(dir + "/bad.txt"), ConfigError);
    {
        std::ofstream f(dir + "/dup.txt");
        f << "lr = 1\nlr = 2\n";
    }
    CHECK_THROWS_AS(trainer::config_from_file(dir + "/dup.txt"), ConfigError);
}

TEST_CASE("batches are reproducible and consistent with the interpolation path") {
    const auto data = make_dataset(9, 41);
    trainer::TrainConfig cfg;
    cfg.batch = 16;
    cfg.seed = 5;
    const numkit::RngStream base(cfg.seed, 123);

    const auto b1 = trainer::make_batch(data, cfg, 3, base);
    const auto b2 = trainer::make_batch(data, cfg, 3, base);
    REQUIRE(b1.examples.size() == 16);
    for (std::size_t k = 0; k < b1.examples.size(); ++k) {
        const auto& x = b1.examples[k];
        const auto& y = b2.examples[k];
        CHECK(x.target_index == y.target_index);
        CHECK(x.t == y.t);
        CHECK(x.edge_only == y.edge_only);
        CHECK(x.state.boxes == y.state.boxes);
        CHECK(x.state.app_tokens == y.state.app_tokens);
        CHECK(x.state.rel_tokens == y.state.rel_tokens);
        CHECK(x.u_star == y.u_star);
        CHECK(x.stream_key == static_cast<std::uint64_t>(3) * 16 + k);
    }

    // The velocity target must satisfy u* = kappa_dot (g1 - g0) with g0
    // recovered from the corrupted boxes, independent of how it was drawn.
    const auto sched = flowpaths::Scheduler::parse(cfg.schedule);
    for (const auto& ex : b1.examples) {
        CHECK(ex.t >= 0.0);
        CHECK(ex.t < 1.0);
        REQUIRE(ex.target_index < data.size());
        const auto& tg = data[ex.target_index];
        const double kap = sched.kappa(ex.t);
        const double kd = sched.kappa_dot(ex.t);
        if (ex.edge_only) {
            CHECK(ex.state.boxes == tg.boxes);
            CHECK(ex.state.app_tokens == tg.app_tokens);
        } else if (kap < 0.999) {
            for (std::size_t i = 0; i < ex.u_star.size(); ++i) {
                const double g0 = (ex.state.boxes[i] - kap * tg.boxes[i]) / (1.0 - kap);
                CHECK(ex.u_star[i] == doctest::Approx(kd * (tg.boxes[i] - g0)).epsilon(1e-9));
            }
        }
        for (int tk : ex.state.rel_tokens) CHECK(tk <= small_alpha().k_rel);
    }

    const auto b3 = trainer::make_batch(data, cfg, 4, base);
    bool any_diff = false;
    for (std::size_t k = 0; k < b3.examples.size(); ++k)
        if (b3.examples[k].t != b1.examples[k].t) any_diff = true;
    CHECK(any_diff);

    CHECK_THROWS_AS(trainer::make_batch({}, cfg, 0, base), DataError);
}

TEST_CASE("edge-only refinement fires at its configured rate") {
    const auto data = make_dataset(4, 7);
    trainer::TrainConfig cfg;
    cfg.batch = 100;
    const numkit::RngStream base(11, 9);
    std::size_t edge_only = 0;
    for (int step = 0; step < 100; ++step) {
        const auto b = trainer::make_batch(data, cfg, step, base);
        for (const auto& ex : b.examples)
            if (ex.edge_only) ++edge_only;
    }
    const double frac = static_cast<double>(edge_only) / 1e4;
    CHECK(frac > 0.19);
    CHECK(frac < 0.21);
}

TEST_CASE("velocity loss handles perfect predictions, offsets, and masks") {
    numkit::Tape tape;
    const std::vector<double> u = {0.3, -1.2, 0.0, 2.5, 0.4, -0.7, 1.1, 0.05};
    numkit::Array pred(2, 4, 0.0);
    pred.data = u;
    const int v = tape.param(pred);

    const std::vector<double> ones(8, 1.0);
    const int exact = trainer::cfm_loss(tape, v, u, ones);
    CHECK(tape.value(exact).data[0] == 0.0);

    std::vector<double> shifted = u;
    for (double& x : shifted) x -= 1.0;
    const int off = trainer::cfm_loss(tape, v, shifted, ones);
    CHECK(tape.value(off).data[0] == doctest::Approx(1.0).epsilon(1e-12));

    // Mean runs over unmasked entries only: diffs {1, 2} at the live slots.
    std::vector<double> target = u;
    target[0] -= 1.0;
    target[2] -= 2.0;
    target[1] += 50.0;  // masked, must not matter
    const std::vector<double> mask = {1, 0, 1, 0, 0, 0, 0, 0};
    const int partial = trainer::cfm_loss(tape, v, target, mask);
    CHECK(tape.value(partial).data[0] == doctest::Approx(2.5).epsilon(1e-12));

    const std::vector<double> none(8, 0.0);
    const int blank = trainer::cfm_loss(tape, v, shifted, none);
    CHECK(tape.value(blank).data[0] == 0.0);
    tape.backward(blank);
    for (double g : tape.grad(v).data) CHECK(g == 0.0);

    CHECK_THROWS_AS(trainer::cfm_loss(tape, v, {1.0, 2.0}, ones), std::invalid_argument);
    std::vector<double> soft(8, 0.5);
    CHECK_THROWS_AS(trainer::cfm_loss(tape, v, u, soft), std::invalid_argument);
}

TEST_CASE("token loss matches closed forms and rejects mask targets") {
    const auto alpha = small_alpha();
    const std::size_t n = 3, e = 6;
    numkit::Tape tape;
    std::vector<int> app_ids, rel_ids;
    for (int m = 0; m < alpha.m_obj; ++m)
        app_ids.push_back(tape.param(numkit::Array(n, alpha.k_app + 1, 0.0)));
    for (int m = 0; m < alpha.m_rel; ++m)
        rel_ids.push_back(tape.param(numkit::Array(e, alpha.k_rel + 1, 0.0)));
    std::vector<int> app_t = {0, 1, 2, 3, 4, 0};
    std::vector<int> rel_t(e * 2, 1);

    // Uniform logits: every slot contributes ln(K + 1).
    const int rel_only =
        trainer::dfm_loss(tape, app_ids, rel_ids, app_t, rel_t, alpha, false);
    CHECK(tape.value(rel_only).data[0] == doctest::Approx(std::log(5.0)).epsilon(1e-12));

    const int both = trainer::dfm_loss(tape, app_ids, rel_ids, app_t, rel_t, alpha, true);
    const double slots_app = 6.0, slots_rel = 12.0;
    const double expected =
        (slots_app * std::log(6.0) + slots_rel * std::log(5.0)) / (slots_app + slots_rel);
    CHECK(tape.value(both).data[0] == doctest::Approx(expected).epsilon(1e-12));

    // Near-delta logits on the targets drive the loss to zero.
    std::vector<int> sharp_app, sharp_rel;
    for (int m = 0; m < alpha.m_obj; ++m) {
        numkit::Array l(n, alpha.k_app + 1, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            l.at(i, static_cast<std::size_t>(app_t[i * 2 + m])) = 50.0;
        sharp_app.push_back(tape.param(l));
    }
    for (int m = 0; m < alpha.m_rel; ++m) {
        numkit::Array l(e, alpha.k_rel + 1, 0.0);
        for (std::size_t i = 0; i < e; ++i)
            l.at(i, static_cast<std::size_t>(rel_t[i * 2 + m])) = 50.0;
        sharp_rel.push_back(tape.param(l));
    }
    const int sharp = trainer::dfm_loss(tape, sharp_app, sharp_rel, app_t, rel_t, alpha, true);
    CHECK(tape.value(sharp).data[0] < 1e-8);

    std::vector<int> masked_app = app_t;
    masked_app[3] = alpha.k_app;  // the mask token
    CHECK_THROWS_AS(trainer::dfm_loss(tape, app_ids, rel_ids, masked_app, rel_t, alpha, true),
                    std::invalid_argument);
    std::vector<int> bad_rel = rel_t;
    bad_rel[0] = -1;
    CHECK_THROWS_AS(trainer::dfm_loss(tape, app_ids, rel_ids, app_t, bad_rel, alpha, true),
                    std::invalid_argument);
    std::vector<int> ragged(app_t.begin(), app_t.end() - 1);
    CHECK_THROWS_AS(trainer::dfm_loss(tape, app_ids, rel_ids, ragged, rel_t, alpha, true),
                    std::invalid_argument);
}

TEST_CASE("loss terms combine linearly in the categorical weight") {
    CHECK(trainer::total_loss(0.5, 0.3, 1.0) == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(trainer::total_loss(0.0, 0.3, 2.0) == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(trainer::total_loss(0.7, 123.0, 0.0) == 0.7);
    CHECK_THROWS_AS(trainer::total_loss(0.1, 0.1, -1.0), std::invalid_argument);

    const auto data = make_dataset(5, 19);
    trainer::TrainConfig cfg;
    cfg.batch = 6;
    cfg.lambda = 2.5;
    const auto p = warm_params(3);
    const auto batch = trainer::make_batch(data, cfg, 0, numkit::RngStream(1, 2));
    for (const auto& ex : batch.examples) {
        numkit::Tape tape;
        const auto fwd = denoiser::forward(tape, p, ex.state, ex.t);
        const auto ids = trainer::example_loss(tape, fwd, ex, data[ex.target_index], cfg);
        const double cfm = tape.value(ids.cfm).data[0];
        const double dfm = tape.value(ids.dfm).data[0];
        CHECK(tape.value(ids.total).data[0] ==
              doctest::Approx(trainer::total_loss(cfm, dfm, cfg.lambda)).epsilon(1e-12));
        CHECK(ids.cls == -1);
    }

    trainer::TrainConfig with_cls = cfg;
    with_cls.transport_classes = true;
    const auto batch2 = trainer::make_batch(data, with_cls, 0, numkit::RngStream(1, 2));
    bool saw_nodes = false;
    for (const auto& ex : batch2.examples) {
        if (ex.edge_only) continue;
        saw_nodes = true;
        numkit::Tape tape;
        const auto fwd = denoiser::forward(tape, p, ex.state, ex.t);
        const auto ids = trainer::example_loss(tape, fwd, ex, data[ex.target_index], with_cls);
        REQUIRE(ids.cls >= 0);
        const double want = tape.value(ids.cfm).data[0] +
                            with_cls.lambda *
                                (tape.value(ids.dfm).data[0] + tape.value(ids.cls).data[0]);
        CHECK(tape.value(ids.total).data[0] == doctest::Approx(want).epsilon(1e-12));
    }
    CHECK(saw_nodes);
}

TEST_CASE("edge-only examples silence every node-attribute loss term") {
    const auto data = make_dataset(5, 23);
    trainer::TrainConfig cfg;
    cfg.batch = 40;
    cfg.edge_only_prob = 0.5;
    const auto p = warm_params(13);
    const auto batch = trainer::make_batch(data, cfg, 0, numkit::RngStream(4, 4));

    bool saw_edge_only = false;
    for (const auto& ex : batch.examples) {
        if (!ex.edge_only) continue;
        saw_edge_only = true;
        auto target = data[ex.target_index];

        numkit::Tape tape;
        const auto fwd = denoiser::forward(tape, p, ex.state, ex.t);
        const auto ids = trainer::example_loss(tape, fwd, ex, target, cfg);
        CHECK(tape.value(ids.cfm).data[0] == 0.0);
        tape.backward(ids.total);
        for (double g : tape.grad(fwd.v_box).data) CHECK(g == 0.0);
        const double base_loss = tape.value(ids.total).data[0];

        // Perturbing masked targets must not move the loss at all.
        trainer::TrainExample poked = ex;
        for (double& u : poked.u_star) u += 5.0;
        for (auto& tk : target.app_tokens) tk = (tk + 1) % target.alpha.k_app;
        numkit::Tape tape2;
        const auto fwd2 = denoiser::forward(tape2, p, poked.state, poked.t);
        const auto ids2 = trainer::example_loss(tape2, fwd2, poked, target, cfg);
        CHECK(tape2.value(ids2.total).data[0] == base_loss);

        // The same supervision as a direct relation-only loss.
        numkit::Tape tape3;
        const auto fwd3 = denoiser::forward(tape3, p, ex.state, ex.t);
        const int rel = trainer::dfm_loss(tape3, fwd3.app_logits, fwd3.rel_logits,
                                          data[ex.target_index].app_tokens,
                                          data[ex.target_index].rel_tokens, target.alpha, false);
        CHECK(tape3.value(rel).data[0] == tape.value(ids.dfm).data[0]);
        break;
    }
    CHECK(saw_edge_only);

    // An unmasked example does react to its velocity targets.
    for (const auto& ex : batch.examples) {
        if (ex.edge_only) continue;
        numkit::Tape tape;
        const auto fwd = denoiser::forward(tape, p, ex.state, ex.t);
        const auto ids = trainer::example_loss(tape, fwd, ex, data[ex.target_index], cfg);
        trainer::TrainExample poked = ex;
        poked.u_star[0] += 1.0;
        numkit::Tape tape2;
        const auto fwd2 = denoiser::forward(tape2, p, poked.state, poked.t);
        const auto ids2 = trainer::example_loss(tape2, fwd2, poked, data[ex.target_index], cfg);
        CHECK(tape.value(ids.total).data[0] != tape2.value(ids2.total).data[0]);
        break;
    }
}

TEST_CASE("adamw takes textbook steps and decouples weight decay") {
    // One scalar parameter, one step, worked by hand.
    numkit::TensorMap p, g;
    p.emplace("w", numkit::Array::scalar(1.0));
    g.emplace("w", numkit::Array::scalar(0.5));
    trainer::AdamW opt(0.9, 0.999, 1e-8, 0.0);
    opt.step(p, g, 0.1);
    const double m_hat = (0.1 * 0.5) / (1.0 - 0.9);
    const double v_hat = (0.001 * 0.25) / (1.0 - 0.999);
    const double want = 1.0 - 0.1 * m_hat / (std::sqrt(v_hat) + 1e-8);
    CHECK(p.at("w").data[0] == doctest::Approx(want).epsilon(1e-15));
    CHECK(opt.steps_taken() == 1);

    // Zero gradient leaves only the multiplicative shrink.
    numkit::TensorMap p2, g2;
    p2.emplace("w", numkit::Array::scalar(2.0));
    g2.emplace("w", numkit::Array::scalar(0.0));
    trainer::AdamW opt2(0.9, 0.999, 1e-8, 0.5);
    opt2.step(p2, g2, 0.1);
    CHECK(p2.at("w").data[0] == 2.0 * (1.0 - 0.1 * 0.5));

    // lr = 0 is a strict no-op on the parameters.
    numkit::TensorMap p3 = p, g3 = g;
    trainer::AdamW opt3(0.9, 0.999, 1e-8, 0.02);
    const double before = p3.at("w").data[0];
    opt3.step(p3, g3, 0.0);
    CHECK(p3.at("w").data[0] == before);

    numkit::TensorMap missing;
    CHECK_THROWS_AS(opt3.step(p3, missing, 0.1), std::invalid_argument);
    numkit::TensorMap wrong;
    wrong.emplace("w", numkit::Array(2, 2, 0.0));
    CHECK_THROWS_AS(opt3.step(p3, wrong, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(trainer::AdamW(1.5, 0.999, 1e-8, 0.0), std::invalid_argument);
}

TEST_CASE("full objective gradients match finite differences") {
    const auto data = make_dataset(4, 31);
    trainer::TrainConfig cfg;
    cfg.batch = 3;
    cfg.lambda = 1.7;
    cfg.transport_classes = true;
    cfg.edge_only_prob = 0.4;
    auto p = warm_params(21);
    const auto batch = trainer::make_batch(data, cfg, 0, numkit::RngStream(8, 1));

    // Cover a masked and an unmasked example.
    std::vector<const trainer::TrainExample*> picks;
    for (const auto& ex : batch.examples) {
        if (picks.empty() && ex.edge_only) picks.push_back(&ex);
        if (picks.size() == 1 && !ex.edge_only) picks.push_back(&ex);
    }
    if (picks.size() < 2)
        for (const auto& ex : batch.examples) picks.push_back(&ex);

    for (const auto* exp : picks) {
        const auto& ex = *exp;
        auto loss_fn = [&](const numkit::TensorMap& ts) {
            denoiser::DenoiserParams q = p;
            q.tensors = ts;
            numkit::Tape tape;
            const auto fwd = denoiser::forward(tape, q, ex.state, ex.t);
            const auto ids = trainer::example_loss(tape, fwd, ex, data[ex.target_index], cfg);
            return tape.value(ids.total).data[0];
        };
        auto grad_fn = [&](const numkit::TensorMap& ts) {
            denoiser::DenoiserParams q = p;
            q.tensors = ts;
            numkit::Tape tape;
            const auto fwd = denoiser::forward(tape, q, ex.state, ex.t);
            const auto ids = trainer::example_loss(tape, fwd, ex, data[ex.target_index], cfg);
            tape.backward(ids.total);
            numkit::TensorMap g;
            for (const auto& [name, id] : fwd.params) g.emplace(name, tape.grad(id));
            return g;
        };
        const auto report = numkit::grad_check(loss_fn, grad_fn, p.tensors, 5e-5, 1e-4);
        if (!report.pass)
            for (const auto& e : report.worst)
                std::printf("gradcheck %s[%zu]: analytic %.10e numeric %.10e rel %.3e\n",
                            e.name.c_str(), e.flat_index, e.analytic, e.numeric, e.rel_err);
        CHECK(report.max_rel_err < 1e-4);
    }
}

TEST_CASE("slot marginals count clean tokens per slot") {
    auto data = make_dataset(1, 55);
    auto& tg = data[0];  // n = 2, one slot pair each way
    tg.app_tokens = {0, 1, 0, 3};
    tg.rel_tokens = {2, 2, 1, 0};
    const auto m = trainer::slot_marginals_from_targets(data);
    REQUIRE(m.app.size() == 2);
    CHECK(m.app[0] == std::vector<double>{1.0, 0.0, 0.0, 0.0, 0.0});
    CHECK(m.app[1] == std::vector<double>{0.0, 0.5, 0.0, 0.5, 0.0});
    CHECK(m.rel[0] == std::vector<double>{0.0, 0.5, 0.5, 0.0});
    CHECK(m.rel[1] == std::vector<double>{0.5, 0.0, 0.5, 0.0});

    CHECK_THROWS_AS(trainer::slot_marginals_from_targets({}), DataError);
    auto bad = data;
    bad[0].app_tokens[0] = 5;  // the mask token is not a clean token
    CHECK_THROWS_AS(trainer::slot_marginals_from_targets(bad), DataError);
}

TEST_CASE("model bundles survive a disk round trip") {
    const auto dir = temp_dir("bundle");
    trainer::ModelBundle b;
    b.params = warm_params(77);
    b.sched = flowpaths::Scheduler::parse("cosine");
    b.marginals.app.assign(2, {0.25, 0.25, 0.25, 0.25, 0.0});
    b.marginals.rel.assign(2, {0.5, 0.25, 0.125, 0.125});
    trainer::save_bundle(dir + "/m.gflw", b);
    const auto back = trainer::load_bundle(dir + "/m.gflw");
    CHECK(back.sched.kind == flowpaths::SchedulerKind::cosine);
    CHECK(back.params.cfg.d_model == 8);
    CHECK(back.params.cfg.k_app == 5);
    CHECK(back.params.cfg.use_fma);
    CHECK(back.marginals.app == b.marginals.app);
    CHECK(back.marginals.rel == b.marginals.rel);
    REQUIRE(back.params.tensors.size() == b.params.tensors.size());
    for (const auto& [name, arr] : b.params.tensors) {
        REQUIRE(back.params.tensors.count(name) == 1);
        CHECK(back.params.tensors.at(name).data == arr.data);
    }

    // A checkpoint without the metadata tensors is not a bundle.
    numkit::save_checkpoint(dir + "/raw.gflw", b.params.tensors);
    CHECK_THROWS_AS(trainer::load_bundle(dir + "/raw.gflw"), DataError);
}

TEST_CASE("training runs deterministically and writes its artifacts") {
    const auto train_set = make_dataset(8, 61);
    const auto val_set = make_dataset(3, 62);
    trainer::TrainConfig cfg;
    cfg.batch = 4;
    cfg.iterations = 6;
    cfg.val_every = 2;
    cfg.val_batches = 1;
    cfg.lr = 1e-3;
    cfg.seed = 17;

    const auto dir1 = temp_dir("run1");
    const auto r1 = trainer::train(cfg, train_set, val_set, warm_params(5), dir1);
    REQUIRE(r1.rows.size() == 3);
    CHECK(r1.rows[0].step == 2);
    CHECK(r1.rows[1].step == 4);
    CHECK(r1.rows[2].step == 6);
    CHECK(r1.final_val == r1.rows.back().val_loss);
    double min_val = r1.rows[0].val_loss;
    for (const auto& row : r1.rows) min_val = std::min(min_val, row.val_loss);
    CHECK(r1.best_val == min_val);
    CHECK(std::filesystem::exists(r1.last_path));
    CHECK(std::filesystem::exists(r1.best_path));
    CHECK(std::filesystem::exists(dir1 + "/train_config.txt"));

    // The curve file mirrors the report exactly.
    std::ifstream curve(r1.curve_path);
    REQUIRE(curve.good());
    std::string header;
    std::getline(curve, header);
    CHECK(header == "step\ttrain_loss\tval_loss");
    for (const auto& row : r1.rows) {
        int step = -1;
        double tr = 0.0, va = 0.0;
        curve >> step >> tr >> va;
        CHECK(step == row.step);
        CHECK(tr == doctest::Approx(row.train_loss).epsilon(1e-15));
        CHECK(va == doctest::Approx(row.val_loss).epsilon(1e-15));
    }

    const auto dir2 = temp_dir("run2");
    const auto r2 = trainer::train(cfg, train_set, val_set, warm_params(5), dir2);
    REQUIRE(r2.rows.size() == r1.rows.size());
    for (std::size_t i = 0; i < r1.rows.size(); ++i) {
        CHECK(r1.rows[i].train_loss == r2.rows[i].train_loss);
        CHECK(r1.rows[i].val_loss == r2.rows[i].val_loss);
    }
    const auto m1 = trainer::load_bundle(r1.last_path);
    const auto m2 = trainer::load_bundle(r2.last_path);
    for (const auto& [name, arr] : m1.params.tensors)
        CHECK(m2.params.tensors.at(name).data == arr.data);

    // lr = 0 leaves the initial parameters untouched.
    trainer::TrainConfig frozen = cfg;
    frozen.lr = 0.0;
    frozen.iterations = 2;
    const auto dir3 = temp_dir("run3");
    const auto p0 = warm_params(5);
    const auto r3 = trainer::train(frozen, train_set, val_set, p0, dir3);
    const auto m3 = trainer::load_bundle(r3.last_path);
    for (const auto& [name, arr] : p0.tensors)
        CHECK(m3.params.tensors.at(name).data == arr.data);
    CHECK(r3.rows[0].val_loss == r3.rows.back().val_loss);

    CHECK_THROWS_AS(trainer::train(cfg, {}, val_set, warm_params(5), dir1), DataError);
    CHECK_THROWS_AS(trainer::train(cfg, train_set, {}, warm_params(5), dir1), DataError);

    auto poisoned = warm_params(5);
    poisoned.tensors.at("den.emb.node.w").data[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_WITH_AS(trainer::train(cfg, train_set, val_set, poisoned, temp_dir("run4")),
                         doctest::Contains("non-finite"), std::runtime_error);
}

TEST_CASE("a short optimization run reduces the training loss") {
    const auto train_set = make_dataset(6, 71);
    const auto val_set = make_dataset(2, 72);
    trainer::TrainConfig cfg;
    cfg.batch = 8;
    cfg.iterations = 500;
    cfg.val_every = 50;
    cfg.val_batches = 1;
    cfg.lr = 5e-4;
    cfg.warmup = 50;
    cfg.seed = 3;
    const auto dir = temp_dir("learn");
    const auto r = trainer::train(cfg, train_set, val_set, warm_params(9), dir);
    REQUIRE(r.rows.size() >= 2);
    CHECK(r.rows.back().train_loss < 0.7 * r.rows.front().train_loss);
    // Random-token targets cannot generalize, so the validation curve dips and
    // then climbs; the best-checkpoint tracker must have caught the dip.
    CHECK(r.best_val < r.rows.front().val_loss);
    CHECK(r.best_val_step > 0);
}
