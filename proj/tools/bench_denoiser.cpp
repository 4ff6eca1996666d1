// Single-core throughput probe for the denoiser at the default model size.
// Prints milliseconds per forward and per forward+backward so training budgets
// can be sized before long runs.

#include <chrono>
#include <cstdio>
#include <string>

#include "flowsg/denoiser/denoiser.hpp"
#include "flowsg/numkit/rng.hpp"
#include "flowsg/numkit/tape.hpp"
#include "flowsg/transport/graph_state.hpp"

using namespace flowsg;

namespace {

transport::GraphState bench_state(const denoiser::DenoiserConfig& cfg, std::size_t n,
                                  numkit::RngStream& rng) {
    transport::GraphState g;
    g.n_nodes = n;
    g.alpha.k_class = cfg.k_class;
    g.alpha.k_app = cfg.k_app;
    g.alpha.k_rel = cfg.k_rel;
    g.alpha.m_obj = cfg.m_obj;
    g.alpha.m_rel = cfg.m_rel;
    g.classes.resize(n);
    for (auto& c : g.classes) c = rng.uniform_int(cfg.k_class);
    g.app_tokens.resize(n * static_cast<std::size_t>(cfg.m_obj));
    for (auto& tk : g.app_tokens) tk = rng.uniform_int(cfg.k_app + 1);
    const std::size_t e = transport::edge_count(n);
    g.rel_tokens.resize(e * static_cast<std::size_t>(cfg.m_rel));
    for (auto& tk : g.rel_tokens) tk = rng.uniform_int(cfg.k_rel + 1);
    g.boxes.resize(n * 4);
    for (auto& b : g.boxes) b = rng.normal();
    g.n_ctx = n + 1;
    g.d_ctx = cfg.d_ctx;
    g.context.resize(g.n_ctx * static_cast<std::size_t>(cfg.d_ctx));
    for (auto& c : g.context) c = rng.normal();
    return g;
}

}  // namespace

int main(int argc, char** argv) {
    int iters = 30;
    std::size_t n_nodes = 6;
    if (argc > 1) iters = std::stoi(argv[1]);
    if (argc > 2) n_nodes = static_cast<std::size_t>(std::stoul(argv[2]));

    denoiser::DenoiserConfig cfg;  // library defaults: d_model 64, 2 blocks
    numkit::RngStream rng(7);
    auto params = denoiser::init_params(cfg, rng);
    // Warm the zero-initialized branches so the benchmark exercises real work.
    numkit::RngStream warm_rng(11);
    for (auto& [name, arr] : params.tensors)
        for (auto& v : arr.data) v += 0.05 * warm_rng.normal();
    auto state = bench_state(cfg, n_nodes, rng);

    using clock = std::chrono::steady_clock;
    double sink = 0.0;

    auto t0 = clock::now();
    for (int i = 0; i < iters; ++i) {
        numkit::Tape tape;
        auto fwd = denoiser::forward(tape, params, state, 0.5);
        sink += tape.value(fwd.v_box).data[0];
    }
    auto t1 = clock::now();
    for (int i = 0; i < iters; ++i) {
        numkit::Tape tape;
        auto fwd = denoiser::forward(tape, params, state, 0.5);
        const int loss = tape.mean_all(tape.mul(fwd.v_box, fwd.v_box));
        tape.backward(loss);
        sink += tape.grad(fwd.params.at("den.emb.node.w")).data[0];
    }
    auto t2 = clock::now();

    const double fwd_ms = std::chrono::duration<double, std::milli>(t1 - t0).count() / iters;
    const double both_ms = std::chrono::duration<double, std::milli>(t2 - t1).count() / iters;
    std::printf("nodes=%zu iters=%d\n", n_nodes, iters);
    std::printf("forward            %8.3f ms\n", fwd_ms);
    std::printf("forward+backward   %8.3f ms\n", both_ms);
    std::printf("(checksum %g)\n", sink);
    return 0;
}
