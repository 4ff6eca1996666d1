#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flowsg/numkit/checkpoint.hpp"
#include "flowsg/numkit/nn.hpp"
#include "flowsg/numkit/rng.hpp"
#include "flowsg/numkit/tape.hpp"
#include "flowsg/tokenizer/codebook.hpp"
#include "flowsg/transport/graph_state.hpp"
#include "flowsg/transport/sampler.hpp"

namespace flowsg::denoiser {

// Graph transformer over the noisy hybrid state. Each block runs
// cross-attention to the context tokens, relation-modulated self-attention,
// flow-conditioned message aggregation, then an edge refinement; heads emit
// box velocities and clean-token logits.
struct DenoiserConfig {
    int l_blocks = 2;
    int heads = 4;
    int d_model = 64;
    double dropout = 0.0;
    int k_class = 8;
    int k_app = 64;
    int k_rel = 7;
    int m_obj = 4;
    int m_rel = 4;
    int time_dim = 64;      // sinusoidal code width, even
    int w_app = 8;          // appearance token embedding width (codebook chunk)
    int w_rel = 8;          // relation token embedding width
    std::size_t d_ctx = 32;
    bool use_fma = true;    // ablation switch: drop message aggregation

    void validate() const;  // throws ConfigError
};

// Flat named tensor store; the names double as checkpoint keys (`den.*`).
struct DenoiserParams {
    DenoiserConfig cfg;
    numkit::TensorMap tensors;
};

// Fresh parameters. Residual-branch outputs, modulation projections and all
// heads start at zero so every block is the identity and every head emits
// zeros. When codebooks are passed, the token embedding tables start from the
// matching codebook slot chunks (mask rows stay randomly initialised).
DenoiserParams init_params(const DenoiserConfig& cfg, numkit::RngStream& rng,
                           const tokenizer::Codebook* app_cb = nullptr,
                           const tokenizer::Codebook* rel_cb = nullptr);

// Sinusoidal code of width dim: [cos | sin] halves over a geometric
// frequency ladder, deterministic in t.
std::vector<double> time_code(double t, int dim);

// Per-node population moments of the other nodes' rows of v (the message
// bank). Standardised skew and kurtosis use sqrt(var + 1e-6) and are defined
// as zero when a node has fewer than three neighbors.
struct NeighborMoments {
    int mean, var, skew, kurt;  // tape ids, each shaped like v
};

NeighborMoments neighbor_moments(numkit::Tape& t, int v, std::size_t n_nodes);

// Tape ids produced by one forward pass. Logits come per slot: app_logits[m]
// is n x (k_app + 1), rel_logits[m] is n_edges x (k_rel + 1).
struct ForwardIds {
    int v_box = -1;         // n x 4
    int class_logits = -1;  // n x k_class
    std::vector<int> app_logits;
    std::vector<int> rel_logits;
    std::map<std::string, int> params;  // tensor name -> tape id

    // Inspection hooks, one entry per block.
    std::vector<std::vector<int>> cross_attn;  // per head: n x n_ctx rows
    std::vector<std::vector<int>> self_attn;   // per head: n x n rows
    std::vector<int> fma_gate;                 // n x 4 moment gates
};

// Records the whole model on the tape. Pass a stream to enable dropout
// (training); without one the pass is deterministic.
ForwardIds forward(numkit::Tape& t, const DenoiserParams& p, const transport::GraphState& g,
                   double time, numkit::RngStream* dropout_rng = nullptr);

// Inference wrapper: forward without gradients, logits turned into PMF rows
// laid out the way the transport sampler expects.
transport::DenoiserEval eval(const DenoiserParams& p, const transport::GraphState& g, double time);

// Adapter for the sampler; `p` must outlive the returned function.
transport::DenoiserFn as_denoiser_fn(const DenoiserParams& p);

}  // namespace flowsg::denoiser
