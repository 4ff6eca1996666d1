#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flowsg/denoiser/denoiser.hpp"
#include "flowsg/flowpaths/scheduler.hpp"
#include "flowsg/numkit/checkpoint.hpp"
#include "flowsg/numkit/rng.hpp"
#include "flowsg/numkit/tape.hpp"
#include "flowsg/transport/graph_state.hpp"

namespace flowsg::trainer {

struct TrainConfig {
    double lambda = 1.0;  // weight on the categorical loss terms
    double lr = 1e-4;
    double weight_decay = 0.02;
    int batch = 32;
    int iterations = 20000;
    double edge_only_prob = 0.2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;
    int warmup = 0;  // linear lr ramp over this many steps; 0 disables
    bool transport_classes = false;
    std::string schedule = "cosine";
    int val_every = 100;
    int val_batches = 2;

    void validate() const;  // ConfigError on out-of-range fields
};

// Flat `key = value` text, one pair per line. '#' starts a comment, blank
// lines are skipped, unknown keys are rejected. Values layer on top of `base`
// so a file can override only some fields.
TrainConfig config_from_map(const std::map<std::string, std::string>& kv,
                            TrainConfig base = TrainConfig{});
TrainConfig config_from_file(const std::string& path, TrainConfig base = TrainConfig{});
void save_config(const std::string& path, const TrainConfig& cfg);

struct TrainExample {
    std::size_t target_index = 0;
    double t = 0.0;
    bool edge_only = false;
    transport::GraphState state;
    std::vector<double> u_star;    // box velocity target, n x 4 flattened
    std::uint64_t stream_key = 0;  // rng substream key, kept for diagnostics
};

struct Batch {
    std::vector<TrainExample> examples;
};

// One training batch for the given step. Every example derives its own rng
// substream from the global example counter, so batches are reproducible and
// independent of how examples would be distributed across workers.
Batch make_batch(const std::vector<transport::TargetGraph>& dataset, const TrainConfig& cfg,
                 int step, const numkit::RngStream& base);

// Mean squared error between the predicted and target velocities over the
// entries whose mask is 1. An all-masked call yields an exact zero that sends
// no gradient into the prediction.
int cfm_loss(numkit::Tape& tape, int v_pred, const std::vector<double>& u_star,
             const std::vector<double>& mask);

// Cross-entropy against the clean slot tokens, summed over every supervised
// slot and divided by the supervised slot count. Appearance slots drop out
// when include_app is false. The mask token is never a legal target.
int dfm_loss(numkit::Tape& tape, const std::vector<int>& app_logit_ids,
             const std::vector<int>& rel_logit_ids, const std::vector<int>& app_targets,
             const std::vector<int>& rel_targets, const transport::Alphabets& alpha,
             bool include_app);

double total_loss(double cfm, double dfm, double lambda);

struct LossIds {
    int cfm = -1;
    int dfm = -1;
    int cls = -1;  // -1 unless class transport is on and the example supervises nodes
    int total = -1;
};

// Builds the full objective for one example on the caller's tape. Edge-only
// examples supervise relation slots alone.
LossIds example_loss(numkit::Tape& tape, const denoiser::ForwardIds& fwd, const TrainExample& ex,
                     const transport::TargetGraph& target, const TrainConfig& cfg);

// Decoupled weight decay: parameters shrink by lr * weight_decay each step
// before the bias-corrected moment update is applied.
class AdamW {
public:
    AdamW(double beta1, double beta2, double eps, double weight_decay);

    void step(numkit::TensorMap& params, const numkit::TensorMap& grads, double lr);
    long long steps_taken() const { return t_; }

private:
    double beta1_, beta2_, eps_, weight_decay_;
    numkit::TensorMap m_, v_;
    long long t_ = 0;
};

// Empirical per-slot token distributions of a dataset's clean tokens; rows are
// slots, columns real tokens. Feeds the marginal/absorbing source strategies.
struct SlotMarginals {
    std::vector<std::vector<double>> app;  // m_obj rows of k_app
    std::vector<std::vector<double>> rel;  // m_rel rows of k_rel
};
SlotMarginals slot_marginals_from_targets(const std::vector<transport::TargetGraph>& dataset);

// Everything a sampler needs in one file: denoiser weights and dims, the
// interpolation schedule, and the training-corpus slot marginals.
struct ModelBundle {
    denoiser::DenoiserParams params;
    flowpaths::Scheduler sched;
    SlotMarginals marginals;
};
void save_bundle(const std::string& path, const ModelBundle& bundle);
ModelBundle load_bundle(const std::string& path);  // DataError on malformed files

struct LossRow {
    int step = 0;
    double train_loss = 0.0;  // mean over the window since the previous row
    double val_loss = 0.0;
};

struct TrainReport {
    std::vector<LossRow> rows;
    double best_val = 0.0;
    int best_val_step = -1;
    double final_val = 0.0;
    std::string last_path;   // checkpoint after the final step
    std::string best_path;   // checkpoint at the best validation loss
    std::string curve_path;  // loss curve TSV
};

// Runs the optimization loop and writes checkpoints, the loss curve, and a
// config echo into out_dir. Validation uses a frozen corruption draw so the
// curve is comparable across steps. Throws on a non-finite loss with the
// offending batch's stream keys in the message.
TrainReport train(const TrainConfig& cfg, const std::vector<transport::TargetGraph>& train_set,
                  const std::vector<transport::TargetGraph>& val_set,
                  denoiser::DenoiserParams params, const std::string& out_dir,
                  bool verbose = false);

}  // namespace flowsg::trainer
