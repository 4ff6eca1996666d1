#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowsg/numkit/array.hpp"
#include "flowsg/numkit/rng.hpp"

namespace flowsg::tokenizer {

struct Codebook {
    std::size_t k = 0;       // entries
    std::size_t d = 0;       // feature dim
    numkit::Array entries;   // k x d
};

// Nearest entry by full-vector squared distance, ties to the lowest index.
int quantize(const std::vector<double>& x, const Codebook& cb);

// Chunked ordered slots: slot m quantizes dims [m d/M, (m+1) d/M) against the
// same column range of every entry. Returns M indices into the codebook.
std::vector<int> tokenize_slots(const std::vector<double>& x, const Codebook& cb, int m_slots);

// Concatenation of each slot's chunk from its token's entry.
std::vector<double> decode_tokens(const std::vector<int>& tokens, const Codebook& cb);

struct VqTrainOptions {
    int epochs = 50;
    double ema_decay = 0.99;
    // Kept for interface parity with encoder-coupled setups; identity features
    // leave no encoder for the commitment term to pull on.
    double commitment_beta = 0.25;
};

struct VqReseedEvent {
    int epoch = 0;
    std::size_t entry = 0;
    std::size_t point = 0;
};

struct VqTrainReport {
    std::vector<double> epoch_mse;  // per-element MSE after each epoch
    double final_mse = 0.0;
    double utilization = 0.0;  // fraction of entries used by the final assignment
    std::vector<VqReseedEvent> reseeds;
};

// EMA k-means: entries start at k distinct data points, then every epoch each
// non-empty entry moves (1 - decay) of the way to its cluster mean and dead
// entries are reseeded to the highest-error points.
Codebook train_vq(const std::vector<std::vector<double>>& features, std::size_t k, int m_slots,
                  const VqTrainOptions& opt, numkit::RngStream& rng,
                  VqTrainReport* report = nullptr);

// Per-element stats used by the quality gate: reconstruction MSE through
// tokenize/decode and dataset variance around per-dimension means.
double reconstruction_mse(const std::vector<std::vector<double>>& features, const Codebook& cb,
                          int m_slots);
double dataset_variance(const std::vector<std::vector<double>>& features);

// Marginal distribution of each slot position over real tokens, from a flat
// rows x m token matrix.
std::vector<std::vector<double>> token_slot_marginals(const std::vector<int>& tokens, int m_slots,
                                                      int k);

// Checkpoint-backed persistence; the entries array carries the shape.
void save_codebook(const std::string& path, const Codebook& cb);
Codebook load_codebook(const std::string& path);  // DataError on malformed files

}  // namespace flowsg::tokenizer
