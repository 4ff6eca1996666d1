#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowsg/numkit/rng.hpp"

namespace flowsg::world {

struct WorldConfig {
    std::uint64_t seed = 0;
    std::size_t n_min = 2;
    std::size_t n_max = 6;
    int k_classes = 8;
    std::vector<std::string> phrases = {"left-of", "right-of", "above", "below",
                                        "inside",  "contains", "near"};
    double min_side = 0.05;
    double max_side = 0.4;
    double near_dist = 0.1;       // center distance that makes a pair "near"
    double label_flip = 0.1;      // detector class-flip probability
    double box_jitter = 0.02;     // detector box noise (per coordinate)
    double context_noise = 0.05;  // noise on context tokens
    double appearance_jitter = 0.05;
    std::size_t d_app = 32;
    std::size_t d_ctx = 32;

    void validate() const;  // throws ConfigError
};

// Scenes live on the unit canvas with y growing downward (image convention),
// boxes stored as (cx, cy, w, h).
struct Scene {
    std::uint64_t id = 0;
    std::size_t n_objects = 0;
    std::vector<double> boxes;       // n * 4, ground truth
    std::vector<int> classes;        // n, ground truth
    std::vector<int> rel_phrases;    // n*(n-1) phrase indices, canonical edge order
    std::vector<double> appearance;  // n * d_app
    std::vector<double> context;     // (n + 1) * d_ctx, node tokens then global mean
};

// Detector view re-derived deterministically from (config seed, scene id), so
// it never needs storing alongside the scene.
struct DetectorView {
    std::vector<int> classes;   // flipped with probability label_flip
    std::vector<double> boxes;  // jittered
    std::vector<double> scores; // confidence in [0.5, 1]
};

// Predicate between ordered pair (i, j) by priority: inside, contains, near,
// vertical (above/below) when |dcy| > |dcx|, else horizontal (left-of/right-of).
int relation_rule(const std::vector<double>& boxes, std::size_t i, std::size_t j,
                  const WorldConfig& cfg);

Scene sample_scene(const WorldConfig& cfg, std::uint64_t id);
DetectorView detector_oracle(const Scene& scene, const WorldConfig& cfg);

// Fixed per-class unit appearance prototype, derived from the config seed.
std::vector<double> class_prototype(int class_id, const WorldConfig& cfg);

}  // namespace flowsg::world
