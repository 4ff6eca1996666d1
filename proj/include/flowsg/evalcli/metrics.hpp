#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "flowsg/tokenizer/phrase_table.hpp"
#include "flowsg/transport/graph_state.hpp"
#include "flowsg/transport/sampler.hpp"
#include "flowsg/world/world.hpp"

namespace flowsg::evalcli {

// Intersection over union of two (cx, cy, w, h) boxes. A box with
// non-positive area scores zero against everything, itself included.
double box_iou(const std::array<double, 4>& a, const std::array<double, 4>& b);

// One directed subject-predicate-object assertion with its boxes and a
// ranking score in (0, 1].
struct TripletPrediction {
    int subj = 0;
    int obj = 0;
    int subj_class = 0;
    int obj_class = 0;
    int predicate = 0;  // phrase index
    std::array<double, 4> subj_box{};
    std::array<double, 4> obj_box{};
    double score = 0.0;
};

struct GroundTruthTriplet {
    int subj_class = 0;
    int obj_class = 0;
    int predicate = 0;
    std::array<double, 4> subj_box{};
    std::array<double, 4> obj_box{};
};

// One ranked prediction per ordered node pair. The predicate is the nearest
// phrase to the per-slot argmax (over real tokens) of the relation posterior;
// the score is the geometric mean of those argmax probabilities times the
// mean of the two node confidences. Sorted by score descending, ties broken
// by (subj, obj) ascending. Node confidences must lie in (0, 1].
std::vector<TripletPrediction> extract_triplets(
    const transport::DenoiserEval& eval, const std::vector<double>& boxes,
    const std::vector<int>& classes, const std::vector<double>& class_conf,
    const transport::Alphabets& alpha, std::size_t n_nodes,
    const tokenizer::RelationCodebook& rel_cb, const tokenizer::PhraseTable& phrases);

// Every ordered pair of a scene as a ground-truth triplet, in canonical edge
// order.
std::vector<GroundTruthTriplet> scene_ground_truth(const world::Scene& scene);

// True when subject class, object class and predicate all agree and both
// boxes overlap their counterparts with IoU >= iou_thresh.
bool match_triplet(const TripletPrediction& pred, const GroundTruthTriplet& gt,
                   double iou_thresh);

struct SceneEval {
    std::vector<TripletPrediction> predictions;  // ranked
    std::vector<GroundTruthTriplet> ground_truth;
};

struct MetricsReport {
    std::vector<int> ks;
    std::vector<double> recall;       // R@K, aligned with ks
    std::vector<double> mean_recall;  // mR@K, aligned with ks
    // Split-wide recall of each predicate present in the ground truth,
    // phrase index -> one value per K.
    std::map<int, std::vector<double>> per_predicate;
    std::size_t n_scenes = 0;  // scenes contributing to R@K (>= 1 ground truth)
};

// Greedy top-K matching: predictions in rank order, each ground-truth triplet
// consumable once. R@K averages the per-scene matched fraction over scenes
// with ground truth; mR@K averages the split-wide per-predicate recalls over
// the predicates that appear in the split.
MetricsReport recall_at_k(const std::vector<SceneEval>& scenes, const std::vector<int>& ks,
                          double iou_thresh);

// Rows `metric \t K \t value`: recall and mean_recall per K, then one
// recall[<phrase>] row per predicate. Indices stand in for missing names.
std::string metrics_tsv(const MetricsReport& report,
                        const std::vector<std::string>& phrase_names);
void save_metrics(const std::string& path, const MetricsReport& report,
                  const std::vector<std::string>& phrase_names);

// Human-readable block for logs and stdout.
std::string metrics_summary(const MetricsReport& report,
                            const std::vector<std::string>& phrase_names);

}  // namespace flowsg::evalcli
