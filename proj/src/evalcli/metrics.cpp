#include "flowsg/evalcli/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "flowsg/errors.hpp"

namespace flowsg::evalcli {

namespace {

// Posterior floor so a degenerate all-on-mask row still yields a positive
// score, keeping the (0, 1] invariant.
constexpr double kProbFloor = 1e-12;

std::array<double, 4> box_row(const std::vector<double>& boxes, std::size_t i) {
    return {boxes[i * 4], boxes[i * 4 + 1], boxes[i * 4 + 2], boxes[i * 4 + 3]};
}

std::string phrase_label(int predicate, const std::vector<std::string>& names) {
    if (predicate >= 0 && static_cast<std::size_t>(predicate) < names.size())
        return names[static_cast<std::size_t>(predicate)];
    return std::to_string(predicate);
}

std::string format_value(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

double box_iou(const std::array<double, 4>& a, const std::array<double, 4>& b) {
    const double area_a = a[2] * a[3];
    const double area_b = b[2] * b[3];
    if (area_a <= 0.0 || area_b <= 0.0) return 0.0;
    const double ix = std::min(a[0] + a[2] / 2, b[0] + b[2] / 2) -
                      std::max(a[0] - a[2] / 2, b[0] - b[2] / 2);
    const double iy = std::min(a[1] + a[3] / 2, b[1] + b[3] / 2) -
                      std::max(a[1] - a[3] / 2, b[1] - b[3] / 2);
    if (ix <= 0.0 || iy <= 0.0) return 0.0;
    const double inter = ix * iy;
    return inter / (area_a + area_b - inter);
}

std::vector<TripletPrediction> extract_triplets(
    const transport::DenoiserEval& eval, const std::vector<double>& boxes,
    const std::vector<int>& classes, const std::vector<double>& class_conf,
    const transport::Alphabets& alpha, std::size_t n_nodes,
    const tokenizer::RelationCodebook& rel_cb, const tokenizer::PhraseTable& phrases) {
    const std::size_t n_e = transport::edge_count(n_nodes);
    const std::size_t m = static_cast<std::size_t>(alpha.m_rel);
    const std::size_t width = static_cast<std::size_t>(alpha.k_rel + 1);
    if (boxes.size() != n_nodes * 4)
        throw std::invalid_argument("extract_triplets: boxes size mismatch");
    if (classes.size() != n_nodes || class_conf.size() != n_nodes)
        throw std::invalid_argument("extract_triplets: class rows mismatch");
    if (eval.rel_post.size() != n_e * m * width)
        throw std::invalid_argument("extract_triplets: relation posterior size mismatch");
    for (double c : class_conf)
        if (!(c > 0.0) || c > 1.0)
            throw std::invalid_argument("extract_triplets: node confidence outside (0, 1]");

    const auto pairs = transport::edge_pairs(n_nodes);
    std::vector<TripletPrediction> out;
    out.reserve(pairs.size());
    std::vector<int> tuple(m);
    for (std::size_t e = 0; e < pairs.size(); ++e) {
        double log_sum = 0.0;
        for (std::size_t s = 0; s < m; ++s) {
            const double* row = eval.rel_post.data() + (e * m + s) * width;
            const int tok = transport::argmax_real(row, static_cast<std::size_t>(alpha.k_rel));
            tuple[s] = tok;
            log_sum += std::log(std::max(row[tok], kProbFloor));
        }
        TripletPrediction p;
        p.subj = pairs[e].first;
        p.obj = pairs[e].second;
        p.subj_class = classes[static_cast<std::size_t>(p.subj)];
        p.obj_class = classes[static_cast<std::size_t>(p.obj)];
        p.predicate = tokenizer::nn_decode(tuple, rel_cb.codebook, phrases);
        p.subj_box = box_row(boxes, static_cast<std::size_t>(p.subj));
        p.obj_box = box_row(boxes, static_cast<std::size_t>(p.obj));
        const double conf = 0.5 * (class_conf[static_cast<std::size_t>(p.subj)] +
                                   class_conf[static_cast<std::size_t>(p.obj)]);
        p.score = std::exp(log_sum / static_cast<double>(m)) * conf;
        out.push_back(p);
    }
    std::sort(out.begin(), out.end(), [](const TripletPrediction& a, const TripletPrediction& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.subj != b.subj) return a.subj < b.subj;
        return a.obj < b.obj;
    });
    return out;
}

std::vector<GroundTruthTriplet> scene_ground_truth(const world::Scene& scene) {
    const auto pairs = transport::edge_pairs(scene.n_objects);
    std::vector<GroundTruthTriplet> out;
    out.reserve(pairs.size());
    for (std::size_t e = 0; e < pairs.size(); ++e) {
        GroundTruthTriplet g;
        const auto i = static_cast<std::size_t>(pairs[e].first);
        const auto j = static_cast<std::size_t>(pairs[e].second);
        g.subj_class = scene.classes[i];
        g.obj_class = scene.classes[j];
        g.predicate = scene.rel_phrases[e];
        g.subj_box = box_row(scene.boxes, i);
        g.obj_box = box_row(scene.boxes, j);
        out.push_back(g);
    }
    return out;
}

bool match_triplet(const TripletPrediction& pred, const GroundTruthTriplet& gt,
                   double iou_thresh) {
    if (pred.subj_class != gt.subj_class || pred.obj_class != gt.obj_class) return false;
    if (pred.predicate != gt.predicate) return false;
    return box_iou(pred.subj_box, gt.subj_box) >= iou_thresh &&
           box_iou(pred.obj_box, gt.obj_box) >= iou_thresh;
}

MetricsReport recall_at_k(const std::vector<SceneEval>& scenes, const std::vector<int>& ks,
                          double iou_thresh) {
    if (ks.empty()) throw std::invalid_argument("recall_at_k: no K values");
    for (int k : ks)
        if (k < 1) throw std::invalid_argument("recall_at_k: K must be positive");

    MetricsReport rep;
    rep.ks = ks;
    rep.recall.assign(ks.size(), 0.0);
    rep.mean_recall.assign(ks.size(), 0.0);

    // Greedy matching is prefix-stable in the prediction rank, so one pass at
    // the largest K yields, per matched ground-truth triplet, the rank of the
    // prediction that claimed it; every smaller K just thresholds that rank.
    const int k_max = *std::max_element(ks.begin(), ks.end());
    std::map<int, std::vector<std::size_t>> gt_count;      // predicate -> per-K total (same)
    std::map<int, std::vector<std::size_t>> gt_matched;    // predicate -> matched per K
    std::vector<double> recall_sum(ks.size(), 0.0);
    std::size_t scored_scenes = 0;

    for (const SceneEval& sc : scenes) {
        if (sc.ground_truth.empty()) continue;
        ++scored_scenes;
        std::vector<int> match_rank(sc.ground_truth.size(), -1);
        std::vector<char> consumed(sc.ground_truth.size(), 0);
        const std::size_t top = std::min<std::size_t>(sc.predictions.size(),
                                                      static_cast<std::size_t>(k_max));
        for (std::size_t r = 0; r < top; ++r) {
            for (std::size_t g = 0; g < sc.ground_truth.size(); ++g) {
                if (consumed[g]) continue;
                if (match_triplet(sc.predictions[r], sc.ground_truth[g], iou_thresh)) {
                    consumed[g] = 1;
                    match_rank[g] = static_cast<int>(r);
                    break;
                }
            }
        }
        for (std::size_t g = 0; g < sc.ground_truth.size(); ++g) {
            const int pred = sc.ground_truth[g].predicate;
            auto& total = gt_count.try_emplace(pred, std::vector<std::size_t>(ks.size(), 0))
                              .first->second;
            auto& matched = gt_matched.try_emplace(pred, std::vector<std::size_t>(ks.size(), 0))
                                .first->second;
            for (std::size_t ki = 0; ki < ks.size(); ++ki) {
                ++total[ki];
                if (match_rank[g] >= 0 && match_rank[g] < ks[ki]) ++matched[ki];
            }
        }
        for (std::size_t ki = 0; ki < ks.size(); ++ki) {
            std::size_t hit = 0;
            for (std::size_t g = 0; g < sc.ground_truth.size(); ++g)
                if (match_rank[g] >= 0 && match_rank[g] < ks[ki]) ++hit;
            recall_sum[ki] += static_cast<double>(hit) /
                              static_cast<double>(sc.ground_truth.size());
        }
    }

    rep.n_scenes = scored_scenes;
    for (std::size_t ki = 0; ki < ks.size(); ++ki) {
        if (scored_scenes > 0)
            rep.recall[ki] = recall_sum[ki] / static_cast<double>(scored_scenes);
        double class_sum = 0.0;
        for (const auto& [pred, total] : gt_count) {
            const auto& matched = gt_matched.at(pred);
            const double r = static_cast<double>(matched[ki]) / static_cast<double>(total[ki]);
            rep.per_predicate.try_emplace(pred, std::vector<double>(ks.size(), 0.0))
                .first->second[ki] = r;
            class_sum += r;
        }
        if (!gt_count.empty())
            rep.mean_recall[ki] = class_sum / static_cast<double>(gt_count.size());
    }
    return rep;
}

std::string metrics_tsv(const MetricsReport& report,
                        const std::vector<std::string>& phrase_names) {
    std::string out = "metric\tK\tvalue\n";
    for (std::size_t ki = 0; ki < report.ks.size(); ++ki)
        out += "recall\t" + std::to_string(report.ks[ki]) + "\t" +
               format_value(report.recall[ki]) + "\n";
    for (std::size_t ki = 0; ki < report.ks.size(); ++ki)
        out += "mean_recall\t" + std::to_string(report.ks[ki]) + "\t" +
               format_value(report.mean_recall[ki]) + "\n";
    for (const auto& [pred, values] : report.per_predicate)
        for (std::size_t ki = 0; ki < report.ks.size(); ++ki)
            out += "recall[" + phrase_label(pred, phrase_names) + "]\t" +
                   std::to_string(report.ks[ki]) + "\t" + format_value(values[ki]) + "\n";
    return out;
}

void save_metrics(const std::string& path, const MetricsReport& report,
                  const std::vector<std::string>& phrase_names) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open for writing: " + path);
    os << metrics_tsv(report, phrase_names);
    if (!os) throw DataError("write failed: " + path);
}

std::string metrics_summary(const MetricsReport& report,
                            const std::vector<std::string>& phrase_names) {
    std::string out = "scenes scored: " + std::to_string(report.n_scenes) + "\n";
    for (std::size_t ki = 0; ki < report.ks.size(); ++ki) {
        char line[128];
        std::snprintf(line, sizeof line, "R@%-3d %.4f   mR@%-3d %.4f\n", report.ks[ki],
                      report.recall[ki], report.ks[ki], report.mean_recall[ki]);
        out += line;
    }
    for (const auto& [pred, values] : report.per_predicate) {
        out += "  " + phrase_label(pred, phrase_names) + ":";
        for (std::size_t ki = 0; ki < report.ks.size(); ++ki) {
            char cell[48];
            std::snprintf(cell, sizeof cell, " %.4f@%d", values[ki], report.ks[ki]);
            out += cell;
        }
        out += "\n";
    }
    return out;
}

}  // namespace flowsg::evalcli
