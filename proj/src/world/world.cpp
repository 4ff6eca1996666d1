#include "flowsg/world/world.hpp"

#include <cmath>
#include <stdexcept>

#include "flowsg/errors.hpp"

namespace flowsg::world {

namespace {

// Stream roles under one dataset seed.
constexpr std::uint64_t kTagScene = 0x5ce73;
constexpr std::uint64_t kTagDetector = 0xde7ec;
constexpr std::uint64_t kTagPrototype = 0x92070;
constexpr std::uint64_t kTagProjection = 0x92035;

numkit::RngStream keyed(std::uint64_t seed, std::uint64_t tag, std::uint64_t id) {
    return numkit::RngStream(seed, numkit::RngStream::combine(tag, id));
}

struct Rect {
    double x0, y0, x1, y1;
};

Rect rect_of(const std::vector<double>& boxes, std::size_t i) {
    const double cx = boxes[i * 4], cy = boxes[i * 4 + 1];
    const double w = boxes[i * 4 + 2], h = boxes[i * 4 + 3];
    return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

bool rect_inside(const Rect& a, const Rect& b) {
    return a.x0 >= b.x0 && a.y0 >= b.y0 && a.x1 <= b.x1 && a.y1 <= b.y1;
}

// Phrase positions in WorldConfig::phrases.
enum Phrase : int {
    kLeftOf = 0,
    kRightOf = 1,
    kAbove = 2,
    kBelow = 3,
    kInside = 4,
    kContains = 5,
    kNear = 6,
};

}  // namespace

void WorldConfig::validate() const {
    if (n_min < 2 || n_max < n_min) throw ConfigError("world: need 2 <= n_min <= n_max");
    if (k_classes < 2) throw ConfigError("world: k_classes must be at least 2");
    if (phrases.size() != 7) throw ConfigError("world: exactly 7 predicate phrases expected");
    if (!(min_side > 0.0 && min_side < max_side && max_side <= 1.0))
        throw ConfigError("world: need 0 < min_side < max_side <= 1");
    for (double p : {label_flip, box_jitter, context_noise, appearance_jitter})
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("world: noise levels must lie in [0, 1]");
    if (d_app == 0 || d_ctx == 0) throw ConfigError("world: feature dims must be positive");
}

int relation_rule(const std::vector<double>& boxes, std::size_t i, std::size_t j,
                  const WorldConfig& cfg) {
    if (i == j || (i + 1) * 4 > boxes.size() || (j + 1) * 4 > boxes.size())
        throw std::out_of_range("relation_rule: bad pair");
    const Rect a = rect_of(boxes, i);
    const Rect b = rect_of(boxes, j);
    if (rect_inside(a, b)) return kInside;
    if (rect_inside(b, a)) return kContains;
    const double dcx = boxes[j * 4] - boxes[i * 4];
    const double dcy = boxes[j * 4 + 1] - boxes[i * 4 + 1];
    if (std::hypot(dcx, dcy) < cfg.near_dist) return kNear;
    if (std::fabs(dcy) > std::fabs(dcx)) return dcy > 0.0 ? kAbove : kBelow;
    return dcx > 0.0 ? kLeftOf : kRightOf;
}

std::vector<double> class_prototype(int class_id, const WorldConfig& cfg) {
    auto rng = keyed(cfg.seed, kTagPrototype, static_cast<std::uint64_t>(class_id));
    std::vector<double> v(cfg.d_app);
    double norm = 0.0;
    for (double& x : v) {
        x = rng.normal();
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
}

namespace {

std::vector<double> context_projection(const WorldConfig& cfg) {
    auto rng = keyed(cfg.seed, kTagProjection, 0);
    const std::size_t in_dim = static_cast<std::size_t>(cfg.k_classes) + 4;
    std::vector<double> proj(cfg.d_ctx * in_dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (double& x : proj) x = scale * rng.normal();
    return proj;
}

}  // namespace

Scene sample_scene(const WorldConfig& cfg, std::uint64_t id) {
    cfg.validate();
    auto rng = keyed(cfg.seed, kTagScene, id);

    Scene s;
    s.id = id;
    s.n_objects = cfg.n_min + static_cast<std::size_t>(rng.uniform_int(
                                  static_cast<int>(cfg.n_max - cfg.n_min) + 1));
    const std::size_t n = s.n_objects;

    s.classes.resize(n);
    for (auto& c : s.classes) c = rng.uniform_int(cfg.k_classes);

    s.boxes.resize(n * 4);
    for (std::size_t i = 0; i < n; ++i) {
        const double w = cfg.min_side + rng.uniform() * (cfg.max_side - cfg.min_side);
        const double h = cfg.min_side + rng.uniform() * (cfg.max_side - cfg.min_side);
        s.boxes[i * 4 + 0] = w / 2 + rng.uniform() * (1.0 - w);
        s.boxes[i * 4 + 1] = h / 2 + rng.uniform() * (1.0 - h);
        s.boxes[i * 4 + 2] = w;
        s.boxes[i * 4 + 3] = h;
    }

    s.rel_phrases.reserve(n * (n - 1));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) s.rel_phrases.push_back(relation_rule(s.boxes, i, j, cfg));

    s.appearance.resize(n * cfg.d_app);
    for (std::size_t i = 0; i < n; ++i) {
        const auto proto = class_prototype(s.classes[i], cfg);
        for (std::size_t d = 0; d < cfg.d_app; ++d)
            s.appearance[i * cfg.d_app + d] = proto[d] + cfg.appearance_jitter * rng.normal();
    }

    // Context encodes the detector view: projected (class one-hot, box) per
    // node plus one global mean token at the end.
    const DetectorView det = detector_oracle(s, cfg);
    const auto proj = context_projection(cfg);
    const std::size_t in_dim = static_cast<std::size_t>(cfg.k_classes) + 4;
    s.context.assign((n + 1) * cfg.d_ctx, 0.0);
    std::vector<double> feat(in_dim);
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(feat.begin(), feat.end(), 0.0);
        feat[static_cast<std::size_t>(det.classes[i])] = 1.0;
        for (std::size_t b = 0; b < 4; ++b)
            feat[static_cast<std::size_t>(cfg.k_classes) + b] = det.boxes[i * 4 + b];
        for (std::size_t r = 0; r < cfg.d_ctx; ++r) {
            double acc = 0.0;
            for (std::size_t c = 0; c < in_dim; ++c) acc += proj[r * in_dim + c] * feat[c];
            s.context[i * cfg.d_ctx + r] = acc + cfg.context_noise * rng.normal();
        }
    }
    for (std::size_t r = 0; r < cfg.d_ctx; ++r) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += s.context[i * cfg.d_ctx + r];
        s.context[n * cfg.d_ctx + r] = acc / static_cast<double>(n);
    }
    return s;
}

DetectorView detector_oracle(const Scene& scene, const WorldConfig& cfg) {
    auto rng = keyed(cfg.seed, kTagDetector, scene.id);
    const std::size_t n = scene.n_objects;
    DetectorView det;
    det.classes.resize(n);
    det.boxes.resize(n * 4);
    det.scores.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double flip = rng.uniform();
        if (flip < cfg.label_flip) {
            // Uniform over the other classes.
            int alt = rng.uniform_int(cfg.k_classes - 1);
            if (alt >= scene.classes[i]) ++alt;
            det.classes[i] = alt;
        } else {
            det.classes[i] = scene.classes[i];
        }
        for (std::size_t b = 0; b < 4; ++b) {
            double v = scene.boxes[i * 4 + b] + cfg.box_jitter * rng.normal();
            if (b >= 2 && v < 0.01) v = 0.01;  // keep detector sides positive
            det.boxes[i * 4 + b] = v;
        }
        det.scores[i] = 1.0 - 0.5 * rng.uniform();
    }
    return det;
}

}  // namespace flowsg::world
