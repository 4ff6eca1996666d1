#include "flowsg/tokenizer/scene_encoding.hpp"

#include <stdexcept>

namespace flowsg::tokenizer {

transport::TargetGraph encode_scene(const world::Scene& scene, const world::DetectorView& det,
                                    const Codebook& obj_cb, const RelationCodebook& rel_cb,
                                    const world::WorldConfig& cfg, int m_obj) {
    const std::size_t n = scene.n_objects;
    if (det.classes.size() != n) throw std::invalid_argument("encode_scene: detector mismatch");
    const int m_rel = rel_cb.phrase_tokens.empty()
                          ? 0
                          : static_cast<int>(rel_cb.phrase_tokens[0].size());
    if (m_rel == 0) throw std::invalid_argument("encode_scene: empty relation codebook");

    transport::TargetGraph g;
    g.n_nodes = n;
    g.alpha.k_class = cfg.k_classes;
    g.alpha.k_app = static_cast<int>(obj_cb.k);
    g.alpha.k_rel = static_cast<int>(rel_cb.codebook.k);
    g.alpha.m_obj = m_obj;
    g.alpha.m_rel = m_rel;
    g.det_classes = det.classes;
    g.gt_classes = scene.classes;
    g.boxes = scene.boxes;
    g.context = scene.context;
    g.n_ctx = n + 1;
    g.d_ctx = cfg.d_ctx;

    g.app_tokens.reserve(n * static_cast<std::size_t>(m_obj));
    std::vector<double> feat(cfg.d_app);
    for (std::size_t i = 0; i < n; ++i) {
        feat.assign(scene.appearance.begin() + i * cfg.d_app,
                    scene.appearance.begin() + (i + 1) * cfg.d_app);
        const auto toks = tokenize_slots(feat, obj_cb, m_obj);
        g.app_tokens.insert(g.app_tokens.end(), toks.begin(), toks.end());
    }

    g.rel_tokens.reserve(scene.rel_phrases.size() * static_cast<std::size_t>(m_rel));
    for (int phrase : scene.rel_phrases) {
        if (phrase < 0 || static_cast<std::size_t>(phrase) >= rel_cb.phrase_tokens.size())
            throw std::out_of_range("encode_scene: phrase index outside table");
        const auto& toks = rel_cb.phrase_tokens[static_cast<std::size_t>(phrase)];
        g.rel_tokens.insert(g.rel_tokens.end(), toks.begin(), toks.end());
    }
    return g;
}

}  // namespace flowsg::tokenizer
