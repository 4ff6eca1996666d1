#include "flowsg/transport/graph_state.hpp"

#include <stdexcept>
#include <string>

namespace flowsg::transport {

std::vector<std::pair<int, int>> edge_pairs(std::size_t n) {
    std::vector<std::pair<int, int>> out;
    out.reserve(edge_count(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) out.emplace_back(static_cast<int>(i), static_cast<int>(j));
    return out;
}

std::size_t edge_count(std::size_t n) { return n < 2 ? 0 : n * (n - 1); }

std::size_t edge_index(std::size_t i, std::size_t j, std::size_t n) {
    if (i == j || i >= n || j >= n) throw std::out_of_range("edge_index: bad pair");
    return i * (n - 1) + (j > i ? j - 1 : j);
}

namespace {
void check_tokens(const std::vector<int>& toks, std::size_t expect, int hi,
                  const std::string& what) {
    if (toks.size() != expect)
        throw std::invalid_argument("GraphState: " + what + " has wrong length");
    for (int v : toks)
        if (v < 0 || v > hi)
            throw std::invalid_argument("GraphState: " + what + " token out of range");
}
}  // namespace

void GraphState::validate() const {
    check_tokens(classes, n_nodes, alpha.k_class, "classes");
    check_tokens(app_tokens, n_nodes * static_cast<std::size_t>(alpha.m_obj), alpha.k_app,
                 "app_tokens");
    check_tokens(rel_tokens, edge_count(n_nodes) * static_cast<std::size_t>(alpha.m_rel),
                 alpha.k_rel, "rel_tokens");
    if (boxes.size() != n_nodes * 4)
        throw std::invalid_argument("GraphState: boxes has wrong length");
    if (context.size() != n_ctx * d_ctx)
        throw std::invalid_argument("GraphState: context has wrong length");
}

}  // namespace flowsg::transport
