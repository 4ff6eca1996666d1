#pragma once

#include <cstddef>
#include <utility>
#include <vector>

namespace flowsg::transport {

// Alphabet sizes for the categorical channels. The mask token always sits at
// index k_* (so each channel has k_* + 1 states in total).
struct Alphabets {
    int k_class = 8;
    int k_app = 64;
    int k_rel = 7;
    int m_obj = 4;  // appearance slots per node
    int m_rel = 4;  // relation slots per directed edge
};

// Directed edges of the complete graph on n nodes, row-major with the
// diagonal skipped: (0,1),(0,2),...,(1,0),(1,2),...
std::vector<std::pair<int, int>> edge_pairs(std::size_t n);
std::size_t edge_count(std::size_t n);
std::size_t edge_index(std::size_t i, std::size_t j, std::size_t n);

// Mutable point of the hybrid flow: continuous boxes plus one categorical
// token per slot. Context rows are conditioning only and never transported.
struct GraphState {
    std::size_t n_nodes = 0;
    Alphabets alpha;
    std::vector<int> classes;     // n
    std::vector<int> app_tokens;  // n * m_obj, node-major
    std::vector<int> rel_tokens;  // edge_count(n) * m_rel, edge-major
    std::vector<double> boxes;    // n * 4, rows (cx, cy, w, h)
    std::vector<double> context;  // n_ctx * d_ctx
    std::size_t n_ctx = 0;
    std::size_t d_ctx = 0;

    void validate() const;  // throws std::invalid_argument on inconsistency
};

// Fully specified endpoint of the flow: ground truth tokens and boxes plus
// the detector view used as conditioning.
struct TargetGraph {
    std::size_t n_nodes = 0;
    Alphabets alpha;
    std::vector<int> det_classes;  // n, conditioning / class-transport source
    std::vector<int> gt_classes;   // n
    std::vector<int> app_tokens;   // n * m_obj
    std::vector<int> rel_tokens;   // edge_count(n) * m_rel
    std::vector<double> boxes;     // n * 4
    std::vector<double> context;   // n_ctx * d_ctx
    std::size_t n_ctx = 0;
    std::size_t d_ctx = 0;
};

}  // namespace flowsg::transport
