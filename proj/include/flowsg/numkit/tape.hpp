#pragma once

#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "flowsg/numkit/array.hpp"

namespace flowsg::numkit {

// Reverse-mode tape over rank-2 double arrays. Node order is recording order,
// which is already a topological order, so backward() is a single reverse
// sweep. All reductions run in a fixed order; ops whose reduction index is a
// graph-node index (*_sorted, mean_others, edge means, softmax denominators)
// accumulate terms in ascending value order so relabeling the nodes of a graph
// permutes outputs without changing a single bit.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    int input(Array v);  // leaf that only feeds forward
    int param(Array v);  // leaf whose gradient the caller will read

    // References invalidate when another op is recorded; hold ids, not refs.
    const Array& value(int id) const { return nodes_[check(id)].val; }
    const Array& grad(int id) const { return nodes_[check(id)].grad; }
    std::size_t size() const { return nodes_.size(); }

    // Elementwise on equal shapes.
    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);
    int div(int a, int b);

    // Row/column broadcasts: v is 1 x n, c is m x 1.
    int add_rowvec(int a, int v);
    int mul_rowvec(int a, int v);
    int mul_colvec(int a, int c);

    int scale(int a, double s);
    int add_const(int a, double c);

    int matmul(int a, int b);     // (m,k) x (k,n)
    int matmul_nt(int a, int b);  // (m,k) x (n,k)^T
    int matmul_sorted(int a, int b);

    int slice_cols(int a, std::size_t c0, std::size_t c1);
    int concat_cols(const std::vector<int>& parts);
    int concat_rows(const std::vector<int>& parts);
    int gather_rows(int a, std::vector<std::size_t> idx);
    int broadcast_row(int v, std::size_t m);

    int sum_all(int a);
    int mean_all(int a);

    int softmax_rows(int a);
    int layer_norm_rows(int a, double eps);
    int gelu(int a);
    int tanh_op(int a);
    int exp_op(int a);
    int log_op(int a);
    int sqrt_op(int a);

    // Mean cross-entropy over rows of logits against integer targets.
    int cross_entropy(int logits, std::vector<std::size_t> targets);

    // Graph reductions. pairs lists directed edges (i, j) with i != j in the
    // order used by the caller's edge-major tensors.
    int mean_others(int node_vals);
    int edge_mean_per_node(int edge_vals, const std::vector<std::pair<int, int>>& pairs,
                           std::size_t n_nodes);
    int edges_to_matrix(int edge_scalars, const std::vector<std::pair<int, int>>& pairs,
                        std::size_t n_nodes, double diag_fill);

    void backward(int loss);

private:
    struct Node {
        Array val;
        Array grad;
        std::function<void()> back;
    };

    int check(int id) const;
    int emit(Array val, std::function<void()> back = {});
    Array& grad_mut(int id) { return nodes_[id].grad; }

    std::vector<Node> nodes_;
};

}  // namespace flowsg::numkit
