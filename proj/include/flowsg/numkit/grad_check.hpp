#pragma once

#include <functional>
#include <string>
#include <vector>

#include "flowsg/numkit/checkpoint.hpp"

namespace flowsg::numkit {

struct GradCheckEntry {
    std::string name;
    std::size_t flat_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    bool pass = false;
    std::vector<GradCheckEntry> worst;  // descending by rel_err, capped
};

using LossFn = std::function<double(const TensorMap&)>;
using GradFn = std::function<TensorMap(const TensorMap&)>;

// rel_err = |a - n| / max(|a|, |n|, 1e-6); the floor keeps numeric noise on
// exactly-zero gradients from registering as relative error.
GradCheckReport compare_gradients(const TensorMap& analytic, const TensorMap& numeric, double tol,
                                  std::size_t keep_worst = 8);

// Central differences with the given step against the analytic gradients.
GradCheckReport grad_check(const LossFn& loss, const GradFn& grads, const TensorMap& params,
                           double step, double tol, std::size_t keep_worst = 8);

}  // namespace flowsg::numkit
