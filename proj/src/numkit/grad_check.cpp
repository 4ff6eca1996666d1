#include "flowsg/numkit/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace flowsg::numkit {

GradCheckReport compare_gradients(const TensorMap& analytic, const TensorMap& numeric, double tol,
                                  std::size_t keep_worst) {
    GradCheckReport report;
    std::vector<GradCheckEntry> all;
    for (const auto& [name, a] : analytic) {
        const auto it = numeric.find(name);
        if (it == numeric.end())
            throw std::invalid_argument("compare_gradients: missing numeric gradient for " + name);
        const Array& n = it->second;
        if (!a.same_shape(n))
            throw std::invalid_argument("compare_gradients: shape mismatch for " + name);
        for (std::size_t i = 0; i < a.data.size(); ++i) {
            const double av = a.data[i];
            const double nv = n.data[i];
            const double denom = std::max({std::fabs(av), std::fabs(nv), 1e-6});
            const double err = std::fabs(av - nv) / denom;
            report.max_rel_err = std::max(report.max_rel_err, err);
            all.push_back({name, i, av, nv, err});
        }
    }
    std::stable_sort(all.begin(), all.end(),
                     [](const GradCheckEntry& x, const GradCheckEntry& y) {
                         return x.rel_err > y.rel_err;
                     });
    if (all.size() > keep_worst) all.resize(keep_worst);
    report.worst = std::move(all);
    report.pass = report.max_rel_err < tol;
    return report;
}

GradCheckReport grad_check(const LossFn& loss, const GradFn& grads, const TensorMap& params,
                           double step, double tol, std::size_t keep_worst) {
    if (step <= 0.0) throw std::invalid_argument("grad_check: step must be positive");
    const TensorMap analytic = grads(params);
    TensorMap numeric;
    TensorMap probe = params;
    for (auto& [name, arr] : probe) {
        Array num(arr.shape, 0.0);
        for (std::size_t i = 0; i < arr.data.size(); ++i) {
            const double saved = arr.data[i];
            arr.data[i] = saved + step;
            const double up = loss(probe);
            arr.data[i] = saved - step;
            const double down = loss(probe);
            arr.data[i] = saved;
            num.data[i] = (up - down) / (2.0 * step);
        }
        numeric.emplace(name, std::move(num));
    }
    return compare_gradients(analytic, numeric, tol, keep_worst);
}

}  // namespace flowsg::numkit
