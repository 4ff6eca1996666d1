#include "flowsg/transport/rates.hpp"

#include <algorithm>
#include <stdexcept>

namespace flowsg::transport {

SlotRates assemble_rates(const std::vector<double>& posterior, int current,
                         const flowpaths::Scheduler& sched, double t, double denom_clamp) {
    if (current < 0 || static_cast<std::size_t>(current) >= posterior.size())
        throw std::out_of_range("assemble_rates: current token outside alphabet");
    for (double p : posterior)
        if (!(p >= 0.0)) throw std::invalid_argument("assemble_rates: negative posterior mass");
    const double denom = std::max(1.0 - sched.kappa(t), denom_clamp);
    const double coeff = sched.kappa_dot(t) / denom;
    SlotRates out;
    out.current = current;
    out.rate.resize(posterior.size(), 0.0);
    for (std::size_t j = 0; j < posterior.size(); ++j) {
        if (static_cast<int>(j) == current) continue;
        out.rate[j] = coeff * posterior[j];
        out.total += out.rate[j];
    }
    return out;
}

int ctmc_euler_slot(const SlotRates& rates, double dt, double u) {
    if (!(dt > 0.0)) throw std::invalid_argument("ctmc_euler_slot: dt must be positive");
    if (!(u >= 0.0 && u < 1.0)) throw std::invalid_argument("ctmc_euler_slot: u outside [0,1)");
    const double jump_prob = std::min(1.0, dt * rates.total);
    if (u >= jump_prob || rates.total <= 0.0) return rates.current;
    // Reuse the draw: u / jump_prob is uniform given that we jump.
    const double v = u / jump_prob * rates.total;
    double acc = 0.0;
    int last = rates.current;
    for (std::size_t j = 0; j < rates.rate.size(); ++j) {
        if (rates.rate[j] <= 0.0) continue;
        acc += rates.rate[j];
        last = static_cast<int>(j);
        if (v < acc) return last;
    }
    return last;
}

std::vector<double> master_equation_step(const std::vector<double>& pmf,
                                         const std::function<SlotRates(int)>& rates_of,
                                         double dt) {
    std::vector<double> out = pmf;
    for (std::size_t z = 0; z < pmf.size(); ++z) {
        if (pmf[z] == 0.0) continue;
        const SlotRates r = rates_of(static_cast<int>(z));
        if (r.rate.size() != pmf.size())
            throw std::invalid_argument("master_equation_step: rate row size mismatch");
        out[z] -= dt * pmf[z] * r.total;
        for (std::size_t j = 0; j < pmf.size(); ++j) {
            if (j == z) continue;
            out[j] += dt * pmf[z] * r.rate[j];
        }
    }
    return out;
}

}  // namespace flowsg::transport
