#pragma once

#include <functional>
#include <vector>

#include "flowsg/flowpaths/scheduler.hpp"

namespace flowsg::transport {

// Jump rates out of the current token for one categorical slot. Off-diagonal
// entries are non-negative and rate[current] is zero; the implicit diagonal
// of the generator is -total, so every row sums to zero.
struct SlotRates {
    std::vector<double> rate;  // one entry per alphabet state
    int current = 0;
    double total = 0.0;
};

// r(current -> j) = kappa_dot / max(1 - kappa, denom_clamp) * posterior[j].
// posterior is the model's clean-token distribution for this slot.
SlotRates assemble_rates(const std::vector<double>& posterior, int current,
                         const flowpaths::Scheduler& sched, double t,
                         double denom_clamp = 1e-3);

// One Euler jump using a single uniform draw u in [0,1): jump happens when
// u < min(1, dt * total), and u is reused to pick the destination.
int ctmc_euler_slot(const SlotRates& rates, double dt, double u);

// Deterministic PMF evolution under the same generator, one explicit Euler
// step of the master equation. rates_of(z) must describe the row for state z.
std::vector<double> master_equation_step(const std::vector<double>& pmf,
                                         const std::function<SlotRates(int)>& rates_of,
                                         double dt);

}  // namespace flowsg::transport
