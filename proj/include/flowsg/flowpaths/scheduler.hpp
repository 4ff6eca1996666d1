#pragma once

#include <string>

namespace flowsg::flowpaths {

enum class SchedulerKind { linear, cosine };

// Interpolation weight kappa: [0,1] -> [0,1], monotone, kappa(0)=0, kappa(1)=1.
//   linear:  kappa = t
//   cosine:  kappa = 1 - cos(pi t / 2)
struct Scheduler {
    SchedulerKind kind = SchedulerKind::cosine;

    double kappa(double t) const;      // std::domain_error outside [0,1]
    double kappa_dot(double t) const;

    std::string name() const;
    static Scheduler parse(const std::string& name);  // ConfigError on unknown name
};

}  // namespace flowsg::flowpaths
