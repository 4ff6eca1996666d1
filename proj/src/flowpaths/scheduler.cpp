#include "flowsg/flowpaths/scheduler.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "flowsg/errors.hpp"

namespace flowsg::flowpaths {

namespace {
void check_domain(double t) {
    if (!(t >= 0.0 && t <= 1.0))
        throw std::domain_error("Scheduler: t = " + std::to_string(t) + " outside [0, 1]");
}
constexpr double kHalfPi = std::numbers::pi / 2.0;
}  // namespace

double Scheduler::kappa(double t) const {
    check_domain(t);
    switch (kind) {
        case SchedulerKind::linear: return t;
        case SchedulerKind::cosine: return 1.0 - std::cos(kHalfPi * t);
    }
    throw std::logic_error("Scheduler: unknown kind");
}

double Scheduler::kappa_dot(double t) const {
    check_domain(t);
    switch (kind) {
        case SchedulerKind::linear: return 1.0;
        case SchedulerKind::cosine: return kHalfPi * std::sin(kHalfPi * t);
    }
    throw std::logic_error("Scheduler: unknown kind");
}

std::string Scheduler::name() const {
    return kind == SchedulerKind::linear ? "linear" : "cosine";
}

Scheduler Scheduler::parse(const std::string& name) {
    if (name == "linear") return {SchedulerKind::linear};
    if (name == "cosine") return {SchedulerKind::cosine};
    throw ConfigError("unknown scheduler '" + name + "' (expected linear or cosine)");
}

}  // namespace flowsg::flowpaths
