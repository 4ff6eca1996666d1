#include "flowsg/transport/ode.hpp"

#include <stdexcept>

#include "flowsg/errors.hpp"

namespace flowsg::transport {

OdeMethod parse_ode_method(const std::string& name) {
    if (name == "euler") return OdeMethod::euler;
    if (name == "midpoint") return OdeMethod::midpoint;
    throw ConfigError("unknown ode method '" + name + "' (expected euler or midpoint)");
}

std::string ode_method_name(OdeMethod m) {
    return m == OdeMethod::euler ? "euler" : "midpoint";
}

std::vector<double> ode_step(const std::vector<double>& boxes, const VelocityFn& velocity,
                             double t, double dt, OdeMethod method) {
    std::vector<double> out = boxes;
    if (method == OdeMethod::euler) {
        const std::vector<double> v = velocity(boxes, t);
        if (v.size() != boxes.size()) throw std::invalid_argument("ode_step: velocity size");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += dt * v[i];
        return out;
    }
    const std::vector<double> v0 = velocity(boxes, t);
    if (v0.size() != boxes.size()) throw std::invalid_argument("ode_step: velocity size");
    std::vector<double> mid = boxes;
    for (std::size_t i = 0; i < mid.size(); ++i) mid[i] += 0.5 * dt * v0[i];
    const std::vector<double> vm = velocity(mid, t + 0.5 * dt);
    if (vm.size() != boxes.size()) throw std::invalid_argument("ode_step: velocity size");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += dt * vm[i];
    return out;
}

}  // namespace flowsg::transport
