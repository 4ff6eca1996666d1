#pragma once

#include <functional>
#include <string>
#include <vector>

namespace flowsg::transport {

enum class OdeMethod { euler, midpoint };

OdeMethod parse_ode_method(const std::string& name);  // ConfigError on unknown name
std::string ode_method_name(OdeMethod m);

using VelocityFn =
    std::function<std::vector<double>(const std::vector<double>& boxes, double t)>;

// One explicit step of dx/dt = v(x, t) for the flat box vector.
std::vector<double> ode_step(const std::vector<double>& boxes, const VelocityFn& velocity,
                             double t, double dt, OdeMethod method);

}  // namespace flowsg::transport
