#include "flowsg/numkit/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace flowsg::numkit {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;
}

std::uint64_t RngStream::mix64(std::uint64_t x) {
    x += kGolden;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::uint64_t RngStream::combine(std::uint64_t a, std::uint64_t b) {
    return mix64(a ^ mix64(b));
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_(stream_id), base_(combine(mix64(seed), stream_id)) {}

std::uint64_t RngStream::next_u64() {
    return mix64(base_ + counter_++ * kGolden);
}

double RngStream::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log1p(-u1));
    return r * std::cos(2.0 * std::numbers::pi * u2);
}

int RngStream::uniform_int(int n) {
    if (n <= 0) throw std::invalid_argument("RngStream::uniform_int: n must be positive");
    int v = static_cast<int>(uniform() * n);
    return v < n ? v : n - 1;
}

int RngStream::categorical(const std::vector<double>& weights) {
    if (weights.empty()) throw std::invalid_argument("RngStream::categorical: empty weights");
    double total = 0.0;
    for (double w : weights) {
        if (w < 0.0 || !std::isfinite(w))
            throw std::invalid_argument("RngStream::categorical: weights must be finite and non-negative");
        total += w;
    }
    if (total <= 0.0) throw std::invalid_argument("RngStream::categorical: weights sum to zero");
    const double u = uniform() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        acc += weights[i];
        if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size()) - 1;
}

RngStream RngStream::substream(std::uint64_t key) const {
    return RngStream(seed_, combine(stream_, key));
}

std::vector<std::size_t> RngStream::pick_distinct(std::size_t n, std::size_t k) {
    if (k > n) throw std::invalid_argument("RngStream::pick_distinct: k exceeds n");
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    std::vector<std::size_t> out(k);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(uniform_int(static_cast<int>(n - i)));
        std::swap(pool[i], pool[j]);
        out[i] = pool[i];
    }
    return out;
}

}  // namespace flowsg::numkit
