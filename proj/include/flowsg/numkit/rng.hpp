#pragma once

#include <cstdint>
#include <vector>

namespace flowsg::numkit {

// Counter-based generator: every draw is a pure function of
// (seed, stream_id, counter), so independently keyed streams give the same
// values no matter how calls from different streams interleave.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0);

    std::uint64_t next_u64();               // one counter slot
    double uniform();                       // [0, 1), one slot
    double normal();                        // standard normal, exactly two slots
    int uniform_int(int n);                 // [0, n), one slot
    int categorical(const std::vector<double>& weights);  // one slot

    // Derived stream keyed off this one; starts at counter 0.
    RngStream substream(std::uint64_t key) const;

    // k distinct values from [0, n), order given by a partial Fisher-Yates pass.
    std::vector<std::size_t> pick_distinct(std::size_t n, std::size_t k);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_; }
    std::uint64_t counter() const { return counter_; }

    static std::uint64_t mix64(std::uint64_t x);
    static std::uint64_t combine(std::uint64_t a, std::uint64_t b);

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t base_;
    std::uint64_t counter_ = 0;
};

}  // namespace flowsg::numkit
