#pragma once

#include <array>
#include <cstdint>

#include "ipwra/math.hpp"

namespace ipwra {

// Philox4x32-10 counter-based generator.  Chosen over std::mt19937 because
// substreams are free: (seed, stream, domain) index disjoint counter blocks,
// so replication r of a Monte Carlo run draws the same numbers no matter how
// work is split across threads.
namespace philox {

constexpr uint32_t M0 = 0xD2511F53u, M1 = 0xCD9E8D57u;
constexpr uint32_t W0 = 0x9E3779B9u, W1 = 0xBB67AE85u;

inline std::array<uint32_t, 4> block(std::array<uint32_t, 4> c, std::array<uint32_t, 2> k) {
    for (int round = 0; round < 10; ++round) {
        const uint64_t p0 = static_cast<uint64_t>(M0) * c[0];
        const uint64_t p1 = static_cast<uint64_t>(M1) * c[2];
        c = {static_cast<uint32_t>(p1 >> 32) ^ c[1] ^ k[0],
             static_cast<uint32_t>(p1),
             static_cast<uint32_t>(p0 >> 32) ^ c[3] ^ k[1],
             static_cast<uint32_t>(p0)};
        k[0] += W0;
        k[1] += W1;
    }
    return c;
}

} // namespace philox

// Domains keep draw streams for unrelated purposes from colliding even when
// they share (seed, stream).
enum class RngDomain : uint32_t {
    generic = 0,
    dgp = 1,
    bootstrap = 2,
    oracle = 3,
};

class Rng {
  public:
    Rng(uint64_t seed, uint64_t stream, RngDomain domain = RngDomain::generic)
        : key_{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32)},
          stream_lo_(static_cast<uint32_t>(stream)),
          stream_hi_((static_cast<uint32_t>(domain) << 24) |
                     static_cast<uint32_t>((stream >> 32) & 0xFFFFFFu)) {}

    uint32_t next_u32() {
        if (idx_ == 4) refill();
        return buf_[idx_++];
    }

    uint64_t next_u64() {
        const uint64_t lo = next_u32();
        const uint64_t hi = next_u32();
        return (hi << 32) | lo;
    }

    // uniform on (0,1), never exactly 0 or 1
    double uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    // standard normal via inverse CDF; deterministic across platforms
    double normal() { return normal_quantile(uniform()); }

    // integer in [0, n), n >= 1; rejection-free modulo with 64-bit input is
    // fine here (bias < 2^-32 for any n used in bootstrap resampling)
    uint64_t below(uint64_t n) { return next_u64() % n; }

  private:
    void refill() {
        buf_ = philox::block({static_cast<uint32_t>(counter_),
                              static_cast<uint32_t>(counter_ >> 32),
                              stream_lo_, stream_hi_},
                             key_);
        ++counter_;
        idx_ = 0;
    }

    std::array<uint32_t, 2> key_;
    uint32_t stream_lo_, stream_hi_;
    uint64_t counter_ = 0;
    std::array<uint32_t, 4> buf_{};
    int idx_ = 4;
};

} // namespace ipwra
