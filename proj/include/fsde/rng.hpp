#pragma once

#include <cstdint>

namespace fsde {

// Counter-based generator (Philox4x32-10). A stream is keyed by
// (seed, stream-id); within a stream, draws are indexed by a 128-bit
// counter of (block, position). Values depend only on the key and
// counter, never on call interleaving, so parallel consumers that own
// distinct blocks are reproducible under any scheduling.
class Rng {
public:
    Rng() : Rng(0, 0) {}
    Rng(std::uint64_t seed, std::uint64_t stream);

    // Jump to an absolute block (e.g. one block per trajectory or per
    // sample row). Resets the in-block position.
    void set_block(std::uint64_t block);

    std::uint64_t next_u64();
    // uniform on (0,1), never returning an endpoint
    double uniform();
    // uniform on (lo,hi)
    double uniform(double lo, double hi);
    // standard normal via Box-Muller (second value cached)
    double gauss();
    // standard exponential
    double exponential();

private:
    void refill();

    std::uint32_t key_[2];
    std::uint64_t block_ = 0;
    std::uint64_t pos_ = 0;    // 4-word batches consumed within the block
    std::uint32_t buf_[4];
    int avail_ = 0;
    double gauss_cache_ = 0.0;
    bool has_gauss_ = false;
};

// Small mixing hash for deriving stream ids from structured indices.
std::uint64_t mix64(std::uint64_t x);

} // namespace fsde
