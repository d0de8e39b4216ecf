#include "fsde/rng.hpp"

#include <cmath>

namespace fsde {

namespace {

constexpr std::uint32_t PHILOX_M0 = 0xD2511F53u;
constexpr std::uint32_t PHILOX_M1 = 0xCD9E8D57u;
constexpr std::uint32_t PHILOX_W0 = 0x9E3779B9u;
constexpr std::uint32_t PHILOX_W1 = 0xBB67AE85u;

inline void philox_round(std::uint32_t ctr[4], const std::uint32_t key[2]) {
    const std::uint64_t p0 = (std::uint64_t)PHILOX_M0 * ctr[0];
    const std::uint64_t p1 = (std::uint64_t)PHILOX_M1 * ctr[2];
    const std::uint32_t hi0 = (std::uint32_t)(p0 >> 32), lo0 = (std::uint32_t)p0;
    const std::uint32_t hi1 = (std::uint32_t)(p1 >> 32), lo1 = (std::uint32_t)p1;
    const std::uint32_t n0 = hi1 ^ ctr[1] ^ key[0];
    const std::uint32_t n2 = hi0 ^ ctr[3] ^ key[1];
    ctr[0] = n0;
    ctr[1] = lo1;
    ctr[2] = n2;
    ctr[3] = lo0;
}

inline void philox10(std::uint32_t ctr[4], std::uint32_t k0, std::uint32_t k1) {
    std::uint32_t key[2] = {k0, k1};
    for (int r = 0; r < 10; ++r) {
        philox_round(ctr, key);
        key[0] += PHILOX_W0;
        key[1] += PHILOX_W1;
    }
}

} // namespace

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream) {
    const std::uint64_t k = mix64(seed ^ mix64(stream * 0x9E3779B97F4A7C15ull + 1));
    key_[0] = (std::uint32_t)k;
    key_[1] = (std::uint32_t)(k >> 32);
}

void Rng::set_block(std::uint64_t block) {
    block_ = block;
    pos_ = 0;
    avail_ = 0;
    has_gauss_ = false;
}

void Rng::refill() {
    std::uint32_t ctr[4] = {
        (std::uint32_t)pos_, (std::uint32_t)(pos_ >> 32),
        (std::uint32_t)block_, (std::uint32_t)(block_ >> 32)};
    philox10(ctr, key_[0], key_[1]);
    buf_[0] = ctr[0];
    buf_[1] = ctr[1];
    buf_[2] = ctr[2];
    buf_[3] = ctr[3];
    avail_ = 4;
    ++pos_;
}

std::uint64_t Rng::next_u64() {
    if (avail_ < 2) refill();
    const std::uint64_t v =
        ((std::uint64_t)buf_[avail_ - 1] << 32) | buf_[avail_ - 2];
    avail_ -= 2;
    return v;
}

double Rng::uniform() {
    // 53-bit mantissa, shifted off zero
    const std::uint64_t v = next_u64() >> 11;
    return ((double)v + 0.5) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::gauss() {
    if (has_gauss_) {
        has_gauss_ = false;
        return gauss_cache_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 6.283185307179586476925286766559 * u2;
    gauss_cache_ = r * std::sin(th);
    has_gauss_ = true;
    return r * std::cos(th);
}

double Rng::exponential() { return -std::log(uniform()); }

} // namespace fsde
