#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace ecg {

/// Error type thrown by all modules for parse, format, and usage failures.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// --- deterministic RNG helpers ----------------------------------------------
// Distributions are derived from raw mt19937_64 output so that a given seed
// produces the same stream on every standard library implementation.

using Rng = std::mt19937_64;

/// Uniform double in [0, 1).
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform double in [lo, hi).
inline double uniform(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

/// Uniform integer in [0, n), n > 0. Rejection-free modulo is fine here since
/// n is always tiny compared to 2^64.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    return rng() % n;
}

/// Standard normal via Box-Muller (uses one value per call, discards the pair).
inline double normal01(Rng& rng) {
    double u1 = uniform01(rng);
    double u2 = uniform01(rng);
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
}

/// Fisher-Yates shuffle driven by uniform_index for portability.
template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(uniform_index(rng, i));
        std::swap(items[i - 1], items[j]);
    }
}

/// Mixes several 64-bit values into one seed (splitmix64 finalizer chain).
std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts);

// --- hashing -----------------------------------------------------------------

/// CRC-32 (IEEE 802.3 polynomial) over a byte buffer.
std::uint32_t crc32(const void* data, std::size_t size, std::uint32_t seed = 0);

/// FNV-1a 64-bit content hash, hex-encoded. Used for manifest input hashes.
std::string fnv1a64_hex(const void* data, std::size_t size);
std::string fnv1a64_hex(const std::string& text);

// --- binary little-endian helpers ---------------------------------------------

void put_u16le(std::vector<std::uint8_t>& out, std::uint16_t v);
void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_u64le(std::vector<std::uint8_t>& out, std::uint64_t v);
std::uint16_t get_u16le(const std::uint8_t* p);
std::uint32_t get_u32le(const std::uint8_t* p);
std::uint64_t get_u64le(const std::uint8_t* p);

// --- file I/O ------------------------------------------------------------------

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
std::string read_file_text(const std::string& path);
void write_file_bytes(const std::string& path, const void* data, std::size_t size);
void write_file_text(const std::string& path, const std::string& text);

}  // namespace ecg
