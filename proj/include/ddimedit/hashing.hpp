#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ddimedit {

std::uint64_t fnv1a64(std::string_view bytes) noexcept;
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept;

// SplitMix64 stream; the generator behind every mock adapter.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t state) noexcept : state_(state) {}
    std::uint64_t next() noexcept {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }
    // Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    // Uniform in [-1, 1).
    double symmetric() noexcept { return 2.0 * uniform() - 1.0; }

private:
    std::uint64_t state_;
};

constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ull;

// Unit vector of `dim` entries drawn from SplitMix64 seeded with
// fnv1a64(text) ^ (seed * kGoldenGamma). Entries are 2u-1 for uniform u,
// then the vector is scaled to unit L2 norm (in double, rounded to float).
std::vector<float> hash_unit_vector(std::string_view text, std::uint64_t seed, std::size_t dim);

// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);

// Incremental SHA-256.
class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    Sha256& update(std::span<const std::uint8_t> bytes);
    Sha256& update(std::string_view text);
    Sha256& update_floats(std::span<const float> values);
    std::string hex_digest();

private:
    void* ctx_;
};

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace ddimedit
