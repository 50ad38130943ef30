#ifndef CALSTEER_RNG_HPP
#define CALSTEER_RNG_HPP

#include <cstdint>
#include <random>

// Deterministic stream derivation. Every random quantity in an experiment is
// drawn from an mt19937_64 seeded through derive_seed, so results depend only
// on the experiment seed and structural indices (scenario, phase, sample),
// never on evaluation order or thread count.

namespace calsteer {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a) {
  return splitmix64(seed ^ splitmix64(a));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return derive_seed(derive_seed(seed, a), b);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                                 std::uint64_t c) {
  return derive_seed(derive_seed(seed, a, b), c);
}

inline std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

// Stream salts; distinct per purpose so adding a consumer never shifts
// another stream.
namespace stream {
constexpr std::uint64_t kScenarioCalib = 0x5ce7a210;
constexpr std::uint64_t kScenarioTest = 0x5ce7a211;
constexpr std::uint64_t kRollout = 0x2011007;
constexpr std::uint64_t kPhaseSample = 0x5a8a7e5;
constexpr std::uint64_t kVerifier = 0x7e21f1e2;
constexpr std::uint64_t kIntervene = 0x1a7e2153;
constexpr std::uint64_t kTraining = 0x72a17a11;
}  // namespace stream

}  // namespace calsteer

#endif
