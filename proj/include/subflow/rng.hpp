#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace subflow {

/// splitmix64 finalizer. Used to decorrelate user-facing seeds before they
/// reach the engine and to derive independent seed streams.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Named seed streams. Fields drawn for training, validation and evaluation
/// must never collide; each stream hashes its id into the master seed so the
/// three populations are disjoint by construction.
enum class SeedStream : std::uint64_t {
    training = 0x745241494eULL,
    validation = 0x56414c4944ULL,
    evaluation = 0x4556414cULL,
    sampling = 0x53414d504cULL,  // standalone `sample-fields` runs
};

/// Derive a deterministic per-item seed from (master, stream, indices).
inline std::uint64_t derive_seed(std::uint64_t master, SeedStream stream, std::uint64_t a,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t h = splitmix64(master ^ static_cast<std::uint64_t>(stream));
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ b);
    h = splitmix64(h ^ c);
    return h;
}

/// Standard-normal generator with a pinned algorithm (Box–Muller on top of
/// mt19937_64) so sampled fields are bitwise reproducible per seed.
class GaussianSampler {
public:
    explicit GaussianSampler(std::uint64_t seed) : engine_(splitmix64(seed)) {}

    double next() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        // u1 in (0,1] so the log is finite.
        const double u1 = (static_cast<double>(engine_() >> 11) + 1.0) * 0x1p-53;
        const double u2 = static_cast<double>(engine_() >> 11) * 0x1p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace subflow
