#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace cbox {

// All randomness in the project flows from one root seed through named
// substreams, so each component (datagen, init, sampling, ...) is
// reproducible on its own. Distributions are hand-rolled on top of
// mt19937_64 instead of <random> distributions, whose algorithms the
// standard leaves unspecified.
class Rng {
  public:
    Rng() : engine_(0) {}
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Substream derived from (seed, name) and an optional index, e.g. one
    // stream per scene.
    static Rng substream(std::uint64_t seed, std::string_view name, std::uint64_t index = 0);

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform();
    double uniform(double lo, double hi);

    // Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

    // Standard normal via Box-Muller (single value per call, cached pair).
    double gauss();
    double gauss(double mean, double sigma) { return mean + sigma * gauss(); }

    // Fisher-Yates shuffle of an index-addressable container.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct values from [0, n) via partial Fisher-Yates.
    std::vector<int> sample_without_replacement(int n, int k);

  private:
    std::mt19937_64 engine_;
    bool has_cached_gauss_ = false;
    double cached_gauss_ = 0.0;
};

// 64-bit FNV-1a, used for substream derivation and input digests.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace cbox
