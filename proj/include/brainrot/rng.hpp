#pragma once
#include <cstdint>
#include <cmath>
#include <random>
#include <vector>

namespace brainrot {

// splitmix64; used to derive independent per-stage / per-subject streams.
[[nodiscard]] inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

[[nodiscard]] inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t s = seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    std::uint64_t a = splitmix64(s);
    std::uint64_t b = splitmix64(s);
    return a ^ (b << 1);
}

// Deterministic RNG. mt19937_64 gives identical streams on every platform;
// the normal variate is an explicit Box-Muller so no library-defined
// distribution state leaks into results.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    [[nodiscard]] std::uint64_t bits() { return gen_(); }

    // Uniform in [0, 1).
    [[nodiscard]] double uniform() {
        return static_cast<double>(gen_() >> 11) * (1.0 / 9007199254740992.0);
    }

    [[nodiscard]] double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    [[nodiscard]] double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = (static_cast<double>(gen_() >> 11) + 1.0) * (1.0 / 9007199254740992.0);
        const double u2 = static_cast<double>(gen_() >> 11) * (1.0 / 9007199254740992.0);
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * M_PI * u2;
        spare_ = r * std::sin(t);
        have_spare_ = true;
        return r * std::cos(t);
    }

    [[nodiscard]] double normal(double mu, double sigma) { return mu + sigma * normal(); }

    // Uniform integer in [0, n).
    [[nodiscard]] int below(int n) {
        const int v = static_cast<int>(uniform() * static_cast<double>(n));
        return v < n ? v : n - 1;
    }

    [[nodiscard]] bool bernoulli(double p) { return uniform() < p; }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(below(i + 1))]);
        }
    }

    [[nodiscard]] std::vector<int> permutation(int n) {
        std::vector<int> p(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
        shuffle(p);
        return p;
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0;
    bool have_spare_ = false;
};

}  // namespace brainrot
