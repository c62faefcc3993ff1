#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace codealign::core {

// ---------------------------------------------------------------------------
// Error taxonomy. The CLI maps these onto exit codes, everything else just
// throws and lets the caller decide.
// ---------------------------------------------------------------------------

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IndexError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct MissingArtifactError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConstraintError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CorruptionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Dense H x W x C grid of real-valued features, row-major by (row, col, channel).
struct FeatureMap {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;

    FeatureMap() = default;
    FeatureMap(int h, int w, int c, double fill = 0.0)
        : height(h), width(w), channels(c),
          data(static_cast<std::size_t>(h) * w * c, fill) {
        if (h < 1 || w < 1 || c < 1) {
            throw ShapeError("FeatureMap dims must be >= 1");
        }
    }

    std::size_t cell_count() const { return static_cast<std::size_t>(height) * width; }
    std::size_t size() const { return data.size(); }

    double& at(int r, int c, int ch) {
        return data[(static_cast<std::size_t>(r) * width + c) * channels + ch];
    }
    double at(int r, int c, int ch) const {
        return data[(static_cast<std::size_t>(r) * width + c) * channels + ch];
    }

    std::span<double> cell(int r, int c) {
        return {data.data() + (static_cast<std::size_t>(r) * width + c) * channels,
                static_cast<std::size_t>(channels)};
    }
    std::span<const double> cell(int r, int c) const {
        return {data.data() + (static_cast<std::size_t>(r) * width + c) * channels,
                static_cast<std::size_t>(channels)};
    }
    std::span<const double> cell(std::size_t flat) const {
        return {data.data() + flat * channels, static_cast<std::size_t>(channels)};
    }

    bool same_shape(const FeatureMap& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }

    /// Throws if dims and payload disagree or any entry is non-finite.
    void validate() const;
};

/// 2D rigid pose; heading normalized to (-pi, pi].
struct Pose {
    double x = 0.0;
    double y = 0.0;
    double heading = 0.0;

    static double normalize_heading(double h) {
        double r = std::fmod(h + std::numbers::pi, 2.0 * std::numbers::pi);
        if (r <= 0.0) r += 2.0 * std::numbers::pi;
        return r - std::numbers::pi;
    }

    Pose normalized() const { return {x, y, normalize_heading(heading)}; }

    bool operator==(const Pose& o) const = default;
};

/// Per-cell detection scores in [0, 1].
struct DetectionMap {
    int height = 0;
    int width = 0;
    std::vector<double> scores;

    DetectionMap() = default;
    DetectionMap(int h, int w) : height(h), width(w), scores(static_cast<std::size_t>(h) * w, 0.0) {}

    double& at(int r, int c) { return scores[static_cast<std::size_t>(r) * width + c]; }
    double at(int r, int c) const { return scores[static_cast<std::size_t>(r) * width + c]; }

    void validate() const;
};

/// Root of every random stream in the project.
struct RngSeed {
    std::uint64_t value = 0;
};

// ---------------------------------------------------------------------------
// Deterministic RNG. splitmix64 core with Box-Muller normals; bit-identical
// on every platform, unlike std::normal_distribution.
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(RngSeed seed) : state_(seed.value) {}
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1) with 53 bits of entropy.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n); n must be > 0.
    std::uint64_t uniform_int(std::uint64_t n) {
        // Rejection sampling keeps the distribution exact.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % n;
    }

    /// Standard normal via Box-Muller (consumes two uniforms, returns one value).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

private:
    std::uint64_t state_;
};

/// Derives an independent child seed from (base, tag, a, b). Every consumer of
/// randomness takes its stream through here so that parallel and serial
/// execution see identical draws.
RngSeed derive_seed(RngSeed base, std::string_view tag, std::uint64_t a = 0, std::uint64_t b = 0);

/// FNV-1a over a byte string; used for config hashes.
std::uint64_t fnv1a64(std::string_view bytes);

// ---------------------------------------------------------------------------
// Losses with closed-form gradients
// ---------------------------------------------------------------------------

struct SmoothL1Result {
    double loss = 0.0;
    FeatureMap grad;  // d loss / d a
};

/// Mean smooth-L1 (Huber-style) distance between two equally shaped maps.
/// Piecewise: 0.5*d^2/beta for |d| < beta, |d| - 0.5*beta otherwise.
SmoothL1Result smooth_l1(const FeatureMap& a, const FeatureMap& b, double beta = 1.0);

struct SoftmaxXentResult {
    double loss = 0.0;
    std::vector<double> grad;  // softmax(logits) - onehot(target)
};

/// Cross entropy of softmax(logits) against a hard target, max-stabilized.
SoftmaxXentResult softmax_xent(std::span<const double> logits, int target);

struct LogisticResult {
    double loss = 0.0;
    double grad = 0.0;  // d loss / d logit = sigmoid(logit) - target
};

/// Binary analogue of softmax_xent for per-cell detection heads.
LogisticResult logistic_xent(double logit, double target);

double sigmoid(double z);

/// One plain gradient-descent step: params - lr * grads.
std::vector<double> sgd_step(const std::vector<double>& params,
                             const std::vector<double>& grads, double lr);

/// In-place variant used by the training loops.
void sgd_step_inplace(std::span<double> params, std::span<const double> grads, double lr);

}  // namespace codealign::core
