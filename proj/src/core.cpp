#include "codealign/core.hpp"

#include <algorithm>

namespace codealign::core {

void FeatureMap::validate() const {
    if (height < 1 || width < 1 || channels < 1) {
        throw ShapeError("FeatureMap dims must be >= 1");
    }
    if (data.size() != static_cast<std::size_t>(height) * width * channels) {
        throw ShapeError("FeatureMap payload length does not match dims");
    }
    for (double v : data) {
        if (!std::isfinite(v)) throw NumericError("FeatureMap contains non-finite entry");
    }
}

void DetectionMap::validate() const {
    if (scores.size() != static_cast<std::size_t>(height) * width) {
        throw ShapeError("DetectionMap payload length does not match dims");
    }
    for (double v : scores) {
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
            throw NumericError("DetectionMap score outside [0, 1]");
        }
    }
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

RngSeed derive_seed(RngSeed base, std::string_view tag, std::uint64_t a, std::uint64_t b) {
    std::uint64_t h = fnv1a64(tag);
    // One splitmix round per ingredient decorrelates nearby (a, b) pairs.
    auto mix = [](std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    std::uint64_t s = base.value;
    s = mix(s ^ h);
    s = mix(s ^ (a + 0x9e3779b97f4a7c15ULL));
    s = mix(s ^ (b + 0x7f4a7c159e3779b9ULL));
    return RngSeed{s};
}

SmoothL1Result smooth_l1(const FeatureMap& a, const FeatureMap& b, double beta) {
    if (!a.same_shape(b)) throw ShapeError("smooth_l1: shape mismatch");
    if (!(beta > 0.0)) throw ConfigError("smooth_l1: beta must be positive");

    SmoothL1Result out;
    out.grad = FeatureMap(a.height, a.width, a.channels);
    const double inv_n = 1.0 / static_cast<double>(a.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        const double ad = std::abs(d);
        if (ad < beta) {
            acc += 0.5 * d * d / beta;
            out.grad.data[i] = d / beta * inv_n;
        } else {
            acc += ad - 0.5 * beta;
            out.grad.data[i] = (d > 0.0 ? 1.0 : -1.0) * inv_n;
        }
    }
    out.loss = acc * inv_n;
    return out;
}

SoftmaxXentResult softmax_xent(std::span<const double> logits, int target) {
    if (target < 0 || static_cast<std::size_t>(target) >= logits.size()) {
        throw IndexError("softmax_xent: target out of range");
    }
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    SoftmaxXentResult out;
    out.grad.resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out.grad[i] = std::exp(logits[i] - m);
        z += out.grad[i];
    }
    for (auto& g : out.grad) g /= z;
    out.loss = std::log(z) - (logits[static_cast<std::size_t>(target)] - m);
    out.grad[static_cast<std::size_t>(target)] -= 1.0;
    return out;
}

double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

LogisticResult logistic_xent(double logit, double target) {
    // Stable form: max(z,0) - z*y + log(1 + exp(-|z|)).
    LogisticResult out;
    out.loss = std::max(logit, 0.0) - logit * target + std::log1p(std::exp(-std::abs(logit)));
    out.grad = sigmoid(logit) - target;
    return out;
}

std::vector<double> sgd_step(const std::vector<double>& params,
                             const std::vector<double>& grads, double lr) {
    if (params.size() != grads.size()) throw ShapeError("sgd_step: length mismatch");
    if (!(lr > 0.0)) throw ConfigError("sgd_step: lr must be positive");
    std::vector<double> out(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) out[i] = params[i] - lr * grads[i];
    return out;
}

void sgd_step_inplace(std::span<double> params, std::span<const double> grads, double lr) {
    if (params.size() != grads.size()) throw ShapeError("sgd_step: length mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
}

}  // namespace codealign::core
