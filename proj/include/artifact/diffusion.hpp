#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "artifact/autodiff.hpp"
#include "artifact/image.hpp"
#include "artifact/rng.hpp"
#include "artifact/schedule.hpp"
#include "artifact/tensor.hpp"

namespace artifact {

// A latent together with its noising step. t = 0 means clean.
struct LatentState {
    Tensor z;
    int t = 0;
};

struct TextEmbedding {
    ad::Var w;
    uint64_t source_prompt_hash = 0;
};

// The pluggable backbone: image codec, text encoder, noise predictor.
// Differentiable paths operate on ad::Var so supervision losses can reach
// the trainable parts.
class Backbone {
public:
    virtual ~Backbone() = default;

    virtual std::vector<int> latent_shape() const = 0;  // CHW

    virtual Tensor encode_image(const Image& img) const = 0;
    virtual Image decode_image(const Tensor& z) const = 0;  // pixels clamped to [0,1]
    // Differentiable decode used inside training losses; output [3,H,W] in [0,1].
    virtual ad::Var decode_latent(const ad::Var& z) const = 0;

    virtual TextEmbedding encode_text(const std::string& prompt) = 0;
    virtual ad::Var predict_noise(const ad::Var& z_t, int t, const TextEmbedding& cond) = 0;

    virtual std::vector<ad::Var> trainable_params() = 0;
    virtual nlohmann::json describe() const = 0;
    virtual std::string id() const = 0;
};

// z_t = sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps.
LatentState forward_noise(const Tensor& x0_latent, int t, const Tensor& noise,
                          const VarianceSchedule& schedule);

// Algebraic inverse of the forward marginal:
// (z_t - sqrt(1 - alpha_bar_t) eps_hat) / sqrt(alpha_bar_t).
Tensor predict_x0(const LatentState& state, const Tensor& predicted_noise,
                  const VarianceSchedule& schedule);
ad::Var predict_x0(const ad::Var& z_t, int t, const ad::Var& predicted_noise,
                   const VarianceSchedule& schedule);

struct BaseLossSample {
    Tensor z0;
    TextEmbedding cond;
    int t = 0;
    Tensor noise;
};

// Mean over the batch of ||eps - eps_theta(z_t, t, w)||^2 (sum over latent
// dims). Differentiable through the backbone. Optional per-sample weights
// (min-SNR) scale each sample's term.
ad::Var base_loss(const std::vector<BaseLossSample>& batch, Backbone& backbone,
                  const VarianceSchedule& schedule,
                  const std::vector<double>* per_sample_weights = nullptr);

// One ancestral reverse step from t to t_prev using the epsilon
// parameterization of the posterior mean; sigma^2 = 1 - alpha_bar_t/alpha_bar_prev,
// and the final step (t_prev = 0) adds no noise.
Tensor reverse_step(const Tensor& z_t, int t, int t_prev, const Tensor& eps_hat,
                    const VarianceSchedule& schedule, Rng& rng);

// Ancestral sampling from z_T ~ N(0,I) over an evenly strided subset of
// `steps` timesteps (steps = T gives the standard full chain), decoded to
// pixels. Deterministic given the seed.
Image reverse_sample(const TextEmbedding& cond, Backbone& backbone,
                     const VarianceSchedule& schedule, int steps, uint64_t seed);

// The latent trajectory variant used by tests; returns z_0 without decoding.
Tensor reverse_sample_latent(const TextEmbedding& cond, Backbone& backbone,
                             const VarianceSchedule& schedule, int steps, uint64_t seed);

}  // namespace artifact
