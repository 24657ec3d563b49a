#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "artifact/checkpoint.hpp"
#include "artifact/diffusion.hpp"

namespace artifact {

struct ToyBackboneConfig {
    int resolution = 16;
    int channels = 16;     // conv width
    int text_dim = 16;     // prompt embedding size
    int vocab = 512;       // hashed token buckets
    int cond_hidden = 32;  // conditioning MLP width
    uint64_t init_seed = 0;

    nlohmann::json to_json() const;
    static ToyBackboneConfig from_json(const nlohmann::json& j);
};

// Desk-scale backbone: identity autoencoder (latent = pixels mapped to
// [-1,1]), a trainable hashed-bag-of-tokens text encoder, and a small conv
// noise predictor conditioned on timestep and prompt embedding via
// feature-wise modulation. Exercises every backbone interface without
// pretrained weights.
class ToyBackbone : public Backbone {
public:
    explicit ToyBackbone(ToyBackboneConfig config);

    std::vector<int> latent_shape() const override;
    Tensor encode_image(const Image& img) const override;
    Image decode_image(const Tensor& z) const override;
    ad::Var decode_latent(const ad::Var& z) const override;
    TextEmbedding encode_text(const std::string& prompt) override;
    ad::Var predict_noise(const ad::Var& z_t, int t, const TextEmbedding& cond) override;
    std::vector<ad::Var> trainable_params() override;
    nlohmann::json describe() const override;
    std::string id() const override { return "toy_conv"; }

    const ToyBackboneConfig& config() const { return config_; }

    std::vector<NamedTensor> named_params() const;
    void load_params(const std::vector<NamedTensor>& tensors);

    // Hashed token ids for a prompt; exposed for tests.
    std::vector<int> tokenize(const std::string& prompt) const;

private:
    ad::Var param(const std::string& name, std::vector<int> shape, double init_std, Rng& rng);

    ToyBackboneConfig config_;
    std::vector<std::string> param_order_;
    std::map<std::string, ad::Var> params_;
};

std::unique_ptr<ToyBackbone> make_toy_backbone(const ToyBackboneConfig& config);

uint64_t fnv1a64(const std::string& s);

}  // namespace artifact
