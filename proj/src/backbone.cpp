#include "artifact/backbone.hpp"

#include <cctype>
#include <cmath>
#include <stdexcept>

namespace artifact {

namespace {

constexpr int kTimeDim = 16;

Tensor sinusoidal_time_embedding(int t, int dim) {
    Tensor e({dim});
    int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        double freq = std::pow(10000.0, -static_cast<double>(i) / half);
        e[2 * i] = std::sin(t * freq);
        e[2 * i + 1] = std::cos(t * freq);
    }
    return e;
}

}  // namespace

uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

nlohmann::json ToyBackboneConfig::to_json() const {
    return {{"resolution", resolution}, {"channels", channels},   {"text_dim", text_dim},
            {"vocab", vocab},           {"cond_hidden", cond_hidden}, {"init_seed", init_seed}};
}

ToyBackboneConfig ToyBackboneConfig::from_json(const nlohmann::json& j) {
    ToyBackboneConfig c;
    c.resolution = j.value("resolution", c.resolution);
    c.channels = j.value("channels", c.channels);
    c.text_dim = j.value("text_dim", c.text_dim);
    c.vocab = j.value("vocab", c.vocab);
    c.cond_hidden = j.value("cond_hidden", c.cond_hidden);
    c.init_seed = j.value("init_seed", c.init_seed);
    return c;
}

ad::Var ToyBackbone::param(const std::string& name, std::vector<int> shape, double init_std,
                           Rng& rng) {
    Tensor t(shape);
    if (init_std > 0.0)
        for (int i = 0; i < t.size(); ++i) t[i] = init_std * rng.next_normal();
    ad::Var v = ad::Var::param(std::move(t));
    param_order_.push_back(name);
    params_.emplace(name, v);
    return v;
}

ToyBackbone::ToyBackbone(ToyBackboneConfig config) : config_(config) {
    if (config_.resolution < 3 || config_.channels < 1 || config_.text_dim < 1 ||
        config_.vocab < 1 || config_.cond_hidden < 1)
        throw std::invalid_argument("toy backbone: bad config");

    Rng rng(derive_seed(config_.init_seed, 0x494E4954ULL));  // "INIT"
    const int c = config_.channels, d = config_.text_dim, h = config_.cond_hidden;

    param("text.embed", {config_.vocab, d}, 0.5, rng);
    param("text.proj_w", {d, d}, std::sqrt(1.0 / d), rng);
    param("text.proj_b", {d}, 0.0, rng);

    param("cond.time_w", {h, kTimeDim}, std::sqrt(1.0 / kTimeDim), rng);
    param("cond.time_b", {h}, 0.0, rng);
    param("cond.text_w", {h, d}, std::sqrt(1.0 / d), rng);
    param("cond.text_b", {h}, 0.0, rng);

    param("film1.scale_w", {c, h}, std::sqrt(1.0 / h) * 0.1, rng);
    param("film1.shift_w", {c, h}, std::sqrt(1.0 / h) * 0.1, rng);
    param("film2.scale_w", {c, h}, std::sqrt(1.0 / h) * 0.1, rng);
    param("film2.shift_w", {c, h}, std::sqrt(1.0 / h) * 0.1, rng);

    param("conv1.k", {c, 3, 3, 3}, std::sqrt(2.0 / (3 * 9)), rng);
    param("conv1.b", {c}, 0.0, rng);
    param("conv2.k", {c, c, 3, 3}, std::sqrt(2.0 / (c * 9)), rng);
    param("conv2.b", {c}, 0.0, rng);
    // Zero-initialized output head: the predictor starts at zero noise.
    param("conv3.k", {3, c, 3, 3}, 0.0, rng);
    param("conv3.b", {3}, 0.0, rng);
}

std::vector<int> ToyBackbone::latent_shape() const {
    return {3, config_.resolution, config_.resolution};
}

Tensor ToyBackbone::encode_image(const Image& img) const {
    if (img.height != config_.resolution || img.width != config_.resolution)
        throw std::invalid_argument("encode_image: image is " + std::to_string(img.height) + "x" +
                                    std::to_string(img.width) + ", backbone expects " +
                                    std::to_string(config_.resolution));
    Tensor z = image_to_chw(img);
    for (int i = 0; i < z.size(); ++i) z[i] = z[i] * 2.0 - 1.0;
    return z;
}

Image ToyBackbone::decode_image(const Tensor& z) const {
    Tensor px(z.shape());
    for (int i = 0; i < z.size(); ++i)
        px[i] = std::min(1.0, std::max(0.0, (z[i] + 1.0) * 0.5));
    return chw_to_image(px);
}

ad::Var ToyBackbone::decode_latent(const ad::Var& z) const {
    return ad::clamp01(ad::add_scalar(ad::scale(z, 0.5), 0.5));
}

std::vector<int> ToyBackbone::tokenize(const std::string& prompt) const {
    std::vector<int> ids;
    std::string token;
    auto flush = [&]() {
        if (!token.empty()) {
            ids.push_back(static_cast<int>(fnv1a64(token) % static_cast<uint64_t>(config_.vocab)));
            token.clear();
        }
    };
    for (unsigned char ch : prompt) {
        if (ch < 0x80 && !std::isalnum(ch)) {
            flush();
        } else {
            token.push_back(ch < 0x80 ? static_cast<char>(std::tolower(ch))
                                      : static_cast<char>(ch));
        }
    }
    flush();
    if (ids.empty()) ids.push_back(0);
    return ids;
}

TextEmbedding ToyBackbone::encode_text(const std::string& prompt) {
    auto ids = tokenize(prompt);
    ad::Var pooled = ad::embedding_mean(params_.at("text.embed"), ids);
    ad::Var w = ad::add(ad::matvec(params_.at("text.proj_w"), pooled),
                        params_.at("text.proj_b"));
    return TextEmbedding{w, fnv1a64(prompt)};
}

ad::Var ToyBackbone::predict_noise(const ad::Var& z_t, int t, const TextEmbedding& cond) {
    const auto& zs = z_t.value().shape();
    if (zs != latent_shape())
        throw std::invalid_argument("predict_noise: latent shape " + z_t.value().shape_str());
    if (!cond.w.defined() || cond.w.value().size() != config_.text_dim)
        throw std::invalid_argument("predict_noise: conditioning dimension mismatch");

    ad::Var te = ad::Var::constant(sinusoidal_time_embedding(t, kTimeDim));
    ad::Var ht = ad::silu(ad::add(ad::matvec(params_.at("cond.time_w"), te),
                                  params_.at("cond.time_b")));
    ad::Var hw = ad::silu(ad::add(ad::matvec(params_.at("cond.text_w"), cond.w),
                                  params_.at("cond.text_b")));
    ad::Var h = ad::add(ht, hw);

    ad::Var s1 = ad::add_scalar(ad::matvec(params_.at("film1.scale_w"), h), 1.0);
    ad::Var f1 = ad::matvec(params_.at("film1.shift_w"), h);
    ad::Var s2 = ad::add_scalar(ad::matvec(params_.at("film2.scale_w"), h), 1.0);
    ad::Var f2 = ad::matvec(params_.at("film2.shift_w"), h);

    ad::Var x = ad::silu(ad::conv2d(z_t, params_.at("conv1.k"), params_.at("conv1.b")));
    x = ad::channel_affine(x, s1, f1);
    x = ad::silu(ad::conv2d(x, params_.at("conv2.k"), params_.at("conv2.b")));
    x = ad::channel_affine(x, s2, f2);
    return ad::conv2d(x, params_.at("conv3.k"), params_.at("conv3.b"));
}

std::vector<ad::Var> ToyBackbone::trainable_params() {
    std::vector<ad::Var> out;
    out.reserve(param_order_.size());
    for (const auto& name : param_order_) out.push_back(params_.at(name));
    return out;
}

nlohmann::json ToyBackbone::describe() const {
    return {{"type", id()}, {"config", config_.to_json()}};
}

std::vector<NamedTensor> ToyBackbone::named_params() const {
    std::vector<NamedTensor> out;
    for (const auto& name : param_order_)
        out.push_back({name, params_.at(name).value()});
    return out;
}

void ToyBackbone::load_params(const std::vector<NamedTensor>& tensors) {
    for (const auto& nt : tensors) {
        auto it = params_.find(nt.name);
        if (it == params_.end())
            throw std::runtime_error("checkpoint parameter unknown to backbone: " + nt.name);
        if (!it->second.value().same_shape(nt.tensor))
            throw std::runtime_error("checkpoint parameter shape mismatch: " + nt.name);
        it->second.mutable_value() = nt.tensor;
    }
}

std::unique_ptr<ToyBackbone> make_toy_backbone(const ToyBackboneConfig& config) {
    return std::make_unique<ToyBackbone>(config);
}

}  // namespace artifact
