#include "artifact/supervision.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "artifact/checkpoint.hpp"

namespace artifact {

void SimilarityBatch::add_group(ad::Var anchor_embedding, std::string anchor_period,
                                std::vector<ad::Var> candidate_embeddings,
                                std::vector<std::string> candidate_periods,
                                int positive_index) {
    if (candidate_embeddings.empty())
        throw std::invalid_argument("similarity batch: anchor with zero candidates");
    if (candidate_embeddings.size() != candidate_periods.size())
        throw std::invalid_argument("similarity batch: period count mismatch");
    if (positive_index < 0 ||
        positive_index >= static_cast<int>(candidate_embeddings.size()))
        throw std::invalid_argument("similarity batch: positive index out of range");
    for (size_t j = 0; j < candidate_periods.size(); ++j) {
        if (static_cast<int>(j) == positive_index) continue;
        if (candidate_periods[j] == anchor_period)
            throw std::invalid_argument("negative from same era: " + candidate_periods[j]);
    }

    ContrastiveGroup g;
    g.anchor = ad::l2_normalize(anchor_embedding);
    g.candidates.reserve(candidate_embeddings.size());
    for (auto& c : candidate_embeddings) g.candidates.push_back(ad::l2_normalize(c));
    g.positive_index = positive_index;
    g.anchor_period = std::move(anchor_period);
    g.candidate_periods = std::move(candidate_periods);
    groups_.push_back(std::move(g));
}

ad::Var info_nce_loss(const SimilarityBatch& batch, double temperature) {
    if (batch.empty()) throw std::invalid_argument("info_nce_loss: empty batch");
    if (!(temperature > 0.0)) throw std::invalid_argument("info_nce_loss: temperature must be > 0");

    ad::Var total;
    for (const auto& g : batch.groups()) {
        std::vector<ad::Var> sims;
        sims.reserve(g.candidates.size());
        for (const auto& c : g.candidates)
            sims.push_back(ad::scale(ad::dot(g.anchor, c), 1.0 / temperature));
        ad::Var loss = ad::sub(ad::log_sum_exp(sims), sims[static_cast<size_t>(g.positive_index)]);
        total = total.defined() ? ad::add(total, loss) : loss;
    }
    return ad::scale(total, 1.0 / static_cast<double>(batch.groups().size()));
}

double info_nce_from_similarities(const std::vector<double>& similarities, int positive_index,
                                  double temperature) {
    if (similarities.empty())
        throw std::invalid_argument("info_nce: anchor with zero candidates");
    if (!(temperature > 0.0)) throw std::invalid_argument("info_nce: temperature must be > 0");
    if (positive_index < 0 || positive_index >= static_cast<int>(similarities.size()))
        throw std::invalid_argument("info_nce: positive index out of range");
    double m = *std::max_element(similarities.begin(), similarities.end()) / temperature;
    double acc = 0.0;
    for (double s : similarities) acc += std::exp(s / temperature - m);
    return m + std::log(acc) - similarities[static_cast<size_t>(positive_index)] / temperature;
}

std::vector<NegativeCandidate> sample_negative_entries(
    const std::string& anchor_period, const std::vector<NegativeCandidate>& pool,
    int n_negatives, Rng& rng) {
    if (n_negatives < 0) throw std::invalid_argument("sample_negatives: negative count");
    std::vector<const NegativeCandidate*> eligible;
    for (const auto& c : pool)
        if (c.period_key != anchor_period) eligible.push_back(&c);
    if (static_cast<int>(eligible.size()) < n_negatives)
        throw std::runtime_error("insufficient era-disjoint candidates: have " +
                                 std::to_string(eligible.size()) + ", need " +
                                 std::to_string(n_negatives));
    auto picks = rng.sample_without_replacement(static_cast<int>(eligible.size()), n_negatives);
    std::vector<NegativeCandidate> out;
    out.reserve(picks.size());
    for (int i : picks) out.push_back(*eligible[static_cast<size_t>(i)]);
    return out;
}

std::vector<std::string> sample_negatives(const std::string& anchor_period,
                                          const std::vector<NegativeCandidate>& pool,
                                          int n_negatives, Rng& rng) {
    auto entries = sample_negative_entries(anchor_period, pool, n_negatives, rng);
    std::vector<std::string> names;
    names.reserve(entries.size());
    for (auto& e : entries) names.push_back(std::move(e.name));
    return names;
}

std::vector<std::string> sample_negatives(const std::string& anchor_period,
                                          const std::vector<NegativeCandidate>& pool,
                                          int n_negatives, uint64_t seed) {
    Rng rng(derive_seed(seed, 0x4E454753ULL));  // "NEGS"
    return sample_negatives(anchor_period, pool, n_negatives, rng);
}

namespace {

// Integer-tap kernels with one final division keep the arithmetic order
// identical to the reference oracle.
constexpr int kBlurTaps[3][3] = {{1, 2, 1}, {2, 4, 2}, {1, 2, 1}};
constexpr int kSobelX[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
constexpr int kSobelY[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};

void check_edge_params(const EdgeParams& p) {
    if (p.gaussian_kernel != 3 || p.sobel_kernel != 3)
        throw std::invalid_argument("edge_map: only 3x3 Gaussian and Sobel kernels supported");
    if (!(p.low_threshold > 0.0 && p.low_threshold < 1.0))
        throw std::invalid_argument("edge_map: low threshold must lie in (0,1)");
}

// Clamp-to-edge 3x3 integer-tap convolution divided by `norm`.
Tensor conv3x3_clamped(const Tensor& src, const int taps[3][3], double norm) {
    int h = src.shape()[0], w = src.shape()[1];
    Tensor out({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                    int sy = std::clamp(y + ky - 1, 0, h - 1);
                    int sx = std::clamp(x + kx - 1, 0, w - 1);
                    s += taps[ky][kx] * src[sy * w + sx];
                }
            out[y * w + x] = s / norm;
        }
    return out;
}

Tensor kernel_tensor(const int taps[3][3], double norm) {
    Tensor k({1, 1, 3, 3});
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) k[y * 3 + x] = taps[y][x] / norm;
    return k;
}

}  // namespace

EdgeMap edge_map(const Image& image, const EdgeParams& params, EdgeMode mode) {
    check_edge_params(params);
    if (!image.in_unit_range())
        throw std::invalid_argument("edge_map: pixel values outside [0,1]");

    if (mode == EdgeMode::differentiable) {
        ad::Var m = edge_map_var(ad::Var::constant(image_to_chw(image)), params);
        EdgeMap out;
        out.params = params;
        out.values = Tensor({image.height, image.width});
        for (int i = 0; i < out.values.size(); ++i) out.values[i] = m.value()[i];
        return out;
    }

    // Exact Canny: blur, Sobel, non-max suppression along the quantized
    // gradient direction, single low-threshold gate (no hysteresis).
    Tensor gray = to_grayscale(image);
    Tensor blur = conv3x3_clamped(gray, kBlurTaps, 16.0);
    Tensor gx = conv3x3_clamped(blur, kSobelX, 8.0);
    Tensor gy = conv3x3_clamped(blur, kSobelY, 8.0);

    int h = image.height, w = image.width;
    Tensor mag({h, w});
    for (int i = 0; i < mag.size(); ++i)
        mag[i] = std::sqrt(gx[i] * gx[i] + gy[i] * gy[i]);

    EdgeMap out;
    out.params = params;
    out.values = Tensor({h, w});
    auto mag_at = [&](int y, int x) -> double {
        if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
        return mag[y * w + x];
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double m = mag[y * w + x];
            if (!(m > params.low_threshold)) continue;
            double theta = std::atan2(gy[y * w + x], gx[y * w + x]);
            if (theta < 0) theta += M_PI;
            int dx, dy;
            if (theta < M_PI / 8 || theta >= 7 * M_PI / 8) {
                dx = 1; dy = 0;
            } else if (theta < 3 * M_PI / 8) {
                dx = 1; dy = 1;
            } else if (theta < 5 * M_PI / 8) {
                dx = 0; dy = 1;
            } else {
                dx = -1; dy = 1;
            }
            // Keep a plateau's leading pixel: >= forward neighbor, > backward.
            if (m >= mag_at(y + dy, x + dx) && m > mag_at(y - dy, x - dx))
                out.values[y * w + x] = 1.0;
        }
    return out;
}

ad::Var edge_map_var(const ad::Var& image_chw, const EdgeParams& params) {
    check_edge_params(params);
    const auto& s = image_chw.value().shape();
    if (s.size() != 3 || s[0] != 3)
        throw std::invalid_argument("edge_map_var: expected [3,H,W] input");
    for (int i = 0; i < image_chw.value().size(); ++i) {
        double v = image_chw.value()[i];
        if (v < 0.0 || v > 1.0)
            throw std::invalid_argument("edge_map_var: pixel values outside [0,1]");
    }

    ad::Var gray = ad::channel_weighted_sum(image_chw, {kLumaR, kLumaG, kLumaB});
    ad::Var blur = ad::conv2d(gray, ad::Var::constant(kernel_tensor(kBlurTaps, 16.0)), ad::Var(),
                              ad::PadMode::replicate);
    ad::Var gx = ad::conv2d(blur, ad::Var::constant(kernel_tensor(kSobelX, 8.0)), ad::Var(),
                            ad::PadMode::replicate);
    ad::Var gy = ad::conv2d(blur, ad::Var::constant(kernel_tensor(kSobelY, 8.0)), ad::Var(),
                            ad::PadMode::replicate);
    ad::Var mag = ad::sqrt_eps(ad::add(ad::square(gx), ad::square(gy)), 1e-12);
    return ad::sigmoid(ad::scale(ad::add_scalar(mag, -params.low_threshold),
                                 params.sigmoid_slope));
}

ad::Var edge_loss(const Image& real_image, const ad::Var& generated_chw,
                  const EdgeParams& params) {
    const auto& gs = generated_chw.value().shape();
    if (gs.size() != 3 || gs[0] != 3 || gs[1] != real_image.height || gs[2] != real_image.width)
        throw std::invalid_argument("edge_loss: image shape mismatch");
    EdgeMap real = edge_map(real_image, params, EdgeMode::differentiable);
    Tensor real_map({1, real_image.height, real_image.width});
    for (int i = 0; i < real.values.size(); ++i) real_map[i] = real.values[i];
    ad::Var gen_map = edge_map_var(generated_chw, params);
    return ad::mean(ad::square(ad::sub(gen_map, ad::Var::constant(real_map))));
}

double edge_loss(const Image& real_image, const Image& generated_image,
                 const EdgeParams& params) {
    if (!real_image.same_shape(generated_image))
        throw std::invalid_argument("edge_loss: image shape mismatch");
    return edge_loss(real_image, ad::Var::constant(image_to_chw(generated_image)), params)
        .value()[0];
}

namespace {

class IdentityEncoder : public FeatureEncoder {
public:
    explicit IdentityEncoder(int resolution) : dim_(3 * resolution * resolution) {}
    std::string id() const override { return "identity"; }
    int feature_dim() const override { return dim_; }
    Tensor features(const Image& image) const override { return image_to_chw(image); }
    ad::Var features(const ad::Var& image_chw) const override { return image_chw; }

private:
    int dim_;
};

class ToyLinearEncoder : public FeatureEncoder {
public:
    ToyLinearEncoder(int resolution, uint64_t seed, int out_dim = 32)
        : weight_({out_dim, 3 * resolution * resolution}) {
        Rng rng(derive_seed(seed, 0x454E434CULL));
        double std = std::sqrt(1.0 / weight_.shape()[1]);
        for (int i = 0; i < weight_.size(); ++i) weight_[i] = std * rng.next_normal();
    }
    explicit ToyLinearEncoder(Tensor weight) : weight_(std::move(weight)) {}
    std::string id() const override { return "toy-linear"; }
    int feature_dim() const override { return weight_.shape()[0]; }
    Tensor features(const Image& image) const override {
        return features(ad::Var::constant(image_to_chw(image))).value();
    }
    ad::Var features(const ad::Var& image_chw) const override {
        return ad::matvec(ad::Var::constant(weight_), image_chw);
    }
    const Tensor& weight() const { return weight_; }

private:
    Tensor weight_;
};

class SmallConvEncoder : public FeatureEncoder {
public:
    SmallConvEncoder(int resolution, uint64_t seed, int channels = 8)
        : resolution_(resolution), channels_(channels) {
        Rng rng(derive_seed(seed, 0x454E4343ULL));
        k1_ = Tensor({channels, 3, 3, 3});
        k2_ = Tensor({channels, channels, 3, 3});
        double s1 = std::sqrt(2.0 / (3 * 9)), s2 = std::sqrt(2.0 / (channels * 9));
        for (int i = 0; i < k1_.size(); ++i) k1_[i] = s1 * rng.next_normal();
        for (int i = 0; i < k2_.size(); ++i) k2_[i] = s2 * rng.next_normal();
    }
    SmallConvEncoder(int resolution, Tensor k1, Tensor k2)
        : resolution_(resolution), channels_(k1.shape()[0]), k1_(std::move(k1)),
          k2_(std::move(k2)) {}
    std::string id() const override { return "small-conv"; }
    int feature_dim() const override { return channels_ * resolution_ * resolution_; }
    Tensor features(const Image& image) const override {
        return features(ad::Var::constant(image_to_chw(image))).value();
    }
    ad::Var features(const ad::Var& image_chw) const override {
        ad::Var x = ad::silu(ad::conv2d(image_chw, ad::Var::constant(k1_)));
        return ad::silu(ad::conv2d(x, ad::Var::constant(k2_)));
    }
    const Tensor& k1() const { return k1_; }
    const Tensor& k2() const { return k2_; }

private:
    int resolution_;
    int channels_;
    Tensor k1_, k2_;
};

}  // namespace

std::unique_ptr<FeatureEncoder> make_feature_encoder(const std::string& encoder_id,
                                                     int resolution, uint64_t seed) {
    if (encoder_id == "identity") return std::make_unique<IdentityEncoder>(resolution);
    if (encoder_id == "toy-linear") return std::make_unique<ToyLinearEncoder>(resolution, seed);
    if (encoder_id == "small-conv") return std::make_unique<SmallConvEncoder>(resolution, seed);
    if (encoder_id.rfind("external-pretrained:", 0) == 0) {
        std::string dir = encoder_id.substr(std::string("external-pretrained:").size());
        std::ifstream meta(std::filesystem::path(dir) / "encoder.json");
        if (!meta) throw std::runtime_error("cannot read encoder weights: " + dir);
        nlohmann::json j = nlohmann::json::parse(meta);
        auto tensors = read_tensor_blob((std::filesystem::path(dir) / "encoder.bin").string(),
                                        j.at("tensors"));
        std::string kind = j.at("kind").get<std::string>();
        if (kind == "linear") return std::make_unique<ToyLinearEncoder>(tensors.at(0).tensor);
        if (kind == "conv")
            return std::make_unique<SmallConvEncoder>(resolution, tensors.at(0).tensor,
                                                      tensors.at(1).tensor);
        throw std::runtime_error("unknown encoder kind: " + kind);
    }
    throw std::invalid_argument("unknown feature encoder: " + encoder_id);
}

ad::Var perceptual_loss(const Image& real_image, const ad::Var& generated_chw,
                        const FeatureEncoder& encoder) {
    Tensor real_feat = encoder.features(real_image);
    ad::Var gen_feat = encoder.features(generated_chw);
    if (!gen_feat.value().same_shape(real_feat))
        throw std::runtime_error("perceptual_loss: encoder feature shape mismatch");
    return ad::mean(ad::square(ad::sub(gen_feat, ad::Var::constant(real_feat))));
}

double perceptual_loss(const Image& real_image, const Image& generated_image,
                       const FeatureEncoder& encoder) {
    if (!real_image.same_shape(generated_image))
        throw std::invalid_argument("perceptual_loss: image shape mismatch");
    return perceptual_loss(real_image, ad::Var::constant(image_to_chw(generated_image)), encoder)
        .value()[0];
}

void LossWeights::validate() const {
    if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0)
        throw std::invalid_argument("loss weights must be nonnegative");
    if (!(min_snr_gamma > 0)) throw std::invalid_argument("min-SNR gamma must be positive");
}

namespace {

void check_term(const ad::Var& term, const char* name) {
    if (!term.defined()) return;
    if (term.value().size() != 1)
        throw std::invalid_argument(std::string("combined_loss: ") + name + " is not a scalar");
    if (!std::isfinite(term.value()[0]))
        throw std::runtime_error(std::string("non-finite loss term: ") + name);
}

}  // namespace

ad::Var combined_loss(const ad::Var& base, const ad::Var& text, const ad::Var& edge,
                      const ad::Var& perceptual, const LossWeights& weights) {
    weights.validate();
    if (!base.defined()) throw std::invalid_argument("combined_loss: base term required");
    check_term(base, "L_SD");
    check_term(text, "L_text");
    check_term(edge, "L_edge");
    check_term(perceptual, "L_perceptual");

    ad::Var total = base;
    if (text.defined()) total = ad::add(total, ad::scale(text, weights.lambda1));
    if (edge.defined()) total = ad::add(total, ad::scale(edge, weights.lambda2));
    if (perceptual.defined()) total = ad::add(total, ad::scale(perceptual, weights.lambda3));
    return total;
}

double combined_loss(double base, double text, double edge, double perceptual,
                     const LossWeights& weights) {
    weights.validate();
    for (auto [v, name] : {std::pair{base, "L_SD"}, {text, "L_text"}, {edge, "L_edge"},
                           {perceptual, "L_perceptual"}})
        if (!std::isfinite(v)) throw std::runtime_error(std::string("non-finite loss term: ") + name);
    return base + weights.lambda1 * text + weights.lambda2 * edge + weights.lambda3 * perceptual;
}

}  // namespace artifact
