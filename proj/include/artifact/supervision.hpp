#pragma once

#include <memory>
#include <string>
#include <vector>

#include "artifact/autodiff.hpp"
#include "artifact/corpus.hpp"
#include "artifact/image.hpp"
#include "artifact/rng.hpp"

namespace artifact {

// One anchor (a description embedding) against its candidate name
// embeddings: exactly one positive, negatives all from different eras.
// Embeddings are unit-normalized at construction, before any dot product.
struct ContrastiveGroup {
    ad::Var anchor;                    // normalized description embedding
    std::vector<ad::Var> candidates;   // normalized name embeddings
    int positive_index = 0;
    std::string anchor_period;
    std::vector<std::string> candidate_periods;
};

// Batch of contrastive groups. Construction enforces the different-era rule
// for every negative and exactly one positive per anchor.
class SimilarityBatch {
public:
    void add_group(ad::Var anchor_embedding, std::string anchor_period,
                   std::vector<ad::Var> candidate_embeddings,
                   std::vector<std::string> candidate_periods, int positive_index);

    const std::vector<ContrastiveGroup>& groups() const { return groups_; }
    bool empty() const { return groups_.empty(); }

private:
    std::vector<ContrastiveGroup> groups_;
};

// Mean over anchors of -log softmax(positive / temperature) over each
// anchor's candidate similarities. Differentiable through both embedding
// sets.
ad::Var info_nce_loss(const SimilarityBatch& batch, double temperature = 1.0);

// Similarity-level core used by the batch path and by analytic tests:
// -log(exp(s_pos/T) / sum_j exp(s_j/T)).
double info_nce_from_similarities(const std::vector<double>& similarities, int positive_index,
                                  double temperature = 1.0);

struct NegativeCandidate {
    std::string name;
    std::string period_key;
};

// Uniform sample without replacement from the pool entries whose period_key
// differs from the anchor's. Deterministic given the seed.
std::vector<std::string> sample_negatives(const std::string& anchor_period,
                                          const std::vector<NegativeCandidate>& pool,
                                          int n_negatives, uint64_t seed);
std::vector<std::string> sample_negatives(const std::string& anchor_period,
                                          const std::vector<NegativeCandidate>& pool,
                                          int n_negatives, Rng& rng);
// Entry variant keeping each sampled name's period key.
std::vector<NegativeCandidate> sample_negative_entries(
    const std::string& anchor_period, const std::vector<NegativeCandidate>& pool,
    int n_negatives, Rng& rng);

struct EdgeParams {
    int gaussian_kernel = 3;
    int sobel_kernel = 3;
    double low_threshold = 0.15;
    double sigmoid_slope = 50.0;  // differentiable mode only
};

struct EdgeMap {
    Tensor values;  // H x W in [0,1]
    EdgeParams params;
};

enum class EdgeMode { exact_canny, differentiable };

// exact_canny: blur -> Sobel -> non-max suppression -> hard threshold,
// binary {0,1} output. differentiable: blur -> Sobel magnitude -> sigmoid
// around the threshold, values in (0,1) with gradients everywhere.
EdgeMap edge_map(const Image& image, const EdgeParams& params, EdgeMode mode);

// Differentiable-mode edge map over an autodiff pixel tensor [3,H,W].
ad::Var edge_map_var(const ad::Var& image_chw, const EdgeParams& params);

// Mean squared difference of differentiable-mode edge maps; the real
// image's map is a constant, so gradients reach the generated image only.
ad::Var edge_loss(const Image& real_image, const ad::Var& generated_chw,
                  const EdgeParams& params);
double edge_loss(const Image& real_image, const Image& generated_image,
                 const EdgeParams& params);

// Frozen feature encoder mapping an image to a fixed-size vector.
class FeatureEncoder {
public:
    virtual ~FeatureEncoder() = default;
    virtual std::string id() const = 0;
    virtual int feature_dim() const = 0;
    virtual Tensor features(const Image& image) const = 0;
    // Differentiable path; parameters stay frozen (constants in the graph).
    virtual ad::Var features(const ad::Var& image_chw) const = 0;
};

// Registry ids: "toy-linear", "small-conv", "identity",
// "external-pretrained:<weights-file>".
std::unique_ptr<FeatureEncoder> make_feature_encoder(const std::string& encoder_id,
                                                     int resolution, uint64_t seed = 0);

// Squared Euclidean distance of feature vectors, mean-reduced over the
// feature dimension. Gradients flow to the generated image only.
ad::Var perceptual_loss(const Image& real_image, const ad::Var& generated_chw,
                        const FeatureEncoder& encoder);
double perceptual_loss(const Image& real_image, const Image& generated_image,
                       const FeatureEncoder& encoder);

struct LossWeights {
    double lambda1 = 0.3;  // text contrastive
    double lambda2 = 0.3;  // edge
    double lambda3 = 0.1;  // perceptual
    double min_snr_gamma = 5.0;

    void validate() const;
};

// L = L_SD + lambda1 L_text + lambda2 L_edge + lambda3 L_perceptual.
// Undefined term vars are treated as omitted (contribute nothing).
ad::Var combined_loss(const ad::Var& base, const ad::Var& text, const ad::Var& edge,
                      const ad::Var& perceptual, const LossWeights& weights);
double combined_loss(double base, double text, double edge, double perceptual,
                     const LossWeights& weights);

}  // namespace artifact
