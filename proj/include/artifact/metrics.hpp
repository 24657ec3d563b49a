#pragma once

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "artifact/corpus.hpp"
#include "artifact/diffusion.hpp"
#include "artifact/supervision.hpp"

namespace artifact {

// Cosine similarity of encoded feature vectors; throws on zero-norm features.
double clip_visual_similarity(const Image& a, const Image& b, const FeatureEncoder& encoder);

struct SsimParams {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;
};

// Mean of the local luminance/contrast/structure map over a Gaussian window,
// computed on grayscale. Valid-window policy: images must be at least the
// window size.
double ssim(const Image& a, const Image& b, const SsimParams& params = {});

// Multi-layer feature stack for perceptual distance. Layers are compared
// after per-position channel unit-normalization.
class LpipsNet {
public:
    virtual ~LpipsNet() = default;
    virtual std::string id() const = 0;
    virtual std::vector<Tensor> layers(const Image& image) const = 0;  // each [C,H,W]
};

// ids: "identity" (single pixel layer), "toy-conv" (two seeded conv layers).
std::unique_ptr<LpipsNet> make_lpips_net(const std::string& net_id, uint64_t seed = 0);

// Sum over layers of mean squared distance between unit-normalized maps.
double lpips(const Image& a, const Image& b, const LpipsNet& net);

struct MetricRow {
    std::string record_id;
    double clip_vs = 0.0;
    double ssim = 0.0;
    double lpips = 0.0;
    bool failed = false;
    std::string error;
};

struct MetricReport {
    std::vector<MetricRow> rows;
    double mean_clip_vs = 0.0;  // over non-failed rows
    double mean_ssim = 0.0;
    double mean_lpips = 0.0;
    nlohmann::json metadata;

    int failures() const;
    void recompute_aggregates();
    nlohmann::json to_json() const;
    static MetricReport from_json(const nlohmann::json& j);
    // Table 2-style text row block.
    std::string table_line(const std::string& model_label) const;
};

struct EvalEncoders {
    std::string clip_encoder = "identity";
    std::string lpips_net = "toy-conv";
    uint64_t encoder_seed = 0;
};

// Shared core: metrics over explicit (ground truth, candidate) pairs.
MetricReport compute_report(
    const std::vector<std::tuple<std::string, Image, Image>>& id_gt_gen,
    const EvalEncoders& encoders, nlohmann::json metadata = {});

// Generates one image per split record at a per-record seed derived from
// `seed`, compares against ground truth, and aggregates. Per-record
// generation failures become flagged rows excluded from aggregates.
MetricReport evaluate_split(Backbone& backbone, const VarianceSchedule& schedule,
                            const std::vector<ArtifactRecord>& records,
                            const std::vector<std::string>& split_ids,
                            const std::string& split_name,
                            const std::map<std::string, std::string>& prompts, int resolution,
                            const EvalEncoders& encoders, uint64_t seed,
                            const std::string& model_id);

inline constexpr std::array<const char*, 5> kRatingAspects = {
    "material", "shape", "pattern_color", "size_ratio", "dynasty"};

struct RatingRow {
    std::string sample_id;
    std::array<int, 5> scores{};  // each in 0..5
};

struct RatingSheet {
    std::string rater_id;
    std::vector<RatingRow> rows;
};

struct RatingAggregate {
    std::array<double, 5> aspect_means{};
    double total_avg = 0.0;
    int n_rows = 0;
    std::vector<std::string> rejected_raters;  // malformed sheets, by rater id
};

// Mean per aspect over all (rater, sample) scores; total average is the mean
// of the five aspect means. Malformed sheets are rejected whole, by rater.
RatingAggregate aggregate_ratings(const std::vector<RatingSheet>& sheets);

// CSV: rater_id,sample_id,material,shape,pattern_color,size_ratio,dynasty
std::vector<RatingSheet> load_rating_sheets_csv(const std::string& path);

// Table 2-style comparison table over reports (one line per model), plus a
// Table 4-style section when ratings are given.
std::string render_comparison_table(
    const std::vector<std::pair<std::string, MetricReport>>& reports,
    const std::optional<RatingAggregate>& ratings = std::nullopt);

}  // namespace artifact
