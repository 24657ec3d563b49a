#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "artifact/backbone.hpp"
#include "artifact/corpus.hpp"
#include "artifact/diffusion.hpp"
#include "artifact/supervision.hpp"

namespace artifact {

struct ScheduleConfig {
    int timesteps = 50;
    double beta_start = 0.01;
    double beta_end = 0.3;

    VarianceSchedule build() const { return make_schedule(timesteps, beta_start, beta_end); }
};

struct TrainConfig {
    int batch_size = 24;
    double learning_rate = 1e-6;
    std::string optimizer = "adam";
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int max_steps = 1;
    uint64_t seed = 0;
    LossWeights loss_weights;
    int eval_every = 0;        // 0 disables validation metric
    int checkpoint_every = 0;  // 0 disables periodic checkpoints
    int resolution = 16;
    ScheduleConfig schedule;

    // Structural term switches; a disabled term is omitted entirely (no
    // computation, no RNG consumption) and logs 0.
    bool use_text = true;
    bool use_edge = true;
    bool use_perceptual = true;

    double temperature = 1.0;       // InfoNCE
    int negatives = 3;              // N-1 per anchor
    std::string perceptual_encoder = "small-conv";
    EdgeParams edge_params;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct LossRecord {
    int step = 0;
    double l_sd = 0.0;
    double l_text = 0.0;
    double l_edge = 0.0;
    double l_perceptual = 0.0;
    double total = 0.0;
    double snr_weight_mean = 0.0;
    bool text_skipped = false;  // era sampling had too few candidates

    nlohmann::json to_json() const;
};

struct ValRecord {
    int step = 0;
    double val_clip_vs = 0.0;
};

struct FitResult {
    std::vector<LossRecord> losses;
    std::vector<ValRecord> validations;
    std::string final_checkpoint;
};

// SNR(t) = alpha_bar/(1-alpha_bar); weight = min(SNR, gamma)/SNR in (0, 1].
double min_snr_weight(int t, const VarianceSchedule& schedule, double gamma);

// Per-record text context for the contrastive term.
struct ContrastiveEntry {
    std::string description;
    std::string name;
    std::string period_key;
};

// Binds corpus samples, the backbone, and the supervision terms into the
// combined objective with Min-SNR weighting and Adam updates. Single
// training thread; all randomness flows through three independent streams
// (batch selection, diffusion draws, negative sampling) derived from the
// config seed so omitting a term never perturbs the others.
class Trainer {
public:
    Trainer(TrainConfig config, std::shared_ptr<ToyBackbone> backbone);

    // Text context: anchors look up description/name by record id; the pool
    // provides era-disjoint negative names.
    void set_text_context(std::map<std::string, ContrastiveEntry> by_record,
                          std::vector<NegativeCandidate> pool);

    LossRecord train_step(const std::vector<TrainingSample>& batch);

    // Runs max_steps steps over the training samples with periodic
    // validation and checkpointing. Appends loss_log.jsonl / val_log.jsonl
    // under out_dir and writes checkpoints/final.
    FitResult fit(const std::vector<TrainingSample>& train_samples,
                  const std::vector<TrainingSample>& val_samples, const std::string& out_dir);

    void save_checkpoint(const std::string& dir) const;
    // Restores parameters, optimizer state, RNG streams, and step counter.
    void resume_from(const std::string& dir);

    int step() const { return step_; }
    const VarianceSchedule& schedule() const { return schedule_; }
    ToyBackbone& backbone() { return *backbone_; }

private:
    void adam_update();
    double validation_clip_vs(const std::vector<TrainingSample>& val_samples, int at_step);

    TrainConfig config_;
    std::shared_ptr<ToyBackbone> backbone_;
    VarianceSchedule schedule_;
    std::unique_ptr<FeatureEncoder> perceptual_encoder_;

    std::map<std::string, ContrastiveEntry> text_by_record_;
    std::vector<NegativeCandidate> negative_pool_;

    Rng rng_batch_, rng_diffusion_, rng_negatives_;
    int step_ = 0;
    int adam_t_ = 0;
    std::vector<Tensor> adam_m_, adam_v_;
    std::vector<ad::Var> params_;

    // Running loss averages carried through checkpoints.
    double sum_total_ = 0.0, sum_sd_ = 0.0, sum_text_ = 0.0, sum_edge_ = 0.0, sum_perc_ = 0.0;
};

struct LoadedCheckpoint {
    std::shared_ptr<ToyBackbone> backbone;
    VarianceSchedule schedule;
    ScheduleConfig schedule_config;
    int step = 0;
    nlohmann::json metadata;
};

LoadedCheckpoint load_checkpoint(const std::string& dir);

}  // namespace artifact
