#include "artifact/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "artifact/metrics.hpp"

namespace artifact {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
constexpr uint64_t kTagBatch = 0x4241544348ULL;      // "BATCH"
constexpr uint64_t kTagDiffusion = 0x44494646ULL;    // "DIFF"
constexpr uint64_t kTagNegatives = 0x4E454753ULL;    // "NEGS"
constexpr uint64_t kTagValidation = 0x56414C49ULL;   // "VALI"
}  // namespace

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
    if (!(learning_rate > 0)) throw std::invalid_argument("train config: learning_rate must be > 0");
    if (max_steps < 1) throw std::invalid_argument("train config: max_steps must be >= 1");
    if (optimizer != "adam") throw std::invalid_argument("train config: unknown optimizer");
    if (resolution < 3) throw std::invalid_argument("train config: resolution too small");
    if (negatives < 1) throw std::invalid_argument("train config: negatives must be >= 1");
    loss_weights.validate();
}

json TrainConfig::to_json() const {
    return {{"batch_size", batch_size},
            {"learning_rate", learning_rate},
            {"optimizer", optimizer},
            {"adam_betas", {adam_beta1, adam_beta2}},
            {"adam_eps", adam_eps},
            {"max_steps", max_steps},
            {"seed", seed},
            {"loss_weights",
             {{"lambda1", loss_weights.lambda1},
              {"lambda2", loss_weights.lambda2},
              {"lambda3", loss_weights.lambda3}}},
            {"snr_gamma", loss_weights.min_snr_gamma},
            {"eval_every", eval_every},
            {"checkpoint_every", checkpoint_every},
            {"resolution", resolution},
            {"schedule",
             {{"timesteps", schedule.timesteps},
              {"beta_start", schedule.beta_start},
              {"beta_end", schedule.beta_end}}},
            {"use_text", use_text},
            {"use_edge", use_edge},
            {"use_perceptual", use_perceptual},
            {"temperature", temperature},
            {"negatives", negatives},
            {"perceptual_encoder", perceptual_encoder},
            {"edge_params",
             {{"gaussian_kernel", edge_params.gaussian_kernel},
              {"sobel_kernel", edge_params.sobel_kernel},
              {"low_threshold", edge_params.low_threshold},
              {"sigmoid_slope", edge_params.sigmoid_slope}}}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.optimizer = j.value("optimizer", c.optimizer);
    if (j.contains("adam_betas")) {
        c.adam_beta1 = j["adam_betas"].at(0).get<double>();
        c.adam_beta2 = j["adam_betas"].at(1).get<double>();
    }
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.seed = j.value("seed", c.seed);
    if (j.contains("loss_weights")) {
        const auto& w = j["loss_weights"];
        c.loss_weights.lambda1 = w.value("lambda1", c.loss_weights.lambda1);
        c.loss_weights.lambda2 = w.value("lambda2", c.loss_weights.lambda2);
        c.loss_weights.lambda3 = w.value("lambda3", c.loss_weights.lambda3);
    }
    c.loss_weights.min_snr_gamma = j.value("snr_gamma", c.loss_weights.min_snr_gamma);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.resolution = j.value("resolution", c.resolution);
    if (j.contains("schedule")) {
        const auto& s = j["schedule"];
        c.schedule.timesteps = s.value("timesteps", c.schedule.timesteps);
        c.schedule.beta_start = s.value("beta_start", c.schedule.beta_start);
        c.schedule.beta_end = s.value("beta_end", c.schedule.beta_end);
    }
    c.use_text = j.value("use_text", c.use_text);
    c.use_edge = j.value("use_edge", c.use_edge);
    c.use_perceptual = j.value("use_perceptual", c.use_perceptual);
    c.temperature = j.value("temperature", c.temperature);
    c.negatives = j.value("negatives", c.negatives);
    c.perceptual_encoder = j.value("perceptual_encoder", c.perceptual_encoder);
    if (j.contains("edge_params")) {
        const auto& e = j["edge_params"];
        c.edge_params.gaussian_kernel = e.value("gaussian_kernel", 3);
        c.edge_params.sobel_kernel = e.value("sobel_kernel", 3);
        c.edge_params.low_threshold = e.value("low_threshold", 0.15);
        c.edge_params.sigmoid_slope = e.value("sigmoid_slope", 50.0);
    }
    return c;
}

json LossRecord::to_json() const {
    return {{"step", step},         {"l_sd", l_sd},
            {"l_text", l_text},     {"l_edge", l_edge},
            {"l_perceptual", l_perceptual}, {"total", total},
            {"snr_weight_mean", snr_weight_mean}, {"text_skipped", text_skipped}};
}

double min_snr_weight(int t, const VarianceSchedule& schedule, double gamma) {
    if (!(gamma > 0)) throw std::invalid_argument("min_snr_weight: gamma must be > 0");
    double snr = schedule.snr_at(t);  // throws on alpha_bar in {0,1}
    return std::min(snr, gamma) / snr;
}

Trainer::Trainer(TrainConfig config, std::shared_ptr<ToyBackbone> backbone)
    : config_(std::move(config)),
      backbone_(std::move(backbone)),
      rng_batch_(derive_seed(config_.seed, kTagBatch)),
      rng_diffusion_(derive_seed(config_.seed, kTagDiffusion)),
      rng_negatives_(derive_seed(config_.seed, kTagNegatives)) {
    config_.validate();
    if (!backbone_) throw std::invalid_argument("trainer: backbone required");
    schedule_ = config_.schedule.build();
    if (config_.use_perceptual)
        perceptual_encoder_ =
            make_feature_encoder(config_.perceptual_encoder, config_.resolution, config_.seed);
    params_ = backbone_->trainable_params();
    adam_m_.reserve(params_.size());
    adam_v_.reserve(params_.size());
    for (const auto& p : params_) {
        adam_m_.emplace_back(p.value().shape());
        adam_v_.emplace_back(p.value().shape());
    }
}

void Trainer::set_text_context(std::map<std::string, ContrastiveEntry> by_record,
                               std::vector<NegativeCandidate> pool) {
    text_by_record_ = std::move(by_record);
    negative_pool_ = std::move(pool);
}

LossRecord Trainer::train_step(const std::vector<TrainingSample>& batch) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    for (const auto& s : batch)
        if (s.image.height != config_.resolution || s.image.width != config_.resolution)
            throw std::invalid_argument("train_step: sample " + s.record_id +
                                        " not at configured resolution");

    const int batch_n = static_cast<int>(batch.size());
    const auto latent_shape = backbone_->latent_shape();
    const int latent_size = Tensor::count(latent_shape);

    // Diffusion draws, in a fixed order independent of which terms run.
    std::vector<int> ts(batch.size());
    std::vector<Tensor> noises(batch.size());
    std::vector<double> snr_weights(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) {
        ts[i] = static_cast<int>(rng_diffusion_.next_int(1, schedule_.timesteps));
        noises[i] = Tensor(latent_shape);
        for (int k = 0; k < latent_size; ++k) noises[i][k] = rng_diffusion_.next_normal();
        snr_weights[i] = min_snr_weight(ts[i], schedule_, config_.loss_weights.min_snr_gamma);
    }

    // L_SD with per-sample Min-SNR weights, keeping the predicted noise for
    // the one-step denoised estimate that feeds the visual losses.
    ad::Var sd_sum, edge_sum, perc_sum;
    for (size_t i = 0; i < batch.size(); ++i) {
        const auto& sample = batch[i];
        Tensor z0 = backbone_->encode_image(sample.image);
        TextEmbedding cond = backbone_->encode_text(sample.prompt);
        LatentState noised = forward_noise(z0, ts[i], noises[i], schedule_);
        ad::Var z_t = ad::Var::constant(noised.z);
        ad::Var eps_hat = backbone_->predict_noise(z_t, ts[i], cond);
        if (!eps_hat.value().all_finite())
            throw std::runtime_error("non-finite loss term: L_SD (predicted noise)");

        ad::Var err =
            ad::sum(ad::square(ad::sub(ad::Var::constant(noises[i]), eps_hat)));
        ad::Var weighted = ad::scale(err, snr_weights[i]);
        sd_sum = sd_sum.defined() ? ad::add(sd_sum, weighted) : weighted;

        if (config_.use_edge || config_.use_perceptual) {
            ad::Var x0_hat = predict_x0(z_t, ts[i], eps_hat, schedule_);
            ad::Var gen = backbone_->decode_latent(x0_hat);
            if (config_.use_edge) {
                ad::Var e = edge_loss(sample.image, gen, config_.edge_params);
                edge_sum = edge_sum.defined() ? ad::add(edge_sum, e) : e;
            }
            if (config_.use_perceptual) {
                ad::Var p = perceptual_loss(sample.image, gen, *perceptual_encoder_);
                perc_sum = perc_sum.defined() ? ad::add(perc_sum, p) : p;
            }
        }
    }
    ad::Var l_sd = ad::scale(sd_sum, 1.0 / batch_n);
    ad::Var l_edge, l_perc;
    if (edge_sum.defined()) l_edge = ad::scale(edge_sum, 1.0 / batch_n);
    if (perc_sum.defined()) l_perc = ad::scale(perc_sum, 1.0 / batch_n);

    // Era-contrastive term over the batch's descriptions and names.
    ad::Var l_text;
    bool text_skipped = false;
    if (config_.use_text) {
        try {
            SimilarityBatch sim;
            for (const auto& sample : batch) {
                auto it = text_by_record_.find(sample.record_id);
                if (it == text_by_record_.end())
                    throw std::runtime_error("no text context for record " + sample.record_id);
                const auto& entry = it->second;
                auto negatives = sample_negative_entries(entry.period_key, negative_pool_,
                                                         config_.negatives, rng_negatives_);
                std::vector<ad::Var> candidates;
                std::vector<std::string> periods;
                candidates.push_back(backbone_->encode_text(entry.name).w);
                periods.push_back(entry.period_key);
                for (const auto& neg : negatives) {
                    candidates.push_back(backbone_->encode_text(neg.name).w);
                    periods.push_back(neg.period_key);
                }
                sim.add_group(backbone_->encode_text(entry.description).w, entry.period_key,
                              std::move(candidates), std::move(periods), 0);
            }
            l_text = info_nce_loss(sim, config_.temperature);
        } catch (const std::runtime_error& e) {
            // Era sampling starvation skips the term rather than aborting.
            std::cerr << "warning: skipping L_text at step " << (step_ + 1) << ": " << e.what()
                      << "\n";
            l_text = ad::Var();
            text_skipped = true;
        }
    }

    ad::Var total = combined_loss(l_sd, l_text, l_edge, l_perc, config_.loss_weights);

    total.backward();
    adam_update();
    ++step_;

    LossRecord rec;
    rec.step = step_;
    rec.l_sd = l_sd.value()[0];
    rec.l_text = l_text.defined() ? l_text.value()[0] : 0.0;
    rec.l_edge = l_edge.defined() ? l_edge.value()[0] : 0.0;
    rec.l_perceptual = l_perc.defined() ? l_perc.value()[0] : 0.0;
    rec.total = total.value()[0];
    double wsum = 0.0;
    for (double w : snr_weights) wsum += w;
    rec.snr_weight_mean = wsum / batch_n;
    rec.text_skipped = text_skipped;

    sum_total_ += rec.total;
    sum_sd_ += rec.l_sd;
    sum_text_ += rec.l_text;
    sum_edge_ += rec.l_edge;
    sum_perc_ += rec.l_perceptual;
    return rec;
}

void Trainer::adam_update() {
    ++adam_t_;
    double bc1 = 1.0 - std::pow(config_.adam_beta1, adam_t_);
    double bc2 = 1.0 - std::pow(config_.adam_beta2, adam_t_);
    for (size_t p = 0; p < params_.size(); ++p) {
        Tensor& value = params_[p].mutable_value();
        const Tensor& grad = params_[p].grad();
        Tensor& m = adam_m_[p];
        Tensor& v = adam_v_[p];
        if (grad.empty()) {
            // Parameter untouched by this step's graph: moments still decay.
            for (int i = 0; i < value.size(); ++i) {
                m[i] *= config_.adam_beta1;
                v[i] *= config_.adam_beta2;
                value[i] -= config_.learning_rate * (m[i] / bc1) /
                            (std::sqrt(v[i] / bc2) + config_.adam_eps);
            }
        } else {
            for (int i = 0; i < value.size(); ++i) {
                double g = grad[i];
                m[i] = config_.adam_beta1 * m[i] + (1.0 - config_.adam_beta1) * g;
                v[i] = config_.adam_beta2 * v[i] + (1.0 - config_.adam_beta2) * g * g;
                value[i] -= config_.learning_rate * (m[i] / bc1) /
                            (std::sqrt(v[i] / bc2) + config_.adam_eps);
            }
        }
        params_[p].zero_grad();
    }
}

double Trainer::validation_clip_vs(const std::vector<TrainingSample>& val_samples, int at_step) {
    // CLIP-VS proxy over up to eight fixed validation prompts, drawn with a
    // seed independent of the training streams.
    size_t n = std::min<size_t>(8, val_samples.size());
    if (n == 0) return 0.0;
    auto encoder = make_feature_encoder("identity", config_.resolution);
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const auto& s = val_samples[i];
        TextEmbedding cond = backbone_->encode_text(s.prompt);
        uint64_t seed = derive_seed(derive_seed(config_.seed, kTagValidation),
                                    static_cast<uint64_t>(at_step) * 1000 + i);
        Image gen = reverse_sample(cond, *backbone_, schedule_, schedule_.timesteps, seed);
        acc += clip_visual_similarity(s.image, gen, *encoder);
    }
    return acc / static_cast<double>(n);
}

FitResult Trainer::fit(const std::vector<TrainingSample>& train_samples,
                       const std::vector<TrainingSample>& val_samples,
                       const std::string& out_dir) {
    if (train_samples.empty()) throw std::invalid_argument("fit: no training samples");
    fs::create_directories(out_dir);
    std::ofstream loss_log(fs::path(out_dir) / "loss_log.jsonl", std::ios::app);
    std::ofstream val_log(fs::path(out_dir) / "val_log.jsonl", std::ios::app);
    if (!loss_log || !val_log) throw std::runtime_error("fit: cannot open logs under " + out_dir);

    FitResult result;
    int n = static_cast<int>(train_samples.size());
    while (step_ < config_.max_steps) {
        std::vector<TrainingSample> batch;
        batch.reserve(static_cast<size_t>(config_.batch_size));
        for (int j = 0; j < config_.batch_size; ++j)
            batch.push_back(train_samples[static_cast<size_t>(rng_batch_.next_int(0, n - 1))]);

        LossRecord rec = train_step(batch);
        loss_log << rec.to_json().dump() << "\n";
        result.losses.push_back(rec);

        if (config_.eval_every > 0 && rec.step % config_.eval_every == 0) {
            ValRecord v{rec.step, validation_clip_vs(val_samples, rec.step)};
            val_log << json{{"step", v.step}, {"val_clip_vs", v.val_clip_vs}}.dump() << "\n";
            result.validations.push_back(v);
        }
        if (config_.checkpoint_every > 0 && rec.step % config_.checkpoint_every == 0) {
            save_checkpoint((fs::path(out_dir) / "checkpoints" /
                             ("step_" + std::to_string(rec.step))).string());
        }
    }
    std::string final_dir = (fs::path(out_dir) / "checkpoints" / "final").string();
    save_checkpoint(final_dir);
    result.final_checkpoint = final_dir;
    return result;
}

void Trainer::save_checkpoint(const std::string& dir) const {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("checkpoint write failed: " + dir + ": " + ec.message());

    json meta;
    meta["format_version"] = 1;
    meta["step"] = step_;
    meta["schedule"] = {{"timesteps", config_.schedule.timesteps},
                        {"beta_start", config_.schedule.beta_start},
                        {"beta_end", config_.schedule.beta_end}};
    meta["backbone"] = backbone_->describe();
    meta["config"] = config_.to_json();
    meta["rng"] = {{"batch", rng_batch_.state()},
                   {"diffusion", rng_diffusion_.state()},
                   {"negatives", rng_negatives_.state()}};
    meta["loss_averages"] = {{"count", step_},
                             {"total", step_ ? sum_total_ / step_ : 0.0},
                             {"l_sd", step_ ? sum_sd_ / step_ : 0.0},
                             {"l_text", step_ ? sum_text_ / step_ : 0.0},
                             {"l_edge", step_ ? sum_edge_ / step_ : 0.0},
                             {"l_perceptual", step_ ? sum_perc_ / step_ : 0.0}};
    meta["loss_sums"] = {{"total", sum_total_}, {"l_sd", sum_sd_}, {"l_text", sum_text_},
                         {"l_edge", sum_edge_}, {"l_perceptual", sum_perc_}};

    meta["tensors"] = write_tensor_blob((fs::path(dir) / "params.bin").string(),
                                        backbone_->named_params());

    std::vector<NamedTensor> opt;
    for (size_t p = 0; p < params_.size(); ++p) {
        opt.push_back({"m." + std::to_string(p), adam_m_[p]});
        opt.push_back({"v." + std::to_string(p), adam_v_[p]});
    }
    json opt_index = write_tensor_blob((fs::path(dir) / "optimizer.bin").string(), opt);
    meta["optimizer"] = {{"adam_t", adam_t_}, {"tensors", opt_index}};

    std::ofstream out(fs::path(dir) / "checkpoint.json", std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint write failed: " + dir);
    out << meta.dump(2) << "\n";
    if (!out.flush()) throw std::runtime_error("checkpoint write failed: " + dir);
}

void Trainer::resume_from(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "checkpoint.json");
    if (!in) throw std::runtime_error("cannot read checkpoint: " + dir);
    json meta = json::parse(in);

    backbone_->load_params(
        read_tensor_blob((fs::path(dir) / "params.bin").string(), meta.at("tensors")));

    auto opt = read_tensor_blob((fs::path(dir) / "optimizer.bin").string(),
                                meta.at("optimizer").at("tensors"));
    if (opt.size() != params_.size() * 2)
        throw std::runtime_error("checkpoint optimizer state does not match parameter count");
    for (size_t p = 0; p < params_.size(); ++p) {
        adam_m_[p] = opt[2 * p].tensor;
        adam_v_[p] = opt[2 * p + 1].tensor;
    }
    adam_t_ = meta.at("optimizer").at("adam_t").get<int>();

    rng_batch_.restore(meta.at("rng").at("batch").get<std::string>());
    rng_diffusion_.restore(meta.at("rng").at("diffusion").get<std::string>());
    rng_negatives_.restore(meta.at("rng").at("negatives").get<std::string>());
    step_ = meta.at("step").get<int>();
    if (meta.contains("loss_sums")) {
        sum_total_ = meta["loss_sums"].value("total", 0.0);
        sum_sd_ = meta["loss_sums"].value("l_sd", 0.0);
        sum_text_ = meta["loss_sums"].value("l_text", 0.0);
        sum_edge_ = meta["loss_sums"].value("l_edge", 0.0);
        sum_perc_ = meta["loss_sums"].value("l_perceptual", 0.0);
    }
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "checkpoint.json");
    if (!in) throw std::runtime_error("cannot read checkpoint: " + dir);
    json meta = json::parse(in);

    LoadedCheckpoint out;
    const auto& bb = meta.at("backbone");
    if (bb.at("type").get<std::string>() != "toy_conv")
        throw std::runtime_error("unsupported backbone type in checkpoint");
    out.backbone = std::make_shared<ToyBackbone>(ToyBackboneConfig::from_json(bb.at("config")));
    out.backbone->load_params(
        read_tensor_blob((fs::path(dir) / "params.bin").string(), meta.at("tensors")));

    const auto& sc = meta.at("schedule");
    out.schedule_config.timesteps = sc.at("timesteps").get<int>();
    out.schedule_config.beta_start = sc.at("beta_start").get<double>();
    out.schedule_config.beta_end = sc.at("beta_end").get<double>();
    out.schedule = out.schedule_config.build();
    out.step = meta.at("step").get<int>();
    out.metadata = std::move(meta);
    return out;
}

}  // namespace artifact
