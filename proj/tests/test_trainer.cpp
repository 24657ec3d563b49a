#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "artifact/synth.hpp"
#include "artifact/trainer.hpp"
#include "test_util.hpp"

using namespace artifact;
namespace fs = std::filesystem;

namespace {

struct MiniWorld {
    std::vector<TrainingSample> train;
    std::vector<TrainingSample> val;
    std::map<std::string, ContrastiveEntry> text;
    std::vector<NegativeCandidate> pool;
};

// In-memory shape dataset with three eras for negative sampling.
MiniWorld make_world(int n, int resolution, uint64_t seed) {
    MiniWorld w;
    Rng rng(seed);
    const char* shapes[3] = {"square", "circle", "triangle"};
    const char* eras[3] = {"Era A", "Era B", "Era C"};
    const std::array<double, 3> colors[3] = {{0.8, 0.2, 0.2}, {0.2, 0.8, 0.2}, {0.2, 0.2, 0.8}};
    for (int i = 0; i < n; ++i) {
        int k = static_cast<int>(rng.next_int(0, 2));
        TrainingSample s;
        s.record_id = "r" + std::to_string(i);
        s.prompt = std::string(shapes[k]) + " prompt " + std::to_string(i % 4);
        s.image = render_shape(shapes[k], colors[k], resolution, resolution / 4);
        s.period_key = eras[k];
        if (i % 5 == 4)
            w.val.push_back(s);
        else
            w.train.push_back(s);
        w.text[s.record_id] = {"a description of item " + std::to_string(i),
                               std::string(shapes[k]) + " item", eras[k]};
        w.pool.push_back({std::string(shapes[k]) + " item " + std::to_string(i), eras[k]});
    }
    return w;
}

TrainConfig quick_config(uint64_t seed) {
    TrainConfig cfg;
    cfg.batch_size = 3;
    cfg.learning_rate = 1e-3;
    cfg.max_steps = 4;
    cfg.seed = seed;
    cfg.resolution = 8;
    cfg.schedule = {8, 0.05, 0.35};
    cfg.negatives = 2;
    cfg.loss_weights.lambda1 = 0.3;
    cfg.loss_weights.lambda2 = 0.3;
    cfg.loss_weights.lambda3 = 0.1;
    return cfg;
}

std::shared_ptr<ToyBackbone> quick_backbone(uint64_t seed) {
    ToyBackboneConfig cfg;
    cfg.resolution = 8;
    cfg.channels = 4;
    cfg.text_dim = 8;
    cfg.vocab = 64;
    cfg.cond_hidden = 12;
    cfg.init_seed = seed;
    return std::make_shared<ToyBackbone>(cfg);
}

Trainer make_trainer(const TrainConfig& cfg, MiniWorld& world, uint64_t backbone_seed) {
    Trainer t(cfg, quick_backbone(backbone_seed));
    t.set_text_context(world.text, world.pool);
    return t;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), {});
}

}  // namespace

TEST_CASE("min-snr weight follows min(SNR, gamma)/SNR") {
    // Single-step schedule with beta = 1/11 puts the SNR at exactly 10.
    auto s10 = make_schedule(1, 1.0 / 11.0, 1.0 / 11.0);
    CHECK(s10.snr_at(1) == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(min_snr_weight(1, s10, 5.0) == doctest::Approx(0.5).epsilon(1e-12));

    // SNR below gamma leaves the sample at full weight.
    auto s2 = make_schedule(1, 1.0 / 3.0, 1.0 / 3.0);
    CHECK(s2.snr_at(1) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(min_snr_weight(1, s2, 5.0) == doctest::Approx(1.0).epsilon(1e-12));

    auto desk = default_schedule_desk();
    for (int t = 1; t <= desk.timesteps; ++t) {
        double w = min_snr_weight(t, desk, 5.0);
        CHECK(w > 0.0);
        CHECK(w <= 1.0);
    }

    CHECK_THROWS(min_snr_weight(1, desk, 0.0));
    VarianceSchedule degenerate;
    degenerate.timesteps = 1;
    degenerate.beta = {0.0};
    degenerate.alpha = {1.0};
    degenerate.alpha_bar = {1.0};
    CHECK_THROWS(min_snr_weight(1, degenerate, 5.0));  // alpha_bar = 1 is singular
}

TEST_CASE("train_step is deterministic per seed, config, and data") {
    auto world = make_world(12, 8, 3);
    auto cfg = quick_config(17);
    Trainer a = make_trainer(cfg, world, 17);
    Trainer b = make_trainer(cfg, world, 17);

    std::vector<TrainingSample> batch(world.train.begin(), world.train.begin() + 3);
    for (int step = 0; step < 2; ++step) {
        auto ra = a.train_step(batch);
        auto rb = b.train_step(batch);
        CHECK(ra.l_sd == rb.l_sd);
        CHECK(ra.l_text == rb.l_text);
        CHECK(ra.l_edge == rb.l_edge);
        CHECK(ra.l_perceptual == rb.l_perceptual);
        CHECK(ra.total == rb.total);
        CHECK(ra.snr_weight_mean == rb.snr_weight_mean);
    }
    auto pa = a.backbone().named_params();
    auto pb = b.backbone().named_params();
    for (size_t i = 0; i < pa.size(); ++i)
        for (int k = 0; k < pa[i].tensor.size(); ++k)
            CHECK(pa[i].tensor[k] == pb[i].tensor[k]);
}

TEST_CASE("every logged total is the weighted sum of its terms") {
    auto world = make_world(12, 8, 4);
    auto cfg = quick_config(23);
    cfg.max_steps = 6;
    Trainer t = make_trainer(cfg, world, 23);
    auto out = testutil::fresh_temp_dir("fit_acct");
    auto result = t.fit(world.train, world.val, out.string());
    REQUIRE(result.losses.size() == 6);
    for (const auto& rec : result.losses) {
        double expect = rec.l_sd + cfg.loss_weights.lambda1 * rec.l_text +
                        cfg.loss_weights.lambda2 * rec.l_edge +
                        cfg.loss_weights.lambda3 * rec.l_perceptual;
        CHECK(std::abs(rec.total - expect) < 1e-6);
        CHECK(rec.snr_weight_mean > 0.0);
        CHECK(rec.snr_weight_mean <= 1.0);
    }
}

TEST_CASE("zero weights and omitted terms produce identical trajectories") {
    auto world = make_world(12, 8, 5);

    auto cfg_zero = quick_config(31);
    cfg_zero.max_steps = 5;
    cfg_zero.loss_weights.lambda1 = 0.0;
    cfg_zero.loss_weights.lambda2 = 0.0;
    cfg_zero.loss_weights.lambda3 = 0.0;
    // Terms still computed, weighted by zero.

    auto cfg_omit = cfg_zero;
    cfg_omit.use_text = false;
    cfg_omit.use_edge = false;
    cfg_omit.use_perceptual = false;

    Trainer a = make_trainer(cfg_zero, world, 31);
    Trainer b = make_trainer(cfg_omit, world, 31);
    auto out_a = testutil::fresh_temp_dir("fit_zero");
    auto out_b = testutil::fresh_temp_dir("fit_omit");
    auto ra = a.fit(world.train, world.val, out_a.string());
    auto rb = b.fit(world.train, world.val, out_b.string());

    REQUIRE(ra.losses.size() == rb.losses.size());
    for (size_t i = 0; i < ra.losses.size(); ++i) {
        CHECK(ra.losses[i].l_sd == rb.losses[i].l_sd);
        CHECK(ra.losses[i].total == rb.losses[i].total);
        // The zero-weight run still records the computed term values.
        CHECK(ra.losses[i].l_text != 0.0);
        CHECK(rb.losses[i].l_text == 0.0);
    }
    auto pa = a.backbone().named_params();
    auto pb = b.backbone().named_params();
    for (size_t i = 0; i < pa.size(); ++i)
        for (int k = 0; k < pa[i].tensor.size(); ++k)
            CHECK(pa[i].tensor[k] == pb[i].tensor[k]);
}

TEST_CASE("era starvation skips the text term instead of crashing") {
    auto world = make_world(12, 8, 6);
    for (auto& c : world.pool) c.period_key = "Era A";  // nothing era-disjoint
    for (auto& [id, entry] : world.text) entry.period_key = "Era A";
    auto cfg = quick_config(37);
    Trainer t = make_trainer(cfg, world, 37);
    std::vector<TrainingSample> batch(world.train.begin(), world.train.begin() + 2);
    for (auto& s : batch) s.period_key = "Era A";
    auto rec = t.train_step(batch);
    CHECK(rec.text_skipped);
    CHECK(rec.l_text == 0.0);
    CHECK(rec.total > 0.0);
}

TEST_CASE("short training run reduces the loss on synthetic shapes") {
    // Directional check: after 200 steps the total loss sits below the
    // average of the first ten steps, across three seeds.
    for (uint64_t seed : {1, 2, 3}) {
        auto world = make_world(24, 8, 40 + seed);
        auto cfg = quick_config(seed);
        cfg.max_steps = 200;
        cfg.batch_size = 4;
        cfg.learning_rate = 3e-3;
        cfg.use_text = false;
        cfg.use_edge = false;
        cfg.use_perceptual = false;
        Trainer t = make_trainer(cfg, world, seed);
        auto out = testutil::fresh_temp_dir("fit_dir" + std::to_string(seed));
        auto result = t.fit(world.train, world.val, out.string());
        double early = 0;
        for (int i = 0; i < 10; ++i) early += result.losses[static_cast<size_t>(i)].total;
        early /= 10;
        CHECK(result.losses.back().total < early);
    }
}

TEST_CASE("single-step fit leaves exactly one checkpoint") {
    auto world = make_world(12, 8, 7);
    auto cfg = quick_config(5);
    cfg.max_steps = 1;
    Trainer t = make_trainer(cfg, world, 5);
    auto out = testutil::fresh_temp_dir("fit_one");
    auto result = t.fit(world.train, world.val, out.string());
    CHECK(result.final_checkpoint == (out / "checkpoints" / "final").string());
    int count = 0;
    for (auto& entry : fs::directory_iterator(out / "checkpoints")) {
        CHECK(entry.is_directory());
        ++count;
    }
    CHECK(count == 1);
}

TEST_CASE("validation runs on the configured cadence") {
    auto world = make_world(15, 8, 8);
    auto cfg = quick_config(6);
    cfg.max_steps = 30;
    cfg.eval_every = 10;
    cfg.use_edge = false;
    cfg.use_perceptual = false;
    cfg.use_text = false;
    Trainer t = make_trainer(cfg, world, 6);
    auto out = testutil::fresh_temp_dir("fit_val");
    auto result = t.fit(world.train, world.val, out.string());
    CHECK(result.validations.size() == 3);

    int lines = 0;
    std::ifstream in(out / "val_log.jsonl");
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ++lines;
    CHECK(lines == 3);
}

TEST_CASE("checkpoints round-trip parameters bit-exactly") {
    auto world = make_world(12, 8, 9);
    auto cfg = quick_config(7);
    cfg.max_steps = 2;
    Trainer t = make_trainer(cfg, world, 7);
    auto out = testutil::fresh_temp_dir("ckpt_rt");
    t.fit(world.train, world.val, out.string());

    auto loaded = load_checkpoint((out / "checkpoints" / "final").string());
    CHECK(loaded.step == 2);
    CHECK(loaded.schedule.timesteps == cfg.schedule.timesteps);
    auto original = t.backbone().named_params();
    auto restored = loaded.backbone->named_params();
    REQUIRE(original.size() == restored.size());
    for (size_t i = 0; i < original.size(); ++i) {
        REQUIRE(original[i].tensor.size() == restored[i].tensor.size());
        for (int k = 0; k < original[i].tensor.size(); ++k)
            CHECK(original[i].tensor[k] == restored[i].tensor[k]);
    }
}

TEST_CASE("resume from a mid-run checkpoint matches the uninterrupted run") {
    auto world = make_world(12, 8, 10);
    auto cfg_full = quick_config(11);
    cfg_full.max_steps = 10;

    Trainer full = make_trainer(cfg_full, world, 11);
    auto out_full = testutil::fresh_temp_dir("fit_full");
    auto result_full = full.fit(world.train, world.val, out_full.string());

    auto cfg_half = cfg_full;
    cfg_half.max_steps = 5;
    Trainer half = make_trainer(cfg_half, world, 11);
    auto out_half = testutil::fresh_temp_dir("fit_half");
    half.fit(world.train, world.val, out_half.string());

    Trainer resumed = make_trainer(cfg_full, world, 999);  // params overwritten by resume
    resumed.resume_from((out_half / "checkpoints" / "final").string());
    CHECK(resumed.step() == 5);
    auto out_resumed = testutil::fresh_temp_dir("fit_resumed");
    auto result_resumed = resumed.fit(world.train, world.val, out_resumed.string());

    // Steps 6..10 of the loss log match the uninterrupted run.
    REQUIRE(result_resumed.losses.size() == 5);
    for (size_t i = 0; i < 5; ++i) {
        const auto& a = result_full.losses[5 + i];
        const auto& b = result_resumed.losses[i];
        CHECK(a.step == b.step);
        CHECK(a.total == b.total);
        CHECK(a.l_sd == b.l_sd);
    }
    auto pa = full.backbone().named_params();
    auto pb = resumed.backbone().named_params();
    for (size_t i = 0; i < pa.size(); ++i)
        for (int k = 0; k < pa[i].tensor.size(); ++k)
            CHECK(pa[i].tensor[k] == pb[i].tensor[k]);
}

TEST_CASE("identical seeds produce byte-identical loss logs") {
    auto world = make_world(12, 8, 12);
    auto cfg = quick_config(13);
    cfg.max_steps = 5;
    Trainer a = make_trainer(cfg, world, 13);
    Trainer b = make_trainer(cfg, world, 13);
    auto out_a = testutil::fresh_temp_dir("fit_rep_a");
    auto out_b = testutil::fresh_temp_dir("fit_rep_b");
    a.fit(world.train, world.val, out_a.string());
    b.fit(world.train, world.val, out_b.string());
    CHECK(read_file(out_a / "loss_log.jsonl") == read_file(out_b / "loss_log.jsonl"));
    CHECK_FALSE(read_file(out_a / "loss_log.jsonl").empty());
}

TEST_CASE("train config validates and round-trips through json") {
    auto cfg = quick_config(1);
    auto round = TrainConfig::from_json(cfg.to_json());
    CHECK(round.batch_size == cfg.batch_size);
    CHECK(round.learning_rate == cfg.learning_rate);
    CHECK(round.loss_weights.lambda2 == cfg.loss_weights.lambda2);
    CHECK(round.schedule.timesteps == cfg.schedule.timesteps);
    CHECK(round.negatives == cfg.negatives);

    TrainConfig bad = cfg;
    bad.batch_size = 0;
    CHECK_THROWS(bad.validate());
    bad = cfg;
    bad.learning_rate = 0;
    CHECK_THROWS(bad.validate());
    bad = cfg;
    bad.optimizer = "sgd";
    CHECK_THROWS(bad.validate());
}

TEST_CASE("train_step rejects off-resolution samples and empty batches") {
    auto world = make_world(12, 8, 14);
    auto cfg = quick_config(15);
    Trainer t = make_trainer(cfg, world, 15);
    CHECK_THROWS(t.train_step({}));
    auto batch = std::vector<TrainingSample>{world.train[0]};
    batch[0].image = Image(16, 16);
    CHECK_THROWS(t.train_step(batch));
}
