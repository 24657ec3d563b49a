#include <doctest.h>

#include <cstdlib>
#include <fstream>

#include <nlohmann/json.hpp>

#include "artifact/imageio.hpp"
#include "artifact/metrics.hpp"
#include "artifact/synth.hpp"
#include "artifact/trainer.hpp"
#include "test_util.hpp"

using namespace artifact;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
    int exit_code = 0;
    std::string out;
    std::string err;
};

CliResult run_cli(const std::string& args) {
    auto dir = testutil::fresh_temp_dir("cli_io");
    std::string cmd = std::string(ARTIFACT_CLI_PATH) + " " + args + " >" +
                      (dir / "out.txt").string() + " 2>" + (dir / "err.txt").string();
    int rc = std::system(cmd.c_str());
    CliResult r;
    r.exit_code = WEXITSTATUS(rc);
    std::ifstream o(dir / "out.txt"), e(dir / "err.txt");
    r.out.assign(std::istreambuf_iterator<char>(o), {});
    r.err.assign(std::istreambuf_iterator<char>(e), {});
    return r;
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), {});
}

// A small trained checkpoint shared by the generate tests.
const fs::path& shared_checkpoint() {
    static fs::path ckpt = [] {
        auto dir = testutil::fresh_temp_dir("cli_ckpt");
        auto corpus = generate_shape_corpus((dir / "synth").string(), {20, 8, 1});

        TrainConfig cfg;
        cfg.batch_size = 2;
        cfg.learning_rate = 1e-3;
        cfg.max_steps = 2;
        cfg.seed = 1;
        cfg.resolution = 8;
        cfg.schedule = {6, 0.05, 0.35};
        cfg.use_text = false;
        cfg.use_edge = false;
        cfg.use_perceptual = false;

        ToyBackboneConfig bb;
        bb.resolution = 8;
        bb.channels = 4;
        bb.init_seed = 1;
        Trainer trainer(cfg, std::make_shared<ToyBackbone>(bb));
        std::vector<TrainingSample> samples;
        for (const auto& rec : corpus.records)
            samples.push_back(make_training_sample(rec, corpus.prompts.at(rec.id), 8));
        trainer.fit(samples, {}, (dir / "train").string());
        return dir / "train" / "checkpoints" / "final";
    }();
    return ckpt;
}

}  // namespace

TEST_CASE("cli ingest produces corpus, rejects, split, and a run manifest") {
    auto dir = testutil::fresh_temp_dir("cli_ingest");
    generate_shape_corpus((dir / "synth").string(), {24, 8, 3});
    auto out = dir / "corpus";
    auto r = run_cli("ingest --manifest " + (dir / "synth" / "manifest.jsonl").string() +
                     " --out " + out.string() + " --seed 5");
    CHECK(r.exit_code == 0);
    CHECK(fs::exists(out / "records.jsonl"));
    CHECK(fs::exists(out / "rejects.jsonl"));
    CHECK(fs::exists(out / "split.json"));
    REQUIRE(fs::exists(out / "run_manifest.json"));

    json manifest = json::parse(read_bytes(out / "run_manifest.json"));
    CHECK(manifest.at("command") == "ingest");
    CHECK(manifest.at("exit_status") == 0);
    CHECK(manifest.at("config").at("seed") == 5);

    auto split = load_split((out / "split.json").string());
    CHECK(split.train_ids.size() == 20);  // 24 * 0.8 + residue

    // Rerun with identical inputs: outputs are rewritten byte-identically.
    std::string records_before = read_bytes(out / "records.jsonl");
    std::string split_before = read_bytes(out / "split.json");
    auto r2 = run_cli("ingest --manifest " + (dir / "synth" / "manifest.jsonl").string() +
                      " --out " + out.string() + " --seed 5");
    CHECK(r2.exit_code == 0);
    CHECK(read_bytes(out / "records.jsonl") == records_before);
    CHECK(read_bytes(out / "split.json") == split_before);
}

TEST_CASE("cli ingest on an empty manifest fails with the split error") {
    auto dir = testutil::fresh_temp_dir("cli_empty");
    {
        std::ofstream m(dir / "empty.jsonl");
    }
    auto r = run_cli("ingest --manifest " + (dir / "empty.jsonl").string() + " --out " +
                     (dir / "out").string());
    CHECK(r.exit_code != 0);
    CHECK(r.err.find("corpus too small to split") != std::string::npos);
    // The manifest still records the failed invocation.
    json manifest = json::parse(read_bytes(dir / "out" / "run_manifest.json"));
    CHECK(manifest.at("exit_status") != 0);
}

TEST_CASE("cli generate is byte-deterministic per seed") {
    auto ckpt = shared_checkpoint();
    auto out_a = testutil::fresh_temp_dir("gen_a");
    auto out_b = testutil::fresh_temp_dir("gen_b");

    std::string base = "generate --checkpoint " + ckpt.string() + " --prompt \"red square\"";
    auto ra = run_cli(base + " --seed 9 --out " + out_a.string());
    auto rb = run_cli(base + " --seed 9 --out " + out_b.string());
    CHECK(ra.exit_code == 0);
    CHECK(rb.exit_code == 0);
    CHECK(read_bytes(out_a / "images" / "gen_0000.png") ==
          read_bytes(out_b / "images" / "gen_0000.png"));

    auto out_c = testutil::fresh_temp_dir("gen_c");
    auto rc = run_cli(base + " --seed 10 --out " + out_c.string());
    CHECK(rc.exit_code == 0);
    CHECK(read_bytes(out_a / "images" / "gen_0000.png") !=
          read_bytes(out_c / "images" / "gen_0000.png"));
}

TEST_CASE("cli generate without a prompt fails cleanly") {
    auto r = run_cli("generate --checkpoint " + shared_checkpoint().string() + " --out /tmp/x");
    CHECK(r.exit_code != 0);
    CHECK(r.err.rfind("error: ", 0) == 0);
}

TEST_CASE("cli report renders the comparison table from saved reports") {
    auto dir = testutil::fresh_temp_dir("cli_report");
    // Two synthetic reports standing in for two model variants.
    for (int m = 0; m < 2; ++m) {
        std::vector<std::tuple<std::string, Image, Image>> pairs;
        for (uint64_t i = 0; i < 2; ++i)
            pairs.emplace_back("r" + std::to_string(i),
                               testutil::random_image(16, 16, 10 + i),
                               testutil::random_image(16, 16, 20 + i + m));
        auto report = compute_report(pairs, EvalEncoders{},
                                     {{"model_id", "variant-" + std::to_string(m)}});
        std::ofstream out(dir / ("report" + std::to_string(m) + ".json"));
        out << report.to_json().dump();
    }
    {
        std::ofstream csv(dir / "ratings.csv");
        csv << "rater_id,sample_id,material,shape,pattern_color,size_ratio,dynasty\n";
        csv << "r1,s1,4,4,4,4,4\nr2,s1,2,2,2,2,2\n";
    }
    auto out = dir / "tables";
    auto r = run_cli("report " + (dir / "report0.json").string() + " " +
                     (dir / "report1.json").string() + " --ratings " +
                     (dir / "ratings.csv").string() + " --out " + out.string());
    CHECK(r.exit_code == 0);
    std::string table = read_bytes(out / "table.txt");
    CHECK(table.find("variant-0") != std::string::npos);
    CHECK(table.find("variant-1") != std::string::npos);
    CHECK(table.find("CLIP-VS") < table.find("SSIM"));
    CHECK(table.find("SSIM") < table.find("LPIPS"));
    CHECK(table.find("total avg.") != std::string::npos);
    CHECK(r.out.find("variant-0") != std::string::npos);
}

TEST_CASE("cli rejects unknown flags with a usage error") {
    auto r = run_cli("ingest --manifest x --frobnicate");
    CHECK(r.exit_code != 0);
}

TEST_CASE("cli eval writes report files for a split") {
    auto dir = testutil::fresh_temp_dir("cli_eval");
    generate_shape_corpus((dir / "synth").string(), {20, 8, 2});
    auto corpus_out = dir / "corpus";
    auto r1 = run_cli("ingest --manifest " + (dir / "synth" / "manifest.jsonl").string() +
                      " --out " + corpus_out.string() + " --seed 1");
    REQUIRE(r1.exit_code == 0);

    auto out = dir / "eval";
    auto r2 = run_cli("eval --checkpoint " + shared_checkpoint().string() + " --corpus " +
                      corpus_out.string() + " --split test --prompts " +
                      (dir / "synth" / "prompts.json").string() + " --seed 3 --out " +
                      out.string());
    CHECK(r2.exit_code == 0);
    REQUIRE(fs::exists(out / "report.json"));
    json report = json::parse(read_bytes(out / "report.json"));
    CHECK(report.at("rows").size() == 2);  // 10% of 20
    CHECK(report.at("metadata").at("split") == "test");
    CHECK(fs::exists(out / "report.txt"));
}
