#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "artifact/corpus.hpp"
#include "artifact/imageio.hpp"
#include "artifact/llm_client.hpp"
#include "artifact/metrics.hpp"
#include "artifact/prompt.hpp"
#include "artifact/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace artifact;

namespace {

// Every invocation leaves one run manifest at the output root.
struct RunManifest {
    std::string command;
    json config = json::object();
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    void write(const std::string& out_dir, int exit_status) const {
        std::error_code ec;
        fs::create_directories(out_dir, ec);
        if (ec) return;  // nothing sane to do if the output root is unwritable
        double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                          .count();
        json j = {{"command", command},       {"config", config},
                  {"inputs", inputs},         {"outputs", outputs},
                  {"exit_status", exit_status}, {"wall_time_seconds", wall}};
        std::ofstream out(fs::path(out_dir) / "run_manifest.json", std::ios::binary);
        out << j.dump(2) << "\n";
    }
};

std::map<std::string, std::string> load_prompts(const std::string& path) {
    std::map<std::string, std::string> prompts;
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read prompts file: " + path);
    json j = json::parse(in);
    for (auto& [id, entry] : j.items()) {
        if (entry.is_object() && entry.contains("prompt"))
            prompts[id] = entry["prompt"].get<std::string>();
        else if (entry.is_string())
            prompts[id] = entry.get<std::string>();
    }
    return prompts;
}

std::vector<TrainingSample> build_samples(const std::vector<ArtifactRecord>& records,
                                          const std::vector<std::string>& ids,
                                          const std::map<std::string, std::string>& prompts,
                                          int resolution, int& skipped) {
    std::map<std::string, const ArtifactRecord*> by_id;
    for (const auto& r : records) by_id[r.id] = &r;
    std::vector<TrainingSample> samples;
    for (const auto& id : ids) {
        auto it = by_id.find(id);
        if (it == by_id.end() || !it->second->has_image) {
            ++skipped;
            continue;
        }
        auto p = prompts.find(id);
        if (p == prompts.end()) {
            ++skipped;  // enhancement missing: excluded, never silently trained on raw text
            continue;
        }
        samples.push_back(make_training_sample(*it->second, p->second, resolution));
    }
    return samples;
}

int cmd_ingest(const std::string& manifest, const std::string& out_dir, uint64_t seed,
               RunManifest& rm) {
    rm.inputs = {manifest};
    rm.config = {{"manifest", manifest}, {"out", out_dir}, {"seed", seed}};
    LoadResult loaded = load_corpus(manifest);

    fs::create_directories(out_dir);
    // The ingested corpus carries resolved image paths so later stages can
    // run from any working directory.
    std::vector<ArtifactRecord> resolved = loaded.records;
    for (auto& r : resolved)
        if (!r.resolved_image_path.empty()) r.image_path = r.resolved_image_path;
    save_corpus((fs::path(out_dir) / "records.jsonl").string(), resolved);

    std::ofstream rej(fs::path(out_dir) / "rejects.jsonl", std::ios::binary);
    for (const auto& r : loaded.rejects)
        rej << json{{"id", r.id}, {"reason", r.reason}, {"line", r.line}}.dump() << "\n";

    CorpusSplit split = split_corpus(loaded.records, seed);
    save_split((fs::path(out_dir) / "split.json").string(), split);

    rm.outputs = {(fs::path(out_dir) / "records.jsonl").string(),
                  (fs::path(out_dir) / "rejects.jsonl").string(),
                  (fs::path(out_dir) / "split.json").string()};
    std::cout << "ingested " << loaded.records.size() << " records (" << loaded.rejects.size()
              << " rejected); split " << split.train_ids.size() << "/" << split.val_ids.size()
              << "/" << split.test_ids.size() << "\n";
    return 0;
}

int cmd_enhance(const std::string& corpus_dir, const std::string& template_path,
                LLMClientConfig client_config, const std::string& out_dir, RunManifest& rm) {
    rm.inputs = {corpus_dir, template_path};
    LoadResult loaded = load_corpus((fs::path(corpus_dir) / "records.jsonl").string(),
                                    /*verify_images=*/false);
    QueryTemplate tmpl = load_query_template(template_path);
    if (const char* key = std::getenv("ARTIFACT_LLM_API_KEY")) client_config.api_key = key;

    LLMClient client(client_config);
    auto outcomes = client.enhance_batch(loaded.records, tmpl);

    json prompts = json::object();
    json failures = json::array();
    int ok = 0;
    for (const auto& o : outcomes) {
        if (o.failed) {
            failures.push_back({{"id", o.record_id}, {"error", o.error}});
            continue;
        }
        json entry;
        entry["attributes"] = {{"name", o.attributes.name},
                               {"material", o.attributes.material},
                               {"time_period", o.attributes.time_period},
                               {"type", o.attributes.type},
                               {"type_definition", o.attributes.type_definition},
                               {"shape", o.attributes.shape},
                               {"pattern", o.attributes.pattern},
                               {"size", o.attributes.size}};
        if (o.attributes.complete()) {
            entry["prompt"] = assemble_prompt(o.attributes);
            ++ok;
        } else {
            entry["incomplete"] = true;
        }
        prompts[o.record_id] = entry;
    }

    fs::create_directories(out_dir);
    std::ofstream pf(fs::path(out_dir) / "prompts.json", std::ios::binary);
    pf << prompts.dump(2) << "\n";
    std::ofstream ff(fs::path(out_dir) / "failures.json", std::ios::binary);
    ff << failures.dump(2) << "\n";
    rm.outputs = {(fs::path(out_dir) / "prompts.json").string(),
                  (fs::path(out_dir) / "failures.json").string()};

    std::cout << "enhanced " << ok << "/" << outcomes.size() << " records ("
              << failures.size() << " failed)\n";
    if (ok == 0 && !outcomes.empty())
        throw std::runtime_error("enhancement produced zero complete prompts");
    return 0;
}

int cmd_train(const std::string& config_path, std::optional<uint64_t> seed_override,
              std::optional<std::string> out_override, const std::string& resume,
              RunManifest& rm, std::string& out_dir) {
    std::ifstream in(config_path);
    if (!in) throw std::runtime_error("cannot read config: " + config_path);
    json j = json::parse(in);

    std::string corpus_dir = j.at("corpus_dir").get<std::string>();
    std::string prompts_path = j.at("prompts").get<std::string>();
    out_dir = out_override.value_or(j.at("out_dir").get<std::string>());
    TrainConfig cfg = TrainConfig::from_json(j.value("train", json::object()));
    if (seed_override) cfg.seed = *seed_override;
    cfg.validate();

    rm.inputs = {config_path, corpus_dir, prompts_path};
    rm.config = {{"corpus_dir", corpus_dir}, {"prompts", prompts_path},
                 {"out_dir", out_dir},       {"train", cfg.to_json()},
                 {"resume", resume}};

    LoadResult loaded = load_corpus((fs::path(corpus_dir) / "records.jsonl").string());
    CorpusSplit split = load_split((fs::path(corpus_dir) / "split.json").string());
    auto prompts = load_prompts(prompts_path);

    int skipped = 0;
    auto train_samples = build_samples(loaded.records, split.train_ids, prompts,
                                       cfg.resolution, skipped);
    auto val_samples = build_samples(loaded.records, split.val_ids, prompts, cfg.resolution,
                                     skipped);
    if (train_samples.empty()) throw std::runtime_error("no trainable samples with prompts");
    if (skipped)
        std::cerr << "warning: " << skipped << " records lacked prompts or images; excluded\n";

    ToyBackboneConfig bb_cfg = ToyBackboneConfig::from_json(j.value("backbone", json::object()));
    bb_cfg.resolution = cfg.resolution;
    bb_cfg.init_seed = cfg.seed;
    auto backbone = std::make_shared<ToyBackbone>(bb_cfg);

    Trainer trainer(cfg, backbone);
    std::map<std::string, ContrastiveEntry> text_ctx;
    std::vector<NegativeCandidate> pool;
    for (const auto& r : loaded.records) {
        std::string period = normalize_period(r.time_period);
        text_ctx[r.id] = {r.description, r.name, period};
    }
    for (const auto& id : split.train_ids) {
        auto it = text_ctx.find(id);
        if (it != text_ctx.end()) pool.push_back({it->second.name, it->second.period_key});
    }
    trainer.set_text_context(std::move(text_ctx), std::move(pool));
    if (!resume.empty()) trainer.resume_from(resume);

    FitResult result = trainer.fit(train_samples, val_samples, out_dir);
    rm.outputs = {(fs::path(out_dir) / "loss_log.jsonl").string(), result.final_checkpoint};
    std::cout << "trained to step " << trainer.step() << "; final checkpoint at "
              << result.final_checkpoint << "\n";
    return 0;
}

int cmd_generate(const std::string& checkpoint, const std::string& prompt,
                 const std::string& prompt_file, uint64_t seed, const std::string& out_dir,
                 int steps, RunManifest& rm) {
    rm.inputs = {checkpoint};
    rm.config = {{"checkpoint", checkpoint}, {"seed", seed}, {"steps", steps}};

    std::vector<std::string> prompts;
    if (!prompt.empty()) prompts.push_back(prompt);
    if (!prompt_file.empty()) {
        std::ifstream in(prompt_file);
        if (!in) throw std::runtime_error("cannot read prompt file: " + prompt_file);
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) prompts.push_back(line);
        rm.inputs.push_back(prompt_file);
    }
    if (prompts.empty()) throw std::runtime_error("no prompt given (use --prompt or --prompt-file)");

    LoadedCheckpoint ckpt = load_checkpoint(checkpoint);
    int sample_steps = steps > 0 ? steps : ckpt.schedule.timesteps;

    fs::create_directories(fs::path(out_dir) / "images");
    for (size_t i = 0; i < prompts.size(); ++i) {
        TextEmbedding cond = ckpt.backbone->encode_text(prompts[i]);
        Image img = reverse_sample(cond, *ckpt.backbone, ckpt.schedule, sample_steps,
                                   derive_seed(seed, i));
        char name[32];
        std::snprintf(name, sizeof(name), "gen_%04zu.png", i);
        std::string path = (fs::path(out_dir) / "images" / name).string();
        write_png(path, img);
        rm.outputs.push_back(path);
    }
    std::cout << "generated " << prompts.size() << " image(s) under " << out_dir << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& corpus_dir,
             const std::string& split_name, const std::string& prompts_path, uint64_t seed,
             const std::string& out_dir, RunManifest& rm) {
    rm.inputs = {checkpoint, corpus_dir};
    rm.config = {{"checkpoint", checkpoint}, {"corpus_dir", corpus_dir},
                 {"split", split_name},      {"prompts", prompts_path},
                 {"seed", seed}};

    LoadResult loaded = load_corpus((fs::path(corpus_dir) / "records.jsonl").string());
    CorpusSplit split = load_split((fs::path(corpus_dir) / "split.json").string());
    const std::vector<std::string>* ids = nullptr;
    if (split_name == "train") ids = &split.train_ids;
    else if (split_name == "val") ids = &split.val_ids;
    else if (split_name == "test") ids = &split.test_ids;
    else throw std::runtime_error("unknown split: " + split_name);

    std::map<std::string, std::string> prompts;
    if (!prompts_path.empty()) {
        prompts = load_prompts(prompts_path);
        rm.inputs.push_back(prompts_path);
    }

    LoadedCheckpoint ckpt = load_checkpoint(checkpoint);
    EvalEncoders encoders;
    MetricReport report = evaluate_split(*ckpt.backbone, ckpt.schedule, loaded.records, *ids,
                                         split_name, prompts,
                                         ckpt.backbone->config().resolution, encoders, seed,
                                         checkpoint);

    fs::create_directories(out_dir);
    std::ofstream rf(fs::path(out_dir) / "report.json", std::ios::binary);
    rf << report.to_json().dump(2) << "\n";
    std::string table = render_comparison_table({{checkpoint, report}});
    std::ofstream tf(fs::path(out_dir) / "report.txt", std::ios::binary);
    tf << table;
    std::cout << table;
    rm.outputs = {(fs::path(out_dir) / "report.json").string(),
                  (fs::path(out_dir) / "report.txt").string()};

    if (report.failures() == static_cast<int>(report.rows.size()))
        throw std::runtime_error("evaluation failed for every record in the split");
    return 0;
}

int cmd_report(const std::vector<std::string>& metric_jsons, const std::string& ratings_csv,
               const std::string& out_dir, RunManifest& rm) {
    rm.inputs = metric_jsons;
    rm.config = {{"reports", metric_jsons}, {"ratings", ratings_csv}};

    std::vector<std::pair<std::string, MetricReport>> reports;
    for (const auto& path : metric_jsons) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot read metric report: " + path);
        MetricReport r = MetricReport::from_json(json::parse(in));
        std::string label = r.metadata.value("model_id", path);
        reports.emplace_back(label, std::move(r));
    }

    std::optional<RatingAggregate> ratings;
    if (!ratings_csv.empty()) {
        ratings = aggregate_ratings(load_rating_sheets_csv(ratings_csv));
        rm.inputs.push_back(ratings_csv);
    }

    std::string table = render_comparison_table(reports, ratings);
    fs::create_directories(out_dir);
    std::ofstream tf(fs::path(out_dir) / "table.txt", std::ios::binary);
    tf << table;
    std::cout << table;
    rm.outputs = {(fs::path(out_dir) / "table.txt").string()};
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"artifact: knowledge-aware artifact image synthesis pipeline"};
    app.require_subcommand(1);

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Validate a manifest and produce corpus + split");
    std::string in_manifest, in_out = "runs/corpus";
    uint64_t in_seed = 0;
    ingest->add_option("--manifest", in_manifest, "JSON-lines manifest path")->required();
    ingest->add_option("--out", in_out, "output directory (default runs/corpus)");
    ingest->add_option("--seed", in_seed, "split seed (default 0)");

    // enhance
    auto* enhance = app.add_subcommand("enhance", "LLM-enhance prompts for a corpus");
    std::string en_corpus, en_template, en_endpoint, en_model = "gpt-3.5-turbo";
    std::string en_cache = "runs/llm_cache", en_out = "runs/enhanced";
    double en_timeout = 30.0;
    int en_retries = 3, en_concurrency = 4;
    enhance->add_option("--corpus", en_corpus, "ingested corpus directory")->required();
    enhance->add_option("--template", en_template, "query template JSON")->required();
    enhance->add_option("--endpoint", en_endpoint, "chat-completion base URL")->required();
    enhance->add_option("--model", en_model, "model identifier");
    enhance->add_option("--timeout", en_timeout, "request timeout seconds");
    enhance->add_option("--retries", en_retries, "max retries per request");
    enhance->add_option("--cache-dir", en_cache, "response cache directory");
    enhance->add_option("--concurrency", en_concurrency, "max in-flight requests");
    enhance->add_option("--out", en_out, "output directory");

    // train
    auto* train = app.add_subcommand("train", "Finetune on an ingested corpus");
    std::string tr_config, tr_resume, tr_out_val;
    uint64_t tr_seed_val = 0;
    train->add_option("--config", tr_config, "run configuration JSON")->required();
    auto* tr_seed_opt = train->add_option("--seed", tr_seed_val, "override config seed");
    auto* tr_out_opt = train->add_option("--out", tr_out_val, "override config out_dir");
    train->add_option("--resume", tr_resume, "checkpoint directory to resume from");

    // generate
    auto* gen = app.add_subcommand("generate", "Sample images from a checkpoint");
    std::string g_ckpt, g_prompt, g_prompt_file, g_out = "runs/generate";
    uint64_t g_seed = 0;
    int g_steps = 0;
    gen->add_option("--checkpoint", g_ckpt, "checkpoint directory")->required();
    gen->add_option("--prompt", g_prompt, "prompt text");
    gen->add_option("--prompt-file", g_prompt_file, "file with one prompt per line");
    gen->add_option("--seed", g_seed, "sampling seed (default 0)");
    gen->add_option("--steps", g_steps, "sampling steps (default: schedule T)");
    gen->add_option("--out", g_out, "output directory");

    // eval
    auto* ev = app.add_subcommand("eval", "Metric evaluation over a corpus split");
    std::string e_ckpt, e_corpus, e_split = "test", e_prompts, e_out = "runs/eval";
    uint64_t e_seed = 0;
    ev->add_option("--checkpoint", e_ckpt, "checkpoint directory")->required();
    ev->add_option("--corpus", e_corpus, "ingested corpus directory")->required();
    ev->add_option("--split", e_split, "split name: train|val|test (default test)");
    ev->add_option("--prompts", e_prompts, "enhanced prompts JSON (raw-field fallback if absent)");
    ev->add_option("--seed", e_seed, "generation seed (default 0)");
    ev->add_option("--out", e_out, "output directory");

    // report
    auto* rep = app.add_subcommand("report", "Render a comparison table from metric reports");
    std::vector<std::string> r_jsons;
    std::string r_ratings, r_out = "runs/report";
    rep->add_option("reports", r_jsons, "metric report JSON files")->required();
    rep->add_option("--ratings", r_ratings, "rating sheets CSV");
    rep->add_option("--out", r_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    RunManifest rm;
    std::string out_dir;
    int status = 0;
    try {
        if (*ingest) {
            rm.command = "ingest";
            out_dir = in_out;
            status = cmd_ingest(in_manifest, in_out, in_seed, rm);
        } else if (*enhance) {
            rm.command = "enhance";
            out_dir = en_out;
            LLMClientConfig cc;
            cc.endpoint = en_endpoint;
            cc.model = en_model;
            cc.timeout_seconds = en_timeout;
            cc.max_retries = en_retries;
            cc.cache_dir = en_cache;
            cc.max_concurrency = en_concurrency;
            rm.config = {{"corpus", en_corpus},   {"template", en_template},
                         {"endpoint", en_endpoint}, {"model", en_model},
                         {"timeout", en_timeout},   {"retries", en_retries},
                         {"cache_dir", en_cache},   {"concurrency", en_concurrency},
                         {"out", en_out}};
            status = cmd_enhance(en_corpus, en_template, cc, en_out, rm);
        } else if (*train) {
            rm.command = "train";
            std::optional<uint64_t> tr_seed;
            std::optional<std::string> tr_out;
            if (tr_seed_opt->count()) tr_seed = tr_seed_val;
            if (tr_out_opt->count()) tr_out = tr_out_val;
            status = cmd_train(tr_config, tr_seed, tr_out, tr_resume, rm, out_dir);
        } else if (*gen) {
            rm.command = "generate";
            out_dir = g_out;
            status = cmd_generate(g_ckpt, g_prompt, g_prompt_file, g_seed, g_out, g_steps, rm);
        } else if (*ev) {
            rm.command = "eval";
            out_dir = e_out;
            status = cmd_eval(e_ckpt, e_corpus, e_split, e_prompts, e_seed, e_out, rm);
        } else if (*rep) {
            rm.command = "report";
            out_dir = r_out;
            status = cmd_report(r_jsons, r_ratings, r_out, rm);
        }
    } catch (const std::exception& e) {
        status = 1;
        std::cerr << "error: " << e.what() << "\n";
    }
    if (!out_dir.empty()) rm.write(out_dir, status);
    return status;
}
