#include "artifact/synth.hpp"

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "artifact/imageio.hpp"
#include "artifact/prompt.hpp"
#include "artifact/rng.hpp"

namespace artifact {

namespace fs = std::filesystem;

namespace {

struct Palette {
    const char* name;
    std::array<double, 3> rgb;
};

constexpr std::array<Palette, 6> kPalette = {{{"red", {0.85, 0.15, 0.15}},
                                              {"green", {0.15, 0.75, 0.20}},
                                              {"blue", {0.15, 0.25, 0.85}},
                                              {"yellow", {0.90, 0.85, 0.15}},
                                              {"purple", {0.60, 0.20, 0.75}},
                                              {"cyan", {0.15, 0.80, 0.80}}}};

constexpr std::array<const char*, 3> kShapes = {"square", "circle", "triangle"};
constexpr std::array<const char*, 3> kEras = {"Square Period", "Circle Period",
                                              "Triangle Period"};
constexpr std::array<const char*, 3> kSizes = {"small", "medium", "large"};
constexpr double kBackground = 0.08;

}  // namespace

Image render_shape(const std::string& shape, const std::array<double, 3>& color, int resolution,
                   int radius, int jitter_x, int jitter_y) {
    Image img(resolution, resolution);
    for (auto& v : img.data) v = kBackground;
    double cx = resolution / 2.0 - 0.5 + jitter_x;
    double cy = resolution / 2.0 - 0.5 + jitter_y;

    for (int y = 0; y < resolution; ++y) {
        for (int x = 0; x < resolution; ++x) {
            double dx = x - cx, dy = y - cy;
            bool inside = false;
            if (shape == "square") {
                inside = std::abs(dx) <= radius && std::abs(dy) <= radius;
            } else if (shape == "circle") {
                inside = dx * dx + dy * dy <= static_cast<double>(radius) * radius;
            } else if (shape == "triangle") {
                // Upward triangle: apex at cy - radius, base at cy + radius.
                double fy = (dy + radius) / (2.0 * radius);  // 0 at apex row
                inside = dy >= -radius && dy <= radius && fy >= 0.0 &&
                         std::abs(dx) <= fy * radius;
            } else {
                throw std::invalid_argument("unknown shape: " + shape);
            }
            if (inside)
                for (int c = 0; c < 3; ++c) img.at(y, x, c) = color[static_cast<size_t>(c)];
        }
    }
    return img;
}

SynthCorpus generate_shape_corpus(const std::string& out_dir, const SynthConfig& config) {
    fs::create_directories(fs::path(out_dir) / "images");
    Rng rng(derive_seed(config.seed, 0x53594E5448ULL));  // "SYNTH"

    SynthCorpus corpus;
    nlohmann::json prompts_json;
    std::ofstream manifest(fs::path(out_dir) / "manifest.jsonl", std::ios::binary);
    if (!manifest) throw std::runtime_error("cannot write manifest under " + out_dir);

    for (int i = 0; i < config.count; ++i) {
        int shape_i = static_cast<int>(rng.next_int(0, 2));
        int color_i = static_cast<int>(rng.next_int(0, 5));
        int size_i = static_cast<int>(rng.next_int(0, 2));
        int radius = config.resolution / 8 + size_i + 1;
        int jx = static_cast<int>(rng.next_int(-1, 1));
        int jy = static_cast<int>(rng.next_int(-1, 1));

        const char* shape = kShapes[static_cast<size_t>(shape_i)];
        const Palette& pal = kPalette[static_cast<size_t>(color_i)];
        const char* size_word = kSizes[static_cast<size_t>(size_i)];

        char idbuf[16];
        std::snprintf(idbuf, sizeof(idbuf), "shape-%04d", i);
        ArtifactRecord rec;
        rec.id = idbuf;
        rec.name = std::string(pal.name) + " " + shape;
        rec.time_period = std::string(kEras[static_cast<size_t>(shape_i)]) + ", year " +
                          std::to_string(100 + i);
        rec.description = std::string("A ") + size_word + " " + pal.name + " " + shape +
                          " centered on a plain dark background.";
        rec.size_text = std::to_string(2 * radius + 1) + " px across";
        rec.image_path = "images/" + rec.id + ".png";
        rec.resolved_image_path = (fs::path(out_dir) / rec.image_path).string();
        rec.has_image = true;

        Image img = render_shape(shape, pal.rgb, config.resolution, radius, jx, jy);
        write_png(rec.resolved_image_path, img);

        ExpertAttributes attrs;
        attrs.name = rec.name;
        attrs.material = std::string(pal.name) + " pigment";
        attrs.time_period = rec.time_period;
        attrs.type = shape;
        attrs.type_definition = std::string("a flat ") + shape + " figure";
        attrs.shape = std::string(size_word) + " " + shape;
        attrs.pattern = std::string("solid ") + pal.name + " fill";
        attrs.size = rec.size_text;
        std::string prompt = assemble_prompt(attrs);
        corpus.prompts[rec.id] = prompt;
        prompts_json[rec.id] = {{"prompt", prompt}};

        manifest << nlohmann::json{{"id", rec.id},
                                   {"name", rec.name},
                                   {"time_period", rec.time_period},
                                   {"description", rec.description},
                                   {"size_text", rec.size_text},
                                   {"image", rec.image_path}}
                        .dump()
                 << "\n";
        corpus.records.push_back(std::move(rec));
    }

    std::ofstream pf(fs::path(out_dir) / "prompts.json", std::ios::binary);
    pf << prompts_json.dump(2) << "\n";
    return corpus;
}

}  // namespace artifact
