#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "artifact/corpus.hpp"

namespace artifact {

// Desk-scale synthetic corpus: colored squares, circles, and triangles on a
// dark background with templated attribute prompts. Each shape class lives
// in its own era so era-based negative sampling has real structure.
struct SynthConfig {
    int count = 200;
    int resolution = 16;
    uint64_t seed = 0;
};

struct SynthCorpus {
    std::vector<ArtifactRecord> records;
    std::map<std::string, std::string> prompts;  // record id -> assembled prompt
};

// Writes images/<id>.png, manifest.jsonl, and prompts.json under out_dir
// and returns the generated records with resolved image paths.
SynthCorpus generate_shape_corpus(const std::string& out_dir, const SynthConfig& config);

// Renders one shape image directly (used by tests).
Image render_shape(const std::string& shape, const std::array<double, 3>& color, int resolution,
                   int radius, int jitter_x = 0, int jitter_y = 0);

}  // namespace artifact
