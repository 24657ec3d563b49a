#pragma once

#include <optional>
#include <string>
#include <vector>

#include "artifact/image.hpp"

namespace artifact {

// One museum catalog entry: the four text fields plus an image reference.
struct ArtifactRecord {
    std::string id;
    std::string name;
    std::string time_period;
    std::string description;
    std::string size_text;
    std::string image_path;           // as written in the manifest; empty for text-only rows
    std::string resolved_image_path;  // manifest-relative reference resolved to a real path
    bool has_image = false;           // text-only records cannot enter training

    bool trainable() const { return has_image; }
};

struct RejectedRow {
    std::string id;       // may be empty when the id itself was bad
    std::string reason;
    int line = 0;         // 1-based manifest line
};

struct LoadResult {
    std::vector<ArtifactRecord> records;
    std::vector<RejectedRow> rejects;
};

struct CorpusSplit {
    uint64_t seed = 0;
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
    std::vector<std::string> test_ids;
};

// A batchable unit: enhanced prompt, image tensor at training resolution,
// and the normalized era key used for negative sampling.
struct TrainingSample {
    std::string record_id;
    std::string prompt;
    Image image;              // resolution x resolution, values in [0,1]
    std::string period_key;   // never empty; "UNKNOWN_PERIOD" sentinel
};

// Loads a JSON-lines manifest. Rows that violate record invariants land in
// the rejects list with a reason; they are never silently dropped. When
// `verify_images` is set, image references are decoded to prove they are
// readable RGB files.
LoadResult load_corpus(const std::string& manifest_path, bool verify_images = true);

// Serializes records back to manifest lines. load(save(records)) round-trips
// every field byte-identically.
void save_corpus(const std::string& manifest_path, const std::vector<ArtifactRecord>& records);

// Deterministic 80/10/10 split over trainable record ids; rounding residue
// goes to train. Throws "corpus too small to split" below 10 trainable rows.
CorpusSplit split_corpus(const std::vector<ArtifactRecord>& records, uint64_t seed);

void save_split(const std::string& path, const CorpusSplit& split);
CorpusSplit load_split(const std::string& path);

// Leading era token of a period string: text up to the first comma,
// parenthesis, or digit, trimmed. Total function; empty -> UNKNOWN_PERIOD.
std::string normalize_period(const std::string& time_period);

inline constexpr const char* kUnknownPeriod = "UNKNOWN_PERIOD";

// Builds a TrainingSample: center-crop + resize the record's image to the
// given resolution and attach the enhanced prompt.
TrainingSample make_training_sample(const ArtifactRecord& record, const std::string& prompt,
                                    int resolution);

}  // namespace artifact
