#include "artifact/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "artifact/imageio.hpp"
#include "artifact/rng.hpp"

namespace artifact {

namespace {

using nlohmann::json;

std::string trimmed(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::filesystem::path resolve_image_path(const std::filesystem::path& manifest,
                                         const std::string& image) {
    std::filesystem::path p(image);
    if (p.is_absolute()) return p;
    return manifest.parent_path() / p;
}

}  // namespace

LoadResult load_corpus(const std::string& manifest_path, bool verify_images) {
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("cannot read corpus manifest: " + manifest_path);

    LoadResult result;
    std::set<std::string> seen_ids;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trimmed(line).empty()) continue;

        json row = json::parse(line, nullptr, false);
        if (row.is_discarded() || !row.is_object()) {
            result.rejects.push_back({"", "malformed row: not a JSON object", line_no});
            continue;
        }
        auto field = [&](const char* key) -> std::string {
            if (!row.contains(key) || row[key].is_null()) return "";
            if (!row[key].is_string()) throw std::runtime_error("non-string field");
            return row[key].get<std::string>();
        };

        ArtifactRecord rec;
        try {
            rec.id = field("id");
            rec.name = field("name");
            rec.time_period = field("time_period");
            rec.description = field("description");
            rec.size_text = field("size_text");
            rec.image_path = field("image");
        } catch (const std::exception&) {
            result.rejects.push_back({"", "malformed row: non-string field", line_no});
            continue;
        }

        if (trimmed(rec.id).empty()) {
            result.rejects.push_back({rec.id, "empty id", line_no});
            continue;
        }
        if (!seen_ids.insert(rec.id).second) {
            result.rejects.push_back({rec.id, "duplicate id", line_no});
            continue;
        }
        if (trimmed(rec.name).empty()) {
            result.rejects.push_back({rec.id, "empty name", line_no});
            continue;
        }
        if (trimmed(rec.description).empty()) {
            result.rejects.push_back({rec.id, "empty description", line_no});
            continue;
        }

        if (!rec.image_path.empty()) {
            rec.resolved_image_path = resolve_image_path(manifest_path, rec.image_path).string();
            if (verify_images) {
                try {
                    read_image(rec.resolved_image_path);
                    rec.has_image = true;
                } catch (const std::exception& e) {
                    result.rejects.push_back({rec.id, std::string("unreadable image: ") + e.what(),
                                              line_no});
                    continue;
                }
            } else {
                rec.has_image = true;
            }
        }
        result.records.push_back(std::move(rec));
    }
    return result;
}

void save_corpus(const std::string& manifest_path, const std::vector<ArtifactRecord>& records) {
    std::ofstream out(manifest_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write corpus manifest: " + manifest_path);
    for (const auto& r : records) {
        json row = {{"id", r.id},
                    {"name", r.name},
                    {"time_period", r.time_period},
                    {"description", r.description},
                    {"size_text", r.size_text},
                    {"image", r.image_path}};
        out << row.dump() << "\n";
    }
}

CorpusSplit split_corpus(const std::vector<ArtifactRecord>& records, uint64_t seed) {
    std::vector<std::string> ids;
    for (const auto& r : records)
        if (r.trainable()) ids.push_back(r.id);
    if (ids.size() < 10) throw std::runtime_error("corpus too small to split");

    // Sort first so the shuffle depends only on the id set and the seed,
    // not on manifest row order.
    std::sort(ids.begin(), ids.end());
    Rng rng(derive_seed(seed, 0x53504C4954ULL));  // "SPLIT"
    rng.shuffle(ids);

    size_t n = ids.size();
    size_t n_train = n * 8 / 10;
    size_t n_val = n / 10;
    size_t n_test = n / 10;
    n_train += n - (n_train + n_val + n_test);  // residue goes to train

    CorpusSplit split;
    split.seed = seed;
    split.train_ids.assign(ids.begin(), ids.begin() + static_cast<long>(n_train));
    split.val_ids.assign(ids.begin() + static_cast<long>(n_train),
                         ids.begin() + static_cast<long>(n_train + n_val));
    split.test_ids.assign(ids.begin() + static_cast<long>(n_train + n_val), ids.end());
    return split;
}

void save_split(const std::string& path, const CorpusSplit& split) {
    nlohmann::json j = {{"seed", split.seed},
                        {"train", split.train_ids},
                        {"val", split.val_ids},
                        {"test", split.test_ids}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write split: " + path);
    out << j.dump(2) << "\n";
}

CorpusSplit load_split(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read split: " + path);
    nlohmann::json j = nlohmann::json::parse(in);
    CorpusSplit split;
    split.seed = j.at("seed").get<uint64_t>();
    split.train_ids = j.at("train").get<std::vector<std::string>>();
    split.val_ids = j.at("val").get<std::vector<std::string>>();
    split.test_ids = j.at("test").get<std::vector<std::string>>();
    return split;
}

std::string normalize_period(const std::string& time_period) {
    // Stop at ',', '(', ')', an ASCII digit, or a fullwidth comma.
    size_t end = time_period.size();
    for (size_t i = 0; i < time_period.size(); ++i) {
        unsigned char c = static_cast<unsigned char>(time_period[i]);
        if (c == ',' || c == '(' || c == ')' || (c >= '0' && c <= '9')) {
            end = i;
            break;
        }
        if (c == 0xEF && i + 2 < time_period.size() &&
            static_cast<unsigned char>(time_period[i + 1]) == 0xBC &&
            static_cast<unsigned char>(time_period[i + 2]) == 0x8C) {
            end = i;
            break;
        }
    }
    std::string head = trimmed(time_period.substr(0, end));
    return head.empty() ? kUnknownPeriod : head;
}

TrainingSample make_training_sample(const ArtifactRecord& record, const std::string& prompt,
                                    int resolution) {
    if (!record.has_image)
        throw std::runtime_error("record has no image and cannot enter training: " + record.id);
    TrainingSample s;
    s.record_id = record.id;
    s.prompt = prompt;
    const std::string& path =
        record.resolved_image_path.empty() ? record.image_path : record.resolved_image_path;
    s.image = center_crop_resize(read_image(path), resolution);
    s.period_key = normalize_period(record.time_period);
    return s;
}

}  // namespace artifact
