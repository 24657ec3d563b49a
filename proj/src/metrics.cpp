#include "artifact/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "artifact/backbone.hpp"
#include "artifact/imageio.hpp"
#include "artifact/prompt.hpp"

namespace artifact {

using nlohmann::json;

double clip_visual_similarity(const Image& a, const Image& b, const FeatureEncoder& encoder) {
    Tensor fa = encoder.features(a);
    Tensor fb = encoder.features(b);
    double na = fa.norm(), nb = fb.norm();
    if (na == 0.0 || nb == 0.0)
        throw std::runtime_error("clip_visual_similarity: zero-norm feature vector");
    double dot = 0.0;
    for (int i = 0; i < fa.size(); ++i) dot += fa[i] * fb[i];
    return dot / (na * nb);
}

double ssim(const Image& a, const Image& b, const SsimParams& p) {
    if (!a.same_shape(b)) throw std::invalid_argument("ssim: image shape mismatch");
    if (a.height < p.window || a.width < p.window)
        throw std::invalid_argument("ssim: images smaller than window");
    if (p.window % 2 == 0) throw std::invalid_argument("ssim: window must be odd");

    Tensor ga = to_grayscale(a), gb = to_grayscale(b);
    const int h = a.height, w = a.width, k = p.window, r = k / 2;

    std::vector<double> win(static_cast<size_t>(k) * k);
    double wsum = 0.0;
    for (int y = 0; y < k; ++y)
        for (int x = 0; x < k; ++x) {
            double dy = y - r, dx = x - r;
            double g = std::exp(-(dx * dx + dy * dy) / (2.0 * p.sigma * p.sigma));
            win[static_cast<size_t>(y) * k + x] = g;
            wsum += g;
        }
    for (auto& g : win) g /= wsum;

    const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
    const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);

    double acc = 0.0;
    int count = 0;
    for (int cy = r; cy < h - r; ++cy) {
        for (int cx = r; cx < w - r; ++cx) {
            double mx = 0, my = 0;
            for (int y = 0; y < k; ++y)
                for (int x = 0; x < k; ++x) {
                    double wv = win[static_cast<size_t>(y) * k + x];
                    mx += wv * ga[(cy + y - r) * w + cx + x - r];
                    my += wv * gb[(cy + y - r) * w + cx + x - r];
                }
            double sx = 0, sy = 0, sxy = 0;
            for (int y = 0; y < k; ++y)
                for (int x = 0; x < k; ++x) {
                    double wv = win[static_cast<size_t>(y) * k + x];
                    double da = ga[(cy + y - r) * w + cx + x - r] - mx;
                    double db = gb[(cy + y - r) * w + cx + x - r] - my;
                    sx += wv * da * da;
                    sy += wv * db * db;
                    sxy += wv * da * db;
                }
            double num = (2 * mx * my + c1) * (2 * sxy + c2);
            double den = (mx * mx + my * my + c1) * (sx + sy + c2);
            acc += num / den;
            ++count;
        }
    }
    return acc / count;
}

namespace {

class IdentityLpipsNet : public LpipsNet {
public:
    std::string id() const override { return "identity"; }
    std::vector<Tensor> layers(const Image& image) const override {
        return {image_to_chw(image)};
    }
};

class ToyConvLpipsNet : public LpipsNet {
public:
    explicit ToyConvLpipsNet(uint64_t seed, int channels = 8) : channels_(channels) {
        Rng rng(derive_seed(seed, 0x4C50495053ULL));  // "LPIPS"
        k1_ = Tensor({channels, 3, 3, 3});
        k2_ = Tensor({channels, channels, 3, 3});
        double s1 = std::sqrt(2.0 / (3 * 9)), s2 = std::sqrt(2.0 / (channels * 9));
        for (int i = 0; i < k1_.size(); ++i) k1_[i] = s1 * rng.next_normal();
        for (int i = 0; i < k2_.size(); ++i) k2_[i] = s2 * rng.next_normal();
    }
    std::string id() const override { return "toy-conv"; }
    std::vector<Tensor> layers(const Image& image) const override {
        ad::Var x = ad::Var::constant(image_to_chw(image));
        ad::Var l1 = ad::silu(ad::conv2d(x, ad::Var::constant(k1_)));
        ad::Var l2 = ad::silu(ad::conv2d(l1, ad::Var::constant(k2_)));
        return {l1.value(), l2.value()};
    }

private:
    int channels_;
    Tensor k1_, k2_;
};

// Unit-normalize across channels at each spatial position.
Tensor channel_unit_normalize(const Tensor& t) {
    const auto& s = t.shape();
    Tensor out(s);
    int c = s[0], hw = s[1] * s[2];
    for (int i = 0; i < hw; ++i) {
        double norm2 = 0.0;
        for (int ci = 0; ci < c; ++ci) {
            double v = t[ci * hw + i];
            norm2 += v * v;
        }
        double inv = 1.0 / (std::sqrt(norm2) + 1e-10);
        for (int ci = 0; ci < c; ++ci) out[ci * hw + i] = t[ci * hw + i] * inv;
    }
    return out;
}

}  // namespace

std::unique_ptr<LpipsNet> make_lpips_net(const std::string& net_id, uint64_t seed) {
    if (net_id == "identity") return std::make_unique<IdentityLpipsNet>();
    if (net_id == "toy-conv") return std::make_unique<ToyConvLpipsNet>(seed);
    throw std::invalid_argument("unknown lpips net: " + net_id);
}

double lpips(const Image& a, const Image& b, const LpipsNet& net) {
    if (!a.same_shape(b)) throw std::invalid_argument("lpips: image shape mismatch");
    auto la = net.layers(a);
    auto lb = net.layers(b);
    if (la.size() != lb.size()) throw std::runtime_error("lpips: layer count mismatch");
    double total = 0.0;
    for (size_t l = 0; l < la.size(); ++l) {
        if (!la[l].same_shape(lb[l])) throw std::runtime_error("lpips: layer shape mismatch");
        Tensor ua = channel_unit_normalize(la[l]);
        Tensor ub = channel_unit_normalize(lb[l]);
        double acc = 0.0;
        for (int i = 0; i < ua.size(); ++i) {
            double d = ua[i] - ub[i];
            acc += d * d;
        }
        total += acc / ua.size();
    }
    return total;
}

int MetricReport::failures() const {
    int n = 0;
    for (const auto& r : rows)
        if (r.failed) ++n;
    return n;
}

void MetricReport::recompute_aggregates() {
    double sc = 0, ss = 0, sl = 0;
    int n = 0;
    for (const auto& r : rows) {
        if (r.failed) continue;
        sc += r.clip_vs;
        ss += r.ssim;
        sl += r.lpips;
        ++n;
    }
    mean_clip_vs = n ? sc / n : 0.0;
    mean_ssim = n ? ss / n : 0.0;
    mean_lpips = n ? sl / n : 0.0;
    metadata["evaluated"] = n;
    metadata["failed"] = failures();
}

json MetricReport::to_json() const {
    json rows_j = json::array();
    for (const auto& r : rows) {
        if (r.failed)
            rows_j.push_back({{"record_id", r.record_id}, {"failed", true}, {"error", r.error}});
        else
            rows_j.push_back({{"record_id", r.record_id},
                              {"clip_vs", r.clip_vs},
                              {"ssim", r.ssim},
                              {"lpips", r.lpips}});
    }
    return {{"rows", rows_j},
            {"aggregates",
             {{"clip_vs", mean_clip_vs}, {"ssim", mean_ssim}, {"lpips", mean_lpips}}},
            {"metadata", metadata}};
}

MetricReport MetricReport::from_json(const json& j) {
    MetricReport r;
    for (const auto& row : j.at("rows")) {
        MetricRow mr;
        mr.record_id = row.at("record_id").get<std::string>();
        if (row.value("failed", false)) {
            mr.failed = true;
            mr.error = row.value("error", "");
        } else {
            mr.clip_vs = row.at("clip_vs").get<double>();
            mr.ssim = row.at("ssim").get<double>();
            mr.lpips = row.at("lpips").get<double>();
        }
        r.rows.push_back(std::move(mr));
    }
    r.metadata = j.value("metadata", json::object());
    r.recompute_aggregates();
    return r;
}

std::string MetricReport::table_line(const std::string& model_label) const {
    std::ostringstream os;
    os << std::left << std::setw(40) << model_label << std::right << std::fixed
       << std::setprecision(3) << std::setw(10) << mean_clip_vs << std::setw(10) << mean_ssim
       << std::setw(10) << mean_lpips;
    return os.str();
}

MetricReport compute_report(
    const std::vector<std::tuple<std::string, Image, Image>>& id_gt_gen,
    const EvalEncoders& encoders, json metadata) {
    if (id_gt_gen.empty()) throw std::invalid_argument("compute_report: no pairs");
    int resolution = std::get<1>(id_gt_gen.front()).height;
    auto clip_enc = make_feature_encoder(encoders.clip_encoder, resolution,
                                         encoders.encoder_seed);
    auto lpips_net = make_lpips_net(encoders.lpips_net, encoders.encoder_seed);

    MetricReport report;
    report.metadata = std::move(metadata);
    report.metadata["clip_encoder"] = clip_enc->id();
    report.metadata["lpips_net"] = lpips_net->id();
    report.metadata["clip_vs_scale"] = "raw_cosine";
    for (const auto& [id, gt, gen] : id_gt_gen) {
        MetricRow row;
        row.record_id = id;
        try {
            row.clip_vs = clip_visual_similarity(gt, gen, *clip_enc);
            row.ssim = ssim(gt, gen);
            row.lpips = lpips(gt, gen, *lpips_net);
        } catch (const std::exception& e) {
            row.failed = true;
            row.error = e.what();
        }
        report.rows.push_back(std::move(row));
    }
    report.recompute_aggregates();
    return report;
}

MetricReport evaluate_split(Backbone& backbone, const VarianceSchedule& schedule,
                            const std::vector<ArtifactRecord>& records,
                            const std::vector<std::string>& split_ids,
                            const std::string& split_name,
                            const std::map<std::string, std::string>& prompts, int resolution,
                            const EvalEncoders& encoders, uint64_t seed,
                            const std::string& model_id) {
    if (split_ids.empty()) throw std::invalid_argument("evaluate_split: empty split");
    std::map<std::string, const ArtifactRecord*> by_id;
    for (const auto& r : records) by_id[r.id] = &r;

    std::vector<std::tuple<std::string, Image, Image>> pairs;
    std::vector<MetricRow> failures;
    for (const auto& id : split_ids) {
        try {
            auto it = by_id.find(id);
            if (it == by_id.end()) throw std::runtime_error("record not in corpus: " + id);
            const ArtifactRecord& rec = *it->second;
            if (!rec.has_image) throw std::runtime_error("record has no ground-truth image");

            std::string prompt;
            if (auto p = prompts.find(id); p != prompts.end()) {
                prompt = p->second;
            } else {
                // Raw-field fallback when no enhanced prompt is available.
                prompt = rec.name + kDefaultSep + rec.time_period + kDefaultSep +
                         rec.description + kDefaultSep + rec.size_text;
            }
            const std::string& path = rec.resolved_image_path.empty() ? rec.image_path
                                                                      : rec.resolved_image_path;
            Image gt = center_crop_resize(read_image(path), resolution);
            TextEmbedding cond = backbone.encode_text(prompt);
            uint64_t sample_seed = derive_seed(seed, fnv1a64(id));
            Image gen =
                reverse_sample(cond, backbone, schedule, schedule.timesteps, sample_seed);
            pairs.emplace_back(id, std::move(gt), std::move(gen));
        } catch (const std::exception& e) {
            MetricRow row;
            row.record_id = id;
            row.failed = true;
            row.error = e.what();
            failures.push_back(std::move(row));
        }
    }

    json metadata = {{"model_id", model_id},
                     {"split", split_name},
                     {"seed", seed},
                     {"timestamp", std::chrono::duration_cast<std::chrono::seconds>(
                                       std::chrono::system_clock::now().time_since_epoch())
                                       .count()}};
    if (pairs.empty()) {
        MetricReport report;
        report.metadata = metadata;
        report.rows = std::move(failures);
        report.recompute_aggregates();
        return report;
    }
    MetricReport report = compute_report(pairs, encoders, metadata);
    for (auto& f : failures) report.rows.push_back(std::move(f));
    report.recompute_aggregates();
    return report;
}

RatingAggregate aggregate_ratings(const std::vector<RatingSheet>& sheets) {
    RatingAggregate agg;
    std::array<double, 5> sums{};
    int n = 0;
    for (const auto& sheet : sheets) {
        bool valid = !sheet.rows.empty();
        for (const auto& row : sheet.rows)
            for (int s : row.scores)
                if (s < 0 || s > 5) valid = false;
        if (!valid) {
            agg.rejected_raters.push_back(sheet.rater_id);
            continue;
        }
        for (const auto& row : sheet.rows) {
            for (size_t a = 0; a < 5; ++a) sums[a] += row.scores[a];
            ++n;
        }
    }
    if (n == 0) throw std::runtime_error("aggregate_ratings: no valid rating rows");
    double total = 0.0;
    for (size_t a = 0; a < 5; ++a) {
        agg.aspect_means[a] = sums[a] / n;
        total += agg.aspect_means[a];
    }
    agg.total_avg = total / 5.0;
    agg.n_rows = n;
    return agg;
}

std::vector<RatingSheet> load_rating_sheets_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read ratings csv: " + path);
    std::map<std::string, RatingSheet> by_rater;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            if (!cell.empty() && cell.back() == '\r') cell.pop_back();
            cells.push_back(cell);
        }
        if (first && !cells.empty() && cells[0] == "rater_id") {
            first = false;
            continue;  // header
        }
        first = false;
        if (cells.size() != 7)
            throw std::runtime_error("ratings csv: expected 7 columns, got " +
                                     std::to_string(cells.size()));
        RatingRow row;
        row.sample_id = cells[1];
        for (size_t a = 0; a < 5; ++a) {
            try {
                size_t used = 0;
                int v = std::stoi(cells[2 + a], &used);
                if (used != cells[2 + a].size()) throw std::invalid_argument("trailing");
                row.scores[a] = v;
            } catch (const std::exception&) {
                row.scores[a] = -1;  // marks the sheet malformed
            }
        }
        auto& sheet = by_rater[cells[0]];
        sheet.rater_id = cells[0];
        sheet.rows.push_back(row);
    }
    std::vector<RatingSheet> out;
    out.reserve(by_rater.size());
    for (auto& [_, sheet] : by_rater) out.push_back(std::move(sheet));
    return out;
}

std::string render_comparison_table(
    const std::vector<std::pair<std::string, MetricReport>>& reports,
    const std::optional<RatingAggregate>& ratings) {
    std::ostringstream os;
    os << std::left << std::setw(40) << "Model" << std::right << std::setw(10) << "CLIP-VS"
       << std::setw(10) << "SSIM" << std::setw(10) << "LPIPS" << "\n";
    os << std::string(70, '-') << "\n";
    for (const auto& [label, report] : reports) os << report.table_line(label) << "\n";
    if (ratings) {
        os << "\n";
        os << std::left << std::setw(14) << "Material" << std::setw(14) << "Shape"
           << std::setw(14) << "Pattern/Color" << std::setw(14) << "Size/Ratio" << std::setw(14)
           << "Dynasty" << std::setw(14) << "total avg." << "\n";
        os << std::string(84, '-') << "\n";
        os << std::fixed << std::setprecision(2);
        for (double m : ratings->aspect_means) os << std::left << std::setw(14) << m;
        os << std::left << std::setw(14) << ratings->total_avg << "\n";
    }
    return os.str();
}

}  // namespace artifact
