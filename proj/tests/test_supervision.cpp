#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "artifact/checkpoint.hpp"
#include "artifact/supervision.hpp"
#include "test_util.hpp"

using namespace artifact;

namespace {

// ---------------------------------------------------------------------------
// Brute-force reference edge detector, re-derived for the oracle comparison:
// luminance grayscale, clamp-padded 3x3 binomial blur and Sobel with integer
// taps divided once, quantized-direction non-max suppression keeping a
// plateau's leading pixel, single low-threshold gate.
// ---------------------------------------------------------------------------

std::vector<double> ref_gray(const Image& img) {
    std::vector<double> g(static_cast<size_t>(img.height) * img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            g[static_cast<size_t>(y) * img.width + x] =
                0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
    return g;
}

double ref_at(const std::vector<double>& m, int h, int w, int y, int x) {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    return m[static_cast<size_t>(y) * w + x];
}

std::vector<double> ref_filter(const std::vector<double>& src, int h, int w,
                               const int taps[3][3], double norm) {
    std::vector<double> out(src.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx)
                    s += taps[ky][kx] * ref_at(src, h, w, y + ky - 1, x + kx - 1);
            out[static_cast<size_t>(y) * w + x] = s / norm;
        }
    return out;
}

std::vector<double> reference_canny(const Image& img, double low_threshold) {
    const int blur_taps[3][3] = {{1, 2, 1}, {2, 4, 2}, {1, 2, 1}};
    const int sobel_x[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
    const int sobel_y[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
    int h = img.height, w = img.width;

    auto gray = ref_gray(img);
    auto blur = ref_filter(gray, h, w, blur_taps, 16.0);
    auto gx = ref_filter(blur, h, w, sobel_x, 8.0);
    auto gy = ref_filter(blur, h, w, sobel_y, 8.0);

    std::vector<double> mag(gray.size());
    for (size_t i = 0; i < mag.size(); ++i) mag[i] = std::sqrt(gx[i] * gx[i] + gy[i] * gy[i]);

    auto mag_or_zero = [&](int y, int x) -> double {
        if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
        return mag[static_cast<size_t>(y) * w + x];
    };

    std::vector<double> out(gray.size(), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double m = mag[static_cast<size_t>(y) * w + x];
            if (!(m > low_threshold)) continue;
            double theta = std::atan2(gy[static_cast<size_t>(y) * w + x],
                                      gx[static_cast<size_t>(y) * w + x]);
            if (theta < 0) theta += M_PI;
            int dx, dy;
            if (theta < M_PI / 8 || theta >= 7 * M_PI / 8) {
                dx = 1; dy = 0;
            } else if (theta < 3 * M_PI / 8) {
                dx = 1; dy = 1;
            } else if (theta < 5 * M_PI / 8) {
                dx = 0; dy = 1;
            } else {
                dx = -1; dy = 1;
            }
            if (m >= mag_or_zero(y + dy, x + dx) && m > mag_or_zero(y - dy, x - dx))
                out[static_cast<size_t>(y) * w + x] = 1.0;
        }
    return out;
}

Image vertical_step_image(int n = 8) {
    Image img(n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = x < n / 2 ? 0.0 : 1.0;
    return img;
}

Image horizontal_step_image(int n = 8) {
    Image img(n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = y < n / 2 ? 0.1 : 0.9;
    return img;
}

Image diagonal_ramp_image(int n = 8) {
    Image img(n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = (x + y) / (2.0 * (n - 1));
    return img;
}

Image disk_image(int n = 8) {
    Image img(n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            double dx = x - (n - 1) / 2.0, dy = y - (n - 1) / 2.0;
            double v = dx * dx + dy * dy <= 6.5 ? 0.95 : 0.05;
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = v;
        }
    return img;
}

std::vector<Image> edge_fixtures() {
    return {vertical_step_image(), horizontal_step_image(), diagonal_ramp_image(), disk_image(),
            testutil::random_image(8, 8, 404, 0.05, 0.95)};
}

ad::Var embed_param(ad::Var& storage) { return storage; }

}  // namespace

// ----------------------------------------------------------------- InfoNCE

TEST_CASE("uniform similarities give ln N") {
    for (int n : {2, 4, 16}) {
        Tensor anchor({3}, {0.2, -0.4, 0.9});
        Tensor cand({3}, {0.5, 0.5, -0.1});
        SimilarityBatch batch;
        std::vector<ad::Var> cands;
        std::vector<std::string> periods;
        for (int j = 0; j < n; ++j) {
            cands.push_back(ad::Var::constant(cand));
            periods.push_back(j == 0 ? "Era A" : "Era B");
        }
        batch.add_group(ad::Var::constant(anchor), "Era A", cands, periods, 0);
        double loss = info_nce_loss(batch).value()[0];
        CHECK(std::abs(loss - std::log(static_cast<double>(n))) < 1e-12);
    }
}

TEST_CASE("worked four-candidate case matches the direct evaluation oracle") {
    // Direct evaluation of -log(exp(2)/(exp(2)+exp(1)+exp(0.5)+exp(0))).
    double oracle = -std::log(std::exp(2.0) /
                              (std::exp(2.0) + std::exp(1.0) + std::exp(0.5) + std::exp(0.0)));
    double got = info_nce_from_similarities({2.0, 1.0, 0.5, 0.0}, 0, 1.0);
    CHECK(std::abs(got - oracle) < 1e-12);
    // Frozen oracle value.
    CHECK(got == doctest::Approx(0.5460063899405724).epsilon(1e-12));
}

TEST_CASE("dominant positive drives the loss to zero") {
    double loss = info_nce_from_similarities({50.0, 0.0, 0.0, 0.0}, 0, 1.0);
    CHECK(loss >= 0.0);
    CHECK(loss < 1e-8);
}

TEST_CASE("temperature rescales similarities") {
    double hot = info_nce_from_similarities({1.0, 0.5, 0.0}, 0, 10.0);
    double cold = info_nce_from_similarities({1.0, 0.5, 0.0}, 0, 0.1);
    CHECK(hot > cold);  // high temperature flattens the softmax
    double rescaled = info_nce_from_similarities({2.0, 1.0, 0.0}, 0, 2.0);
    double base = info_nce_from_similarities({1.0, 0.5, 0.0}, 0, 1.0);
    CHECK(std::abs(rescaled - base) < 1e-12);
    CHECK_THROWS(info_nce_from_similarities({1.0}, 0, 0.0));
    CHECK_THROWS(info_nce_from_similarities({}, 0, 1.0));
}

TEST_CASE("batch path agrees with the similarity-level function") {
    Rng rng(71);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor anchor({5});
        for (int i = 0; i < 5; ++i) anchor[i] = rng.next_normal();
        std::vector<Tensor> cands;
        std::vector<ad::Var> cand_vars;
        std::vector<std::string> periods;
        int n = static_cast<int>(rng.next_int(2, 6));
        for (int j = 0; j < n; ++j) {
            Tensor c({5});
            for (int i = 0; i < 5; ++i) c[i] = rng.next_normal();
            cands.push_back(c);
            cand_vars.push_back(ad::Var::constant(c));
            periods.push_back(j == 0 ? "A" : "B" + std::to_string(j));
        }
        SimilarityBatch batch;
        batch.add_group(ad::Var::constant(anchor), "A", cand_vars, periods, 0);
        double got = info_nce_loss(batch, 0.7).value()[0];

        // Unit-normalize by hand, then apply the scalar formula.
        auto normalize = [](Tensor t) {
            double n2 = t.squared_norm();
            double r = std::sqrt(n2 + 1e-12);
            for (int i = 0; i < t.size(); ++i) t[i] /= r;
            return t;
        };
        Tensor an = normalize(anchor);
        std::vector<double> sims;
        for (const auto& c : cands) {
            Tensor cn = normalize(c);
            double d = 0;
            for (int i = 0; i < 5; ++i) d += an[i] * cn[i];
            sims.push_back(d);
        }
        CHECK(std::abs(got - info_nce_from_similarities(sims, 0, 0.7)) < 1e-12);
        CHECK(got >= 0.0);
    }
}

TEST_CASE("scaling embeddings before normalization leaves the loss unchanged") {
    Rng rng(72);
    Tensor anchor({4}), c1({4}), c2({4});
    for (int i = 0; i < 4; ++i) {
        anchor[i] = rng.next_normal();
        c1[i] = rng.next_normal();
        c2[i] = rng.next_normal();
    }
    auto loss_with_scale = [&](double s) {
        auto scaled = [&](const Tensor& t) {
            Tensor o({4});
            for (int i = 0; i < 4; ++i) o[i] = t[i] * s;
            return ad::Var::constant(o);
        };
        SimilarityBatch batch;
        batch.add_group(scaled(anchor), "A", {scaled(c1), scaled(c2)}, {"A", "B"}, 0);
        return info_nce_loss(batch).value()[0];
    };
    CHECK(std::abs(loss_with_scale(1.0) - loss_with_scale(37.0)) < 1e-9);
    CHECK(std::abs(loss_with_scale(1.0) - loss_with_scale(0.05)) < 1e-9);
}

TEST_CASE("same-era negatives are rejected at construction") {
    SimilarityBatch batch;
    ad::Var a = ad::Var::constant(Tensor({2}, {1, 0}));
    CHECK_THROWS_WITH(batch.add_group(a, "Qing Dynasty",
                                      {ad::Var::constant(Tensor({2}, {0, 1})),
                                       ad::Var::constant(Tensor({2}, {1, 1}))},
                                      {"Qing Dynasty", "Qing Dynasty"}, 0),
                      "negative from same era: Qing Dynasty");
    CHECK_THROWS(batch.add_group(a, "X", {}, {}, 0));  // zero candidates
    CHECK_THROWS(info_nce_loss(SimilarityBatch{}));    // empty batch
}

TEST_CASE("info_nce gradients match finite differences") {
    Rng rng(73);
    Tensor at({4}), c0t({4}), c1t({4}), c2t({4});
    for (int i = 0; i < 4; ++i) {
        at[i] = rng.next_normal();
        c0t[i] = rng.next_normal();
        c1t[i] = rng.next_normal();
        c2t[i] = rng.next_normal();
    }
    ad::Var anchor = ad::Var::param(at);
    ad::Var c0 = ad::Var::param(c0t), c1 = ad::Var::param(c1t), c2 = ad::Var::param(c2t);
    auto build = [&]() {
        SimilarityBatch batch;
        batch.add_group(embed_param(anchor), "A", {c0, c1, c2}, {"A", "B", "C"}, 0);
        return info_nce_loss(batch, 0.8);
    };
    CHECK(testutil::max_grad_rel_err(anchor, build) < 1e-4);
    CHECK(testutil::max_grad_rel_err(c0, build) < 1e-4);
    CHECK(testutil::max_grad_rel_err(c1, build) < 1e-4);
}

// ------------------------------------------------------- negative sampling

TEST_CASE("negative sampling draws only from other eras") {
    std::vector<NegativeCandidate> pool;
    for (int i = 0; i < 4; ++i) pool.push_back({"same" + std::to_string(i), "Era X"});
    for (int i = 0; i < 6; ++i)
        pool.push_back({"other" + std::to_string(i), "Era Y" + std::to_string(i % 2)});

    auto names = sample_negatives("Era X", pool, 5, uint64_t{42});
    CHECK(names.size() == 5);
    for (const auto& n : names) CHECK(n.rfind("other", 0) == 0);
    std::set<std::string> unique(names.begin(), names.end());
    CHECK(unique.size() == 5);  // without replacement
}

TEST_CASE("insufficient era-disjoint candidates is an error listing the count") {
    std::vector<NegativeCandidate> pool = {{"a", "X"}, {"b", "X"}, {"c", "Y"}, {"d", "Y"}};
    CHECK_THROWS_WITH(sample_negatives("X", pool, 5, uint64_t{1}),
                      "insufficient era-disjoint candidates: have 2, need 5");
}

TEST_CASE("negative sampling is deterministic per seed") {
    std::vector<NegativeCandidate> pool;
    for (int i = 0; i < 30; ++i)
        pool.push_back({"n" + std::to_string(i), "Era " + std::to_string(i % 5)});
    auto a = sample_negatives("Era 0", pool, 8, uint64_t{7});
    auto b = sample_negatives("Era 0", pool, 8, uint64_t{7});
    auto c = sample_negatives("Era 0", pool, 8, uint64_t{8});
    CHECK(a == b);
    CHECK(a != c);
}

// ------------------------------------------------------------------- edges

TEST_CASE("constant images produce empty edge maps in both modes") {
    Image flat(8, 8);
    for (auto& v : flat.data) v = 0.42;

    auto exact = edge_map(flat, {}, EdgeMode::exact_canny);
    for (int i = 0; i < exact.values.size(); ++i) CHECK(exact.values[i] == 0.0);

    auto smooth = edge_map(flat, {}, EdgeMode::differentiable);
    for (int i = 0; i < smooth.values.size(); ++i) {
        CHECK(smooth.values[i] > 0.0);
        CHECK(smooth.values[i] <= 5.6e-4);  // sigmoid(-7.5) up to the magnitude epsilon
    }
}

TEST_CASE("vertical step yields a single one-pixel-wide line at the step") {
    Image img = vertical_step_image();
    auto ref = reference_canny(img, 0.15);
    auto got = edge_map(img, {}, EdgeMode::exact_canny);
    for (int i = 0; i < got.values.size(); ++i) CHECK(got.values[i] == ref[i]);

    // Exactly one full-height column, adjacent to the intensity boundary.
    int lit_columns = 0, lit_col = -1;
    for (int x = 0; x < 8; ++x) {
        int count = 0;
        for (int y = 0; y < 8; ++y) count += got.values[y * 8 + x] == 1.0 ? 1 : 0;
        if (count > 0) {
            ++lit_columns;
            lit_col = x;
            CHECK(count == 8);
        }
    }
    CHECK(lit_columns == 1);
    CHECK((lit_col == 3 || lit_col == 4));
}

TEST_CASE("exact canny matches the brute-force reference bit-exactly on all fixtures") {
    for (const auto& img : edge_fixtures()) {
        auto ref = reference_canny(img, 0.15);
        auto got = edge_map(img, {}, EdgeMode::exact_canny);
        REQUIRE(got.values.size() == static_cast<int>(ref.size()));
        for (int i = 0; i < got.values.size(); ++i) {
            CHECK(got.values[i] == ref[i]);
            CHECK((got.values[i] == 0.0 || got.values[i] == 1.0));  // binary
        }
    }
}

TEST_CASE("edge maps are deterministic and validate their inputs") {
    Image img = disk_image();
    auto a = edge_map(img, {}, EdgeMode::exact_canny);
    auto b = edge_map(img, {}, EdgeMode::exact_canny);
    for (int i = 0; i < a.values.size(); ++i) CHECK(a.values[i] == b.values[i]);

    Image bad = img;
    bad.at(0, 0, 0) = 1.4;
    CHECK_THROWS(edge_map(bad, {}, EdgeMode::exact_canny));
    CHECK_THROWS(edge_map(bad, {}, EdgeMode::differentiable));

    EdgeParams five;
    five.gaussian_kernel = 5;
    CHECK_THROWS(edge_map(img, five, EdgeMode::exact_canny));
}

TEST_CASE("differentiable mode approaches the hard-thresholded magnitude as slope grows") {
    for (const auto& img : edge_fixtures()) {
        EdgeParams soft;       // slope 50
        EdgeParams hard_ish;   // slope 1000
        hard_ish.sigmoid_slope = 1000.0;
        auto m50 = edge_map(img, soft, EdgeMode::differentiable);
        auto m1000 = edge_map(img, hard_ish, EdgeMode::differentiable);

        // Reference hard threshold of the blurred Sobel magnitude.
        const int blur_taps[3][3] = {{1, 2, 1}, {2, 4, 2}, {1, 2, 1}};
        const int sobel_x[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
        const int sobel_y[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
        auto gray = ref_gray(img);
        auto blur = ref_filter(gray, img.height, img.width, blur_taps, 16.0);
        auto gx = ref_filter(blur, img.height, img.width, sobel_x, 8.0);
        auto gy = ref_filter(blur, img.height, img.width, sobel_y, 8.0);

        double err50 = 0, err1000 = 0;
        int compared = 0;
        for (int i = 0; i < m50.values.size(); ++i) {
            double mag = std::sqrt(gx[static_cast<size_t>(i)] * gx[static_cast<size_t>(i)] +
                                   gy[static_cast<size_t>(i)] * gy[static_cast<size_t>(i)]);
            if (std::abs(mag - 0.15) < 0.01) continue;  // pointwise limit excludes the boundary
            double hard = mag > 0.15 ? 1.0 : 0.0;
            err50 += std::abs(m50.values[i] - hard);
            err1000 += std::abs(m1000.values[i] - hard);
            CHECK(std::abs(m1000.values[i] - hard) < 1e-3);
            ++compared;
        }
        REQUIRE(compared > 0);
        CHECK(err1000 <= err50);

        for (int i = 0; i < m50.values.size(); ++i) {
            CHECK(m50.values[i] > 0.0);
            CHECK(m50.values[i] < 1.0);  // open interval
        }
    }
}

TEST_CASE("edge loss is zero on identical images and positive across a step") {
    Image img = disk_image();
    CHECK(edge_loss(img, img, EdgeParams{}) == 0.0);

    Image flat(8, 8);
    for (auto& v : flat.data) v = 0.5;
    CHECK(edge_loss(vertical_step_image(), flat, EdgeParams{}) > 1e-3);

    // Symmetry under argument swap (both maps computed the same way).
    Image a = testutil::random_image(8, 8, 5, 0.1, 0.9);
    Image b = testutil::random_image(8, 8, 6, 0.1, 0.9);
    CHECK(edge_loss(a, b, EdgeParams{}) == doctest::Approx(edge_loss(b, a, EdgeParams{})));
    CHECK(edge_loss(a, b, EdgeParams{}) >= 0.0);

    Image small(4, 4);
    CHECK_THROWS(edge_loss(a, small, EdgeParams{}));
}

TEST_CASE("edge loss gradient w.r.t. generated pixels matches finite differences") {
    Image real = vertical_step_image();
    Tensor gen_t({3, 8, 8});
    Rng rng(81);
    for (int i = 0; i < gen_t.size(); ++i) gen_t[i] = 0.2 + 0.6 * rng.next_unit();
    ad::Var gen = ad::Var::param(gen_t);
    auto build = [&]() { return edge_loss(real, gen, EdgeParams{}); };
    CHECK(testutil::max_grad_rel_err(gen, build) < 1e-4);
}

// -------------------------------------------------------------- perceptual

TEST_CASE("perceptual loss reduces to the closed form for a linear encoder") {
    auto dir = testutil::fresh_temp_dir("encoder");
    const int res = 4, out_dim = 5, in_dim = 3 * res * res;
    Rng rng(91);
    Tensor w({out_dim, in_dim});
    for (int i = 0; i < w.size(); ++i) w[i] = rng.next_normal() * 0.2;
    auto index = write_tensor_blob((dir / "encoder.bin").string(), {{"weight", w}});
    {
        std::ofstream meta(dir / "encoder.json");
        meta << nlohmann::json{{"kind", "linear"}, {"tensors", index}}.dump();
    }
    auto encoder = make_feature_encoder("external-pretrained:" + dir.string(), res);

    Image a = testutil::random_image(res, res, 92);
    Image b = testutil::random_image(res, res, 93);
    double got = perceptual_loss(a, b, *encoder);

    // ||W (a - b)||^2 / dim, flattening in channel-major order.
    Tensor ca = image_to_chw(a), cb = image_to_chw(b);
    double expect = 0.0;
    for (int o = 0; o < out_dim; ++o) {
        double acc = 0.0;
        for (int i = 0; i < in_dim; ++i) acc += w[o * in_dim + i] * (ca[i] - cb[i]);
        expect += acc * acc;
    }
    expect /= out_dim;
    CHECK(testutil::rel_err(got, expect) < 1e-12);
}

TEST_CASE("perceptual loss is zero on identical inputs and symmetric") {
    auto encoder = make_feature_encoder("small-conv", 8, 11);
    Image a = testutil::random_image(8, 8, 94);
    Image b = testutil::random_image(8, 8, 95);
    CHECK(perceptual_loss(a, a, *encoder) == 0.0);
    CHECK(perceptual_loss(a, b, *encoder) ==
          doctest::Approx(perceptual_loss(b, a, *encoder)).epsilon(1e-12));
    CHECK(perceptual_loss(a, b, *encoder) >= 0.0);
}

TEST_CASE("perceptual loss gradient matches finite differences") {
    auto encoder = make_feature_encoder("small-conv", 6, 12);
    Image real = testutil::random_image(6, 6, 96);
    Tensor gen_t({3, 6, 6});
    Rng rng(97);
    for (int i = 0; i < gen_t.size(); ++i) gen_t[i] = rng.next_unit();
    ad::Var gen = ad::Var::param(gen_t);
    auto build = [&]() { return perceptual_loss(real, gen, *encoder); };
    CHECK(testutil::max_grad_rel_err(gen, build) < 1e-4);
}

TEST_CASE("feature encoder registry knows its ids") {
    CHECK(make_feature_encoder("identity", 4)->id() == "identity");
    CHECK(make_feature_encoder("toy-linear", 4)->id() == "toy-linear");
    CHECK(make_feature_encoder("small-conv", 4)->id() == "small-conv");
    CHECK_THROWS(make_feature_encoder("clip-vit-l", 4));
}

// ---------------------------------------------------------------- combined

TEST_CASE("combined loss is the exact weighted sum") {
    LossWeights w;
    w.lambda1 = 0.3;
    w.lambda2 = 0.3;
    w.lambda3 = 0.1;
    CHECK(combined_loss(1.0, 2.0, 3.0, 4.0, w) == doctest::Approx(2.9).epsilon(1e-15));

    LossWeights zero;
    zero.lambda1 = zero.lambda2 = zero.lambda3 = 0.0;
    CHECK(combined_loss(1.7, 9.0, 9.0, 9.0, zero) == 1.7);
}

TEST_CASE("combined loss with zero weights reduces to the base term") {
    LossWeights zero;
    zero.lambda1 = zero.lambda2 = zero.lambda3 = 0.0;
    ad::Var base = ad::Var::constant(Tensor::scalar(1.25));
    ad::Var text = ad::Var::constant(Tensor::scalar(8.0));
    ad::Var total = combined_loss(base, text, ad::Var(), ad::Var(), zero);
    CHECK(total.value()[0] == 1.25);
}

TEST_CASE("non-finite terms are named in the failure") {
    LossWeights w;
    ad::Var base = ad::Var::constant(Tensor::scalar(1.0));
    ad::Var bad = ad::Var::constant(Tensor::scalar(std::numeric_limits<double>::infinity()));
    CHECK_THROWS_WITH(combined_loss(base, bad, ad::Var(), ad::Var(), w),
                      "non-finite loss term: L_text");
    CHECK_THROWS_WITH(combined_loss(base, ad::Var(), bad, ad::Var(), w),
                      "non-finite loss term: L_edge");
    CHECK_THROWS_WITH(combined_loss(bad, ad::Var(), ad::Var(), ad::Var(), w),
                      "non-finite loss term: L_SD");
    CHECK_THROWS_WITH(combined_loss(1.0, 0.0, std::nan(""), 0.0, w),
                      "non-finite loss term: L_edge");
}

TEST_CASE("combined gradient is the weighted sum of term gradients") {
    LossWeights w;
    w.lambda1 = 0.3;
    w.lambda2 = 0.3;
    w.lambda3 = 0.1;
    ad::Var theta = ad::Var::param(Tensor::scalar(0.8));

    auto base_term = [&]() { return ad::mul(theta, theta); };
    auto text_term = [&]() { return ad::scale(theta, 3.0); };
    auto edge_term = [&]() { return ad::mul(ad::mul(theta, theta), theta); };
    auto perc_term = [&]() { return ad::scale(theta, 2.0); };

    ad::Var total = combined_loss(base_term(), text_term(), edge_term(), perc_term(), w);
    total.backward();
    double got = theta.grad()[0];
    theta.zero_grad();

    double sum = 0.0;
    const std::vector<std::pair<std::function<ad::Var()>, double>> terms = {
        {base_term, 1.0}, {text_term, w.lambda1}, {edge_term, w.lambda2}, {perc_term, w.lambda3}};
    for (const auto& [fn, lam] : terms) {
        fn().backward();
        sum += lam * theta.grad()[0];
        theta.zero_grad();
    }
    CHECK(std::abs(got - sum) < 1e-6);
}

TEST_CASE("loss weight invariants are validated") {
    LossWeights w;
    w.lambda2 = -0.1;
    CHECK_THROWS(w.validate());
    LossWeights g;
    g.min_snr_gamma = 0.0;
    CHECK_THROWS(g.validate());
}
