#include <doctest.h>

#include <cmath>
#include <set>

#include "artifact/autodiff.hpp"
#include "artifact/rng.hpp"
#include "artifact/tensor.hpp"
#include "test_util.hpp"

using namespace artifact;

TEST_CASE("rng state round-trips and streams are reproducible") {
    Rng a(42);
    for (int i = 0; i < 100; ++i) a.next_normal();
    std::string state = a.state();
    Rng b(0);
    b.restore(state);
    for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("rng integer draws stay in range") {
    Rng rng(7);
    for (int i = 0; i < 10000; ++i) {
        auto v = rng.next_int(3, 17);
        CHECK(v >= 3);
        CHECK(v <= 17);
    }
}

TEST_CASE("rng sample without replacement yields distinct indices") {
    Rng rng(9);
    auto picks = rng.sample_without_replacement(20, 8);
    CHECK(picks.size() == 8);
    std::set<int> unique(picks.begin(), picks.end());
    CHECK(unique.size() == 8);
    for (int p : picks) {
        CHECK(p >= 0);
        CHECK(p < 20);
    }
}

TEST_CASE("derived rng streams differ by tag") {
    Rng a(derive_seed(5, 1)), b(derive_seed(5, 2));
    CHECK(a.next_u64() != b.next_u64());
}

TEST_CASE("autodiff elementwise and reduction gradients match finite differences") {
    Rng rng(11);
    Tensor t({2, 3});
    for (int i = 0; i < t.size(); ++i) t[i] = rng.next_normal() * 0.5 + 0.1;
    ad::Var p = ad::Var::param(t);

    SUBCASE("composite scalar pipeline") {
        auto build = [&]() {
            ad::Var x = ad::silu(ad::add_scalar(ad::scale(p, 1.3), 0.2));
            ad::Var y = ad::sigmoid(ad::mul(x, x));
            return ad::mean(ad::square(ad::sub(y, ad::tanh_of(p))));
        };
        CHECK(testutil::max_grad_rel_err(p, build) < 1e-6);
    }
    SUBCASE("sqrt/exp/log chain") {
        auto build = [&]() {
            ad::Var x = ad::sqrt_eps(ad::square(p), 1e-9);
            return ad::sum(ad::log_of(ad::add_scalar(ad::exp_of(ad::neg(x)), 1.0)));
        };
        CHECK(testutil::max_grad_rel_err(p, build) < 1e-6);
    }
}

TEST_CASE("matvec and embedding gradients match finite differences") {
    Rng rng(13);
    Tensor wt({4, 6});
    for (int i = 0; i < wt.size(); ++i) wt[i] = rng.next_normal();
    ad::Var w = ad::Var::param(wt);
    Tensor xt({6});
    for (int i = 0; i < xt.size(); ++i) xt[i] = rng.next_normal();
    ad::Var x = ad::Var::param(xt);

    auto build_w = [&]() { return ad::sum(ad::square(ad::matvec(w, x))); };
    CHECK(testutil::max_grad_rel_err(w, build_w) < 1e-6);
    CHECK(testutil::max_grad_rel_err(x, build_w) < 1e-6);

    Tensor table({5, 3});
    for (int i = 0; i < table.size(); ++i) table[i] = rng.next_normal();
    ad::Var emb = ad::Var::param(table);
    auto build_e = [&]() {
        return ad::sum(ad::square(ad::embedding_mean(emb, {0, 2, 2, 4})));
    };
    CHECK(testutil::max_grad_rel_err(emb, build_e) < 1e-6);
}

TEST_CASE("conv2d gradients match finite differences in both padding modes") {
    Rng rng(17);
    Tensor xt({2, 5, 5}), kt({3, 2, 3, 3}), bt({3});
    for (int i = 0; i < xt.size(); ++i) xt[i] = rng.next_normal();
    for (int i = 0; i < kt.size(); ++i) kt[i] = rng.next_normal() * 0.3;
    for (int i = 0; i < bt.size(); ++i) bt[i] = rng.next_normal() * 0.1;
    ad::Var x = ad::Var::param(xt), k = ad::Var::param(kt), b = ad::Var::param(bt);

    for (auto mode : {ad::PadMode::zero, ad::PadMode::replicate}) {
        auto build = [&]() { return ad::mean(ad::square(ad::conv2d(x, k, b, mode))); };
        CHECK(testutil::max_grad_rel_err(x, build) < 1e-6);
        CHECK(testutil::max_grad_rel_err(k, build) < 1e-6);
        CHECK(testutil::max_grad_rel_err(b, build) < 1e-6);
    }
}

TEST_CASE("channel affine, weighted sum, normalize, and lse gradients") {
    Rng rng(19);
    Tensor xt({3, 4, 4}), st({3}), tt({3});
    for (int i = 0; i < xt.size(); ++i) xt[i] = rng.next_normal();
    for (int i = 0; i < 3; ++i) {
        st[i] = 1.0 + 0.2 * rng.next_normal();
        tt[i] = 0.1 * rng.next_normal();
    }
    ad::Var x = ad::Var::param(xt), s = ad::Var::param(st), t = ad::Var::param(tt);
    auto build = [&]() {
        ad::Var y = ad::channel_affine(x, s, t);
        return ad::mean(ad::square(ad::channel_weighted_sum(y, {0.3, 0.5, 0.2})));
    };
    CHECK(testutil::max_grad_rel_err(x, build) < 1e-6);
    CHECK(testutil::max_grad_rel_err(s, build) < 1e-6);
    CHECK(testutil::max_grad_rel_err(t, build) < 1e-6);

    Tensor vt({5});
    for (int i = 0; i < 5; ++i) vt[i] = rng.next_normal();
    ad::Var v = ad::Var::param(vt);
    auto build_norm = [&]() {
        ad::Var n = ad::l2_normalize(v);
        std::vector<ad::Var> scalars;
        for (int i = 0; i < 5; ++i) scalars.push_back(ad::pick(n, i));
        return ad::log_sum_exp(scalars);
    };
    CHECK(testutil::max_grad_rel_err(v, build_norm) < 1e-6);
}

TEST_CASE("clamp01 clamps values and passes gradient only in range") {
    ad::Var x = ad::Var::param(Tensor({3}, {-0.5, 0.5, 1.5}));
    ad::Var y = ad::sum(ad::clamp01(x));
    CHECK(y.value()[0] == doctest::Approx(0.0 + 0.5 + 1.0));
    y.backward();
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 1.0);
    CHECK(x.grad()[2] == 0.0);
}

TEST_CASE("constants build no tape") {
    ad::Var a = ad::Var::constant(Tensor({4}, {1, 2, 3, 4}));
    ad::Var b = ad::mean(ad::square(a));
    CHECK_FALSE(b.requires_grad());
    CHECK(b.node()->parents.empty());
}
