#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <limits>

#include "support/fd_oracle.hpp"
#include "textseg/nn.hpp"

using namespace textseg;
using testsupport::fd_max_rel_err;
using testsupport::random_tensor;
using testsupport::random_tensor_kink_safe;

namespace {

Var leaf(Shape dims, std::vector<float> data, bool grad = false) {
    return make_leaf<float>(Tensor(std::move(dims), std::move(data)), grad);
}

// Direct nested-loop convolution, the independent oracle for conv2d.
std::vector<float> direct_conv(const std::vector<float>& x, int h, int w,
                               const std::vector<float>& k, int kh, int kw, float bias) {
    std::vector<float> out(static_cast<std::size_t>(h) * w, 0.0f);
    const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
    for (int y = 0; y < h; ++y)
        for (int x0 = 0; x0 < w; ++x0) {
            float acc = bias;
            for (int dy = 0; dy < kh; ++dy)
                for (int dx = 0; dx < kw; ++dx) {
                    const int iy = y - ph + dy, ix = x0 - pw + dx;
                    if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                    acc += k[static_cast<std::size_t>(dy) * kw + dx] *
                           x[static_cast<std::size_t>(iy) * w + ix];
                }
            out[static_cast<std::size_t>(y) * w + x0] = acc;
        }
    return out;
}

}  // namespace

TEST_CASE("tensor invariants") {
    CHECK_THROWS_AS(Tensor(Shape{2, 3}, std::vector<float>(5)), ShapeError);
    Tensor t(Shape{2, 3});
    CHECK(t.size() == 6);
    CHECK(numel(Shape{4, 1, 8, 8}) == 256);
}

TEST_CASE("conv2d identity kernel") {
    auto x = leaf({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    auto k = leaf({1, 1, 1, 1}, {1.0f});
    auto b = leaf({1}, {0.0f});
    auto y = conv2d(x, k, b);
    CHECK(y->value.dims == Shape{1, 1, 3, 3});
    for (int i = 0; i < 9; ++i) CHECK(y->value.data[i] == doctest::Approx(x->value.data[i]));
}

TEST_CASE("conv2d zero input yields bias") {
    auto x = leaf({2, 3, 4, 4}, std::vector<float>(2 * 3 * 16, 0.0f));
    Rng rng(5);
    Tensor kt(Shape{2, 3, 3, 3});
    for (auto& v : kt.data) v = static_cast<float>(rng.normal());
    auto k = make_leaf<float>(kt);
    auto b = leaf({2}, {1.5f, -2.5f});
    auto y = conv2d(x, k, b);
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 2; ++c)
            for (int i = 0; i < 16; ++i)
                CHECK(y->value.at4(n, c, i / 4, i % 4) == doctest::Approx(c == 0 ? 1.5f : -2.5f));
}

TEST_CASE("conv2d matches the direct-convolution oracle") {
    const std::vector<float> img{1, 2, 3, 4, 5, 6, 7, 8, 9};
    const std::vector<float> ones(9, 1.0f);
    auto x = leaf({1, 1, 3, 3}, img);
    auto k = leaf({1, 1, 3, 3}, ones);
    auto b = leaf({1}, {0.0f});
    auto y = conv2d(x, k, b);
    const auto expect = direct_conv(img, 3, 3, ones, 3, 3, 0.0f);
    for (int i = 0; i < 9; ++i) CHECK(y->value.data[i] == doctest::Approx(expect[i]));
    CHECK(y->value.at4(0, 0, 1, 1) == doctest::Approx(45.0f));

    // random shape against the oracle
    Rng rng(77);
    Tensor xt(Shape{1, 1, 6, 5});
    for (auto& v : xt.data) v = static_cast<float>(rng.normal());
    Tensor kt(Shape{1, 1, 3, 3});
    for (auto& v : kt.data) v = static_cast<float>(rng.normal());
    auto y2 = conv2d(make_leaf<float>(xt), make_leaf<float>(kt), leaf({1}, {0.25f}));
    const auto expect2 = direct_conv(xt.data, 6, 5, kt.data, 3, 3, 0.25f);
    for (std::size_t i = 0; i < expect2.size(); ++i)
        CHECK(y2->value.data[i] == doctest::Approx(expect2[i]).epsilon(1e-5));
}

TEST_CASE("conv2d error paths") {
    auto x = leaf({1, 2, 4, 4}, std::vector<float>(32, 1.0f));
    auto k = leaf({1, 3, 3, 3}, std::vector<float>(27, 1.0f));
    auto b = leaf({1}, {0.0f});
    CHECK_THROWS_AS(conv2d(x, k, b), ShapeError);

    auto keven = leaf({1, 2, 2, 2}, std::vector<float>(8, 1.0f));
    CHECK_THROWS_AS(conv2d(x, keven, b), ShapeError);

    Tensor bad(Shape{1, 2, 4, 4});
    bad.data[3] = std::numeric_limits<float>::quiet_NaN();
    auto k2 = leaf({1, 2, 3, 3}, std::vector<float>(18, 1.0f));
    CHECK_THROWS_AS(conv2d(make_leaf<float>(bad), k2, b), NumericError);
}

TEST_CASE("batchnorm zero-variance and affine contract") {
    auto gamma = leaf({1}, {1.0f});
    auto beta = leaf({1}, {0.0f});
    BatchNormStateT<float> state(1);
    auto x = leaf({2, 1, 2, 2}, std::vector<float>(8, 3.25f));
    auto y = batchnorm(x, gamma, beta, state, BnMode::Training);
    for (float v : y->value.data) CHECK(std::abs(v) <= 1e-2f);

    // standardized batch: mean 0, variance 1 per channel
    auto xs = leaf({1, 1, 1, 2}, {-1.0f, 1.0f});
    auto gamma2 = leaf({1}, {2.0f});
    auto beta2 = leaf({1}, {1.0f});
    BatchNormStateT<float> state2(1);
    auto y2 = batchnorm(xs, gamma2, beta2, state2, BnMode::Training);
    CHECK(y2->value.data[0] == doctest::Approx(2.0f * -0.999995f + 1.0f).epsilon(1e-5));
    CHECK(y2->value.data[1] == doctest::Approx(2.0f * 0.999995f + 1.0f).epsilon(1e-5));
}

TEST_CASE("batchnorm direct formula on batch {1,3}") {
    auto x = leaf({1, 1, 1, 2}, {1.0f, 3.0f});
    auto gamma = leaf({1}, {1.0f});
    auto beta = leaf({1}, {0.0f});
    BatchNormStateT<float> state(1);
    auto y = batchnorm(x, gamma, beta, state, BnMode::Training);
    // mean 2, biased variance 1: (1-2)/sqrt(1+1e-5) = -0.999995
    CHECK(y->value.data[0] == doctest::Approx(-0.999995).epsilon(1e-6));
    CHECK(y->value.data[1] == doctest::Approx(0.999995).epsilon(1e-6));
    // running stats moved toward the batch statistics
    CHECK(state.running_mean[0] == doctest::Approx(0.9f * 0.0f + 0.1f * 2.0f));
    CHECK(state.running_var[0] == doctest::Approx(0.9f * 1.0f + 0.1f * 1.0f));
}

TEST_CASE("batchnorm channel mismatch") {
    auto x = leaf({1, 2, 2, 2}, std::vector<float>(8, 1.0f));
    auto gamma = leaf({3}, {1, 1, 1});
    auto beta = leaf({3}, {0, 0, 0});
    BatchNormStateT<float> state(3);
    CHECK_THROWS_AS(batchnorm(x, gamma, beta, state, BnMode::Training), ShapeError);
}

TEST_CASE("relu definition and gradient") {
    auto x = leaf({1, 1, 1, 3}, {-1.0f, 0.0f, 2.0f}, true);
    auto y = relu(x);
    CHECK(y->value.data == std::vector<float>{0.0f, 0.0f, 2.0f});

    auto xg = leaf({1, 1, 1, 2}, {-0.5f, 0.5f}, true);
    backward(sum_all(relu(xg)));
    CHECK(xg->grad[0] == 0.0f);
    CHECK(xg->grad[1] == 1.0f);

    // all-nonnegative input passes through unchanged
    auto xp = leaf({1, 1, 2, 2}, {0.0f, 1.0f, 2.5f, 0.25f});
    auto yp = relu(xp);
    CHECK(yp->value.data == xp->value.data);
}

TEST_CASE("maxpool2 definition, ties and oracle") {
    auto x = leaf({1, 1, 2, 2}, {1, 2, 3, 4});
    CHECK(maxpool2(x)->value.data[0] == 4.0f);

    // constant input: value preserved, gradient to the top-left of each window
    auto xc = leaf({1, 1, 2, 2}, std::vector<float>(4, 7.0f), true);
    auto yc = maxpool2(xc);
    CHECK(yc->value.data[0] == 7.0f);
    backward(sum_all(yc));
    CHECK(xc->grad == std::vector<float>{1, 0, 0, 0});

    // random 4x4 against an exhaustive window scan
    Rng rng(11);
    Tensor xt(Shape{1, 1, 4, 4});
    for (auto& v : xt.data) v = static_cast<float>(rng.normal());
    auto y = maxpool2(make_leaf<float>(xt));
    for (int oy = 0; oy < 2; ++oy)
        for (int ox = 0; ox < 2; ++ox) {
            float best = -1e30f;
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx)
                    best = std::max(best, xt.at4(0, 0, oy * 2 + dy, ox * 2 + dx));
            CHECK(y->value.at4(0, 0, oy, ox) == best);
        }

    auto odd = leaf({1, 1, 3, 4}, std::vector<float>(12, 0.0f));
    CHECK_THROWS_AS(maxpool2(odd), ShapeError);
}

TEST_CASE("upsample2 replication and block-sum gradient") {
    auto x = leaf({1, 1, 1, 1}, {5.0f}, true);
    auto y = upsample2(x);
    CHECK(y->value.dims == Shape{1, 1, 2, 2});
    for (float v : y->value.data) CHECK(v == 5.0f);

    backward(sum_all(y));
    CHECK(x->grad[0] == 4.0f);

    // on constant input, upsample2 of maxpool2 reproduces the input
    auto xc = leaf({1, 2, 4, 4}, std::vector<float>(32, 1.25f));
    auto rt = upsample2(maxpool2(xc));
    CHECK(rt->value.data == xc->value.data);
}

TEST_CASE("concat_channels counts and identity") {
    auto a = leaf({1, 3, 2, 2}, std::vector<float>(12, 1.0f));
    auto b = leaf({1, 64, 2, 2}, std::vector<float>(256, 2.0f));
    CHECK(concat_channels(a, b)->value.c() == 67);

    auto a2 = leaf({1, 195, 2, 2}, std::vector<float>(195 * 4, 0.5f));
    auto b2 = leaf({1, 64, 2, 2}, std::vector<float>(256, 0.5f));
    CHECK(concat_channels(a2, b2)->value.c() == 259);

    auto zero = leaf({1, 0, 2, 2}, {});
    auto same = concat_channels(zero, a);
    CHECK(same->value.data == a->value.data);

    auto mismatched = leaf({1, 3, 3, 2}, std::vector<float>(18, 0.0f));
    CHECK_THROWS_AS(concat_channels(a, mismatched), ShapeError);
}

TEST_CASE("softmax_channels examples and properties") {
    auto x = leaf({1, 4, 1, 1}, {0.3f, 0.3f, 0.3f, 0.3f});
    auto y = softmax_channels(x);
    for (float v : y->value.data) CHECK(v == doctest::Approx(0.25f));

    auto x1 = leaf({1, 4, 1, 1}, {1.0f, 0.0f, 0.0f, 0.0f});
    auto y1 = softmax_channels(x1);
    CHECK(y1->value.data[0] == doctest::Approx(0.47536f).epsilon(1e-4));
    CHECK(y1->value.data[1] == doctest::Approx(0.17488f).epsilon(1e-4));
    CHECK(y1->value.data[2] == doctest::Approx(0.17488f).epsilon(1e-4));

    // shift invariance
    auto xs = leaf({1, 4, 1, 1}, {1.0f + 3.5f, 0.0f + 3.5f, 0.0f + 3.5f, 0.0f + 3.5f});
    auto ys = softmax_channels(xs);
    for (int i = 0; i < 4; ++i) CHECK(ys->value.data[i] == doctest::Approx(y1->value.data[i]));

    // simplex property on random input
    Rng rng(3);
    Tensor xt(Shape{2, 4, 3, 3});
    for (auto& v : xt.data) v = static_cast<float>(rng.normal(0, 3));
    auto yr = softmax_channels(make_leaf<float>(xt));
    for (int n = 0; n < 2; ++n)
        for (int i = 0; i < 9; ++i) {
            float sum = 0;
            for (int c = 0; c < 4; ++c) {
                const float v = yr->value.at4(n, c, i / 3, i % 3);
                CHECK(v > 0.0f);
                CHECK(v < 1.0f);
                sum += v;
            }
            CHECK(std::abs(sum - 1.0f) <= 1e-6f);
        }

    auto tiny = leaf({1, 1, 1, 1}, {1.0f});
    CHECK_THROWS_AS(softmax_channels(tiny), ShapeError);
}

TEST_CASE("backward bias gradient of summed convolution") {
    const int n = 2, h = 4, w = 5;
    auto x = leaf({n, 1, h, w}, std::vector<float>(n * h * w, 0.5f));
    auto k = leaf({1, 1, 3, 3}, std::vector<float>(9, 1.0f), true);
    auto b = leaf({1}, {0.0f}, true);
    backward(sum_all(conv2d(x, k, b)));
    CHECK(b->grad[0] == doctest::Approx(static_cast<float>(n * h * w)));
}

TEST_CASE("backward requires scalar root and accumulates") {
    auto x = leaf({1, 1, 1, 2}, {1.0f, 2.0f}, true);
    auto y = relu(x);
    CHECK_THROWS_AS(backward(y), UsageError);

    auto s = sum_all(relu(x));
    backward(s);
    const auto first = x->grad;
    backward(s);
    CHECK(x->grad[0] == doctest::Approx(2 * first[0]));  // accumulation without reset

    x->zero_grad();
    backward(sum_all(relu(x)));
    CHECK(x->grad == first);  // reset restores the single-sweep gradients
}

TEST_CASE("finite differences validate every primitive backward") {
    Rng rng(2024);
    using testsupport::random_tensor;

    {
        auto x = make_leaf<double>(random_tensor({2, 3, 5, 4}, rng), true);
        auto k = make_leaf<double>(random_tensor({2, 3, 3, 3}, rng, 0.5), true);
        auto b = make_leaf<double>(random_tensor({2}, rng, 0.5), true);
        auto build = [&] {
            Rng r(1);
            return testsupport::weighted_sum(conv2d(x, k, b), r);
        };
        CHECK(fd_max_rel_err(build, {x, k, b}) <= 1e-4);
    }
    {
        auto x = make_leaf<double>(random_tensor({2, 2, 4, 4}, rng), true);
        auto gamma = make_leaf<double>(random_tensor({2}, rng, 0.2), true);
        auto beta = make_leaf<double>(random_tensor({2}, rng, 0.2), true);
        for (auto& v : gamma->value.data) v += 1.0;
        auto build = [&] {
            Rng r(2);
            BatchNormStateT<double> state(2);
            return testsupport::weighted_sum(batchnorm(x, gamma, beta, state, BnMode::Training), r);
        };
        CHECK(fd_max_rel_err(build, {x, gamma, beta}) <= 1e-4);
    }
    {
        auto x = make_leaf<double>(random_tensor_kink_safe({2, 2, 4, 4}, rng), true);
        auto build = [&] {
            Rng r(3);
            return testsupport::weighted_sum(maxpool2(relu(x)), r);
        };
        CHECK(fd_max_rel_err(build, {x}) <= 1e-4);
    }
    {
        auto a = make_leaf<double>(random_tensor({1, 2, 2, 3}, rng), true);
        auto b = make_leaf<double>(random_tensor({1, 3, 2, 3}, rng), true);
        auto build = [&] {
            Rng r(4);
            return testsupport::weighted_sum(
                softmax_channels(concat_channels(upsample2(a), upsample2(b))), r);
        };
        CHECK(fd_max_rel_err(build, {a, b}) <= 1e-4);
    }
}

TEST_CASE("shape algebra is a pure function of input dims") {
    Rng rng(99);
    for (int trial = 0; trial < 25; ++trial) {
        const int n = 1 + static_cast<int>(rng.below(2));
        const int c = 1 + static_cast<int>(rng.below(4));
        const int h = 2 * (1 + static_cast<int>(rng.below(4)));
        const int w = 2 * (1 + static_cast<int>(rng.below(4)));
        const int oc = 1 + static_cast<int>(rng.below(5));

        auto x = make_leaf<float>(Tensor(Shape{n, c, h, w}));
        auto k = make_leaf<float>(Tensor(Shape{oc, c, 3, 3}));
        auto b = make_leaf<float>(Tensor(Shape{oc}));
        CHECK(conv2d(x, k, b)->value.dims == Shape{n, oc, h, w});
        CHECK(maxpool2(x)->value.dims == Shape{n, c, h / 2, w / 2});
        CHECK(upsample2(x)->value.dims == Shape{n, c, h * 2, w * 2});
        auto x2 = make_leaf<float>(Tensor(Shape{n, 5, h, w}));
        CHECK(concat_channels(x, x2)->value.dims == Shape{n, c + 5, h, w});
    }
}

TEST_CASE("determinism: identical inputs give bit-identical outputs") {
    auto run = [] {
        Rng rng(31415);
        Tensor xt(Shape{1, 3, 8, 8});
        for (auto& v : xt.data) v = static_cast<float>(rng.normal());
        Tensor kt(Shape{4, 3, 3, 3});
        for (auto& v : kt.data) v = static_cast<float>(rng.normal(0, 0.5));
        auto y = conv2d(make_leaf<float>(xt), make_leaf<float>(kt),
                        make_leaf<float>(Tensor(Shape{4})));
        return softmax_channels(relu(y))->value.data;
    };
    const auto a = run();
    const auto b = run();
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}
