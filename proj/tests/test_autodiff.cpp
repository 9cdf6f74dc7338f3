#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sspnet/autodiff.hpp"
#include "sspnet/rng.hpp"
#include "test_support.hpp"

using namespace sspnet;
using testsupport::gradcheck;
using testsupport::random_tensor;

TEST_CASE("add/relu/scale forward and gradients") {
    Rng rng(1);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({3, 4}, rng);
    testsupport::GradCheckFailure f;
    const double err = gradcheck(
        {{"a", &a}, {"b", &b}},
        [](const std::vector<ad::Value>& v) {
            return ad::sum_all(ad::relu(ad::add(ad::scale(v[0], 1.7), v[1])));
        },
        1e-5, 1e-4, &f);
    INFO(f.param, "[", f.index, "] analytic=", f.analytic, " numeric=", f.numeric);
    CHECK(err < 1e-6);
}

TEST_CASE("sigmoid matches closed form and gradient") {
    Rng rng(2);
    Tensor x = random_tensor({2, 5}, rng, -3.0, 3.0);
    auto node = ad::param(x);
    auto s = ad::sigmoid(node);
    for (int64_t i = 0; i < x.numel(); ++i)
        CHECK(s->val[i] == doctest::Approx(1.0 / (1.0 + std::exp(-x[i]))).epsilon(1e-12));
    const double err = gradcheck({{"x", &x}}, [](const std::vector<ad::Value>& v) {
        return ad::sum_all(ad::sigmoid(v[0]));
    });
    CHECK(err < 1e-6);
}

TEST_CASE("conv2d shapes and gradients") {
    Rng rng(3);
    Tensor x = random_tensor({2, 3, 8, 6}, rng);
    Tensor w = random_tensor({4, 3, 3, 3}, rng);
    Tensor b = random_tensor({4}, rng);
    auto xv = ad::param(x);
    auto y = ad::conv2d(xv, ad::param(w), ad::param(b), 2, 1);
    CHECK(y->val.shape() == std::vector<int>{2, 4, 4, 3});

    const double err = gradcheck(
        {{"x", &x}, {"w", &w}, {"b", &b}},
        [](const std::vector<ad::Value>& v) {
            // squared sum makes the loss nonlinear in the output
            auto c = ad::conv2d(v[0], v[1], v[2], 2, 1);
            return ad::sum_all(ad::relu(c));
        });
    CHECK(err < 1e-5);
}

TEST_CASE("conv2d 1x1 stride 1 equals per-pixel linear map") {
    Rng rng(4);
    Tensor x = random_tensor({1, 2, 3, 3}, rng);
    Tensor w = random_tensor({3, 2, 1, 1}, rng);
    Tensor b = random_tensor({3}, rng);
    auto y = ad::conv2d(ad::constant(x), ad::constant(w), ad::constant(b), 1, 0);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int co = 0; co < 3; ++co) {
                double want = b[co];
                for (int ci = 0; ci < 2; ++ci) want += w.at(co, ci, 0, 0) * x.at(0, ci, i, j);
                CHECK(y->val.at(0, co, i, j) == doctest::Approx(want).epsilon(1e-12));
            }
}

TEST_CASE("upsample2x/slice_rows/spp2 gradients") {
    Rng rng(5);
    Tensor x = random_tensor({2, 3, 4, 4}, rng);
    const double e1 = gradcheck({{"x", &x}}, [](const std::vector<ad::Value>& v) {
        return ad::sum_all(ad::relu(ad::upsample2x(v[0])));
    });
    CHECK(e1 < 1e-6);
    const double e2 = gradcheck({{"x", &x}}, [](const std::vector<ad::Value>& v) {
        return ad::sum_all(ad::relu(ad::slice_rows(v[0], 1, 3)));
    });
    CHECK(e2 < 1e-6);
    const double e3 = gradcheck({{"x", &x}}, [](const std::vector<ad::Value>& v) {
        return ad::sum_all(ad::relu(ad::spp2(v[0])));
    });
    CHECK(e3 < 1e-6);
}

TEST_CASE("spp2 on a constant map replicates the value in all five cells") {
    Tensor x = Tensor::full({1, 2, 5, 3}, 0.37);
    auto y = ad::spp2(ad::constant(x));
    CHECK(y->val.shape() == std::vector<int>{1, 10});
    for (int64_t i = 0; i < y->val.numel(); ++i) CHECK(y->val[i] == doctest::Approx(0.37));
}

TEST_CASE("linear and mean_points gradients") {
    Rng rng(6);
    Tensor x = random_tensor({3, 4}, rng);
    Tensor w = random_tensor({2, 4}, rng);
    Tensor b = random_tensor({2}, rng);
    const double e1 = gradcheck(
        {{"x", &x}, {"w", &w}, {"b", &b}}, [](const std::vector<ad::Value>& v) {
            return ad::sum_all(ad::relu(ad::linear(v[0], v[1], v[2])));
        });
    CHECK(e1 < 1e-5);

    Tensor pts = random_tensor({2, 5, 3}, rng);
    const double e2 = gradcheck({{"pts", &pts}}, [](const std::vector<ad::Value>& v) {
        return ad::sum_all(ad::relu(ad::mean_points(v[0])));
    });
    CHECK(e2 < 1e-6);
}

TEST_CASE("assemble_columns routes values and rejects bad layouts") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2, 1}, {5, 6});
    auto out = ad::assemble_columns({ad::constant(a), ad::constant(b)}, {{2, 0}, {1}}, 3);
    CHECK(out->val.at(0, 2) == 1);
    CHECK(out->val.at(0, 0) == 2);
    CHECK(out->val.at(0, 1) == 5);
    CHECK(out->val.at(1, 1) == 6);
    CHECK_THROWS_AS(
        ad::assemble_columns({ad::constant(a), ad::constant(b)}, {{2, 0}, {2}}, 3),
        ValidationError);
    CHECK_THROWS_AS(ad::assemble_columns({ad::constant(a)}, {{0, 1}}, 3), ValidationError);
}

TEST_CASE("offset_points gradients in map, delta, slot weights and attention") {
    Rng rng(7);
    Tensor map = random_tensor({2, 3, 6, 5}, rng);
    Tensor base({2, 2, 2});
    base.at(0, 0, 0) = 1.3;
    base.at(0, 0, 1) = 2.2;
    base.at(0, 1, 0) = 3.4;
    base.at(0, 1, 1) = 0.7;
    base.at(1, 0, 0) = 2.6;
    base.at(1, 0, 1) = 1.1;
    base.at(1, 1, 0) = 0.4;
    base.at(1, 1, 1) = 3.3;
    Tensor delta({2, 2, 2});
    delta.at(0, 0, 0) = 0.21;
    delta.at(0, 0, 1) = -0.34;
    delta.at(0, 1, 0) = -0.12;
    delta.at(0, 1, 1) = 0.45;
    delta.at(1, 0, 0) = 0.33;
    delta.at(1, 0, 1) = 0.18;
    delta.at(1, 1, 0) = -0.27;
    delta.at(1, 1, 1) = -0.09;
    Tensor slot_w = random_tensor({2, 3, 3}, rng);
    Tensor attn = random_tensor({2}, rng);

    testsupport::GradCheckFailure f;
    const double err = gradcheck(
        {{"map", &map}, {"delta", &delta}, {"slot_w", &slot_w}, {"attn", &attn}},
        [&](const std::vector<ad::Value>& v) {
            return ad::sum_all(ad::relu(ad::offset_points(v[0], base, v[1], v[2], v[3])));
        },
        1e-6, 1e-4, &f);
    INFO(f.param, "[", f.index, "] analytic=", f.analytic, " numeric=", f.numeric);
    CHECK(err < 1e-4);
}

TEST_CASE("offset_points clamps saturated positions with zero offset gradient") {
    Tensor map = Tensor::full({1, 1, 2, 2}, 1.0);
    map.at(0, 0, 1, 1) = 5.0;
    Tensor base({1, 1, 2});
    base.at(0, 0, 0) = 1.0;
    base.at(0, 0, 1) = 1.0;
    Tensor delta({1, 1, 2});
    delta.at(0, 0, 0) = 100.0;  // way past the border: clamps to (1,1)
    delta.at(0, 0, 1) = 100.0;
    Tensor slot_w({1, 1, 1}, {1.0});
    Tensor attn({1}, {1.0});
    auto dv = ad::param(delta);
    auto out = ad::offset_points(ad::constant(map), base, dv, ad::constant(slot_w),
                                 ad::constant(attn));
    CHECK(out->val[0] == doctest::Approx(5.0));
    ad::backward(ad::sum_all(out));
    CHECK(dv->grad[0] == 0.0);
    CHECK(dv->grad[1] == 0.0);
}

TEST_CASE("weighted_bce matches direct evaluation and gradient") {
    Rng rng(8);
    Tensor logits = random_tensor({4, 3}, rng, -4.0, 4.0);
    Tensor labels({4, 3});
    Tensor weights({4, 3});
    for (int64_t i = 0; i < labels.numel(); ++i) {
        labels[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
        weights[i] = rng.uniform(0.5, 2.0);
    }
    auto lv = ad::param(logits);
    auto loss = ad::weighted_bce(lv, labels, weights);
    double want = 0.0;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j) {
            const double s = 1.0 / (1.0 + std::exp(-logits.at(i, j)));
            want -= weights.at(i, j) *
                    (labels.at(i, j) * std::log(s) + (1.0 - labels.at(i, j)) * std::log(1.0 - s));
        }
    want /= 4.0;
    CHECK(loss->val[0] == doctest::Approx(want).epsilon(1e-10));

    const double err = gradcheck({{"logits", &logits}}, [&](const std::vector<ad::Value>& v) {
        return ad::weighted_bce(v[0], labels, weights);
    });
    CHECK(err < 1e-6);
}

TEST_CASE("weighted_bce is stable at extreme logits") {
    Tensor logits({1, 2}, {500.0, -500.0});
    Tensor labels({1, 2}, {1.0, 0.0});
    Tensor weights({1, 2}, {1.0, 1.0});
    auto loss = ad::weighted_bce(ad::param(logits), labels, weights);
    CHECK(std::isfinite(loss->val[0]));
    CHECK(loss->val[0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("slice_index0 / reshape / select_columns / select_scalar gradients") {
    Rng rng(9);
    Tensor x = random_tensor({3, 2, 2}, rng);
    const double e1 = gradcheck({{"x", &x}}, [](const std::vector<ad::Value>& v) {
        return ad::sum_all(ad::relu(ad::slice_index0(v[0], 1)));
    });
    CHECK(e1 < 1e-6);
    Tensor y = random_tensor({2, 6}, rng);
    const double e2 = gradcheck({{"y", &y}}, [](const std::vector<ad::Value>& v) {
        auto r = ad::reshape(v[0], {3, 4});
        return ad::sum_all(ad::relu(ad::select_columns(r, {3, 1})));
    });
    CHECK(e2 < 1e-6);
    const double e3 = gradcheck({{"y", &y}}, [](const std::vector<ad::Value>& v) {
        return ad::select_scalar(v[0], 1, 4);
    });
    CHECK(e3 < 1e-6);
}

TEST_CASE("two forward passes with identical inputs produce identical outputs") {
    Rng rng(10);
    Tensor x = random_tensor({2, 3, 16, 16}, rng);
    Tensor w = random_tensor({4, 3, 3, 3}, rng);
    Tensor b = random_tensor({4}, rng);
    auto y1 = ad::conv2d(ad::constant(x), ad::constant(w), ad::constant(b), 2, 1);
    auto y2 = ad::conv2d(ad::constant(x), ad::constant(w), ad::constant(b), 2, 1);
    for (int64_t i = 0; i < y1->val.numel(); ++i) CHECK(y1->val[i] == y2->val[i]);
}
