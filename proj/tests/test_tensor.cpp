#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rbnet/ops.hpp"
#include "rbnet/tensor.hpp"
#include "support/oracles.hpp"

using namespace rbnet;
using oracles::check_grad;
using oracles::fill_uniform;

namespace {

// Scalar probe loss: sum(out .* proj) with a fixed random projection so that
// gradient errors cannot cancel against a uniform weighting.
Tensor probe_loss(const Tensor& out, const Tensor& proj) {
    return ops::sum(ops::mul(out, proj));
}

Tensor make_proj(const std::vector<int>& shape, uint64_t seed) {
    Tensor p = Tensor::zeros(shape);
    RandomStream rng(seed);
    fill_uniform(p, rng, 0.5, 1.5);
    return p;
}

}  // namespace

TEST_CASE("matmul identity and permutation") {
    Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    RandomStream rng(7);
    Tensor m = Tensor::zeros({3, 3});
    fill_uniform(m, rng);
    Tensor out = ops::matmul(eye, m);
    for (int i = 0; i < 9; ++i) CHECK(out.data()[i] == doctest::Approx(m.data()[i]).epsilon(1e-7));

    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor p = Tensor::from({2, 2}, {0, 1, 1, 0});
    Tensor swapped = ops::matmul(a, p);
    CHECK(swapped.data()[0] == 2.0f);
    CHECK(swapped.data()[1] == 1.0f);
    CHECK(swapped.data()[2] == 4.0f);
    CHECK(swapped.data()[3] == 3.0f);
}

TEST_CASE("matmul shape errors") {
    Tensor a = Tensor::zeros({4, 5});
    Tensor b = Tensor::zeros({4, 3});
    CHECK_THROWS_AS(ops::matmul(a, b), DimensionError);
}

TEST_CASE("matmul gradient vs finite differences") {
    RandomStream rng(11);
    Tensor a = Tensor::zeros({4, 5}, true);
    Tensor b = Tensor::zeros({5, 3}, true);
    fill_uniform(a, rng);
    fill_uniform(b, rng);
    Tensor proj = make_proj({4, 3}, 21);

    auto forward = [&]() { return double(probe_loss(ops::matmul(a, b), proj).data()[0]); };
    GradTape tape;
    {
        TapeScope scope(tape);
        tape.backward(probe_loss(ops::matmul(a, b), proj));
    }
    CHECK(check_grad(a, forward).max_rel_err < 1e-3);
    CHECK(check_grad(b, forward).max_rel_err < 1e-3);
}

TEST_CASE("batched matmul with broadcast weight") {
    RandomStream rng(13);
    Tensor a = Tensor::zeros({2, 3, 4, 5}, true);
    Tensor b = Tensor::zeros({5, 3}, true);
    fill_uniform(a, rng);
    fill_uniform(b, rng);
    Tensor proj = make_proj({2, 3, 4, 3}, 22);
    auto forward = [&]() { return double(probe_loss(ops::matmul(a, b), proj).data()[0]); };
    GradTape tape;
    {
        TapeScope scope(tape);
        tape.backward(probe_loss(ops::matmul(a, b), proj));
    }
    CHECK(check_grad(a, forward, 32).max_rel_err < 1e-3);
    CHECK(check_grad(b, forward).max_rel_err < 1e-3);
}

TEST_CASE("conv2d 1x1 identity") {
    RandomStream rng(17);
    Tensor x = Tensor::zeros({1, 1, 4, 4});
    fill_uniform(x, rng);
    Tensor w = Tensor::from({1, 1, 1, 1}, {1.0f});
    Tensor out = ops::conv2d(x, w, Tensor(), 1, 0);
    for (int i = 0; i < 16; ++i) CHECK(out.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d 3x3 pad 0 reduces 51 to 49") {
    Tensor x = Tensor::zeros({1, 1, 51, 51});
    Tensor w = Tensor::zeros({2, 1, 3, 3});
    Tensor out = ops::conv2d(x, w, Tensor(), 1, 0);
    CHECK(out.shape() == std::vector<int>{1, 2, 49, 49});
}

TEST_CASE("conv2d non-integral output extent") {
    Tensor x = Tensor::zeros({1, 1, 5, 5});
    Tensor w = Tensor::zeros({1, 1, 2, 2});
    CHECK_THROWS_AS(ops::conv2d(x, w, Tensor(), 2, 0), ConfigError);
}

TEST_CASE("conv2d gradient vs finite differences") {
    RandomStream rng(19);
    Tensor x = Tensor::zeros({1, 2, 5, 5}, true);
    Tensor w = Tensor::zeros({3, 2, 3, 3}, true);
    Tensor b = Tensor::zeros({3}, true);
    fill_uniform(x, rng);
    fill_uniform(w, rng);
    fill_uniform(b, rng);
    Tensor proj = make_proj({1, 3, 5, 5}, 23);
    auto forward = [&]() {
        return double(probe_loss(ops::conv2d(x, w, b, 1, 1), proj).data()[0]);
    };
    GradTape tape;
    {
        TapeScope scope(tape);
        tape.backward(probe_loss(ops::conv2d(x, w, b, 1, 1), proj));
    }
    CHECK(check_grad(x, forward).max_rel_err < 1e-3);
    CHECK(check_grad(w, forward).max_rel_err < 1e-3);
    CHECK(check_grad(b, forward).max_rel_err < 1e-3);
}

TEST_CASE("depthwise conv: centered delta kernels are the identity") {
    RandomStream rng(29);
    Tensor x = Tensor::zeros({2, 3, 7, 7});
    fill_uniform(x, rng);
    Tensor w = Tensor::zeros({3, 1, 3, 3});
    for (int c = 0; c < 3; ++c) w.at({c, 0, 1, 1}) = 1.0f;
    Tensor out = ops::depthwise_conv2d(x, w, Tensor());
    CHECK(out.shape() == x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(out.data()[i] == x.data()[i]);
}

TEST_CASE("depthwise conv: channels transform independently") {
    RandomStream rng(31);
    Tensor x = Tensor::zeros({1, 2, 5, 5});
    fill_uniform(x, rng);
    Tensor w = Tensor::zeros({2, 1, 3, 3});
    w.at({0, 0, 1, 1}) = 2.0f;  // channel 0 doubled
    // channel 1 kernel all zero
    Tensor out = ops::depthwise_conv2d(x, w, Tensor());
    for (int i = 0; i < 25; ++i) {
        CHECK(out.data()[i] == 2.0f * x.data()[i]);
        CHECK(out.data()[25 + i] == 0.0f);
    }
}

TEST_CASE("depthwise conv channel mismatch") {
    Tensor x = Tensor::zeros({1, 2, 5, 5});
    Tensor w = Tensor::zeros({3, 1, 3, 3});
    CHECK_THROWS_AS(ops::depthwise_conv2d(x, w, Tensor()), DimensionError);
}

TEST_CASE("depthwise conv gradient vs finite differences") {
    RandomStream rng(37);
    Tensor x = Tensor::zeros({1, 2, 5, 5}, true);
    Tensor w = Tensor::zeros({2, 1, 3, 3}, true);
    fill_uniform(x, rng);
    fill_uniform(w, rng);
    Tensor proj = make_proj({1, 2, 5, 5}, 24);
    auto forward = [&]() {
        return double(probe_loss(ops::depthwise_conv2d(x, w, Tensor()), proj).data()[0]);
    };
    GradTape tape;
    {
        TapeScope scope(tape);
        tape.backward(probe_loss(ops::depthwise_conv2d(x, w, Tensor()), proj));
    }
    CHECK(check_grad(x, forward).max_rel_err < 1e-3);
    CHECK(check_grad(w, forward).max_rel_err < 1e-3);
}

TEST_CASE("layer_norm constant input is zero before affine") {
    Tensor x = Tensor::full({2, 4}, 3.25f);
    Tensor g = Tensor::full({4}, 1.0f);
    Tensor b = Tensor::zeros({4});
    Tensor out = ops::layer_norm(x, {1}, g, b);
    for (int64_t i = 0; i < out.numel(); ++i) CHECK(out.data()[i] == doctest::Approx(0.0f));
}

TEST_CASE("layer_norm symmetric pair maps to -1, 1") {
    Tensor x = Tensor::from({1, 2}, {1.0f, 3.0f});
    Tensor g = Tensor::full({2}, 1.0f);
    Tensor b = Tensor::zeros({2});
    Tensor out = ops::layer_norm(x, {1}, g, b, 1e-12f);
    CHECK(out.data()[0] == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(out.data()[1] == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("layer_norm gradient vs finite differences") {
    RandomStream rng(41);
    Tensor x = Tensor::zeros({2, 5, 3}, true);
    Tensor g = Tensor::zeros({5}, true);
    Tensor b = Tensor::zeros({5}, true);
    fill_uniform(x, rng);
    fill_uniform(g, rng, 0.5, 1.5);
    fill_uniform(b, rng);
    Tensor proj = make_proj({2, 5, 3}, 25);
    auto forward = [&]() {
        return double(probe_loss(ops::layer_norm(x, {1}, g, b), proj).data()[0]);
    };
    GradTape tape;
    {
        TapeScope scope(tape);
        tape.backward(probe_loss(ops::layer_norm(x, {1}, g, b), proj));
    }
    CHECK(check_grad(x, forward).max_rel_err < 1e-3);
    CHECK(check_grad(g, forward).max_rel_err < 1e-3);
    CHECK(check_grad(b, forward).max_rel_err < 1e-3);
}

TEST_CASE("batch_norm eval with identity stats is the identity") {
    RandomStream rng(43);
    Tensor x = Tensor::zeros({3, 2, 4, 4});
    fill_uniform(x, rng);
    Tensor g = Tensor::full({2}, 1.0f);
    Tensor b = Tensor::zeros({2});
    Tensor rm = Tensor::zeros({2});
    Tensor rv = Tensor::full({2}, 1.0f);
    Tensor out = ops::batch_norm(x, g, b, rm, rv, false, 0.1f, 1e-12f);
    for (int64_t i = 0; i < x.numel(); ++i)
        CHECK(out.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-5));
}

TEST_CASE("batch_norm train normalizes per channel") {
    RandomStream rng(47);
    Tensor x = Tensor::zeros({4, 3, 5, 5});
    fill_uniform(x, rng, -2.0, 5.0);
    Tensor g = Tensor::full({3}, 1.0f);
    Tensor b = Tensor::zeros({3});
    Tensor rm = Tensor::zeros({3});
    Tensor rv = Tensor::full({3}, 1.0f);
    Tensor out = ops::batch_norm(x, g, b, rm, rv, true);
    for (int c = 0; c < 3; ++c) {
        double m = 0.0, v = 0.0;
        int64_t n = 0;
        for (int i = 0; i < 4; ++i)
            for (int64_t p = 0; p < 25; ++p) {
                const float val = out.data()[i * 75 + c * 25 + p];
                m += val;
                ++n;
            }
        m /= double(n);
        for (int i = 0; i < 4; ++i)
            for (int64_t p = 0; p < 25; ++p) {
                const double d = out.data()[i * 75 + c * 25 + p] - m;
                v += d * d;
            }
        v /= double(n);
        CHECK(std::abs(m) < 1e-5);
        CHECK(std::abs(v - 1.0) < 1e-4);
    }
}

TEST_CASE("batch_norm train rejects N=1") {
    Tensor x = Tensor::zeros({1, 2, 3, 3});
    Tensor g = Tensor::full({2}, 1.0f);
    Tensor b = Tensor::zeros({2});
    Tensor rm = Tensor::zeros({2});
    Tensor rv = Tensor::full({2}, 1.0f);
    CHECK_THROWS_AS(ops::batch_norm(x, g, b, rm, rv, true), ConfigError);
}

TEST_CASE("batch_norm train gradient vs finite differences") {
    RandomStream rng(53);
    Tensor x = Tensor::zeros({3, 2, 3, 3}, true);
    Tensor g = Tensor::zeros({2}, true);
    Tensor b = Tensor::zeros({2}, true);
    fill_uniform(x, rng);
    fill_uniform(g, rng, 0.5, 1.5);
    fill_uniform(b, rng);
    Tensor proj = make_proj({3, 2, 3, 3}, 26);
    auto forward = [&]() {
        Tensor rm = Tensor::zeros({2});
        Tensor rv = Tensor::full({2}, 1.0f);
        return double(probe_loss(ops::batch_norm(x, g, b, rm, rv, true), proj).data()[0]);
    };
    GradTape tape;
    {
        TapeScope scope(tape);
        Tensor rm = Tensor::zeros({2});
        Tensor rv = Tensor::full({2}, 1.0f);
        tape.backward(probe_loss(ops::batch_norm(x, g, b, rm, rv, true), proj));
    }
    CHECK(check_grad(x, forward).max_rel_err < 1e-3);
    CHECK(check_grad(g, forward).max_rel_err < 1e-3);
    CHECK(check_grad(b, forward).max_rel_err < 1e-3);
}

TEST_CASE("softmax uniform and large-value stability") {
    Tensor x = Tensor::from({3}, {0.0f, 0.0f, 0.0f});
    Tensor out = ops::softmax(x, 0);
    for (int i = 0; i < 3; ++i) CHECK(out.data()[i] == doctest::Approx(1.0 / 3.0));

    Tensor big = Tensor::from({2}, {1000.0f, 0.0f});
    Tensor sb = ops::softmax(big, 0);
    CHECK(sb.data()[0] == doctest::Approx(1.0));
    CHECK(sb.data()[1] == doctest::Approx(0.0));
    CHECK(std::isfinite(sb.data()[0]));
}

TEST_CASE("softmax rows are a probability simplex for random inputs") {
    RandomStream rng(59);
    for (int trial = 0; trial < 25; ++trial) {
        Tensor x = Tensor::zeros({4, 7});
        fill_uniform(x, rng, -50.0, 50.0);
        Tensor out = ops::softmax(x, 1);
        for (int r = 0; r < 4; ++r) {
            double s = 0.0;
            for (int c = 0; c < 7; ++c) {
                CHECK(out.data()[r * 7 + c] >= 0.0f);
                s += out.data()[r * 7 + c];
            }
            CHECK(std::abs(s - 1.0) < 1e-5);
        }
    }
}

TEST_CASE("softmax gradient vs finite differences") {
    RandomStream rng(61);
    Tensor x = Tensor::zeros({3, 5}, true);
    fill_uniform(x, rng);
    Tensor proj = make_proj({3, 5}, 27);
    auto forward = [&]() { return double(probe_loss(ops::softmax(x, 1), proj).data()[0]); };
    GradTape tape;
    {
        TapeScope scope(tape);
        tape.backward(probe_loss(ops::softmax(x, 1), proj));
    }
    CHECK(check_grad(x, forward).max_rel_err < 1e-3);
}

TEST_CASE("activation point values") {
    Tensor x = Tensor::from({4}, {0.0f, -5.0f, 5.0f, 10.0f});
    Tensor r = ops::relu(x);
    CHECK(r.data()[0] == 0.0f);
    CHECK(r.data()[1] == 0.0f);
    CHECK(r.data()[2] == 5.0f);
    Tensor g = ops::gelu(x);
    CHECK(g.data()[0] == 0.0f);
    CHECK(std::abs(g.data()[3] - 10.0f) < 1e-6f);
}

TEST_CASE("gelu and sigmoid gradients vs finite differences") {
    RandomStream rng(67);
    Tensor x = Tensor::zeros({32}, true);
    fill_uniform(x, rng, -3.0, 3.0);
    Tensor proj = make_proj({32}, 28);
    for (int which = 0; which < 2; ++which) {
        x.zero_grad();
        auto apply = [&](const Tensor& t) { return which == 0 ? ops::gelu(t) : ops::sigmoid(t); };
        auto forward = [&]() { return double(probe_loss(apply(x), proj).data()[0]); };
        GradTape tape;
        {
            TapeScope scope(tape);
            tape.backward(probe_loss(apply(x), proj));
        }
        CHECK(check_grad(x, forward).max_rel_err < 1e-3);
    }
}

TEST_CASE("concat and split") {
    RandomStream rng(71);
    Tensor a = Tensor::zeros({1, 4, 3, 3});
    Tensor b = Tensor::zeros({1, 4, 3, 3});
    fill_uniform(a, rng);
    fill_uniform(b, rng);
    Tensor cat = ops::concat({a, b}, 1);
    CHECK(cat.shape() == std::vector<int>{1, 8, 3, 3});

    auto parts = ops::split(cat, {4, 4}, 1);
    REQUIRE(parts.size() == 2);
    for (int64_t i = 0; i < a.numel(); ++i) {
        CHECK(parts[0].data()[i] == a.data()[i]);
        CHECK(parts[1].data()[i] == b.data()[i]);
    }

    Tensor c = Tensor::zeros({1, 3, 3, 3});
    CHECK_THROWS_AS(ops::concat({a, ops::reshape(c, {1, 3, 3, 3})}, 0), DimensionError);
}

TEST_CASE("split then concat is the bitwise identity") {
    RandomStream rng(73);
    Tensor x = Tensor::zeros({2, 6, 4});
    fill_uniform(x, rng);
    auto parts = ops::split(x, {2, 3, 1}, 1);
    Tensor back = ops::concat(parts, 1);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(back.data()[i] == x.data()[i]);
}

TEST_CASE("gradient of one slice routes only to that slice") {
    RandomStream rng(79);
    Tensor x = Tensor::zeros({2, 6}, true);
    fill_uniform(x, rng);
    GradTape tape;
    {
        TapeScope scope(tape);
        auto parts = ops::split(x, {2, 4}, 1);
        tape.backward(ops::sum(parts[0]));
    }
    for (int r = 0; r < 2; ++r) {
        for (int c = 0; c < 6; ++c) {
            const float g = x.grad()[r * 6 + c];
            if (c < 2)
                CHECK(g == 1.0f);
            else
                CHECK(g == 0.0f);
        }
    }
}

TEST_CASE("backward of sum gives ones; of half square gives x") {
    RandomStream rng(83);
    Tensor x = Tensor::zeros({12}, true);
    fill_uniform(x, rng);
    GradTape tape;
    {
        TapeScope scope(tape);
        tape.backward(ops::sum(x));
    }
    for (int i = 0; i < 12; ++i) CHECK(x.grad()[i] == 1.0f);

    x.zero_grad();
    GradTape tape2;
    {
        TapeScope scope(tape2);
        tape2.backward(ops::scale(ops::sum(ops::mul(x, x)), 0.5f));
    }
    for (int i = 0; i < 12; ++i)
        CHECK(x.grad()[i] == doctest::Approx(x.data()[i]).epsilon(1e-6));
}

TEST_CASE("backward requires scalar loss; repeated backward accumulates") {
    Tensor x = Tensor::zeros({3}, true);
    GradTape tape;
    {
        TapeScope scope(tape);
        Tensor y = ops::scale(x, 2.0f);
        CHECK_THROWS_AS(tape.backward(y), UsageError);
        Tensor loss = ops::sum(y);
        tape.clear();
        TapeScope rescope(tape);
        Tensor loss2 = ops::sum(ops::scale(x, 2.0f));
        tape.backward(loss2);
        tape.backward(loss2);
    }
    for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == 4.0f);
}

TEST_CASE("reshape, permute, bias_add, expand_batch, mean gradients") {
    RandomStream rng(89);
    Tensor x = Tensor::zeros({2, 3, 4}, true);
    Tensor bias = Tensor::zeros({3}, true);
    fill_uniform(x, rng);
    fill_uniform(bias, rng);
    Tensor proj = make_proj({3, 2, 3, 4}, 29);
    auto build = [&]() {
        Tensor t = ops::permute(x, {2, 0, 1});          // (4,2,3)
        t = ops::reshape(t, {4, 6});                    // (4,6)
        t = ops::permute(t, {1, 0});                    // (6,4)
        t = ops::reshape(t, {2, 3, 4});                 // back to rank 3
        t = ops::permute(t, {0, 2, 1});                 // (2,4,3)
        t = ops::bias_add_lastdim(t, bias);             // + bias over last dim
        t = ops::expand_batch(t, 3);                    // (3,2,4,3)
        return ops::mean(ops::mul(t, ops::permute(proj, {0, 1, 3, 2})));
    };
    auto forward = [&]() { return double(build().data()[0]); };
    GradTape tape;
    {
        TapeScope scope(tape);
        tape.backward(build());
    }
    CHECK(check_grad(x, forward).max_rel_err < 1e-3);
    CHECK(check_grad(bias, forward).max_rel_err < 1e-3);
}

TEST_CASE("attention core matches double-precision brute force") {
    RandomStream rng(97);
    const int B = 2, Tq = 4, Tk = 4, d = 3;
    Tensor q = Tensor::zeros({B, Tq, d});
    Tensor k = Tensor::zeros({B, Tk, d});
    Tensor v = Tensor::zeros({B, Tk, d});
    fill_uniform(q, rng);
    fill_uniform(k, rng);
    fill_uniform(v, rng);
    Tensor dist = Tensor::zeros({Tq, Tk});
    fill_uniform(dist, rng, 0.0, 2.0);
    for (int i = 0; i < Tq; ++i) dist.at({i, i}) = 0.0f;
    const float alpha_val = -0.37f;
    Tensor mult = ops::exp_alpha_dist(alpha_val, dist);
    const float scl = 1.0f / std::sqrt(float(d));

    for (bool renorm : {false, true}) {
        Tensor out = ops::attention_core(q, k, v, scl, mult, dist, Tensor(), renorm);
        for (int b = 0; b < B; ++b) {
            std::vector<double> qd, kd, vd, md;
            for (int i = 0; i < Tq * d; ++i) qd.push_back(q.data()[b * Tq * d + i]);
            for (int i = 0; i < Tk * d; ++i) {
                kd.push_back(k.data()[b * Tk * d + i]);
                vd.push_back(v.data()[b * Tk * d + i]);
            }
            for (int i = 0; i < Tq * Tk; ++i) md.push_back(mult.data()[i]);
            auto ref = oracles::brute_attention(qd, kd, vd, Tq, Tk, d, scl, &md, renorm);
            for (int i = 0; i < Tq * d; ++i)
                CHECK(out.data()[b * Tq * d + i] == doctest::Approx(ref[size_t(i)]).epsilon(1e-4));
        }
    }
}

TEST_CASE("attention core gradients vs finite differences") {
    RandomStream rng(101);
    const int B = 2, Tq = 3, Tk = 5, d = 4;
    Tensor q = Tensor::zeros({B, Tq, d}, true);
    Tensor k = Tensor::zeros({B, Tk, d}, true);
    Tensor v = Tensor::zeros({B, Tk, d}, true);
    fill_uniform(q, rng);
    fill_uniform(k, rng);
    fill_uniform(v, rng);
    Tensor dist = Tensor::zeros({Tq, Tk});
    fill_uniform(dist, rng, 0.0, 3.0);
    Tensor alpha = Tensor::scalar(-0.25f, true);
    Tensor proj = make_proj({B, Tq, d}, 30);
    const float scl = 0.5f;

    for (bool renorm : {false, true}) {
        q.zero_grad();
        k.zero_grad();
        v.zero_grad();
        alpha.zero_grad();
        auto build = [&]() {
            Tensor mult = ops::exp_alpha_dist(alpha.data()[0], dist);
            return probe_loss(ops::attention_core(q, k, v, scl, mult, dist, alpha, renorm), proj);
        };
        auto forward = [&]() { return double(build().data()[0]); };
        GradTape tape;
        {
            TapeScope scope(tape);
            tape.backward(build());
        }
        CHECK(check_grad(q, forward).max_rel_err < 1e-3);
        CHECK(check_grad(k, forward).max_rel_err < 1e-3);
        CHECK(check_grad(v, forward).max_rel_err < 1e-3);
        CHECK(check_grad(alpha, forward).max_rel_err < 1e-3);
    }
}

TEST_CASE("deterministic kernels: identical inputs give bitwise identical outputs") {
    RandomStream rng(103);
    Tensor a = Tensor::zeros({3, 8, 6});
    Tensor b = Tensor::zeros({3, 6, 4});
    fill_uniform(a, rng);
    fill_uniform(b, rng);
    Tensor o1 = ops::matmul(a, b);
    Tensor o2 = ops::matmul(a, b);
    for (int64_t i = 0; i < o1.numel(); ++i) CHECK(o1.data()[i] == o2.data()[i]);
}
