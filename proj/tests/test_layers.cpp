#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "act/layers.hpp"
#include "support/oracles.hpp"

using act::ConvKernel;
using act::Tensor;
using oracle::random_tensor;

TEST_CASE("1x1 identity convolution reproduces the input", "[layers]") {
    act::Rng rng(100);
    const Tensor in = random_tensor<float>(rng, 6, 5, 3);
    ConvKernel k(1, 1, 3, 3);
    for (int c = 0; c < 3; ++c) k.w(0, 0, c, c) = 1.0f;
    const Tensor out = act::conv2d(in, k, 0);
    REQUIRE(out.data == in.data);
}

TEST_CASE("all-ones 3x3 convolution of an all-ones 5x5 input", "[layers]") {
    Tensor in(5, 5, 1, 1.0f);
    ConvKernel k(3, 1, 1, 1);
    std::fill(k.weights.begin(), k.weights.end(), 1.0f);
    const Tensor out = act::conv2d(in, k, 0);
    REQUIRE(out.height == 3);
    REQUIRE(out.width == 3);
    for (float v : out.data) REQUIRE(v == 9.0f);
}

TEST_CASE("conv2d rejects bad geometry", "[layers]") {
    Tensor in(4, 4, 2);
    REQUIRE_THROWS_AS(act::conv2d(in, ConvKernel(3, 1, 3, 4), 1), std::invalid_argument);
    REQUIRE_THROWS_AS(act::conv2d(in, ConvKernel(7, 1, 2, 4), 0), std::invalid_argument);
    REQUIRE_THROWS_AS(act::conv2d(in, ConvKernel(3, 1, 2, 4), -1), std::invalid_argument);
}

TEST_CASE("conv2d matches the nested-loop oracle on random instances", "[layers][oracle]") {
    act::Rng rng(101);
    for (int trial = 0; trial < 100; ++trial) {
        const int h = 4 + static_cast<int>(rng.uniform_index(6));
        const int w = 4 + static_cast<int>(rng.uniform_index(6));
        const int ci = 1 + static_cast<int>(rng.uniform_index(3));
        const int co = 1 + static_cast<int>(rng.uniform_index(4));
        const int ks = 1 + static_cast<int>(rng.uniform_index(3));
        const int stride = 1 + static_cast<int>(rng.uniform_index(2));
        const int pad = static_cast<int>(rng.uniform_index(2));
        if (h + 2 * pad < ks || w + 2 * pad < ks) continue;

        const Tensor in = random_tensor<float>(rng, h, w, ci);
        ConvKernel k(ks, stride, ci, co);
        for (auto& v : k.weights) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        for (auto& v : k.bias) v = static_cast<float>(rng.uniform(-0.5, 0.5));

        const Tensor got = act::conv2d(in, k, pad);
        const Tensor want = oracle::naive_conv2d(in, k, pad);
        REQUIRE(got.same_shape(want));
        for (std::size_t i = 0; i < got.data.size(); ++i)
            REQUIRE(got.data[i] == Catch::Approx(want.data[i]).margin(1e-5));
    }
}

TEST_CASE("specified 8x8x3 stride-2 conv case matches the oracle", "[layers][oracle]") {
    act::Rng rng(102);
    const Tensor in = random_tensor<float>(rng, 8, 8, 3);
    ConvKernel k(3, 2, 3, 4);
    for (auto& v : k.weights) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    const Tensor got = act::conv2d(in, k, 1);
    const Tensor want = oracle::naive_conv2d(in, k, 1);
    REQUIRE(got.height == 4);
    REQUIRE(got.width == 4);
    for (std::size_t i = 0; i < got.data.size(); ++i)
        REQUIRE(got.data[i] == Catch::Approx(want.data[i]).margin(1e-5));
}

TEST_CASE("conv2d is deterministic", "[layers]") {
    act::Rng rng(103);
    const Tensor in = random_tensor<float>(rng, 7, 7, 2);
    ConvKernel k(3, 1, 2, 3);
    for (auto& v : k.weights) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    REQUIRE(act::conv2d(in, k, 1).data == act::conv2d(in, k, 1).data);
}

TEST_CASE("maxpool basics", "[layers]") {
    const Tensor constant(6, 6, 2, 0.25f);
    for (float v : act::maxpool(constant, 2, 2).data) REQUIRE(v == 0.25f);

    Tensor t(2, 2, 1);
    t.at(0, 0, 0) = 1.0f;
    t.at(0, 1, 0) = 2.0f;
    t.at(1, 0, 0) = 3.0f;
    t.at(1, 1, 0) = 4.0f;
    const Tensor pooled = act::maxpool(t, 2, 2);
    REQUIRE(pooled.height == 1);
    REQUIRE(pooled.width == 1);
    REQUIRE(pooled.at(0, 0, 0) == 4.0f);

    REQUIRE_THROWS_AS(act::maxpool(t, 3, 1), std::invalid_argument);
}

TEST_CASE("maxpool matches the sliding-window oracle", "[layers][oracle]") {
    act::Rng rng(104);
    const Tensor fixed = random_tensor<float>(rng, 7, 7, 2);
    REQUIRE(act::maxpool(fixed, 3, 1).data == oracle::naive_maxpool(fixed, 3, 1).data);

    for (int trial = 0; trial < 100; ++trial) {
        const int h = 3 + static_cast<int>(rng.uniform_index(6));
        const int w = 3 + static_cast<int>(rng.uniform_index(6));
        const int c = 1 + static_cast<int>(rng.uniform_index(3));
        const int k = 2 + static_cast<int>(rng.uniform_index(2));
        const int s = 1 + static_cast<int>(rng.uniform_index(2));
        if (h < k || w < k) continue;
        const Tensor in = random_tensor<float>(rng, h, w, c);
        REQUIRE(act::maxpool(in, k, s).data == oracle::naive_maxpool(in, k, s).data);
    }
}

TEST_CASE("relu", "[layers]") {
    Tensor neg(3, 3, 1, -2.0f);
    for (float v : act::relu(neg).data) REQUIRE(v == 0.0f);

    Tensor pos(3, 3, 1, 2.0f);
    REQUIRE(act::relu(pos).data == pos.data);

    act::Rng rng(105);
    const Tensor mixed = random_tensor<float>(rng, 5, 4, 2);
    const Tensor out = act::relu(mixed);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        REQUIRE(out.data[i] == std::max(mixed.data[i], 0.0f));
}

TEST_CASE("channel softmax", "[layers]") {
    SECTION("equal logits give a uniform distribution") {
        const Tensor in(4, 4, 2, 0.7f);
        for (float v : act::channel_softmax(in).data)
            REQUIRE(v == Catch::Approx(0.5).margin(1e-7));
    }
    SECTION("extreme logits saturate and still normalize") {
        Tensor in(2, 2, 2);
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                in.at(i, j, 0) = 40.0f;
                in.at(i, j, 1) = -40.0f;
            }
        const Tensor out = act::channel_softmax(in);
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                REQUIRE(out.at(i, j, 0) == Catch::Approx(1.0).margin(1e-6));
                REQUIRE(out.at(i, j, 0) + out.at(i, j, 1) == Catch::Approx(1.0).margin(1e-6));
            }
    }
    SECTION("random logits normalize per position") {
        act::Rng rng(106);
        const Tensor in = random_tensor<float>(rng, 5, 3, 4, -3.0, 3.0);
        const Tensor out = act::channel_softmax(in);
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 3; ++j) {
                double sum = 0.0;
                for (int c = 0; c < 4; ++c) sum += out.at(i, j, c);
                REQUIRE(sum == Catch::Approx(1.0).margin(1e-6));
            }
    }
    REQUIRE_THROWS_AS(act::channel_softmax(Tensor(2, 2, 1)), std::invalid_argument);
}

TEST_CASE("pixel cross entropy anchors", "[layers]") {
    SECTION("perfect prediction has (clamped) zero loss") {
        act::ActionnessMap target(3, 3);
        target.at(0, 0) = 1.0f;
        target.at(2, 2) = 1.0f;
        Tensor pred(3, 3, 2);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                pred.at(i, j, 1) = target.at(i, j);
                pred.at(i, j, 0) = 1.0f - target.at(i, j);
            }
        const auto r = act::pixel_cross_entropy(pred, target);
        REQUIRE(r.loss <= 9.0 * -std::log(1.0 - 1e-7) + 1e-12);
    }
    SECTION("uniform 0.5 prediction costs exactly N ln 2") {
        act::Rng rng(107);
        const act::ActionnessMap target = oracle::random_binary_map(rng, 4, 5);
        const Tensor pred(4, 5, 2, 0.5f);
        const auto r = act::pixel_cross_entropy(pred, target);
        REQUIRE(std::abs(r.loss - 20.0 * std::log(2.0)) < 1e-9);
    }
    SECTION("shape and binarity violations are rejected") {
        act::ActionnessMap target(3, 3);
        REQUIRE_THROWS_AS(act::pixel_cross_entropy(Tensor(3, 4, 2), target),
                          std::invalid_argument);
        target.at(1, 1) = 0.5f;
        REQUIRE_THROWS_AS(act::pixel_cross_entropy(Tensor(3, 3, 2, 0.5f), target),
                          std::invalid_argument);
    }
}

TEST_CASE("softmax + cross entropy gradient matches finite differences",
          "[layers][gradcheck]") {
    act::Rng rng(108);
    const act::ActionnessMap target = oracle::random_binary_map(rng, 4, 4);
    act::TensorT<double> logits = random_tensor<double>(rng, 4, 4, 2, -2.0, 2.0);

    const auto analytic =
        act::pixel_cross_entropy(act::channel_softmax(logits), target).gradient;

    auto loss = [&]() {
        return act::pixel_cross_entropy(act::channel_softmax(logits), target).loss;
    };
    for (std::size_t i = 0; i < logits.data.size(); ++i) {
        const double fd = oracle::central_diff(logits.data, i, loss, 1e-4);
        REQUIRE(oracle::close_rel(analytic.data[i], fd, 1e-4, 1e-9));
    }
}

TEST_CASE("relu and maxpool backward", "[layers]") {
    act::Rng rng(109);
    SECTION("relu passes gradient through positive activations unchanged") {
        const Tensor cached(4, 4, 2, 1.0f);
        const Tensor upstream = random_tensor<float>(rng, 4, 4, 2);
        REQUIRE(act::relu_backward(cached, upstream).data == upstream.data);
    }
    SECTION("relu blocks gradient at non-positive activations") {
        Tensor cached(1, 3, 1);
        cached.at(0, 0, 0) = -1.0f;
        cached.at(0, 1, 0) = 0.0f;
        cached.at(0, 2, 0) = 2.0f;
        const Tensor upstream(1, 3, 1, 5.0f);
        const Tensor g = act::relu_backward(cached, upstream);
        REQUIRE(g.at(0, 0, 0) == 0.0f);
        REQUIRE(g.at(0, 1, 0) == 0.0f);
        REQUIRE(g.at(0, 2, 0) == 5.0f);
    }
    SECTION("maxpool routes to the argmax and conserves gradient mass") {
        const Tensor in = random_tensor<float>(rng, 6, 6, 2);
        const auto pooled = act::maxpool_with_argmax(in, 2, 2);
        Tensor upstream(pooled.output.height, pooled.output.width, 2);
        for (std::size_t i = 0; i < upstream.data.size(); ++i)
            upstream.data[i] = static_cast<float>(i + 1);
        const Tensor g = act::maxpool_backward(pooled.argmax, 6, 6, 2, upstream);
        double up_sum = 0.0, g_sum = 0.0;
        for (float v : upstream.data) up_sum += v;
        for (float v : g.data) g_sum += v;
        REQUIRE(g_sum == Catch::Approx(up_sum));
        // gradient lands only where the forward max came from
        for (int i = 0; i < 6; ++i)
            for (int j = 0; j < 6; ++j)
                for (int c = 0; c < 2; ++c) {
                    const int flat = (i * 6 + j) * 2 + c;
                    if (g.data[flat] != 0.0f)
                        REQUIRE(std::find(pooled.argmax.begin(), pooled.argmax.end(), flat) !=
                                pooled.argmax.end());
                }
    }
}

TEST_CASE("conv2d gradients match finite differences", "[layers][gradcheck]") {
    act::Rng rng(110);
    act::TensorT<double> in = random_tensor<double>(rng, 6, 6, 2);
    act::ConvKernelT<double> k(3, 2, 2, 3);
    for (auto& v : k.weights) v = rng.uniform(-1.0, 1.0);
    for (auto& v : k.bias) v = rng.uniform(-0.5, 0.5);
    const int pad = 1;

    // Scalar loss: inner product of the conv output with fixed coefficients.
    const int oh = act::conv_output_dim(6, 3, 2, pad);
    act::TensorT<double> coeff(oh, oh, 3);
    for (auto& v : coeff.data) v = rng.uniform(-1.0, 1.0);

    auto loss = [&]() {
        const auto out = act::conv2d(in, k, pad);
        double l = 0.0;
        for (std::size_t i = 0; i < out.data.size(); ++i) l += out.data[i] * coeff.data[i];
        return l;
    };

    const auto grads = act::conv2d_backward(in, k, pad, coeff);

    for (std::size_t i = 0; i < k.weights.size(); ++i) {
        const double fd = oracle::central_diff(k.weights, i, loss, 1e-5);
        REQUIRE(oracle::close_rel(grads.weight_grad[i], fd, 1e-3));
    }
    for (std::size_t i = 0; i < k.bias.size(); ++i) {
        const double fd = oracle::central_diff(k.bias, i, loss, 1e-5);
        REQUIRE(oracle::close_rel(grads.bias_grad[i], fd, 1e-3));
    }
    for (std::size_t i = 0; i < in.data.size(); ++i) {
        const double fd = oracle::central_diff(in.data, i, loss, 1e-5);
        REQUIRE(oracle::close_rel(grads.input_grad.data[i], fd, 1e-3));
    }
}

TEST_CASE("sgd with momentum", "[layers]") {
    SECTION("zero gradient leaves parameters untouched") {
        const std::vector<float> w{1.0f, -2.0f}, g{0.0f, 0.0f}, v{0.0f, 0.0f};
        const auto r = act::sgd_momentum_step(w, g, v, 0.1, 0.9);
        REQUIRE(r.params == w);
        REQUIRE(r.velocity == v);
    }
    SECTION("zero momentum reduces to plain gradient descent") {
        const std::vector<float> w{1.0f}, g{2.0f}, v{0.0f};
        const auto r = act::sgd_momentum_step(w, g, v, 0.5, 0.0);
        REQUIRE(r.params[0] == Catch::Approx(0.0));
    }
    SECTION("two steps with momentum 0.9 land at -0.29 g") {
        const float g = 3.0f;
        std::vector<float> w{0.0f}, vel{0.0f};
        for (int step = 0; step < 2; ++step) {
            const auto r = act::sgd_momentum_step(w, {g}, vel, 0.1, 0.9);
            w = r.params;
            vel = r.velocity;
        }
        REQUIRE(w[0] == Catch::Approx(-0.29 * g).margin(1e-6));
    }
    SECTION("contract violations throw") {
        REQUIRE_THROWS_AS(act::sgd_momentum_step<float>({1.0f}, {1.0f, 2.0f}, {0.0f}, 0.1, 0.9),
                          std::invalid_argument);
        REQUIRE_THROWS_AS(act::sgd_momentum_step<float>({1.0f}, {1.0f}, {0.0f}, 0.0, 0.9),
                          std::invalid_argument);
        REQUIRE_THROWS_AS(act::sgd_momentum_step<float>({1.0f}, {1.0f}, {0.0f}, 0.1, 1.0),
                          std::invalid_argument);
    }
}

TEST_CASE("class cross entropy gradient matches finite differences", "[layers][gradcheck]") {
    act::Rng rng(111);
    act::TensorT<double> logits = random_tensor<double>(rng, 1, 1, 4, -2.0, 2.0);
    const int label = 2;
    const auto analytic =
        act::class_cross_entropy(act::channel_softmax(logits), label).gradient;
    auto loss = [&]() {
        return act::class_cross_entropy(act::channel_softmax(logits), label).loss;
    };
    for (std::size_t i = 0; i < logits.data.size(); ++i) {
        const double fd = oracle::central_diff(logits.data, i, loss, 1e-5);
        REQUIRE(oracle::close_rel(analytic.data[i], fd, 1e-4, 1e-9));
    }
}

TEST_CASE("avgpool window average", "[layers]") {
    Tensor t(2, 2, 1);
    t.at(0, 0, 0) = 1.0f;
    t.at(0, 1, 0) = 2.0f;
    t.at(1, 0, 0) = 3.0f;
    t.at(1, 1, 0) = 4.0f;
    REQUIRE(act::avgpool(t, 2, 2).at(0, 0, 0) == Catch::Approx(2.5));
}
