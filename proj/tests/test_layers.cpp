#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "obn/gradcheck.hpp"
#include "obn/layers.hpp"
#include "oracles.hpp"

using namespace obn;

namespace {

ParamPtr<double> make_param(const std::string& name, TensorD v) {
    return std::make_shared<Param<double>>(name, std::move(v));
}

} // namespace

TEST_CASE("conv2d 1x1 kernel is a per-pixel linear map") {
    Rng rng(1);
    auto w = make_param("w", TensorD::randn({5, 3, 1, 1}, rng));
    Conv2d<double> conv(w, 1, 0);
    TensorD x = TensorD::randn({2, 3, 4, 4}, rng);
    TensorD y = conv.forward(x, nullptr);
    TensorD wmat = w->value.reshaped({5, 3});
    for (int b = 0; b < 2; ++b)
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j)
                for (int t = 0; t < 5; ++t) {
                    double want = 0;
                    for (int c = 0; c < 3; ++c) want += wmat.at(t, c) * x.at(b, c, i, j);
                    CHECK(y.at(b, t, i, j) == doctest::Approx(want).epsilon(1e-12));
                }
}

TEST_CASE("conv2d Dirac kernel is identity") {
    Rng rng(2);
    TensorD w({3, 3, 3, 3});
    for (int c = 0; c < 3; ++c) w.at(c, c, 1, 1) = 1.0; // single 1 at center
    auto wp = make_param("w", w);
    Conv2d<double> conv(wp, 1, 1);
    TensorD x = TensorD::randn({2, 3, 5, 5}, rng);
    ActivationTape<double> tape;
    TensorD y = conv.forward(x, &tape);
    for (size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
    // grad_input of the Dirac kernel == grad_out
    TensorD gy = TensorD::randn(y.shape(), rng);
    wp->zero_grad();
    TensorD gx = conv.backward(gy, tape);
    for (size_t i = 0; i < gy.size(); ++i) CHECK(gx[i] == doctest::Approx(gy[i]).epsilon(1e-14));
    CHECK(tape.empty());
}

TEST_CASE("conv2d forward equals nested-loop oracle (f64)") {
    Rng rng(3);
    auto w = make_param("w", TensorD::randn({6, 4, 3, 3}, rng));
    Conv2d<double> conv(w, 2, 1);
    TensorD x = TensorD::randn({3, 4, 9, 9}, rng);
    TensorD y = conv.forward(x, nullptr);
    TensorD want = oracle::conv2d_batched(x, w->value, 2, 1);
    REQUIRE(y.same_shape(want));
    for (size_t i = 0; i < y.size(); ++i) CHECK(oracle::rel_err(y[i], want[i]) < 1e-12);
}

TEST_CASE("conv2d backward passes finite differences") {
    Rng rng(4);
    auto w = make_param("w", TensorD::randn({3, 4, 3, 3}, rng, 0.5));
    auto x = make_param("x", TensorD::randn({2, 4, 5, 5}, rng));
    Conv2d<double> conv(w, 1, 1);
    TensorD proj = TensorD::randn({2, 3, 5, 5}, rng);
    auto loss = [&] { return dot(conv.forward(x->value, nullptr), proj); };
    ActivationTape<double> tape;
    conv.forward(x->value, &tape);
    w->zero_grad();
    x->grad = conv.backward(proj, tape);
    auto rep = gradcheck_params({w, x}, loss, 1e-5, 1e-6);
    CHECK(rep.all_pass);
    CHECK(rep.worst < 1e-6);
}

TEST_CASE("batchnorm of constant input collapses to the shift parameter") {
    auto g = make_param("g", TensorD::full({4}, 1.7));
    auto b = make_param("b", TensorD::full({4}, 0.25));
    BatchNorm2d<double> bn(g, b, "bn");
    TensorD x = TensorD::full({3, 4, 2, 2}, 5.5);
    TensorD y = bn.forward(x, true, nullptr);
    for (size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(0.25).epsilon(1e-9));
}

TEST_CASE("batchnorm eval before any train step uses mean 0 / var 1") {
    auto g = make_param("g", TensorD::full({2}, 1.0));
    auto b = make_param("b", TensorD({2}));
    BatchNorm2d<double> bn(g, b, "bn");
    TensorD x = TensorD({1, 2, 1, 1}, {3.0, -1.0});
    TensorD y = bn.forward(x, false, nullptr);
    CHECK(y[0] == doctest::Approx(3.0).epsilon(1e-5));
    CHECK(y[1] == doctest::Approx(-1.0).epsilon(1e-5));
}

TEST_CASE("batchnorm backward passes finite differences") {
    Rng rng(5);
    auto g = make_param("g", TensorD::randn({3}, rng, 0.2));
    for (size_t i = 0; i < g->value.size(); ++i) g->value[i] += 1.0;
    auto b = make_param("b", TensorD::randn({3}, rng, 0.2));
    auto x = make_param("x", TensorD::randn({4, 3, 3, 3}, rng));
    BatchNorm2d<double> bn(g, b, "bn");
    TensorD proj = TensorD::randn({4, 3, 3, 3}, rng);
    auto loss = [&] { return dot(bn.forward(x->value, true, nullptr), proj); };
    ActivationTape<double> tape;
    bn.forward(x->value, true, &tape);
    g->zero_grad();
    b->zero_grad();
    x->grad = bn.backward(proj, tape);
    auto rep = gradcheck_params({g, b, x}, loss, 1e-5, 1e-6);
    CHECK(rep.all_pass);
}

TEST_CASE("relu, avgpool, linear pass finite differences") {
    Rng rng(6);
    SUBCASE("relu") {
        auto x = make_param("x", TensorD::randn({2, 3, 4, 4}, rng));
        ReLU<double> relu;
        TensorD proj = TensorD::randn(x->value.shape(), rng);
        auto loss = [&] { return dot(relu.forward(x->value, nullptr), proj); };
        ActivationTape<double> tape;
        relu.forward(x->value, &tape);
        x->grad = relu.backward(proj, tape);
        CHECK(gradcheck_params({x}, loss, 1e-6, 1e-6).all_pass);
    }
    SUBCASE("global avgpool") {
        auto x = make_param("x", TensorD::randn({2, 3, 4, 4}, rng));
        GlobalAvgPool<double> pool;
        TensorD proj = TensorD::randn({2, 3}, rng);
        auto loss = [&] { return dot(pool.forward(x->value, nullptr), proj); };
        pool.forward(x->value, nullptr);
        x->grad = pool.backward(proj);
        CHECK(gradcheck_params({x}, loss, 1e-5, 1e-6).all_pass);
    }
    SUBCASE("linear") {
        auto w = make_param("w", TensorD::randn({4, 6}, rng));
        auto b = make_param("b", TensorD::randn({4}, rng));
        auto x = make_param("x", TensorD::randn({3, 6}, rng));
        Linear<double> lin(w, b);
        TensorD proj = TensorD::randn({3, 4}, rng);
        auto loss = [&] { return dot(lin.forward(x->value, nullptr), proj); };
        ActivationTape<double> tape;
        lin.forward(x->value, &tape);
        w->zero_grad();
        b->zero_grad();
        x->grad = lin.backward(proj, tape);
        CHECK(gradcheck_params({w, b, x}, loss, 1e-5, 1e-8).all_pass);
    }
}

TEST_CASE("softmax_xent of uniform logits is ln C") {
    for (int c : {2, 10, 37}) {
        SoftmaxXent<double> head;
        TensorD logits = TensorD::full({3, c}, 0.42);
        const double loss = head.forward(logits, {0, c / 2, c - 1});
        CHECK(loss == doctest::Approx(std::log(static_cast<double>(c))).epsilon(1e-12));
    }
}

TEST_CASE("softmax_xent gradient rows sum to zero and pass finite differences") {
    Rng rng(7);
    SoftmaxXent<double> head;
    auto x = make_param("x", TensorD::randn({4, 6}, rng));
    std::vector<int> labels = {1, 0, 5, 3};
    auto loss = [&] { return head.forward(x->value, labels); };
    loss();
    x->grad = head.backward();
    for (int i = 0; i < 4; ++i) {
        double row = 0;
        for (int j = 0; j < 6; ++j) row += x->grad.at(i, j);
        CHECK(std::abs(row) < 1e-14);
    }
    CHECK(gradcheck_params({x}, loss, 1e-6, 1e-7).all_pass);
}

TEST_CASE("residual_add is elementwise and rejects shape mismatch") {
    Rng rng(8);
    TensorD a = TensorD::randn({2, 3, 2, 2}, rng);
    TensorD b = TensorD::randn({2, 3, 2, 2}, rng);
    TensorD y = residual_add(a, b);
    for (size_t i = 0; i < y.size(); ++i) CHECK(y[i] == a[i] + b[i]);
    CHECK_THROWS_AS(residual_add(a, TensorD({2, 3, 2, 3})), DimensionError);
}

TEST_CASE("batchnorm running stats converge and drive eval mode") {
    Rng rng(9);
    auto g = make_param("g", TensorD::full({2}, 1.0));
    auto b = make_param("b", TensorD({2}));
    BatchNorm2d<double> bn(g, b, "bn");
    TensorD x = TensorD::randn({8, 2, 4, 4}, rng, 2.0);
    for (size_t i = 0; i < x.size(); ++i) x[i] += 3.0;
    for (int it = 0; it < 200; ++it) bn.forward(x, true, nullptr);
    TensorD y = bn.forward(x, false, nullptr);
    double mean = 0;
    for (size_t i = 0; i < y.size(); ++i) mean += y[i];
    mean /= y.size();
    CHECK(std::abs(mean) < 1e-3);
    CHECK(bn.running_var()[0] > 0.0);
}

TEST_CASE("tape misuse is an internal error") {
    ActivationTape<double> tape;
    tape.push("relu", TensorD({1}));
    CHECK_THROWS_AS(tape.pop("conv2d"), InternalError);
    tape.clear();
    CHECK_THROWS_AS(tape.pop("relu"), InternalError);
}

TEST_CASE("pointwise conv backward equals the explicit matmul adjoints") {
    // the 1x1 stride-1 path is a dedicated kernel; check it against the
    // closed-form adjoints dW = gy·xᵀ and dx = Wᵀ·gy per pixel
    Rng rng(31);
    auto w = make_param("w", TensorD::randn({5, 3, 1, 1}, rng));
    auto x = make_param("x", TensorD::randn({2, 3, 4, 4}, rng));
    Conv2d<double> conv(w, 1, 0);
    ActivationTape<double> tape;
    TensorD y = conv.forward(x->value, &tape);
    TensorD gy = TensorD::randn(y.shape(), rng);
    w->zero_grad();
    TensorD gx = conv.backward(gy, tape);

    const int hw = 16;
    TensorD wmat = w->value.reshaped({5, 3});
    for (int s = 0; s < 2; ++s) {
        TensorD xs({3, hw}), gys({5, hw});
        std::copy_n(x->value.data() + static_cast<size_t>(s) * 3 * hw, 3 * hw, xs.data());
        std::copy_n(gy.data() + static_cast<size_t>(s) * 5 * hw, 5 * hw, gys.data());
        TensorD gx_want = matmul(transposed(wmat), gys); // [3, hw]
        for (size_t i = 0; i < gx_want.size(); ++i)
            CHECK(gx[static_cast<size_t>(s) * 3 * hw + i] ==
                  doctest::Approx(gx_want[i]).epsilon(1e-12));
    }
    // dW accumulated over both samples
    TensorD gw_want({5, 3});
    for (int s = 0; s < 2; ++s)
        for (int t = 0; t < 5; ++t)
            for (int c = 0; c < 3; ++c) {
                double acc = 0;
                for (int p = 0; p < hw; ++p)
                    acc += gy[static_cast<size_t>((s * 5 + t) * hw + p)] *
                           x->value[static_cast<size_t>((s * 3 + c) * hw + p)];
                gw_want.at(t, c) += acc;
            }
    for (size_t i = 0; i < gw_want.size(); ++i)
        CHECK(w->grad[i] == doctest::Approx(gw_want[i]).epsilon(1e-10));
}
