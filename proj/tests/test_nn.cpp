#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <vector>

#include "mangares/nn/adam.hpp"
#include "mangares/nn/autograd.hpp"
#include "mangares/nn/checkpoint.hpp"
#include "mangares/nn/layers.hpp"
#include "mangares/util/rng.hpp"

using namespace mr;
using nn::NodePtr;

namespace {

nn::Tensor<double> randn(Rng& rng, std::vector<int> shape, double sd = 1.0) {
    nn::Tensor<double> t(std::move(shape));
    for (auto& v : t.data) v = rng.normal(0.0, sd);
    return t;
}

// Values bounded away from zero so kinked ops (abs, leaky) stay one-sided
// within the finite-difference step.
nn::Tensor<double> randn_off_zero(Rng& rng, std::vector<int> shape) {
    nn::Tensor<double> t = randn(rng, std::move(shape));
    for (auto& v : t.data)
        if (std::fabs(v) < 0.05) v = v < 0.0 ? v - 0.1 : v + 0.1;
    return t;
}

double rel_err(double a, double b) {
    return std::fabs(a - b) / std::max({1e-6, std::fabs(a), std::fabs(b)});
}

// Worst relative disagreement between reverse-mode and central differences
// over every element of every leaf.
double max_fd_error(const std::vector<NodePtr<double>>& leaves,
                    const std::function<NodePtr<double>()>& build,
                    double step = 1e-5) {
    for (const auto& l : leaves) {
        l->ensure_grad();
        l->grad.fill(0.0);
    }
    nn::backward(build());
    double worst = 0.0;
    for (const auto& l : leaves)
        for (size_t i = 0; i < l->value.size(); ++i) {
            const double keep = l->value.data[i];
            double up, dn;
            {
                nn::NoGrad guard;
                l->value.data[i] = keep + step;
                up = build()->value.data[0];
                l->value.data[i] = keep - step;
                dn = build()->value.data[0];
            }
            l->value.data[i] = keep;
            worst = std::max(worst, rel_err(l->grad.data[i], (up - dn) / (2.0 * step)));
        }
    return worst;
}

}  // namespace

TEST_CASE("elementwise, broadcast, and reduction ops match finite differences") {
    Rng rng(11);
    auto x = nn::make_leaf(randn_off_zero(rng, {2, 3, 4, 4}), true);
    auto y = nn::make_leaf(randn_off_zero(rng, {2, 3, 4, 4}), true);
    auto mask = nn::make_leaf(randn(rng, {2, 1, 4, 4}), true);
    auto s = nn::make_leaf(randn(rng, {2, 3}), true);

    const double tol = 1e-6;
    CHECK(max_fd_error({x}, [&] { return nn::mean_all(nn::sigmoid(x)); }) < tol);
    CHECK(max_fd_error({x}, [&] { return nn::mean_all(nn::abs_elem(x)); }) < tol);
    CHECK(max_fd_error({x}, [&] { return nn::mean_all(nn::leaky_relu(x)); }) < tol);
    CHECK(max_fd_error({x}, [&] {
              return nn::mean_all(nn::sqrt_elem(nn::affine(nn::mul(x, x), 1.0, 0.5)));
          }) < tol);
    CHECK(max_fd_error({x}, [&] { return nn::mean_all(nn::affine(x, 2.5, -0.7)); }) < tol);
    CHECK(max_fd_error({x, y}, [&] {
              return nn::mean_all(nn::mul(nn::add(x, y), nn::sub(x, y)));
          }) < tol);
    CHECK(max_fd_error({x}, [&] {
              return nn::mean_all(nn::abs_elem(nn::sub_bcast(x, nn::mean_all(x))));
          }) < tol);
    CHECK(max_fd_error({mask, x}, [&] {
              return nn::mean_all(nn::mul_mask(mask, x));
          }) < tol);
    CHECK(max_fd_error({s, x}, [&] {
              return nn::mean_all(nn::mul(nn::mul_channel(s, x), x));
          }) < tol);
    CHECK(max_fd_error({x}, [&] { return nn::mean_all(nn::mul(nn::gap(x), nn::gap(x))); }) < tol);
    CHECK(max_fd_error({x}, [&] { return nn::mean_all(nn::gmp(x)); }) < tol);
    CHECK(max_fd_error({x}, [&] {
              return nn::mean_all(nn::mul(nn::chan_mean(x), nn::chan_max(x)));
          }) < tol);
    CHECK(max_fd_error({x, y}, [&] {
              auto cat = nn::concat_ch<double>({x, y});
              return nn::mean_all(nn::mul(nn::slice_ch(cat, 1, 4), nn::slice_ch(cat, 2, 5)));
          }) < tol);
}

TEST_CASE("linear layer matches finite differences") {
    Rng rng(13);
    auto x = nn::make_leaf(randn(rng, {3, 5}), true);
    auto w = nn::make_leaf(randn(rng, {4, 5}), true);
    auto b = nn::make_leaf(randn(rng, {4}), true);
    CHECK(max_fd_error({x, w, b}, [&] {
              return nn::mean_all(nn::sigmoid(nn::linear(x, w, b)));
          }) < 1e-6);
}

TEST_CASE("conv2d matches finite differences across stride and padding") {
    Rng rng(17);
    struct Case {
        int k, stride, pad;
        bool bias;
    };
    for (const Case c : {Case{3, 1, 1, true}, Case{3, 2, 1, false}, Case{5, 1, 2, true}}) {
        auto x = nn::make_leaf(randn(rng, {2, 3, 8, 8}), true);
        auto w = nn::make_leaf(randn(rng, {4, 3, c.k, c.k}, 0.5), true);
        NodePtr<double> b;
        if (c.bias) b = nn::make_leaf(randn(rng, {4}), true);
        std::vector<NodePtr<double>> leaves{x, w};
        if (b) leaves.push_back(b);
        INFO("k=", c.k, " stride=", c.stride, " pad=", c.pad);
        CHECK(max_fd_error(leaves, [&] {
                  return nn::mean_all(nn::sigmoid(nn::conv2d(x, w, b, c.stride, c.pad)));
              }) < 1e-5);
    }
}

TEST_CASE("convex upsampling matches finite differences") {
    Rng rng(19);
    auto feat = nn::make_leaf(randn(rng, {1, 2, 5, 4}), true);
    auto logits = nn::make_leaf(randn(rng, {1, 9, 5, 4}), true);
    CHECK(max_fd_error({feat, logits}, [&] {
              return nn::mean_all(nn::mul(nn::convex_upsample_op(feat, logits, 8, 7),
                                          nn::convex_upsample_op(feat, logits, 8, 7)));
          }) < 1e-5);
}

TEST_CASE("box blur and nearest upsample match finite differences") {
    Rng rng(23);
    auto x = nn::make_leaf(randn(rng, {1, 2, 6, 6}), true);
    CHECK(max_fd_error({x}, [&] {
              auto b = nn::box_blur_n(x, 3);
              return nn::mean_all(nn::mul(b, b));
          }) < 1e-6);
    auto y = nn::make_leaf(randn(rng, {1, 2, 4, 5}), true);
    CHECK(max_fd_error({y}, [&] {
              auto u = nn::nearest_up(y, 7, 9);
              return nn::mean_all(nn::mul(u, u));
          }) < 1e-6);
}

TEST_CASE("homogeneity penalty matches finite differences") {
    Rng rng(29);
    auto x = nn::make_leaf(randn(rng, {2, 4, 6, 6}), true);
    std::vector<std::vector<int>> labels(2, std::vector<int>(36));
    for (int n = 0; n < 2; ++n)
        for (int y = 0; y < 6; ++y)
            for (int x2 = 0; x2 < 6; ++x2)
                labels[n][y * 6 + x2] = (y < 3 ? 0 : 2) + (x2 < 2 ? 0 : 1) + n * 10;
    CHECK(max_fd_error({x}, [&] { return nn::homogeneity(x, labels); }) < 1e-5);
}

TEST_CASE("autograd rejects malformed graphs") {
    auto a = nn::make_leaf(nn::Tensor<double>({2}, 1.0), true);
    auto b = nn::make_leaf(nn::Tensor<double>({3}, 1.0), true);
    CHECK_THROWS_AS((void)nn::add(a, b), std::invalid_argument);
    CHECK_THROWS_AS(nn::backward(nn::add(a, a)), std::logic_error);  // non-scalar root
    CHECK_THROWS_AS((void)nn::Tensor<double>({2, 0}), std::invalid_argument);
}

TEST_CASE("serial and parallel kernels agree bitwise") {
    Rng rng(31);
    const int N = 2, Ci = 3, H = 10, W = 9, Co = 4, K = 3, stride = 2, pad = 1;
    const int Ho = (H + 2 * pad - K) / stride + 1, Wo = (W + 2 * pad - K) / stride + 1;
    auto rand_vec = [&](size_t n) {
        std::vector<float> v(n);
        for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
        return v;
    };

    const auto in = rand_vec(static_cast<size_t>(N) * Ci * H * W);
    const auto w = rand_vec(static_cast<size_t>(Co) * Ci * K * K);
    const auto bias = rand_vec(Co);
    std::vector<float> a(static_cast<size_t>(N) * Co * Ho * Wo), b(a.size());
    nn::kern::conv2d_fwd_serial(in.data(), w.data(), bias.data(), a.data(), N, Ci, H, W, Co,
                                K, stride, pad, Ho, Wo);
    nn::kern::conv2d_fwd_omp(in.data(), w.data(), bias.data(), b.data(), N, Ci, H, W, Co, K,
                             stride, pad, Ho, Wo);
    CHECK(a == b);

    const auto gout = rand_vec(a.size());
    std::vector<float> gin_a(in.size(), 0.0f), gin_b(in.size(), 0.0f);
    nn::kern::conv2d_bwd_input_serial(gout.data(), w.data(), gin_a.data(), N, Ci, H, W, Co, K,
                                      stride, pad, Ho, Wo);
    nn::kern::conv2d_bwd_input_omp(gout.data(), w.data(), gin_b.data(), N, Ci, H, W, Co, K,
                                   stride, pad, Ho, Wo);
    CHECK(gin_a == gin_b);

    std::vector<float> gw_a(w.size(), 0.0f), gw_b(w.size(), 0.0f);
    std::vector<float> gb_a(Co, 0.0f), gb_b(Co, 0.0f);
    nn::kern::conv2d_bwd_weight_serial(gout.data(), in.data(), gw_a.data(), gb_a.data(), N, Ci,
                                       H, W, Co, K, stride, pad, Ho, Wo);
    nn::kern::conv2d_bwd_weight_omp(gout.data(), in.data(), gw_b.data(), gb_b.data(), N, Ci, H,
                                    W, Co, K, stride, pad, Ho, Wo);
    CHECK(gw_a == gw_b);
    CHECK(gb_a == gb_b);

    const int Ht = 9, Wt = 8, C = 3, Hs = 6, Ws = 5;
    const auto feat = rand_vec(static_cast<size_t>(N) * C * Hs * Ws);
    const auto logits = rand_vec(static_cast<size_t>(N) * 9 * Hs * Ws);
    std::vector<float> ua(static_cast<size_t>(N) * C * Ht * Wt), ub(ua.size());
    nn::kern::convex_up_fwd_serial(feat.data(), logits.data(), ua.data(), N, C, Hs, Ws, Ht, Wt);
    nn::kern::convex_up_fwd_omp(feat.data(), logits.data(), ub.data(), N, C, Hs, Ws, Ht, Wt);
    CHECK(ua == ub);

    const auto gu = rand_vec(ua.size());
    std::vector<float> gf_a(feat.size(), 0.0f), gf_b(feat.size(), 0.0f);
    std::vector<float> gl_a(logits.size(), 0.0f), gl_b(logits.size(), 0.0f);
    nn::kern::convex_up_bwd_serial(gu.data(), feat.data(), logits.data(), gf_a.data(),
                                   gl_a.data(), N, C, Hs, Ws, Ht, Wt);
    nn::kern::convex_up_bwd_omp(gu.data(), feat.data(), logits.data(), gf_b.data(), gl_b.data(),
                                N, C, Hs, Ws, Ht, Wt);
    CHECK(gf_a == gf_b);
    CHECK(gl_a == gl_b);
}

TEST_CASE("convex weights form a convex combination; one-hot reduces to nearest") {
    Rng rng(37);
    const int H = 6, W = 5;
    std::vector<double> logits(9 * H * W);
    for (auto& v : logits) v = rng.uniform(-3.0, 3.0);
    for (int trial = 0; trial < 50; ++trial) {
        const double sy = rng.uniform(0.0, H - 1.0), sx = rng.uniform(0.0, W - 1.0);
        double alpha[9];
        nn::kern::convex_weights(logits.data(), H, W, 0, sy, sx, alpha);
        double sum = 0.0;
        for (const double a : alpha) {
            CHECK(a >= 0.0);
            sum += a;
        }
        CHECK(std::fabs(sum - 1.0) < 1e-6);
    }

    // Saturated center logit: the blend collapses to the nearest-neighbor map.
    auto feat = nn::make_const(randn(rng, {1, 2, 4, 4}));
    nn::Tensor<double> hot({1, 9, 4, 4}, 0.0);
    for (size_t i = 0; i < 16; ++i) hot.data[4 * 16 + i] = 800.0;
    auto up = nn::convex_upsample_op(feat, nn::make_const(std::move(hot)), 9, 7);
    auto near = nn::nearest_up(feat, 9, 7);
    CHECK(up->value.data == near->value.data);
}

TEST_CASE("checkpoints round-trip parameters, optimizer state, and resume exactly") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "mr_ckpt_test.bin").string();

    Rng rng(41);
    nn::ParamStore<float> psA;
    nn::Conv2dLayer<float> convA(psA, rng, "c", 1, 2, 3, 1, 1);
    auto x = nn::make_const(nn::Tensor<float>({1, 1, 6, 6}));
    auto t = nn::make_const(nn::Tensor<float>({1, 2, 6, 6}));
    Rng drng(43);
    for (auto& v : x->value.data) v = static_cast<float>(drng.uniform(0.0, 1.0));
    for (auto& v : t->value.data) v = static_cast<float>(drng.uniform(0.0, 1.0));
    auto loss_of = [&](const nn::Conv2dLayer<float>& cv) {
        auto d = nn::sub(cv(x), t);
        return nn::mean_all(nn::mul(d, d));
    };

    nn::Adam<float> optA(psA, 1e-2);
    for (int i = 0; i < 3; ++i) {
        psA.zero_grad();
        nn::backward(loss_of(convA));
        optA.step(psA);
    }
    nn::save_checkpoint(path, "toy", nlohmann::json{{"note", 1}}, psA, &optA, 3);
    for (int i = 0; i < 3; ++i) {
        psA.zero_grad();
        nn::backward(loss_of(convA));
        optA.step(psA);
    }

    const auto peeked = nn::peek_checkpoint(path);
    CHECK(peeked.kind == "toy");
    CHECK(peeked.iteration == 3);
    CHECK(peeked.has_optimizer);

    Rng rng2(99);
    nn::ParamStore<float> psB;
    nn::Conv2dLayer<float> convB(psB, rng2, "c", 1, 2, 3, 1, 1);
    nn::Adam<float> optB(psB, 1.0);
    const auto header = nn::load_checkpoint(path, psB, &optB);
    CHECK(header.iteration == 3);
    CHECK(optB.t == 3);
    CHECK(optB.lr == 1e-2);
    for (int i = 0; i < 3; ++i) {
        psB.zero_grad();
        nn::backward(loss_of(convB));
        optB.step(psB);
    }
    REQUIRE(psA.items.size() == psB.items.size());
    for (size_t i = 0; i < psA.items.size(); ++i)
        CHECK(psA.items[i].second->value.data == psB.items[i].second->value.data);

    // Mismatched stores are rejected rather than silently misloaded.
    Rng rng3(7);
    nn::ParamStore<float> psC;
    nn::Conv2dLayer<float> convC(psC, rng3, "other", 1, 2, 3, 1, 1);
    CHECK_THROWS_AS((void)nn::load_checkpoint(path, psC), std::runtime_error);
    fs::remove(path);
}
