#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mangares/nn/autograd.hpp"
#include "mangares/util/rng.hpp"

namespace mr::nn {

// Ordered named parameter registry; checkpoint files serialize it in
// registration order and look entries up by name.
template <typename T>
struct ParamStore {
    std::vector<std::pair<std::string, NodePtr<T>>> items;

    NodePtr<T> add(const std::string& name, Tensor<T> init) {
        for (const auto& [n, _] : items)
            if (n == name) throw std::logic_error("duplicate parameter name: " + name);
        auto node = make_leaf(std::move(init), true);
        items.emplace_back(name, node);
        return node;
    }

    NodePtr<T> find(const std::string& name) const {
        for (const auto& [n, p] : items)
            if (n == name) return p;
        throw std::out_of_range("no parameter named " + name);
    }

    void zero_grad() {
        for (auto& [_, p] : items) {
            p->ensure_grad();
            p->grad.fill(T(0));
        }
    }

    size_t total_count() const {
        size_t c = 0;
        for (const auto& [_, p] : items) c += p->value.size();
        return c;
    }
};

// Variance-scaled init matched to the LeakyReLU(0.1) nonlinearity.
template <typename T>
Tensor<T> he_normal(Rng& rng, std::vector<int> shape, int fan_in, double slope = 0.1) {
    const double sd = std::sqrt(2.0 / ((1.0 + slope * slope) * fan_in));
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data) v = static_cast<T>(rng.normal(0.0, sd));
    return t;
}

template <typename T>
struct Conv2dLayer {
    NodePtr<T> w, b;
    int stride = 1, pad = 0;

    Conv2dLayer() = default;
    Conv2dLayer(ParamStore<T>& ps, Rng& rng, const std::string& name, int ci, int co,
                int k, int stride_, int pad_, bool bias = true)
        : stride(stride_), pad(pad_) {
        w = ps.add(name + ".w", he_normal<T>(rng, {co, ci, k, k}, ci * k * k));
        if (bias) b = ps.add(name + ".b", Tensor<T>({co}));
    }

    NodePtr<T> operator()(const NodePtr<T>& x) const { return conv2d(x, w, b, stride, pad); }
};

template <typename T>
struct LinearLayer {
    NodePtr<T> w, b;

    LinearLayer() = default;
    LinearLayer(ParamStore<T>& ps, Rng& rng, const std::string& name, int in, int out)
        : w(ps.add(name + ".w", he_normal<T>(rng, {out, in}, in))),
          b(ps.add(name + ".b", Tensor<T>({out}))) {}

    NodePtr<T> operator()(const NodePtr<T>& x) const { return linear(x, w, b); }
};

// Channel attention then spatial attention. The spatial map of the last
// evaluation is exposed so scale voting can read attention mass.
template <typename T>
struct Cbam {
    LinearLayer<T> fc1, fc2;  // shared MLP for avg- and max-pooled vectors
    Conv2dLayer<T> spatial;   // 7x7 conv on [mean;max] channel maps

    Cbam() = default;
    Cbam(ParamStore<T>& ps, Rng& rng, const std::string& name, int channels, int reduction) {
        const int hidden = std::max(channels / reduction, 4);
        fc1 = LinearLayer<T>(ps, rng, name + ".fc1", channels, hidden);
        fc2 = LinearLayer<T>(ps, rng, name + ".fc2", hidden, channels);
        spatial = Conv2dLayer<T>(ps, rng, name + ".sp", 2, 1, 7, 1, 3);
    }

    struct Out {
        NodePtr<T> feat;
        NodePtr<T> spatial_att;  // [N,1,H,W]
    };

    Out operator()(const NodePtr<T>& x) const {
        auto mlp = [&](const NodePtr<T>& v) { return fc2(leaky_relu(fc1(v))); };
        auto cw = sigmoid(add(mlp(gap(x)), mlp(gmp(x))));
        auto xc = mul_channel(cw, x);
        auto att = sigmoid(spatial(concat_ch<T>({chan_mean(xc), chan_max(xc)})));
        return {mul_mask(att, xc), att};
    }
};

// Residual attention block: identity + trunk gated by a sigmoid mask branch.
// The mask activations ("attention features") feed the confidence head.
template <typename T>
struct RamBlock {
    Conv2dLayer<T> t1, t2, m1, m2;

    RamBlock() = default;
    RamBlock(ParamStore<T>& ps, Rng& rng, const std::string& name, int channels) {
        t1 = Conv2dLayer<T>(ps, rng, name + ".t1", channels, channels, 3, 1, 1);
        t2 = Conv2dLayer<T>(ps, rng, name + ".t2", channels, channels, 3, 1, 1);
        m1 = Conv2dLayer<T>(ps, rng, name + ".m1", channels, channels, 3, 1, 1);
        m2 = Conv2dLayer<T>(ps, rng, name + ".m2", channels, channels, 3, 1, 1);
    }

    struct Out {
        NodePtr<T> feat;
        NodePtr<T> attention;  // [N,C,H,W] sigmoid mask activations
    };

    Out operator()(const NodePtr<T>& x) const {
        auto trunk = t2(leaky_relu(t1(x)));
        auto att = sigmoid(m2(leaky_relu(m1(x))));
        return {add(x, mul(trunk, att)), att};
    }
};

}  // namespace mr::nn
