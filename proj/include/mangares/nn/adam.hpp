#pragma once

#include <cmath>
#include <vector>

#include "mangares/nn/layers.hpp"

namespace mr::nn {

// Adam with bias correction. Moments are kept in double regardless of the
// parameter type so float training stays numerically stable and checkpoints
// resume exactly.
template <typename T>
struct Adam {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long t = 0;
    std::vector<std::vector<double>> m, v;

    Adam() = default;
    Adam(const ParamStore<T>& ps, double lr_, double b1 = 0.9, double b2 = 0.999)
        : lr(lr_), beta1(b1), beta2(b2) {
        for (const auto& [_, p] : ps.items) {
            m.emplace_back(p->value.size(), 0.0);
            v.emplace_back(p->value.size(), 0.0);
        }
    }

    void step(ParamStore<T>& ps) {
        ++t;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (size_t pi = 0; pi < ps.items.size(); ++pi) {
            auto& p = *ps.items[pi].second;
            p.ensure_grad();
            auto& mp = m[pi];
            auto& vp = v[pi];
            for (size_t i = 0; i < p.value.size(); ++i) {
                const double g = static_cast<double>(p.grad.data[i]);
                mp[i] = beta1 * mp[i] + (1.0 - beta1) * g;
                vp[i] = beta2 * vp[i] + (1.0 - beta2) * g * g;
                const double update = lr * (mp[i] / c1) / (std::sqrt(vp[i] / c2) + eps);
                p.value.data[i] = static_cast<T>(static_cast<double>(p.value.data[i]) - update);
            }
        }
    }
};

}  // namespace mr::nn
