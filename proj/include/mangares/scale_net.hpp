#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mangares/image.hpp"
#include "mangares/nn/adam.hpp"
#include "mangares/nn/image_bridge.hpp"
#include "mangares/nn/layers.hpp"
#include "mangares/util/rng.hpp"

namespace mr {

// SE-Net: cascaded stride-2 downsample modules, each followed by CBAM, then
// global average pooling and a fully-connected head whose sigmoid output is
// mapped into [s_min, s_max].
struct SENetConfig {
    int n_downsample = 4;
    int base_channels = 32;
    int cbam_reduction = 8;
    double s_min = 1.0;
    double s_max = 4.0;

    void validate() const;
    nlohmann::json to_json() const;
    static SENetConfig from_json(const nlohmann::json& j);
};

struct ScaleEstimate {
    struct Patch {
        int y = 0, x = 0;
        double scale = 0.0;
        double confidence = 0.0;
    };
    double scale = 0.0;
    std::vector<Patch> per_patch;
};

// Eq. 2-4 losses on plain scalars (the training graph mirrors these; the
// gradient suite checks the graph against finite differences of this form).
double scale_loss(double s_y, double s_gt);
double consistency_loss(const std::vector<double>& patch_scales);
double se_total_loss(double s_y, std::optional<double> s_gt,
                     const std::vector<double>& patch_scales);

template <typename T>
struct ScaleNet {
    SENetConfig cfg;
    nn::ParamStore<T> params;
    std::vector<nn::Conv2dLayer<T>> down;
    std::vector<nn::Cbam<T>> cbam;
    nn::LinearLayer<T> head;

    ScaleNet(const SENetConfig& config, std::uint64_t init_seed) : cfg(config) {
        cfg.validate();
        Rng rng(Rng::mix(init_seed, 0x5e9e7ULL));
        int ci = 1;
        for (int i = 0; i < cfg.n_downsample; ++i) {
            const int co = cfg.base_channels * std::min(1 << i, 4);
            const std::string name = "se.down" + std::to_string(i);
            down.emplace_back(params, rng, name, ci, co, 3, 2, 1);
            cbam.emplace_back(params, rng, name + ".cbam", co, cfg.cbam_reduction);
            ci = co;
        }
        head = nn::LinearLayer<T>(params, rng, "se.head", ci, 1);
    }

    struct Forward {
        nn::NodePtr<T> scale;        // [N,1] in [s_min, s_max]
        nn::NodePtr<T> spatial_att;  // last CBAM spatial map [N,1,h,w]
    };

    Forward forward(const nn::NodePtr<T>& img) const {
        const auto& s = img->value.shape;
        const int min_side = 1 << cfg.n_downsample;
        if (s[2] < min_side || s[3] < min_side)
            throw std::invalid_argument("se_forward: image smaller than " +
                                        std::to_string(min_side) + " per side");
        nn::NodePtr<T> x = img;
        nn::NodePtr<T> att;
        for (int i = 0; i < cfg.n_downsample; ++i) {
            x = leaky_relu(down[static_cast<size_t>(i)](x));
            auto out = cbam[static_cast<size_t>(i)](x);
            x = out.feat;
            att = out.spatial_att;
        }
        auto logit = head(gap(x));
        auto scale = affine(sigmoid(logit), static_cast<T>(cfg.s_max - cfg.s_min),
                            static_cast<T>(cfg.s_min));
        return {scale, att};
    }
};

template <typename T>
double se_forward(const ScaleNet<T>& net, const Image& img) {
    if (img.channels != 1) throw std::invalid_argument("se_forward: single-channel input expected");
    nn::NoGrad ng;
    auto out = net.forward(nn::make_const(nn::from_image<T>(img)));
    return static_cast<double>(out.scale->value.data[0]);
}

// Deterministic patch grid with seeded jitter; per-patch confidence is the
// spatial mean of the final CBAM attention map. Falls back to the median
// when confidences are indistinguishable.
template <typename T>
ScaleEstimate estimate_scale_voted(const ScaleNet<T>& net, const Image& img, int m,
                                   int patch_size) {
    if (img.height < patch_size || img.width < patch_size)
        throw std::invalid_argument("estimate_scale_voted: image smaller than patch size");
    if (m < 1) throw std::invalid_argument("estimate_scale_voted: need at least one patch");

    Rng rng(Rng::mix(0x70a7c4e5ULL, static_cast<std::uint64_t>(m)));
    const int grid = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(m))));
    ScaleEstimate est;
    nn::NoGrad ng;
    for (int i = 0; i < m; ++i) {
        const int gy = i / grid, gx = i % grid;
        const int span_y = std::max(1, (img.height - patch_size) / grid + 1);
        const int span_x = std::max(1, (img.width - patch_size) / grid + 1);
        int y0 = gy * (img.height - patch_size) / std::max(1, grid - 1);
        int x0 = gx * (img.width - patch_size) / std::max(1, grid - 1);
        if (grid == 1) {
            y0 = (img.height - patch_size) / 2;
            x0 = (img.width - patch_size) / 2;
        }
        y0 = std::clamp(y0 + static_cast<int>(rng.uniform_int(0, span_y - 1)) - span_y / 2, 0,
                        img.height - patch_size);
        x0 = std::clamp(x0 + static_cast<int>(rng.uniform_int(0, span_x - 1)) - span_x / 2, 0,
                        img.width - patch_size);

        Image patch(patch_size, patch_size, 1);
        for (int y = 0; y < patch_size; ++y)
            for (int x = 0; x < patch_size; ++x) patch.at(y, x) = img.at(y0 + y, x0 + x);

        auto out = net.forward(nn::make_const(nn::from_image<T>(patch)));
        double conf = 0.0;
        for (const auto v : out.spatial_att->value.data) conf += static_cast<double>(v);
        conf /= static_cast<double>(out.spatial_att->value.size());
        est.per_patch.push_back(
            {y0, x0, static_cast<double>(out.scale->value.data[0]), conf});
    }

    double cmin = est.per_patch[0].confidence, cmax = cmin, wsum = 0.0, acc = 0.0;
    for (const auto& p : est.per_patch) {
        cmin = std::min(cmin, p.confidence);
        cmax = std::max(cmax, p.confidence);
        wsum += p.confidence;
        acc += p.confidence * p.scale;
    }
    if (cmax - cmin <= 1e-3 || wsum <= 0.0) {
        std::vector<double> scales;
        for (const auto& p : est.per_patch) scales.push_back(p.scale);
        std::sort(scales.begin(), scales.end());
        const size_t mid = scales.size() / 2;
        est.scale = scales.size() % 2 ? scales[mid] : 0.5 * (scales[mid - 1] + scales[mid]);
    } else {
        est.scale = acc / wsum;
    }
    return est;
}

}  // namespace mr
