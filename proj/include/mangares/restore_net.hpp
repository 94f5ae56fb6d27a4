#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mangares/embedding.hpp"
#include "mangares/image.hpp"
#include "mangares/nn/adam.hpp"
#include "mangares/nn/image_bridge.hpp"
#include "mangares/nn/layers.hpp"
#include "mangares/util/rng.hpp"

namespace mr {

// MR-Net: scale-conditioned feature extraction, residual-attention blocks, a
// confidence head off the first block's attention features, gated noise
// injection for pattern-agnostic regions, convex-interpolation upsampling,
// sigmoid output head.
struct MRNetConfig {
    int base_channels = 64;
    int n_ram_blocks = 2;
    int noise_channels = 4;
    int upsample_k = 9;  // 3x3 neighborhood
    double s_max = 4.0;

    void validate() const;
    nlohmann::json to_json() const;
    static MRNetConfig from_json(const nlohmann::json& j);
};

// Per-pixel weight at input resolution; 1 = pattern-identifiable
// (reconstruct), 0 = pattern-agnostic (synthesize).
using ConfidenceMap = Image;

struct RestorationOutput {
    Image restored;
    ConfidenceMap confidence;
    double effective_scale = 1.0;
};

// Output raster side for a given scale (round half up).
inline int scaled_side(int side, double s) {
    return static_cast<int>(std::floor(side * s + 0.5));
}

// Eq. 6-10 numeric losses; the training graph mirrors these forms and the
// gradient suite checks it against finite differences of these.
double pixel_loss(const Image& i_y, const Image& i_gt, const ConfidenceMap& m_c);
double confidence_loss(const ConfidenceMap& m_c);
double binarization_loss(const Image& i_y);
double intensity_loss(const Image& i_y, const Image& reference);
double homogeneity_loss(const Image& i_y, const LabelMap& superpixels,
                        const ScreenEmbedder& emb);

struct MrLossWeights {
    double phi = 0.5;     // confidence
    double omega = 0.5;   // binarization
    double kappa = 0.5;   // intensity
    double gamma = 0.02;  // homogeneity
};

// Supervised: L_pix + phi*L_conf + omega*L_bin + kappa*L_itn + gamma*L_hom.
// Unsupervised (no gt/superpixels): phi*L_conf + omega*L_bin + kappa*L_itn.
double mr_total_loss(const Image& i_y, const std::optional<Image>& i_gt,
                     const ConfidenceMap& m_c, const Image& intensity_ref,
                     const LabelMap* superpixels, const ScreenEmbedder* emb,
                     const MrLossWeights& w = {});

template <typename T>
struct RestoreNet {
    MRNetConfig cfg;
    nn::ParamStore<T> params;
    nn::Conv2dLayer<T> head;       // img + scale channel -> C
    nn::RamBlock<T> ram_pre;
    nn::Conv2dLayer<T> conf_head;  // 1x1 on attention features -> 1
    nn::Conv2dLayer<T> fuse;       // C + noise -> C
    std::vector<nn::RamBlock<T>> ram_post;
    nn::Conv2dLayer<T> logit1, logit2;  // C -> C -> 9
    nn::Conv2dLayer<T> out1, out2;      // target-res head

    RestoreNet(const MRNetConfig& config, std::uint64_t init_seed) : cfg(config) {
        cfg.validate();
        Rng rng(Rng::mix(init_seed, 0x3e57ULL));
        const int c = cfg.base_channels;
        head = nn::Conv2dLayer<T>(params, rng, "mr.head", 2, c, 3, 1, 1);
        ram_pre = nn::RamBlock<T>(params, rng, "mr.ram0", c);
        conf_head = nn::Conv2dLayer<T>(params, rng, "mr.conf", c, 1, 1, 1, 0);
        fuse = nn::Conv2dLayer<T>(params, rng, "mr.fuse", c + cfg.noise_channels, c, 3, 1, 1);
        for (int i = 1; i < cfg.n_ram_blocks; ++i)
            ram_post.emplace_back(params, rng, "mr.ram" + std::to_string(i), c);
        logit1 = nn::Conv2dLayer<T>(params, rng, "mr.logit1", c, c, 3, 1, 1);
        logit2 = nn::Conv2dLayer<T>(params, rng, "mr.logit2", c, 9, 3, 1, 1);
        const int oc = std::max(8, c / 2);
        out1 = nn::Conv2dLayer<T>(params, rng, "mr.out1", c, oc, 3, 1, 1);
        out2 = nn::Conv2dLayer<T>(params, rng, "mr.out2", oc, 1, 3, 1, 1);
    }

    struct Forward {
        nn::NodePtr<T> restored;    // [N,1,Ht,Wt] in (0,1)
        nn::NodePtr<T> confidence;  // [N,1,H,W] in (0,1)
        double effective_scale = 1.0;
    };

    struct ForwardOptions {
        // Overrides the learned confidence with a constant (tests force 1 to
        // verify seed independence).
        std::optional<double> force_confidence;
    };

    Forward forward(const nn::NodePtr<T>& img, double s, std::uint64_t noise_seed,
                    const ForwardOptions& opts = {}) const {
        const auto& sh = img->value.shape;
        if (sh.size() != 4 || sh[1] != 1)
            throw std::invalid_argument("mr_forward: [N,1,H,W] input expected");
        if (s < 1.0 || s > cfg.s_max)
            throw std::invalid_argument("mr_forward: scale out of [1, s_max]");
        const int N = sh[0], H = sh[2], W = sh[3];
        if (H < 16 || W < 16) throw std::invalid_argument("mr_forward: image under 16x16");
        const int Ht = scaled_side(H, s), Wt = scaled_side(W, s);

        nn::Tensor<T> sc({N, 1, H, W}, static_cast<T>(s / cfg.s_max));
        auto x = leaky_relu(head(nn::concat_ch<T>({img, nn::make_const(std::move(sc))})));
        auto pre = ram_pre(x);

        nn::NodePtr<T> conf;
        if (opts.force_confidence) {
            conf = nn::make_const(
                nn::Tensor<T>({N, 1, H, W}, static_cast<T>(*opts.force_confidence)));
        } else {
            conf = sigmoid(conf_head(pre.attention));
        }

        nn::Tensor<T> z({N, cfg.noise_channels, H, W});
        Rng zrng(Rng::mix(noise_seed, 0x201e5eedULL));
        for (auto& v : z.data) v = static_cast<T>(zrng.normal());
        auto gated = nn::mul_mask(affine(conf, T(-1), T(1)), nn::make_const(std::move(z)));
        auto feat = leaky_relu(fuse(nn::concat_ch<T>({pre.feat, gated})));
        for (const auto& ram : ram_post) feat = ram(feat).feat;

        auto logits = logit2(leaky_relu(logit1(feat)));
        auto up = nn::convex_upsample_op(feat, logits, Ht, Wt);
        auto restored = sigmoid(out2(leaky_relu(out1(up))));
        return {restored, conf, static_cast<double>(Ht) / H};
    }
};

template <typename T>
RestorationOutput mr_forward(const RestoreNet<T>& net, const Image& img, double s,
                             std::uint64_t noise_seed,
                             const typename RestoreNet<T>::ForwardOptions& opts = {}) {
    if (img.channels != 1) throw std::invalid_argument("mr_forward: single-channel input expected");
    nn::NoGrad ng;
    auto out = net.forward(nn::make_const(nn::from_image<T>(img)), s, noise_seed, opts);
    RestorationOutput r;
    r.restored = nn::to_image(out.restored->value);
    r.confidence = nn::to_image(out.confidence->value);
    r.effective_scale = out.effective_scale;
    return r;
}

}  // namespace mr
