#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mangares/image.hpp"
#include "mangares/nn/autograd.hpp"
#include "mangares/nn/image_bridge.hpp"

namespace mr {

// 4-channel per-pixel screentone descriptor: fixed Gabor bank (orientations x
// center frequencies, magnitudes), local average pooling at twice the largest
// screentone period, plus the pooled local mean (tone), projected to 4
// channels by principal components fitted once over the synthetic screentone
// bank and shipped as a JSON asset.

struct EmbeddingConfig {
    int orientations = 8;
    std::vector<double> periods = {3.0, 5.0, 8.0, 12.0};
    double sigma_factor = 0.4;  // Gabor envelope sigma = factor * period
    int max_kernel = 15;        // odd cap on kernel side
    int pool_window = 25;       // ~ 2x max period, odd

    int feature_count() const { return orientations * static_cast<int>(periods.size()) + 1; }
};

// 4-channel smooth screentone descriptor raster.
using ScreenMap = Image;

struct GaborKernel {
    int size = 0;
    std::vector<double> even, odd;  // cosine / sine phase taps, row-major
};

// One kernel pair per (period, orientation), period-major order.
std::vector<GaborKernel> gabor_bank(const EmbeddingConfig& cfg);

class ScreenEmbedder {
public:
    EmbeddingConfig cfg;
    std::vector<double> mean;               // [F]
    std::vector<std::vector<double>> proj;  // [4][F], variance-normalized axes
    double bank_rms = 1.0;                  // scale constant for svae_distance

    // Fit the projection over a rendered screentone bank (deterministic).
    static ScreenEmbedder fit(std::uint64_t seed);
    static ScreenEmbedder load(const std::string& path);
    void save(const std::string& path) const;
    // Asset shipped with the repo (regenerate via `mangares embed-fit`).
    static const ScreenEmbedder& default_instance();

    ScreenMap embed(const Image& img) const;

    // Differentiable mirror of embed(); embed() runs this under NoGrad, so
    // the two can never drift apart.
    template <typename T>
    nn::NodePtr<T> embed_graph(const nn::NodePtr<T>& x) const;

    // Raw pooled filter-bank features [N,F,H,W] before projection; the
    // fitting path consumes these.
    template <typename T>
    nn::NodePtr<T> feature_graph(const nn::NodePtr<T>& x) const;
};

struct SuperpixelPartition {
    LabelMap labels;  // contiguous ids 0..n-1
    int n = 0;
};

// Synthesis labels pass through (nearest-resized, relabeled contiguous);
// otherwise SLIC-style clustering on (embedding, coordinates).
SuperpixelPartition superpixels(const Image& gt, const LabelMap* labels, int target_n);

// Mean per-pixel L2 distance between the two embeddings, normalized by the
// bank scale so magnitudes are comparable across fits.
double svae_distance(const Image& a, const Image& b, const ScreenEmbedder& emb);
double svae_distance(const Image& a, const Image& b);
// Masked variant: mean taken over mask==1 pixels only; throws on empty mask.
double svae_distance(const Image& a, const Image& b, const BitonalMask& mask,
                     const ScreenEmbedder& emb);

// ------------------------------------------------------------- templates --

namespace detail {
template <typename T>
nn::Tensor<T> cast_tensor(const std::vector<double>& src, std::vector<int> shape) {
    nn::Tensor<T> t(std::move(shape));
    if (t.size() != src.size()) throw std::logic_error("cast_tensor: size mismatch");
    for (size_t i = 0; i < src.size(); ++i) t.data[i] = static_cast<T>(src[i]);
    return t;
}
}  // namespace detail

template <typename T>
nn::NodePtr<T> ScreenEmbedder::feature_graph(const nn::NodePtr<T>& x) const {
    const auto bank = gabor_bank(cfg);
    const int per_freq = cfg.orientations;
    std::vector<nn::NodePtr<T>> mags;
    for (size_t fi = 0; fi < cfg.periods.size(); ++fi) {
        const int k = bank[fi * per_freq].size;
        std::vector<double> w;
        w.reserve(static_cast<size_t>(2 * per_freq) * k * k);
        for (int o = 0; o < per_freq; ++o) {
            const auto& g = bank[fi * per_freq + o];
            w.insert(w.end(), g.even.begin(), g.even.end());
            w.insert(w.end(), g.odd.begin(), g.odd.end());
        }
        auto wn = nn::make_const(detail::cast_tensor<T>(w, {2 * per_freq, 1, k, k}));
        auto resp = nn::conv2d<T>(x, wn, nullptr, 1, k / 2);
        for (int o = 0; o < per_freq; ++o) {
            auto re = nn::slice_ch(resp, 2 * o, 2 * o + 1);
            auto im = nn::slice_ch(resp, 2 * o + 1, 2 * o + 2);
            mags.push_back(nn::sqrt_elem(nn::add(nn::mul(re, re), nn::mul(im, im)), T(1e-8)));
        }
    }
    auto pooled = nn::box_blur_n(nn::concat_ch(mags), cfg.pool_window);
    auto tone = nn::box_blur_n(x, cfg.pool_window);
    return nn::concat_ch<T>({pooled, tone});
}

template <typename T>
nn::NodePtr<T> ScreenEmbedder::embed_graph(const nn::NodePtr<T>& x) const {
    const int F = cfg.feature_count();
    if (mean.size() != static_cast<size_t>(F) || proj.size() != 4)
        throw std::logic_error("ScreenEmbedder: projection not fitted/loaded");
    auto feats = feature_graph(x);
    std::vector<double> w;
    std::vector<double> b(4, 0.0);
    for (int c = 0; c < 4; ++c) {
        w.insert(w.end(), proj[static_cast<size_t>(c)].begin(), proj[static_cast<size_t>(c)].end());
        for (int f = 0; f < F; ++f) b[static_cast<size_t>(c)] -= proj[static_cast<size_t>(c)][static_cast<size_t>(f)] * mean[static_cast<size_t>(f)];
    }
    auto wn = nn::make_const(detail::cast_tensor<T>(w, {4, F, 1, 1}));
    auto bn = nn::make_const(detail::cast_tensor<T>(b, {4}));
    return nn::conv2d<T>(feats, wn, bn, 1, 0);
}

}  // namespace mr
