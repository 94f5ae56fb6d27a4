#pragma once

#include <optional>
#include <vector>

#include "mangares/embedding.hpp"
#include "mangares/image.hpp"
#include "mangares/nn/autograd.hpp"
#include "mangares/restore_net.hpp"

namespace mr {

// Differentiable loss graphs shared by the trainers and the gradient-check
// suite; the numeric loss functions mirror these term for term.

template <typename T>
struct SeLossGraph {
    nn::NodePtr<T> total, scl, cons;
};

// scales: [M,1] patch predictions from one page. Supervised adds the mean
// absolute deviation from s_gt; lambda weights the consistency term.
template <typename T>
SeLossGraph<T> se_loss_graph(const nn::NodePtr<T>& scales, std::optional<double> s_gt,
                             double lambda) {
    SeLossGraph<T> g;
    auto mean_s = nn::mean_all(scales);
    g.cons = nn::mean_all(nn::abs_elem(nn::sub_bcast(scales, mean_s)));
    g.total = nn::affine(g.cons, static_cast<T>(lambda), T(0));
    if (s_gt) {
        g.scl = nn::mean_all(nn::abs_elem(nn::affine(scales, T(1), static_cast<T>(-*s_gt))));
        g.total = nn::add(g.scl, g.total);
    }
    return g;
}

template <typename T>
struct MrLossGraph {
    nn::NodePtr<T> total;
    nn::NodePtr<T> pix, conf, bin, itn, hom;  // pix/hom null on unsupervised batches

    double value(const nn::NodePtr<T>& n) const {
        return n ? static_cast<double>(n->value.data[0]) : 0.0;
    }
};

// 11-tap Gaussian taps used by the intensity term (matches gaussian_blur's
// normalized kernel for win=11, sigma=11/4).
template <typename T>
nn::Tensor<T> intensity_kernel() {
    constexpr int kWin = 11;
    const double sigma = 11.0 / 4.0;
    double taps[kWin];
    double sum = 0.0;
    for (int i = 0; i < kWin; ++i) {
        const double d = i - (kWin - 1) / 2.0;
        taps[i] = std::exp(-0.5 * d * d / (sigma * sigma));
        sum += taps[i];
    }
    nn::Tensor<T> k({1, 1, kWin, kWin});
    for (int y = 0; y < kWin; ++y)
        for (int x = 0; x < kWin; ++x)
            k.data[static_cast<size_t>(y) * kWin + x] =
                static_cast<T>(taps[y] / sum * (taps[x] / sum));
    return k;
}

// restored: [N,1,Ht,Wt]; conf: [N,1,H,W]; gt: optional [N,1,Ht,Wt] const;
// ref_blur: Gaussian-smoothed intensity reference [N,1,Ht,Wt] const;
// sp_labels: one superpixel raster per sample (supervised only).
template <typename T>
MrLossGraph<T> mr_loss_graph(const nn::NodePtr<T>& restored, const nn::NodePtr<T>& conf,
                             const nn::NodePtr<T>& gt, const nn::NodePtr<T>& ref_blur,
                             const std::vector<std::vector<int>>* sp_labels,
                             const ScreenEmbedder* emb, const MrLossWeights& w) {
    MrLossGraph<T> g;
    const auto& rs = restored->value.shape;

    g.conf = nn::affine(nn::mean_all(conf), T(-1), T(1));
    g.bin = nn::mean_all(
        nn::abs_elem(nn::affine(nn::abs_elem(nn::affine(restored, T(1), T(-0.5))), T(1), T(-0.5))));
    auto gk = nn::make_const(intensity_kernel<T>());
    auto smoothed = nn::conv2d(restored, gk, nn::NodePtr<T>{}, 1, 5);
    g.itn = nn::mean_all(nn::abs_elem(nn::sub(smoothed, ref_blur)));

    g.total = nn::add(nn::add(nn::affine(g.conf, static_cast<T>(w.phi), T(0)),
                              nn::affine(g.bin, static_cast<T>(w.omega), T(0))),
                      nn::affine(g.itn, static_cast<T>(w.kappa), T(0)));
    if (gt) {
        auto conf_up = nn::nearest_up(conf, rs[2], rs[3]);
        g.pix = nn::mean_all(nn::mul_mask(conf_up, nn::abs_elem(nn::sub(restored, gt))));
        g.total = nn::add(g.pix, g.total);
        if (sp_labels && emb && w.gamma != 0.0) {
            g.hom = nn::homogeneity(emb->embed_graph<T>(restored), *sp_labels);
            g.total = nn::add(g.total, nn::affine(g.hom, static_cast<T>(w.gamma), T(0)));
        }
    }
    return g;
}

}  // namespace mr
