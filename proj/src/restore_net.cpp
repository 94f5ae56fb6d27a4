#include "mangares/restore_net.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_map>

#include "mangares/nn/kernels.hpp"

namespace mr {

void MRNetConfig::validate() const {
    if (base_channels < 4) throw std::invalid_argument("MRNetConfig: base_channels too small");
    if (n_ram_blocks < 2) throw std::invalid_argument("MRNetConfig: need at least 2 RAM blocks");
    if (noise_channels < 1) throw std::invalid_argument("MRNetConfig: noise_channels must be >= 1");
    if (upsample_k != 9)
        throw std::invalid_argument("MRNetConfig: only the 3x3 (K=9) neighborhood is supported");
    if (s_max <= 1.0) throw std::invalid_argument("MRNetConfig: s_max must exceed 1");
}

nlohmann::json MRNetConfig::to_json() const {
    return {{"base_channels", base_channels},
            {"n_ram_blocks", n_ram_blocks},
            {"noise_channels", noise_channels},
            {"upsample_k", upsample_k},
            {"s_max", s_max}};
}

MRNetConfig MRNetConfig::from_json(const nlohmann::json& j) {
    MRNetConfig c;
    c.base_channels = j.value("base_channels", c.base_channels);
    c.n_ram_blocks = j.value("n_ram_blocks", c.n_ram_blocks);
    c.noise_channels = j.value("noise_channels", c.noise_channels);
    c.upsample_k = j.value("upsample_k", c.upsample_k);
    c.s_max = j.value("s_max", c.s_max);
    c.validate();
    return c;
}

double pixel_loss(const Image& i_y, const Image& i_gt, const ConfidenceMap& m_c) {
    if (!i_y.same_shape(i_gt)) throw std::invalid_argument("pixel_loss: shape mismatch");
    // Confidence lives at input resolution; bring it up with the same nearest
    // operator the training graph uses.
    Image m = m_c;
    if (m.height != i_y.height || m.width != i_y.width) {
        Image up(i_y.height, i_y.width, 1);
        nn::kern::nearest_up_fwd(m.data.data(), up.data.data(), 1, 1, m.height, m.width,
                                 i_y.height, i_y.width);
        m = std::move(up);
    }
    double acc = 0.0;
    for (size_t i = 0; i < i_y.data.size(); ++i)
        acc += m.data[i] * std::fabs(i_y.data[i] - i_gt.data[i]);
    return acc / static_cast<double>(i_y.data.size());
}

double confidence_loss(const ConfidenceMap& m_c) {
    return 1.0 - m_c.mean();
}

double binarization_loss(const Image& i_y) {
    double acc = 0.0;
    for (const double v : i_y.data) acc += std::fabs(std::fabs(v - 0.5) - 0.5);
    return acc / static_cast<double>(i_y.data.size());
}

double intensity_loss(const Image& i_y, const Image& reference) {
    if (!i_y.same_shape(reference)) throw std::invalid_argument("intensity_loss: shape mismatch");
    const Image ga = gaussian_blur(i_y, 11, 11.0 / 4.0);
    const Image gb = gaussian_blur(reference, 11, 11.0 / 4.0);
    double acc = 0.0;
    for (size_t i = 0; i < ga.data.size(); ++i) acc += std::fabs(ga.data[i] - gb.data[i]);
    return acc / static_cast<double>(ga.data.size());
}

double homogeneity_loss(const Image& i_y, const LabelMap& superpixels,
                        const ScreenEmbedder& emb) {
    if (superpixels.height != i_y.height || superpixels.width != i_y.width)
        throw std::invalid_argument("homogeneity_loss: partition size mismatch");
    const ScreenMap phi = emb.embed(i_y);
    const size_t hw = static_cast<size_t>(i_y.height) * i_y.width;

    std::unordered_map<int, int> slot;
    std::vector<size_t> count;
    for (size_t i = 0; i < hw; ++i) {
        auto [it, fresh] = slot.try_emplace(superpixels.data[i], static_cast<int>(count.size()));
        if (fresh) count.push_back(0);
        ++count[static_cast<size_t>(it->second)];
    }
    const int ns = static_cast<int>(count.size());
    std::vector<double> mean(static_cast<size_t>(ns) * 4, 0.0);
    for (size_t i = 0; i < hw; ++i) {
        const int sl = slot.at(superpixels.data[i]);
        for (int c = 0; c < 4; ++c)
            mean[static_cast<size_t>(sl) * 4 + c] += phi.data[static_cast<size_t>(c) * hw + i];
    }
    for (int sl = 0; sl < ns; ++sl)
        for (int c = 0; c < 4; ++c) mean[static_cast<size_t>(sl) * 4 + c] /= static_cast<double>(count[static_cast<size_t>(sl)]);
    std::vector<double> sq(static_cast<size_t>(ns), 0.0);
    for (size_t i = 0; i < hw; ++i) {
        const int sl = slot.at(superpixels.data[i]);
        for (int c = 0; c < 4; ++c) {
            const double d = phi.data[static_cast<size_t>(c) * hw + i] - mean[static_cast<size_t>(sl) * 4 + c];
            sq[static_cast<size_t>(sl)] += d * d;
        }
    }
    double acc = 0.0;
    for (int sl = 0; sl < ns; ++sl)
        acc += std::sqrt(sq[static_cast<size_t>(sl)] / static_cast<double>(count[static_cast<size_t>(sl)]) + 1e-12);
    return acc / static_cast<double>(ns);
}

double mr_total_loss(const Image& i_y, const std::optional<Image>& i_gt,
                     const ConfidenceMap& m_c, const Image& intensity_ref,
                     const LabelMap* superpixels, const ScreenEmbedder* emb,
                     const MrLossWeights& w) {
    double total = w.phi * confidence_loss(m_c) + w.omega * binarization_loss(i_y) +
                   w.kappa * intensity_loss(i_y, intensity_ref);
    if (i_gt) {
        total += pixel_loss(i_y, *i_gt, m_c);
        if (w.gamma != 0.0) {
            if (!superpixels || !emb)
                throw std::invalid_argument("mr_total_loss: supervised mode needs superpixels and an embedder");
            total += w.gamma * homogeneity_loss(i_y, *superpixels, *emb);
        }
    }
    return total;
}

}  // namespace mr
