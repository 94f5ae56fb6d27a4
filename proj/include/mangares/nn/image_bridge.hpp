#pragma once

#include <stdexcept>

#include "mangares/image.hpp"
#include "mangares/nn/tensor.hpp"

namespace mr::nn {

// Image (channel-major doubles) <-> NCHW tensor glue.

template <typename T>
Tensor<T> from_image(const Image& img) {
    Tensor<T> t({1, img.channels, img.height, img.width});
    for (size_t i = 0; i < img.data.size(); ++i) t.data[i] = static_cast<T>(img.data[i]);
    return t;
}

// Batch of equally sized single-channel crops.
template <typename T>
Tensor<T> from_images(const std::vector<Image>& imgs) {
    if (imgs.empty()) throw std::invalid_argument("from_images: empty batch");
    const int h = imgs[0].height, w = imgs[0].width;
    Tensor<T> t({static_cast<int>(imgs.size()), imgs[0].channels, h, w});
    size_t off = 0;
    for (const auto& img : imgs) {
        if (img.height != h || img.width != w || img.channels != imgs[0].channels)
            throw std::invalid_argument("from_images: mixed shapes in batch");
        for (size_t i = 0; i < img.data.size(); ++i) t.data[off + i] = static_cast<T>(img.data[i]);
        off += img.data.size();
    }
    return t;
}

template <typename T>
Image to_image(const Tensor<T>& t, int n = 0) {
    if (t.rank() != 4) throw std::invalid_argument("to_image: 4-d tensor expected");
    const int C = t.dim(1), H = t.dim(2), W = t.dim(3);
    Image img(H, W, C);
    const size_t plane = static_cast<size_t>(C) * H * W;
    for (size_t i = 0; i < plane; ++i)
        img.data[i] = static_cast<double>(t.data[static_cast<size_t>(n) * plane + i]);
    return img;
}

}  // namespace mr::nn
