#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mr {

// Grayscale (or multi-channel embedding) raster. Manga-role images keep
// values in [0,1] with 0 = black ink and 1 = white paper. Channel-major
// layout: data[(c*h + y)*w + x].
struct Image {
    int height = 0;
    int width = 0;
    int channels = 1;
    std::vector<double> data;

    Image() = default;
    Image(int h, int w, int c = 1, double fill = 0.0)
        : height(h), width(w), channels(c),
          data(static_cast<size_t>(h) * w * c, fill) {}

    double& at(int y, int x, int c = 0) {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }
    double at(int y, int x, int c = 0) const {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }
    size_t size() const { return data.size(); }
    bool same_shape(const Image& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
    double mean() const;
};

// Strictly {0,1}-valued raster.
struct BitonalMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> data;

    BitonalMask() = default;
    BitonalMask(int h, int w, std::uint8_t fill = 0)
        : height(h), width(w), data(static_cast<size_t>(h) * w, fill) {}

    std::uint8_t& at(int y, int x) { return data[static_cast<size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const { return data[static_cast<size_t>(y) * width + x]; }
    size_t count() const;
};

// Integer region labels; 255 is reserved for structural line pixels.
struct LabelMap {
    int height = 0;
    int width = 0;
    std::vector<int> data;

    LabelMap() = default;
    LabelMap(int h, int w, int fill = 0)
        : height(h), width(w), data(static_cast<size_t>(h) * w, fill) {}

    int& at(int y, int x) { return data[static_cast<size_t>(y) * width + x]; }
    int at(int y, int x) const { return data[static_cast<size_t>(y) * width + x]; }
};

constexpr int kLineLabel = 255;

enum class Filter { Area, Bicubic, Nearest };

// Reflected (edge-repeating) index into [0, n).
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
}

// Normalized 2-D Gaussian convolution with reflect padding.
// kernel_size must be odd and sigma > 0.
Image gaussian_blur(const Image& img, int kernel_size, double sigma);

// Resample to (target_h, target_w). Area integrates exact pixel coverage,
// bicubic uses the Catmull-Rom kernel, nearest picks the covering source
// pixel. When clamp01 is set the result is clipped to [0,1].
Image resample(const Image& img, int target_h, int target_w, Filter filter,
               bool clamp01 = true);

// 1 where v >= threshold. Single-channel input only.
BitonalMask binarize(const Image& img, double threshold);

Image mask_to_image(const BitonalMask& m);

// PNG/JPEG file I/O; 8-bit grayscale canonical on disk. Color inputs are
// converted by Rec.601 luminance. Throws std::runtime_error on unreadable
// files and unsupported formats.
Image load_image(const std::string& path);
void save_image(const Image& img, const std::string& path);

LabelMap load_label_map(const std::string& path);
void save_label_map(const LabelMap& labels, const std::string& path);

// In-memory JPEG round-trip at the given quality (1..100); the degradation
// pipeline and the .jpg dataset writer share this codec path.
Image jpeg_roundtrip(const Image& img, int quality);
std::vector<std::uint8_t> jpeg_encode(const Image& img, int quality);
Image jpeg_decode(const std::uint8_t* bytes, size_t size);

namespace kern {
// Serial reference implementations kept for testing; the public entry points
// above run the OpenMP versions.
void gaussian_blur_serial(const double* in, double* out, int h, int w,
                          const double* k1d, int radius);
void gaussian_blur_omp(const double* in, double* out, int h, int w,
                       const double* k1d, int radius);
void resample_area_serial(const double* in, double* out, int h, int w,
                          int th, int tw);
void resample_area_omp(const double* in, double* out, int h, int w,
                       int th, int tw);
}  // namespace kern

}  // namespace mr
