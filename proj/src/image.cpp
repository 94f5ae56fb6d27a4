#include "mangares/image.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <numeric>
#include <stdexcept>

namespace mr {

double Image::mean() const {
    if (data.empty()) return 0.0;
    return std::accumulate(data.begin(), data.end(), 0.0) / static_cast<double>(data.size());
}

size_t BitonalMask::count() const {
    size_t n = 0;
    for (auto v : data) n += v;
    return n;
}

// ---------------------------------------------------------------------------
// Gaussian blur (separable, reflect padding)
// ---------------------------------------------------------------------------

namespace kern {

static void blur_pass_rows(const double* in, double* out, int h, int w,
                           const double* k1d, int radius, int y) {
    for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int t = -radius; t <= radius; ++t)
            acc += k1d[t + radius] * in[static_cast<size_t>(y) * w + reflect_index(x + t, w)];
        out[static_cast<size_t>(y) * w + x] = acc;
    }
}

static void blur_pass_cols(const double* in, double* out, int h, int w,
                           const double* k1d, int radius, int y) {
    for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int t = -radius; t <= radius; ++t)
            acc += k1d[t + radius] * in[static_cast<size_t>(reflect_index(y + t, h)) * w + x];
        out[static_cast<size_t>(y) * w + x] = acc;
    }
}

void gaussian_blur_serial(const double* in, double* out, int h, int w,
                          const double* k1d, int radius) {
    std::vector<double> tmp(static_cast<size_t>(h) * w);
    for (int y = 0; y < h; ++y) blur_pass_rows(in, tmp.data(), h, w, k1d, radius, y);
    for (int y = 0; y < h; ++y) blur_pass_cols(tmp.data(), out, h, w, k1d, radius, y);
}

void gaussian_blur_omp(const double* in, double* out, int h, int w,
                       const double* k1d, int radius) {
    std::vector<double> tmp(static_cast<size_t>(h) * w);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y) blur_pass_rows(in, tmp.data(), h, w, k1d, radius, y);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y) blur_pass_cols(tmp.data(), out, h, w, k1d, radius, y);
}

// Exact box-coverage resampling. Output pixel (oy,ox) integrates the source
// over [oy*h/th, (oy+1)*h/th) x [ox*w/tw, (ox+1)*w/tw).
static void area_row(const double* in, double* out, int h, int w, int th, int tw, int oy) {
    const double sy = static_cast<double>(h) / th;
    const double sx = static_cast<double>(w) / tw;
    const double y0 = oy * sy, y1 = (oy + 1) * sy;
    const int iy0 = static_cast<int>(std::floor(y0));
    const int iy1 = std::min(h - 1, static_cast<int>(std::ceil(y1)) - 1);
    for (int ox = 0; ox < tw; ++ox) {
        const double x0 = ox * sx, x1 = (ox + 1) * sx;
        const int ix0 = static_cast<int>(std::floor(x0));
        const int ix1 = std::min(w - 1, static_cast<int>(std::ceil(x1)) - 1);
        double acc = 0.0;
        for (int iy = iy0; iy <= iy1; ++iy) {
            const double wy = std::min<double>(iy + 1, y1) - std::max<double>(iy, y0);
            const double* row = in + static_cast<size_t>(iy) * w;
            for (int ix = ix0; ix <= ix1; ++ix) {
                const double wx = std::min<double>(ix + 1, x1) - std::max<double>(ix, x0);
                acc += wy * wx * row[ix];
            }
        }
        out[static_cast<size_t>(oy) * tw + ox] = acc / (sy * sx);
    }
}

void resample_area_serial(const double* in, double* out, int h, int w, int th, int tw) {
    for (int oy = 0; oy < th; ++oy) area_row(in, out, h, w, th, tw, oy);
}

void resample_area_omp(const double* in, double* out, int h, int w, int th, int tw) {
#pragma omp parallel for schedule(static)
    for (int oy = 0; oy < th; ++oy) area_row(in, out, h, w, th, tw, oy);
}

}  // namespace kern

Image gaussian_blur(const Image& img, int kernel_size, double sigma) {
    if (kernel_size < 1 || kernel_size % 2 == 0)
        throw std::invalid_argument("gaussian_blur: kernel_size must be odd and positive");
    if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_blur: sigma must be > 0");

    const int radius = kernel_size / 2;
    std::vector<double> k1d(kernel_size);
    double sum = 0.0;
    for (int t = -radius; t <= radius; ++t) {
        k1d[t + radius] = std::exp(-0.5 * (t * t) / (sigma * sigma));
        sum += k1d[t + radius];
    }
    for (auto& v : k1d) v /= sum;

    Image out(img.height, img.width, img.channels);
    const size_t plane = static_cast<size_t>(img.height) * img.width;
    for (int c = 0; c < img.channels; ++c)
        kern::gaussian_blur_omp(img.data.data() + c * plane, out.data.data() + c * plane,
                                img.height, img.width, k1d.data(), radius);
    return out;
}

// Catmull-Rom kernel (a = -0.5).
static double cubic_weight(double t) {
    const double a = -0.5;
    t = std::fabs(t);
    if (t < 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
    if (t < 2.0) return (((t - 5.0) * t + 8.0) * t - 4.0) * a;
    return 0.0;
}

Image resample(const Image& img, int target_h, int target_w, Filter filter, bool clamp01) {
    if (target_h < 1 || target_w < 1)
        throw std::invalid_argument("resample: target dims must be >= 1");
    const int h = img.height, w = img.width;
    Image out(target_h, target_w, img.channels);
    const size_t in_plane = static_cast<size_t>(h) * w;
    const size_t out_plane = static_cast<size_t>(target_h) * target_w;

    for (int c = 0; c < img.channels; ++c) {
        const double* in = img.data.data() + c * in_plane;
        double* dst = out.data.data() + c * out_plane;
        switch (filter) {
            case Filter::Area:
                kern::resample_area_omp(in, dst, h, w, target_h, target_w);
                break;
            case Filter::Nearest: {
#pragma omp parallel for schedule(static)
                for (int oy = 0; oy < target_h; ++oy) {
                    const int iy = std::min(h - 1, static_cast<int>((oy + 0.5) * h / target_h));
                    for (int ox = 0; ox < target_w; ++ox) {
                        const int ix = std::min(w - 1, static_cast<int>((ox + 0.5) * w / target_w));
                        dst[static_cast<size_t>(oy) * target_w + ox] = in[static_cast<size_t>(iy) * w + ix];
                    }
                }
                break;
            }
            case Filter::Bicubic: {
#pragma omp parallel for schedule(static)
                for (int oy = 0; oy < target_h; ++oy) {
                    const double sy = (oy + 0.5) * h / target_h - 0.5;
                    const int iy = static_cast<int>(std::floor(sy));
                    for (int ox = 0; ox < target_w; ++ox) {
                        const double sx = (ox + 0.5) * w / target_w - 0.5;
                        const int ix = static_cast<int>(std::floor(sx));
                        double acc = 0.0, wsum = 0.0;
                        for (int dy = -1; dy <= 2; ++dy) {
                            const double wy = cubic_weight(sy - (iy + dy));
                            if (wy == 0.0) continue;
                            const double* row = in + static_cast<size_t>(reflect_index(iy + dy, h)) * w;
                            for (int dx = -1; dx <= 2; ++dx) {
                                const double wx = cubic_weight(sx - (ix + dx));
                                acc += wy * wx * row[reflect_index(ix + dx, w)];
                                wsum += wy * wx;
                            }
                        }
                        dst[static_cast<size_t>(oy) * target_w + ox] = acc / wsum;
                    }
                }
                break;
            }
        }
    }
    if (clamp01)
        for (auto& v : out.data) v = std::clamp(v, 0.0, 1.0);
    return out;
}

BitonalMask binarize(const Image& img, double threshold) {
    if (img.channels != 1)
        throw std::invalid_argument("binarize: single-channel input required");
    BitonalMask m(img.height, img.width);
    for (size_t i = 0; i < img.data.size(); ++i)
        m.data[i] = img.data[i] >= threshold ? 1 : 0;
    return m;
}

Image mask_to_image(const BitonalMask& m) {
    Image img(m.height, m.width, 1);
    for (size_t i = 0; i < m.data.size(); ++i) img.data[i] = m.data[i];
    return img;
}

// ---------------------------------------------------------------------------
// File I/O
// ---------------------------------------------------------------------------

static bool has_suffix(const std::string& s, const std::string& suf) {
    if (s.size() < suf.size()) return false;
    std::string tail = s.substr(s.size() - suf.size());
    std::transform(tail.begin(), tail.end(), tail.begin(), ::tolower);
    return tail == suf;
}

static std::vector<std::uint8_t> to_bytes(const Image& img) {
    std::vector<std::uint8_t> bytes(img.data.size());
    for (size_t i = 0; i < img.data.size(); ++i) {
        const double v = std::clamp(img.data[i], 0.0, 1.0);
        bytes[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    return bytes;
}

struct PngReadCloser {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE* fp = nullptr;
    ~PngReadCloser() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (fp) std::fclose(fp);
    }
};

static Image load_png(const std::string& path) {
    PngReadCloser st;
    st.fp = std::fopen(path.c_str(), "rb");
    if (!st.fp) throw std::runtime_error("load_image: cannot open " + path);
    png_byte header[8];
    if (std::fread(header, 1, 8, st.fp) != 8 || png_sig_cmp(header, 0, 8))
        throw std::runtime_error("load_image: not a PNG file: " + path);

    st.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    st.info = png_create_info_struct(st.png);
    if (!st.png || !st.info) throw std::runtime_error("load_image: libpng init failed");
    if (setjmp(png_jmpbuf(st.png))) throw std::runtime_error("load_image: PNG decode error: " + path);

    png_init_io(st.png, st.fp);
    png_set_sig_bytes(st.png, 8);
    png_read_info(st.png, st.info);

    png_set_strip_16(st.png);
    png_set_packing(st.png);
    if (png_get_color_type(st.png, st.info) == PNG_COLOR_TYPE_PALETTE)
        png_set_palette_to_rgb(st.png);
    if (png_get_color_type(st.png, st.info) == PNG_COLOR_TYPE_GRAY &&
        png_get_bit_depth(st.png, st.info) < 8)
        png_set_expand_gray_1_2_4_to_8(st.png);
    png_set_strip_alpha(st.png);
    png_read_update_info(st.png, st.info);

    const int h = static_cast<int>(png_get_image_height(st.png, st.info));
    const int w = static_cast<int>(png_get_image_width(st.png, st.info));
    const int ch = png_get_channels(st.png, st.info);
    std::vector<std::uint8_t> raw(static_cast<size_t>(h) * w * ch);
    std::vector<png_bytep> rows(h);
    for (int y = 0; y < h; ++y) rows[y] = raw.data() + static_cast<size_t>(y) * w * ch;
    png_read_image(st.png, rows.data());
    png_read_end(st.png, nullptr);

    Image img(h, w, 1);
    for (int i = 0; i < h * w; ++i) {
        double v;
        if (ch >= 3) {
            const std::uint8_t* p = raw.data() + static_cast<size_t>(i) * ch;
            v = (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]) / 255.0;
        } else {
            v = raw[static_cast<size_t>(i) * ch] / 255.0;
        }
        img.data[i] = v;
    }
    return img;
}

static void save_png_gray(const std::vector<std::uint8_t>& bytes, int h, int w,
                          const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw std::runtime_error("save_image: cannot open " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) {
        std::fclose(fp);
        throw std::runtime_error("save_image: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("save_image: PNG encode error: " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < h; ++y)
        png_write_row(png, const_cast<png_bytep>(bytes.data() + static_cast<size_t>(y) * w));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

namespace {
struct JpegErrorMgr {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
};
void jpeg_error_exit(j_common_ptr cinfo) {
    auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    std::longjmp(mgr->jump, 1);
}
}  // namespace

static Image decode_jpeg_common(jpeg_decompress_struct& cinfo) {
    cinfo.out_color_space = JCS_GRAYSCALE;
    jpeg_start_decompress(&cinfo);
    const int h = static_cast<int>(cinfo.output_height);
    const int w = static_cast<int>(cinfo.output_width);
    Image img(h, w, 1);
    std::vector<std::uint8_t> row(w);
    std::uint8_t* rowp = row.data();
    while (cinfo.output_scanline < cinfo.output_height) {
        const int y = static_cast<int>(cinfo.output_scanline);
        jpeg_read_scanlines(&cinfo, &rowp, 1);
        for (int x = 0; x < w; ++x) img.at(y, x) = row[x] / 255.0;
    }
    jpeg_finish_decompress(&cinfo);
    return img;
}

static Image load_jpeg(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw std::runtime_error("load_image: cannot open " + path);
    jpeg_decompress_struct cinfo;
    JpegErrorMgr err;
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        std::fclose(fp);
        throw std::runtime_error("load_image: JPEG decode error: " + path);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, fp);
    jpeg_read_header(&cinfo, TRUE);
    Image img = decode_jpeg_common(cinfo);
    jpeg_destroy_decompress(&cinfo);
    std::fclose(fp);
    return img;
}

Image jpeg_decode(const std::uint8_t* bytes, size_t size) {
    jpeg_decompress_struct cinfo;
    JpegErrorMgr err;
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw std::runtime_error("jpeg_decode: decode error");
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes, static_cast<unsigned long>(size));
    jpeg_read_header(&cinfo, TRUE);
    Image img = decode_jpeg_common(cinfo);
    jpeg_destroy_decompress(&cinfo);
    return img;
}

std::vector<std::uint8_t> jpeg_encode(const Image& img, int quality) {
    if (img.channels != 1) throw std::invalid_argument("jpeg_encode: single-channel only");
    if (quality < 1 || quality > 100)
        throw std::invalid_argument("jpeg_encode: quality must be in [1,100]");
    std::vector<std::uint8_t> bytes = to_bytes(img);

    jpeg_compress_struct cinfo;
    JpegErrorMgr err;
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = jpeg_error_exit;
    unsigned char* out_buf = nullptr;
    unsigned long out_size = 0;
    if (setjmp(err.jump)) {
        jpeg_destroy_compress(&cinfo);
        if (out_buf) free(out_buf);
        throw std::runtime_error("jpeg_encode: encode error");
    }
    jpeg_create_compress(&cinfo);
    jpeg_mem_dest(&cinfo, &out_buf, &out_size);
    cinfo.image_width = static_cast<JDIMENSION>(img.width);
    cinfo.image_height = static_cast<JDIMENSION>(img.height);
    cinfo.input_components = 1;
    cinfo.in_color_space = JCS_GRAYSCALE;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    while (cinfo.next_scanline < cinfo.image_height) {
        JSAMPROW row = bytes.data() + static_cast<size_t>(cinfo.next_scanline) * img.width;
        jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);

    std::vector<std::uint8_t> result(out_buf, out_buf + out_size);
    free(out_buf);
    return result;
}

Image jpeg_roundtrip(const Image& img, int quality) {
    const auto bytes = jpeg_encode(img, quality);
    return jpeg_decode(bytes.data(), bytes.size());
}

Image load_image(const std::string& path) {
    if (has_suffix(path, ".png")) return load_png(path);
    if (has_suffix(path, ".jpg") || has_suffix(path, ".jpeg")) return load_jpeg(path);
    throw std::runtime_error("load_image: unsupported format: " + path);
}

void save_image(const Image& img, const std::string& path) {
    if (img.channels != 1)
        throw std::invalid_argument("save_image: single-channel images only");
    if (has_suffix(path, ".png")) {
        save_png_gray(to_bytes(img), img.height, img.width, path);
        return;
    }
    if (has_suffix(path, ".jpg") || has_suffix(path, ".jpeg")) {
        const auto bytes = jpeg_encode(img, 90);
        FILE* fp = std::fopen(path.c_str(), "wb");
        if (!fp) throw std::runtime_error("save_image: cannot open " + path);
        std::fwrite(bytes.data(), 1, bytes.size(), fp);
        std::fclose(fp);
        return;
    }
    throw std::runtime_error("save_image: unsupported format: " + path);
}

LabelMap load_label_map(const std::string& path) {
    const Image img = load_png(path);
    LabelMap m(img.height, img.width);
    for (size_t i = 0; i < img.data.size(); ++i)
        m.data[i] = static_cast<int>(std::lround(img.data[i] * 255.0));
    return m;
}

void save_label_map(const LabelMap& labels, const std::string& path) {
    std::vector<std::uint8_t> bytes(labels.data.size());
    for (size_t i = 0; i < labels.data.size(); ++i) {
        const int v = labels.data[i];
        if (v < 0 || v > 255)
            throw std::runtime_error("save_label_map: label out of 8-bit range");
        bytes[i] = static_cast<std::uint8_t>(v);
    }
    save_png_gray(bytes, labels.height, labels.width, path);
}

}  // namespace mr
