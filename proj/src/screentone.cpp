#include "mangares/screentone.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mangares/util/rng.hpp"

namespace mr {

std::string tone_kind_name(ToneKind k) {
    switch (k) {
        case ToneKind::Dot: return "dot";
        case ToneKind::Line: return "line";
        case ToneKind::Checker: return "checker";
        case ToneKind::Stochastic: return "stochastic";
    }
    return "dot";
}

ToneKind tone_kind_from_name(const std::string& name) {
    if (name == "dot") return ToneKind::Dot;
    if (name == "line") return ToneKind::Line;
    if (name == "checker") return ToneKind::Checker;
    if (name == "stochastic") return ToneKind::Stochastic;
    throw std::invalid_argument("unknown screentone kind: " + name);
}

void ScreentoneSpec::validate() const {
    if (!(period >= 2.0))
        throw std::invalid_argument("screentone period must be >= 2 pixels");
    if (tone < 0.0 || tone > 1.0)
        throw std::invalid_argument("screentone tone must be in [0,1]");
}

namespace {

constexpr double kTau = 6.283185307179586476925286766559;

inline double frac(double v) { return v - std::floor(v); }

// Hash noise as a pure function of (seed, y, x); stochastic screens stay
// consistent across render sizes away from the blur margin.
inline double hash_noise(std::uint64_t seed, int y, int x) {
    std::uint64_t key = (static_cast<std::uint64_t>(static_cast<std::uint32_t>(y)) << 32) |
                        static_cast<std::uint32_t>(x);
    std::uint64_t h = Rng::mix(seed, key);
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double dot_carrier(double u, double v, double period) {
    return 0.5 * (std::cos(kTau * u / period) + std::cos(kTau * v / period));
}

// Empirical quantile of the dot carrier over one period cell, so that the
// fraction of the cell with carrier below the returned threshold is ~tone.
double dot_threshold(double period, double tone) {
    constexpr int kGrid = 256;
    static thread_local std::vector<double> samples;
    samples.clear();
    samples.reserve(kGrid * kGrid);
    for (int j = 0; j < kGrid; ++j)
        for (int i = 0; i < kGrid; ++i)
            samples.push_back(dot_carrier((i + 0.5) / kGrid * period, (j + 0.5) / kGrid * period, period));
    std::sort(samples.begin(), samples.end());
    const size_t idx = std::min(samples.size() - 1,
                                static_cast<size_t>(tone * static_cast<double>(samples.size())));
    return samples[idx];
}

Image render_stochastic(const ScreentoneSpec& spec, int h, int w) {
    Image noise(h, w, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) noise.at(y, x) = hash_noise(spec.seed, y, x);

    // High-pass: remove the local mean at the pattern scale. Thresholding a
    // high-passed white noise field clusters the grains blue-noise style.
    const double sigma = std::max(0.6, spec.period / 2.5);
    int ksz = static_cast<int>(std::ceil(sigma * 3.0)) * 2 + 1;
    Image low = gaussian_blur(noise, ksz, sigma);
    Image field(h, w, 1);
    for (size_t i = 0; i < field.data.size(); ++i) field.data[i] = noise.data[i] - low.data[i];

    std::vector<double> sorted(field.data);
    std::sort(sorted.begin(), sorted.end());
    const size_t idx = std::min(sorted.size() - 1,
                                static_cast<size_t>(spec.tone * static_cast<double>(sorted.size())));
    const double tau = sorted[idx];

    Image out(h, w, 1);
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = field.data[i] < tau ? 0.0 : 1.0;
    return out;
}

}  // namespace

Image render_screentone(const ScreentoneSpec& spec, int h, int w) {
    spec.validate();
    if (spec.tone <= 0.0) return Image(h, w, 1, 1.0);
    if (spec.tone >= 1.0) return Image(h, w, 1, 0.0);
    if (spec.kind == ToneKind::Stochastic) return render_stochastic(spec, h, w);

    const double theta = spec.angle_deg * kTau / 360.0;
    const double ct = std::cos(theta), st = std::sin(theta);
    const double p = spec.period;
    const double dot_tau = spec.kind == ToneKind::Dot ? dot_threshold(p, spec.tone) : 0.0;
    const double r_odd = 0.5 * std::sqrt(std::min(1.0, 2.0 * spec.tone));
    const double r_even = 0.5 * std::sqrt(std::max(0.0, 2.0 * spec.tone - 1.0));

    Image out(h, w, 1);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double xc = x + 0.5, yc = y + 0.5;
            const double u = ct * xc + st * yc;
            const double v = -st * xc + ct * yc;
            bool black = false;
            switch (spec.kind) {
                case ToneKind::Line:
                    // angle 0 gives horizontal lines advancing along y.
                    black = frac(v / p) < spec.tone;
                    break;
                case ToneKind::Dot:
                    black = dot_carrier(u, v, p) < dot_tau;
                    break;
                case ToneKind::Checker: {
                    const double cu = 2.0 * u / p, cv = 2.0 * v / p;
                    const bool odd = (static_cast<long long>(std::floor(cu)) +
                                      static_cast<long long>(std::floor(cv))) & 1;
                    const double d = std::max(std::fabs(frac(cu) - 0.5), std::fabs(frac(cv) - 0.5));
                    black = d < (odd ? r_odd : r_even);
                    break;
                }
                case ToneKind::Stochastic:
                    break;  // handled above
            }
            out.at(y, x) = black ? 0.0 : 1.0;
        }
    }
    return out;
}

std::pair<Image, LabelMap> compose_page(const PageLayout& layout) {
    const int h = layout.height, w = layout.width;
    Image page(h, w, 1, 1.0);
    LabelMap labels(h, w, kBackgroundLabel);

    std::vector<std::uint8_t> covered(static_cast<size_t>(h) * w, 0);
    for (size_t r = 0; r < layout.regions.size(); ++r) {
        const auto& region = layout.regions[r];
        if (region.mask.height != h || region.mask.width != w)
            throw std::invalid_argument("compose_page: region mask size mismatch");
        const Image tone = render_screentone(region.spec, h, w);
        for (size_t i = 0; i < covered.size(); ++i) {
            if (!region.mask.data[i]) continue;
            if (covered[i])
                throw std::invalid_argument("compose_page: overlapping region masks");
            covered[i] = 1;
            page.data[i] = tone.data[i];
            labels.data[i] = static_cast<int>(r);
        }
    }
    if (layout.line_mask.height == h && layout.line_mask.width == w) {
        for (size_t i = 0; i < covered.size(); ++i) {
            if (layout.line_mask.data[i]) {
                page.data[i] = 0.0;
                labels.data[i] = kLineLabel;
            }
        }
    }
    return {std::move(page), std::move(labels)};
}

namespace {

void stamp_disc(BitonalMask& m, double cy, double cx, double radius) {
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
    const int y1 = std::min(m.height - 1, static_cast<int>(std::ceil(cy + radius)));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius)));
    const int x1 = std::min(m.width - 1, static_cast<int>(std::ceil(cx + radius)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
            if (dy * dy + dx * dx <= radius * radius) m.at(y, x) = 1;
        }
}

void draw_stroke(BitonalMask& m, Rng& rng) {
    const double h = m.height, w = m.width;
    const double x0 = rng.uniform(0, w), y0 = rng.uniform(0, h);
    const double x1 = rng.uniform(0, w), y1 = rng.uniform(0, h);
    const double x2 = rng.uniform(0, w), y2 = rng.uniform(0, h);
    const double radius = 0.5 * static_cast<double>(rng.uniform_int(1, 3));
    const double len = std::hypot(x2 - x0, y2 - y0) + std::hypot(x1 - x0, y1 - y0);
    const int steps = std::max(8, static_cast<int>(len * 2));
    for (int i = 0; i <= steps; ++i) {
        const double t = static_cast<double>(i) / steps;
        const double a = (1 - t) * (1 - t), b = 2 * t * (1 - t), c = t * t;
        stamp_disc(m, a * y0 + b * y1 + c * y2, a * x0 + b * x1 + c * x2, radius);
    }
}

}  // namespace

PageLayout random_layout(int h, int w, std::uint64_t seed, const LayoutOptions& opts) {
    if (h < 64 || w < 64)
        throw std::invalid_argument("random_layout: page must be at least 64x64");
    Rng rng(Rng::mix(seed, 0x6c61796f75745f31ULL));

    PageLayout layout;
    layout.height = h;
    layout.width = w;

    const int n = static_cast<int>(rng.uniform_int(opts.n_regions_min, opts.n_regions_max));
    std::vector<double> cy(n), cx(n);
    for (int i = 0; i < n; ++i) {
        cy[i] = rng.uniform(0, h);
        cx[i] = rng.uniform(0, w);
    }

    layout.regions.resize(n);
    for (int i = 0; i < n; ++i) {
        layout.regions[i].mask = BitonalMask(h, w);
        ScreentoneSpec& spec = layout.regions[i].spec;
        if (!opts.spec_pool.empty()) {
            spec = opts.spec_pool[static_cast<size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(opts.spec_pool.size()) - 1))];
        } else {
            spec.kind = static_cast<ToneKind>(rng.uniform_int(0, 3));
            spec.period = rng.uniform(opts.period_min, opts.period_max);
            spec.angle_deg = rng.uniform(0.0, 180.0);
        }
        spec.tone = rng.uniform(opts.tone_min, opts.tone_max);
        spec.seed = rng.next_u64();
    }

    // Voronoi assignment; ties go to the lowest region index.
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int best = 0;
            double best_d = 1e300;
            for (int i = 0; i < n; ++i) {
                const double dy = y + 0.5 - cy[i], dx = x + 0.5 - cx[i];
                const double d = dy * dy + dx * dx;
                if (d < best_d) {
                    best_d = d;
                    best = i;
                }
            }
            layout.regions[best].mask.at(y, x) = 1;
        }

    layout.line_mask = BitonalMask(h, w);
    const int strokes = opts.n_line_strokes >= 0
                            ? opts.n_line_strokes
                            : std::max(3, h * w / 32768);
    for (int i = 0; i < strokes; ++i) draw_stroke(layout.line_mask, rng);
    return layout;
}

}  // namespace mr
