#include <doctest.h>

#include <fftw3.h>

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "mangares/dataset.hpp"
#include "mangares/degrade.hpp"
#include "mangares/screentone.hpp"
#include "mangares/util/rng.hpp"

using namespace mr;

namespace {

// Index of the dominant non-DC bin of the column-mean profile's spectrum.
int dominant_bin(const Image& img) {
    const int n = img.height;
    std::vector<double> profile(n, 0.0);
    for (int y = 0; y < n; ++y) {
        double acc = 0.0;
        for (int x = 0; x < img.width; ++x) acc += img.at(y, x);
        profile[y] = acc / img.width;
    }
    const double mean = std::accumulate(profile.begin(), profile.end(), 0.0) / n;
    for (double& v : profile) v -= mean;

    std::vector<fftw_complex> spec(static_cast<size_t>(n / 2 + 1));
    fftw_plan plan =
        fftw_plan_dft_r2c_1d(n, profile.data(), spec.data(), FFTW_ESTIMATE);
    fftw_execute(plan);
    fftw_destroy_plan(plan);

    int best = 1;
    double best_mag = -1.0;
    for (int k = 1; k <= n / 2; ++k) {
        const double mag = std::hypot(spec[k][0], spec[k][1]);
        if (mag > best_mag) {
            best_mag = mag;
            best = k;
        }
    }
    return best;
}

// Fold k cycles per page into the representable [0, n/2] range of an n-sample
// raster (conjugate symmetry of real signals).
int folded_bin(int k, int n) {
    k %= n;
    return k > n / 2 ? n - k : k;
}

Image line_page(double period, int h, int w) {
    ScreentoneSpec spec;
    spec.kind = ToneKind::Line;
    spec.period = period;
    spec.angle_deg = 0.0;
    spec.tone = 0.5;
    return render_screentone(spec, h, w);
}

}  // namespace

TEST_CASE("identity degradation is bitwise exact") {
    const Image page = line_page(6.0, 64, 48);
    DegradationParams p;
    p.scale = 1.0;
    const Image out = degrade(page, p);
    REQUIRE(out.height == 64);
    REQUIRE(out.width == 48);
    CHECK(out.data == page.data);
}

TEST_CASE("pixel checkerboard halves to exact mid gray") {
    ScreentoneSpec spec;
    spec.kind = ToneKind::Checker;
    spec.period = 2.0;
    spec.tone = 0.5;
    const Image page = render_screentone(spec, 32, 32);
    DegradationParams p;
    p.scale = 2.0;
    const Image out = degrade(page, p);
    REQUIRE(out.height == 16);
    REQUIRE(out.width == 16);
    for (const double v : out.data) CHECK(v == 0.5);
}

TEST_CASE("downsampled screentones alias to the predicted spectral peak") {
    // (line period, scale, page side). The source comb line at page-cycle
    // count H/period folds into the degraded raster of N = H/scale samples.
    struct Case {
        double period, scale;
        int page;
    };
    const Case cases[] = {
        {8.0, 2.0, 256},  // stays below Nyquist
        {6.0, 2.0, 240},
        {4.0, 3.0, 240},  // folds: 60 cycles into 80 samples -> bin 20
        {3.0, 2.0, 240},  // folds: 80 cycles into 120 samples -> bin 40
        {3.0, 2.5, 240},  // fractional scale, folds to bin 16
    };
    for (const auto& c : cases) {
        const Image page = line_page(c.period, c.page, 64);
        DegradationParams p;
        p.scale = c.scale;
        const Image out = degrade(page, p);
        const int n = out.height;
        REQUIRE(n == static_cast<int>(std::lround(c.page / c.scale)));
        const int cycles = static_cast<int>(std::lround(c.page / c.period));
        const int expected = folded_bin(cycles, n);
        INFO("period ", c.period, " scale ", c.scale);
        CHECK(dominant_bin(out) == expected);
    }
}

TEST_CASE("degrade validates its inputs") {
    const Image tiny = line_page(4.0, 16, 16);
    DegradationParams p;
    p.scale = 3.0;  // 16/3 -> 5 < 8
    CHECK_THROWS_AS((void)degrade(tiny, p), std::invalid_argument);
    p.scale = 0.5;
    CHECK_THROWS_AS((void)degrade(tiny, p), std::invalid_argument);
    p.scale = 5.0;
    CHECK_THROWS_AS((void)degrade(tiny, p), std::invalid_argument);
    Image rgb(16, 16, 3, 0.5);
    p.scale = 1.0;
    CHECK_THROWS_AS((void)degrade(rgb, p), std::invalid_argument);
}

TEST_CASE("noise stage is seeded and clamped") {
    const Image page = line_page(6.0, 48, 48);
    DegradationParams p;
    p.scale = 1.0;
    p.noise_sigma = 25.0;
    p.noise_seed = 7;
    const Image a = degrade(page, p);
    const Image b = degrade(page, p);
    CHECK(a.data == b.data);
    p.noise_seed = 8;
    const Image c = degrade(page, p);
    CHECK(a.data != c.data);
    for (const double v : a.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("params survive a JSON round-trip") {
    DegradationParams p;
    p.scale = 2.75;
    p.blur_sigma = 1.25;
    p.blur_kernel = 7;
    p.noise_sigma = 9.5;
    p.jpeg_quality = 80;
    p.noise_seed = 0xdeadbeefcafeULL;
    const DegradationParams q = DegradationParams::from_json(p.to_json());
    CHECK(q.scale == p.scale);
    CHECK(q.blur_sigma == p.blur_sigma);
    CHECK(q.blur_kernel == p.blur_kernel);
    CHECK(q.noise_sigma == p.noise_sigma);
    CHECK(q.jpeg_quality == p.jpeg_quality);
    CHECK(q.noise_seed == p.noise_seed);

    const DegradationParams d = DegradationParams::from_json("{\"scale\": 1.5}");
    CHECK(d.scale == 1.5);
    CHECK(d.blur_sigma == 0.0);
    CHECK(d.jpeg_quality == 0);
}

TEST_CASE("sampled parameters respect gates and ranges") {
    Rng rng(1234);
    int blur_on = 0, noise_on = 0, jpeg_on = 0;
    const int n = 2000;
    for (int i = 0; i < n; ++i) {
        const DegradationParams p = sample_params(rng);
        CHECK(p.scale >= 1.0);
        CHECK(p.scale <= 4.0);
        if (p.blur_sigma > 0.0) {
            ++blur_on;
            CHECK(p.blur_sigma >= 0.5);
            CHECK(p.blur_sigma <= 1.5);
            CHECK(p.blur_kernel == 5);
        }
        if (p.noise_sigma > 0.0) {
            ++noise_on;
            CHECK(p.noise_sigma >= 5.0);
            CHECK(p.noise_sigma <= 15.0);
        }
        if (p.jpeg_quality > 0) {
            ++jpeg_on;
            CHECK(p.jpeg_quality >= 50);
            CHECK(p.jpeg_quality <= 100);
        }
    }
    for (const int c : {blur_on, noise_on, jpeg_on}) {
        CHECK(c > n / 2 - 150);
        CHECK(c < n / 2 + 150);
    }
}

TEST_CASE("ranged sampler reproduces the default stream draw for draw") {
    Rng base(42), ranged(42);
    const DegradeOptions opts;  // defaults mirror the training distribution
    for (int i = 0; i < 500; ++i) {
        const DegradationParams a = sample_params(base);
        const DegradationParams b = sample_params_ranged(ranged, opts);
        CHECK(a.scale == b.scale);
        CHECK(a.blur_sigma == b.blur_sigma);
        CHECK(a.noise_sigma == b.noise_sigma);
        CHECK(a.jpeg_quality == b.jpeg_quality);
        CHECK(a.noise_seed == b.noise_seed);
    }
    CHECK(base.next_u64() == ranged.next_u64());
}

TEST_CASE("ranged sampler honors disabled stages and narrowed scale") {
    Rng rng(7);
    DegradeOptions opts;
    opts.enable_blur = false;
    opts.enable_jpeg = false;
    opts.scale_min = 1.5;
    opts.scale_max = 2.5;
    opts.noise_min = 1.0;
    opts.noise_max = 2.0;
    for (int i = 0; i < 200; ++i) {
        const DegradationParams p = sample_params_ranged(rng, opts);
        CHECK(p.blur_sigma == 0.0);
        CHECK(p.jpeg_quality == 0);
        CHECK(p.scale >= 1.5);
        CHECK(p.scale <= 2.5);
        if (p.noise_sigma > 0.0) {
            CHECK(p.noise_sigma >= 1.0);
            CHECK(p.noise_sigma <= 2.0);
        }
    }
}
