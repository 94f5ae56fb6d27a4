#include <doctest.h>

#include <cmath>
#include <set>
#include <stdexcept>

#include "mangares/screentone.hpp"
#include "mangares/util/rng.hpp"

using namespace mr;

namespace {

double black_coverage(const Image& img) {
    double black = 0.0;
    for (const double v : img.data) black += v < 0.5 ? 1.0 : 0.0;
    return black / static_cast<double>(img.data.size());
}

bool strictly_bitonal(const Image& img) {
    for (const double v : img.data)
        if (v != 0.0 && v != 1.0) return false;
    return true;
}

}  // namespace

TEST_CASE("screentones are bitonal and track the requested tone") {
    for (const ToneKind kind :
         {ToneKind::Dot, ToneKind::Line, ToneKind::Checker, ToneKind::Stochastic}) {
        for (const double tone : {0.15, 0.3, 0.5, 0.7, 0.85}) {
            ScreentoneSpec spec;
            spec.kind = kind;
            spec.period = 6.0;
            spec.angle_deg = 30.0;
            spec.tone = tone;
            spec.seed = 99;
            const Image img = render_screentone(spec, 128, 128);
            REQUIRE(strictly_bitonal(img));
            INFO(tone_kind_name(kind), " tone ", tone);
            CHECK(std::abs(black_coverage(img) - tone) < 0.05);
        }
    }
}

TEST_CASE("degenerate tones collapse to solid pages") {
    ScreentoneSpec spec;
    spec.kind = ToneKind::Dot;
    spec.period = 4.0;
    spec.tone = 0.0;
    Image white = render_screentone(spec, 32, 32);
    for (const double v : white.data) CHECK(v == 1.0);
    spec.tone = 1.0;
    Image black = render_screentone(spec, 32, 32);
    for (const double v : black.data) CHECK(v == 0.0);
}

TEST_CASE("renders are functions of absolute coordinates (crop consistency)") {
    for (const ToneKind kind :
         {ToneKind::Dot, ToneKind::Line, ToneKind::Checker, ToneKind::Stochastic}) {
        ScreentoneSpec spec;
        spec.kind = kind;
        spec.period = 5.0;
        spec.angle_deg = 20.0;
        spec.tone = 0.4;
        spec.seed = 7;
        const Image small = render_screentone(spec, 48, 40);
        const Image large = render_screentone(spec, 96, 96);
        bool equal = true;
        for (int y = 0; y < 48 && equal; ++y)
            for (int x = 0; x < 40; ++x)
                if (small.at(y, x) != large.at(y, x)) {
                    equal = false;
                    break;
                }
        INFO(tone_kind_name(kind));
        // The stochastic threshold is a quantile of the whole raster, so only
        // coverage (not the exact pixel set) is stable across sizes.
        if (kind == ToneKind::Stochastic) {
            CHECK(black_coverage(small) == doctest::Approx(0.4).epsilon(0.15));
        } else {
            CHECK(equal);
        }
    }
}

TEST_CASE("line screentone at angle 0 repeats along y with its period") {
    ScreentoneSpec spec;
    spec.kind = ToneKind::Line;
    spec.period = 8.0;
    spec.angle_deg = 0.0;
    spec.tone = 0.5;
    const Image img = render_screentone(spec, 64, 16);
    for (int y = 0; y < 56; ++y)
        for (int x = 0; x < 16; ++x) CHECK(img.at(y, x) == img.at(y + 8, x));
    // Half tone -> rows alternate in 4-black/4-white bands.
    CHECK(black_coverage(img) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("checker with period 2 is a pixel checkerboard") {
    ScreentoneSpec spec;
    spec.kind = ToneKind::Checker;
    spec.period = 2.0;
    spec.angle_deg = 0.0;
    spec.tone = 0.5;
    const Image img = render_screentone(spec, 16, 16);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) CHECK(img.at(y, x) == ((x + y) % 2 ? 0.0 : 1.0));
}

TEST_CASE("spec validation rejects bad parameters") {
    ScreentoneSpec spec;
    spec.period = 1.0;
    CHECK_THROWS(spec.validate());
    spec.period = 4.0;
    spec.tone = -0.1;
    CHECK_THROWS(spec.validate());
    spec.tone = 1.1;
    CHECK_THROWS(spec.validate());
    spec.tone = 0.5;
    CHECK_NOTHROW(spec.validate());
    CHECK_THROWS(tone_kind_from_name("wiggle"));
    CHECK(tone_kind_from_name("dot") == ToneKind::Dot);
    CHECK(tone_kind_name(ToneKind::Stochastic) == "stochastic");
}

TEST_CASE("compose_page fills regions, draws lines, and labels everything") {
    PageLayout layout;
    layout.height = 64;
    layout.width = 64;
    PageRegion left, right;
    left.mask = BitonalMask(64, 64);
    right.mask = BitonalMask(64, 64);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) (x < 32 ? left.mask : right.mask).at(y, x) = 1;
    left.spec.kind = ToneKind::Dot;
    left.spec.period = 4.0;
    left.spec.tone = 0.3;
    right.spec.kind = ToneKind::Line;
    right.spec.period = 6.0;
    right.spec.tone = 0.6;
    layout.regions = {left, right};
    layout.line_mask = BitonalMask(64, 64);
    for (int x = 0; x < 64; ++x) layout.line_mask.at(10, x) = 1;

    const auto [page, labels] = compose_page(layout);
    REQUIRE(strictly_bitonal(page));
    for (int x = 0; x < 64; ++x) {
        CHECK(page.at(10, x) == 0.0);  // structural line is black
        CHECK(labels.at(10, x) == kLineLabel);
    }
    CHECK(labels.at(20, 5) == 0);
    CHECK(labels.at(20, 50) == 1);

    // Overlapping masks are rejected.
    PageLayout bad = layout;
    bad.regions[1].mask = bad.regions[0].mask;
    CHECK_THROWS_AS((void)compose_page(bad), std::invalid_argument);
}

TEST_CASE("random_layout is deterministic and honors the spec pool") {
    LayoutOptions opts;
    opts.spec_pool.resize(2);
    opts.spec_pool[0].kind = ToneKind::Checker;
    opts.spec_pool[0].period = 4.0;
    opts.spec_pool[1].kind = ToneKind::Dot;
    opts.spec_pool[1].period = 8.0;

    const PageLayout a = random_layout(96, 96, 42, opts);
    const PageLayout b = random_layout(96, 96, 42, opts);
    REQUIRE(a.regions.size() == b.regions.size());
    const auto [pa, la] = compose_page(a);
    const auto [pb, lb] = compose_page(b);
    CHECK(pa.data == pb.data);
    CHECK(la.data == lb.data);

    for (const auto& region : a.regions) {
        const bool from_pool = (region.spec.kind == ToneKind::Checker &&
                                region.spec.period == 4.0) ||
                               (region.spec.kind == ToneKind::Dot && region.spec.period == 8.0);
        CHECK(from_pool);
    }

    // Every pixel is owned by a region or the line overlay.
    std::set<int> seen(la.data.begin(), la.data.end());
    for (const int lab : seen)
        CHECK((lab == kLineLabel || (lab >= 0 && lab < static_cast<int>(a.regions.size()))));

    const PageLayout c = random_layout(96, 96, 43, opts);
    const auto [pc, lc] = compose_page(c);
    CHECK(pa.data != pc.data);
}
