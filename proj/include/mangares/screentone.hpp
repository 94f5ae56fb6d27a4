#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mangares/image.hpp"

namespace mr {

enum class ToneKind { Dot, Line, Checker, Stochastic };

std::string tone_kind_name(ToneKind k);
ToneKind tone_kind_from_name(const std::string& name);

// Parametric description of a bitonal screentone pattern.
struct ScreentoneSpec {
    ToneKind kind = ToneKind::Dot;
    double period = 4.0;       // pixels, >= 2
    double angle_deg = 0.0;    // [0, 180)
    double tone = 0.5;         // target black coverage in [0,1]
    std::uint64_t seed = 0;    // stochastic patterns only

    void validate() const;
};

struct PageRegion {
    BitonalMask mask;  // pixels owned by this region
    ScreentoneSpec spec;
};

// Region masks must be disjoint; their union plus the line mask covers the
// page (compose_page treats uncovered pixels as white).
struct PageLayout {
    int height = 0;
    int width = 0;
    std::vector<PageRegion> regions;
    BitonalMask line_mask;
};

// Render a full-page screentone. The result is strictly bitonal and its
// black coverage tracks spec.tone (within 0.05 for rasters covering at
// least a few periods). Patterns are functions of absolute pixel
// coordinates, so crops of a larger render match smaller renders.
Image render_screentone(const ScreentoneSpec& spec, int h, int w);

// Region index for pixels no region claims (valid layouts cover the page,
// so this only shows up in hand-built partial layouts).
constexpr int kBackgroundLabel = 254;

// Fill each region with its screentone and draw structural lines in black
// on top. The label map stores the region index per pixel; line pixels get
// kLineLabel, uncovered pixels stay white with kBackgroundLabel. Throws if
// region masks overlap or their size differs from the page.
std::pair<Image, LabelMap> compose_page(const PageLayout& layout);

struct LayoutOptions {
    int n_regions_min = 3;
    int n_regions_max = 8;
    double period_min = 2.0;
    double period_max = 12.0;
    double tone_min = 0.1;
    double tone_max = 0.9;
    int n_line_strokes = -1;  // -1: scale with page area
    // Optional restricted spec pool; when non-empty, region specs are drawn
    // from this list (tone still sampled from [tone_min, tone_max]).
    std::vector<ScreentoneSpec> spec_pool;
};

// Seeded Voronoi partition of the page plus random line strokes.
PageLayout random_layout(int h, int w, std::uint64_t seed, const LayoutOptions& opts = {});

}  // namespace mr
