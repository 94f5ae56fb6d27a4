#pragma once

#include <string>

#include "mangares/image.hpp"
#include "mangares/util/rng.hpp"

namespace mr {

// One draw of the print-and-rescan corruption model. A field is skipped when
// its flag value says so: blur_sigma = 0 disables blur, noise_sigma = 0
// disables noise, jpeg_quality = 0 disables compression.
struct DegradationParams {
    double scale = 2.0;       // downsampling factor, [1,4]
    double blur_sigma = 0.0;  // pre-filter Gaussian sigma, 0 = off
    int blur_kernel = 5;      // odd taps for the pre-filter
    double noise_sigma = 0.0; // additive Gaussian stddev in 8-bit units, 0 = off
    int jpeg_quality = 0;     // 1..100, 0 = off
    std::uint64_t noise_seed = 0;

    std::string to_json() const;
    static DegradationParams from_json(const std::string& text);
};

// Apply blur -> area downsample by params.scale -> additive Gaussian noise
// -> JPEG round-trip, clamping to [0,1] after the noise stage. Throws if the
// downsampled raster would fall under 8x8 pixels.
Image degrade(const Image& img, const DegradationParams& params);

// Sample the training corruption distribution: scale ~ U[1,4]; blur on with
// probability 1/2 (sigma ~ U[0.5,1.5], 5 taps); noise on with probability
// 1/2 (sigma ~ U[5,15]); JPEG on with probability 1/2 (quality ~ U{50..100}).
// Draw order is fixed so a seeded Rng reproduces the same stream.
DegradationParams sample_params(Rng& rng);

}  // namespace mr
