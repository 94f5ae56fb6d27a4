#include "mangares/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace mr {

std::string DegradationParams::to_json() const {
    nlohmann::json j{{"scale", scale},
                     {"blur_sigma", blur_sigma},
                     {"blur_kernel", blur_kernel},
                     {"noise_sigma", noise_sigma},
                     {"jpeg_quality", jpeg_quality},
                     {"noise_seed", noise_seed}};
    return j.dump();
}

DegradationParams DegradationParams::from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    DegradationParams p;
    p.scale = j.at("scale").get<double>();
    p.blur_sigma = j.value("blur_sigma", 0.0);
    p.blur_kernel = j.value("blur_kernel", 5);
    p.noise_sigma = j.value("noise_sigma", 0.0);
    p.jpeg_quality = j.value("jpeg_quality", 0);
    p.noise_seed = j.value("noise_seed", std::uint64_t{0});
    return p;
}

Image degrade(const Image& img, const DegradationParams& params) {
    if (img.channels != 1)
        throw std::invalid_argument("degrade: single-channel input expected");
    if (params.scale < 1.0 || params.scale > 4.0)
        throw std::invalid_argument("degrade: scale must lie in [1,4]");

    Image work = img;
    if (params.blur_sigma > 0.0)
        work = gaussian_blur(work, params.blur_kernel, params.blur_sigma);

    const int th = static_cast<int>(std::lround(img.height / params.scale));
    const int tw = static_cast<int>(std::lround(img.width / params.scale));
    if (th < 8 || tw < 8)
        throw std::invalid_argument("degrade: downsampled image under 8x8");
    if (th != work.height || tw != work.width)
        work = resample(work, th, tw, Filter::Area, /*clamp01=*/false);

    if (params.noise_sigma > 0.0) {
        Rng rng(Rng::mix(params.noise_seed, 0x6e6f697365ULL));
        const double sd = params.noise_sigma / 255.0;
        for (double& v : work.data) v += rng.normal(0.0, sd);
    }
    for (double& v : work.data) v = std::clamp(v, 0.0, 1.0);

    if (params.jpeg_quality > 0)
        work = jpeg_roundtrip(work, params.jpeg_quality);
    return work;
}

DegradationParams sample_params(Rng& rng) {
    DegradationParams p;
    p.scale = rng.uniform(1.0, 4.0);
    // Fixed draw order: blur gate, blur sigma, noise gate, noise sigma,
    // jpeg gate, jpeg quality, noise seed.
    if (rng.bernoulli(0.5)) {
        p.blur_sigma = rng.uniform(0.5, 1.5);
        p.blur_kernel = 5;
    } else {
        (void)rng.uniform();  // keep the stream aligned across branches
    }
    if (rng.bernoulli(0.5)) {
        p.noise_sigma = rng.uniform(5.0, 15.0);
    } else {
        (void)rng.uniform();
    }
    if (rng.bernoulli(0.5)) {
        p.jpeg_quality = static_cast<int>(rng.uniform_int(50, 100));
    } else {
        (void)rng.next_u64();
    }
    p.noise_seed = rng.next_u64();
    return p;
}

}  // namespace mr
