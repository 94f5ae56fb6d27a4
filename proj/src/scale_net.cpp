#include "mangares/scale_net.hpp"

#include <numeric>
#include <stdexcept>

namespace mr {

void SENetConfig::validate() const {
    if (n_downsample < 1) throw std::invalid_argument("SENetConfig: n_downsample must be >= 1");
    if (base_channels < 1) throw std::invalid_argument("SENetConfig: base_channels must be >= 1");
    if (!(s_min >= 1.0 && s_min < s_max))
        throw std::invalid_argument("SENetConfig: need 1 <= s_min < s_max");
}

nlohmann::json SENetConfig::to_json() const {
    return {{"n_downsample", n_downsample},
            {"base_channels", base_channels},
            {"cbam_reduction", cbam_reduction},
            {"s_min", s_min},
            {"s_max", s_max}};
}

SENetConfig SENetConfig::from_json(const nlohmann::json& j) {
    SENetConfig c;
    c.n_downsample = j.value("n_downsample", c.n_downsample);
    c.base_channels = j.value("base_channels", c.base_channels);
    c.cbam_reduction = j.value("cbam_reduction", c.cbam_reduction);
    c.s_min = j.value("s_min", c.s_min);
    c.s_max = j.value("s_max", c.s_max);
    c.validate();
    return c;
}

double scale_loss(double s_y, double s_gt) {
    if (s_y < 1.0 || s_gt < 1.0) throw std::invalid_argument("scale_loss: scales must be >= 1");
    return std::fabs(s_y - s_gt);
}

double consistency_loss(const std::vector<double>& patch_scales) {
    if (patch_scales.size() < 2)
        throw std::invalid_argument("consistency_loss: need at least two patches");
    const double mean = std::accumulate(patch_scales.begin(), patch_scales.end(), 0.0) /
                        static_cast<double>(patch_scales.size());
    double acc = 0.0;
    for (const double s : patch_scales) acc += std::fabs(s - mean);
    return acc / static_cast<double>(patch_scales.size());
}

double se_total_loss(double s_y, std::optional<double> s_gt,
                     const std::vector<double>& patch_scales) {
    const double cons = 0.1 * consistency_loss(patch_scales);
    return s_gt ? scale_loss(s_y, *s_gt) + cons : cons;
}

}  // namespace mr
