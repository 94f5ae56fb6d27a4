#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mangares/embedding.hpp"
#include "mangares/image.hpp"
#include "mangares/screentone.hpp"

namespace mr {

// Peak signal-to-noise ratio over mask==1 pixels (all pixels when mask is
// null), for unit dynamic range: 10*log10(1/MSE), capped at 100 dB once the
// masked MSE drops under 1e-10. Throws on shape mismatch or an empty mask.
double psnr(const Image& a, const Image& b, const BitonalMask* mask = nullptr);

// Windowed structural similarity (11x11 Gaussian window, sigma 1.5,
// stabilizers K1=0.01, K2=0.03 at unit dynamic range), averaged over masked
// window centers.
double ssim(const Image& a, const Image& b, const BitonalMask* mask = nullptr);

// Pixels whose screentone survives downsampling by s_gt: a region is
// identifiable iff its fundamental frequency stays strictly below Nyquist,
// 1/period < 0.5/s_gt; stochastic screens iff s_gt <= 2; line pixels and
// uncovered background always. Throws when a label falls outside
// [0, specs.size()) and is neither kLineLabel nor kBackgroundLabel.
BitonalMask identifiability_mask(const LabelMap& region_labels,
                                 const std::vector<ScreentoneSpec>& specs, double s_gt);

struct ScaleBucketStats {
    std::string name;
    int count = 0;
    double mean_rel_error = 0.0;
    double accuracy = 1.0;      // 1 - mean_rel_error
    double under_002 = 0.0;     // fraction with relative error < 0.02
};

struct VolumeStats {
    std::string volume;
    int count = 0;
    double mean_pred = 0.0;
    double stddev_pred = 0.0;  // population stddev
};

struct ScaleEvalReport {
    std::vector<ScaleBucketStats> buckets;  // [1,2], (2,3], (3,4], [1,4]
    std::vector<VolumeStats> volumes;

    const ScaleBucketStats& overall() const { return buckets.back(); }
    std::string to_json() const;
};

// Accuracy = 1 - mean(|pred - gt| / gt), bucketed by gt scale. Volumes are
// optional; pass an empty vector to skip per-volume statistics. Throws on
// empty or mismatched inputs.
ScaleEvalReport scale_eval(const std::vector<double>& preds, const std::vector<double>& gts,
                           const std::vector<std::string>& volume_ids = {});

struct RestoreImageEval {
    std::string id;
    double psnr_db = 0.0;
    double ssim_val = 0.0;
    double svae = 0.0;
    double mask_coverage = 0.0;  // identifiable fraction of the page
};

struct RestoreEvalReport {
    std::vector<RestoreImageEval> images;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    double mean_svae = 0.0;
    double mean_coverage = 0.0;

    std::string to_json() const;
    std::string to_csv() const;  // per-image table
};

// Score a restored page against its ground truth under the identifiability
// mask. SVAE uses the embedder; pass null to skip (value 0).
RestoreImageEval evaluate_restoration(const std::string& id, const Image& restored,
                                      const Image& gt, const BitonalMask& mask,
                                      const ScreenEmbedder* emb);

RestoreEvalReport aggregate_restoration(std::vector<RestoreImageEval> images);

}  // namespace mr
