#include "mangares/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

using nlohmann::json;

namespace mr {

namespace {

void check_pair(const Image& a, const Image& b, const BitonalMask* mask) {
    if (!a.same_shape(b)) throw std::invalid_argument("metric: image shape mismatch");
    if (a.size() == 0) throw std::invalid_argument("metric: empty image");
    if (mask && (mask->height != a.height || mask->width != a.width))
        throw std::invalid_argument("metric: mask shape mismatch");
    if (mask && mask->count() == 0) throw std::invalid_argument("metric: empty mask");
}

Image elem_product(const Image& a, const Image& b) {
    Image out(a.height, a.width, a.channels);
    for (size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] * b.data[i];
    return out;
}

}  // namespace

double psnr(const Image& a, const Image& b, const BitonalMask* mask) {
    check_pair(a, b, mask);
    const size_t hw = static_cast<size_t>(a.height) * a.width;
    double acc = 0.0;
    size_t n = 0;
    for (int c = 0; c < a.channels; ++c) {
        for (size_t i = 0; i < hw; ++i) {
            if (mask && !mask->data[i]) continue;
            const double d = a.data[c * hw + i] - b.data[c * hw + i];
            acc += d * d;
            ++n;
        }
    }
    const double mse = acc / static_cast<double>(n);
    if (mse < 1e-10) return 100.0;
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Image& a, const Image& b, const BitonalMask* mask) {
    check_pair(a, b, mask);
    constexpr int kWin = 11;
    constexpr double kSigma = 1.5;
    constexpr double kC1 = 0.01 * 0.01;  // (K1*L)^2 at unit dynamic range
    constexpr double kC2 = 0.03 * 0.03;

    const Image mu_a = gaussian_blur(a, kWin, kSigma);
    const Image mu_b = gaussian_blur(b, kWin, kSigma);
    const Image m_aa = gaussian_blur(elem_product(a, a), kWin, kSigma);
    const Image m_bb = gaussian_blur(elem_product(b, b), kWin, kSigma);
    const Image m_ab = gaussian_blur(elem_product(a, b), kWin, kSigma);

    const size_t hw = static_cast<size_t>(a.height) * a.width;
    double acc = 0.0;
    size_t n = 0;
    for (int c = 0; c < a.channels; ++c) {
        for (size_t i = 0; i < hw; ++i) {
            if (mask && !mask->data[i]) continue;
            const size_t j = c * hw + i;
            const double ma = mu_a.data[j], mb = mu_b.data[j];
            const double va = m_aa.data[j] - ma * ma;
            const double vb = m_bb.data[j] - mb * mb;
            const double vab = m_ab.data[j] - ma * mb;
            const double num = (2.0 * ma * mb + kC1) * (2.0 * vab + kC2);
            const double den = (ma * ma + mb * mb + kC1) * (va + vb + kC2);
            acc += num / den;
            ++n;
        }
    }
    return acc / static_cast<double>(n);
}

BitonalMask identifiability_mask(const LabelMap& region_labels,
                                 const std::vector<ScreentoneSpec>& specs, double s_gt) {
    if (s_gt < 1.0) throw std::invalid_argument("identifiability_mask: s_gt must be >= 1");
    // Per-region verdict: fundamental frequency strictly below the
    // downsampled Nyquist limit.
    std::vector<std::uint8_t> keep(specs.size());
    for (size_t r = 0; r < specs.size(); ++r) {
        const ScreentoneSpec& s = specs[r];
        keep[r] = s.kind == ToneKind::Stochastic ? (s_gt <= 2.0)
                                                 : (1.0 / s.period < 0.5 / s_gt);
    }
    BitonalMask mask(region_labels.height, region_labels.width);
    for (size_t i = 0; i < region_labels.data.size(); ++i) {
        const int lab = region_labels.data[i];
        if (lab == kLineLabel || lab == kBackgroundLabel) {
            mask.data[i] = 1;
        } else if (lab >= 0 && static_cast<size_t>(lab) < specs.size()) {
            mask.data[i] = keep[static_cast<size_t>(lab)];
        } else {
            throw std::invalid_argument("identifiability_mask: label " + std::to_string(lab) +
                                        " has no spec");
        }
    }
    return mask;
}

ScaleEvalReport scale_eval(const std::vector<double>& preds, const std::vector<double>& gts,
                           const std::vector<std::string>& volume_ids) {
    if (preds.empty()) throw std::invalid_argument("scale_eval: empty input");
    if (preds.size() != gts.size()) throw std::invalid_argument("scale_eval: length mismatch");
    if (!volume_ids.empty() && volume_ids.size() != preds.size())
        throw std::invalid_argument("scale_eval: volume_ids length mismatch");

    struct Acc {
        int count = 0;
        double rel_sum = 0.0;
        int under = 0;
    };
    Acc acc[4];  // [1,2], (2,3], (3,4], overall
    for (size_t i = 0; i < preds.size(); ++i) {
        const double gt = gts[i];
        if (gt <= 0.0) throw std::invalid_argument("scale_eval: nonpositive gt scale");
        const double rel = std::abs(preds[i] - gt) / gt;
        const int bucket = (gt >= 1.0 && gt <= 2.0) ? 0 : (gt > 2.0 && gt <= 3.0) ? 1
                           : (gt > 3.0 && gt <= 4.0) ? 2 : -1;
        for (const int k : {bucket, 3}) {
            if (k < 0) continue;
            ++acc[k].count;
            acc[k].rel_sum += rel;
            if (rel < 0.02) ++acc[k].under;
        }
    }

    ScaleEvalReport report;
    const char* names[4] = {"[1,2]", "(2,3]", "(3,4]", "[1,4]"};
    for (int k = 0; k < 4; ++k) {
        ScaleBucketStats b;
        b.name = names[k];
        b.count = acc[k].count;
        if (acc[k].count > 0) {
            b.mean_rel_error = acc[k].rel_sum / acc[k].count;
            b.under_002 = static_cast<double>(acc[k].under) / acc[k].count;
        }
        b.accuracy = 1.0 - b.mean_rel_error;
        report.buckets.push_back(std::move(b));
    }

    if (!volume_ids.empty()) {
        std::map<std::string, std::vector<double>> by_volume;
        for (size_t i = 0; i < preds.size(); ++i) by_volume[volume_ids[i]].push_back(preds[i]);
        for (const auto& [vol, vals] : by_volume) {
            VolumeStats v;
            v.volume = vol;
            v.count = static_cast<int>(vals.size());
            double mean = 0.0;
            for (const double x : vals) mean += x;
            mean /= static_cast<double>(vals.size());
            double var = 0.0;
            for (const double x : vals) var += (x - mean) * (x - mean);
            var /= static_cast<double>(vals.size());
            v.mean_pred = mean;
            v.stddev_pred = std::sqrt(var);
            report.volumes.push_back(std::move(v));
        }
    }
    return report;
}

std::string ScaleEvalReport::to_json() const {
    json j;
    j["buckets"] = json::array();
    for (const auto& b : buckets)
        j["buckets"].push_back(json{{"range", b.name},
                                    {"count", b.count},
                                    {"mean_rel_error", b.mean_rel_error},
                                    {"accuracy", b.accuracy},
                                    {"frac_rel_error_lt_002", b.under_002}});
    j["volumes"] = json::array();
    for (const auto& v : volumes)
        j["volumes"].push_back(json{{"volume", v.volume},
                                    {"count", v.count},
                                    {"mean_pred", v.mean_pred},
                                    {"stddev_pred", v.stddev_pred}});
    return j.dump(2);
}

RestoreImageEval evaluate_restoration(const std::string& id, const Image& restored,
                                      const Image& gt, const BitonalMask& mask,
                                      const ScreenEmbedder* emb) {
    RestoreImageEval e;
    e.id = id;
    e.psnr_db = psnr(restored, gt, &mask);
    e.ssim_val = ssim(restored, gt, &mask);
    e.svae = emb ? svae_distance(restored, gt, mask, *emb) : 0.0;
    e.mask_coverage =
        static_cast<double>(mask.count()) / (static_cast<double>(mask.height) * mask.width);
    return e;
}

RestoreEvalReport aggregate_restoration(std::vector<RestoreImageEval> images) {
    if (images.empty()) throw std::invalid_argument("aggregate_restoration: no images");
    RestoreEvalReport r;
    for (const auto& e : images) {
        r.mean_psnr += e.psnr_db;
        r.mean_ssim += e.ssim_val;
        r.mean_svae += e.svae;
        r.mean_coverage += e.mask_coverage;
    }
    const double n = static_cast<double>(images.size());
    r.mean_psnr /= n;
    r.mean_ssim /= n;
    r.mean_svae /= n;
    r.mean_coverage /= n;
    r.images = std::move(images);
    return r;
}

std::string RestoreEvalReport::to_json() const {
    json j;
    j["aggregate"] = json{{"psnr", mean_psnr},
                          {"ssim", mean_ssim},
                          {"svae", mean_svae},
                          {"mask_coverage", mean_coverage},
                          {"n_images", images.size()}};
    j["images"] = json::array();
    for (const auto& e : images)
        j["images"].push_back(json{{"id", e.id},
                                   {"psnr", e.psnr_db},
                                   {"ssim", e.ssim_val},
                                   {"svae", e.svae},
                                   {"mask_coverage", e.mask_coverage}});
    return j.dump(2);
}

std::string RestoreEvalReport::to_csv() const {
    std::ostringstream out;
    out << "id,psnr,ssim,svae,mask_coverage\n" << std::setprecision(10);
    for (const auto& e : images)
        out << e.id << ',' << e.psnr_db << ',' << e.ssim_val << ',' << e.svae << ','
            << e.mask_coverage << '\n';
    return out.str();
}

}  // namespace mr
