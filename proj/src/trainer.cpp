#include "mangares/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "mangares/loss_graphs.hpp"
#include "mangares/nn/checkpoint.hpp"

namespace fs = std::filesystem;

namespace mr {

namespace {

Image crop_image(const Image& img, int y0, int x0, int h, int w) {
    Image out(h, w, img.channels);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
    return out;
}

LabelMap crop_labels(const LabelMap& labels, int y0, int x0, int h, int w) {
    LabelMap out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(y, x) = labels.at(y0 + y, x0 + x);
    return out;
}

// Bresenham-style schedule: exactly a supervised_fraction share of steps is
// supervised, evenly interleaved.
bool supervised_step(long iter, double fraction) {
    return std::floor(static_cast<double>(iter + 1) * fraction) >
           std::floor(static_cast<double>(iter) * fraction);
}

struct LossLog {
    std::ofstream out;

    LossLog(const std::string& path, bool append, const char* header) {
        const bool fresh = !append || !fs::exists(path);
        out.open(path, append ? std::ios::app : std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + path);
        if (fresh) out << header << '\n';
    }

    void line(long iter, const char* mode, std::initializer_list<double> vals) {
        char buf[64];
        out << iter << ',' << mode;
        for (const double v : vals) {
            std::snprintf(buf, sizeof(buf), "%.9g", v);
            out << ',' << buf;
        }
        out << '\n';
    }
};

void split_records(const DatasetManifest& manifest, std::vector<size_t>& paired,
                   std::vector<size_t>& unpaired) {
    for (size_t i = 0; i < manifest.records.size(); ++i)
        (manifest.records[i].paired ? paired : unpaired).push_back(i);
}

int fit_patch(int requested, int side_limit) {
    const int p = std::min(requested, side_limit);
    if (p < 16) throw std::runtime_error("trainer: page too small for a 16-pixel patch");
    return p;
}

// Cosine decay from cfg.lr at iteration 0 to cfg.lr_min at the last iteration;
// a pure function of the iteration index so resumed runs follow the same curve.
double scheduled_lr(const TrainConfig& cfg, long iter) {
    if (cfg.lr_min < 0.0 || cfg.iterations <= 1) return cfg.lr;
    const double u = static_cast<double>(iter) / static_cast<double>(cfg.iterations - 1);
    return cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + std::cos(u * std::numbers::pi));
}

}  // namespace

void TrainConfig::validate() const {
    if (lr <= 0.0) throw std::invalid_argument("train: lr must be positive");
    if (lr_min > lr) throw std::invalid_argument("train: lr_min must not exceed lr");
    if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0)
        throw std::invalid_argument("train: betas must lie in [0,1)");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be positive");
    if (iterations < 1) throw std::invalid_argument("train: iterations must be positive");
    if (patch_size < 16) throw std::invalid_argument("train: patch_size must be at least 16");
    if (supervised_fraction <= 0.0 || supervised_fraction > 1.0)
        throw std::invalid_argument("train: supervised_fraction must be in (0,1]");
    if (checkpoint_every < 0) throw std::invalid_argument("train: checkpoint_every must be >= 0");
    if (superpixel_target < 1) throw std::invalid_argument("train: superpixel_target must be >= 1");
    if (vote_patches < 1) throw std::invalid_argument("train: vote_patches must be >= 1");
    if (lambda_cons < 0.0) throw std::invalid_argument("train: lambda_cons must be >= 0");
    if (mr_weights.phi < 0.0 || mr_weights.omega < 0.0 || mr_weights.kappa < 0.0 ||
        mr_weights.gamma < 0.0)
        throw std::invalid_argument("train: loss weights must be >= 0");
    se.validate();
    mr.validate();
}

TrainConfig TrainConfig::from_config(const KeyValueConfig& kv) {
    TrainConfig c;
    c.lr = kv.get_double("lr", c.lr);
    c.lr_min = kv.get_double("lr_min", c.lr_min);
    c.adam_beta1 = kv.get_double("beta1", c.adam_beta1);
    c.adam_beta2 = kv.get_double("beta2", c.adam_beta2);
    c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
    c.iterations = static_cast<int>(kv.get_int("iterations", c.iterations));
    c.patch_size = static_cast<int>(kv.get_int("patch_size", c.patch_size));
    c.supervised_fraction = kv.get_double("supervised_fraction", c.supervised_fraction);
    c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long>(c.seed)));
    c.checkpoint_every = static_cast<int>(kv.get_int("checkpoint_every", c.checkpoint_every));
    c.out_dir = kv.get_str("out_dir", c.out_dir);
    c.resume_path = kv.get_str("resume", c.resume_path);
    c.data_log_path = kv.get_str("data_log", c.data_log_path);

    c.se.n_downsample = static_cast<int>(kv.get_int("se_n_downsample", c.se.n_downsample));
    c.se.base_channels = static_cast<int>(kv.get_int("se_base_channels", c.se.base_channels));
    c.se.cbam_reduction = static_cast<int>(kv.get_int("se_cbam_reduction", c.se.cbam_reduction));
    c.se.s_min = kv.get_double("se_s_min", c.se.s_min);
    c.se.s_max = kv.get_double("se_s_max", c.se.s_max);
    c.lambda_cons = kv.get_double("lambda_cons", c.lambda_cons);

    c.mr.base_channels = static_cast<int>(kv.get_int("mr_base_channels", c.mr.base_channels));
    c.mr.n_ram_blocks = static_cast<int>(kv.get_int("mr_n_ram", c.mr.n_ram_blocks));
    c.mr.noise_channels = static_cast<int>(kv.get_int("mr_noise_channels", c.mr.noise_channels));
    c.mr.s_max = kv.get_double("mr_s_max", c.mr.s_max);
    c.mr_weights.phi = kv.get_double("phi", c.mr_weights.phi);
    c.mr_weights.omega = kv.get_double("omega", c.mr_weights.omega);
    c.mr_weights.kappa = kv.get_double("kappa", c.mr_weights.kappa);
    c.mr_weights.gamma = kv.get_double("gamma", c.mr_weights.gamma);
    c.superpixel_target = static_cast<int>(kv.get_int("superpixel_target", c.superpixel_target));
    c.se_model_path = kv.get_str("se_model", c.se_model_path);
    c.vote_patches = static_cast<int>(kv.get_int("vote_patches", c.vote_patches));
    c.validate();
    return c;
}

TrainResult train_se(const TrainConfig& cfg, const DatasetManifest& manifest) {
    cfg.validate();
    std::vector<size_t> paired, unpaired;
    split_records(manifest, paired, unpaired);
    if (paired.empty()) throw std::runtime_error("train_se: no paired data");
    fs::create_directories(cfg.out_dir);

    ScaleNet<float> net(cfg.se, cfg.seed);
    nn::Adam<float> opt(net.params, cfg.lr, cfg.adam_beta1, cfg.adam_beta2);
    long start = 0;
    if (!cfg.resume_path.empty()) {
        if (nn::peek_checkpoint(cfg.resume_path).kind != "se")
            throw std::runtime_error("train_se: checkpoint is not a scale model");
        start = nn::load_checkpoint(cfg.resume_path, net.params, &opt).iteration;
    }

    DataAccess data(manifest, cfg.data_log_path);
    LossLog log(cfg.out_dir + "/losses.csv", !cfg.resume_path.empty(),
                "iteration,mode,total,scl,cons");

    double last = 0.0;
    for (long iter = start; iter < cfg.iterations; ++iter) {
        Rng rng(Rng::mix(cfg.seed, 0x17e50000ULL + static_cast<std::uint64_t>(iter)));
        const bool sup = unpaired.empty() || supervised_step(iter, cfg.supervised_fraction);
        const auto& pool = sup ? paired : unpaired;
        const size_t idx = pool[static_cast<size_t>(rng.uniform_int(0, static_cast<long>(pool.size()) - 1))];

        data.set_phase(sup ? "supervised" : "unsupervised");
        const Image& img = data.degraded(idx);
        const int p = fit_patch(cfg.patch_size, std::min(img.height, img.width));

        nn::Tensor<float> batch({cfg.batch_size, 1, p, p});
        for (int n = 0; n < cfg.batch_size; ++n) {
            const int y0 = static_cast<int>(rng.uniform_int(0, img.height - p));
            const int x0 = static_cast<int>(rng.uniform_int(0, img.width - p));
            for (int y = 0; y < p; ++y)
                for (int x = 0; x < p; ++x)
                    batch.data[(static_cast<size_t>(n) * p + y) * p + x] =
                        static_cast<float>(img.at(y0 + y, x0 + x));
        }

        net.params.zero_grad();
        auto out = net.forward(nn::make_const(std::move(batch)));
        std::optional<double> s_gt;
        if (sup) s_gt = manifest.records[idx].params->scale;
        auto loss = se_loss_graph<float>(out.scale, s_gt, cfg.lambda_cons);
        nn::backward(loss.total);
        opt.lr = scheduled_lr(cfg, iter);
        opt.step(net.params);

        last = loss.total->value.data[0];
        log.line(iter + 1, sup ? "sup" : "unsup",
                 {last, sup ? static_cast<double>(loss.scl->value.data[0]) : 0.0,
                  static_cast<double>(loss.cons->value.data[0])});

        if (cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0 &&
            iter + 1 < cfg.iterations) {
            char name[64];
            std::snprintf(name, sizeof(name), "/se_iter%06ld.ckpt", iter + 1);
            nn::save_checkpoint(cfg.out_dir + name, "se", cfg.se.to_json(), net.params, &opt,
                                iter + 1);
        }
    }

    const std::string final_path = cfg.out_dir + "/se_final.ckpt";
    nn::save_checkpoint(final_path, "se", cfg.se.to_json(), net.params, &opt, cfg.iterations);
    return {final_path, cfg.iterations - start, last};
}

TrainResult train_mr(const TrainConfig& cfg, const DatasetManifest& manifest) {
    cfg.validate();
    std::vector<size_t> paired, unpaired;
    split_records(manifest, paired, unpaired);
    if (paired.empty()) throw std::runtime_error("train_mr: no paired data");
    fs::create_directories(cfg.out_dir);

    std::optional<ScaleNet<float>> se_net;
    if (!unpaired.empty()) {
        if (cfg.se_model_path.empty())
            throw std::runtime_error(
                "train_mr: unpaired records present but no frozen scale model given");
        se_net.emplace(load_scale_net(cfg.se_model_path));
    }
    const ScreenEmbedder* emb =
        cfg.mr_weights.gamma != 0.0 ? &ScreenEmbedder::default_instance() : nullptr;

    RestoreNet<float> net(cfg.mr, cfg.seed);
    nn::Adam<float> opt(net.params, cfg.lr, cfg.adam_beta1, cfg.adam_beta2);
    long start = 0;
    if (!cfg.resume_path.empty()) {
        if (nn::peek_checkpoint(cfg.resume_path).kind != "mr")
            throw std::runtime_error("train_mr: checkpoint is not a restoration model");
        start = nn::load_checkpoint(cfg.resume_path, net.params, &opt).iteration;
    }

    DataAccess data(manifest, cfg.data_log_path);
    LossLog log(cfg.out_dir + "/losses.csv", !cfg.resume_path.empty(),
                "iteration,mode,total,pix,conf,bin,itn,hom");

    // Scales for unpaired records come from the frozen scale model, estimated
    // once per record on the degraded page alone.
    std::unordered_map<size_t, double> scale_cache;
    const auto unpaired_scale = [&](size_t idx) {
        auto it = scale_cache.find(idx);
        if (it != scale_cache.end()) return it->second;
        const Image& img = data.degraded(idx);
        const int vp = fit_patch(cfg.patch_size, std::min(img.height, img.width));
        double s = estimate_scale_voted(*se_net, img, cfg.vote_patches, vp).scale;
        s = std::clamp(s, 1.0, cfg.mr.s_max);
        scale_cache.emplace(idx, s);
        return s;
    };

    double last = 0.0;
    for (long iter = start; iter < cfg.iterations; ++iter) {
        Rng rng(Rng::mix(cfg.seed, 0x36600000ULL + static_cast<std::uint64_t>(iter)));
        const bool sup = unpaired.empty() || supervised_step(iter, cfg.supervised_fraction);
        const auto& pool = sup ? paired : unpaired;
        const size_t idx = pool[static_cast<size_t>(rng.uniform_int(0, static_cast<long>(pool.size()) - 1))];
        data.set_phase(sup ? "supervised" : "unsupervised");

        const int N = cfg.batch_size;
        nn::NodePtr<float> x, gt, ref;
        std::vector<std::vector<int>> sp_labels;
        double s_eff = 1.0;
        std::uint64_t noise_seed = 0;

        if (sup) {
            const DatasetRecord& rec = manifest.records[idx];
            const Image& page = data.gt(idx);
            const LabelMap& labels = data.labels(idx);
            const double s_rec = rec.params->scale;
            const int side = std::min(page.height, page.width);
            const int p = fit_patch(cfg.patch_size,
                                    static_cast<int>(std::floor(side / s_rec)));
            const int q = scaled_side(p, s_rec);
            s_eff = static_cast<double>(q) / p;

            nn::Tensor<float> xb({N, 1, p, p}), gtb({N, 1, q, q}), refb({N, 1, q, q});
            for (int n = 0; n < N; ++n) {
                const int y0 = static_cast<int>(rng.uniform_int(0, page.height - q));
                const int x0 = static_cast<int>(rng.uniform_int(0, page.width - q));
                const Image gt_crop = crop_image(page, y0, x0, q, q);

                DegradationParams dp = *rec.params;
                dp.scale = s_eff;
                dp.noise_seed = rng.next_u64();
                const Image in_crop = degrade(gt_crop, dp);
                if (in_crop.height != p || in_crop.width != p)
                    throw std::logic_error("train_mr: crop degradation size drift");

                const Image ref_crop = gaussian_blur(gt_crop, 11, 11.0 / 4.0);
                const size_t hw_p = static_cast<size_t>(p) * p, hw_q = static_cast<size_t>(q) * q;
                std::copy(in_crop.data.begin(), in_crop.data.end(), xb.data.begin() + n * hw_p);
                std::copy(gt_crop.data.begin(), gt_crop.data.end(), gtb.data.begin() + n * hw_q);
                std::copy(ref_crop.data.begin(), ref_crop.data.end(), refb.data.begin() + n * hw_q);

                if (emb) {
                    const LabelMap lab_crop = crop_labels(labels, y0, x0, q, q);
                    const auto part = superpixels(gt_crop, &lab_crop, cfg.superpixel_target);
                    sp_labels.emplace_back(part.labels.data.begin(), part.labels.data.end());
                }
            }
            x = nn::make_const(std::move(xb));
            gt = nn::make_const(std::move(gtb));
            ref = nn::make_const(std::move(refb));
        } else {
            const double s = unpaired_scale(idx);
            const Image& page = data.degraded(idx);
            const int p = fit_patch(cfg.patch_size, std::min(page.height, page.width));
            const int q = scaled_side(p, s);
            s_eff = static_cast<double>(q) / p;

            nn::Tensor<float> xb({N, 1, p, p}), refb({N, 1, q, q});
            for (int n = 0; n < N; ++n) {
                const int y0 = static_cast<int>(rng.uniform_int(0, page.height - p));
                const int x0 = static_cast<int>(rng.uniform_int(0, page.width - p));
                const Image in_crop = crop_image(page, y0, x0, p, p);
                const Image up = resample(in_crop, q, q, Filter::Bicubic);
                const Image ref_crop = gaussian_blur(up, 11, 11.0 / 4.0);
                const size_t hw_p = static_cast<size_t>(p) * p, hw_q = static_cast<size_t>(q) * q;
                std::copy(in_crop.data.begin(), in_crop.data.end(), xb.data.begin() + n * hw_p);
                std::copy(ref_crop.data.begin(), ref_crop.data.end(), refb.data.begin() + n * hw_q);
            }
            x = nn::make_const(std::move(xb));
            ref = nn::make_const(std::move(refb));
        }

        noise_seed = Rng::mix(cfg.seed, 0x5eed0000ULL + static_cast<std::uint64_t>(iter));
        net.params.zero_grad();
        auto out = net.forward(x, s_eff, noise_seed);
        auto loss = mr_loss_graph<float>(out.restored, out.confidence, gt, ref,
                                         sp_labels.empty() ? nullptr : &sp_labels, emb,
                                         cfg.mr_weights);
        nn::backward(loss.total);
        opt.lr = scheduled_lr(cfg, iter);
        opt.step(net.params);

        last = loss.total->value.data[0];
        log.line(iter + 1, sup ? "sup" : "unsup",
                 {last, loss.value(loss.pix), loss.value(loss.conf), loss.value(loss.bin),
                  loss.value(loss.itn), loss.value(loss.hom)});

        if (cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0 &&
            iter + 1 < cfg.iterations) {
            char name[64];
            std::snprintf(name, sizeof(name), "/mr_iter%06ld.ckpt", iter + 1);
            nn::save_checkpoint(cfg.out_dir + name, "mr", cfg.mr.to_json(), net.params, &opt,
                                iter + 1);
        }
    }

    const std::string final_path = cfg.out_dir + "/mr_final.ckpt";
    nn::save_checkpoint(final_path, "mr", cfg.mr.to_json(), net.params, &opt, cfg.iterations);
    return {final_path, cfg.iterations - start, last};
}

ScaleNet<float> load_scale_net(const std::string& ckpt_path) {
    const auto header = nn::peek_checkpoint(ckpt_path);
    if (header.kind != "se")
        throw std::runtime_error("not a scale-model checkpoint: " + ckpt_path);
    ScaleNet<float> net(SENetConfig::from_json(header.config), 0);
    nn::load_checkpoint(ckpt_path, net.params);
    return net;
}

RestoreNet<float> load_restore_net(const std::string& ckpt_path) {
    const auto header = nn::peek_checkpoint(ckpt_path);
    if (header.kind != "mr")
        throw std::runtime_error("not a restoration-model checkpoint: " + ckpt_path);
    RestoreNet<float> net(MRNetConfig::from_json(header.config), 0);
    nn::load_checkpoint(ckpt_path, net.params);
    return net;
}

}  // namespace mr
