#include "mangares/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mangares/dataset.hpp"
#include "mangares/metrics.hpp"
#include "mangares/trainer.hpp"

namespace fs = std::filesystem;

namespace mr::cli {

namespace {

void print_kv(const char* key, double v) { std::printf("%s=%.6f\n", key, v); }

int auto_patch(int requested, const Image& img) {
    int p = requested > 0 ? requested : 96;
    p = std::min({p, img.height, img.width});
    if (p < 16) throw std::runtime_error("image too small for a 16-pixel patch");
    return p;
}

// std::to_string keeps only 6 fixed decimals, which zeroes small rates.
std::string num(double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.17g", v);
    return b;
}

// Shared flags for the two training subcommands.
struct TrainArgs {
    std::string dataset;
    std::string config_file;
    std::vector<std::string> sets;
    std::optional<long> iterations, batch_size, patch_size, checkpoint_every;
    std::optional<long> seed;
    std::optional<double> lr, lr_min;
    std::string out_dir, resume, se_model, data_log;

    void add_to(CLI::App* sub) {
        sub->add_option("--dataset", dataset, "dataset directory with manifest.jsonl")
            ->required()
            ->check(CLI::ExistingDirectory);
        sub->add_option("--config", config_file, "key=value training config file")
            ->check(CLI::ExistingFile);
        sub->add_option("--set", sets, "config override KEY=VALUE (repeatable)");
        sub->add_option("--iterations", iterations);
        sub->add_option("--batch-size", batch_size);
        sub->add_option("--patch-size", patch_size);
        sub->add_option("--checkpoint-every", checkpoint_every);
        sub->add_option("--seed", seed);
        sub->add_option("--lr", lr);
        sub->add_option("--lr-min", lr_min, "cosine-decay lr floor (omit for constant lr)");
        sub->add_option("--out-dir", out_dir, "run directory for checkpoints and logs");
        sub->add_option("--resume", resume, "checkpoint to resume from")
            ->check(CLI::ExistingFile);
        sub->add_option("--data-log", data_log, "data-access audit log path");
    }

    TrainConfig build() const {
        KeyValueConfig kv;
        if (!config_file.empty()) kv = KeyValueConfig::from_file(config_file);
        for (const auto& s : sets) kv.apply_line(s);
        if (iterations) kv.set("iterations", std::to_string(*iterations));
        if (batch_size) kv.set("batch_size", std::to_string(*batch_size));
        if (patch_size) kv.set("patch_size", std::to_string(*patch_size));
        if (checkpoint_every) kv.set("checkpoint_every", std::to_string(*checkpoint_every));
        if (seed) kv.set("seed", std::to_string(*seed));
        if (lr) kv.set("lr", num(*lr));
        if (lr_min) kv.set("lr_min", num(*lr_min));
        if (!out_dir.empty()) kv.set("out_dir", out_dir);
        if (!resume.empty()) kv.set("resume", resume);
        if (!se_model.empty()) kv.set("se_model", se_model);
        if (!data_log.empty()) kv.set("data_log", data_log);
        return TrainConfig::from_config(kv);
    }
};

void cmd_synth(CLI::App* sub) {
    struct Args {
        int pages = 0;
        std::string out;
        std::uint64_t seed = 1;
        int height = 384, width = 384, volume_size = 20;
    };
    auto a = std::make_shared<Args>();
    sub->add_option("--pages", a->pages, "number of pages to render")->required();
    sub->add_option("--out", a->out, "dataset directory")->required();
    sub->add_option("--seed", a->seed);
    sub->add_option("--height", a->height);
    sub->add_option("--width", a->width);
    sub->add_option("--volume-size", a->volume_size, "pages per volume label");
    sub->callback([a] {
        SynthOptions so;
        so.page_h = a->height;
        so.page_w = a->width;
        so.volume_size = a->volume_size;
        std::cerr << "rendering " << a->pages << " pages into " << a->out << "\n";
        synth_pages(a->pages, a->out, a->seed, so);
        std::printf("manifest=%s/manifest.jsonl\n", a->out.c_str());
    });
}

void cmd_degrade(CLI::App* sub) {
    struct Args {
        std::string dataset, in, out;
        std::uint64_t seed = 1;
        double scale = 0.0;  // dataset mode: fixed scale; file mode: required
        double unpaired = 0.0;
        bool no_blur = false, no_noise = false, no_jpeg = false;
        double blur_sigma = 0.0, noise_sigma = 0.0;
        int jpeg_quality = 0;
        std::uint64_t noise_seed = 0;
    };
    auto a = std::make_shared<Args>();
    auto* ds = sub->add_option("--dataset", a->dataset, "degrade a synthesized dataset in place")
                   ->check(CLI::ExistingDirectory);
    auto* in = sub->add_option("--in", a->in, "degrade a single image")->check(CLI::ExistingFile);
    in->excludes(ds);
    sub->add_option("--out", a->out, "output image (single-image mode)")->needs(in);
    sub->add_option("--seed", a->seed);
    sub->add_option("--scale", a->scale, "fixed downsampling factor");
    sub->add_option("--unpaired-fraction", a->unpaired)->needs(ds);
    sub->add_flag("--no-blur", a->no_blur)->needs(ds);
    sub->add_flag("--no-noise", a->no_noise)->needs(ds);
    sub->add_flag("--no-jpeg", a->no_jpeg)->needs(ds);
    sub->add_option("--blur-sigma", a->blur_sigma)->needs(in);
    sub->add_option("--noise-sigma", a->noise_sigma, "in 8-bit units")->needs(in);
    sub->add_option("--jpeg-quality", a->jpeg_quality)->needs(in);
    sub->add_option("--noise-seed", a->noise_seed)->needs(in);
    sub->callback([a] {
        if (!a->dataset.empty()) {
            auto manifest = DatasetManifest::load(a->dataset);
            DegradeOptions o;
            o.unpaired_fraction = a->unpaired;
            if (a->scale > 0.0) o.fixed_scale = a->scale;
            o.enable_blur = !a->no_blur;
            o.enable_noise = !a->no_noise;
            o.enable_jpeg = !a->no_jpeg;
            std::cerr << "degrading " << manifest.records.size() << " pages\n";
            degrade_dataset(manifest, a->seed, o);
            std::printf("manifest=%s/manifest.jsonl\n", a->dataset.c_str());
        } else if (!a->in.empty()) {
            if (a->out.empty()) throw CLI::ValidationError("degrade", "--out is required with --in");
            if (a->scale <= 0.0)
                throw CLI::ValidationError("degrade", "--scale is required with --in");
            DegradationParams p;
            p.scale = a->scale;
            p.blur_sigma = a->blur_sigma;
            p.noise_sigma = a->noise_sigma;
            p.jpeg_quality = a->jpeg_quality;
            p.noise_seed = a->noise_seed;
            save_image(degrade(load_image(a->in), p), a->out);
            std::printf("output=%s\n", a->out.c_str());
        } else {
            throw CLI::ValidationError("degrade", "give either --dataset or --in");
        }
    });
}

void cmd_embed_fit(CLI::App* sub) {
    struct Args {
        std::string out = "assets/screen_embedding.json";
        std::uint64_t seed = 1;
    };
    auto a = std::make_shared<Args>();
    sub->add_option("--out", a->out, "embedding asset path");
    sub->add_option("--seed", a->seed);
    sub->callback([a] {
        std::cerr << "fitting screentone embedding (renders a pattern bank)\n";
        const auto parent = std::filesystem::path(a->out).parent_path();
        if (!parent.empty()) std::filesystem::create_directories(parent);
        ScreenEmbedder::fit(a->seed).save(a->out);
        std::printf("asset=%s\n", a->out.c_str());
    });
}

void cmd_train_se(CLI::App* sub) {
    auto a = std::make_shared<TrainArgs>();
    a->add_to(sub);
    sub->callback([a] {
        const auto cfg = a->build();
        const auto manifest = DatasetManifest::load(a->dataset);
        std::cerr << "training scale estimator for " << cfg.iterations << " iterations\n";
        const auto result = train_se(cfg, manifest);
        std::printf("checkpoint=%s\n", result.checkpoint_path.c_str());
        print_kv("final_loss", result.final_loss);
    });
}

void cmd_train_mr(CLI::App* sub) {
    auto a = std::make_shared<TrainArgs>();
    a->add_to(sub);
    sub->add_option("--se-model", a->se_model, "frozen scale model for unpaired batches")
        ->check(CLI::ExistingFile);
    sub->callback([a] {
        const auto cfg = a->build();
        const auto manifest = DatasetManifest::load(a->dataset);
        std::cerr << "training restorer for " << cfg.iterations << " iterations\n";
        const auto result = train_mr(cfg, manifest);
        std::printf("checkpoint=%s\n", result.checkpoint_path.c_str());
        print_kv("final_loss", result.final_loss);
    });
}

void cmd_estimate(CLI::App* sub) {
    struct Args {
        std::string in, model;
        int patches = 8, patch_size = 0;
    };
    auto a = std::make_shared<Args>();
    sub->add_option("--in", a->in)->required()->check(CLI::ExistingFile);
    sub->add_option("--model", a->model, "scale-model checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--patches", a->patches, "voting patches");
    sub->add_option("--patch-size", a->patch_size, "0 = auto");
    sub->callback([a] {
        const auto net = load_scale_net(a->model);
        const Image img = load_image(a->in);
        const auto est = estimate_scale_voted(net, img, a->patches, auto_patch(a->patch_size, img));
        print_kv("scale", est.scale);
        std::printf("patch,y,x,scale,confidence\n");
        for (size_t i = 0; i < est.per_patch.size(); ++i) {
            const auto& p = est.per_patch[i];
            std::printf("%zu,%d,%d,%.6f,%.6f\n", i, p.y, p.x, p.scale, p.confidence);
        }
    });
}

void cmd_restore(CLI::App* sub) {
    struct Args {
        std::string in, out, model, se_model, confidence_out;
        double scale = 0.0;
        std::uint64_t noise_seed = 0;
        int patches = 8, patch_size = 0;
        bool binarize_out = false;
    };
    auto a = std::make_shared<Args>();
    sub->add_option("--in", a->in)->required()->check(CLI::ExistingFile);
    sub->add_option("--out", a->out, "restored image path")->required();
    sub->add_option("--model", a->model, "restoration checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    auto* sc = sub->add_option("--scale", a->scale, "upscaling factor in [1,4]");
    sub->add_option("--se-model", a->se_model, "estimate the scale with this model")
        ->check(CLI::ExistingFile)
        ->excludes(sc);
    sub->add_option("--confidence-out", a->confidence_out, "write the confidence map here");
    sub->add_option("--noise-seed", a->noise_seed);
    sub->add_option("--patches", a->patches, "voting patches for --se-model");
    sub->add_option("--patch-size", a->patch_size, "0 = auto");
    sub->add_flag("--binarize", a->binarize_out, "threshold the output at 0.5");
    sub->callback([a] {
        const auto net = load_restore_net(a->model);
        const Image img = load_image(a->in);
        double s = a->scale;
        if (s <= 0.0) {
            if (a->se_model.empty())
                throw CLI::ValidationError("restore", "give --scale or --se-model");
            const auto se = load_scale_net(a->se_model);
            s = estimate_scale_voted(se, img, a->patches, auto_patch(a->patch_size, img)).scale;
            s = std::clamp(s, 1.0, net.cfg.s_max);
            std::cerr << "estimated scale " << s << "\n";
        }
        const auto out = mr_forward(net, img, s, a->noise_seed);
        if (a->binarize_out) {
            save_image(mask_to_image(binarize(out.restored, 0.5)), a->out);
        } else {
            save_image(out.restored, a->out);
        }
        if (!a->confidence_out.empty()) save_image(out.confidence, a->confidence_out);
        print_kv("scale", s);
        std::printf("output=%s\n", a->out.c_str());
        if (!a->confidence_out.empty()) std::printf("confidence=%s\n", a->confidence_out.c_str());
    });
}

void cmd_evaluate(CLI::App* sub) {
    struct Args {
        std::string dataset, se_model, mr_model, restored_dir, report, csv;
        int patches = 8, patch_size = 0, limit = 0;
        std::uint64_t noise_seed = 0;
    };
    auto a = std::make_shared<Args>();
    sub->add_option("--dataset", a->dataset)->required()->check(CLI::ExistingDirectory);
    auto* se = sub->add_option("--se-model", a->se_model, "evaluate scale estimation")
                   ->check(CLI::ExistingFile);
    auto* mrm = sub->add_option("--mr-model", a->mr_model, "evaluate restoration quality")
                    ->check(CLI::ExistingFile);
    auto* rd = sub->add_option("--restored-dir", a->restored_dir,
                               "evaluate external restored pages named <id>.png")
                   ->check(CLI::ExistingDirectory);
    se->excludes(mrm)->excludes(rd);
    mrm->excludes(rd);
    sub->add_option("--report", a->report, "JSON report path");
    sub->add_option("--csv", a->csv, "per-image CSV path");
    sub->add_option("--patches", a->patches);
    sub->add_option("--patch-size", a->patch_size, "0 = auto");
    sub->add_option("--limit", a->limit, "evaluate only the first N paired records");
    sub->add_option("--noise-seed", a->noise_seed);
    sub->callback([a] {
        const auto manifest = DatasetManifest::load(a->dataset);
        std::vector<size_t> eval_set;
        for (size_t i = 0; i < manifest.records.size(); ++i)
            if (manifest.records[i].paired) eval_set.push_back(i);
        if (a->limit > 0 && eval_set.size() > static_cast<size_t>(a->limit))
            eval_set.resize(static_cast<size_t>(a->limit));
        if (eval_set.empty()) throw std::runtime_error("evaluate: no paired records");

        if (!a->se_model.empty()) {
            const auto net = load_scale_net(a->se_model);
            std::vector<double> preds, gts;
            std::vector<std::string> volumes;
            std::string csv = "id,pred,gt,rel_error,volume\n";
            for (const size_t i : eval_set) {
                const auto& rec = manifest.records[i];
                const Image img = load_image(manifest.resolve(rec.degraded_path));
                const double pred =
                    estimate_scale_voted(net, img, a->patches, auto_patch(a->patch_size, img))
                        .scale;
                const double gt = rec.params->scale;
                preds.push_back(pred);
                gts.push_back(gt);
                volumes.push_back(rec.volume);
                char line[160];
                std::snprintf(line, sizeof(line), "%s,%.6f,%.6f,%.6f,%s\n", rec.id.c_str(), pred,
                              gt, std::abs(pred - gt) / gt, rec.volume.c_str());
                csv += line;
            }
            const auto report = scale_eval(preds, gts, volumes);
            if (!a->report.empty()) std::ofstream(a->report) << report.to_json() << '\n';
            if (!a->csv.empty()) std::ofstream(a->csv) << csv;
            print_kv("accuracy", report.overall().accuracy);
            print_kv("mean_rel_error", report.overall().mean_rel_error);
            print_kv("frac_rel_error_lt_002", report.overall().under_002);
            return;
        }

        if (a->mr_model.empty() && a->restored_dir.empty())
            throw CLI::ValidationError("evaluate",
                                       "give one of --se-model, --mr-model, --restored-dir");
        std::optional<RestoreNet<float>> net;
        if (!a->mr_model.empty()) net.emplace(load_restore_net(a->mr_model));
        const ScreenEmbedder& emb = ScreenEmbedder::default_instance();

        std::vector<RestoreImageEval> evals;
        for (const size_t i : eval_set) {
            const auto& rec = manifest.records[i];
            const Image gt = load_image(manifest.resolve(rec.gt_path));
            const LabelMap labels = load_label_map(manifest.resolve(rec.labels_path));
            const double s_gt = rec.params->scale;

            Image restored;
            if (net) {
                const Image degraded = load_image(manifest.resolve(rec.degraded_path));
                const double s =
                    std::min(static_cast<double>(gt.height) / degraded.height, net->cfg.s_max);
                restored = mr_forward(*net, degraded, s, a->noise_seed).restored;
            } else {
                restored = load_image(a->restored_dir + "/" + rec.id + ".png");
            }

            const int h = std::min(gt.height, restored.height);
            const int w = std::min(gt.width, restored.width);
            const auto crop = [&](const Image& im) {
                Image out(h, w, 1);
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) out.at(y, x) = im.at(y, x);
                return out;
            };
            LabelMap lab(h, w);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) lab.at(y, x) = labels.at(y, x);
            const BitonalMask mask = identifiability_mask(lab, rec.specs, s_gt);
            if (mask.count() == 0) continue;  // nothing identifiable on this page
            evals.push_back(evaluate_restoration(rec.id, crop(restored), crop(gt), mask, &emb));
        }
        if (evals.empty()) throw std::runtime_error("evaluate: no identifiable regions in set");
        const auto report = aggregate_restoration(std::move(evals));
        if (!a->report.empty()) std::ofstream(a->report) << report.to_json() << '\n';
        if (!a->csv.empty()) std::ofstream(a->csv) << report.to_csv();
        print_kv("psnr", report.mean_psnr);
        print_kv("ssim", report.mean_ssim);
        print_kv("svae", report.mean_svae);
    });
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"bitonal manga screentone restoration toolkit"};
    app.require_subcommand(1);
    cmd_synth(app.add_subcommand("synth", "render a synthetic screentone dataset"));
    cmd_degrade(app.add_subcommand("degrade", "apply the print-and-rescan corruption model"));
    cmd_embed_fit(app.add_subcommand("embed-fit", "fit the screentone embedding asset"));
    cmd_train_se(app.add_subcommand("train-se", "train the scale estimator"));
    cmd_train_mr(app.add_subcommand("train-mr", "train the restorer"));
    cmd_estimate(app.add_subcommand("estimate", "estimate the rescan scale of an image"));
    cmd_restore(app.add_subcommand("restore", "restore a degraded manga image"));
    cmd_evaluate(app.add_subcommand("evaluate", "score models on a dataset"));

    try {
        app.parse(argc, argv);
        return 0;
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        std::cout << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace mr::cli
