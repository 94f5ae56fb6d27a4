#pragma once

#include <cstdint>
#include <string>

#include "mangares/dataset.hpp"
#include "mangares/restore_net.hpp"
#include "mangares/scale_net.hpp"
#include "mangares/util/config.hpp"

namespace mr {

// Shared training configuration (train.cfg key=value file plus overrides).
struct TrainConfig {
    double lr = 1e-4;
    double lr_min = -1.0;  // >= 0 enables cosine decay from lr down to this floor
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    int batch_size = 8;
    int iterations = 2000;
    int patch_size = 128;  // input-resolution crop side, auto-shrunk to fit
    double supervised_fraction = 0.5;  // applies only when unpaired records exist
    std::uint64_t seed = 1;
    int checkpoint_every = 500;  // 0 = final checkpoint only
    std::string out_dir = "run";
    std::string resume_path;
    std::string data_log_path;

    // Scale-estimation training.
    SENetConfig se;
    double lambda_cons = 0.1;

    // Restoration training.
    MRNetConfig mr;
    MrLossWeights mr_weights;
    int superpixel_target = 96;
    std::string se_model_path;  // frozen scale model for unsupervised batches
    int vote_patches = 8;

    void validate() const;
    static TrainConfig from_config(const KeyValueConfig& kv);
};

struct TrainResult {
    std::string checkpoint_path;
    long iterations_run = 0;
    double final_loss = 0.0;
};

// Patch-based semi-supervised loops. Both write losses.csv and periodic
// checkpoints under cfg.out_dir and return the final checkpoint; runs are
// bitwise deterministic per (seed, config, manifest).
TrainResult train_se(const TrainConfig& cfg, const DatasetManifest& manifest);
TrainResult train_mr(const TrainConfig& cfg, const DatasetManifest& manifest);

// Rebuild a model from a checkpoint, validating its kind tag.
ScaleNet<float> load_scale_net(const std::string& ckpt_path);
RestoreNet<float> load_restore_net(const std::string& ckpt_path);

}  // namespace mr
