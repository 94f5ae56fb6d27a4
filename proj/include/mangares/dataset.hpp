#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mangares/degrade.hpp"
#include "mangares/image.hpp"
#include "mangares/screentone.hpp"

namespace mr {

// One page of the synthetic corpus. Paths are relative to the dataset root.
// Unpaired records stand in for real-world scans: they carry no gt/labels
// paths and no degradation parameters.
struct DatasetRecord {
    std::string id;
    std::string gt_path;
    std::string degraded_path;
    std::string labels_path;
    std::optional<DegradationParams> params;
    bool paired = true;
    std::string volume;
    int page_h = 0, page_w = 0;
    std::vector<ScreentoneSpec> specs;  // synthesis spec per region index
    std::uint64_t seed = 0;

    std::string to_jsonl() const;
    static DatasetRecord from_jsonl(const std::string& line);
};

struct DatasetManifest {
    std::string root;
    std::vector<DatasetRecord> records;

    void save() const;  // writes <root>/manifest.jsonl
    static DatasetManifest load(const std::string& root_dir);

    std::string resolve(const std::string& rel) const { return root + "/" + rel; }
};

struct SynthOptions {
    int page_h = 384;
    int page_w = 384;
    LayoutOptions layout;
    int volume_size = 20;  // pages per volume label
};

// Render n pages + label maps into out_dir/{pages,labels}; deterministic.
DatasetManifest synth_pages(int n_pages, const std::string& out_dir, std::uint64_t seed,
                            const SynthOptions& opts = {});

struct DegradeOptions {
    double unpaired_fraction = 0.0;
    std::optional<double> fixed_scale;  // overrides the scale draw
    double scale_min = 1.0, scale_max = 4.0;
    bool enable_blur = true;
    bool enable_noise = true;
    double noise_min = 5.0, noise_max = 15.0;
    bool enable_jpeg = true;
};

// Matches sample_params() draw-for-draw but with configurable ranges; with
// default options the stream is identical.
DegradationParams sample_params_ranged(Rng& rng, const DegradeOptions& opts);

// Degrade every record in place (writes degraded/{id}.jpg when JPEG is part
// of the corruption, .png otherwise) and mark the unpaired fraction.
void degrade_dataset(DatasetManifest& manifest, std::uint64_t seed,
                     const DegradeOptions& opts = {});

// synth + degrade in one call.
DatasetManifest build_dataset(int n_pages, const std::string& out_dir, std::uint64_t seed,
                              const SynthOptions& synth_opts = {},
                              const DegradeOptions& degrade_opts = {});

// Caching image accessor that appends one line per access to a CSV data log
// ("phase,kind,id,path"), so training runs can prove which files each phase
// touched.
class DataAccess {
public:
    DataAccess(const DatasetManifest& manifest, std::string log_path);
    ~DataAccess();

    void set_phase(std::string phase) { phase_ = std::move(phase); }

    const Image& degraded(size_t idx);
    const Image& gt(size_t idx);
    const LabelMap& labels(size_t idx);
    const DatasetManifest& manifest() const { return manifest_; }

private:
    void log(const char* kind, const DatasetRecord& rec, const std::string& path);

    const DatasetManifest& manifest_;
    std::string phase_ = "init";
    std::string log_path_;
    std::string log_buf_;
    std::unordered_map<size_t, Image> degraded_, gt_;
    std::unordered_map<size_t, LabelMap> labels_;
};

}  // namespace mr
