#include "mangares/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace mr {

namespace {

json spec_to_json(const ScreentoneSpec& s) {
    return json{{"kind", tone_kind_name(s.kind)},
                {"period", s.period},
                {"angle", s.angle_deg},
                {"tone", s.tone},
                {"seed", s.seed}};
}

ScreentoneSpec spec_from_json(const json& j) {
    ScreentoneSpec s;
    s.kind = tone_kind_from_name(j.at("kind").get<std::string>());
    s.period = j.at("period").get<double>();
    s.angle_deg = j.at("angle").get<double>();
    s.tone = j.at("tone").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    return s;
}

std::string page_id(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "page_%05d", index);
    return buf;
}

}  // namespace

std::string DatasetRecord::to_jsonl() const {
    json j{{"id", id},
           {"gt", gt_path},
           {"degraded", degraded_path},
           {"labels", labels_path},
           {"paired", paired},
           {"volume", volume},
           {"h", page_h},
           {"w", page_w},
           {"seed", seed}};
    j["params"] = params ? json::parse(params->to_json()) : json(nullptr);
    json specs_j = json::array();
    for (const auto& s : specs) specs_j.push_back(spec_to_json(s));
    j["specs"] = specs_j;
    return j.dump();
}

DatasetRecord DatasetRecord::from_jsonl(const std::string& line) {
    json j = json::parse(line);
    DatasetRecord r;
    r.id = j.at("id").get<std::string>();
    r.gt_path = j.at("gt").get<std::string>();
    r.degraded_path = j.at("degraded").get<std::string>();
    r.labels_path = j.at("labels").get<std::string>();
    r.paired = j.at("paired").get<bool>();
    r.volume = j.at("volume").get<std::string>();
    r.page_h = j.at("h").get<int>();
    r.page_w = j.at("w").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    if (!j.at("params").is_null()) r.params = DegradationParams::from_json(j.at("params").dump());
    for (const auto& sj : j.at("specs")) r.specs.push_back(spec_from_json(sj));
    return r;
}

void DatasetManifest::save() const {
    fs::create_directories(root);
    const std::string path = root + "/manifest.jsonl";
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const auto& r : records) out << r.to_jsonl() << '\n';
}

DatasetManifest DatasetManifest::load(const std::string& root_dir) {
    const std::string path = root_dir + "/manifest.jsonl";
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    DatasetManifest m;
    m.root = root_dir;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        m.records.push_back(DatasetRecord::from_jsonl(line));
    }
    return m;
}

DatasetManifest synth_pages(int n_pages, const std::string& out_dir, std::uint64_t seed,
                            const SynthOptions& opts) {
    if (n_pages < 1) throw std::invalid_argument("n_pages must be positive");
    if (opts.volume_size < 1) throw std::invalid_argument("volume_size must be positive");
    fs::create_directories(out_dir + "/pages");
    fs::create_directories(out_dir + "/labels");

    DatasetManifest m;
    m.root = out_dir;
    m.records.reserve(static_cast<size_t>(n_pages));
    for (int i = 0; i < n_pages; ++i) {
        const std::uint64_t page_seed = Rng::mix(seed, static_cast<std::uint64_t>(i));
        PageLayout layout = random_layout(opts.page_h, opts.page_w, page_seed, opts.layout);
        auto [page, labels] = compose_page(layout);

        DatasetRecord r;
        r.id = page_id(i);
        r.gt_path = "pages/" + r.id + ".png";
        r.labels_path = "labels/" + r.id + ".png";
        r.volume = "v" + std::to_string(i / opts.volume_size);
        r.page_h = opts.page_h;
        r.page_w = opts.page_w;
        r.seed = page_seed;
        for (const auto& region : layout.regions) r.specs.push_back(region.spec);

        save_image(page, m.resolve(r.gt_path));
        save_label_map(labels, m.resolve(r.labels_path));
        m.records.push_back(std::move(r));
    }
    m.save();
    return m;
}

DegradationParams sample_params_ranged(Rng& rng, const DegradeOptions& opts) {
    if (opts.scale_min < 1.0 || opts.scale_max > 4.0 || opts.scale_min > opts.scale_max)
        throw std::invalid_argument("scale range must lie within [1,4]");
    DegradationParams p;
    p.scale = rng.uniform(opts.scale_min, opts.scale_max);
    if (rng.bernoulli(0.5) && opts.enable_blur) {
        p.blur_sigma = rng.uniform(0.5, 1.5);
        p.blur_kernel = 5;
    } else {
        (void)rng.uniform();  // keep the stream aligned across branches
    }
    if (rng.bernoulli(0.5) && opts.enable_noise) {
        p.noise_sigma = rng.uniform(opts.noise_min, opts.noise_max);
    } else {
        (void)rng.uniform();
    }
    if (rng.bernoulli(0.5) && opts.enable_jpeg) {
        p.jpeg_quality = static_cast<int>(rng.uniform_int(50, 100));
    } else {
        (void)rng.next_u64();
    }
    p.noise_seed = rng.next_u64();
    return p;
}

void degrade_dataset(DatasetManifest& manifest, std::uint64_t seed, const DegradeOptions& opts) {
    if (opts.unpaired_fraction < 0.0 || opts.unpaired_fraction > 1.0)
        throw std::invalid_argument("unpaired_fraction must be in [0,1]");
    if (opts.fixed_scale && (*opts.fixed_scale < 1.0 || *opts.fixed_scale > 4.0))
        throw std::invalid_argument("fixed_scale must be in [1,4]");
    fs::create_directories(manifest.root + "/degraded");

    const double f = opts.unpaired_fraction;
    for (size_t i = 0; i < manifest.records.size(); ++i) {
        DatasetRecord& r = manifest.records[i];
        if (r.gt_path.empty()) throw std::runtime_error("record " + r.id + " has no gt page");
        Rng rng(Rng::mix(seed, 0xd15c0000ULL + i));
        DegradationParams params = sample_params_ranged(rng, opts);
        if (opts.fixed_scale) params.scale = *opts.fixed_scale;

        const Image page = load_image(manifest.resolve(r.gt_path));
        // Write the pre-JPEG stage through one encode so reloading the file
        // reproduces degrade() exactly instead of compressing twice.
        DegradationParams pre_params = params;
        pre_params.jpeg_quality = 0;
        const Image pre = degrade(page, pre_params);
        if (params.jpeg_quality > 0) {
            r.degraded_path = "degraded/" + r.id + ".jpg";
            const auto bytes = jpeg_encode(pre, params.jpeg_quality);
            std::ofstream out(manifest.resolve(r.degraded_path), std::ios::binary | std::ios::trunc);
            if (!out) throw std::runtime_error("cannot write " + r.degraded_path);
            out.write(reinterpret_cast<const char*>(bytes.data()),
                      static_cast<std::streamsize>(bytes.size()));
        } else {
            r.degraded_path = "degraded/" + r.id + ".png";
            save_image(pre, manifest.resolve(r.degraded_path));
        }
        r.params = params;
        r.paired = true;

        // Bresenham spacing: exactly floor(n*f) unpaired records, evenly spread.
        const bool unpaired = std::floor(static_cast<double>(i + 1) * f) >
                              std::floor(static_cast<double>(i) * f);
        if (unpaired) {
            r.paired = false;
            r.gt_path.clear();
            r.labels_path.clear();
            r.params.reset();
            r.specs.clear();
            r.page_h = pre.height;
            r.page_w = pre.width;
        }
    }
    manifest.save();
}

DatasetManifest build_dataset(int n_pages, const std::string& out_dir, std::uint64_t seed,
                              const SynthOptions& synth_opts, const DegradeOptions& degrade_opts) {
    DatasetManifest m = synth_pages(n_pages, out_dir, Rng::mix(seed, 0x70a6e5), synth_opts);
    degrade_dataset(m, Rng::mix(seed, 0xde62ade), degrade_opts);
    return m;
}

DataAccess::DataAccess(const DatasetManifest& manifest, std::string log_path)
    : manifest_(manifest), log_path_(std::move(log_path)) {}

DataAccess::~DataAccess() {
    if (log_path_.empty() || log_buf_.empty()) return;
    std::ofstream out(log_path_, std::ios::app);
    out << log_buf_;
}

void DataAccess::log(const char* kind, const DatasetRecord& rec, const std::string& path) {
    if (log_path_.empty()) return;
    log_buf_ += phase_ + "," + kind + "," + rec.id + "," + path + "\n";
    if (log_buf_.size() > 1 << 20) {
        std::ofstream out(log_path_, std::ios::app);
        out << log_buf_;
        log_buf_.clear();
    }
}

const Image& DataAccess::degraded(size_t idx) {
    auto it = degraded_.find(idx);
    if (it == degraded_.end()) {
        const DatasetRecord& rec = manifest_.records.at(idx);
        it = degraded_.emplace(idx, load_image(manifest_.resolve(rec.degraded_path))).first;
    }
    log("degraded", manifest_.records.at(idx), manifest_.records.at(idx).degraded_path);
    return it->second;
}

const Image& DataAccess::gt(size_t idx) {
    const DatasetRecord& rec = manifest_.records.at(idx);
    if (!rec.paired || rec.gt_path.empty())
        throw std::runtime_error("record " + rec.id + " is unpaired: no ground truth available");
    auto it = gt_.find(idx);
    if (it == gt_.end()) it = gt_.emplace(idx, load_image(manifest_.resolve(rec.gt_path))).first;
    log("gt", rec, rec.gt_path);
    return it->second;
}

const LabelMap& DataAccess::labels(size_t idx) {
    const DatasetRecord& rec = manifest_.records.at(idx);
    if (!rec.paired || rec.labels_path.empty())
        throw std::runtime_error("record " + rec.id + " is unpaired: no label map available");
    auto it = labels_.find(idx);
    if (it == labels_.end())
        it = labels_.emplace(idx, load_label_map(manifest_.resolve(rec.labels_path))).first;
    log("labels", rec, rec.labels_path);
    return it->second;
}

}  // namespace mr
