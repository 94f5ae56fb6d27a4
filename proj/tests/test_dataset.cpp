#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include "mangares/dataset.hpp"

using namespace mr;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    return p.string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

SynthOptions small_synth() {
    SynthOptions o;
    o.page_h = 96;
    o.page_w = 96;
    o.volume_size = 3;
    return o;
}

}  // namespace

TEST_CASE("records survive a JSONL round-trip") {
    DatasetRecord r;
    r.id = "page_00007";
    r.gt_path = "pages/page_00007.png";
    r.degraded_path = "degraded/page_00007.jpg";
    r.labels_path = "labels/page_00007.png";
    r.volume = "v2";
    r.page_h = 128;
    r.page_w = 96;
    r.seed = 0xfeedULL;
    DegradationParams p;
    p.scale = 2.5;
    p.jpeg_quality = 70;
    p.noise_seed = 99;
    r.params = p;
    ScreentoneSpec s;
    s.kind = ToneKind::Checker;
    s.period = 6.0;
    s.angle_deg = 30.0;
    s.tone = 0.4;
    s.seed = 5;
    r.specs = {s};

    const DatasetRecord q = DatasetRecord::from_jsonl(r.to_jsonl());
    CHECK(q.id == r.id);
    CHECK(q.gt_path == r.gt_path);
    CHECK(q.degraded_path == r.degraded_path);
    CHECK(q.labels_path == r.labels_path);
    CHECK(q.paired == true);
    CHECK(q.volume == "v2");
    CHECK(q.page_h == 128);
    CHECK(q.page_w == 96);
    CHECK(q.seed == 0xfeedULL);
    REQUIRE(q.params.has_value());
    CHECK(q.params->scale == 2.5);
    CHECK(q.params->jpeg_quality == 70);
    REQUIRE(q.specs.size() == 1);
    CHECK(q.specs[0].kind == ToneKind::Checker);
    CHECK(q.specs[0].period == 6.0);

    DatasetRecord u;
    u.id = "page_00000";
    u.degraded_path = "degraded/page_00000.png";
    u.paired = false;
    u.volume = "v0";
    const DatasetRecord v = DatasetRecord::from_jsonl(u.to_jsonl());
    CHECK(v.paired == false);
    CHECK_FALSE(v.params.has_value());
    CHECK(v.gt_path.empty());
    CHECK(v.specs.empty());
}

TEST_CASE("dataset builds are deterministic down to the bytes") {
    const std::string dir_a = fresh_dir("mr_ds_det_a");
    const std::string dir_b = fresh_dir("mr_ds_det_b");
    const DatasetManifest a = build_dataset(4, dir_a, 11, small_synth());
    const DatasetManifest b = build_dataset(4, dir_b, 11, small_synth());
    REQUIRE(a.records.size() == 4);
    CHECK(slurp(dir_a + "/manifest.jsonl") == slurp(dir_b + "/manifest.jsonl"));
    for (size_t i = 0; i < 4; ++i) {
        CHECK(slurp(a.resolve(a.records[i].gt_path)) == slurp(b.resolve(b.records[i].gt_path)));
        CHECK(slurp(a.resolve(a.records[i].degraded_path)) ==
              slurp(b.resolve(b.records[i].degraded_path)));
    }

    const DatasetManifest c = build_dataset(4, fresh_dir("mr_ds_det_c"), 12, small_synth());
    CHECK(slurp(dir_a + "/manifest.jsonl") != slurp(c.root + "/manifest.jsonl"));

    // Reload round-trip.
    const DatasetManifest re = DatasetManifest::load(dir_a);
    REQUIRE(re.records.size() == 4);
    for (size_t i = 0; i < 4; ++i) {
        CHECK(re.records[i].id == a.records[i].id);
        CHECK(re.records[i].volume == a.records[i].volume);
    }
    CHECK_THROWS(DatasetManifest::load(dir_a + "/nope"));

    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
    fs::remove_all(c.root);
}

TEST_CASE("degraded files reproduce the corruption model on reload") {
    const std::string dir = fresh_dir("mr_ds_exact");
    const DatasetManifest m = build_dataset(6, dir, 3, small_synth());
    int jpeg_seen = 0, png_seen = 0;
    for (const auto& r : m.records) {
        REQUIRE(r.params.has_value());
        const Image gt = load_image(m.resolve(r.gt_path));
        const Image expect = degrade(gt, *r.params);
        const Image got = load_image(m.resolve(r.degraded_path));
        REQUIRE(got.height == expect.height);
        REQUIRE(got.width == expect.width);
        if (r.params->jpeg_quality > 0) {
            ++jpeg_seen;
            CHECK(got.data == expect.data);  // single-encode guarantee
        } else {
            ++png_seen;
            double worst = 0.0;
            for (size_t i = 0; i < got.data.size(); ++i)
                worst = std::max(worst, std::fabs(got.data[i] - expect.data[i]));
            CHECK(worst <= 0.5 / 255.0 + 1e-12);  // 8-bit quantization bound
        }
    }
    CHECK(jpeg_seen + png_seen == 6);
    fs::remove_all(dir);
}

TEST_CASE("fixed scale and volumes are honored") {
    const std::string dir = fresh_dir("mr_ds_fixed");
    DegradeOptions d;
    d.fixed_scale = 2.0;
    d.enable_jpeg = false;
    d.enable_noise = false;
    d.enable_blur = false;
    const DatasetManifest m = build_dataset(7, dir, 5, small_synth(), d);
    for (const auto& r : m.records) {
        CHECK(r.params->scale == 2.0);
        CHECK(r.params->jpeg_quality == 0);
        CHECK(r.params->noise_sigma == 0.0);
        CHECK(r.params->blur_sigma == 0.0);
        const Image deg = load_image(m.resolve(r.degraded_path));
        CHECK(deg.height == 48);
        CHECK(deg.width == 48);
    }
    CHECK(m.records[0].volume == "v0");
    CHECK(m.records[2].volume == "v0");
    CHECK(m.records[3].volume == "v1");
    CHECK(m.records[6].volume == "v2");
    fs::remove_all(dir);
}

TEST_CASE("the unpaired fraction is spread to exactly floor(n*f)") {
    for (const double f : {0.0, 0.3, 0.5, 1.0}) {
        const std::string dir = fresh_dir("mr_ds_unpaired");
        DegradeOptions d;
        d.unpaired_fraction = f;
        const DatasetManifest m = build_dataset(10, dir, 7, small_synth(), d);
        int unpaired = 0;
        for (const auto& r : m.records) {
            if (!r.paired) {
                ++unpaired;
                CHECK(r.gt_path.empty());
                CHECK(r.labels_path.empty());
                CHECK_FALSE(r.params.has_value());
                CHECK(r.specs.empty());
                const Image deg = load_image(m.resolve(r.degraded_path));
                CHECK(r.page_h == deg.height);  // dims follow the scan itself
                CHECK(r.page_w == deg.width);
            } else {
                CHECK(r.params.has_value());
            }
        }
        CHECK(unpaired == static_cast<int>(std::floor(10 * f)));
        fs::remove_all(dir);
    }
}

TEST_CASE("data access guards unpaired records and logs every read") {
    const std::string dir = fresh_dir("mr_ds_access");
    DegradeOptions d;
    d.unpaired_fraction = 0.5;
    const DatasetManifest m = build_dataset(4, dir, 9, small_synth(), d);
    size_t paired_idx = 0, unpaired_idx = 0;
    for (size_t i = 0; i < m.records.size(); ++i)
        (m.records[i].paired ? paired_idx : unpaired_idx) = i;

    const std::string log_path = dir + "/access.csv";
    {
        DataAccess data(m, log_path);
        data.set_phase("supervised");
        (void)data.degraded(paired_idx);
        (void)data.gt(paired_idx);
        (void)data.labels(paired_idx);
        data.set_phase("unsupervised");
        (void)data.degraded(unpaired_idx);
        CHECK_THROWS_AS((void)data.gt(unpaired_idx), std::runtime_error);
        CHECK_THROWS_AS((void)data.labels(unpaired_idx), std::runtime_error);

        // Cached rereads serve the same pixels.
        const Image& first = data.degraded(paired_idx);
        const Image& second = data.degraded(paired_idx);
        CHECK(&first == &second);
    }
    const std::string log = slurp(log_path);
    const std::string pid = m.records[paired_idx].id;
    const std::string uid = m.records[unpaired_idx].id;
    CHECK(log.find("supervised,degraded," + pid) != std::string::npos);
    CHECK(log.find("supervised,gt," + pid) != std::string::npos);
    CHECK(log.find("supervised,labels," + pid) != std::string::npos);
    CHECK(log.find("unsupervised,degraded," + uid) != std::string::npos);
    CHECK(log.find("unsupervised,gt") == std::string::npos);
    CHECK(log.find("unsupervised,labels") == std::string::npos);
    fs::remove_all(dir);
}
