#include <doctest.h>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mangares/cli.hpp"
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

// Run the toolkit entry point, optionally capturing what it prints to stdout.
int run_cli(const std::vector<std::string>& args, std::string* out = nullptr) {
    std::vector<const char*> argv = {"mangares"};
    for (const auto& a : args) argv.push_back(a.c_str());

    int rc;
    if (out) {
        const std::string tmp = (fs::temp_directory_path() / "mr_cli_stdout.txt").string();
        std::fflush(stdout);
        const int saved = dup(1);
        REQUIRE(saved >= 0);
        FILE* f = std::fopen(tmp.c_str(), "w");
        REQUIRE(f != nullptr);
        dup2(fileno(f), 1);
        rc = cli::run(static_cast<int>(argv.size()), argv.data());
        std::fflush(stdout);
        dup2(saved, 1);
        close(saved);
        std::fclose(f);
        *out = slurp(tmp);
        fs::remove(tmp);
    } else {
        rc = cli::run(static_cast<int>(argv.size()), argv.data());
    }
    return rc;
}

// Shared pipeline artifacts, built once through the CLI itself.
const std::string& pipeline_dir() {
    static const std::string dir = [] {
        const std::string d = fresh_dir("mr_cli_ds");
        REQUIRE(run_cli({"synth", "--pages", "3", "--out", d, "--seed", "5", "--height", "96",
                         "--width", "96"}) == 0);
        REQUIRE(run_cli({"degrade", "--dataset", d, "--seed", "9", "--scale", "2", "--no-blur",
                         "--no-noise", "--no-jpeg"}) == 0);
        return d;
    }();
    return dir;
}

const std::string& se_ckpt() {
    static const std::string path = [] {
        const std::string run = fresh_dir("mr_cli_se_run");
        REQUIRE(run_cli({"train-se", "--dataset", pipeline_dir(), "--iterations", "2",
                         "--batch-size", "1", "--patch-size", "32", "--seed", "3", "--out-dir",
                         run, "--set", "se_base_channels=4", "--set", "se_n_downsample=2",
                         "--set", "se_cbam_reduction=2"}) == 0);
        return run + "/se_final.ckpt";
    }();
    return path;
}

const std::string& mr_ckpt() {
    static const std::string path = [] {
        const std::string run = fresh_dir("mr_cli_mr_run");
        REQUIRE(run_cli({"train-mr", "--dataset", pipeline_dir(), "--iterations", "1",
                         "--batch-size", "1", "--patch-size", "16", "--seed", "4", "--out-dir",
                         run, "--set", "mr_base_channels=8", "--set", "mr_n_ram=2", "--set",
                         "mr_noise_channels=2", "--set", "gamma=0"}) == 0);
        return run + "/mr_final.ckpt";
    }();
    return path;
}

}  // namespace

TEST_CASE("argument errors exit with 2, help with 0") {
    CHECK(run_cli({}) == 2);
    CHECK(run_cli({"frobnicate"}) == 2);
    CHECK(run_cli({"restore"}) == 2);  // missing required flags
    CHECK(run_cli({"synth", "--pages", "1"}) == 2);

    std::string out;
    CHECK(run_cli({"--help"}, &out) == 0);
    CHECK(out.find("synth") != std::string::npos);
    CHECK(out.find("restore") != std::string::npos);
}

TEST_CASE("synth is deterministic across runs") {
    const std::string a = fresh_dir("mr_cli_synth_a");
    const std::string b = fresh_dir("mr_cli_synth_b");
    std::string out;
    REQUIRE(run_cli({"synth", "--pages", "2", "--out", a, "--seed", "11", "--height", "96",
                     "--width", "96"},
                    &out) == 0);
    CHECK(out.find("manifest=" + a + "/manifest.jsonl") != std::string::npos);
    REQUIRE(run_cli({"synth", "--pages", "2", "--out", b, "--seed", "11", "--height", "96",
                     "--width", "96"}) == 0);
    CHECK(slurp(a + "/manifest.jsonl") == slurp(b + "/manifest.jsonl"));
    const auto ma = DatasetManifest::load(a);
    CHECK(slurp(ma.resolve(ma.records[0].gt_path)) ==
          slurp(b + "/" + ma.records[0].gt_path));
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("degrade handles datasets and single files") {
    const auto m = DatasetManifest::load(pipeline_dir());
    REQUIRE(m.records.size() == 3);
    for (const auto& r : m.records) {
        REQUIRE(r.params.has_value());
        CHECK(r.params->scale == 2.0);
        CHECK(r.params->jpeg_quality == 0);
        const Image deg = load_image(m.resolve(r.degraded_path));
        CHECK(deg.height == 48);
        CHECK(deg.width == 48);
    }

    const std::string in = m.resolve(m.records[0].gt_path);
    const std::string out_png = (fs::temp_directory_path() / "mr_cli_deg.png").string();
    std::string out;
    REQUIRE(run_cli({"degrade", "--in", in, "--out", out_png, "--scale", "3"}, &out) == 0);
    CHECK(out.find("output=" + out_png) != std::string::npos);
    const Image deg = load_image(out_png);
    CHECK(deg.height == 32);
    CHECK(deg.width == 32);
    fs::remove(out_png);

    CHECK(run_cli({"degrade", "--in", in, "--out", out_png}) == 2);       // no --scale
    CHECK(run_cli({"degrade", "--in", in, "--dataset", pipeline_dir()}) == 2);  // exclusive
    CHECK(run_cli({"degrade"}) == 2);
}

TEST_CASE("estimate reports a vote table") {
    std::string out;
    const auto m = DatasetManifest::load(pipeline_dir());
    const std::string in = m.resolve(m.records[0].degraded_path);
    const std::string before = slurp(in);
    REQUIRE(run_cli({"estimate", "--in", in, "--model", se_ckpt(), "--patches", "3"}, &out) == 0);
    CHECK(slurp(in) == before);  // inputs are never rewritten

    REQUIRE(out.rfind("scale=", 0) == 0);
    const double est = std::stod(out.substr(6));
    CHECK(est >= 1.0);
    CHECK(est <= 4.0);
    CHECK(out.find("patch,y,x,scale,confidence\n") != std::string::npos);
    int rows = 0;
    for (size_t pos = out.find('\n'); pos != std::string::npos; pos = out.find('\n', pos + 1))
        rows += out.compare(pos + 1, 2, "0,") == 0 || out.compare(pos + 1, 2, "1,") == 0 ||
                out.compare(pos + 1, 2, "2,") == 0;
    CHECK(rows == 3);

    CHECK(run_cli({"estimate", "--in", in, "--model", mr_ckpt()}) == 1);  // wrong model kind
}

TEST_CASE("restore writes the upscaled page and confidence map") {
    const auto m = DatasetManifest::load(pipeline_dir());
    const std::string in = m.resolve(m.records[1].degraded_path);
    const std::string out_png = (fs::temp_directory_path() / "mr_cli_restored.png").string();
    const std::string conf_png = (fs::temp_directory_path() / "mr_cli_conf.png").string();

    std::string out;
    REQUIRE(run_cli({"restore", "--in", in, "--out", out_png, "--model", mr_ckpt(), "--scale",
                     "2", "--confidence-out", conf_png},
                    &out) == 0);
    CHECK(out.find("scale=2.000000") != std::string::npos);
    CHECK(out.find("output=" + out_png) != std::string::npos);
    CHECK(out.find("confidence=" + conf_png) != std::string::npos);

    const Image restored = load_image(out_png);
    CHECK(restored.height == 96);  // exactly 2x the 48px input
    CHECK(restored.width == 96);
    const Image conf = load_image(conf_png);
    CHECK(conf.height == 48);
    CHECK(conf.width == 48);
    for (const double v : conf.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    // Scale can come from the frozen estimator instead.
    REQUIRE(run_cli({"restore", "--in", in, "--out", out_png, "--model", mr_ckpt(),
                     "--se-model", se_ckpt(), "--patches", "2"}) == 0);
    CHECK(load_image(out_png).height >= 48);

    // Binarized output is strictly bitonal.
    REQUIRE(run_cli({"restore", "--in", in, "--out", out_png, "--model", mr_ckpt(), "--scale",
                     "1.5", "--binarize"}) == 0);
    for (const double v : load_image(out_png).data) CHECK((v == 0.0 || v == 1.0));

    CHECK(run_cli({"restore", "--in", in, "--out", out_png, "--model", mr_ckpt(), "--scale", "2",
                   "--se-model", se_ckpt()}) == 2);  // mutually exclusive
    CHECK(run_cli({"restore", "--in", in, "--out", out_png, "--model", mr_ckpt()}) == 2);
    CHECK(run_cli({"restore", "--in", in, "--out", out_png, "--model", mr_ckpt(), "--scale",
                   "5"}) == 1);  // outside the model's range
    fs::remove(out_png);
    fs::remove(conf_png);
}

TEST_CASE("evaluate scores scale estimation with reports") {
    const std::string report = (fs::temp_directory_path() / "mr_cli_report.json").string();
    const std::string csv = (fs::temp_directory_path() / "mr_cli_report.csv").string();
    std::string out;
    REQUIRE(run_cli({"evaluate", "--dataset", pipeline_dir(), "--se-model", se_ckpt(),
                     "--patches", "2", "--report", report, "--csv", csv},
                    &out) == 0);
    CHECK(out.find("accuracy=") != std::string::npos);
    CHECK(out.find("mean_rel_error=") != std::string::npos);

    const auto parsed = nlohmann::json::parse(slurp(report));
    REQUIRE(parsed["buckets"].size() == 4);
    CHECK(parsed["buckets"][3]["count"] == 3);
    const std::string table = slurp(csv);
    CHECK(table.rfind("id,pred,gt,rel_error,volume\n", 0) == 0);
    CHECK(table.find("page_00000,") != std::string::npos);

    CHECK(run_cli({"evaluate", "--dataset", pipeline_dir()}) == 2);  // no mode picked
    CHECK(run_cli({"evaluate", "--dataset", pipeline_dir(), "--se-model", se_ckpt(),
                   "--mr-model", mr_ckpt()}) == 2);
    fs::remove(report);
    fs::remove(csv);
}

TEST_CASE("evaluate scores restorations against identifiable regions") {
    const std::string report = (fs::temp_directory_path() / "mr_cli_mr_report.json").string();
    std::string out;
    REQUIRE(run_cli({"evaluate", "--dataset", pipeline_dir(), "--mr-model", mr_ckpt(), "--limit",
                     "1", "--report", report},
                    &out) == 0);
    CHECK(out.find("psnr=") != std::string::npos);
    CHECK(out.find("svae=") != std::string::npos);
    const auto parsed = nlohmann::json::parse(slurp(report));
    CHECK(parsed["aggregate"]["n_images"] == 1);
    CHECK(parsed["images"][0]["mask_coverage"] >= 0.0);
    fs::remove(report);
}
