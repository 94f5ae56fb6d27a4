#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "mangares/embedding.hpp"
#include "mangares/restore_net.hpp"
#include "mangares/screentone.hpp"

using namespace mr;

namespace {

// Fitting renders the whole screentone bank, so share one instance.
const ScreenEmbedder& fitted() {
    static const ScreenEmbedder emb = ScreenEmbedder::fit(1);
    return emb;
}

Image tone_page(ToneKind kind, double period, double tone, int h, int w,
                double angle = 0.0, std::uint64_t seed = 5) {
    ScreentoneSpec spec;
    spec.kind = kind;
    spec.period = period;
    spec.angle_deg = angle;
    spec.tone = tone;
    spec.seed = seed;
    return render_screentone(spec, h, w);
}

Image crop(const Image& img, int y0, int x0, int h, int w) {
    Image out(h, w, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(y, x) = img.at(y0 + y, x0 + x);
    return out;
}

}  // namespace

TEST_CASE("gabor bank kernels are DC-free and unit-energy") {
    const EmbeddingConfig cfg;
    const auto bank = gabor_bank(cfg);
    REQUIRE(bank.size() == static_cast<size_t>(cfg.orientations * cfg.periods.size()));
    for (const auto& g : bank) {
        CHECK(g.size % 2 == 1);
        CHECK(g.size <= cfg.max_kernel);
        double dc = 0.0, e2 = 0.0, o2 = 0.0;
        for (size_t i = 0; i < g.even.size(); ++i) {
            dc += g.even[i];
            e2 += g.even[i] * g.even[i];
            o2 += g.odd[i] * g.odd[i];
        }
        CHECK(std::fabs(dc) < 1e-9);
        CHECK(e2 == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(o2 == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("fitting is deterministic and survives a save/load round-trip") {
    const ScreenEmbedder& a = fitted();
    const ScreenEmbedder b = ScreenEmbedder::fit(1);
    CHECK(a.mean == b.mean);
    CHECK(a.proj == b.proj);
    CHECK(a.bank_rms == b.bank_rms);
    CHECK(a.bank_rms > 0.0);

    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "mr_embed_test.json").string();
    a.save(path);
    const ScreenEmbedder c = ScreenEmbedder::load(path);
    CHECK(c.mean == a.mean);
    CHECK(c.proj == a.proj);
    CHECK(c.bank_rms == a.bank_rms);
    CHECK(c.cfg.pool_window == a.cfg.pool_window);
    fs::remove(path);
}

TEST_CASE("embedding maps a page to four smooth channels") {
    const Image page = tone_page(ToneKind::Dot, 6.0, 0.4, 48, 40);
    const ScreenMap phi = fitted().embed(page);
    CHECK(phi.height == 48);
    CHECK(phi.width == 40);
    CHECK(phi.channels == 4);
    for (const double v : phi.data) CHECK(std::isfinite(v));

    // The descriptor varies far less than the raw bitonal page does.
    double page_var = 0.0, phi_var = 0.0;
    const double pmean = page.mean();
    for (const double v : page.data) page_var += (v - pmean) * (v - pmean);
    page_var /= static_cast<double>(page.data.size());
    for (int c = 0; c < 4; ++c) {
        double m = 0.0;
        for (int y = 12; y < 36; ++y)
            for (int x = 12; x < 28; ++x) m += phi.at(y, x, c);
        m /= 24.0 * 16.0;
        double v2 = 0.0;
        for (int y = 12; y < 36; ++y)
            for (int x = 12; x < 28; ++x) v2 += (phi.at(y, x, c) - m) * (phi.at(y, x, c) - m);
        phi_var += v2 / (24.0 * 16.0);
    }
    CHECK(phi_var / 4.0 < page_var);
}

TEST_CASE("distances separate screentone kinds and shrug off phase shifts") {
    const ScreenEmbedder& emb = fitted();
    const Image big = tone_page(ToneKind::Dot, 8.0, 0.5, 96, 64);
    const Image a = crop(big, 0, 0, 64, 64);
    const Image shifted = crop(big, 8, 0, 64, 64);  // one full period down
    const Image line = tone_page(ToneKind::Line, 8.0, 0.5, 64, 64, 45.0);
    const Image fine_dot = tone_page(ToneKind::Dot, 3.0, 0.5, 64, 64);

    const double d_shift = svae_distance(a, shifted, emb);
    const double d_kind = svae_distance(a, line, emb);
    const double d_period = svae_distance(a, fine_dot, emb);
    CHECK(d_shift < 0.5 * d_kind);
    CHECK(d_shift < 0.5 * d_period);

    CHECK(svae_distance(a, a, emb) == 0.0);
    CHECK(svae_distance(a, line, emb) == doctest::Approx(svae_distance(line, a, emb)));
    CHECK_THROWS(svae_distance(a, tone_page(ToneKind::Dot, 8.0, 0.5, 32, 32), emb));
}

TEST_CASE("masked distance averages only over the mask") {
    const ScreenEmbedder& emb = fitted();
    const Image a = tone_page(ToneKind::Dot, 6.0, 0.5, 32, 32);
    const Image b = tone_page(ToneKind::Line, 6.0, 0.5, 32, 32);
    BitonalMask full(32, 32);
    for (auto& v : full.data) v = 1;
    CHECK(svae_distance(a, b, full, emb) == doctest::Approx(svae_distance(a, b, emb)));

    BitonalMask empty(32, 32);
    CHECK_THROWS_AS((void)svae_distance(a, b, empty, emb), std::invalid_argument);

    // Restricting to a half works and differs from the full mean in general.
    BitonalMask half(32, 32);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 32; ++x) half.at(y, x) = 1;
    CHECK(svae_distance(a, b, half, emb) > 0.0);
}

TEST_CASE("synthesis labels pass through superpixels contiguously") {
    const Image gt(64, 64, 1, 1.0);
    LabelMap labels(64, 64);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
            labels.at(y, x) = x < 20 ? 3 : (x < 44 ? 17 : 255);
    const SuperpixelPartition part = superpixels(gt, &labels, 96);
    CHECK(part.n == 3);
    CHECK(part.labels.at(0, 0) == 0);
    CHECK(part.labels.at(0, 30) == 1);
    CHECK(part.labels.at(0, 60) == 2);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            const int expect = x < 20 ? 0 : (x < 44 ? 1 : 2);
            CHECK(part.labels.at(y, x) == expect);
        }

    // Half-resolution labels are carried up to the page size.
    LabelMap small(32, 32);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) small.at(y, x) = y < 16 ? 7 : 9;
    const SuperpixelPartition up = superpixels(gt, &small, 96);
    CHECK(up.n == 2);
    CHECK(up.labels.at(0, 0) == 0);
    CHECK(up.labels.at(63, 0) == 1);
}

TEST_CASE("unlabeled pages are clustered into compact superpixels") {
    // Exercises the shipped asset: clustering runs on the default embedder.
    Image mixed(96, 96, 1);
    const Image dots = tone_page(ToneKind::Dot, 5.0, 0.3, 96, 96);
    const Image lines = tone_page(ToneKind::Line, 7.0, 0.6, 96, 96, 30.0);
    for (int y = 0; y < 96; ++y)
        for (int x = 0; x < 96; ++x) mixed.at(y, x) = x < 48 ? dots.at(y, x) : lines.at(y, x);

    const SuperpixelPartition part = superpixels(mixed, nullptr, 24);
    CHECK(part.n >= 4);
    std::vector<int> counts(static_cast<size_t>(part.n), 0);
    for (const int id : part.labels.data) {
        REQUIRE(id >= 0);
        REQUIRE(id < part.n);
        ++counts[static_cast<size_t>(id)];
    }
    for (const int c : counts) CHECK(c > 0);

    const SuperpixelPartition again = superpixels(mixed, nullptr, 24);
    CHECK(again.labels.data == part.labels.data);
}

TEST_CASE("homogeneity penalizes mixed-pattern superpixels") {
    const ScreenEmbedder& emb = fitted();
    Image mixed(64, 64, 1);
    const Image dots = tone_page(ToneKind::Dot, 5.0, 0.3, 64, 64);
    const Image lines = tone_page(ToneKind::Line, 7.0, 0.6, 64, 64, 30.0);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) mixed.at(y, x) = x < 32 ? dots.at(y, x) : lines.at(y, x);

    LabelMap aligned(64, 64);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) aligned.at(y, x) = x < 32 ? 0 : 1;
    LabelMap lumped(64, 64, 0);

    const double good = homogeneity_loss(mixed, aligned, emb);
    const double bad = homogeneity_loss(mixed, lumped, emb);
    CHECK(good < bad);
    CHECK(good > 0.0);

    LabelMap wrong_size(32, 32, 0);
    CHECK_THROWS(homogeneity_loss(mixed, wrong_size, emb));
}
