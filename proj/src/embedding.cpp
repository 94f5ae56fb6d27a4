#include "mangares/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "mangares/screentone.hpp"
#include "mangares/util/rng.hpp"

namespace mr {

namespace {
constexpr double kTau = 6.283185307179586476925286766559;
}

std::vector<GaborKernel> gabor_bank(const EmbeddingConfig& cfg) {
    std::vector<GaborKernel> bank;
    for (const double period : cfg.periods) {
        const double sigma = cfg.sigma_factor * period;
        int k = 2 * static_cast<int>(std::ceil(2.0 * sigma)) + 1;
        k = std::min(k, cfg.max_kernel | 1);
        const int r = k / 2;
        for (int o = 0; o < cfg.orientations; ++o) {
            const double theta = kTau / 2.0 * o / cfg.orientations;
            const double ct = std::cos(theta), st = std::sin(theta);
            GaborKernel g;
            g.size = k;
            g.even.resize(static_cast<size_t>(k) * k);
            g.odd.resize(static_cast<size_t>(k) * k);
            double even_sum = 0.0;
            for (int y = -r; y <= r; ++y)
                for (int x = -r; x <= r; ++x) {
                    const double env = std::exp(-(x * x + y * y) / (2.0 * sigma * sigma));
                    const double phase = kTau * (ct * x + st * y) / period;
                    const size_t i = static_cast<size_t>(y + r) * k + (x + r);
                    g.even[i] = env * std::cos(phase);
                    g.odd[i] = env * std::sin(phase);
                    even_sum += g.even[i];
                }
            // Remove DC from the cosine tap so flat regions respond with zero,
            // then normalize both taps to unit energy.
            const double dc = even_sum / static_cast<double>(k * k);
            double e2 = 0.0, o2 = 0.0;
            for (size_t i = 0; i < g.even.size(); ++i) {
                g.even[i] -= dc;
                e2 += g.even[i] * g.even[i];
                o2 += g.odd[i] * g.odd[i];
            }
            const double en = std::sqrt(std::max(e2, 1e-12));
            const double on = std::sqrt(std::max(o2, 1e-12));
            for (size_t i = 0; i < g.even.size(); ++i) {
                g.even[i] /= en;
                g.odd[i] /= on;
            }
            bank.push_back(std::move(g));
        }
    }
    return bank;
}

namespace {

// Cyclic Jacobi eigensolver for small symmetric matrices. Eigenvectors come
// back as columns of v; both sorted by descending eigenvalue.
void jacobi_eigen(std::vector<double> a, int n, std::vector<double>& eigvals,
                  std::vector<double>& v) {
    v.assign(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) v[static_cast<size_t>(i) * n + i] = 1.0;
    auto at = [&](int r, int c) -> double& { return a[static_cast<size_t>(r) * n + c]; };
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += at(p, q) * at(p, q);
        if (off < 1e-22) break;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) {
                const double apq = at(p, q);
                if (std::fabs(apq) < 1e-300) continue;
                const double tau = (at(q, q) - at(p, p)) / (2.0 * apq);
                const double t = (tau >= 0 ? 1.0 : -1.0) /
                                 (std::fabs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t), s = t * c;
                for (int i = 0; i < n; ++i) {
                    const double aip = at(i, p), aiq = at(i, q);
                    at(i, p) = c * aip - s * aiq;
                    at(i, q) = s * aip + c * aiq;
                }
                for (int i = 0; i < n; ++i) {
                    const double api = at(p, i), aqi = at(q, i);
                    at(p, i) = c * api - s * aqi;
                    at(q, i) = s * api + c * aqi;
                }
                for (int i = 0; i < n; ++i) {
                    const double vip = v[static_cast<size_t>(i) * n + p];
                    const double viq = v[static_cast<size_t>(i) * n + q];
                    v[static_cast<size_t>(i) * n + p] = c * vip - s * viq;
                    v[static_cast<size_t>(i) * n + q] = s * vip + c * viq;
                }
            }
    }
    eigvals.resize(n);
    for (int i = 0; i < n; ++i) eigvals[static_cast<size_t>(i)] = at(i, i);
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    std::sort(order.begin(), order.end(),
              [&](int x, int y) { return eigvals[static_cast<size_t>(x)] > eigvals[static_cast<size_t>(y)]; });
    std::vector<double> ev_sorted(n), v_sorted(v.size());
    for (int j = 0; j < n; ++j) {
        ev_sorted[static_cast<size_t>(j)] = eigvals[static_cast<size_t>(order[static_cast<size_t>(j)])];
        for (int i = 0; i < n; ++i)
            v_sorted[static_cast<size_t>(i) * n + j] = v[static_cast<size_t>(i) * n + order[static_cast<size_t>(j)]];
    }
    eigvals = std::move(ev_sorted);
    v = std::move(v_sorted);
}

std::vector<ScreentoneSpec> bank_specs(std::uint64_t seed) {
    std::vector<ScreentoneSpec> specs;
    Rng rng(Rng::mix(seed, 0xba9cULL));
    const ToneKind kinds[] = {ToneKind::Dot, ToneKind::Line, ToneKind::Checker,
                              ToneKind::Stochastic};
    const double periods[] = {2.5, 3.0, 4.0, 5.0, 6.5, 8.0, 10.0, 12.0};
    const double tones[] = {0.2, 0.4, 0.6, 0.8};
    const double angles[] = {15.0, 75.0, 135.0};
    for (const auto kind : kinds)
        for (const double p : periods)
            for (const double t : tones)
                for (const double a : angles) {
                    ScreentoneSpec s;
                    s.kind = kind;
                    s.period = p;
                    s.angle_deg = a;
                    s.tone = t;
                    s.seed = rng.next_u64();
                    specs.push_back(s);
                }
    return specs;
}

}  // namespace

ScreenEmbedder ScreenEmbedder::fit(std::uint64_t seed) {
    ScreenEmbedder emb;
    const int F = emb.cfg.feature_count();
    const auto specs = bank_specs(seed);
    constexpr int side = 64, margin = 16, stride = 4;

    std::vector<std::vector<double>> samples;   // all pixels x F
    std::vector<std::vector<double>> per_render;  // render means x F
    for (const auto& spec : specs) {
        const Image tile = render_screentone(spec, side, side);
        nn::NoGrad ng;
        auto feats = emb.feature_graph<double>(nn::make_const(nn::from_image<double>(tile)));
        const auto& t = feats->value;
        std::vector<double> mean_vec(F, 0.0);
        int count = 0;
        for (int y = margin; y < side - margin; y += stride)
            for (int x = margin; x < side - margin; x += stride) {
                std::vector<double> f(F);
                for (int c = 0; c < F; ++c)
                    f[static_cast<size_t>(c)] =
                        t.data[(static_cast<size_t>(c) * side + y) * side + x];
                for (int c = 0; c < F; ++c) mean_vec[static_cast<size_t>(c)] += f[static_cast<size_t>(c)];
                samples.push_back(std::move(f));
                ++count;
            }
        for (auto& v : mean_vec) v /= count;
        per_render.push_back(std::move(mean_vec));
    }

    emb.mean.assign(F, 0.0);
    for (const auto& s : samples)
        for (int c = 0; c < F; ++c) emb.mean[static_cast<size_t>(c)] += s[static_cast<size_t>(c)];
    for (auto& v : emb.mean) v /= static_cast<double>(samples.size());

    std::vector<double> cov(static_cast<size_t>(F) * F, 0.0);
    for (const auto& s : samples)
        for (int i = 0; i < F; ++i) {
            const double di = s[static_cast<size_t>(i)] - emb.mean[static_cast<size_t>(i)];
            for (int j = i; j < F; ++j)
                cov[static_cast<size_t>(i) * F + j] += di * (s[static_cast<size_t>(j)] - emb.mean[static_cast<size_t>(j)]);
        }
    for (int i = 0; i < F; ++i)
        for (int j = i; j < F; ++j) {
            cov[static_cast<size_t>(i) * F + j] /= static_cast<double>(samples.size());
            cov[static_cast<size_t>(j) * F + i] = cov[static_cast<size_t>(i) * F + j];
        }

    std::vector<double> eigvals, eigvecs;
    jacobi_eigen(cov, F, eigvals, eigvecs);
    emb.proj.assign(4, std::vector<double>(F));
    for (int c = 0; c < 4; ++c) {
        const double inv_sd = 1.0 / std::sqrt(std::max(eigvals[static_cast<size_t>(c)], 0.0) + 1e-9);
        for (int f = 0; f < F; ++f)
            emb.proj[static_cast<size_t>(c)][static_cast<size_t>(f)] =
                eigvecs[static_cast<size_t>(f) * F + c] * inv_sd;
    }

    // Normalization constant: rms pairwise distance between projected
    // per-render bank means.
    std::vector<std::vector<double>> pm;
    for (const auto& r : per_render) {
        std::vector<double> p(4, 0.0);
        for (int c = 0; c < 4; ++c)
            for (int f = 0; f < F; ++f)
                p[static_cast<size_t>(c)] += emb.proj[static_cast<size_t>(c)][static_cast<size_t>(f)] *
                                             (r[static_cast<size_t>(f)] - emb.mean[static_cast<size_t>(f)]);
        pm.push_back(std::move(p));
    }
    double acc = 0.0;
    size_t pairs = 0;
    for (size_t i = 0; i < pm.size(); ++i)
        for (size_t j = i + 1; j < pm.size(); ++j) {
            double d2 = 0.0;
            for (int c = 0; c < 4; ++c) {
                const double d = pm[i][static_cast<size_t>(c)] - pm[j][static_cast<size_t>(c)];
                d2 += d * d;
            }
            acc += d2;
            ++pairs;
        }
    emb.bank_rms = std::sqrt(acc / static_cast<double>(pairs));
    return emb;
}

void ScreenEmbedder::save(const std::string& path) const {
    nlohmann::json j{{"version", 1},
                     {"config",
                      {{"orientations", cfg.orientations},
                       {"periods", cfg.periods},
                       {"sigma_factor", cfg.sigma_factor},
                       {"max_kernel", cfg.max_kernel},
                       {"pool_window", cfg.pool_window}}},
                     {"mean", mean},
                     {"proj", proj},
                     {"bank_rms", bank_rms}};
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write embedding asset: " + path);
    os << j.dump(1) << "\n";
}

ScreenEmbedder ScreenEmbedder::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open embedding asset: " + path);
    nlohmann::json j;
    is >> j;
    ScreenEmbedder emb;
    const auto& c = j.at("config");
    emb.cfg.orientations = c.at("orientations").get<int>();
    emb.cfg.periods = c.at("periods").get<std::vector<double>>();
    emb.cfg.sigma_factor = c.at("sigma_factor").get<double>();
    emb.cfg.max_kernel = c.at("max_kernel").get<int>();
    emb.cfg.pool_window = c.at("pool_window").get<int>();
    emb.mean = j.at("mean").get<std::vector<double>>();
    emb.proj = j.at("proj").get<std::vector<std::vector<double>>>();
    emb.bank_rms = j.at("bank_rms").get<double>();
    if (emb.proj.size() != 4 || emb.mean.size() != static_cast<size_t>(emb.cfg.feature_count()))
        throw std::runtime_error("embedding asset is inconsistent: " + path);
    return emb;
}

const ScreenEmbedder& ScreenEmbedder::default_instance() {
    static const ScreenEmbedder emb = [] {
        std::string dir;
        if (const char* env = std::getenv("MANGARES_ASSET_DIR"); env && *env)
            dir = env;
        else
#ifdef MANGARES_DEFAULT_ASSET_DIR
            dir = MANGARES_DEFAULT_ASSET_DIR;
#else
            dir = "assets";
#endif
        return load(dir + "/screen_embedding.json");
    }();
    return emb;
}

ScreenMap ScreenEmbedder::embed(const Image& img) const {
    if (img.channels != 1) throw std::invalid_argument("embed: single-channel input expected");
    nn::NoGrad ng;
    auto out = embed_graph<double>(nn::make_const(nn::from_image<double>(img)));
    return nn::to_image(out->value);
}

namespace {

LabelMap resize_labels_nearest(const LabelMap& labels, int th, int tw) {
    if (labels.height == th && labels.width == tw) return labels;
    LabelMap out(th, tw);
    for (int y = 0; y < th; ++y) {
        const int sy = std::min(labels.height - 1,
                                static_cast<int>((y + 0.5) * labels.height / th));
        for (int x = 0; x < tw; ++x) {
            const int sx = std::min(labels.width - 1,
                                    static_cast<int>((x + 0.5) * labels.width / tw));
            out.at(y, x) = labels.at(sy, sx);
        }
    }
    return out;
}

SuperpixelPartition relabel_contiguous(const LabelMap& labels) {
    std::vector<int> ids(labels.data);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    SuperpixelPartition part;
    part.labels = LabelMap(labels.height, labels.width);
    part.n = static_cast<int>(ids.size());
    for (size_t i = 0; i < labels.data.size(); ++i)
        part.labels.data[i] = static_cast<int>(
            std::lower_bound(ids.begin(), ids.end(), labels.data[i]) - ids.begin());
    return part;
}

}  // namespace

SuperpixelPartition superpixels(const Image& gt, const LabelMap* labels, int target_n) {
    if (labels) return relabel_contiguous(resize_labels_nearest(*labels, gt.height, gt.width));

    const int H = gt.height, W = gt.width;
    const ScreenMap phi = ScreenEmbedder::default_instance().embed(gt);
    const int S = std::max(4, static_cast<int>(std::lround(
                                  std::sqrt(static_cast<double>(H) * W / std::max(1, target_n)))));
    struct Center {
        double y, x;
        double f[4];
        size_t count = 0;
    };
    std::vector<Center> centers;
    for (int cy = S / 2; cy < H; cy += S)
        for (int cx = S / 2; cx < W; cx += S) {
            Center c;
            c.y = cy;
            c.x = cx;
            for (int k = 0; k < 4; ++k) c.f[k] = phi.at(cy, cx, k);
            centers.push_back(c);
        }

    const double m2 = 0.25;  // compactness^2; embedding channels are ~unit scale
    std::vector<int> assign(static_cast<size_t>(H) * W, -1);
    std::vector<double> best(static_cast<size_t>(H) * W, 1e300);
    for (int iter = 0; iter < 8; ++iter) {
        std::fill(best.begin(), best.end(), 1e300);
        std::fill(assign.begin(), assign.end(), -1);
        for (size_t ci = 0; ci < centers.size(); ++ci) {
            const auto& c = centers[ci];
            const int y0 = std::max(0, static_cast<int>(c.y) - 2 * S);
            const int y1 = std::min(H - 1, static_cast<int>(c.y) + 2 * S);
            const int x0 = std::max(0, static_cast<int>(c.x) - 2 * S);
            const int x1 = std::min(W - 1, static_cast<int>(c.x) + 2 * S);
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    double d = 0.0;
                    for (int k = 0; k < 4; ++k) {
                        const double df = phi.at(y, x, k) - c.f[k];
                        d += df * df;
                    }
                    const double dy = (y - c.y) / S, dx = (x - c.x) / S;
                    d += m2 * (dy * dy + dx * dx);
                    const size_t i = static_cast<size_t>(y) * W + x;
                    if (d < best[i]) {
                        best[i] = d;
                        assign[i] = static_cast<int>(ci);
                    }
                }
        }
        // Window misses are possible at borders after centers drift; snap
        // those pixels to the spatially nearest center.
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                size_t i = static_cast<size_t>(y) * W + x;
                if (assign[i] >= 0) continue;
                double bd = 1e300;
                for (size_t ci = 0; ci < centers.size(); ++ci) {
                    const double dy = y - centers[ci].y, dx = x - centers[ci].x;
                    const double d = dy * dy + dx * dx;
                    if (d < bd) {
                        bd = d;
                        assign[i] = static_cast<int>(ci);
                    }
                }
            }
        for (auto& c : centers) {
            c.y = c.x = 0.0;
            std::fill(std::begin(c.f), std::end(c.f), 0.0);
            c.count = 0;
        }
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                auto& c = centers[static_cast<size_t>(assign[static_cast<size_t>(y) * W + x])];
                c.y += y;
                c.x += x;
                for (int k = 0; k < 4; ++k) c.f[k] += phi.at(y, x, k);
                ++c.count;
            }
        for (auto& c : centers)
            if (c.count) {
                c.y /= static_cast<double>(c.count);
                c.x /= static_cast<double>(c.count);
                for (auto& f : c.f) f /= static_cast<double>(c.count);
            }
    }
    LabelMap lm(H, W);
    for (size_t i = 0; i < lm.data.size(); ++i) lm.data[i] = assign[i];
    return relabel_contiguous(lm);
}

double svae_distance(const Image& a, const Image& b, const ScreenEmbedder& emb) {
    if (!a.same_shape(b)) throw std::invalid_argument("svae_distance: shape mismatch");
    const ScreenMap pa = emb.embed(a), pb = emb.embed(b);
    double acc = 0.0;
    const size_t hw = static_cast<size_t>(a.height) * a.width;
    for (size_t i = 0; i < hw; ++i) {
        double d2 = 0.0;
        for (int c = 0; c < 4; ++c) {
            const double d = pa.data[static_cast<size_t>(c) * hw + i] - pb.data[static_cast<size_t>(c) * hw + i];
            d2 += d * d;
        }
        acc += std::sqrt(d2);
    }
    return acc / static_cast<double>(hw) / emb.bank_rms;
}

double svae_distance(const Image& a, const Image& b) {
    return svae_distance(a, b, ScreenEmbedder::default_instance());
}

double svae_distance(const Image& a, const Image& b, const BitonalMask& mask,
                     const ScreenEmbedder& emb) {
    if (!a.same_shape(b)) throw std::invalid_argument("svae_distance: shape mismatch");
    if (mask.height != a.height || mask.width != a.width)
        throw std::invalid_argument("svae_distance: mask shape mismatch");
    const ScreenMap pa = emb.embed(a), pb = emb.embed(b);
    double acc = 0.0;
    size_t n = 0;
    const size_t hw = static_cast<size_t>(a.height) * a.width;
    for (size_t i = 0; i < hw; ++i) {
        if (!mask.data[i]) continue;
        double d2 = 0.0;
        for (int c = 0; c < 4; ++c) {
            const double d = pa.data[static_cast<size_t>(c) * hw + i] - pb.data[static_cast<size_t>(c) * hw + i];
            d2 += d * d;
        }
        acc += std::sqrt(d2);
        ++n;
    }
    if (n == 0) throw std::invalid_argument("svae_distance: empty mask");
    return acc / static_cast<double>(n) / emb.bank_rms;
}

}  // namespace mr
