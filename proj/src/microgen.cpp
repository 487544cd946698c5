#include "granite/microgen.hpp"

#include <cmath>
#include <numbers>
#include <functional>
#include <stdexcept>

#include "granite/clusterlab.hpp"
#include "granite/rng.hpp"

namespace granite {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Seed {
    double x, y;  // continuous position in [0, size)
    double w;     // Laguerre weight, starts at (d/2)^2
};

double per_delta(double a, double b, double size) {
    double d = std::abs(a - b);
    return std::min(d, size - d);
}

double per_dist2(double ax, double ay, double bx, double by, double size) {
    double dx = per_delta(ax, bx, size);
    double dy = per_delta(ay, by, size);
    return dx * dx + dy * dy;
}

void assign_labels(const std::vector<Seed>& seeds, std::size_t size,
                   std::vector<int>& labels) {
    const double s = static_cast<double>(size);
    labels.assign(size * size, 0);
    for (std::size_t r = 0; r < size; ++r)
        for (std::size_t c = 0; c < size; ++c) {
            double best = 1e300;
            int best_i = 0;
            for (std::size_t i = 0; i < seeds.size(); ++i) {
                double p = per_dist2(static_cast<double>(c), static_cast<double>(r),
                                     seeds[i].x, seeds[i].y, s) -
                           seeds[i].w;
                if (p < best) {
                    best = p;
                    best_i = static_cast<int>(i);
                }
            }
            labels[r * size + c] = best_i;
        }
}

}  // namespace

Microstructure generate(const GeneratorConfig& cfg) {
    if (cfg.size < 16) throw std::invalid_argument("generate: grid must be at least 16");
    if (cfg.sigma <= 0.0 || cfg.cutoff <= 0.0)
        throw std::invalid_argument("generate: sigma and cutoff must be positive");

    Rng rng(cfg.seed);
    const double lo = std::exp(cfg.mu - cfg.cutoff * cfg.sigma);
    const double hi = std::exp(cfg.mu + cfg.cutoff * cfg.sigma);
    const double domain_area = static_cast<double>(cfg.size) * static_cast<double>(cfg.size);

    std::vector<double> diam;
    double area = 0.0;
    while (area < domain_area) {
        double d = rng.lognormal(cfg.mu, cfg.sigma);
        if (d < lo || d > hi) continue;
        diam.push_back(d);
        area += std::numbers::pi * 0.25 * d * d;
    }

    // largest first, as packing goes: big grains claim space while it is free
    std::sort(diam.begin(), diam.end(), std::greater<>());

    std::vector<Seed> seeds;
    seeds.reserve(diam.size());
    const double s = static_cast<double>(cfg.size);
    for (std::size_t gi = 0; gi < diam.size(); ++gi) {
        double r_new = 0.5 * diam[gi];
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
            double x = rng.uniform(0.0, s);
            double y = rng.uniform(0.0, s);
            bool ok = true;
            for (std::size_t j = 0; j < seeds.size() && ok; ++j) {
                double min_d = 0.5 * (r_new + 0.5 * diam[j]);
                if (per_dist2(x, y, seeds[j].x, seeds[j].y, s) < min_d * min_d) ok = false;
            }
            if (ok) {
                seeds.push_back({x, y, r_new * r_new});
                placed = true;
            }
        }
        if (!placed)
            throw std::runtime_error(
                "generate: seed placement failed; grain too large for the grid, "
                "use a larger grid or smaller mu");
    }

    std::vector<std::array<double, 3>> angles(seeds.size());
    for (auto& a : angles)
        a = {rng.uniform(0.0, kTwoPi), rng.uniform(0.0, kTwoPi), rng.uniform(0.0, kTwoPi)};

    std::vector<int> raw(cfg.size * cfg.size);
    assign_labels(seeds, cfg.size, raw);

    // capacity nudging: pull realized cell areas toward the sampled targets
    for (int sweep = 0; sweep < cfg.calibration_sweeps; ++sweep) {
        std::vector<double> realized(seeds.size(), 0.0);
        for (int l : raw) realized[static_cast<std::size_t>(l)] += 1.0;
        for (std::size_t i = 0; i < seeds.size(); ++i) {
            double target = std::numbers::pi * 0.25 * diam[i] * diam[i];
            seeds[i].w += 1.0 * (target - realized[i]) / std::numbers::pi;
        }
        assign_labels(seeds, cfg.size, raw);
    }

    // drop grains that ended up with zero pixels
    std::vector<int> remap(seeds.size(), -1);
    int next = 0;
    for (int l : raw)
        if (remap[static_cast<std::size_t>(l)] < 0) remap[static_cast<std::size_t>(l)] = -2;
    for (std::size_t i = 0; i < seeds.size(); ++i)
        if (remap[i] == -2) remap[i] = next++;

    Microstructure ms;
    ms.euler = Tensor({cfg.size, cfg.size, 3});
    ms.labels = Tensor({cfg.size, cfg.size, 1});
    for (std::size_t r = 0; r < cfg.size; ++r)
        for (std::size_t c = 0; c < cfg.size; ++c) {
            auto i = static_cast<std::size_t>(raw[r * cfg.size + c]);
            ms.labels(r, c, 0) = static_cast<float>(remap[i]);
            for (std::size_t ch = 0; ch < 3; ++ch)
                ms.euler(r, c, ch) = static_cast<float>(angles[i][ch]);
        }
    ms.gb = compute_gb(ms.euler);
    return ms;
}

Tensor compute_gb(const Tensor& euler) {
    if (euler.rank() != 3 || euler.dim(2) != 3)
        throw std::invalid_argument("compute_gb: expected H x W x 3");
    const std::size_t h = euler.dim(0), w = euler.dim(1);
    Tensor gb({h, w, 1});
    for (std::size_t r = 0; r < h; ++r) {
        std::size_t rp = (r + 1) % h, rm = (r + h - 1) % h;
        for (std::size_t c = 0; c < w; ++c) {
            std::size_t cp = (c + 1) % w, cm = (c + w - 1) % w;
            double acc = 0.0;
            for (std::size_t ch = 0; ch < 3; ++ch) {
                double dx = 0.5 * (static_cast<double>(euler(r, cp, ch)) -
                                   static_cast<double>(euler(r, cm, ch)));
                double dy = 0.5 * (static_cast<double>(euler(rp, c, ch)) -
                                   static_cast<double>(euler(rm, c, ch)));
                acc += dx * dx + dy * dy;
            }
            gb(r, c, 0) = static_cast<float>(std::sqrt(acc));
        }
    }
    return gb;
}

GrainStats grain_stats(const Microstructure& ms) {
    const std::size_t h = ms.labels.dim(0), w = ms.labels.dim(1);
    int n_grains = 0;
    for (std::size_t i = 0; i < ms.labels.size(); ++i)
        n_grains = std::max(n_grains, static_cast<int>(ms.labels[i]) + 1);

    std::vector<std::vector<PointXY>> pixels(static_cast<std::size_t>(n_grains));
    std::vector<std::array<double, 3>> euler(static_cast<std::size_t>(n_grains),
                                             {0.0, 0.0, 0.0});
    std::vector<bool> seen(static_cast<std::size_t>(n_grains), false);

    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            auto g = static_cast<std::size_t>(ms.labels(r, c, 0));
            auto& pts = pixels[g];
            double x = static_cast<double>(c), y = static_cast<double>(r);
            if (pts.empty()) {
                if (!seen[g]) {
                    seen[g] = true;
                    for (std::size_t ch = 0; ch < 3; ++ch)
                        euler[g][ch] = static_cast<double>(ms.euler(r, c, ch));
                }
            } else {
                // unwrap relative to the grain's first pixel so periodic
                // fragments fit as one blob
                double ws = static_cast<double>(w), hs = static_cast<double>(h);
                x -= ws * std::round((x - pts.front().x) / ws);
                y -= hs * std::round((y - pts.front().y) / hs);
            }
            pts.push_back({x, y});
        }

    GrainStats st;
    for (std::size_t g = 0; g < pixels.size(); ++g) {
        double a = static_cast<double>(pixels[g].size());
        st.diameter.push_back(2.0 * std::sqrt(a / std::numbers::pi) /
                              static_cast<double>(h));
        EllipseFit fit = fit_ellipse(pixels[g]);
        bool under = !fit.usable();
        st.ar_underdetermined.push_back(under);
        st.aspect_ratio.push_back(under ? 1.0 : fit.ar);
        st.euler.push_back(euler[g]);
    }

    auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    };
    st.mean_diameter = mean(st.diameter);
    st.mean_aspect_ratio = mean(st.aspect_ratio);
    for (std::size_t ch = 0; ch < 3; ++ch) {
        double s = 0.0;
        for (const auto& e : st.euler) s += e[ch];
        st.mean_euler[ch] = st.euler.empty() ? 0.0 : s / static_cast<double>(st.euler.size());
    }
    return st;
}

}  // namespace granite
