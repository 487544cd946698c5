#include "granite/clusterlab.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include <Eigen/Dense>

namespace granite {
namespace {

std::vector<double> gaussian_kernel(double sigma) {
    int radius = static_cast<int>(std::floor(3.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int o = -radius; o <= radius; ++o) {
        double v = std::exp(-0.5 * (o / sigma) * (o / sigma));
        k[o + radius] = v;
        sum += v;
    }
    for (auto& v : k) v /= sum;
    return k;
}

// Symmetric reflection: -1 -> 0, n -> n-1. Keeps the blur mass-preserving.
std::size_t reflect(long i, long n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return static_cast<std::size_t>(i);
}

struct UnionFind {
    std::vector<int> parent;
    int make() {
        parent.push_back(static_cast<int>(parent.size()));
        return parent.back();
    }
    int find(int x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    }
    void unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
};

}  // namespace

std::size_t PixelMask::count() const {
    return static_cast<std::size_t>(std::count(on.begin(), on.end(), std::uint8_t(1)));
}

TensorD smooth(const TensorD& field, double sigma) {
    if (sigma <= 0.0) throw std::invalid_argument("smooth: sigma must be positive");
    if (field.rank() != 2) throw std::invalid_argument("smooth: expected a 2D field");
    auto k = gaussian_kernel(sigma);
    int radius = static_cast<int>(k.size() / 2);
    const long h = static_cast<long>(field.dim(0));
    const long w = static_cast<long>(field.dim(1));

    TensorD rows(field.dims());
    for (long i = 0; i < h; ++i)
        for (long j = 0; j < w; ++j) {
            double acc = 0.0;
            for (int o = -radius; o <= radius; ++o)
                acc += k[o + radius] * field(static_cast<std::size_t>(i), reflect(j + o, w));
            rows(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = acc;
        }

    TensorD out(field.dims());
    for (long i = 0; i < h; ++i)
        for (long j = 0; j < w; ++j) {
            double acc = 0.0;
            for (int o = -radius; o <= radius; ++o)
                acc += k[o + radius] * rows(reflect(i + o, h), static_cast<std::size_t>(j));
            out(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = acc;
        }
    return out;
}

std::vector<Peak> find_peaks(const TensorD& field, std::size_t k) {
    if (field.rank() != 2) throw std::invalid_argument("find_peaks: expected a 2D field");
    if (k == 0) throw std::invalid_argument("find_peaks: k must be >= 1");
    const long h = static_cast<long>(field.dim(0));
    const long w = static_cast<long>(field.dim(1));

    std::vector<Peak> peaks;
    for (long i = 0; i < h; ++i)
        for (long j = 0; j < w; ++j) {
            double v = field(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
            bool is_peak = true;
            for (long di = -1; di <= 1 && is_peak; ++di)
                for (long dj = -1; dj <= 1 && is_peak; ++dj) {
                    if (di == 0 && dj == 0) continue;
                    long ni = i + di, nj = j + dj;
                    if (ni < 0 || ni >= h || nj < 0 || nj >= w) continue;
                    double nv = field(static_cast<std::size_t>(ni), static_cast<std::size_t>(nj));
                    if (nv > v) is_peak = false;
                    // equal neighbor earlier in scan order owns the plateau
                    if (nv == v && (ni * w + nj) < (i * w + j)) is_peak = false;
                }
            if (is_peak)
                peaks.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), v, 0});
        }

    std::stable_sort(peaks.begin(), peaks.end(), [w](const Peak& a, const Peak& b) {
        if (a.value != b.value) return a.value > b.value;
        return a.row * static_cast<std::size_t>(w) + a.col <
               b.row * static_cast<std::size_t>(w) + b.col;
    });
    if (peaks.size() > k) peaks.resize(k);
    for (std::size_t i = 0; i < peaks.size(); ++i) peaks[i].rank = static_cast<int>(i + 1);
    return peaks;
}

std::vector<int> label_components(const PixelMask& mask, int& n_components) {
    const long h = static_cast<long>(mask.h);
    const long w = static_cast<long>(mask.w);
    std::vector<int> labels(mask.h * mask.w, -1);
    UnionFind uf;

    for (long i = 0; i < h; ++i)
        for (long j = 0; j < w; ++j) {
            std::size_t idx = static_cast<std::size_t>(i * w + j);
            if (!mask.on[idx]) continue;
            int best = -1;
            // already-visited 8-neighbors: left and the three above
            const long off[4][2] = {{0, -1}, {-1, -1}, {-1, 0}, {-1, 1}};
            for (auto& o : off) {
                long ni = i + o[0], nj = j + o[1];
                if (ni < 0 || nj < 0 || nj >= w) continue;
                std::size_t nidx = static_cast<std::size_t>(ni * w + nj);
                if (labels[nidx] < 0) continue;
                if (best < 0)
                    best = labels[nidx];
                else
                    uf.unite(best, labels[nidx]);
            }
            labels[idx] = best >= 0 ? best : uf.make();
        }

    std::vector<int> remap(uf.parent.size(), -1);
    n_components = 0;
    for (auto& l : labels) {
        if (l < 0) continue;
        int root = uf.find(l);
        if (remap[static_cast<std::size_t>(root)] < 0)
            remap[static_cast<std::size_t>(root)] = n_components++;
        l = remap[static_cast<std::size_t>(root)];
    }
    return labels;
}

Cluster extract_cluster(const TensorD& field, const Peak& peak, double t) {
    if (t <= 0.0 || t >= 1.0) throw std::invalid_argument("extract_cluster: t must be in (0,1)");
    Cluster c;
    c.peak = peak;
    c.threshold = t;
    c.mask.h = field.dim(0);
    c.mask.w = field.dim(1);
    c.mask.on.assign(c.mask.h * c.mask.w, 0);

    double cut = t * peak.value;
    PixelMask above{c.mask.h, c.mask.w, std::vector<std::uint8_t>(c.mask.h * c.mask.w, 0)};
    for (std::size_t i = 0; i < field.size(); ++i)
        above.on[i] = field[i] >= cut ? 1 : 0;

    int n = 0;
    auto labels = label_components(above, n);
    int keep = labels[peak.row * c.mask.w + peak.col];
    for (std::size_t i = 0; i < labels.size(); ++i)
        c.mask.on[i] = (labels[i] == keep && keep >= 0) ? 1 : 0;
    c.area_fraction = static_cast<double>(c.mask.count()) /
                      static_cast<double>(c.mask.h * c.mask.w);
    return c;
}

std::vector<PointXY> mask_points(const PixelMask& mask) {
    std::vector<PointXY> pts;
    for (std::size_t r = 0; r < mask.h; ++r)
        for (std::size_t c = 0; c < mask.w; ++c)
            if (mask.at(r, c))
                pts.push_back({static_cast<double>(c), static_cast<double>(r)});
    return pts;
}

EllipseFit fit_ellipse(const PixelMask& mask) { return fit_ellipse(mask_points(mask)); }

EllipseFit fit_ellipse(const std::vector<PointXY>& points) {
    EllipseFit fit;
    const std::size_t n = points.size();
    if (n < 5) {
        fit.status = EllipseStatus::Underdetermined;
        return fit;
    }

    double mx = 0.0, my = 0.0;
    for (const auto& p : points) {
        mx += p.x;
        my += p.y;
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);

    Eigen::MatrixXd A(static_cast<Eigen::Index>(n), 5);
    for (std::size_t i = 0; i < n; ++i) {
        double x = points[i].x - mx;
        double y = points[i].y - my;
        A(static_cast<Eigen::Index>(i), 0) = x * x;
        A(static_cast<Eigen::Index>(i), 1) = x * y;
        A(static_cast<Eigen::Index>(i), 2) = y * y;
        A(static_cast<Eigen::Index>(i), 3) = x;
        A(static_cast<Eigen::Index>(i), 4) = y;
    }
    Eigen::VectorXd b = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    qr.setThreshold(1e-10);
    if (qr.rank() < 5) {
        fit.status = EllipseStatus::Degenerate;
        fit.ar = std::numeric_limits<double>::infinity();
        return fit;
    }
    Eigen::VectorXd z = qr.solve(b);
    for (int i = 0; i < 5; ++i) fit.z[i] = z(i);

    double z1 = z(0), z2 = z(1), z3 = z(2);
    double disc = std::sqrt((z1 - z3) * (z1 - z3) + z2 * z2);
    double lam_minor = 0.5 * (z1 + z3 + disc);  // larger coefficient, shorter axis
    double lam_major = 0.5 * (z1 + z3 - disc);  // smaller coefficient, longer axis
    if (lam_major <= 0.0) {
        fit.status = EllipseStatus::Degenerate;
        fit.ar = std::numeric_limits<double>::infinity();
        return fit;
    }

    // Coefficient eigenvalues scale as 1/axis^2, so the geometric axis ratio
    // is the square root of their ratio.
    fit.ar = std::sqrt(lam_minor / lam_major);

    double theta;
    if (std::abs(z2) < 1e-12 * std::max(1.0, disc))
        theta = (z1 <= z3) ? 0.0 : std::numbers::pi / 2;
    else
        theta = std::atan((z3 - z1 - disc) / z2);
    while (theta < 0.0) theta += std::numbers::pi;
    while (theta >= std::numbers::pi) theta -= std::numbers::pi;
    fit.theta = theta;

    if (std::abs(fit.ar - 1.0) < 0.05) fit.status = EllipseStatus::Isotropic;
    return fit;
}

}  // namespace granite
