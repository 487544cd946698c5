#pragma once

#include <cstdint>
#include <vector>

#include "granite/tensor.hpp"

namespace granite {

struct Peak {
    std::size_t row = 0;
    std::size_t col = 0;
    double value = 0.0;
    int rank = 0;  // 1 = largest
};

struct PixelMask {
    std::size_t h = 0;
    std::size_t w = 0;
    std::vector<std::uint8_t> on;  // row-major, 0/1

    bool at(std::size_t r, std::size_t c) const { return on[r * w + c] != 0; }
    std::size_t count() const;
};

enum class EllipseStatus {
    Ok,
    Isotropic,        // |AR-1| < 0.05, orientation not meaningful
    Underdetermined,  // fewer than 5 points
    Degenerate,       // rank-deficient or non-elliptic quadratic
};

struct EllipseFit {
    double z[5] = {0, 0, 0, 0, 0};
    double theta = 0.0;  // major-axis angle vs +x (columns), folded to [0, pi)
    double ar = 1.0;     // major/minor axis length ratio, >= 1
    EllipseStatus status = EllipseStatus::Ok;

    bool usable() const {
        return status == EllipseStatus::Ok || status == EllipseStatus::Isotropic;
    }
};

struct Cluster {
    Peak peak;
    double threshold = 0.0;
    PixelMask mask;
    double area_fraction = 0.0;
    EllipseFit ellipse;
};

// Separable Gaussian blur, kernel truncated at 3*sigma, symmetric reflect
// padding at the borders (the coarse fields are not periodic). Preserves the
// field sum exactly up to rounding.
TensorD smooth(const TensorD& field, double sigma);

// Local maxima over the 8-neighborhood. A pixel wins a tie against an equal
// neighbor only if it comes first in row-major order, so plateaus yield one
// peak. Sorted by value descending (ties by scan order), at most k returned.
std::vector<Peak> find_peaks(const TensorD& field, std::size_t k);

// mask = field >= t * peak.value, then the 8-connected component containing
// the peak. Ellipse characterization is left to fit_ellipse.
Cluster extract_cluster(const TensorD& field, const Peak& peak, double t);

// 8-connected component labels, 0-based; two-pass union-find.
std::vector<int> label_components(const PixelMask& mask, int& n_components);

struct PointXY {
    double x;
    double y;
};

// Least-squares conic through the points: [x^2, xy, y^2, x, y] z = 1 with
// coordinates centered at the point mean. theta and AR come from the
// quadratic-form eigenstructure; AR is the geometric axis ratio.
EllipseFit fit_ellipse(const std::vector<PointXY>& points);
EllipseFit fit_ellipse(const PixelMask& mask);

std::vector<PointXY> mask_points(const PixelMask& mask);

}  // namespace granite
