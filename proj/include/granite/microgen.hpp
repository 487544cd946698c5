#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "granite/tensor.hpp"

namespace granite {

struct GeneratorConfig {
    std::size_t size = 128;   // H = W, pixels
    double mu = 2.3;          // lognormal location of grain diameter (px)
    double sigma = 0.4;       // lognormal scale
    double cutoff = 4.0;      // truncation at mu +- cutoff*sigma
    std::uint64_t seed = 0;
    int calibration_sweeps = 20;  // Laguerre weight adjustments toward target areas
};

struct Microstructure {
    Tensor euler;   // H x W x 3, radians, Bunge Z-X-Z (Phi, Psi1, Psi2)
    Tensor gb;      // H x W x 1, L2 norm of the Euler-angle gradient
    Tensor labels;  // H x W x 1, grain ids as floats
};

struct GrainStats {
    std::vector<double> diameter;              // 2*sqrt(area/pi)/H per grain
    std::vector<double> aspect_ratio;          // >= 1, ellipse fit of grain mask
    std::vector<bool> ar_underdetermined;      // grain had < 5 pixels
    std::vector<std::array<double, 3>> euler;  // per-grain angles

    double mean_diameter = 0.0;
    double mean_aspect_ratio = 0.0;
    std::array<double, 3> mean_euler = {0.0, 0.0, 0.0};

    std::size_t n_grains() const { return diameter.size(); }
};

// Periodic Laguerre tessellation with truncated-lognormal target diameters,
// uniform random orientations per grain, and the derived gb channel.
Microstructure generate(const GeneratorConfig& cfg);

// Central differences with periodic wrap per channel;
// out = sqrt(sum_ch dx^2 + dy^2).
Tensor compute_gb(const Tensor& euler);

GrainStats grain_stats(const Microstructure& ms);

}  // namespace granite
