#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "granite/cednet.hpp"
#include "granite/clusterlab.hpp"
#include "granite/tensor.hpp"

namespace granite {

// ---------------------------------------------------------------------------
// field metrics

struct CosineResult {
    double value = 0.0;
    bool defined = true;  // false when a field is constant (zero norm after rescale)
};

// Min-max rescales each field to [-1,1] independently, flattens, and returns
// the cosine of the angle between them.
CosineResult cosine_similarity(const TensorD& a, const TensorD& b);

struct FieldMetrics {
    double mse_sum = 0.0;  // sum over pixels
    double mse_px = 0.0;   // mse_sum / pixel count
    CosineResult cosine;
};

FieldMetrics field_metrics(const TensorD& pred, const TensorD& truth);

// ---------------------------------------------------------------------------
// cluster reports and their comparison

struct ClusterRecord {
    std::uint64_t sample = 0;
    int rank = 0;  // 1 = largest peak
    double threshold = 0.0;
    double peak_row = 0.0;
    double peak_col = 0.0;
    double peak_value = 0.0;
    double area_fraction = 0.0;
    double theta_deg = 0.0;  // [0, 180)
    double ar = 1.0;
    std::string status = "ok";  // ok | isotropic | underdetermined | degenerate
    std::size_t h = 0, w = 0;
    std::vector<std::uint32_t> rle;  // mask runs, alternating off/on, starting off
};

ClusterRecord make_record(std::uint64_t sample, const Cluster& cluster);

std::string record_to_json(const ClusterRecord& r);
ClusterRecord record_from_json(const std::string& line);

void write_records(const std::filesystem::path& path, const std::vector<ClusterRecord>& rs);
std::vector<ClusterRecord> read_records(const std::filesystem::path& path);

std::vector<std::uint32_t> mask_to_rle(const PixelMask& mask);
PixelMask rle_to_mask(std::size_t h, std::size_t w, const std::vector<std::uint32_t>& rle);

struct ClusterErrorRecord {
    std::uint64_t sample = 0;
    int rank = 0;
    double threshold = 0.0;
    bool skipped = false;  // rank/threshold pair missing in either report
    double peak_distance = 0.0;
    double delta_a = 0.0;
    bool shape_ok = false;  // both ellipse fits usable
    double delta_theta_deg = 0.0;      // folded into [0, 90]
    double delta_theta_raw_deg = 0.0;  // unfolded absolute difference
    double delta_ar = 0.0;
};

// Matches records by (sample, rank, threshold) — rank to rank, never by
// proximity — and scores peak distance, relative area error, folded
// orientation error, and relative aspect-ratio error.
std::vector<ClusterErrorRecord> cluster_errors(const std::vector<ClusterRecord>& pred,
                                               const std::vector<ClusterRecord>& truth);

// |theta_a - theta_b| folded into [0, 90] degrees (orientation is pi-periodic)
double fold_angle_deg(double a_deg, double b_deg);

// ---------------------------------------------------------------------------
// aggregation

struct BinnedCurve {
    std::vector<double> stat_mean;  // bin-averaged statistic
    std::vector<double> mse_mean;   // bin-averaged MSE
    std::vector<std::size_t> counts;
    std::vector<double> edges;  // bins+1 ascending edges over the observed range
};

// Equal-width bins over [min(stat), max(stat)]; the last bin is closed.
BinnedCurve bin_mse_by_stat(const std::vector<double>& stats, const std::vector<double>& mses,
                            std::size_t bins);

// Indices of samples whose MSE is within mean + nsigma * stddev; used to drop
// grossly mispredicted samples before cluster analysis.
std::vector<std::size_t> exclude_high_mse(const std::vector<double>& mses, double nsigma = 2.0);

// ---------------------------------------------------------------------------
// first-layer filter analysis

enum class FilterType {
    AlwaysActive = 1,       // positive response on every probe
    HighAngle = 2,          // active only toward the top of the orientation sweep
    LowAngle = 3,           // active only toward the bottom of the sweep
    BoundarySelective = 4,  // silent on single crystals, active on some boundary
    NeverActive = 5,        // zero response everywhere
};

struct FilterProbe {
    std::size_t filter = 0;
    FilterType type = FilterType::NeverActive;
    std::vector<double> sweep;     // post-relu response per swept Euler value
    std::vector<double> boundary;  // per bicrystal orientation (4 entries)
};

// Probe inputs are 8x8x4 so the first conv (8x8 stride 8) collapses each probe
// to one scalar per filter: single crystals sweep all Euler channels over
// [0,1] with gb = 0; bicrystals pair two orientations across a marked boundary
// in four directions.
std::vector<FilterProbe> probe_filters(const CedModel& model, std::size_t sweep_steps = 21);

// Returns a copy of the model with the given first-layer filters zeroed
// (weights and bias).
CedModel ablate_filters(const CedModel& model, const std::vector<std::size_t>& filters);

// Percent change in dataset MSE after zeroing one first-layer filter:
// 100 * (mse_ablated - mse_base) / mse_base.
double ablation_mse_change(const CedModel& model, const Tensor& x, const Tensor& y,
                           std::size_t filter);

}  // namespace granite
