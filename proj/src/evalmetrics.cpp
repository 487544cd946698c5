#include "granite/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <tuple>

#include <json.hpp>

namespace granite {

namespace {

// rescale to [-1, 1]; returns false when the field is constant
bool rescale_signed(const TensorD& t, std::vector<double>& out) {
    double lo = std::numeric_limits<double>::max();
    double hi = std::numeric_limits<double>::lowest();
    for (double v : t.data()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (!(hi > lo)) return false;
    out.resize(t.size());
    const double inv = 2.0 / (hi - lo);
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = (t[i] - lo) * inv - 1.0;
    return true;
}

}  // namespace

CosineResult cosine_similarity(const TensorD& a, const TensorD& b) {
    if (a.dims() != b.dims())
        throw std::invalid_argument("cosine_similarity: shape mismatch " + shape_string(a) +
                                    " vs " + shape_string(b));
    std::vector<double> ra, rb;
    if (!rescale_signed(a, ra) || !rescale_signed(b, rb)) return {0.0, false};
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        dot += ra[i] * rb[i];
        na += ra[i] * ra[i];
        nb += rb[i] * rb[i];
    }
    if (na == 0.0 || nb == 0.0) return {0.0, false};
    return {dot / std::sqrt(na * nb), true};
}

FieldMetrics field_metrics(const TensorD& pred, const TensorD& truth) {
    if (pred.dims() != truth.dims())
        throw std::invalid_argument("field_metrics: shape mismatch");
    FieldMetrics m;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - truth[i];
        m.mse_sum += d * d;
    }
    m.mse_px = m.mse_sum / static_cast<double>(pred.size());
    m.cosine = cosine_similarity(pred, truth);
    return m;
}

// ---------------------------------------------------------------------------

std::vector<std::uint32_t> mask_to_rle(const PixelMask& mask) {
    std::vector<std::uint32_t> rle;
    std::uint32_t run = 0;
    std::uint8_t cur = 0;  // runs start with the off state
    for (std::size_t i = 0; i < mask.on.size(); ++i) {
        if (mask.on[i] == cur) {
            ++run;
        } else {
            rle.push_back(run);
            cur = mask.on[i];
            run = 1;
        }
    }
    rle.push_back(run);
    return rle;
}

PixelMask rle_to_mask(std::size_t h, std::size_t w, const std::vector<std::uint32_t>& rle) {
    PixelMask mask;
    mask.h = h;
    mask.w = w;
    mask.on.reserve(h * w);
    std::uint8_t cur = 0;
    for (auto run : rle) {
        mask.on.insert(mask.on.end(), run, cur);
        cur = cur ? 0 : 1;
    }
    if (mask.on.size() != h * w)
        throw std::invalid_argument("rle_to_mask: runs cover " + std::to_string(mask.on.size()) +
                                    " pixels, expected " + std::to_string(h * w));
    return mask;
}

namespace {

std::string status_name(EllipseStatus s) {
    switch (s) {
        case EllipseStatus::Ok: return "ok";
        case EllipseStatus::Isotropic: return "isotropic";
        case EllipseStatus::Underdetermined: return "underdetermined";
        case EllipseStatus::Degenerate: return "degenerate";
    }
    return "?";
}

constexpr double kRadToDeg = 180.0 / 3.14159265358979323846;

}  // namespace

ClusterRecord make_record(std::uint64_t sample, const Cluster& c) {
    ClusterRecord r;
    r.sample = sample;
    r.rank = c.peak.rank;
    r.threshold = c.threshold;
    r.peak_row = static_cast<double>(c.peak.row);
    r.peak_col = static_cast<double>(c.peak.col);
    r.peak_value = c.peak.value;
    r.area_fraction = c.area_fraction;
    r.theta_deg = c.ellipse.theta * kRadToDeg;
    r.ar = c.ellipse.ar;
    r.status = status_name(c.ellipse.status);
    r.h = c.mask.h;
    r.w = c.mask.w;
    r.rle = mask_to_rle(c.mask);
    return r;
}

std::string record_to_json(const ClusterRecord& r) {
    nlohmann::json j = {{"sample", r.sample},
                        {"rank", r.rank},
                        {"threshold", r.threshold},
                        {"peak", {r.peak_row, r.peak_col}},
                        {"value", r.peak_value},
                        {"area_fraction", r.area_fraction},
                        {"theta_deg", r.theta_deg},
                        {"ar", r.ar},
                        {"status", r.status},
                        {"h", r.h},
                        {"w", r.w},
                        {"rle", r.rle}};
    return j.dump();
}

ClusterRecord record_from_json(const std::string& line) {
    // degenerate fits carry NaN theta/ar, which json serializes as null
    auto num_or_nan = [](const nlohmann::json& v) {
        return v.is_number() ? v.get<double>() : std::numeric_limits<double>::quiet_NaN();
    };
    nlohmann::json j = nlohmann::json::parse(line);
    ClusterRecord r;
    r.sample = j.at("sample").get<std::uint64_t>();
    r.rank = j.at("rank").get<int>();
    r.threshold = j.at("threshold").get<double>();
    r.peak_row = j.at("peak")[0].get<double>();
    r.peak_col = j.at("peak")[1].get<double>();
    r.peak_value = j.at("value").get<double>();
    r.area_fraction = j.at("area_fraction").get<double>();
    r.theta_deg = num_or_nan(j.at("theta_deg"));
    r.ar = num_or_nan(j.at("ar"));
    r.status = j.at("status").get<std::string>();
    r.h = j.at("h").get<std::size_t>();
    r.w = j.at("w").get<std::size_t>();
    r.rle = j.at("rle").get<std::vector<std::uint32_t>>();
    return r;
}

void write_records(const std::filesystem::path& path, const std::vector<ClusterRecord>& rs) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_records: cannot open " + path.string());
    for (const auto& r : rs) out << record_to_json(r) << '\n';
}

std::vector<ClusterRecord> read_records(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_records: cannot open " + path.string());
    std::vector<ClusterRecord> rs;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) rs.push_back(record_from_json(line));
    return rs;
}

double fold_angle_deg(double a_deg, double b_deg) {
    double d = std::fmod(std::abs(a_deg - b_deg), 180.0);
    return d > 90.0 ? 180.0 - d : d;
}

std::vector<ClusterErrorRecord> cluster_errors(const std::vector<ClusterRecord>& pred,
                                               const std::vector<ClusterRecord>& truth) {
    using Key = std::tuple<std::uint64_t, int, long long>;
    auto key_of = [](const ClusterRecord& r) {
        return Key{r.sample, r.rank, std::llround(r.threshold * 1000.0)};
    };
    std::map<Key, const ClusterRecord*> by_key;
    for (const auto& r : pred) by_key[key_of(r)] = &r;

    auto usable = [](const std::string& s) { return s == "ok" || s == "isotropic"; };

    std::vector<ClusterErrorRecord> out;
    for (const auto& t : truth) {
        ClusterErrorRecord e;
        e.sample = t.sample;
        e.rank = t.rank;
        e.threshold = t.threshold;
        auto it = by_key.find(key_of(t));
        if (it == by_key.end()) {
            e.skipped = true;
            out.push_back(e);
            continue;
        }
        const ClusterRecord& p = *it->second;
        const double dr = p.peak_row - t.peak_row, dc = p.peak_col - t.peak_col;
        e.peak_distance = std::sqrt(dr * dr + dc * dc);
        e.delta_a = t.area_fraction > 0.0
                        ? std::abs(t.area_fraction - p.area_fraction) / t.area_fraction
                        : 0.0;
        if (usable(p.status) && usable(t.status) && std::isfinite(p.ar) &&
            std::isfinite(t.ar)) {
            e.shape_ok = true;
            e.delta_theta_raw_deg = std::abs(t.theta_deg - p.theta_deg);
            e.delta_theta_deg = fold_angle_deg(t.theta_deg, p.theta_deg);
            e.delta_ar = std::abs(t.ar - p.ar) / t.ar;
        }
        out.push_back(e);
    }
    return out;
}

// ---------------------------------------------------------------------------

BinnedCurve bin_mse_by_stat(const std::vector<double>& stats, const std::vector<double>& mses,
                            std::size_t bins) {
    if (stats.empty() || stats.size() != mses.size())
        throw std::invalid_argument("bin_mse_by_stat: need equal nonempty inputs");
    if (bins == 0) throw std::invalid_argument("bin_mse_by_stat: bins must be positive");
    const double lo = *std::min_element(stats.begin(), stats.end());
    const double hi = *std::max_element(stats.begin(), stats.end());
    BinnedCurve c;
    c.edges.resize(bins + 1);
    const double width = hi > lo ? (hi - lo) / static_cast<double>(bins) : 1.0;
    for (std::size_t i = 0; i <= bins; ++i) c.edges[i] = lo + width * static_cast<double>(i);
    c.stat_mean.assign(bins, 0.0);
    c.mse_mean.assign(bins, 0.0);
    c.counts.assign(bins, 0);
    for (std::size_t i = 0; i < stats.size(); ++i) {
        std::size_t b = hi > lo ? static_cast<std::size_t>((stats[i] - lo) / width) : 0;
        if (b >= bins) b = bins - 1;  // last bin is closed
        c.stat_mean[b] += stats[i];
        c.mse_mean[b] += mses[i];
        c.counts[b] += 1;
    }
    for (std::size_t b = 0; b < bins; ++b) {
        if (c.counts[b] == 0) continue;
        c.stat_mean[b] /= static_cast<double>(c.counts[b]);
        c.mse_mean[b] /= static_cast<double>(c.counts[b]);
    }
    return c;
}

std::vector<std::size_t> exclude_high_mse(const std::vector<double>& mses, double nsigma) {
    if (mses.empty()) return {};
    double mean = 0.0;
    for (double v : mses) mean += v;
    mean /= static_cast<double>(mses.size());
    double var = 0.0;
    for (double v : mses) var += (v - mean) * (v - mean);
    var /= static_cast<double>(mses.size());
    const double cut = mean + nsigma * std::sqrt(var);
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < mses.size(); ++i)
        if (mses[i] <= cut) keep.push_back(i);
    return keep;
}

// ---------------------------------------------------------------------------

namespace {

// post-relu response of every first-layer filter to one 8x8x4 probe
std::vector<double> first_layer_response(const CedModel& m, const Tensor& probe) {
    const auto& s = m.specs.at(0);
    auto out = conv_forward(probe, s, m.params[0].w, m.params[0].b);
    apply_activation(out, s.act);
    std::vector<double> r(s.out_ch);
    for (std::size_t k = 0; k < s.out_ch; ++k) r[k] = out(0, 0, k);
    return r;
}

Tensor single_crystal_probe(double v) {
    Tensor x({8, 8, 4});
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 8; ++j)
            for (std::size_t ch = 0; ch < 3; ++ch) x(i, j, ch) = static_cast<float>(v);
    return x;
}

// two orientations split across a boundary; dir 0 = vertical, 1 = horizontal,
// 2 = diagonal, 3 = anti-diagonal
Tensor bicrystal_probe(int dir) {
    Tensor x({8, 8, 4});
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 8; ++j) {
            bool first;
            bool edge;
            switch (dir) {
                case 0: first = j < 4; edge = j == 3 || j == 4; break;
                case 1: first = i < 4; edge = i == 3 || i == 4; break;
                case 2: first = i + j < 8; edge = i + j == 7 || i + j == 8; break;
                default: {
                    const long d = static_cast<long>(i) - static_cast<long>(j);
                    first = d < 0;
                    edge = d == 0 || d == -1;
                    break;
                }
            }
            const float ori = first ? 0.25f : 0.75f;
            for (std::size_t ch = 0; ch < 3; ++ch) x(i, j, ch) = ori;
            x(i, j, 3) = edge ? 1.0f : 0.0f;
        }
    return x;
}

}  // namespace

std::vector<FilterProbe> probe_filters(const CedModel& model, std::size_t sweep_steps) {
    if (model.specs.empty() || model.specs[0].kind != LayerKind::Conv ||
        model.specs[0].in_ch != 4)
        throw std::invalid_argument("probe_filters: first layer must be a conv over 4 channels");
    if (sweep_steps < 2) throw std::invalid_argument("probe_filters: need at least 2 steps");

    const std::size_t nf = model.specs[0].out_ch;
    std::vector<FilterProbe> probes(nf);
    for (std::size_t k = 0; k < nf; ++k) {
        probes[k].filter = k;
        probes[k].sweep.resize(sweep_steps);
        probes[k].boundary.resize(4);
    }
    for (std::size_t s = 0; s < sweep_steps; ++s) {
        const double v = static_cast<double>(s) / static_cast<double>(sweep_steps - 1);
        auto r = first_layer_response(model, single_crystal_probe(v));
        for (std::size_t k = 0; k < nf; ++k) probes[k].sweep[s] = r[k];
    }
    for (int dir = 0; dir < 4; ++dir) {
        auto r = first_layer_response(model, bicrystal_probe(dir));
        for (std::size_t k = 0; k < nf; ++k) probes[k].boundary[dir] = r[k];
    }

    for (auto& p : probes) {
        double all_max = 0.0, all_min = std::numeric_limits<double>::max();
        for (double v : p.sweep) {
            all_max = std::max(all_max, v);
            all_min = std::min(all_min, v);
        }
        for (double v : p.boundary) {
            all_max = std::max(all_max, v);
            all_min = std::min(all_min, v);
        }
        const bool crystal_silent =
            std::all_of(p.sweep.begin(), p.sweep.end(), [](double v) { return v == 0.0; });
        const bool boundary_active =
            std::any_of(p.boundary.begin(), p.boundary.end(), [](double v) { return v > 0.0; });
        if (all_max == 0.0) {
            p.type = FilterType::NeverActive;
        } else if (all_min > 0.0) {
            p.type = FilterType::AlwaysActive;
        } else if (crystal_silent && boundary_active) {
            p.type = FilterType::BoundarySelective;
        } else {
            // partially active along the sweep: compare the two halves
            const std::size_t half = p.sweep.size() / 2;
            double lo_mean = 0.0, hi_mean = 0.0;
            for (std::size_t i = 0; i < half; ++i) lo_mean += p.sweep[i];
            for (std::size_t i = half; i < p.sweep.size(); ++i) hi_mean += p.sweep[i];
            lo_mean /= static_cast<double>(half);
            hi_mean /= static_cast<double>(p.sweep.size() - half);
            p.type = hi_mean > lo_mean ? FilterType::HighAngle : FilterType::LowAngle;
        }
    }
    return probes;
}

CedModel ablate_filters(const CedModel& model, const std::vector<std::size_t>& filters) {
    CedModel out = model;
    const std::size_t nf = model.specs.at(0).out_ch;
    auto& w = out.params[0].w;
    for (std::size_t f : filters) {
        if (f >= nf)
            throw std::invalid_argument("ablate_filters: filter " + std::to_string(f) +
                                        " out of range (have " + std::to_string(nf) + ")");
        for (std::size_t a = 0; a < w.dim(0); ++a)
            for (std::size_t b = 0; b < w.dim(1); ++b)
                for (std::size_t c = 0; c < w.dim(2); ++c) w(a, b, c, f) = 0.0f;
        out.params[0].b[f] = 0.0f;
    }
    return out;
}

double ablation_mse_change(const CedModel& model, const Tensor& x, const Tensor& y,
                           std::size_t filter) {
    const double base = dataset_mse(model, x, y);
    const double ablated = dataset_mse(ablate_filters(model, {filter}), x, y);
    if (base == 0.0) return ablated == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return 100.0 * (ablated - base) / base;
}

}  // namespace granite
