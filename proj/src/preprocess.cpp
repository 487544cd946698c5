#include "granite/preprocess.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "granite/tensor_io.hpp"

namespace granite {

Tensor downsample(const Tensor& t, std::size_t factor) {
    if (t.rank() != 3) throw std::invalid_argument("downsample: expected H x W x C");
    const std::size_t h = t.dim(0), w = t.dim(1), c = t.dim(2);
    if (factor == 0 || h % factor != 0 || w % factor != 0)
        throw std::invalid_argument("downsample: dims " + shape_string(t) +
                                    " not divisible by " + std::to_string(factor));
    Tensor out({h / factor, w / factor, c});
    const double inv = 1.0 / static_cast<double>(factor * factor);
    for (std::size_t i = 0; i < h / factor; ++i)
        for (std::size_t j = 0; j < w / factor; ++j)
            for (std::size_t ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (std::size_t a = 0; a < factor; ++a)
                    for (std::size_t b = 0; b < factor; ++b)
                        acc += t(i * factor + a, j * factor + b, ch);
                out(i, j, ch) = static_cast<float>(acc * inv);
            }
    return out;
}

Tensor scale_unit(const Tensor& t) {
    if (t.rank() != 3) throw std::invalid_argument("scale_unit: expected H x W x C");
    const std::size_t h = t.dim(0), w = t.dim(1), c = t.dim(2);
    Tensor out(t.dims());
    for (std::size_t ch = 0; ch < c; ++ch) {
        float lo = std::numeric_limits<float>::max();
        float hi = std::numeric_limits<float>::lowest();
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
                lo = std::min(lo, t(i, j, ch));
                hi = std::max(hi, t(i, j, ch));
            }
        const float span = hi - lo;
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j)
                out(i, j, ch) = span > 0.0f ? (t(i, j, ch) - lo) / span : 0.0f;
    }
    return out;
}

Tensor make_input(const Tensor& euler, const Tensor& gb) {
    if (euler.rank() != 3 || euler.dim(2) != 3)
        throw std::invalid_argument("make_input: euler must be H x W x 3");
    if (gb.rank() != 3 || gb.dim(2) != 1 || gb.dim(0) != euler.dim(0) ||
        gb.dim(1) != euler.dim(1))
        throw std::invalid_argument("make_input: gb must be H x W x 1 matching euler");
    const std::size_t h = euler.dim(0), w = euler.dim(1);
    Tensor stacked({h, w, 4});
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            for (std::size_t ch = 0; ch < 3; ++ch) stacked(i, j, ch) = euler(i, j, ch);
            stacked(i, j, 3) = gb(i, j, 0);
        }
    return scale_unit(stacked);
}

Tensor make_target(const Tensor& vm) { return scale_unit(downsample(vm, 4)); }

std::string ms_filename(std::uint64_t id) { return "ms_" + std::to_string(id) + ".gtnb"; }
std::string vm_filename(std::uint64_t id) { return "vm_" + std::to_string(id) + ".gtns"; }

namespace {

void assemble_split(const std::filesystem::path& ms_dir,
                    const std::filesystem::path& vm_dir,
                    std::vector<std::uint64_t> ids, const std::string& split,
                    const std::filesystem::path& out_dir) {
    std::sort(ids.begin(), ids.end());

    std::vector<std::uint64_t> missing;
    for (auto id : ids) {
        if (!std::filesystem::exists(ms_dir / ms_filename(id)) ||
            !std::filesystem::exists(vm_dir / vm_filename(id)))
            missing.push_back(id);
    }
    if (!missing.empty()) {
        std::ostringstream msg;
        msg << "assemble: " << split << " split missing " << missing.size() << " sample(s):";
        for (auto id : missing) msg << ' ' << id;
        throw MissingSamples(msg.str(), std::move(missing));
    }

    Tensor x, y;
    for (std::size_t k = 0; k < ids.size(); ++k) {
        auto bundle = read_bundle(ms_dir / ms_filename(ids[k]));
        Tensor xi = make_input(bundle_get(bundle, "euler"), bundle_get(bundle, "gb"));
        Tensor yi = make_target(read_tensor_f32(vm_dir / vm_filename(ids[k])));
        if (k == 0) {
            x = Tensor({ids.size(), xi.dim(0), xi.dim(1), xi.dim(2)});
            y = Tensor({ids.size(), yi.dim(0), yi.dim(1), yi.dim(2)});
        }
        std::copy(xi.data().begin(), xi.data().end(), x.data().begin() + k * xi.size());
        std::copy(yi.data().begin(), yi.data().end(), y.data().begin() + k * yi.size());
    }

    write_bundle(out_dir / (split + ".gtnb"), {{"x", x}, {"y", y}});

    nlohmann::json index = nlohmann::json::array();
    for (auto id : ids) index.push_back(id);
    std::ofstream out(out_dir / (split + "_index.json"));
    out << index.dump(2) << '\n';
}

}  // namespace

void assemble_dataset(const std::filesystem::path& ms_dir,
                      const std::filesystem::path& vm_dir,
                      const DatasetManifest& manifest,
                      const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    assemble_split(ms_dir, vm_dir, manifest.train, "train", out_dir);
    assemble_split(ms_dir, vm_dir, manifest.val, "val", out_dir);
    assemble_split(ms_dir, vm_dir, manifest.test, "test", out_dir);
}

SplitData load_split(const std::filesystem::path& out_dir, const std::string& split) {
    SplitData d;
    auto bundle = read_bundle(out_dir / (split + ".gtnb"));
    d.x = bundle_get(bundle, "x");
    d.y = bundle_get(bundle, "y");
    std::ifstream in(out_dir / (split + "_index.json"));
    if (!in) throw IoError(IoErrorKind::OpenFailed, "load_split: missing index for " + split);
    nlohmann::json index = nlohmann::json::parse(in);
    for (const auto& v : index) d.ids.push_back(v.get<std::uint64_t>());
    return d;
}

}  // namespace granite
