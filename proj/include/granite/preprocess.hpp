#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "granite/manifest.hpp"
#include "granite/tensor.hpp"

namespace granite {

// Disjoint block means over the spatial axes: H x W x C -> H/f x W/f x C.
// Throws std::invalid_argument when H or W is not divisible by f.
Tensor downsample(const Tensor& t, std::size_t factor = 4);

// Per-channel (last axis) min-max scaling to [0,1] computed on this tensor
// alone, never across a dataset. Constant channels map to all zeros.
Tensor scale_unit(const Tensor& t);

// Model input: euler (H x W x 3) and gb (H x W x 1) stacked and scaled per
// channel, giving H x W x 4 in [0,1].
Tensor make_input(const Tensor& euler, const Tensor& gb);

// Model target: block-averaged von Mises field scaled to [0,1], H/4 x W/4 x 1.
Tensor make_target(const Tensor& vm);

class MissingSamples : public std::runtime_error {
public:
    MissingSamples(std::string what, std::vector<std::uint64_t> ids)
        : std::runtime_error(std::move(what)), ids_(std::move(ids)) {}
    const std::vector<std::uint64_t>& ids() const { return ids_; }

private:
    std::vector<std::uint64_t> ids_;
};

// Conventional per-sample artifact names used by assemble and the CLI.
std::string ms_filename(std::uint64_t id);
std::string vm_filename(std::uint64_t id);

// Reads ms_<id>.gtnb / vm_<id>.gtns pairs for every id in the manifest and
// writes one bundle per split (train.gtnb, val.gtnb, test.gtnb) with entries
//   x: N x H x W x 4, y: N x H/4 x W/4 x 1
// plus <split>_index.json listing the ids in tensor order (ascending).
// Missing inputs raise MissingSamples naming every absent id.
void assemble_dataset(const std::filesystem::path& ms_dir,
                      const std::filesystem::path& vm_dir,
                      const DatasetManifest& manifest,
                      const std::filesystem::path& out_dir);

// Loads one split bundle back as (x, y).
struct SplitData {
    Tensor x;
    Tensor y;
    std::vector<std::uint64_t> ids;
};
SplitData load_split(const std::filesystem::path& out_dir, const std::string& split);

}  // namespace granite
