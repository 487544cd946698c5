#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace granite {

struct DatasetManifest {
    std::uint64_t seed = 0;
    std::vector<std::uint64_t> train;
    std::vector<std::uint64_t> val;
    std::vector<std::uint64_t> test;
    std::map<std::uint64_t, std::string> files;

    std::size_t total() const { return train.size() + val.size() + test.size(); }
};

// Shuffles ids 0..n-1 and deals them out. Val/test counts are floored,
// the remainder goes to train, so ratios like (0.7, 0.1, 0.2) of 10000
// give exactly 7000/1000/2000.
DatasetManifest split_dataset(std::size_t n, std::array<double, 3> ratios,
                              std::uint64_t seed);

std::string manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const std::string& text);

void save_manifest(const std::filesystem::path& path, const DatasetManifest& m);
DatasetManifest load_manifest(const std::filesystem::path& path);

}  // namespace granite
