#include "granite/manifest.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "granite/rng.hpp"

namespace granite {

DatasetManifest split_dataset(std::size_t n, std::array<double, 3> ratios,
                              std::uint64_t seed) {
    double sum = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("split ratios must sum to 1");
    if (n < 10) throw std::invalid_argument("need at least 10 samples to split");

    std::size_t n_val = static_cast<std::size_t>(std::floor(ratios[1] * static_cast<double>(n)));
    std::size_t n_test = static_cast<std::size_t>(std::floor(ratios[2] * static_cast<double>(n)));
    std::size_t n_train = n - n_val - n_test;
    if (n_train == 0 || n_val == 0 || n_test == 0)
        throw std::invalid_argument("degenerate split: every part must be non-empty");

    std::vector<std::uint64_t> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(derive_seed(seed, "split"));
    rng.shuffle(ids);

    DatasetManifest m;
    m.seed = seed;
    m.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    m.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                 ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    m.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
    return m;
}

std::string manifest_to_json(const DatasetManifest& m) {
    nlohmann::json j;
    j["seed"] = m.seed;
    j["splits"]["train"] = m.train;
    j["splits"]["val"] = m.val;
    j["splits"]["test"] = m.test;
    nlohmann::json files = nlohmann::json::object();
    for (const auto& [id, path] : m.files) files[std::to_string(id)] = path;
    j["files"] = files;
    return j.dump(2);
}

DatasetManifest manifest_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    DatasetManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.train = j.at("splits").at("train").get<std::vector<std::uint64_t>>();
    m.val = j.at("splits").at("val").get<std::vector<std::uint64_t>>();
    m.test = j.at("splits").at("test").get<std::vector<std::uint64_t>>();
    if (j.contains("files"))
        for (const auto& [key, value] : j.at("files").items())
            m.files[std::stoull(key)] = value.get<std::string>();
    return m;
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot create " + path.string());
    out << manifest_to_json(m) << "\n";
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return manifest_from_json(ss.str());
}

}  // namespace granite
