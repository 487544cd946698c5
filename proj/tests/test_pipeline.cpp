#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "granite/pipeline.hpp"
#include "granite/preprocess.hpp"
#include "granite/rng.hpp"
#include "granite/tensor_io.hpp"

using namespace granite;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

PipelineConfig tiny_config() {
    PipelineConfig cfg;
    cfg.seed = 99;
    cfg.n_samples = 12;
    cfg.train.epochs = 50;
    cfg.train.batch = 4;
    cfg.train.base_lr = 1e-4;
    cfg.train.max_lr = 1e-3;
    cfg.train.patience = 50;
    cfg.bins = 4;
    return cfg;
}

}  // namespace

TEST_CASE("pipeline config round-trips through json with defaults for gaps") {
    PipelineConfig cfg = tiny_config();
    cfg.thresholds = {0.6, 0.9};
    auto back = config_from_json(config_to_json(cfg));
    CHECK(config_to_json(back) == config_to_json(cfg));

    auto partial = config_from_json("{\"seed\": 7}");
    CHECK(partial.seed == 7);
    CHECK(partial.n_samples == 500);
    CHECK(partial.train.epochs == 4000);
    CHECK(partial.gen.mu == doctest::Approx(2.3));

    CHECK_THROWS_AS(config_from_json("{\"version\": 2}"), std::invalid_argument);
}

TEST_CASE("artifact hashing matches fnv1a64 and lands in the manifest") {
    auto dir = fresh_dir("granite_pipe_hash");
    {
        std::ofstream out(dir / "a.bin", std::ios::binary);
        out << "abc";
    }
    char expect[17];
    std::snprintf(expect, sizeof expect, "%016llx",
                  static_cast<unsigned long long>(fnv1a64("abc")));
    CHECK(file_hash_hex(dir / "a.bin") == expect);

    record_artifacts(dir, {dir / "a.bin"});
    auto manifest = slurp(dir / "MANIFEST.json");
    CHECK(manifest.find("a.bin") != std::string::npos);
    CHECK(manifest.find(expect) != std::string::npos);
}

TEST_CASE("sample id listing parses trailing integers in ascending order") {
    auto dir = fresh_dir("granite_pipe_ids");
    for (int id : {5, 1, 12}) {
        Tensor t({2, 2, 1});
        write_tensor(dir / ("vm_" + std::to_string(id) + ".gtns"), t);
    }
    std::ofstream(dir / "notes.txt") << "ignored";
    auto ids = sample_ids_in(dir);
    REQUIRE(ids.size() == 3);
    CHECK(ids[0] == 1);
    CHECK(ids[1] == 5);
    CHECK(ids[2] == 12);
}

TEST_CASE("tiny end-to-end run: artifacts, resume no-op, bitwise determinism") {
    PipelineConfig cfg = tiny_config();
    auto run1 = fresh_dir("granite_pipe_run1");
    auto run2 = fresh_dir("granite_pipe_run2");

    run_all(run1, cfg);

    // every stage left its outputs
    CHECK(fs::exists(run1 / "config.json"));
    CHECK(fs::exists(run1 / "MANIFEST.json"));
    for (std::uint64_t id = 0; id < cfg.n_samples; ++id) {
        CHECK(fs::exists(run1 / "ms" / ms_filename(id)));
        CHECK(fs::exists(run1 / "vm" / vm_filename(id)));
    }
    CHECK(fs::exists(run1 / "ms" / "manifest.json"));
    CHECK(fs::exists(run1 / "vm" / "log.jsonl"));
    for (const char* f : {"train.gtnb", "val.gtnb", "test.gtnb"})
        CHECK(fs::exists(run1 / "data" / f));
    CHECK(fs::exists(run1 / "model" / "ckpt.gtnb"));
    CHECK(fs::exists(run1 / "model" / "ckpt.gtnb.json"));
    CHECK(fs::exists(run1 / "model" / "history.csv"));
    CHECK(fs::exists(run1 / "detect" / "clusters_pred.jsonl"));
    CHECK(fs::exists(run1 / "detect" / "clusters_truth.jsonl"));
    for (const char* f : {"metrics.jsonl", "summary.json", "curves.csv", "ablation.csv",
                          "filter_types.json"})
        CHECK(fs::exists(run1 / "eval" / f));

    // rerun resumes: nothing recomputed, bytes untouched
    const std::string ckpt_before = slurp(run1 / "model" / "ckpt.gtnb");
    const std::string metrics_before = slurp(run1 / "eval" / "metrics.jsonl");
    run_all(run1, cfg);
    CHECK(slurp(run1 / "model" / "ckpt.gtnb") == ckpt_before);
    CHECK(slurp(run1 / "eval" / "metrics.jsonl") == metrics_before);

    // a different config must not silently reuse the directory
    PipelineConfig other = cfg;
    other.seed = 1234;
    CHECK_THROWS_AS(run_all(run1, other), StageError);

    // identical config + seed in a fresh directory: bitwise-equal metrics
    run_all(run2, cfg);
    CHECK(slurp(run2 / "eval" / "metrics.jsonl") == metrics_before);
    CHECK(slurp(run2 / "model" / "ckpt.gtnb") == ckpt_before);
    CHECK(slurp(run2 / "detect" / "clusters_pred.jsonl") ==
          slurp(run1 / "detect" / "clusters_pred.jsonl"));

    fs::remove_all(run2);
}

TEST_CASE("corrupted intermediate tensor halts the consuming stage") {
    PipelineConfig cfg = tiny_config();
    cfg.n_samples = 10;
    auto dir = fresh_dir("granite_pipe_corrupt");

    run_generate(dir, cfg);
    run_solve(dir, cfg);

    // truncate one stress field to half its size
    const fs::path victim = dir / "vm" / vm_filename(2);
    auto bytes = slurp(victim);
    {
        std::ofstream out(victim, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }

    try {
        run_preprocess(dir, cfg);
        FAIL("expected a StageError");
    } catch (const StageError& e) {
        CHECK(e.stage() == "preprocess");
        const std::string what = e.what();
        const bool mentions_truncation = what.find("short") != std::string::npos ||
                                         what.find("truncat") != std::string::npos;
        CHECK(mentions_truncation);
    }
    fs::remove_all(dir);
}
