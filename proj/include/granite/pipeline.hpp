#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "granite/cednet.hpp"
#include "granite/elastsolve.hpp"
#include "granite/microgen.hpp"

namespace granite {

// Everything a full run needs, serializable so the run directory can carry
// the exact configuration that produced it.
struct PipelineConfig {
    int version = 1;
    std::uint64_t seed = 0;
    std::size_t n_samples = 500;
    std::array<double, 3> ratios = {0.7, 0.1, 0.2};

    GeneratorConfig gen;  // gen.seed is ignored; per-sample seeds derive from `seed`

    double solver_tol = 1e-6;
    int solver_max_iter = 5000;
    double load = 1e-4;  // uniaxial E33 magnitude

    TrainConfig train;       // train.seed / train.threads are overwritten from the globals
    std::size_t width = 1;   // filter-count multiplier of the encoder-decoder

    std::size_t peaks = 3;
    std::vector<double> thresholds = {0.5, 0.7, 0.8, 0.9};
    double smooth_sigma = 1.0;

    std::size_t bins = 10;
    double exclude_nsigma = 2.0;
    std::size_t sweep_steps = 21;

    int threads = 1;
};

std::string config_to_json(const PipelineConfig& cfg);
PipelineConfig config_from_json(const std::string& text);
void save_config(const std::filesystem::path& path, const PipelineConfig& cfg);
PipelineConfig load_config(const std::filesystem::path& path);

// Any stage failure carries the stage name (and sample id where known) in
// front of the underlying cause.
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& what)
        : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

// FNV-1a over the file bytes, hex-encoded; MANIFEST.json maps every artifact
// (path relative to the run dir) to its hash.
std::string file_hash_hex(const std::filesystem::path& path);
void record_artifacts(const std::filesystem::path& run_dir,
                      const std::vector<std::filesystem::path>& files);

// Ids of the `<prefix>_<id>.gtns|.gtnb` sample files in a directory, ascending.
std::vector<std::uint64_t> sample_ids_in(const std::filesystem::path& dir);

// Reusable stage bodies behind the subcommands. All are deterministic given
// their inputs; sample-level randomness derives from `seed` and the sample id.
void generate_samples(const std::filesystem::path& out_dir, const GeneratorConfig& gen,
                      std::size_t n, std::array<double, 3> ratios, std::uint64_t seed,
                      int threads);
void solve_samples(const std::filesystem::path& ms_dir, const std::filesystem::path& out_dir,
                   const std::vector<std::uint64_t>& ids, double tol, int max_iter,
                   double load);
void predict_samples(const std::filesystem::path& ckpt, const std::filesystem::path& data_dir,
                     const std::string& split, const std::filesystem::path& out_dir);
void detect_samples(const std::filesystem::path& fields_dir, const std::filesystem::path& out_jsonl,
                    std::size_t k, const std::vector<double>& thresholds, double sigma);

struct EvaluateInputs {
    std::filesystem::path pred_dir;            // pred_<id>.gtns
    std::filesystem::path truth_dir;           // truth_<id>.gtns
    std::filesystem::path clusters_pred;       // jsonl
    std::filesystem::path clusters_truth;      // jsonl
    std::filesystem::path ckpt;                // optional: enables ablation + filter probes
    std::filesystem::path data_dir;            // optional: test bundle for ablation MSE
    std::filesystem::path ms_dir;              // optional: enables binned curves
};
void evaluate_samples(const EvaluateInputs& in, const std::filesystem::path& out_dir,
                      std::size_t bins, double exclude_nsigma, std::size_t sweep_steps);

// Run-directory stages: fixed layout under run_dir, skipped when their
// outputs already exist, artifact hashes appended to MANIFEST.json.
//   ms/      ms_<id>.gtnb + manifest.json
//   vm/      vm_<id>.gtns + log.jsonl
//   data/    train/val/test.gtnb + *_index.json
//   model/   ckpt.gtnb + ckpt.gtnb.json + history.csv
//   fields/  pred/pred_<id>.gtns, truth/truth_<id>.gtns
//   detect/  clusters_pred.jsonl, clusters_truth.jsonl
//   eval/    metrics.jsonl, summary.json, curves.csv, ablation.csv, filter_types.json
void run_generate(const std::filesystem::path& run_dir, const PipelineConfig& cfg);
void run_solve(const std::filesystem::path& run_dir, const PipelineConfig& cfg);
void run_preprocess(const std::filesystem::path& run_dir, const PipelineConfig& cfg);
void run_train(const std::filesystem::path& run_dir, const PipelineConfig& cfg);
void run_predict(const std::filesystem::path& run_dir, const PipelineConfig& cfg);
void run_detect(const std::filesystem::path& run_dir, const PipelineConfig& cfg);
void run_evaluate(const std::filesystem::path& run_dir, const PipelineConfig& cfg);

// All of the above in order. Writes config.json on first use and refuses to
// continue a run directory whose stored config differs.
void run_all(const std::filesystem::path& run_dir, const PipelineConfig& cfg);

}  // namespace granite
