#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "granite/evalmetrics.hpp"
#include "granite/manifest.hpp"
#include "granite/pipeline.hpp"
#include "granite/preprocess.hpp"

using namespace granite;

int main(int argc, char** argv) {
    PipelineConfig base;
    if (const char* env = std::getenv("GRANITE_THREADS")) base.threads = std::atoi(env);
    // --config provides defaults; explicit flags override them below
    for (int i = 1; i + 1 < argc; ++i)
        if (std::string(argv[i]) == "--config") {
            try {
                base = load_config(argv[i + 1]);
            } catch (const std::exception& e) {
                std::cerr << "error: " << e.what() << "\n";
                return 1;
            }
        }

    CLI::App app{"granite: microstructure -> stress pipeline"};
    app.require_subcommand(1);
    std::string config_path;

    // generate
    auto* gen = app.add_subcommand("generate", "synthesize periodic polycrystals");
    std::size_t g_n = base.n_samples;
    GeneratorConfig g_cfg = base.gen;
    std::uint64_t g_seed = base.seed;
    std::string g_out = "ms";
    int g_threads = base.threads;
    gen->add_option("--config", config_path, "pipeline config json");
    gen->add_option("--n", g_n, "sample count");
    gen->add_option("--size", g_cfg.size, "grid edge in pixels");
    gen->add_option("--mu", g_cfg.mu, "lognormal diameter location");
    gen->add_option("--sigma", g_cfg.sigma, "lognormal diameter scale");
    gen->add_option("--cutoff", g_cfg.cutoff, "truncation in sigmas");
    gen->add_option("--seed", g_seed, "global seed");
    gen->add_option("--out", g_out, "output directory");
    gen->add_option("--threads", g_threads, "worker threads");

    // solve
    auto* sol = app.add_subcommand("solve", "FFT elasticity, per-sample von Mises field");
    std::string s_in = "ms", s_out = "vm";
    double s_tol = base.solver_tol, s_load = base.load;
    int s_maxit = base.solver_max_iter;
    sol->add_option("--config", config_path, "pipeline config json");
    sol->add_option("--in", s_in, "microstructure directory");
    sol->add_option("--out", s_out, "output directory");
    sol->add_option("--tol", s_tol, "equilibrium tolerance");
    sol->add_option("--max-iter", s_maxit, "iteration cap");
    sol->add_option("--load", s_load, "uniaxial E33 magnitude");

    // preprocess
    auto* pre = app.add_subcommand("preprocess", "assemble scaled split bundles");
    std::string p_ms = "ms", p_vm = "vm", p_manifest, p_out = "data";
    pre->add_option("--config", config_path, "pipeline config json");
    pre->add_option("--ms", p_ms, "microstructure directory");
    pre->add_option("--vm", p_vm, "stress field directory");
    pre->add_option("--manifest", p_manifest, "dataset manifest json");
    pre->add_option("--out", p_out, "output directory");

    // train
    auto* trn = app.add_subcommand("train", "fit the encoder-decoder");
    std::string t_data = "data", t_out = "ckpt.gtnb";
    TrainConfig t_cfg = base.train;
    std::uint64_t t_seed = base.seed;
    int t_threads = base.threads;
    trn->add_option("--config", config_path, "pipeline config json");
    trn->add_option("--data", t_data, "split bundle directory");
    trn->add_option("--out", t_out, "checkpoint path");
    trn->add_option("--epochs", t_cfg.epochs, "epoch cap");
    trn->add_option("--batch", t_cfg.batch, "mini-batch size");
    trn->add_option("--base-lr", t_cfg.base_lr, "cyclic lr floor");
    trn->add_option("--max-lr", t_cfg.max_lr, "cyclic lr peak");
    trn->add_option("--lr-cycle", t_cfg.lr_cycle, "epochs per lr cycle");
    trn->add_option("--patience", t_cfg.patience, "early-stop patience");
    trn->add_flag("--augment-roll", t_cfg.augment_roll, "periodic-shift augmentation");
    std::size_t t_width = base.width;
    trn->add_option("--width", t_width, "filter-count multiplier");
    trn->add_option("--seed", t_seed, "global seed");
    trn->add_option("--threads", t_threads, "gradient worker threads");

    // predict
    auto* prd = app.add_subcommand("predict", "write per-sample prediction fields");
    std::string pr_ckpt = "ckpt.gtnb", pr_in = "data", pr_split = "test", pr_out = "fields";
    prd->add_option("--config", config_path, "pipeline config json");
    prd->add_option("--ckpt", pr_ckpt, "checkpoint path");
    prd->add_option("--in", pr_in, "split bundle directory");
    prd->add_option("--split", pr_split, "split name");
    prd->add_option("--out", pr_out, "output directory (pred/ and truth/)");

    // detect
    auto* det = app.add_subcommand("detect", "peak-stress cluster reports");
    std::string d_in = "fields/pred", d_out = "clusters.jsonl";
    std::size_t d_k = base.peaks;
    std::vector<double> d_thresholds = base.thresholds;
    double d_sigma = base.smooth_sigma;
    det->add_option("--config", config_path, "pipeline config json");
    det->add_option("--in", d_in, "field directory");
    det->add_option("--k", d_k, "peaks per sample");
    det->add_option("--thresholds", d_thresholds, "relative thresholds")->delimiter(',');
    det->add_option("--sigma", d_sigma, "Gaussian smoothing sigma");
    det->add_option("--out", d_out, "output jsonl");

    // evaluate
    auto* evl = app.add_subcommand("evaluate", "field metrics, curves, filter analysis");
    EvaluateInputs e_in;
    e_in.pred_dir = "fields/pred";
    e_in.truth_dir = "fields/truth";
    std::vector<std::string> e_clusters;
    std::string e_ckpt, e_data, e_ms, e_out = "eval";
    std::size_t e_bins = base.bins, e_sweep = base.sweep_steps;
    double e_nsigma = base.exclude_nsigma;
    evl->add_option("--config", config_path, "pipeline config json");
    evl->add_option("--pred", e_in.pred_dir, "prediction field directory");
    evl->add_option("--truth", e_in.truth_dir, "truth field directory");
    evl->add_option("--clusters", e_clusters, "pred and truth cluster jsonl")->expected(2);
    evl->add_option("--ckpt", e_ckpt, "checkpoint (enables filter analysis)");
    evl->add_option("--data", e_data, "split bundles (enables ablation mse)");
    evl->add_option("--ms", e_ms, "microstructures (enables binned curves)");
    evl->add_option("--bins", e_bins, "curve bin count");
    evl->add_option("--nsigma", e_nsigma, "high-MSE exclusion threshold");
    evl->add_option("--sweep-steps", e_sweep, "filter probe sweep resolution");
    evl->add_option("--out", e_out, "output directory");

    // ablate
    auto* abl = app.add_subcommand("ablate", "first-layer filter ablation");
    std::string a_ckpt = "ckpt.gtnb", a_data = "data", a_out = "ablation.csv";
    long long a_filter = -1;
    abl->add_option("--config", config_path, "pipeline config json");
    abl->add_option("--ckpt", a_ckpt, "checkpoint path");
    abl->add_option("--data", a_data, "split bundle directory");
    abl->add_option("--filter", a_filter, "single filter index (prints percent change)");
    abl->add_option("--out", a_out, "output csv");

    // run-all
    auto* run = app.add_subcommand("run-all", "full pipeline into a run directory");
    std::string r_out = "run";
    std::uint64_t r_seed = base.seed;
    std::size_t r_n = base.n_samples;
    int r_threads = base.threads;
    run->add_option("--config", config_path, "pipeline config json");
    run->add_option("--out", r_out, "run directory");
    run->add_option("--seed", r_seed, "global seed");
    run->add_option("--n", r_n, "sample count");
    run->add_option("--threads", r_threads, "worker threads");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            generate_samples(g_out, g_cfg, g_n, base.ratios, g_seed, g_threads);
            std::cout << "generate: " << g_n << " samples in " << g_out << "\n";
        } else if (*sol) {
            auto ids = sample_ids_in(s_in);
            if (ids.empty()) throw std::runtime_error("no ms_<id>.gtnb files in " + s_in);
            solve_samples(s_in, s_out, ids, s_tol, s_maxit, s_load);
            std::cout << "solve: " << ids.size() << " fields in " << s_out << "\n";
        } else if (*pre) {
            if (p_manifest.empty()) p_manifest = p_ms + "/manifest.json";
            assemble_dataset(p_ms, p_vm, load_manifest(p_manifest), p_out);
            std::cout << "preprocess: bundles in " << p_out << "\n";
        } else if (*trn) {
            SplitData tr = load_split(t_data, "train");
            SplitData va = load_split(t_data, "val");
            CedModel model = make_model<float>(ced_architecture(t_width), t_seed);
            t_cfg.seed = t_seed;
            t_cfg.threads = t_threads;
            t_cfg.verbose = true;
            TrainHistory hist = train(model, tr.x, tr.y, va.x, va.y, t_cfg);
            save_checkpoint(t_out, model, hist.best_epoch, hist.best_val);
            std::cout << "train: best val " << hist.best_val << " at epoch "
                      << hist.best_epoch << ", checkpoint " << t_out << "\n";
        } else if (*prd) {
            predict_samples(pr_ckpt, pr_in, pr_split, pr_out);
            std::cout << "predict: fields in " << pr_out << "\n";
        } else if (*det) {
            detect_samples(d_in, d_out, d_k, d_thresholds, d_sigma);
            std::cout << "detect: records in " << d_out << "\n";
        } else if (*evl) {
            if (e_clusters.size() == 2) {
                e_in.clusters_pred = e_clusters[0];
                e_in.clusters_truth = e_clusters[1];
            }
            e_in.ckpt = e_ckpt;
            e_in.data_dir = e_data;
            e_in.ms_dir = e_ms;
            evaluate_samples(e_in, e_out, e_bins, e_nsigma, e_sweep);
            std::cout << "evaluate: reports in " << e_out << "\n";
        } else if (*abl) {
            CedModel model = load_checkpoint(a_ckpt);
            SplitData te = load_split(a_data, "test");
            if (a_filter >= 0) {
                std::cout << ablation_mse_change(model, te.x, te.y,
                                                 static_cast<std::size_t>(a_filter))
                          << "\n";
            } else {
                const double bmse = dataset_mse(model, te.x, te.y);
                std::ofstream out(a_out, std::ios::binary);
                out << "filter,pct_change\n";
                for (std::size_t f = 0; f < model.specs[0].out_ch; ++f) {
                    CedModel abm = ablate_filters(model, {f});
                    const double m = dataset_mse(abm, te.x, te.y);
                    out << f << "," << (bmse == 0.0 ? 0.0 : 100.0 * (m - bmse) / bmse)
                        << "\n";
                }
                std::cout << "ablate: table in " << a_out << "\n";
            }
        } else if (*run) {
            PipelineConfig cfg = base;
            cfg.seed = r_seed;
            cfg.n_samples = r_n;
            cfg.threads = r_threads;
            run_all(r_out, cfg);
            std::cout << "run-all: complete in " << r_out << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
