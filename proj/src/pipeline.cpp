#include "granite/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <thread>

#include "granite/evalmetrics.hpp"
#include "granite/manifest.hpp"
#include "granite/preprocess.hpp"
#include "granite/rng.hpp"
#include "granite/tensor_io.hpp"

namespace granite {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// config

namespace {

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

json section(const json& j, const char* key) {
    return j.contains(key) ? j.at(key) : json::object();
}

}  // namespace

std::string config_to_json(const PipelineConfig& c) {
    json j;
    j["version"] = c.version;
    j["seed"] = c.seed;
    j["n_samples"] = c.n_samples;
    j["ratios"] = c.ratios;
    j["generator"] = {{"size", c.gen.size},
                      {"mu", c.gen.mu},
                      {"sigma", c.gen.sigma},
                      {"cutoff", c.gen.cutoff},
                      {"calibration_sweeps", c.gen.calibration_sweeps}};
    j["solver"] = {{"tol", c.solver_tol}, {"max_iter", c.solver_max_iter}, {"load", c.load}};
    j["train"] = {{"batch", c.train.batch},       {"epochs", c.train.epochs},
                  {"base_lr", c.train.base_lr},   {"max_lr", c.train.max_lr},
                  {"lr_cycle", c.train.lr_cycle}, {"patience", c.train.patience},
                  {"augment_roll", c.train.augment_roll}, {"width", c.width}};
    j["detect"] = {{"peaks", c.peaks},
                   {"thresholds", c.thresholds},
                   {"smooth_sigma", c.smooth_sigma}};
    j["eval"] = {{"bins", c.bins},
                 {"exclude_nsigma", c.exclude_nsigma},
                 {"sweep_steps", c.sweep_steps}};
    j["threads"] = c.threads;
    return j.dump(2) + "\n";
}

PipelineConfig config_from_json(const std::string& text) {
    json j = json::parse(text);
    PipelineConfig c;
    c.version = get_or(j, "version", 1);
    if (c.version != 1)
        throw std::invalid_argument("unsupported config version " + std::to_string(c.version));
    c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
    c.n_samples = get_or<std::size_t>(j, "n_samples", c.n_samples);
    c.ratios = get_or(j, "ratios", c.ratios);

    json g = section(j, "generator");
    c.gen.size = get_or<std::size_t>(g, "size", c.gen.size);
    c.gen.mu = get_or(g, "mu", c.gen.mu);
    c.gen.sigma = get_or(g, "sigma", c.gen.sigma);
    c.gen.cutoff = get_or(g, "cutoff", c.gen.cutoff);
    c.gen.calibration_sweeps = get_or(g, "calibration_sweeps", c.gen.calibration_sweeps);

    json s = section(j, "solver");
    c.solver_tol = get_or(s, "tol", c.solver_tol);
    c.solver_max_iter = get_or(s, "max_iter", c.solver_max_iter);
    c.load = get_or(s, "load", c.load);

    json t = section(j, "train");
    c.train.batch = get_or<std::size_t>(t, "batch", c.train.batch);
    c.train.epochs = get_or<std::size_t>(t, "epochs", c.train.epochs);
    c.train.base_lr = get_or(t, "base_lr", c.train.base_lr);
    c.train.max_lr = get_or(t, "max_lr", c.train.max_lr);
    c.train.lr_cycle = get_or<std::size_t>(t, "lr_cycle", c.train.lr_cycle);
    c.train.patience = get_or<std::size_t>(t, "patience", c.train.patience);
    c.train.augment_roll = get_or(t, "augment_roll", c.train.augment_roll);
    c.width = get_or<std::size_t>(t, "width", c.width);

    json d = section(j, "detect");
    c.peaks = get_or<std::size_t>(d, "peaks", c.peaks);
    c.thresholds = get_or(d, "thresholds", c.thresholds);
    c.smooth_sigma = get_or(d, "smooth_sigma", c.smooth_sigma);

    json e = section(j, "eval");
    c.bins = get_or<std::size_t>(e, "bins", c.bins);
    c.exclude_nsigma = get_or(e, "exclude_nsigma", c.exclude_nsigma);
    c.sweep_steps = get_or<std::size_t>(e, "sweep_steps", c.sweep_steps);

    c.threads = get_or(j, "threads", c.threads);
    return c;
}

void save_config(const fs::path& path, const PipelineConfig& cfg) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << config_to_json(cfg);
}

PipelineConfig load_config(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return config_from_json(text);
}

// ---------------------------------------------------------------------------
// artifact manifest

std::string file_hash_hex(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot hash missing file " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 16];
    while (in.read(buf, sizeof buf), in.gcount() > 0)
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<std::uint8_t>(buf[i]);
            h *= 0x100000001b3ull;
        }
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

void record_artifacts(const fs::path& run_dir, const std::vector<fs::path>& files) {
    const fs::path mpath = run_dir / "MANIFEST.json";
    json j = json::object();
    if (fs::exists(mpath)) {
        std::ifstream in(mpath, std::ios::binary);
        in >> j;
    }
    for (const auto& f : files)
        j[fs::relative(f, run_dir).generic_string()] = file_hash_hex(f);
    std::ofstream out(mpath, std::ios::binary);
    out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// stage bodies

namespace {

std::uint64_t sample_seed(std::uint64_t global, std::uint64_t id) {
    return derive_seed(global, "generate/" + std::to_string(id));
}

// files named <prefix>_<id>.gtns / .gtnb in a directory, ascending by id
std::vector<std::pair<std::uint64_t, fs::path>> list_samples(const fs::path& dir) {
    std::vector<std::pair<std::uint64_t, fs::path>> out;
    if (!fs::exists(dir)) return out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const auto ext = entry.path().extension();
        if (ext != ".gtns" && ext != ".gtnb") continue;
        const std::string stem = entry.path().stem().string();
        const auto pos = stem.rfind('_');
        if (pos == std::string::npos) continue;
        try {
            out.emplace_back(std::stoull(stem.substr(pos + 1)), entry.path());
        } catch (const std::exception&) {
            continue;  // not one of ours
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

Microstructure load_microstructure(const fs::path& path) {
    auto bundle = read_bundle(path);
    Microstructure ms;
    ms.euler = bundle_get(bundle, "euler");
    ms.gb = bundle_get(bundle, "gb");
    ms.labels = bundle_get(bundle, "labels");
    return ms;
}

TensorD widen(const Tensor& t) {
    TensorD out(t.dims());
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<double>(t[i]);
    return out;
}

// drop a trailing singleton channel so H x W x 1 fields work as 2D planes
TensorD as_plane(const TensorD& t) {
    if (t.rank() != 3 || t.dim(2) != 1) return t;
    TensorD out({t.dim(0), t.dim(1)});
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = t[i];
    return out;
}

std::vector<std::uint64_t> all_ids(const DatasetManifest& m) {
    std::vector<std::uint64_t> ids;
    ids.insert(ids.end(), m.train.begin(), m.train.end());
    ids.insert(ids.end(), m.val.begin(), m.val.end());
    ids.insert(ids.end(), m.test.begin(), m.test.end());
    std::sort(ids.begin(), ids.end());
    return ids;
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

const char* filter_type_name(FilterType t) {
    switch (t) {
        case FilterType::AlwaysActive: return "always_active";
        case FilterType::HighAngle: return "high_angle";
        case FilterType::LowAngle: return "low_angle";
        case FilterType::BoundarySelective: return "boundary_selective";
        case FilterType::NeverActive: return "never_active";
    }
    return "unknown";
}

std::string threshold_key(double t) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", t);
    return buf;
}

}  // namespace

std::vector<std::uint64_t> sample_ids_in(const fs::path& dir) {
    std::vector<std::uint64_t> ids;
    for (const auto& [id, path] : list_samples(dir)) ids.push_back(id);
    return ids;
}

void generate_samples(const fs::path& out_dir, const GeneratorConfig& gen, std::size_t n,
                      std::array<double, 3> ratios, std::uint64_t seed, int threads) {
    // fail before writing anything if the split is impossible
    DatasetManifest manifest = split_dataset(n, ratios, derive_seed(seed, "split"));
    for (std::uint64_t id = 0; id < n; ++id) manifest.files[id] = ms_filename(id);

    fs::create_directories(out_dir);
    std::vector<std::uint64_t> todo;
    for (std::uint64_t id = 0; id < n; ++id)
        if (!fs::exists(out_dir / ms_filename(id))) todo.push_back(id);

    auto make_one = [&](std::uint64_t id) {
        GeneratorConfig g = gen;
        g.seed = sample_seed(seed, id);
        Microstructure ms = generate(g);
        TensorBundle bundle = {{"euler", ms.euler}, {"gb", ms.gb}, {"labels", ms.labels}};
        write_bundle(out_dir / ms_filename(id), bundle);
    };

    const int nthreads = std::max(1, threads);
    if (nthreads <= 1 || todo.size() <= 1) {
        for (std::uint64_t id : todo) {
            try {
                make_one(id);
            } catch (const std::exception& e) {
                throw StageError("generate", "sample " + std::to_string(id) + ": " + e.what());
            }
        }
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(nthreads));
        for (int t = 0; t < nthreads; ++t)
            pool.emplace_back([&, t] {
                try {
                    for (std::size_t k = static_cast<std::size_t>(t); k < todo.size();
                         k += static_cast<std::size_t>(nthreads))
                        make_one(todo[k]);
                } catch (...) {
                    errors[static_cast<std::size_t>(t)] = std::current_exception();
                }
            });
        for (auto& th : pool) th.join();
        for (auto& err : errors)
            if (err) {
                try {
                    std::rethrow_exception(err);
                } catch (const std::exception& e) {
                    throw StageError("generate", e.what());
                }
            }
    }

    const fs::path mpath = out_dir / "manifest.json";
    if (!fs::exists(mpath)) save_manifest(mpath, manifest);
}

void solve_samples(const fs::path& ms_dir, const fs::path& out_dir,
                   const std::vector<std::uint64_t>& ids, double tol, int max_iter,
                   double load) {
    fs::create_directories(out_dir);
    std::ofstream log(out_dir / "log.jsonl", std::ios::binary | std::ios::app);
    const CubicConstants cubic;
    const MacroStrain E = MacroStrain::uniaxial_e33(load);
    for (std::uint64_t id : ids) {
        const fs::path out = out_dir / vm_filename(id);
        if (fs::exists(out)) continue;
        try {
            Microstructure ms = load_microstructure(ms_dir / ms_filename(id));
            StiffnessField stiff = build_stiffness(ms, cubic);
            SolveResult r = solve(stiff, E, {tol, max_iter});
            Tensor vm(r.vm.dims());
            for (std::size_t i = 0; i < vm.size(); ++i) vm[i] = static_cast<float>(r.vm[i]);
            write_tensor(out, vm);
            json line = {{"id", id}, {"iters", r.iterations}, {"residual", r.residual}};
            log << line.dump() << "\n" << std::flush;
            std::cout << "solve: id=" << id << " iters=" << r.iterations
                      << " residual=" << r.residual << std::endl;
        } catch (const std::exception& e) {
            throw StageError("solve", "sample " + std::to_string(id) + ": " + e.what());
        }
    }
}

void predict_samples(const fs::path& ckpt, const fs::path& data_dir, const std::string& split,
                     const fs::path& out_dir) {
    try {
        CedModel model = load_checkpoint(ckpt);
        SplitData data = load_split(data_dir, split);
        fs::create_directories(out_dir / "pred");
        fs::create_directories(out_dir / "truth");
        for (std::size_t i = 0; i < data.ids.size(); ++i) {
            const std::string suffix = std::to_string(data.ids[i]) + ".gtns";
            const fs::path ppath = out_dir / "pred" / ("pred_" + suffix);
            const fs::path tpath = out_dir / "truth" / ("truth_" + suffix);
            if (fs::exists(ppath) && fs::exists(tpath)) continue;
            Tensor yi = forward(model, detail::slice_sample(data.x, i));
            write_tensor(ppath, yi);
            write_tensor(tpath, detail::slice_sample(data.y, i));
        }
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError("predict", e.what());
    }
}

void detect_samples(const fs::path& fields_dir, const fs::path& out_jsonl, std::size_t k,
                    const std::vector<double>& thresholds, double sigma) {
    std::vector<ClusterRecord> records;
    for (const auto& [id, path] : list_samples(fields_dir)) {
        try {
            TensorD field = as_plane(read_tensor_any(path));
            TensorD smoothed = smooth(field, sigma);
            for (const Peak& peak : find_peaks(smoothed, k))
                for (double t : thresholds) {
                    Cluster c = extract_cluster(smoothed, peak, t);
                    c.ellipse = fit_ellipse(c.mask);
                    records.push_back(make_record(id, c));
                }
        } catch (const std::exception& e) {
            throw StageError("detect", "sample " + std::to_string(id) + ": " + e.what());
        }
    }
    if (out_jsonl.has_parent_path()) fs::create_directories(out_jsonl.parent_path());
    write_records(out_jsonl, records);
}

void evaluate_samples(const EvaluateInputs& in, const fs::path& out_dir, std::size_t bins,
                      double exclude_nsigma, std::size_t sweep_steps) {
    try {
        fs::create_directories(out_dir);
        auto preds = list_samples(in.pred_dir);
        if (preds.empty())
            throw std::runtime_error("no prediction fields in " + in.pred_dir.string());

        // per-sample field metrics
        std::vector<std::uint64_t> ids;
        std::vector<double> mse_px, mse_sum, cosines;
        std::size_t undefined = 0;
        {
            std::ofstream mout(out_dir / "metrics.jsonl", std::ios::binary);
            for (const auto& [id, ppath] : preds) {
                const fs::path tpath =
                    in.truth_dir / ("truth_" + std::to_string(id) + ".gtns");
                TensorD pred = read_tensor_any(ppath);
                TensorD truth = read_tensor_any(tpath);
                FieldMetrics fm = field_metrics(pred, truth);
                ids.push_back(id);
                mse_px.push_back(fm.mse_px);
                mse_sum.push_back(fm.mse_sum);
                if (fm.cosine.defined)
                    cosines.push_back(fm.cosine.value);
                else
                    ++undefined;
                json line = {{"id", id},
                             {"mse_sum", fm.mse_sum},
                             {"mse_px", fm.mse_px},
                             {"cosine", fm.cosine.value},
                             {"cosine_defined", fm.cosine.defined}};
                mout << line.dump() << "\n";
            }
        }

        // high-MSE exclusion ahead of cluster comparison
        const auto kept = exclude_high_mse(mse_px, exclude_nsigma);
        std::set<std::uint64_t> kept_ids;
        for (std::size_t k : kept) kept_ids.insert(ids[k]);
        std::vector<std::uint64_t> excluded;
        for (std::size_t i = 0; i < ids.size(); ++i)
            if (!kept_ids.count(ids[i])) excluded.push_back(ids[i]);

        json summary;
        summary["n"] = ids.size();
        summary["mse_px"] = {{"mean", mean_of(mse_px)}, {"std", stddev_of(mse_px)}};
        summary["mse_sum"] = {{"mean", mean_of(mse_sum)}, {"std", stddev_of(mse_sum)}};
        summary["cosine"] = {{"mean", mean_of(cosines)},
                             {"std", stddev_of(cosines)},
                             {"undefined", undefined}};
        summary["excluded_ids"] = excluded;

        // cluster-characteristic errors, rank to rank, per threshold
        if (!in.clusters_pred.empty() && fs::exists(in.clusters_pred) &&
            fs::exists(in.clusters_truth)) {
            auto keep_records = [&](std::vector<ClusterRecord> rs) {
                std::vector<ClusterRecord> out;
                for (auto& r : rs)
                    if (kept_ids.count(r.sample)) out.push_back(std::move(r));
                return out;
            };
            auto pred_rs = keep_records(read_records(in.clusters_pred));
            auto truth_rs = keep_records(read_records(in.clusters_truth));
            auto errs = cluster_errors(pred_rs, truth_rs);

            std::map<std::string, json> per_threshold;
            std::map<std::string, std::vector<double>> dist, da, dth, dar;
            std::map<std::string, std::size_t> skipped;
            for (const auto& e : errs) {
                const std::string key = threshold_key(e.threshold);
                if (e.skipped) {
                    ++skipped[key];
                    continue;
                }
                dist[key].push_back(e.peak_distance);
                da[key].push_back(e.delta_a);
                if (e.shape_ok) {
                    dth[key].push_back(e.delta_theta_deg);
                    dar[key].push_back(e.delta_ar);
                }
            }
            json clusters = json::object();
            std::set<std::string> keys;
            for (const auto& [k, v] : dist) keys.insert(k);
            for (const auto& [k, v] : skipped) keys.insert(k);
            for (const auto& key : keys) {
                clusters[key] = {{"pairs", dist[key].size()},
                                 {"skipped", skipped.count(key) ? skipped[key] : 0},
                                 {"mean_peak_distance", mean_of(dist[key])},
                                 {"mean_delta_a", mean_of(da[key])},
                                 {"shape_pairs", dth[key].size()},
                                 {"mean_delta_theta_deg", mean_of(dth[key])},
                                 {"mean_delta_ar", mean_of(dar[key])}};
            }
            summary["clusters"] = clusters;
        }

        // binned MSE against microstructure statistics
        if (!in.ms_dir.empty() && fs::exists(in.ms_dir)) {
            std::vector<double> diam, ar, phi, psi1, psi2;
            for (std::uint64_t id : ids) {
                Microstructure ms = load_microstructure(in.ms_dir / ms_filename(id));
                GrainStats st = grain_stats(ms);
                diam.push_back(st.mean_diameter);
                ar.push_back(st.mean_aspect_ratio);
                phi.push_back(st.mean_euler[0]);
                psi1.push_back(st.mean_euler[1]);
                psi2.push_back(st.mean_euler[2]);
            }
            std::ofstream cout_(out_dir / "curves.csv", std::ios::binary);
            cout_ << "curve,bin,lo,hi,stat_mean,mse_mean,count\n";
            auto emit = [&](const char* name, const std::vector<double>& stat) {
                BinnedCurve c = bin_mse_by_stat(stat, mse_px, bins);
                for (std::size_t b = 0; b < c.counts.size(); ++b) {
                    char row[256];
                    std::snprintf(row, sizeof row, "%s,%zu,%.17g,%.17g,%.17g,%.17g,%zu\n",
                                  name, b, c.edges[b], c.edges[b + 1], c.stat_mean[b],
                                  c.mse_mean[b], c.counts[b]);
                    cout_ << row;
                }
            };
            emit("grain_diameter", diam);
            emit("aspect_ratio", ar);
            emit("euler_phi", phi);
            emit("euler_psi1", psi1);
            emit("euler_psi2", psi2);
        }

        // first-layer filter analysis
        if (!in.ckpt.empty() && fs::exists(in.ckpt)) {
            CedModel model = load_checkpoint(in.ckpt);
            auto probes = probe_filters(model, sweep_steps);
            json jf;
            std::map<std::string, std::size_t> counts;
            for (const auto& p : probes) {
                counts[filter_type_name(p.type)]++;
                jf.push_back({{"filter", p.filter},
                              {"type", static_cast<int>(p.type)},
                              {"name", filter_type_name(p.type)},
                              {"sweep", p.sweep},
                              {"boundary", p.boundary}});
            }
            {
                std::ofstream fout(out_dir / "filter_types.json", std::ios::binary);
                json top = {{"counts", counts}, {"filters", jf}};
                fout << top.dump(2) << "\n";
            }
            summary["filter_type_counts"] = counts;

            if (!in.data_dir.empty() && fs::exists(in.data_dir / "test.gtnb")) {
                SplitData data = load_split(in.data_dir, "test");
                const double base = dataset_mse(model, data.x, data.y);
                const std::size_t nf = model.specs[0].out_ch;
                std::ofstream aout(out_dir / "ablation.csv", std::ios::binary);
                aout << "filter,type,pct_change\n";
                for (std::size_t f = 0; f < nf; ++f) {
                    CedModel ablated = ablate_filters(model, {f});
                    const double m = dataset_mse(ablated, data.x, data.y);
                    const double pct = base == 0.0 ? 0.0 : 100.0 * (m - base) / base;
                    char row[128];
                    std::snprintf(row, sizeof row, "%zu,%d,%.17g\n", f,
                                  static_cast<int>(probes[f].type), pct);
                    aout << row;
                }
            }
        }

        std::ofstream sout(out_dir / "summary.json", std::ios::binary);
        sout << summary.dump(2) << "\n";
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError("evaluate", e.what());
    }
}

// ---------------------------------------------------------------------------
// run-directory stages

namespace {

std::vector<fs::path> dir_files(const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

bool have_all_samples(const fs::path& dir, const std::string& prefix,
                      const std::vector<std::uint64_t>& ids) {
    for (std::uint64_t id : ids)
        if (!fs::exists(dir / (prefix + std::to_string(id) + ".gtns"))) return false;
    return true;
}

}  // namespace

void run_generate(const fs::path& run_dir, const PipelineConfig& cfg) {
    const fs::path out = run_dir / "ms";
    bool done = fs::exists(out / "manifest.json");
    for (std::uint64_t id = 0; done && id < cfg.n_samples; ++id)
        done = fs::exists(out / ms_filename(id));
    if (done) {
        std::cout << "generate: skipped (outputs present)" << std::endl;
        return;
    }
    generate_samples(out, cfg.gen, cfg.n_samples, cfg.ratios, cfg.seed, cfg.threads);
    record_artifacts(run_dir, dir_files(out));
    std::cout << "generate: wrote " << cfg.n_samples << " microstructures" << std::endl;
}

void run_solve(const fs::path& run_dir, const PipelineConfig& cfg) {
    const fs::path out = run_dir / "vm";
    DatasetManifest m = load_manifest(run_dir / "ms" / "manifest.json");
    const auto ids = all_ids(m);
    bool done = true;
    for (std::uint64_t id : ids)
        if (!fs::exists(out / vm_filename(id))) {
            done = false;
            break;
        }
    if (done) {
        std::cout << "solve: skipped (outputs present)" << std::endl;
        return;
    }
    solve_samples(run_dir / "ms", out, ids, cfg.solver_tol, cfg.solver_max_iter, cfg.load);
    record_artifacts(run_dir, dir_files(out));
    std::cout << "solve: wrote " << ids.size() << " stress fields" << std::endl;
}

void run_preprocess(const fs::path& run_dir, const PipelineConfig& cfg) {
    (void)cfg;
    const fs::path out = run_dir / "data";
    const char* names[] = {"train.gtnb", "val.gtnb", "test.gtnb"};
    bool done = true;
    for (const char* n : names) done = done && fs::exists(out / n);
    if (done) {
        std::cout << "preprocess: skipped (outputs present)" << std::endl;
        return;
    }
    try {
        DatasetManifest m = load_manifest(run_dir / "ms" / "manifest.json");
        assemble_dataset(run_dir / "ms", run_dir / "vm", m, out);
    } catch (const std::exception& e) {
        throw StageError("preprocess", e.what());
    }
    record_artifacts(run_dir, dir_files(out));
    std::cout << "preprocess: wrote split bundles" << std::endl;
}

void run_train(const fs::path& run_dir, const PipelineConfig& cfg) {
    const fs::path out = run_dir / "model";
    const fs::path ckpt = out / "ckpt.gtnb";
    if (fs::exists(ckpt) && fs::exists(out / "ckpt.gtnb.json")) {
        std::cout << "train: skipped (checkpoint present)" << std::endl;
        return;
    }
    try {
        fs::create_directories(out);
        SplitData tr = load_split(run_dir / "data", "train");
        SplitData va = load_split(run_dir / "data", "val");
        CedModel model = make_model<float>(ced_architecture(cfg.width), cfg.seed);
        TrainConfig tc = cfg.train;
        tc.seed = cfg.seed;
        tc.threads = cfg.threads;
        tc.verbose = true;
        TrainHistory hist = train(model, tr.x, tr.y, va.x, va.y, tc);
        save_checkpoint(ckpt, model, hist.best_epoch, hist.best_val);
        std::ofstream h(out / "history.csv", std::ios::binary);
        h << "epoch,lr,train_mse_px,val_mse_px\n";
        for (const auto& e : hist.epochs) {
            char row[160];
            std::snprintf(row, sizeof row, "%zu,%.17g,%.17g,%.17g\n", e.epoch, e.lr,
                          e.train_mse_px, e.val_mse_px);
            h << row;
        }
    } catch (const std::exception& e) {
        throw StageError("train", e.what());
    }
    record_artifacts(run_dir, dir_files(out));
    std::cout << "train: checkpoint written" << std::endl;
}

void run_predict(const fs::path& run_dir, const PipelineConfig& cfg) {
    (void)cfg;
    const fs::path out = run_dir / "fields";
    DatasetManifest m = load_manifest(run_dir / "ms" / "manifest.json");
    if (have_all_samples(out / "pred", "pred_", m.test) &&
        have_all_samples(out / "truth", "truth_", m.test)) {
        std::cout << "predict: skipped (outputs present)" << std::endl;
        return;
    }
    predict_samples(run_dir / "model" / "ckpt.gtnb", run_dir / "data", "test", out);
    record_artifacts(run_dir, dir_files(out));
    std::cout << "predict: wrote " << m.test.size() << " field pairs" << std::endl;
}

void run_detect(const fs::path& run_dir, const PipelineConfig& cfg) {
    const fs::path out = run_dir / "detect";
    const fs::path pred_jsonl = out / "clusters_pred.jsonl";
    const fs::path truth_jsonl = out / "clusters_truth.jsonl";
    if (fs::exists(pred_jsonl) && fs::exists(truth_jsonl)) {
        std::cout << "detect: skipped (outputs present)" << std::endl;
        return;
    }
    detect_samples(run_dir / "fields" / "pred", pred_jsonl, cfg.peaks, cfg.thresholds,
                   cfg.smooth_sigma);
    detect_samples(run_dir / "fields" / "truth", truth_jsonl, cfg.peaks, cfg.thresholds,
                   cfg.smooth_sigma);
    record_artifacts(run_dir, {pred_jsonl, truth_jsonl});
    std::cout << "detect: cluster reports written" << std::endl;
}

void run_evaluate(const fs::path& run_dir, const PipelineConfig& cfg) {
    const fs::path out = run_dir / "eval";
    if (fs::exists(out / "summary.json")) {
        std::cout << "evaluate: skipped (outputs present)" << std::endl;
        return;
    }
    EvaluateInputs in;
    in.pred_dir = run_dir / "fields" / "pred";
    in.truth_dir = run_dir / "fields" / "truth";
    in.clusters_pred = run_dir / "detect" / "clusters_pred.jsonl";
    in.clusters_truth = run_dir / "detect" / "clusters_truth.jsonl";
    in.ckpt = run_dir / "model" / "ckpt.gtnb";
    in.data_dir = run_dir / "data";
    in.ms_dir = run_dir / "ms";
    evaluate_samples(in, out, cfg.bins, cfg.exclude_nsigma, cfg.sweep_steps);
    record_artifacts(run_dir, dir_files(out));
    std::cout << "evaluate: reports written" << std::endl;
}

void run_all(const fs::path& run_dir, const PipelineConfig& cfg) {
    fs::create_directories(run_dir);
    const fs::path cpath = run_dir / "config.json";
    if (fs::exists(cpath)) {
        PipelineConfig stored = load_config(cpath);
        if (config_to_json(stored) != config_to_json(cfg))
            throw StageError("config",
                             "run directory was created with a different configuration");
    } else {
        save_config(cpath, cfg);
    }
    run_generate(run_dir, cfg);
    run_solve(run_dir, cfg);
    run_preprocess(run_dir, cfg);
    run_train(run_dir, cfg);
    run_predict(run_dir, cfg);
    run_detect(run_dir, cfg);
    run_evaluate(run_dir, cfg);
}

}  // namespace granite
