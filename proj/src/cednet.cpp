#include "granite/cednet.hpp"

#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "granite/tensor_io.hpp"

namespace granite {

std::size_t conv_out_dim(std::size_t n_in, std::size_t kernel, std::size_t stride) {
    if (kernel == 0 || stride == 0 || kernel > n_in)
        throw std::invalid_argument("conv_out_dim: kernel " + std::to_string(kernel) +
                                    " stride " + std::to_string(stride) + " on input " +
                                    std::to_string(n_in));
    if ((n_in - kernel) % stride != 0)
        throw std::invalid_argument("conv_out_dim: (" + std::to_string(n_in) + " - " +
                                    std::to_string(kernel) + ") not divisible by stride " +
                                    std::to_string(stride));
    return (n_in - kernel) / stride + 1;
}

std::size_t tconv_out_dim(std::size_t n_in, std::size_t kernel, std::size_t stride) {
    if (n_in == 0 || kernel == 0 || stride == 0)
        throw std::invalid_argument("tconv_out_dim: degenerate layer");
    return (n_in - 1) * stride + kernel;
}

std::vector<LayerSpec> ced_architecture(std::size_t r) {
    if (r == 0) throw std::invalid_argument("ced_architecture: r must be positive");
    return {
        {LayerKind::Conv, 8, 8, 4, 64 * r, Activation::Relu},
        {LayerKind::MaxPool, 2, 2, 0, 0, Activation::None},
        {LayerKind::Conv, 3, 1, 64 * r, 16 * r, Activation::Relu},
        {LayerKind::MaxPool, 2, 1, 0, 0, Activation::None},
        {LayerKind::TConv, 2, 2, 16 * r, 64 * r, Activation::Relu},
        {LayerKind::TConv, 3, 1, 64 * r, 8 * r, Activation::Relu},
        {LayerKind::TConv, 10, 2, 8 * r, 1, Activation::Tanh},
    };
}

double cyclic_lr(std::size_t epoch, double base_lr, double max_lr, std::size_t cycle) {
    if (cycle == 0) return base_lr;
    const double pos = static_cast<double>(epoch % cycle) / static_cast<double>(cycle);
    const double tri = pos <= 0.5 ? 2.0 * pos : 2.0 * (1.0 - pos);
    return base_lr + (max_lr - base_lr) * tri;
}

namespace {

template <typename T>
void scale_gradients(GradientsT<T>& g, T factor) {
    for (auto& t : g.w)
        for (auto& v : t.data()) v *= factor;
    for (auto& b : g.b)
        for (auto& v : b) v *= factor;
}

template <typename T>
void fill_zero(GradientsT<T>& g) {
    for (auto& t : g.w) std::fill(t.data().begin(), t.data().end(), T(0));
    for (auto& b : g.b) std::fill(b.begin(), b.end(), T(0));
}

template <typename T>
void add_gradients(GradientsT<T>& dst, const GradientsT<T>& src) {
    for (std::size_t i = 0; i < dst.w.size(); ++i) {
        for (std::size_t j = 0; j < dst.w[i].size(); ++j) dst.w[i][j] += src.w[i][j];
        for (std::size_t j = 0; j < dst.b[i].size(); ++j) dst.b[i][j] += src.b[i][j];
    }
}

// Per-epoch augmentation shifts, indexed by position in the shuffled order;
// shifts are expressed in target pixels (empty when augmentation is off).
using RollShifts = std::vector<std::array<std::size_t, 2>>;

// Forward + backward for samples order[lo..hi), accumulating gradients of the
// per-sample-sum loss and returning the summed loss.
template <typename T>
double run_chunk(const CedModelT<T>& model, const TensorT<T>& xtr, const TensorT<T>& ytr,
                 const std::vector<std::size_t>& order, std::size_t lo, std::size_t hi,
                 GradientsT<T>& g, const RollShifts& shifts, std::size_t sy, std::size_t sx) {
    double loss_sum = 0.0;
    ForwardCacheT<T> cache;
    for (std::size_t s = lo; s < hi; ++s) {
        auto x = detail::slice_sample(xtr, order[s]);
        auto y = detail::slice_sample(ytr, order[s]);
        if (!shifts.empty()) {
            x = detail::roll_plane(x, shifts[s][0] * sy, shifts[s][1] * sx);
            y = detail::roll_plane(y, shifts[s][0], shifts[s][1]);
        }
        auto pred = forward(model, x, &cache);
        loss_sum += loss_mse(pred, y);
        TensorT<T> dout(pred.dims());
        for (std::size_t i = 0; i < pred.size(); ++i) dout[i] = T(2) * (pred[i] - y[i]);
        backward(model, cache, dout, g);
    }
    return loss_sum;
}

}  // namespace

template <typename T>
TrainHistory train(CedModelT<T>& model, const TensorT<T>& xtr, const TensorT<T>& ytr,
                   const TensorT<T>& xval, const TensorT<T>& yval, const TrainConfig& cfg) {
    if (xtr.rank() != 4 || xtr.dim(0) == 0 || xval.dim(0) == 0)
        throw std::invalid_argument("train: datasets must be nonempty N x H x W x C");
    if (cfg.batch == 0) throw std::invalid_argument("train: batch must be positive");
    if (!(0.0 < cfg.base_lr && cfg.base_lr <= cfg.max_lr))
        throw std::invalid_argument("train: need 0 < base_lr <= max_lr");

    const std::size_t ntr = xtr.dim(0);
    const std::size_t px = ytr.dim(1) * ytr.dim(2) * ytr.dim(3);
    std::size_t roll_sy = 1, roll_sx = 1;
    if (cfg.augment_roll) {
        if (ytr.dim(1) == 0 || ytr.dim(2) == 0 || xtr.dim(1) % ytr.dim(1) != 0 ||
            xtr.dim(2) % ytr.dim(2) != 0)
            throw std::invalid_argument(
                "train: augment_roll needs targets that are integer downscales of the input");
        roll_sy = xtr.dim(1) / ytr.dim(1);
        roll_sx = xtr.dim(2) / ytr.dim(2);
    }
    auto st = make_adam_state(model);
    Rng rng(derive_seed(cfg.seed, "train"));
    Rng aug_rng(derive_seed(cfg.seed, "augment"));
    std::vector<std::size_t> order(ntr);
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainHistory hist;
    double best_val = std::numeric_limits<double>::infinity();
    CedModelT<T> best = model;
    std::size_t best_epoch = 0, stale = 0;

    const int nthreads = std::max(1, cfg.threads);
    std::vector<GradientsT<T>> partial(static_cast<std::size_t>(nthreads));
    for (auto& p : partial) p = zero_gradients(model);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        RollShifts shifts;
        if (cfg.augment_roll) {
            shifts.resize(ntr);
            for (auto& s : shifts)
                s = {aug_rng.below(ytr.dim(1)), aug_rng.below(ytr.dim(2))};
        }
        const double lr = cyclic_lr(epoch, cfg.base_lr, cfg.max_lr, cfg.lr_cycle);
        double train_sum = 0.0;
        for (std::size_t start = 0; start < ntr; start += cfg.batch) {
            const std::size_t bsz = std::min(cfg.batch, ntr - start);
            const int used = static_cast<int>(
                std::min<std::size_t>(static_cast<std::size_t>(nthreads), bsz));
            double batch_loss = 0.0;
            if (used <= 1) {
                auto& g = partial[0];
                fill_zero(g);
                batch_loss = run_chunk(model, xtr, ytr, order, start, start + bsz, g, shifts,
                                       roll_sy, roll_sx);
            } else {
                std::vector<double> losses(static_cast<std::size_t>(used), 0.0);
                std::vector<std::thread> workers;
                for (int t = 0; t < used; ++t) {
                    const std::size_t lo = start + bsz * static_cast<std::size_t>(t) /
                                                       static_cast<std::size_t>(used);
                    const std::size_t hi = start + bsz * static_cast<std::size_t>(t + 1) /
                                                       static_cast<std::size_t>(used);
                    fill_zero(partial[static_cast<std::size_t>(t)]);
                    workers.emplace_back([&, t, lo, hi] {
                        losses[static_cast<std::size_t>(t)] =
                            run_chunk(model, xtr, ytr, order, lo, hi,
                                      partial[static_cast<std::size_t>(t)], shifts, roll_sy,
                                      roll_sx);
                    });
                }
                for (auto& w : workers) w.join();
                // fixed chunk order keeps the reduction deterministic
                for (int t = 1; t < used; ++t)
                    add_gradients(partial[0], partial[static_cast<std::size_t>(t)]);
                batch_loss = std::accumulate(losses.begin(), losses.end(), 0.0);
            }
            if (!std::isfinite(batch_loss)) {
                std::ostringstream msg;
                msg << "train: non-finite loss at epoch " << epoch << " batch "
                    << start / cfg.batch << " lr " << lr;
                throw std::runtime_error(msg.str());
            }
            scale_gradients(partial[0], T(1) / static_cast<T>(bsz));
            adam_step(st, model, partial[0], lr, cfg.adam);
            train_sum += batch_loss;
        }
        const double train_mse = train_sum / static_cast<double>(ntr);
        const double val_mse = dataset_mse(model, xval, yval);
        hist.epochs.push_back({epoch, lr, train_mse, val_mse,
                               train_mse / static_cast<double>(px),
                               val_mse / static_cast<double>(px)});
        if (cfg.verbose)
            std::fprintf(stderr, "epoch %zu lr %.6g train %.6g val %.6g\n", epoch, lr,
                         train_mse, val_mse);
        if (val_mse < best_val) {
            best_val = val_mse;
            best = model;
            best_epoch = epoch;
            stale = 0;
        } else if (++stale > cfg.patience) {
            break;
        }
    }
    model = best;
    hist.best_epoch = best_epoch;
    hist.best_val = best_val;
    return hist;
}

template TrainHistory train<float>(CedModelT<float>&, const TensorT<float>&,
                                   const TensorT<float>&, const TensorT<float>&,
                                   const TensorT<float>&, const TrainConfig&);
template TrainHistory train<double>(CedModelT<double>&, const TensorT<double>&,
                                    const TensorT<double>&, const TensorT<double>&,
                                    const TensorT<double>&, const TrainConfig&);

namespace {

std::string kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv: return "conv";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::TConv: return "tconv";
    }
    return "?";
}

std::string act_name(Activation a) {
    switch (a) {
        case Activation::None: return "none";
        case Activation::Relu: return "relu";
        case Activation::Tanh: return "tanh";
    }
    return "?";
}

LayerKind kind_of(const std::string& s) {
    if (s == "conv") return LayerKind::Conv;
    if (s == "maxpool") return LayerKind::MaxPool;
    if (s == "tconv") return LayerKind::TConv;
    throw std::invalid_argument("checkpoint: unknown layer kind " + s);
}

Activation act_of(const std::string& s) {
    if (s == "none") return Activation::None;
    if (s == "relu") return Activation::Relu;
    if (s == "tanh") return Activation::Tanh;
    throw std::invalid_argument("checkpoint: unknown activation " + s);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const CedModel& m, std::size_t epoch,
                     double val_mse) {
    TensorBundle bundle;
    for (std::size_t i = 0; i < m.specs.size(); ++i) {
        if (!m.specs[i].learnable()) continue;
        bundle.emplace_back("w" + std::to_string(i), m.params[i].w);
        Tensor bias({m.params[i].b.size()});
        std::copy(m.params[i].b.begin(), m.params[i].b.end(), bias.data().begin());
        bundle.emplace_back("b" + std::to_string(i), bias);
    }
    write_bundle(path, bundle);

    nlohmann::json arch = nlohmann::json::array();
    for (const auto& s : m.specs)
        arch.push_back({{"kind", kind_name(s.kind)},
                        {"kernel", s.kernel},
                        {"stride", s.stride},
                        {"in", s.in_ch},
                        {"out", s.out_ch},
                        {"act", act_name(s.act)}});
    nlohmann::json side = {{"architecture", arch},
                           {"epoch", epoch},
                           {"val_mse", val_mse},
                           {"seed", m.seed}};
    std::ofstream out(path.string() + ".json");
    out << side.dump(2) << '\n';
}

CedModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path.string() + ".json");
    if (!in) throw IoError(IoErrorKind::OpenFailed, "checkpoint sidecar missing: " +
                                                        path.string() + ".json");
    nlohmann::json side = nlohmann::json::parse(in);

    CedModel m;
    m.seed = side.at("seed").get<std::uint64_t>();
    for (const auto& l : side.at("architecture")) {
        LayerSpec s;
        s.kind = kind_of(l.at("kind").get<std::string>());
        s.kernel = l.at("kernel").get<std::size_t>();
        s.stride = l.at("stride").get<std::size_t>();
        s.in_ch = l.at("in").get<std::size_t>();
        s.out_ch = l.at("out").get<std::size_t>();
        s.act = act_of(l.at("act").get<std::string>());
        m.specs.push_back(s);
    }
    m.params.resize(m.specs.size());

    auto bundle = read_bundle(path);
    for (std::size_t i = 0; i < m.specs.size(); ++i) {
        if (!m.specs[i].learnable()) continue;
        m.params[i].w = bundle_get(bundle, "w" + std::to_string(i));
        const Tensor& bias = bundle_get(bundle, "b" + std::to_string(i));
        m.params[i].b.assign(bias.data().begin(), bias.data().end());
        if (m.params[i].b.size() != m.specs[i].out_ch)
            throw IoError(IoErrorKind::DimsMismatch,
                          "checkpoint: bias size mismatch at layer " + std::to_string(i));
    }
    return m;
}

}  // namespace granite
