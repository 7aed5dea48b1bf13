#pragma once

#include <unordered_set>

#include "obn/checkpoint.hpp"
#include "obn/data.hpp"
#include "obn/network.hpp"

namespace obn {

struct TrainConfig {
    int epochs = 10;
    int batch = 128;
    double lr = 0.1;
    std::vector<double> milestones = {0.5, 0.75}; // epoch fractions, sorted, in (0,1)
    double lr_decay = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double lambda = 1e-3; // orthogonality strength
    uint64_t seed = 1;
    bool augment = true;

    void validate() const {
        if (epochs < 1 || batch < 1) throw ConfigError("train: epochs/batch must be >= 1");
        if (lr <= 0 || lr_decay <= 0) throw ConfigError("train: rates must be positive");
        if (momentum < 0 || weight_decay < 0 || lambda < 0)
            throw ConfigError("train: negative hyperparameter");
        double prev = 0;
        for (double m : milestones) {
            if (m <= prev || m >= 1) throw ConfigError("train: milestones must be sorted in (0,1)");
            prev = m;
        }
    }
};

/// Piecewise-constant step schedule: the base rate is multiplied by the
/// decay factor at each milestone epoch floor(fraction · epochs).
inline double lr_at(const TrainConfig& cfg, int epoch) {
    if (epoch < 0 || epoch >= cfg.epochs) throw ConfigError("lr_at: epoch out of range");
    double rate = cfg.lr;
    for (double m : cfg.milestones)
        if (epoch >= static_cast<int>(m * cfg.epochs)) rate *= cfg.lr_decay;
    return rate;
}

/// SGD with momentum and weight decay. Parameters are deduplicated by
/// identity at construction: a recursively shared tensor gets one momentum
/// buffer and one update per step no matter how many layers alias it.
template <typename T>
class SGD {
public:
    SGD() = default;
    explicit SGD(const std::vector<ParamPtr<T>>& params) {
        std::unordered_set<Param<T>*> seen;
        for (const auto& p : params)
            if (p && seen.insert(p.get()).second) {
                params_.push_back(p);
                momentum_.emplace_back(p->value.shape());
            }
    }

    /// grad += wd·w (decay'd params only), v = mu·v + grad, w -= lr·v.
    void step(double lr, double momentum, double weight_decay) {
        for (size_t i = 0; i < params_.size(); ++i) {
            Param<T>& p = *params_[i];
            Tensor<T>& v = momentum_[i];
            const T wd = static_cast<T>(p.decay ? weight_decay : 0.0);
            const T mu = static_cast<T>(momentum);
            const T rate = static_cast<T>(lr);
            for (size_t j = 0; j < p.value.size(); ++j) {
                const T g = p.grad[j] + wd * p.value[j];
                v[j] = mu * v[j] + g;
                p.value[j] -= rate * v[j];
            }
        }
    }

    std::vector<std::pair<std::string, Tensor<T>*>> momentum_state() {
        std::vector<std::pair<std::string, Tensor<T>*>> out;
        for (size_t i = 0; i < params_.size(); ++i)
            out.emplace_back(params_[i]->name + ".mom", &momentum_[i]);
        return out;
    }

private:
    std::vector<ParamPtr<T>> params_;
    std::vector<Tensor<T>> momentum_;
};

struct EpochMetrics {
    double train_loss = 0; // task loss, batch-size weighted mean
    double train_err = 0;  // top-1 error % on training batches (pre-update)
    double ortho_penalty = 0; // value at epoch end
    double lr = 0;
};

struct EvalResult {
    double error = 0; // top-1 error %
    double loss = 0;
};

/// Per-batch instrumentation hook: called after the full backward pass
/// (task + regularizer gradients accumulated), before weight decay and the
/// optimizer step.
using BatchHook = std::function<void(long iter)>;

template <typename T>
EvalResult evaluate(Network<T>& net, const Dataset& data, int batch = 256) {
    EvalResult res;
    long wrong = 0;
    double loss_sum = 0;
    const int n = data.size();
    const size_t stride = data.images.size() / static_cast<size_t>(n);
    for (int start = 0; start < n; start += batch) {
        const int b = std::min(batch, n - start);
        Tensor<T> x({b, data.channels(), data.height(), data.width()});
        std::vector<int> y(static_cast<size_t>(b));
        for (int i = 0; i < b; ++i) {
            const float* src = data.images.data() + static_cast<size_t>(start + i) * stride;
            for (size_t j = 0; j < stride; ++j)
                x[static_cast<size_t>(i) * stride + j] = static_cast<T>(src[j]);
            y[static_cast<size_t>(i)] = data.labels[static_cast<size_t>(start + i)];
        }
        Tensor<T> logits = net.forward(x, false, nullptr);
        loss_sum += net.head.forward(logits, y) * b;
        for (int i = 0; i < b; ++i) {
            int arg = 0;
            for (int c = 1; c < logits.dim(1); ++c)
                if (logits.at(i, c) > logits.at(i, arg)) arg = c;
            if (arg != y[static_cast<size_t>(i)]) ++wrong;
        }
    }
    res.error = 100.0 * wrong / n;
    res.loss = loss_sum / n;
    return res;
}

/// One owner per network: runs epochs, folds λ·ortho_penalty into the loss,
/// steps SGD, and drives instrumentation hooks. Batch order and
/// augmentation are fixed by the seed.
template <typename T>
class Trainer {
public:
    Trainer(Network<T>& net, TrainConfig cfg)
        : net_(&net), cfg_(cfg), opt_(net.params), rng_(Rng(cfg.seed).fork("data")),
          aug_rng_(Rng(cfg.seed).fork("augment")) {
        cfg_.validate();
    }

    Network<T>& network() { return *net_; }
    SGD<T>& optimizer() { return opt_; }
    int epoch() const { return epoch_; }
    long iteration() const { return iter_; }

    EpochMetrics run_epoch(const Dataset& data, const BatchHook& after_backward = nullptr) {
        if (data.size() == 0) throw DataError("train: empty dataset");
        const double rate = lr_at(cfg_, epoch_);
        const int n = data.size();
        const size_t stride = data.images.size() / static_cast<size_t>(n);
        std::vector<int> order(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
        // Fisher-Yates from the trainer's rng stream
        for (int i = n - 1; i > 0; --i) {
            const int j = static_cast<int>(rng_.uniform_int(static_cast<uint64_t>(i + 1)));
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
        }
        double loss_sum = 0;
        long wrong = 0;
        for (int start = 0; start < n; start += cfg_.batch) {
            const int b = std::min(cfg_.batch, n - start);
            Tensor<T> x({b, data.channels(), data.height(), data.width()});
            std::vector<int> y(static_cast<size_t>(b));
            for (int i = 0; i < b; ++i) {
                const int idx = order[static_cast<size_t>(start + i)];
                const float* src = data.images.data() + static_cast<size_t>(idx) * stride;
                for (size_t j = 0; j < stride; ++j)
                    x[static_cast<size_t>(i) * stride + j] = static_cast<T>(src[j]);
                y[static_cast<size_t>(i)] = data.labels[static_cast<size_t>(idx)];
            }
            if (cfg_.augment) {
                if constexpr (std::is_same_v<T, float>) {
                    augment(x, aug_rng_);
                } else {
                    TensorF xf = x.template cast<float>();
                    augment(xf, aug_rng_);
                    x = xf.template cast<T>();
                }
            }
            ActivationTape<T> tape;
            net_->zero_grad();
            const double task_loss = net_->loss(x, y, true, &tape);
            if (!std::isfinite(task_loss)) {
                const std::string unit = net_->diagnose_nonfinite(x, y);
                throw NumericError("train: non-finite loss at iteration " +
                                   std::to_string(iter_) + " (first non-finite unit: " +
                                   (unit.empty() ? "loss" : unit) + ")");
            }
            const Tensor<T>& probs = net_->head.probs();
            for (int i = 0; i < b; ++i) {
                int arg = 0;
                for (int c = 1; c < probs.dim(1); ++c)
                    if (probs.at(i, c) > probs.at(i, arg)) arg = c;
                if (arg != y[static_cast<size_t>(i)]) ++wrong;
            }
            net_->backward(tape);
            if (cfg_.lambda != 0.0) net_->accumulate_ortho_grads(cfg_.lambda);
            if (after_backward) after_backward(iter_);
            opt_.step(rate, cfg_.momentum, cfg_.weight_decay);
            loss_sum += task_loss * b;
            ++iter_;
        }
        ++epoch_;
        EpochMetrics m;
        m.train_loss = loss_sum / n;
        m.train_err = 100.0 * wrong / n;
        m.lr = rate;
        m.ortho_penalty = net_->ortho_penalty_value();
        return m;
    }

    // -- checkpointing -------------------------------------------------------

    void save(const std::string& path) {
        std::vector<CkptEntry> entries;
        auto add_tensor = [&](const std::string& name, const Tensor<T>& t) {
            CkptEntry e;
            e.name = name;
            for (int d : t.shape()) e.extents.push_back(static_cast<uint32_t>(d));
            if constexpr (std::is_same_v<T, float>) {
                e.dtype = CkptDtype::f32;
                encode_f32(e.raw, t.data(), t.size());
            } else {
                e.dtype = CkptDtype::f64;
                encode_f64(e.raw, t.data(), t.size());
            }
            entries.push_back(std::move(e));
        };
        for (auto& [name, tensor] : net_->named_state()) add_tensor(name, *tensor);
        for (auto& [name, tensor] : opt_.momentum_state()) add_tensor(name, *tensor);
        CkptEntry ep;
        ep.name = "__epoch";
        ep.dtype = CkptDtype::u64;
        ep.extents = {2};
        const uint64_t meta[2] = {static_cast<uint64_t>(epoch_), static_cast<uint64_t>(iter_)};
        encode_u64(ep.raw, meta, 2);
        entries.push_back(std::move(ep));
        auto add_rng = [&](const char* name, const Rng& rng) {
            CkptEntry rs;
            rs.name = name;
            rs.dtype = CkptDtype::u64;
            rs.extents = {6};
            uint64_t state[6];
            rng.save_state(state);
            encode_u64(rs.raw, state, 6);
            entries.push_back(std::move(rs));
        };
        add_rng("__rng", rng_);
        add_rng("__rng_aug", aug_rng_);
        save_checkpoint(path, entries);
    }

    void load(const std::string& path) {
        const std::vector<CkptEntry> entries = load_checkpoint(path);
        auto find = [&](const std::string& name) -> const CkptEntry& {
            for (const auto& e : entries)
                if (e.name == name) return e;
            throw FormatError("checkpoint: missing entry '" + name + "'");
        };
        auto read_tensor = [&](const std::string& name, Tensor<T>& t) {
            const CkptEntry& e = find(name);
            std::vector<int> shape;
            for (uint32_t x : e.extents) shape.push_back(static_cast<int>(x));
            if (shape != t.shape()) {
                std::string got = "[";
                for (size_t i = 0; i < shape.size(); ++i)
                    got += (i ? "x" : "") + std::to_string(shape[i]);
                throw DimensionError("checkpoint: shape mismatch for '" + name + "': file has " +
                                     got + "], network expects " + t.shape_string());
            }
            constexpr CkptDtype want = std::is_same_v<T, float> ? CkptDtype::f32 : CkptDtype::f64;
            if (e.dtype != want)
                throw FormatError("checkpoint: dtype mismatch for '" + name + "'");
            if constexpr (std::is_same_v<T, float>)
                decode_f32(e.raw, t.data(), t.size());
            else
                decode_f64(e.raw, t.data(), t.size());
        };
        for (auto& [name, tensor] : net_->named_state()) read_tensor(name, *tensor);
        for (auto& [name, tensor] : opt_.momentum_state()) read_tensor(name, *tensor);
        const CkptEntry& ep = find("__epoch");
        if (ep.element_count() != 2 || ep.dtype != CkptDtype::u64)
            throw FormatError("checkpoint: malformed '__epoch'");
        uint64_t meta[2];
        decode_u64(ep.raw, meta, 2);
        epoch_ = static_cast<int>(meta[0]);
        iter_ = static_cast<long>(meta[1]);
        auto read_rng = [&](const char* name, Rng& rng) {
            const CkptEntry& rs = find(name);
            if (rs.element_count() != 6 || rs.dtype != CkptDtype::u64)
                throw FormatError(std::string("checkpoint: malformed '") + name + "'");
            uint64_t state[6];
            decode_u64(rs.raw, state, 6);
            rng.load_state(state);
        };
        read_rng("__rng", rng_);
        read_rng("__rng_aug", aug_rng_);
    }

private:
    Network<T>* net_;
    TrainConfig cfg_;
    SGD<T> opt_;
    Rng rng_;
    Rng aug_rng_{0};
    int epoch_ = 0;
    long iter_ = 0;
};

} // namespace obn
