#pragma once

#include <functional>
#include <memory>
#include <unordered_set>

#include "obn/models.hpp"

namespace obn {

/// One shared filter basis of a block group, with the per-block coefficient
/// sets drawing on it. Analysis and the regularizer work through this view.
template <typename T>
struct BasisHandle {
    std::string id; // e.g. "s1.A"
    FilterBasis<T> fb;
    std::vector<ParamPtr<T>> coeffs; // per use site, same order as fb.unshared
};

/// Coefficients of one residual block (both conv positions), for the
/// cosine-similarity analysis.
template <typename T>
struct BlockCoeffs {
    std::string block;
    int group = 0;
    std::vector<ParamPtr<T>> coeffs;
};

/// A runnable network: stem, residual stages, classifier, loss head.
/// Tied stages hold the same block object several times in `seq`, so naive
/// recursion is literal repeated application. Exclusively owned during
/// forward/backward/step.
template <typename T>
class Network {
public:
    NetworkSpec spec;
    Conv2d<T> stem;
    BatchNorm2d<T> stem_bn;
    std::vector<std::vector<std::shared_ptr<ResidualBlock<T>>>> stages;
    GlobalAvgPool<T> pool;
    Linear<T> fc;
    SoftmaxXent<T> head;

    std::vector<ParamPtr<T>> params;          // unique, registration order
    std::vector<BasisHandle<T>> bases;        // per group, one or two entries
    std::vector<BlockCoeffs<T>> block_coeffs; // per factorized block
    std::vector<std::pair<std::string, ParamPtr<T>>> traced; // recursively shared tensors

    Tensor<T> forward(const Tensor<T>& x, bool training, ActivationTape<T>* tape,
                      const std::function<void(const std::string&, const Tensor<T>&)>& observe =
                          nullptr) {
        Tensor<T> h = stem.forward(x, tape);
        if (spec.bn_order == BnOrder::post_act)
            h = stem_bn.forward(stem_relu_.forward(h, tape), training, tape);
        else
            h = stem_relu_.forward(stem_bn.forward(h, training, tape), tape);
        if (observe) observe("stem", h);
        for (size_t g = 0; g < stages.size(); ++g)
            for (size_t b = 0; b < stages[g].size(); ++b) {
                h = stages[g][b]->forward(h, training, tape);
                if (observe) observe(stages[g][b]->name, h);
            }
        h = pool.forward(h, tape);
        h = fc.forward(h, tape);
        if (observe) observe("fc", h);
        return h;
    }

    /// Task loss (softmax cross-entropy mean) for a labelled batch.
    double loss(const Tensor<T>& x, const std::vector<int>& labels, bool training,
                ActivationTape<T>* tape) {
        return head.forward(forward(x, training, tape), labels);
    }

    /// Backward from the loss head through the stem. Gradients accumulate
    /// into Param::grad; returns grad wrt the input batch.
    Tensor<T> backward(ActivationTape<T>& tape) {
        Tensor<T> g = head.backward();
        g = fc.backward(g, tape);
        g = pool.backward(g);
        for (size_t gi = stages.size(); gi-- > 0;)
            for (size_t b = stages[gi].size(); b-- > 0;) g = stages[gi][b]->backward(g, tape);
        if (spec.bn_order == BnOrder::post_act)
            g = stem_relu_.backward(stem_bn.backward(g, tape), tape);
        else
            g = stem_bn.backward(stem_relu_.backward(g, tape), tape);
        g = stem.backward(g, tape);
        if (!tape.empty()) throw InternalError("network backward: tape not empty");
        return g;
    }

    void zero_grad() {
        for (auto& p : params) p->zero_grad();
    }

    /// Σ over groups/bases of the per-site mean ‖MᵀM − I‖²_F, each site's M
    /// being its effective basis matrix [shared | unshared_site].
    double ortho_penalty_value() const {
        double total = 0;
        for (const auto& h : bases) {
            const int n = h.fb.sites();
            double acc = 0;
            for (int s = 0; s < n; ++s) acc += ortho_penalty_one(h.fb.matrix(s));
            total += acc / n;
        }
        return total;
    }

    /// Accumulate λ·∂penalty/∂basis into shared/unshared gradients.
    void accumulate_ortho_grads(double lambda) {
        if (lambda == 0.0) return;
        for (auto& h : bases) {
            const int n = h.fb.sites();
            const T scale = static_cast<T>(lambda / n);
            const int rows = h.fb.kernel * h.fb.kernel * h.fb.in_channels;
            const int s = h.fb.s();
            for (int site = 0; site < n; ++site) {
                Tensor<T> g = ortho_penalty_grad(h.fb.matrix(site)); // [k²S, R]
                Tensor<T> gel = transposed(g);                       // [R, k²S]
                T* shared_grad = h.fb.shared->grad.data();
                for (int r = 0; r < s; ++r)
                    for (int i = 0; i < rows; ++i)
                        shared_grad[static_cast<size_t>(r) * rows + i] +=
                            scale * gel[static_cast<size_t>(r) * rows + i];
                const ParamPtr<T>& un = h.fb.unshared[static_cast<size_t>(site)];
                if (un) {
                    T* ug = un->grad.data();
                    const int u = h.fb.u();
                    for (int r = 0; r < u; ++r)
                        for (int i = 0; i < rows; ++i)
                            ug[static_cast<size_t>(r) * rows + i] +=
                                scale * gel[static_cast<size_t>(s + r) * rows + i];
                }
            }
        }
    }

    /// Frobenius deviation ‖MᵀM − I‖_F per basis (mean over use sites).
    std::vector<std::pair<std::string, double>> ortho_deviations() const {
        std::vector<std::pair<std::string, double>> out;
        for (const auto& h : bases) {
            double acc = 0;
            for (int s = 0; s < h.fb.sites(); ++s) acc += ortho_deviation_one(h.fb.matrix(s));
            out.emplace_back(h.id, acc / h.fb.sites());
        }
        return out;
    }

    /// Walk distinct blocks (tied repeats visited once).
    void for_each_block(const std::function<void(ResidualBlock<T>&)>& fn) {
        std::unordered_set<ResidualBlock<T>*> seen;
        for (auto& st : stages)
            for (auto& b : st)
                if (seen.insert(b.get()).second) fn(*b);
    }

    /// Named tensors making up the full model state: every unique parameter
    /// plus batch-norm running statistics, in stable registration order.
    std::vector<std::pair<std::string, Tensor<T>*>> named_state() {
        std::vector<std::pair<std::string, Tensor<T>*>> out;
        for (auto& p : params) out.emplace_back(p->name, &p->value);
        auto add_bn = [&](BatchNorm2d<T>& bn) {
            if (bn.channels() == 0) return;
            out.emplace_back(bn.stat_name() + ".rmean", &bn.running_mean());
            out.emplace_back(bn.stat_name() + ".rvar", &bn.running_var());
        };
        add_bn(stem_bn);
        for_each_block([&](ResidualBlock<T>& blk) {
            add_bn(blk.bn1);
            add_bn(blk.bn2);
            if (blk.shortcut.kind == ShortcutKind::projection) add_bn(blk.shortcut.proj_bn);
        });
        return out;
    }

    /// First unit producing a non-finite activation (or the loss), else "".
    std::string diagnose_nonfinite(const Tensor<T>& x, const std::vector<int>& labels) {
        std::string hit;
        Tensor<T> logits = forward(x, true, nullptr, [&](const std::string& n, const Tensor<T>& t) {
            if (hit.empty() && !all_finite(t)) hit = n;
        });
        if (hit.empty() && !std::isfinite(head.forward(logits, labels))) hit = "loss";
        return hit;
    }

private:
    ReLU<T> stem_relu_;
};

} // namespace obn

#include "obn/network_detail.hpp" // NetworkBuilder + build_network
