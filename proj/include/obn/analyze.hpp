#pragma once

#include <string>
#include <vector>

#include "obn/network.hpp"

namespace obn {

/// One gradient-flow sample: absolute-gradient statistics of a recursively
/// shared tensor, captured after the full backward pass and before weight
/// decay or the optimizer step.
struct GradFlowRecord {
    long iter = 0;
    int basis_id = 0;
    double max_abs_grad = 0;
    double mean_abs_grad = 0;
};

/// Square matrix of absolute cosine similarities with its axis index map.
/// Pairs with mismatched dimensions or a zero-norm vector are defined as 0
/// and flagged.
struct SimilarityMatrix {
    std::vector<std::string> index;
    std::vector<std::vector<double>> m;
    std::vector<std::pair<int, int>> flagged;

    double mean_off_diagonal() const;
};

/// Singular values of a reshaped basis plus norm-ratio trajectories of
/// random probes under repeated application (square bases only).
struct SpectralReport {
    std::vector<double> singular_values; // descending
    int steps = 0;
    std::vector<std::vector<double>> norm_ratios; // [probe][n-1] = ‖x_n‖/‖x_0‖
};

struct DeviationRecord {
    int epoch = 0;
    int basis_id = 0;
    double frob_dev = 0;
};

SimilarityMatrix cosine_similarity(
    const std::vector<std::pair<std::string, std::vector<double>>>& vectors);

/// Probe a reshaped basis matrix [k²S × R]. Singular values are always
/// computed; the N-fold product experiment x ← Wᵀx requires a square matrix
/// and throws ConfigError otherwise (when steps > 0).
SpectralReport spectral_probe(const TensorD& matrix, int steps, int trials, uint64_t seed);

void write_gradflow_csv(const std::string& path, const std::vector<GradFlowRecord>& recs);
void write_similarity_csv(const std::string& path, const SimilarityMatrix& sim);
void write_spectral_csv(const std::string& path, const SpectralReport& rep);
void write_deviation_csv(const std::string& path, const std::vector<DeviationRecord>& recs);

/// Gradient-flow recorder over a network's recursively shared tensors
/// (shared filter bases, or tied conv weights in naive-sharing mode).
/// Sampling period defaults to every 10 iterations.
template <typename T>
class GradFlowRecorder {
public:
    explicit GradFlowRecorder(Network<T>& net, int every_k = 10)
        : net_(&net), every_(every_k) {}

    void on_iteration(long iter) {
        if (every_ < 1 || iter % every_ != 0) return;
        for (size_t i = 0; i < net_->traced.size(); ++i) {
            const Tensor<T>& g = net_->traced[i].second->grad;
            double mx = 0, sum = 0;
            for (size_t j = 0; j < g.size(); ++j) {
                const double a = std::abs(static_cast<double>(g[j]));
                mx = std::max(mx, a);
                sum += a;
            }
            records_.push_back({iter, static_cast<int>(i), mx, sum / g.size()});
        }
    }

    const std::vector<GradFlowRecord>& records() const { return records_; }
    std::vector<std::string> basis_names() const {
        std::vector<std::string> out;
        for (const auto& t : net_->traced) out.push_back(t.first);
        return out;
    }

private:
    Network<T>* net_;
    int every_;
    std::vector<GradFlowRecord> records_;
};

/// Per-block coefficient vectors of a network (both conv positions
/// concatenated), restricted to the given groups (empty = all).
template <typename T>
std::vector<std::pair<std::string, std::vector<double>>> block_coeff_vectors(
    const Network<T>& net, const std::vector<int>& groups = {}) {
    std::vector<std::pair<std::string, std::vector<double>>> out;
    for (const auto& bc : net.block_coeffs) {
        if (!groups.empty() &&
            std::find(groups.begin(), groups.end(), bc.group) == groups.end())
            continue;
        std::vector<double> v;
        for (const auto& c : bc.coeffs)
            for (size_t i = 0; i < c->value.size(); ++i)
                v.push_back(static_cast<double>(c->value[i]));
        out.emplace_back(bc.block, std::move(v));
    }
    return out;
}

/// Frobenius deviations of every basis, as DeviationRecords for one epoch.
template <typename T>
std::vector<DeviationRecord> deviation_records(const Network<T>& net, int epoch) {
    std::vector<DeviationRecord> out;
    auto devs = net.ortho_deviations();
    for (size_t i = 0; i < devs.size(); ++i)
        out.push_back({epoch, static_cast<int>(i), devs[i].second});
    return out;
}

} // namespace obn
