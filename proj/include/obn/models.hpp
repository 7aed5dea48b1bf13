#pragma once

#include <string>
#include <vector>

#include "obn/block.hpp"

namespace obn {

/// Basis configuration of one stage. s = 0 and tied = false means plain
/// (baseline) blocks. s/u are this stage's element counts (already scaled
/// from the name's first-stage values). `dual` gives the group two shared
/// bases, one per conv position. `tied` aliases whole block parameters
/// across the stage's non-entry blocks (naive recursive sharing).
struct BasisConfig {
    int s = 0;
    int u = 0;
    bool dual = false;
    bool tied = false;
};

struct StageSpec {
    int blocks = 0;
    int channels = 0;
    int stride = 1;
    BasisConfig basis;
};

/// Declarative description of a network: everything needed to build it,
/// count it, or serialize its name.
struct NetworkSpec {
    std::string name; // canonical name when grammar-derived
    int in_channels = 3;
    int in_h = 32, in_w = 32;
    int stem_channels = 16;
    int classes = 10;
    int kernel = 3;
    bool projection_baseline = false; // 4-stage family projects in baseline shortcuts
    // 7x7/2 stem + 3x3/2 max pool, for counting ImageNet-geometry variants.
    // Such specs are countable but not buildable.
    bool imagenet_stem = false;
    std::vector<StageSpec> stages;
    BnOrder bn_order = BnOrder::post_act;

    int group_count() const {
        int g = 0;
        for (const auto& st : stages)
            if (st.basis.s > 0) ++g;
        return g;
    }
    void validate() const;
};

/// Parse "ResNet<L>[-S<s>U<u>][‡]" (ASCII alias for ‡: '#'). Throws
/// ConfigError with the offending position on malformed names.
NetworkSpec spec_from_name(const std::string& name);

/// Canonical name of a grammar-expressible spec.
std::string spec_to_name(const NetworkSpec& spec);

struct LayerCount {
    std::string name;
    long long params = 0;
    long long flops = 0; // multiply-accumulates, MAC = 1 FLOP
};

struct CountReport {
    long long params = 0;
    long long flops = 0;
    std::vector<LayerCount> layers;
};

/// Exact parameter and MAC counts from the spec alone (no network built).
/// FLOPs cover convolutions and the linear classifier at the given input.
CountReport count_network(const NetworkSpec& spec, int in_h, int in_w);
long long count_params(const NetworkSpec& spec);
long long count_flops(const NetworkSpec& spec, int in_h, int in_w);

/// Whether the two-stage factorized convolution needs fewer MACs than the
/// full convolution it replaces: R·(k²S + T) < T·k²·S.
inline bool factorized_cheaper(int in_channels, int out_channels, int kernel, int rank) {
    const long long k2s = static_cast<long long>(kernel) * kernel * in_channels;
    return static_cast<long long>(rank) * (k2s + out_channels) <
           static_cast<long long>(out_channels) * k2s;
}

} // namespace obn
