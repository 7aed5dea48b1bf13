#pragma once

// Included from network.hpp after Network's definition.

#include "obn/block.hpp"
#include "obn/models.hpp"

namespace obn {

namespace detail {

/// u orthonormal columns orthogonal to the (orthonormal) columns of q,
/// via modified Gram-Schmidt with one re-orthogonalization pass.
inline TensorD orthonormal_complement(const TensorD& q, int u, Rng& rng) {
    const int rows = q.dim(0), m = q.dim(1);
    if (m + u > rows)
        throw ConfigError("orthonormal_complement: rank " + std::to_string(m + u) +
                          " exceeds dimension " + std::to_string(rows));
    TensorD out({rows, u});
    for (int j = 0; j < u; ++j) {
        std::vector<double> v(static_cast<size_t>(rows));
        for (auto& x : v) x = rng.gaussian();
        for (int pass = 0; pass < 2; ++pass) {
            for (int c = 0; c < m; ++c) {
                double d = 0;
                for (int i = 0; i < rows; ++i) d += q.at(i, c) * v[static_cast<size_t>(i)];
                for (int i = 0; i < rows; ++i) v[static_cast<size_t>(i)] -= d * q.at(i, c);
            }
            for (int c = 0; c < j; ++c) {
                double d = 0;
                for (int i = 0; i < rows; ++i) d += out.at(i, c) * v[static_cast<size_t>(i)];
                for (int i = 0; i < rows; ++i) v[static_cast<size_t>(i)] -= d * out.at(i, c);
            }
        }
        double n = 0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        if (n < 1e-12) throw InternalError("orthonormal_complement: degenerate draw");
        for (int i = 0; i < rows; ++i) out.at(i, j) = v[static_cast<size_t>(i)] / n;
    }
    return out;
}

template <typename T>
struct NetworkBuilder {
    Network<T>& net;
    Rng& init_rng;
    const NetworkSpec& spec;

    ParamPtr<T> reg(ParamPtr<T> p) {
        net.params.push_back(p);
        return p;
    }

    ParamPtr<T> kaiming(const std::string& name, std::vector<int> shape, int fan_in) {
        Rng r = init_rng.fork(name);
        const double std = std::sqrt(2.0 / fan_in);
        return reg(std::make_shared<Param<T>>(name, Tensor<T>::randn(std::move(shape), r, std)));
    }

    BatchNorm2d<T> make_bn(const std::string& name, int channels) {
        auto g = reg(std::make_shared<Param<T>>(name + ".g", Tensor<T>::full({channels}, T(1)),
                                                /*decay=*/false));
        auto b = reg(std::make_shared<Param<T>>(name + ".b", Tensor<T>({channels}),
                                                /*decay=*/false));
        return BatchNorm2d<T>(g, b, name);
    }

    Shortcut<T> make_shortcut(const std::string& name, int s_in, int t, int stride,
                              bool project) {
        Shortcut<T> sc;
        sc.in_channels = s_in;
        sc.out_channels = t;
        sc.stride = stride;
        if (stride == 1 && s_in == t) {
            sc.kind = ShortcutKind::identity;
        } else if (project) {
            sc.kind = ShortcutKind::projection;
            sc.proj = Conv2d<T>(kaiming(name + ".proj.w", {t, s_in, 1, 1}, s_in), stride, 0);
            sc.proj_bn = make_bn(name + ".proj_bn", t);
        } else {
            sc.kind = ShortcutKind::pad_subsample;
        }
        return sc;
    }

    std::shared_ptr<ResidualBlock<T>> plain_block(const std::string& name, int s_in, int t,
                                                  int stride, bool project) {
        auto blk = std::make_shared<ResidualBlock<T>>();
        blk->name = name;
        blk->order = spec.bn_order;
        const int k = spec.kernel, pad = k / 2;
        blk->conv1 = ConvUnit<T>::full(kaiming(name + ".conv1.w", {t, s_in, k, k}, s_in * k * k),
                                       stride, pad);
        blk->conv2 =
            ConvUnit<T>::full(kaiming(name + ".conv2.w", {t, t, k, k}, t * k * k), 1, pad);
        blk->bn1 = make_bn(name + ".bn1", t);
        blk->bn2 = make_bn(name + ".bn2", t);
        blk->shortcut = make_shortcut(name, s_in, t, stride, project);
        return blk;
    }

    void run() {
        if (spec.imagenet_stem)
            throw ConfigError("build: ImageNet-geometry specs are countable but not buildable");
        const int k = spec.kernel, pad = k / 2;
        net.stem = Conv2d<T>(kaiming("stem.conv.w", {spec.stem_channels, spec.in_channels, k, k},
                                     spec.in_channels * k * k),
                             1, pad);
        net.stem_bn = make_bn("stem.bn", spec.stem_channels);

        int prev = spec.stem_channels;
        for (size_t g = 0; g < spec.stages.size(); ++g) {
            const StageSpec& st = spec.stages[g];
            const std::string sg = "s" + std::to_string(g);
            const int t = st.channels;
            std::vector<std::shared_ptr<ResidualBlock<T>>> seq;
            const bool entry_projects =
                st.basis.s > 0 || st.basis.tied || spec.projection_baseline;
            seq.push_back(plain_block(sg + ".b0", prev, t, st.stride, entry_projects));

            const int nb = st.blocks - 1;
            if (nb > 0 && st.basis.s > 0) {
                build_basis_blocks(seq, static_cast<int>(g), st, t, nb);
            } else if (nb > 0 && st.basis.tied) {
                auto tied = plain_block(sg + ".tied", t, t, 1, false);
                net.traced.emplace_back(sg + ".tied.conv1.w",
                                        tied->conv1.conv().weight());
                net.traced.emplace_back(sg + ".tied.conv2.w",
                                        tied->conv2.conv().weight());
                for (int i = 0; i < nb; ++i) seq.push_back(tied); // same object: naive recursion
            } else {
                for (int i = 1; i <= nb; ++i)
                    seq.push_back(plain_block(sg + ".b" + std::to_string(i), t, t, 1, false));
            }
            net.stages.push_back(std::move(seq));
            prev = t;
        }
        net.pool = GlobalAvgPool<T>();
        auto fw = kaiming("fc.w", {spec.classes, prev}, prev);
        auto fb = reg(std::make_shared<Param<T>>("fc.b", Tensor<T>({spec.classes})));
        net.fc = Linear<T>(fw, fb);
    }

    void build_basis_blocks(std::vector<std::shared_ptr<ResidualBlock<T>>>& seq, int g,
                            const StageSpec& st, int t, int nb) {
        const int k = spec.kernel, pad = k / 2;
        const int s_g = st.basis.s, u_g = st.basis.u, r = s_g + u_g;
        const std::string sg = "s" + std::to_string(g);
        const int nbases = st.basis.dual ? 2 : 1;

        std::vector<BasisHandle<T>> handles(static_cast<size_t>(nbases));
        std::vector<TensorD> shared_q(static_cast<size_t>(nbases)); // reshaped, for complements
        for (int a = 0; a < nbases; ++a) {
            const std::string id = sg + (nbases == 2 ? (a == 0 ? ".A" : ".B") : ".basis");
            Rng r0 = init_rng.fork(id);
            Tensor<T> w = orthogonal_init<T>(k, t, s_g, r0);
            auto p = reg(std::make_shared<Param<T>>(id, std::move(w)));
            net.traced.emplace_back(id, p);
            handles[static_cast<size_t>(a)].id = id;
            handles[static_cast<size_t>(a)].fb =
                FilterBasis<T>{k, t, p, {}};
            shared_q[static_cast<size_t>(a)] =
                transposed(p->value.template cast<double>().reshaped({s_g, k * k * t}));
        }

        for (int i = 1; i <= nb; ++i) {
            const std::string bn = sg + ".b" + std::to_string(i);
            auto blk = std::make_shared<ResidualBlock<T>>();
            blk->name = bn;
            blk->order = spec.bn_order;
            BlockCoeffs<T> bc;
            bc.block = bn;
            bc.group = g;
            for (int pos = 0; pos < 2; ++pos) {
                const int a = st.basis.dual ? pos : 0;
                BasisHandle<T>& h = handles[static_cast<size_t>(a)];
                const std::string cn = bn + (pos == 0 ? ".conv1" : ".conv2");
                ParamPtr<T> unshared;
                if (u_g > 0) {
                    Rng ru = init_rng.fork(cn + ".unshared");
                    TensorD comp = orthonormal_complement(shared_q[static_cast<size_t>(a)], u_g, ru);
                    Tensor<T> w({u_g, t, k, k});
                    const int rows = k * k * t;
                    for (int c = 0; c < u_g; ++c)
                        for (int row = 0; row < rows; ++row)
                            w[static_cast<size_t>(c) * rows + row] = static_cast<T>(comp.at(row, c));
                    unshared = reg(std::make_shared<Param<T>>(cn + ".unshared", std::move(w)));
                }
                auto coeff = kaiming(cn + ".coeff", {t, r, 1, 1}, r);
                h.fb.unshared.push_back(unshared);
                h.coeffs.push_back(coeff);
                bc.coeffs.push_back(coeff);
                FactorizedConv<T> fc(h.fb.shared, unshared, coeff, 1, pad);
                if (pos == 0)
                    blk->conv1 = ConvUnit<T>::factorized(std::move(fc));
                else
                    blk->conv2 = ConvUnit<T>::factorized(std::move(fc));
            }
            blk->bn1 = make_bn(bn + ".bn1", t);
            blk->bn2 = make_bn(bn + ".bn2", t);
            blk->shortcut = make_shortcut(bn, t, t, 1, false);
            net.block_coeffs.push_back(std::move(bc));
            seq.push_back(std::move(blk));
        }
        for (auto& h : handles) net.bases.push_back(std::move(h));
    }
};

} // namespace detail

/// Deterministic construction from a spec: same seed, same weights,
/// independent of call ordering (per-site RNG forks keyed by stable labels).
template <typename T>
std::unique_ptr<Network<T>> build_network(const NetworkSpec& spec, uint64_t seed) {
    spec.validate();
    auto net = std::make_unique<Network<T>>();
    net->spec = spec;
    Rng root(seed);
    Rng init = root.fork("init");
    detail::NetworkBuilder<T> b{*net, init, spec};
    b.run();
    return net;
}

} // namespace obn
