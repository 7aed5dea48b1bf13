#pragma once

#include <memory>
#include <vector>

#include "obn/layers.hpp"
#include "obn/linalg.hpp"

namespace obn {

/// A filter basis: s elements tied across every use site in a block group
/// plus u per-site elements. The reshaped matrix form is k²S × R with basis
/// elements as columns, unshared columns after shared ones. A use site is
/// one convolution operator drawing on the basis.
template <typename T>
struct FilterBasis {
    int kernel = 0;
    int in_channels = 0;
    ParamPtr<T> shared;                   // [s,S,k,k]
    std::vector<ParamPtr<T>> unshared;    // per site, [u,S,k,k]; entries null when u = 0

    int s() const { return shared->value.dim(0); }
    int u() const {
        return (!unshared.empty() && unshared[0]) ? unshared[0]->value.dim(0) : 0;
    }
    int rank() const { return s() + u(); }
    int sites() const { return static_cast<int>(unshared.size()); }

    /// Effective elements of one site, [R,S,k,k].
    Tensor<T> effective_elements(int site) const {
        const auto& sh = shared->value;
        const ParamPtr<T>& un = unshared[static_cast<size_t>(site)];
        if (!un) return sh;
        Tensor<T> out({rank(), in_channels, kernel, kernel});
        std::copy_n(sh.data(), sh.size(), out.data());
        std::copy_n(un->value.data(), un->value.size(), out.data() + sh.size());
        return out;
    }

    /// Reshaped matrix form of one site's effective basis: k²S × R.
    Tensor<T> matrix(int site) const {
        Tensor<T> elems = effective_elements(site);
        return transposed(elems.reshaped({rank(), kernel * kernel * in_channels}));
    }
};

/// Per-site scalar coefficients realized as a 1×1 convolution, [T,R,1,1].
template <typename T>
struct CoefficientSet {
    ParamPtr<T> alpha;
    int out_channels() const { return alpha->value.dim(0); }
    int rank() const { return alpha->value.dim(1); }
};

/// W_t = Σ_r α_t^r · W_basis^r for one use site: the composed full filters
/// [T,S,k,k] equivalent to the two-stage factorized convolution.
template <typename T>
Tensor<T> compose_filters(const FilterBasis<T>& basis, const CoefficientSet<T>& coeffs,
                          int site) {
    if (coeffs.rank() != basis.rank())
        throw DimensionError("compose_filters: coefficient rank " +
                             std::to_string(coeffs.rank()) + " vs basis rank " +
                             std::to_string(basis.rank()));
    const int r = basis.rank(), kksq = basis.kernel * basis.kernel * basis.in_channels;
    Tensor<T> elems = basis.effective_elements(site).reshaped({r, kksq});
    Tensor<T> amat = coeffs.alpha->value.reshaped({coeffs.out_channels(), r});
    return matmul(amat, elems).reshaped(
        {coeffs.out_channels(), basis.in_channels, basis.kernel, basis.kernel});
}

// ---------------------------------------------------------------------------
// Orthogonality regularization: ‖WᵀW − I‖²_F on reshaped basis matrices.
// ---------------------------------------------------------------------------

/// Gram residual WᵀW − I of a k²S×R matrix. Rejects overcomplete bases.
template <typename T>
Tensor<T> gram_residual(const Tensor<T>& w) {
    const int rows = w.dim(0), cols = w.dim(1);
    if (cols > rows)
        throw ConfigError("ortho penalty: rank " + std::to_string(cols) + " exceeds " +
                          std::to_string(rows) + " (overcomplete basis)");
    Tensor<T> g = matmul_at(w, w);
    for (int i = 0; i < cols; ++i) g.at(i, i) -= T(1);
    return g;
}

/// Squared Frobenius deviation ‖WᵀW − I‖²_F of one matrix.
template <typename T>
double ortho_penalty_one(const Tensor<T>& w) {
    Tensor<T> g = gram_residual(w);
    double acc = 0;
    for (size_t i = 0; i < g.size(); ++i) acc += static_cast<double>(g[i]) * g[i];
    return acc;
}

/// Σ over the given matrices of ‖WᵀW − I‖²_F.
template <typename T>
double ortho_penalty(const std::vector<Tensor<T>>& mats) {
    double acc = 0;
    for (const auto& w : mats) acc += ortho_penalty_one(w);
    return acc;
}

/// Exact gradient of ‖WᵀW − I‖²_F: 4·W·(WᵀW − I).
template <typename T>
Tensor<T> ortho_penalty_grad(const Tensor<T>& w) {
    Tensor<T> g = matmul(w, gram_residual(w));
    for (size_t i = 0; i < g.size(); ++i) g[i] *= T(4);
    return g;
}

/// Frobenius (not squared) deviation ‖WᵀW − I‖_F, the quantity tracked by
/// the deviation trace.
template <typename T>
double ortho_deviation_one(const Tensor<T>& w) {
    return std::sqrt(ortho_penalty_one(w));
}

/// Basis weights with exactly orthonormal columns in reshaped form:
/// QR of a seeded Gaussian k²S×R matrix. Returns [R,S,k,k].
template <typename T>
Tensor<T> orthogonal_init(int kernel, int in_channels, int rank, Rng& rng) {
    const int rows = kernel * kernel * in_channels;
    if (rank < 1 || rank > rows)
        throw ConfigError("orthogonal_init: rank " + std::to_string(rank) +
                          " not in [1, " + std::to_string(rows) + "]");
    TensorD g = TensorD::randn({rows, rank}, rng);
    TensorD q = qr_orthonormal_columns(g);
    Tensor<T> out({rank, in_channels, kernel, kernel});
    for (int r = 0; r < rank; ++r)
        for (int i = 0; i < rows; ++i)
            out[static_cast<size_t>(r) * rows + i] = static_cast<T>(q.at(i, r));
    return out;
}

/// Factorized convolution: basis stage (R maps from the shared elements
/// with the site's unshared elements appended) followed by the pointwise
/// coefficient stage (T maps). Runs as one R-filter convolution over the
/// concatenated weights plus a 1×1. The shared Param is aliased across
/// every block of a group, so its gradient accumulates over all recursive
/// uses.
template <typename T>
class FactorizedConv {
public:
    FactorizedConv() = default;
    FactorizedConv(ParamPtr<T> shared, ParamPtr<T> unshared, ParamPtr<T> coeff, int stride,
                   int pad)
        : shared_(std::move(shared)), unshared_(std::move(unshared)), coeff_(std::move(coeff)),
          stride_(stride), pad_(pad) {
        const int r = shared_->value.dim(0) + (unshared_ ? unshared_->value.dim(0) : 0);
        if (coeff_->value.dim(1) != r)
            throw DimensionError("factorized conv: coefficient rank " +
                                 std::to_string(coeff_->value.dim(1)) + " vs basis rank " +
                                 std::to_string(r));
        const int k = shared_->value.dim(2), s_ch = shared_->value.dim(1);
        if (r > k * k * s_ch)
            throw ConfigError("factorized conv: rank " + std::to_string(r) + " exceeds k²S = " +
                              std::to_string(k * k * s_ch));
    }

    int out_channels() const { return coeff_->value.dim(0); }
    int rank() const { return coeff_->value.dim(1); }
    const ParamPtr<T>& shared_param() const { return shared_; }
    const ParamPtr<T>& unshared_param() const { return unshared_; }
    const ParamPtr<T>& coeff_param() const { return coeff_; }

    Tensor<T> forward(const Tensor<T>& x, ActivationTape<T>* tape) {
        if (x.rank() != 4 || x.dim(1) != shared_->value.dim(1))
            throw DimensionError("factorized conv '" + coeff_->name + "': input " +
                                 x.shape_string() + " vs basis " + shared_->value.shape_string());
        const ConvGeom g = basis_geom(x);
        g.validate(false);
        const int b = x.dim(0), r = rank(), t = out_channels();
        Tensor<T> weff = effective_weights();
        Tensor<T> maps({b, r, g.out_h(), g.out_w()});
        convcore::forward(x, g, weff.data(), r, maps);
        Tensor<T> y({b, t, g.out_h(), g.out_w()});
        const ConvGeom gp{r, g.out_h(), g.out_w(), 1, 1, 0};
        convcore::forward(maps, gp, coeff_->value.data(), t, y);
        if (tape) {
            tape->push("fac.x", x);
            tape->push("fac.maps", std::move(maps));
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy, ActivationTape<T>& tape) {
        Tensor<T> maps = tape.pop("fac.maps");
        Tensor<T> x = tape.pop("fac.x");
        const ConvGeom g = basis_geom(x);
        const int b = x.dim(0), r = rank(), t = out_channels();
        const ConvGeom gp{r, g.out_h(), g.out_w(), 1, 1, 0};
        Tensor<T> gmaps(maps.shape());
        convcore::backward(maps, gp, coeff_->value.data(), t, gy, gmaps, coeff_->grad.data());
        Tensor<T> weff = effective_weights();
        Tensor<T> gweff(weff.shape());
        Tensor<T> gx({b, g.channels, g.in_h, g.in_w});
        convcore::backward(x, g, weff.data(), r, gmaps, gx, gweff.data());
        // split effective-weight gradient back into shared | unshared parts
        const size_t ssz = shared_->value.size();
        T* sg = shared_->grad.data();
        for (size_t i = 0; i < ssz; ++i) sg[i] += gweff[i];
        if (unshared_) {
            T* ug = unshared_->grad.data();
            for (size_t i = 0; i < unshared_->value.size(); ++i) ug[i] += gweff[ssz + i];
        }
        return gx;
    }

private:
    ConvGeom basis_geom(const Tensor<T>& x) const {
        return ConvGeom{shared_->value.dim(1), x.dim(2), x.dim(3), shared_->value.dim(2),
                        stride_, pad_};
    }

    /// [R,S,k,k]: shared elements with the site's unshared elements appended.
    Tensor<T> effective_weights() const {
        if (!unshared_) return shared_->value;
        Tensor<T> w({rank(), shared_->value.dim(1), shared_->value.dim(2),
                     shared_->value.dim(3)});
        std::copy_n(shared_->value.data(), shared_->value.size(), w.data());
        std::copy_n(unshared_->value.data(), unshared_->value.size(),
                    w.data() + shared_->value.size());
        return w;
    }

    ParamPtr<T> shared_, unshared_, coeff_;
    int stride_ = 1;
    int pad_ = 0;
};

} // namespace obn
