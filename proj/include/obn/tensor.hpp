#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "obn/error.hpp"
#include "obn/parallel.hpp"
#include "obn/rng.hpp"

namespace obn {

/// Dense n-dimensional array, row-major, contiguous. No strided views:
/// every Tensor owns its buffer and product(shape) == data.size().
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(check_shape(shape_), T(0));
    }
    Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

    Tensor(std::vector<int> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (check_shape(shape_) != data_.size())
            throw DimensionError("tensor: data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_string());
    }

    static Tensor full(std::vector<int> shape, T value) {
        Tensor t(std::move(shape));
        for (auto& v : t.data_) v = value;
        return t;
    }

    static Tensor randn(std::vector<int> shape, Rng& rng, double scale = 1.0) {
        Tensor t(std::move(shape));
        for (auto& v : t.data_) v = static_cast<T>(rng.gaussian() * scale);
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(shape_.size()); }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](size_t i) { return data_[i]; }
    const T& operator[](size_t i) const { return data_[i]; }

    // Indexed access for up to 4 dims; row-major.
    T& at(int i, int j) { return data_[static_cast<size_t>(i) * dim(1) + j]; }
    const T& at(int i, int j) const { return data_[static_cast<size_t>(i) * dim(1) + j]; }
    T& at(int i, int j, int k) {
        return data_[(static_cast<size_t>(i) * dim(1) + j) * dim(2) + k];
    }
    const T& at(int i, int j, int k) const {
        return data_[(static_cast<size_t>(i) * dim(1) + j) * dim(2) + k];
    }
    T& at(int i, int j, int k, int l) {
        return data_[((static_cast<size_t>(i) * dim(1) + j) * dim(2) + k) * dim(3) + l];
    }
    const T& at(int i, int j, int k, int l) const {
        return data_[((static_cast<size_t>(i) * dim(1) + j) * dim(2) + k) * dim(3) + l];
    }

    /// Reinterpret with a new shape of identical element count.
    Tensor reshaped(std::vector<int> shape) const {
        Tensor t;
        if (check_shape(shape) != data_.size())
            throw DimensionError("reshape: element count mismatch");
        t.shape_ = std::move(shape);
        t.data_ = data_;
        return t;
    }

    void fill(T value) {
        for (auto& v : data_) v = value;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    std::string shape_string() const {
        std::ostringstream os;
        os << '[';
        for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
        os << ']';
        return os.str();
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> t(shape_);
        for (size_t i = 0; i < data_.size(); ++i) t[i] = static_cast<U>(data_[i]);
        return t;
    }

private:
    static size_t check_shape(const std::vector<int>& shape) {
        size_t n = 1;
        for (int e : shape) {
            if (e < 1) throw DimensionError("tensor: extent must be >= 1");
            n *= static_cast<size_t>(e);
        }
        return n;
    }

    std::vector<int> shape_;
    std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// ---------------------------------------------------------------------------
// Kernels. Every cell accumulates in fixed ascending index order, so results
// are identical for any thread count (parallelism partitions output rows).
// ---------------------------------------------------------------------------

/// c[i,:] (+)= sum_p a[i,p] * b[p,:], rows i in [row0, row1). Four output
/// rows advance together so each streamed b row feeds four accumulations;
/// every cell still sums over p in ascending order, so neither tiling nor
/// row grouping changes the result bits.
template <typename T>
inline void matmul_rows(const T* __restrict a, const T* __restrict b, T* __restrict c,
                        int k, int n, int row0, int row1, bool accumulate) {
    constexpr int kTileJ = 1024;
    if (!accumulate)
        for (size_t i = static_cast<size_t>(row0) * n; i < static_cast<size_t>(row1) * n; ++i)
            c[i] = T(0);
    for (int jt = 0; jt < n; jt += kTileJ) {
        const int je = std::min(n, jt + kTileJ);
        int i = row0;
        for (; i + 4 <= row1; i += 4) {
            T* __restrict c0 = c + static_cast<size_t>(i) * n;
            T* __restrict c1 = c0 + n;
            T* __restrict c2 = c1 + n;
            T* __restrict c3 = c2 + n;
            const T* __restrict a0 = a + static_cast<size_t>(i) * k;
            const T* __restrict a1 = a0 + k;
            const T* __restrict a2 = a1 + k;
            const T* __restrict a3 = a2 + k;
            for (int p = 0; p < k; ++p) {
                const T v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
                const T* __restrict bp = b + static_cast<size_t>(p) * n;
                for (int j = jt; j < je; ++j) {
                    const T bv = bp[j];
                    c0[j] += v0 * bv;
                    c1[j] += v1 * bv;
                    c2[j] += v2 * bv;
                    c3[j] += v3 * bv;
                }
            }
        }
        for (; i < row1; ++i) {
            T* __restrict ci = c + static_cast<size_t>(i) * n;
            const T* __restrict ai = a + static_cast<size_t>(i) * k;
            for (int p = 0; p < k; ++p) {
                const T aip = ai[p];
                const T* __restrict bp = b + static_cast<size_t>(p) * n;
                for (int j = jt; j < je; ++j) ci[j] += aip * bp[j];
            }
        }
    }
}

/// c = a × b with a: m×k, b: k×n. Parallel over output rows.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw DimensionError("matmul: operands must be rank 2");
    if (a.dim(1) != b.dim(0))
        throw DimensionError("matmul: inner extents differ, " + a.shape_string() + " vs " +
                             b.shape_string());
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> c({m, n});
    const T* pa = a.data();
    const T* pb = b.data();
    T* pc = c.data();
    if (static_cast<int64_t>(m) * k * n >= 1 << 16) {
        parallel_for(m, [&](int r0, int r1) { matmul_rows(pa, pb, pc, k, n, r0, r1, false); });
    } else {
        matmul_rows(pa, pb, pc, k, n, 0, m, false);
    }
    return c;
}

/// c (+)= aᵀ × b with a: k×m, b: k×n (raw pointers). Same per-cell order as
/// matmul on explicitly transposed a; tiling keeps the output subblock hot
/// without touching per-cell accumulation order.
template <typename T>
void matmul_at_rows(const T* __restrict pa, const T* __restrict pb, T* __restrict pc, int k,
                    int m, int n, bool accumulate) {
    constexpr int kTileJ = 1024, kTileI = 64;
    if (!accumulate)
        for (size_t i = 0; i < static_cast<size_t>(m) * n; ++i) pc[i] = T(0);
    for (int jt = 0; jt < n; jt += kTileJ) {
        const int je = std::min(n, jt + kTileJ);
        for (int it = 0; it < m; it += kTileI) {
            const int ie = std::min(m, it + kTileI);
            for (int p = 0; p < k; ++p) {
                const T* __restrict ap = pa + static_cast<size_t>(p) * m;
                const T* __restrict bp = pb + static_cast<size_t>(p) * n;
                int i = it;
                for (; i + 4 <= ie; i += 4) {
                    const T v0 = ap[i], v1 = ap[i + 1], v2 = ap[i + 2], v3 = ap[i + 3];
                    T* __restrict c0 = pc + static_cast<size_t>(i) * n;
                    T* __restrict c1 = c0 + n;
                    T* __restrict c2 = c1 + n;
                    T* __restrict c3 = c2 + n;
                    for (int j = jt; j < je; ++j) {
                        const T bv = bp[j];
                        c0[j] += v0 * bv;
                        c1[j] += v1 * bv;
                        c2[j] += v2 * bv;
                        c3[j] += v3 * bv;
                    }
                }
                for (; i < ie; ++i) {
                    const T api = ap[i];
                    T* __restrict ci = pc + static_cast<size_t>(i) * n;
                    for (int j = jt; j < je; ++j) ci[j] += api * bp[j];
                }
            }
        }
    }
}

template <typename T>
void matmul_at_into(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c, bool accumulate) {
    if (a.dim(0) != b.dim(0)) throw DimensionError("matmul_at: inner extents differ");
    const int k = a.dim(0), m = a.dim(1), n = b.dim(1);
    if (c.dim(0) != m || c.dim(1) != n) throw DimensionError("matmul_at: bad output shape");
    matmul_at_rows(a.data(), b.data(), c.data(), k, m, n, accumulate);
}

/// Cache-blocked out-of-place transpose: out[n×m] = inᵀ for in[m×n].
template <typename T>
void transpose_into(const T* __restrict in, int m, int n, T* __restrict out) {
    constexpr int kTile = 32;
    for (int i0 = 0; i0 < m; i0 += kTile)
        for (int j0 = 0; j0 < n; j0 += kTile) {
            const int i1 = std::min(m, i0 + kTile), j1 = std::min(n, j0 + kTile);
            for (int i = i0; i < i1; ++i)
                for (int j = j0; j < j1; ++j)
                    out[static_cast<size_t>(j) * m + i] = in[static_cast<size_t>(i) * n + j];
        }
}

template <typename T>
Tensor<T> matmul_at(const Tensor<T>& a, const Tensor<T>& b) {
    Tensor<T> c({a.dim(1), b.dim(1)});
    matmul_at_into(a, b, c, false);
    return c;
}

template <typename T>
Tensor<T> transposed(const Tensor<T>& a) {
    if (a.rank() != 2) throw DimensionError("transpose: rank 2 expected");
    const int m = a.dim(0), n = a.dim(1);
    Tensor<T> t({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) t.at(j, i) = a.at(i, j);
    return t;
}

template <typename T>
void add_scaled(Tensor<T>& dst, const Tensor<T>& src, T scale) {
    if (dst.size() != src.size()) throw DimensionError("add_scaled: size mismatch");
    T* __restrict d = dst.data();
    const T* __restrict s = src.data();
    for (size_t i = 0; i < dst.size(); ++i) d[i] += scale * s[i];
}

template <typename T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.size() != b.size()) throw DimensionError("dot: size mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
    return acc;
}

template <typename T>
double norm2(const Tensor<T>& a) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * a[i];
    return std::sqrt(acc);
}

template <typename T>
double max_abs(const Tensor<T>& a) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i])));
    return m;
}

template <typename T>
bool all_finite(const Tensor<T>& a) {
    for (size_t i = 0; i < a.size(); ++i)
        if (!std::isfinite(static_cast<double>(a[i]))) return false;
    return true;
}

} // namespace obn
