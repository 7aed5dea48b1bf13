#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "obn/tensor.hpp"

namespace obn {

/// Householder QR of a (m×n), m ≥ n: returns the thin Q (m×n) with
/// orthonormal columns spanning the column space of a.
inline TensorD qr_orthonormal_columns(const TensorD& a) {
    const int m = a.dim(0), n = a.dim(1);
    if (m < n) throw DimensionError("qr: need rows >= cols");
    TensorD r = a; // working copy, becomes R in-place
    std::vector<std::vector<double>> vs;
    vs.reserve(static_cast<size_t>(n));
    for (int j = 0; j < n; ++j) {
        std::vector<double> v(static_cast<size_t>(m - j));
        double norm = 0;
        for (int i = j; i < m; ++i) {
            v[static_cast<size_t>(i - j)] = r.at(i, j);
            norm += r.at(i, j) * r.at(i, j);
        }
        norm = std::sqrt(norm);
        double alpha = v[0] >= 0 ? -norm : norm;
        v[0] -= alpha;
        double vnorm2 = 0;
        for (double x : v) vnorm2 += x * x;
        if (vnorm2 > 0) {
            for (int c = j; c < n; ++c) {
                double s = 0;
                for (int i = j; i < m; ++i) s += v[static_cast<size_t>(i - j)] * r.at(i, c);
                s = 2.0 * s / vnorm2;
                for (int i = j; i < m; ++i) r.at(i, c) -= s * v[static_cast<size_t>(i - j)];
            }
        }
        vs.push_back(std::move(v));
    }
    // Q = H_0 H_1 ... H_{n-1} applied to the first n identity columns.
    TensorD q({m, n});
    for (int j = 0; j < n; ++j) q.at(j, j) = 1.0;
    for (int h = n - 1; h >= 0; --h) {
        const auto& v = vs[static_cast<size_t>(h)];
        double vnorm2 = 0;
        for (double x : v) vnorm2 += x * x;
        if (vnorm2 == 0) continue;
        for (int c = 0; c < n; ++c) {
            double s = 0;
            for (int i = h; i < m; ++i) s += v[static_cast<size_t>(i - h)] * q.at(i, c);
            s = 2.0 * s / vnorm2;
            for (int i = h; i < m; ++i) q.at(i, c) -= s * v[static_cast<size_t>(i - h)];
        }
    }
    // Fix column signs so diag(R) >= 0; keeps the factorization unique and
    // the output deterministic.
    for (int j = 0; j < n; ++j) {
        if (r.at(j, j) < 0)
            for (int i = 0; i < m; ++i) q.at(i, j) = -q.at(i, j);
    }
    return q;
}

/// Singular values of a (any shape), descending, via one-sided Jacobi.
inline std::vector<double> singular_values(const TensorD& a) {
    TensorD w = a.dim(0) >= a.dim(1) ? a : transposed(a);
    const int m = w.dim(0), n = w.dim(1);
    const double eps = 1e-14;
    for (int sweep = 0; sweep < 60; ++sweep) {
        double off = 0;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                double app = 0, aqq = 0, apq = 0;
                for (int i = 0; i < m; ++i) {
                    app += w.at(i, p) * w.at(i, p);
                    aqq += w.at(i, q) * w.at(i, q);
                    apq += w.at(i, p) * w.at(i, q);
                }
                off = std::max(off, std::abs(apq) / std::max(std::sqrt(app * aqq), 1e-300));
                if (std::abs(apq) <= eps * std::sqrt(app * aqq)) continue;
                double tau = (aqq - app) / (2.0 * apq);
                double t = (tau >= 0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                double c = 1.0 / std::sqrt(1.0 + t * t);
                double s = c * t;
                for (int i = 0; i < m; ++i) {
                    double wp = w.at(i, p), wq = w.at(i, q);
                    w.at(i, p) = c * wp - s * wq;
                    w.at(i, q) = s * wp + c * wq;
                }
            }
        }
        if (off < eps) break;
    }
    std::vector<double> sv(static_cast<size_t>(n));
    for (int j = 0; j < n; ++j) {
        double s = 0;
        for (int i = 0; i < m; ++i) s += w.at(i, j) * w.at(i, j);
        sv[static_cast<size_t>(j)] = std::sqrt(s);
    }
    std::sort(sv.begin(), sv.end(), std::greater<double>());
    return sv;
}

} // namespace obn
