#include "obn/analyze.hpp"

#include <cstdio>
#include <fstream>

#include "obn/linalg.hpp"

namespace obn {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("analyze: cannot write '" + path + "'");
    return out;
}

} // namespace

double SimilarityMatrix::mean_off_diagonal() const {
    double sum = 0;
    long count = 0;
    for (size_t i = 0; i < m.size(); ++i)
        for (size_t j = 0; j < m.size(); ++j) {
            if (i == j) continue;
            bool bad = false;
            for (const auto& f : flagged)
                if ((f.first == static_cast<int>(i) && f.second == static_cast<int>(j)) ||
                    (f.first == static_cast<int>(j) && f.second == static_cast<int>(i)))
                    bad = true;
            if (bad) continue;
            sum += m[i][j];
            ++count;
        }
    return count ? sum / count : 0.0;
}

SimilarityMatrix cosine_similarity(
    const std::vector<std::pair<std::string, std::vector<double>>>& vectors) {
    if (vectors.size() < 2)
        throw ConfigError("cosine_similarity: need at least 2 coefficient sets");
    const size_t n = vectors.size();
    SimilarityMatrix sim;
    sim.m.assign(n, std::vector<double>(n, 0.0));
    std::vector<double> norms(n, 0.0);
    for (size_t i = 0; i < n; ++i) {
        sim.index.push_back(vectors[i].first);
        double s = 0;
        for (double v : vectors[i].second) s += v * v;
        norms[i] = std::sqrt(s);
    }
    for (size_t i = 0; i < n; ++i) {
        sim.m[i][i] = 1.0;
        for (size_t j = i + 1; j < n; ++j) {
            const auto& a = vectors[i].second;
            const auto& b = vectors[j].second;
            if (a.size() != b.size() || norms[i] == 0.0 || norms[j] == 0.0) {
                sim.flagged.emplace_back(static_cast<int>(i), static_cast<int>(j));
                continue; // defined as 0, reported
            }
            double d = 0;
            for (size_t k = 0; k < a.size(); ++k) d += a[k] * b[k];
            const double c = std::abs(d) / (norms[i] * norms[j]);
            sim.m[i][j] = sim.m[j][i] = std::min(c, 1.0);
        }
    }
    return sim;
}

SpectralReport spectral_probe(const TensorD& matrix, int steps, int trials, uint64_t seed) {
    SpectralReport rep;
    rep.singular_values = singular_values(matrix);
    rep.steps = steps;
    if (steps <= 0) return rep;
    if (matrix.dim(0) != matrix.dim(1))
        throw ConfigError("spectral_probe: N-fold product mode needs a square reshaped basis "
                          "(R = k²S); got " + matrix.shape_string());
    const int dim = matrix.dim(0);
    Rng root(seed);
    for (int p = 0; p < trials; ++p) {
        Rng r = root.fork("probe" + std::to_string(p));
        TensorD x({dim, 1});
        for (int i = 0; i < dim; ++i) x.at(i, 0) = r.gaussian();
        const double n0 = norm2(x);
        std::vector<double> ratios;
        for (int n = 1; n <= steps; ++n) {
            x = matmul_at(matrix, x); // x ← Wᵀx
            ratios.push_back(norm2(x) / n0);
        }
        rep.norm_ratios.push_back(std::move(ratios));
    }
    return rep;
}

void write_gradflow_csv(const std::string& path, const std::vector<GradFlowRecord>& recs) {
    auto out = open_out(path);
    out << "iter,basis_id,max_abs_grad,mean_abs_grad\n";
    for (const auto& r : recs)
        out << r.iter << ',' << r.basis_id << ',' << fmt(r.max_abs_grad) << ','
            << fmt(r.mean_abs_grad) << '\n';
}

void write_similarity_csv(const std::string& path, const SimilarityMatrix& sim) {
    auto out = open_out(path);
    for (size_t i = 0; i < sim.index.size(); ++i) out << ',' << sim.index[i];
    out << '\n';
    for (size_t i = 0; i < sim.m.size(); ++i) {
        out << sim.index[i];
        for (size_t j = 0; j < sim.m.size(); ++j) out << ',' << fmt(sim.m[i][j]);
        out << '\n';
    }
}

void write_spectral_csv(const std::string& path, const SpectralReport& rep) {
    auto out = open_out(path);
    out << "n,probe_id,norm_ratio\n";
    // n = 0 rows carry the singular values, one per probe_id slot
    for (size_t i = 0; i < rep.singular_values.size(); ++i)
        out << "0," << i << ',' << fmt(rep.singular_values[i]) << '\n';
    for (size_t p = 0; p < rep.norm_ratios.size(); ++p)
        for (size_t n = 0; n < rep.norm_ratios[p].size(); ++n)
            out << (n + 1) << ',' << p << ',' << fmt(rep.norm_ratios[p][n]) << '\n';
}

void write_deviation_csv(const std::string& path, const std::vector<DeviationRecord>& recs) {
    auto out = open_out(path);
    out << "epoch,basis_id,frob_dev\n";
    for (const auto& r : recs)
        out << r.epoch << ',' << r.basis_id << ',' << fmt(r.frob_dev) << '\n';
}

} // namespace obn
