#pragma once

#include <memory>
#include <string>
#include <vector>

#include "obn/im2col.hpp"
#include "obn/tape.hpp"
#include "obn/tensor.hpp"

namespace obn {

/// Learnable tensor with a gradient buffer of identical shape. Sharing a
/// Param between layers aliases the value *and* the gradient, so gradients
/// from every use accumulate into one buffer.
template <typename T>
struct Param {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool decay = true; // participates in weight decay

    Param(std::string n, Tensor<T> v, bool d = true)
        : name(std::move(n)), value(std::move(v)), grad(value.shape()), decay(d) {}

    void zero_grad() { grad.fill(T(0)); }
};

template <typename T>
using ParamPtr = std::shared_ptr<Param<T>>;

namespace convcore {

/// Batched im2col+matmul convolution into a pre-allocated output. Pointwise
/// (1×1, stride 1) geometries skip im2col entirely. Batch-parallel; each
/// output cell's reduction order is fixed.
template <typename T>
void forward(const Tensor<T>& x, const ConvGeom& g, const T* wmat, int t_out, Tensor<T>& y) {
    const int b = x.dim(0), n = g.out_h() * g.out_w(), kk = g.rows();
    const size_t in_stride = g.image_size();
    const size_t out_stride = static_cast<size_t>(t_out) * n;
    if (g.pointwise()) {
        parallel_for(b, [&](int s0, int s1) {
            for (int s = s0; s < s1; ++s)
                matmul_rows(wmat, x.data() + s * in_stride, y.data() + s * out_stride, kk, n, 0,
                            t_out, false);
        });
        return;
    }
    parallel_for(b, [&](int s0, int s1) {
        std::vector<T> cols(g.cols_size());
        for (int s = s0; s < s1; ++s) {
            im2col_into(x.data() + s * in_stride, g, cols.data());
            matmul_rows(wmat, cols.data(), y.data() + s * out_stride, kk, n, 0, t_out, false);
        }
    });
}

/// Adjoints: gx overwritten, gw accumulated in ascending sample order (per
/// sample partials are computed in parallel, reduced serially).
template <typename T>
void backward(const Tensor<T>& x, const ConvGeom& g, const T* wmat, int t_out,
              const Tensor<T>& gy, Tensor<T>& gx, T* gw) {
    const int b = x.dim(0), n = g.out_h() * g.out_w(), kk = g.rows();
    const size_t in_stride = g.image_size();
    const size_t out_stride = static_cast<size_t>(t_out) * n;
    const size_t wsize = static_cast<size_t>(t_out) * kk;
    std::unique_ptr<T[]> parts(new T[static_cast<size_t>(b) * wsize]);
    if (g.pointwise()) {
        parallel_for(b, [&](int s0, int s1) {
            std::vector<T> xt(static_cast<size_t>(n) * kk);
            for (int s = s0; s < s1; ++s) {
                const T* xs = x.data() + s * in_stride;
                const T* gys = gy.data() + s * out_stride;
                transpose_into(xs, kk, n, xt.data());
                matmul_rows(gys, xt.data(), parts.get() + s * wsize, n, kk, 0, t_out, false);
                matmul_at_rows(wmat, gys, gx.data() + s * in_stride, t_out, kk, n, false);
            }
        });
    } else {
        parallel_for(b, [&](int s0, int s1) {
            std::vector<T> cols(g.cols_size()), colst(g.cols_size()), gcols(g.cols_size());
            for (int s = s0; s < s1; ++s) {
                const T* xs = x.data() + s * in_stride;
                const T* gys = gy.data() + s * out_stride;
                im2col_into(xs, g, cols.data());
                transpose_into(cols.data(), kk, n, colst.data());
                matmul_rows(gys, colst.data(), parts.get() + s * wsize, n, kk, 0, t_out, false);
                matmul_at_rows(wmat, gys, gcols.data(), t_out, kk, n, false);
                T* gxs = gx.data() + s * in_stride;
                for (size_t i = 0; i < in_stride; ++i) gxs[i] = T(0);
                col2im_add(gcols.data(), g, gxs);
            }
        });
    }
    for (int s = 0; s < b; ++s) {
        const T* p = parts.get() + s * wsize;
        for (size_t i = 0; i < wsize; ++i) gw[i] += p[i];
    }
}

} // namespace convcore

/// 2-d cross-correlation, no bias. Weight layout [T_out × S × k × k].
/// A 1×1 weight makes this the pointwise (coefficient) convolution.
template <typename T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(ParamPtr<T> weight, int stride, int pad)
        : w_(std::move(weight)), stride_(stride), pad_(pad) {
        if (w_->value.rank() != 4 || w_->value.dim(2) != w_->value.dim(3))
            throw DimensionError("conv2d: weight must be [T,S,k,k]");
    }

    int out_channels() const { return w_->value.dim(0); }
    int in_channels() const { return w_->value.dim(1); }
    int kernel() const { return w_->value.dim(2); }
    const ParamPtr<T>& weight() const { return w_; }

    ConvGeom geometry(int h, int w) const {
        return ConvGeom{in_channels(), h, w, kernel(), stride_, pad_};
    }

    Tensor<T> forward(const Tensor<T>& x, ActivationTape<T>* tape) {
        if (x.rank() != 4 || x.dim(1) != in_channels())
            throw DimensionError("conv2d '" + w_->name + "': input " + x.shape_string() +
                                 " vs weight " + w_->value.shape_string());
        const ConvGeom g = geometry(x.dim(2), x.dim(3));
        g.validate(false); // layers use floor-mode downsampling
        Tensor<T> y({x.dim(0), out_channels(), g.out_h(), g.out_w()});
        convcore::forward(x, g, w_->value.data(), out_channels(), y);
        if (tape) tape->push("conv2d", x);
        return y;
    }

    /// Returns grad wrt input; accumulates grad wrt weight.
    Tensor<T> backward(const Tensor<T>& gy, ActivationTape<T>& tape) {
        Tensor<T> x = tape.pop("conv2d");
        const ConvGeom g = geometry(x.dim(2), x.dim(3));
        const int b = x.dim(0), t = out_channels();
        if (gy.rank() != 4 || gy.dim(0) != b || gy.dim(1) != t || gy.dim(2) != g.out_h() ||
            gy.dim(3) != g.out_w())
            throw InternalError("conv2d backward: grad shape mismatch");
        Tensor<T> gx({b, g.channels, g.in_h, g.in_w});
        convcore::backward(x, g, w_->value.data(), t, gy, gx, w_->grad.data());
        return gx;
    }

private:
    ParamPtr<T> w_;
    int stride_ = 1;
    int pad_ = 0;
};

/// Per-channel batch normalization with learnable scale/shift and running
/// statistics (eps 1e-5, momentum 0.1). Train mode normalizes with batch
/// statistics; eval mode with running statistics. Fresh layers evaluate with
/// mean 0 / var 1.
template <typename T>
class BatchNorm2d {
public:
    static constexpr double kEps = 1e-5;
    static constexpr double kMomentum = 0.1;

    BatchNorm2d() = default;
    BatchNorm2d(ParamPtr<T> gamma, ParamPtr<T> beta, std::string stat_name)
        : gamma_(std::move(gamma)), beta_(std::move(beta)), stat_name_(std::move(stat_name)) {
        const int c = gamma_->value.dim(0);
        running_mean_ = Tensor<T>({c});
        running_var_ = Tensor<T>::full({c}, T(1));
    }

    int channels() const { return gamma_ ? gamma_->value.dim(0) : 0; }
    const std::string& stat_name() const { return stat_name_; }
    Tensor<T>& running_mean() { return running_mean_; }
    Tensor<T>& running_var() { return running_var_; }

    Tensor<T> forward(const Tensor<T>& x, bool training, ActivationTape<T>* tape) {
        const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        if (c != channels()) throw DimensionError("batchnorm: channel mismatch");
        const size_t plane = static_cast<size_t>(h) * w;
        const double m = static_cast<double>(b) * plane;
        Tensor<T> y(x.shape());
        Tensor<T> mean({c}), invstd({c});
        if (training) {
            for (int ch = 0; ch < c; ++ch) {
                double sum = 0;
                for (int s = 0; s < b; ++s) {
                    const T* p = x.data() + (static_cast<size_t>(s) * c + ch) * plane;
                    for (size_t i = 0; i < plane; ++i) sum += p[i];
                }
                const double mu = sum / m;
                double var = 0;
                for (int s = 0; s < b; ++s) {
                    const T* p = x.data() + (static_cast<size_t>(s) * c + ch) * plane;
                    for (size_t i = 0; i < plane; ++i) {
                        const double d = p[i] - mu;
                        var += d * d;
                    }
                }
                var /= m;
                mean[static_cast<size_t>(ch)] = static_cast<T>(mu);
                invstd[static_cast<size_t>(ch)] = static_cast<T>(1.0 / std::sqrt(var + kEps));
                const double unbiased = m > 1 ? var * m / (m - 1) : var;
                running_mean_[static_cast<size_t>(ch)] = static_cast<T>(
                    (1 - kMomentum) * running_mean_[static_cast<size_t>(ch)] + kMomentum * mu);
                running_var_[static_cast<size_t>(ch)] = static_cast<T>(
                    (1 - kMomentum) * running_var_[static_cast<size_t>(ch)] + kMomentum * unbiased);
            }
        } else {
            for (int ch = 0; ch < c; ++ch) {
                mean[static_cast<size_t>(ch)] = running_mean_[static_cast<size_t>(ch)];
                invstd[static_cast<size_t>(ch)] = static_cast<T>(
                    1.0 / std::sqrt(static_cast<double>(running_var_[static_cast<size_t>(ch)]) +
                                    kEps));
            }
        }
        Tensor<T> xhat(x.shape());
        for (int s = 0; s < b; ++s) {
            for (int ch = 0; ch < c; ++ch) {
                const T* px = x.data() + (static_cast<size_t>(s) * c + ch) * plane;
                T* ph = xhat.data() + (static_cast<size_t>(s) * c + ch) * plane;
                T* py = y.data() + (static_cast<size_t>(s) * c + ch) * plane;
                const T mu = mean[static_cast<size_t>(ch)];
                const T is = invstd[static_cast<size_t>(ch)];
                const T ga = gamma_->value[static_cast<size_t>(ch)];
                const T be = beta_->value[static_cast<size_t>(ch)];
                for (size_t i = 0; i < plane; ++i) {
                    ph[i] = (px[i] - mu) * is;
                    py[i] = ga * ph[i] + be;
                }
            }
        }
        if (tape) {
            if (!training) throw InternalError("batchnorm: backward requires train mode");
            tape->push("bn.invstd", invstd);
            tape->push("bn.xhat", std::move(xhat));
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy, ActivationTape<T>& tape) {
        Tensor<T> xhat = tape.pop("bn.xhat");
        Tensor<T> invstd = tape.pop("bn.invstd");
        const int b = gy.dim(0), c = gy.dim(1), h = gy.dim(2), w = gy.dim(3);
        const size_t plane = static_cast<size_t>(h) * w;
        const double m = static_cast<double>(b) * plane;
        Tensor<T> gx(gy.shape());
        for (int ch = 0; ch < c; ++ch) {
            double dbeta = 0, dgamma = 0;
            for (int s = 0; s < b; ++s) {
                const size_t off = (static_cast<size_t>(s) * c + ch) * plane;
                const T* pg = gy.data() + off;
                const T* ph = xhat.data() + off;
                for (size_t i = 0; i < plane; ++i) {
                    dbeta += pg[i];
                    dgamma += static_cast<double>(pg[i]) * ph[i];
                }
            }
            gamma_->grad[static_cast<size_t>(ch)] += static_cast<T>(dgamma);
            beta_->grad[static_cast<size_t>(ch)] += static_cast<T>(dbeta);
            const double scale = static_cast<double>(gamma_->value[static_cast<size_t>(ch)]) *
                                 invstd[static_cast<size_t>(ch)];
            const double mg = dbeta / m, mgx = dgamma / m;
            for (int s = 0; s < b; ++s) {
                const size_t off = (static_cast<size_t>(s) * c + ch) * plane;
                const T* pg = gy.data() + off;
                const T* ph = xhat.data() + off;
                T* px = gx.data() + off;
                for (size_t i = 0; i < plane; ++i)
                    px[i] = static_cast<T>(scale * (pg[i] - mg - ph[i] * mgx));
            }
        }
        return gx;
    }

    std::vector<ParamPtr<T>> params() const { return {gamma_, beta_}; }

private:
    ParamPtr<T> gamma_, beta_;
    Tensor<T> running_mean_, running_var_;
    std::string stat_name_;
};

template <typename T>
class ReLU {
public:
    Tensor<T> forward(const Tensor<T>& x, ActivationTape<T>* tape) {
        Tensor<T> y(x.shape());
        for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
        if (tape) tape->push("relu", y);
        return y;
    }
    Tensor<T> backward(const Tensor<T>& gy, ActivationTape<T>& tape) {
        Tensor<T> y = tape.pop("relu");
        Tensor<T> gx(gy.shape());
        for (size_t i = 0; i < gy.size(); ++i) gx[i] = y[i] > T(0) ? gy[i] : T(0);
        return gx;
    }
};

/// Global average pooling [B,C,H,W] -> [B,C].
template <typename T>
class GlobalAvgPool {
public:
    Tensor<T> forward(const Tensor<T>& x, ActivationTape<T>* tape) {
        const int b = x.dim(0), c = x.dim(1);
        h_ = x.dim(2);
        w_ = x.dim(3);
        const size_t plane = static_cast<size_t>(h_) * w_;
        Tensor<T> y({b, c});
        for (int s = 0; s < b; ++s)
            for (int ch = 0; ch < c; ++ch) {
                double sum = 0;
                const T* p = x.data() + (static_cast<size_t>(s) * c + ch) * plane;
                for (size_t i = 0; i < plane; ++i) sum += p[i];
                y.at(s, ch) = static_cast<T>(sum / static_cast<double>(plane));
            }
        (void)tape;
        return y;
    }
    Tensor<T> backward(const Tensor<T>& gy) {
        const int b = gy.dim(0), c = gy.dim(1);
        const size_t plane = static_cast<size_t>(h_) * w_;
        Tensor<T> gx({b, c, h_, w_});
        const T inv = T(1) / static_cast<T>(plane);
        for (int s = 0; s < b; ++s)
            for (int ch = 0; ch < c; ++ch) {
                T* p = gx.data() + (static_cast<size_t>(s) * c + ch) * plane;
                const T g = gy.at(s, ch) * inv;
                for (size_t i = 0; i < plane; ++i) p[i] = g;
            }
        return gx;
    }

private:
    int h_ = 1, w_ = 1;
};

template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(ParamPtr<T> weight, ParamPtr<T> bias) : w_(std::move(weight)), b_(std::move(bias)) {}

    Tensor<T> forward(const Tensor<T>& x, ActivationTape<T>* tape) {
        if (x.rank() != 2 || x.dim(1) != w_->value.dim(1))
            throw DimensionError("linear: input " + x.shape_string() + " vs weight " +
                                 w_->value.shape_string());
        Tensor<T> y = matmul(x, transposed(w_->value));
        const int b = y.dim(0), out = y.dim(1);
        for (int s = 0; s < b; ++s)
            for (int o = 0; o < out; ++o) y.at(s, o) += b_->value[static_cast<size_t>(o)];
        if (tape) tape->push("linear", x);
        return y;
    }
    Tensor<T> backward(const Tensor<T>& gy, ActivationTape<T>& tape) {
        Tensor<T> x = tape.pop("linear");
        matmul_at_into(gy, x, w_->grad, true); // dW = gyᵀ × x
        const int b = gy.dim(0), out = gy.dim(1);
        for (int o = 0; o < out; ++o) {
            double sum = 0;
            for (int s = 0; s < b; ++s) sum += gy.at(s, o);
            b_->grad[static_cast<size_t>(o)] += static_cast<T>(sum);
        }
        return matmul(gy, w_->value); // dx = gy × W
    }

    std::vector<ParamPtr<T>> params() const { return {w_, b_}; }

private:
    ParamPtr<T> w_, b_;
};

/// Fused softmax + cross-entropy over a batch of logits [B,C]; loss is the
/// batch mean of −log p_label. backward() returns dLoss/dlogits.
template <typename T>
class SoftmaxXent {
public:
    double forward(const Tensor<T>& logits, const std::vector<int>& labels) {
        const int b = logits.dim(0), c = logits.dim(1);
        if (static_cast<int>(labels.size()) != b)
            throw DimensionError("softmax_xent: label count mismatch");
        probs_ = Tensor<T>({b, c});
        labels_ = labels;
        double loss = 0;
        for (int s = 0; s < b; ++s) {
            double mx = logits.at(s, 0);
            for (int j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(logits.at(s, j)));
            double z = 0;
            for (int j = 0; j < c; ++j) z += std::exp(static_cast<double>(logits.at(s, j)) - mx);
            const double logz = std::log(z) + mx;
            for (int j = 0; j < c; ++j)
                probs_.at(s, j) = static_cast<T>(std::exp(static_cast<double>(logits.at(s, j)) - logz));
            loss += logz - logits.at(s, labels[static_cast<size_t>(s)]);
        }
        return loss / b;
    }
    Tensor<T> backward() const {
        const int b = probs_.dim(0), c = probs_.dim(1);
        Tensor<T> g(probs_.shape());
        const T inv = T(1) / static_cast<T>(b);
        for (int s = 0; s < b; ++s)
            for (int j = 0; j < c; ++j) {
                T v = probs_.at(s, j);
                if (j == labels_[static_cast<size_t>(s)]) v -= T(1);
                g.at(s, j) = v * inv;
            }
        return g;
    }
    const Tensor<T>& probs() const { return probs_; }

private:
    Tensor<T> probs_;
    std::vector<int> labels_;
};

/// Residual join: y = a + b. Backward passes grad_out unchanged to both.
template <typename T>
Tensor<T> residual_add(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b))
        throw DimensionError("residual_add: " + a.shape_string() + " vs " + b.shape_string());
    Tensor<T> y(a.shape());
    for (size_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
    return y;
}

} // namespace obn
