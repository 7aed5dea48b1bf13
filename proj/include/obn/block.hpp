#pragma once

#include "obn/basis.hpp"

namespace obn {

/// Placement of batch normalization inside a block. post_act is the default
/// ordering here (conv → ReLU → BN); pre_act is the conventional
/// conv → BN → ReLU.
enum class BnOrder { post_act, pre_act };

/// One convolution position inside a residual block: either a full [T,S,k,k]
/// convolution or a factorized basis+coefficient pair.
template <typename T>
class ConvUnit {
public:
    ConvUnit() = default;
    static ConvUnit full(ParamPtr<T> w, int stride, int pad) {
        ConvUnit u;
        u.full_ = Conv2d<T>(std::move(w), stride, pad);
        u.factorized_ = false;
        return u;
    }
    static ConvUnit factorized(FactorizedConv<T> f) {
        ConvUnit u;
        u.fac_ = std::move(f);
        u.factorized_ = true;
        return u;
    }

    bool is_factorized() const { return factorized_; }
    const FactorizedConv<T>& fac() const { return fac_; }
    FactorizedConv<T>& fac() { return fac_; }
    const Conv2d<T>& conv() const { return full_; }

    Tensor<T> forward(const Tensor<T>& x, ActivationTape<T>* tape) {
        return factorized_ ? fac_.forward(x, tape) : full_.forward(x, tape);
    }
    Tensor<T> backward(const Tensor<T>& gy, ActivationTape<T>& tape) {
        return factorized_ ? fac_.backward(gy, tape) : full_.backward(gy, tape);
    }

private:
    Conv2d<T> full_;
    FactorizedConv<T> fac_;
    bool factorized_ = false;
};

enum class ShortcutKind { identity, projection, pad_subsample };

/// Residual shortcut. pad_subsample is the parameter-free variant used by
/// the CIFAR baselines: stride-2 spatial subsampling with zero-padded
/// channels.
template <typename T>
class Shortcut {
public:
    ShortcutKind kind = ShortcutKind::identity;
    Conv2d<T> proj;
    BatchNorm2d<T> proj_bn;
    int stride = 1;
    int in_channels = 0, out_channels = 0;

    Tensor<T> forward(const Tensor<T>& x, bool training, ActivationTape<T>* tape) {
        switch (kind) {
        case ShortcutKind::identity:
            return x;
        case ShortcutKind::projection:
            return proj_bn.forward(proj.forward(x, tape), training, tape);
        case ShortcutKind::pad_subsample: {
            const int b = x.dim(0), h = (x.dim(2) - 1) / stride + 1,
                      w = (x.dim(3) - 1) / stride + 1;
            Tensor<T> y({b, out_channels, h, w});
            const int front = (out_channels - in_channels) / 2;
            for (int s = 0; s < b; ++s)
                for (int c = 0; c < in_channels; ++c)
                    for (int i = 0; i < h; ++i)
                        for (int j = 0; j < w; ++j)
                            y.at(s, c + front, i, j) = x.at(s, c, i * stride, j * stride);
            if (tape) {
                Tensor<T> meta({4});
                for (int i = 0; i < 4; ++i)
                    meta[static_cast<size_t>(i)] = static_cast<T>(x.dim(i));
                tape->push("shortcut.shape", std::move(meta));
            }
            return y;
        }
        }
        return x;
    }

    Tensor<T> backward(const Tensor<T>& gy, ActivationTape<T>& tape) {
        switch (kind) {
        case ShortcutKind::identity:
            return gy;
        case ShortcutKind::projection:
            return proj.backward(proj_bn.backward(gy, tape), tape);
        case ShortcutKind::pad_subsample: {
            Tensor<T> meta = tape.pop("shortcut.shape");
            std::vector<int> in_shape(4);
            for (int i = 0; i < 4; ++i) in_shape[static_cast<size_t>(i)] = static_cast<int>(meta[static_cast<size_t>(i)]);
            Tensor<T> gx(in_shape);
            const int b = gy.dim(0), h = gy.dim(2), w = gy.dim(3);
            const int front = (out_channels - in_channels) / 2;
            for (int s = 0; s < b; ++s)
                for (int c = 0; c < in_channels; ++c)
                    for (int i = 0; i < h; ++i)
                        for (int j = 0; j < w; ++j)
                            gx.at(s, c, i * stride, j * stride) = gy.at(s, c + front, i, j);
            return gx;
        }
        }
        return gy;
    }
};

/// Basic residual block: two conv units with per-block (never shared)
/// normalization, a residual join, and the configured conv/ReLU/BN order.
/// Backward pops tape entries in exact reverse order of forward's pushes:
/// forward pushes main path then shortcut, backward consumes shortcut then
/// main path.
template <typename T>
class ResidualBlock {
public:
    ConvUnit<T> conv1, conv2;
    BatchNorm2d<T> bn1, bn2;
    Shortcut<T> shortcut;
    BnOrder order = BnOrder::post_act;
    std::string name;

    Tensor<T> forward(const Tensor<T>& x, bool training, ActivationTape<T>* tape) {
        Tensor<T> h;
        if (order == BnOrder::post_act) {
            h = bn1.forward(relu1_.forward(conv1.forward(x, tape), tape), training, tape);
            h = bn2.forward(relu2_.forward(conv2.forward(h, tape), tape), training, tape);
        } else {
            h = relu1_.forward(bn1.forward(conv1.forward(x, tape), training, tape), tape);
            h = bn2.forward(conv2.forward(h, tape), training, tape);
        }
        Tensor<T> y = residual_add(h, shortcut.forward(x, training, tape));
        if (order == BnOrder::pre_act) y = relu_out_.forward(y, tape);
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy_in, ActivationTape<T>& tape) {
        Tensor<T> gy = gy_in;
        if (order == BnOrder::pre_act) gy = relu_out_.backward(gy, tape);
        Tensor<T> gshort = shortcut.backward(gy, tape);
        Tensor<T> g = gy;
        if (order == BnOrder::post_act) {
            g = conv2.backward(relu2_.backward(bn2.backward(g, tape), tape), tape);
            g = conv1.backward(relu1_.backward(bn1.backward(g, tape), tape), tape);
        } else {
            g = conv2.backward(bn2.backward(g, tape), tape);
            g = conv1.backward(bn1.backward(relu1_.backward(g, tape), tape), tape);
        }
        add_scaled(g, gshort, T(1));
        return g;
    }

private:
    ReLU<T> relu1_, relu2_, relu_out_;
};

} // namespace obn
