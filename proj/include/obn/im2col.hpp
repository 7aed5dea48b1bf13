#pragma once

#include "obn/tensor.hpp"

namespace obn {

/// Geometry of one 2-d convolution. The standalone im2col/col2im contract
/// requires (H + 2·pad − k) to be a multiple of stride; convolution layers
/// use floor mode instead, where trailing padded rows may go unused (the
/// usual downsampling semantics of stride-2 3×3 convolutions).
struct ConvGeom {
    int channels = 0; // S
    int in_h = 0, in_w = 0;
    int kernel = 1;
    int stride = 1;
    int pad = 0;

    int out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; } // floor
    int out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
    int rows() const { return kernel * kernel * channels; }
    size_t cols_size() const { return static_cast<size_t>(rows()) * out_h() * out_w(); }
    size_t image_size() const { return static_cast<size_t>(channels) * in_h * in_w; }

    bool pointwise() const { return kernel == 1 && stride == 1 && pad == 0; }

    void validate(bool require_integral = true) const {
        if (kernel < 1 || stride < 1 || pad < 0 || channels < 1)
            throw ConfigError("conv geometry: bad kernel/stride/pad/channels");
        int eh = in_h + 2 * pad - kernel;
        int ew = in_w + 2 * pad - kernel;
        if (eh < 0 || ew < 0 || (require_integral && (eh % stride != 0 || ew % stride != 0)))
            throw ConfigError("conv geometry: output extent not integral for H=" +
                              std::to_string(in_h) + " W=" + std::to_string(in_w) + " k=" +
                              std::to_string(kernel) + " stride=" + std::to_string(stride) +
                              " pad=" + std::to_string(pad));
    }
};

/// Unfold one [S×H×W] image into columns [(k²S) × (H'·W')]. Column j holds
/// the receptive field of output position j; rows are channel-major, then
/// row-major within the k×k window. Padding reads zero.
template <typename T>
void im2col_into(const T* __restrict in, const ConvGeom& g, T* __restrict out) {
    const int oh = g.out_h(), ow = g.out_w(), k = g.kernel;
    const int ncols = oh * ow;
    for (int c = 0; c < g.channels; ++c) {
        const T* plane = in + static_cast<size_t>(c) * g.in_h * g.in_w;
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                T* row = out + static_cast<size_t>((c * k + ki) * k + kj) * ncols;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * g.stride - g.pad + ki;
                    T* dst = row + static_cast<size_t>(oy) * ow;
                    if (iy < 0 || iy >= g.in_h) {
                        for (int ox = 0; ox < ow; ++ox) dst[ox] = T(0);
                        continue;
                    }
                    const T* src = plane + static_cast<size_t>(iy) * g.in_w;
                    const int x0 = g.pad - kj; // ix = ox*stride - x0
                    if (g.stride == 1) {
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox - x0;
                            dst[ox] = (ix >= 0 && ix < g.in_w) ? src[ix] : T(0);
                        }
                    } else {
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * g.stride - x0;
                            dst[ox] = (ix >= 0 && ix < g.in_w) ? src[ix] : T(0);
                        }
                    }
                }
            }
    }
}

/// Adjoint of im2col_into: scatter-add columns into an [S×H×W] image buffer
/// (caller zeroes it first). Overlapping receptive fields accumulate.
template <typename T>
void col2im_add(const T* __restrict in, const ConvGeom& g, T* __restrict out) {
    const int oh = g.out_h(), ow = g.out_w(), k = g.kernel;
    const int ncols = oh * ow;
    for (int c = 0; c < g.channels; ++c) {
        T* plane = out + static_cast<size_t>(c) * g.in_h * g.in_w;
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                const T* row = in + static_cast<size_t>((c * k + ki) * k + kj) * ncols;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * g.stride - g.pad + ki;
                    if (iy < 0 || iy >= g.in_h) continue;
                    T* dst = plane + static_cast<size_t>(iy) * g.in_w;
                    const T* src = row + static_cast<size_t>(oy) * ow;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * g.stride - g.pad + kj;
                        if (ix >= 0 && ix < g.in_w) dst[ix] += src[ox];
                    }
                }
            }
    }
}

/// Spec-facing im2col over a [S×H×W] tensor; strict geometry by default.
template <typename T>
Tensor<T> im2col(const Tensor<T>& input, const ConvGeom& g, bool require_integral = true) {
    g.validate(require_integral);
    if (input.rank() != 3 || input.dim(0) != g.channels || input.dim(1) != g.in_h ||
        input.dim(2) != g.in_w)
        throw DimensionError("im2col: input " + input.shape_string() + " does not match geometry");
    Tensor<T> cols({g.rows(), g.out_h() * g.out_w()});
    im2col_into(input.data(), g, cols.data());
    return cols;
}

/// Spec-facing adjoint: overlapping positions accumulate.
template <typename T>
Tensor<T> col2im(const Tensor<T>& cols, const ConvGeom& g, bool require_integral = true) {
    g.validate(require_integral);
    if (cols.rank() != 2 || cols.dim(0) != g.rows() || cols.dim(1) != g.out_h() * g.out_w())
        throw DimensionError("col2im: columns " + cols.shape_string() + " do not match geometry");
    Tensor<T> image({g.channels, g.in_h, g.in_w});
    col2im_add(cols.data(), g, image.data());
    return image;
}

} // namespace obn
