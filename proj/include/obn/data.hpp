#pragma once

#include <string>
#include <utility>
#include <vector>

#include "obn/rng.hpp"
#include "obn/tensor.hpp"

namespace obn {

/// An in-memory labelled image set. Images carry per-channel normalization
/// applied exactly once at load time.
struct Dataset {
    TensorF images; // [N,C,H,W]
    std::vector<int> labels;
    int classes = 0;
    std::string split; // "train" or "test"

    int size() const { return static_cast<int>(labels.size()); }
    int channels() const { return images.dim(1); }
    int height() const { return images.dim(2); }
    int width() const { return images.dim(3); }
};

/// Fixed normalization constants shipped for reproducibility; a recompute
/// mode derives them from the train split instead.
struct NormStats {
    std::vector<double> mean;
    std::vector<double> std;
};

NormStats cifar10_norm();
NormStats cifar100_norm();
NormStats mnist_norm();

/// CIFAR-10 binary batches: data_batch_{1..5}.bin + test_batch.bin, each
/// 10000 records of 1 label byte + 3072 channel-planar RGB bytes.
std::pair<Dataset, Dataset> load_cifar10(const std::string& dir, bool recompute_norm = false);

/// CIFAR-100: train.bin/test.bin, records of coarse+fine label bytes + 3072
/// pixels; the fine label is used.
std::pair<Dataset, Dataset> load_cifar100(const std::string& dir, bool recompute_norm = false);

/// MNIST IDX (magic 0x00000803 images / 0x00000801 labels, big-endian).
std::pair<Dataset, Dataset> load_mnist(const std::string& dir, bool recompute_norm = false);

/// Deterministic desk-scale subset: first k examples of each class, in
/// original file order. total is split evenly across classes.
Dataset subset_first_per_class(const Dataset& d, int total);

/// Gaussian class-mean blobs rendered as images; linearly separable at high
/// snr, chance-level at snr = 0.
Dataset synthetic(int classes, int n, int channels, int h, int w, double snr, uint64_t seed,
                  const std::string& split = "train");

/// Render a synthetic blob model into CIFAR-10 binary files (five train
/// batches + test batch) under dir, so the byte-exact loader path can be
/// exercised without the real dataset.
void write_synthetic_cifar10(const std::string& dir, int train_n, int test_n, double snr,
                             uint64_t seed);

/// Crop a [C,H,W] image from its pad-extended canvas at offset (dy,dx);
/// offset (pad,pad) returns the original image. Padding reads zero.
TensorF crop_padded(const TensorF& img, int pad, int dy, int dx);

void flip_horizontal(TensorF& img);

/// Standard train-time augmentation: random crop from a 4-pixel zero-padded
/// canvas plus horizontal flip with p = 0.5. In-place over a [B,C,H,W]
/// batch; draws per image in index order, so a seeded rng fixes the result.
void augment(TensorF& batch, Rng& rng, int pad = 4);

} // namespace obn
