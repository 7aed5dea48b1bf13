#include "obn/data.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "obn/error.hpp"

namespace obn {

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("data: cannot open '" + path + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    return bytes;
}

struct RawImages {
    std::vector<unsigned char> pixels; // N*C*H*W, channel-planar
    std::vector<int> labels;
    int c = 0, h = 0, w = 0;
};

void normalize_into(Dataset& d, const RawImages& raw, const NormStats& norm) {
    const int n = static_cast<int>(raw.labels.size());
    d.images = TensorF({n, raw.c, raw.h, raw.w});
    d.labels = raw.labels;
    const size_t plane = static_cast<size_t>(raw.h) * raw.w;
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < raw.c; ++c) {
            const unsigned char* src =
                raw.pixels.data() + (static_cast<size_t>(i) * raw.c + c) * plane;
            float* dst = d.images.data() + (static_cast<size_t>(i) * raw.c + c) * plane;
            const float mu = static_cast<float>(norm.mean[static_cast<size_t>(c)]);
            const float inv = static_cast<float>(1.0 / norm.std[static_cast<size_t>(c)]);
            for (size_t p = 0; p < plane; ++p)
                dst[p] = (static_cast<float>(src[p]) / 255.0f - mu) * inv;
        }
}

NormStats compute_norm(const RawImages& raw) {
    NormStats s;
    const size_t plane = static_cast<size_t>(raw.h) * raw.w;
    const size_t n = raw.labels.size();
    for (int c = 0; c < raw.c; ++c) {
        double sum = 0, sq = 0;
        for (size_t i = 0; i < n; ++i) {
            const unsigned char* src = raw.pixels.data() + (i * raw.c + c) * plane;
            for (size_t p = 0; p < plane; ++p) {
                const double v = src[p] / 255.0;
                sum += v;
                sq += v * v;
            }
        }
        const double m = sum / (n * plane);
        s.mean.push_back(m);
        s.std.push_back(std::sqrt(std::max(sq / (n * plane) - m * m, 1e-12)));
    }
    return s;
}

/// Parse CIFAR-style records: label_bytes of labels (last one used) followed
/// by 3072 channel-planar pixel bytes.
void parse_cifar_file(const std::string& path, int label_bytes, RawImages& out) {
    std::vector<unsigned char> bytes = read_file(path);
    const size_t record = static_cast<size_t>(label_bytes) + 3072;
    if (bytes.empty() || bytes.size() % record != 0)
        throw FormatError("data: '" + path + "' has " + std::to_string(bytes.size()) +
                          " bytes, not a multiple of " + std::to_string(record) +
                          "; first partial record at byte offset " +
                          std::to_string(bytes.size() - bytes.size() % record));
    const size_t n = bytes.size() / record;
    for (size_t i = 0; i < n; ++i) {
        const unsigned char* rec = bytes.data() + i * record;
        out.labels.push_back(rec[label_bytes - 1]); // fine label for CIFAR-100
        out.pixels.insert(out.pixels.end(), rec + label_bytes, rec + record);
    }
    out.c = 3;
    out.h = 32;
    out.w = 32;
}

uint32_t read_be32(const unsigned char* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | p[3];
}

RawImages parse_mnist(const std::string& image_path, const std::string& label_path) {
    std::vector<unsigned char> img = read_file(image_path);
    std::vector<unsigned char> lab = read_file(label_path);
    if (img.size() < 16 || read_be32(img.data()) != 0x00000803u)
        throw FormatError("data: '" + image_path + "' is not an IDX3 image file");
    if (lab.size() < 8 || read_be32(lab.data()) != 0x00000801u)
        throw FormatError("data: '" + label_path + "' is not an IDX1 label file");
    const uint32_t n = read_be32(img.data() + 4);
    const uint32_t h = read_be32(img.data() + 8);
    const uint32_t w = read_be32(img.data() + 12);
    if (read_be32(lab.data() + 4) != n)
        throw FormatError("data: MNIST image/label counts differ");
    if (img.size() != 16 + static_cast<size_t>(n) * h * w)
        throw FormatError("data: '" + image_path + "' truncated at byte offset " +
                          std::to_string(img.size()));
    RawImages raw;
    raw.c = 1;
    raw.h = static_cast<int>(h);
    raw.w = static_cast<int>(w);
    raw.labels.assign(lab.begin() + 8, lab.end());
    raw.pixels.assign(img.begin() + 16, img.end());
    return raw;
}

} // namespace

NormStats cifar10_norm() { return {{0.4914, 0.4822, 0.4465}, {0.2470, 0.2435, 0.2616}}; }
NormStats cifar100_norm() { return {{0.5071, 0.4865, 0.4409}, {0.2673, 0.2564, 0.2762}}; }
NormStats mnist_norm() { return {{0.1307}, {0.3081}}; }

std::pair<Dataset, Dataset> load_cifar10(const std::string& dir, bool recompute_norm) {
    RawImages train, test;
    for (int i = 1; i <= 5; ++i)
        parse_cifar_file(dir + "/data_batch_" + std::to_string(i) + ".bin", 1, train);
    parse_cifar_file(dir + "/test_batch.bin", 1, test);
    const NormStats norm = recompute_norm ? compute_norm(train) : cifar10_norm();
    Dataset tr, te;
    tr.classes = te.classes = 10;
    tr.split = "train";
    te.split = "test";
    normalize_into(tr, train, norm);
    normalize_into(te, test, norm);
    return {std::move(tr), std::move(te)};
}

std::pair<Dataset, Dataset> load_cifar100(const std::string& dir, bool recompute_norm) {
    RawImages train, test;
    parse_cifar_file(dir + "/train.bin", 2, train);
    parse_cifar_file(dir + "/test.bin", 2, test);
    const NormStats norm = recompute_norm ? compute_norm(train) : cifar100_norm();
    Dataset tr, te;
    tr.classes = te.classes = 100;
    tr.split = "train";
    te.split = "test";
    normalize_into(tr, train, norm);
    normalize_into(te, test, norm);
    return {std::move(tr), std::move(te)};
}

std::pair<Dataset, Dataset> load_mnist(const std::string& dir, bool recompute_norm) {
    RawImages train = parse_mnist(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte");
    RawImages test = parse_mnist(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte");
    const NormStats norm = recompute_norm ? compute_norm(train) : mnist_norm();
    Dataset tr, te;
    tr.classes = te.classes = 10;
    tr.split = "train";
    te.split = "test";
    normalize_into(tr, train, norm);
    normalize_into(te, test, norm);
    return {std::move(tr), std::move(te)};
}

Dataset subset_first_per_class(const Dataset& d, int total) {
    if (d.classes < 1) throw ConfigError("subset: dataset has no classes");
    const int per = total / d.classes;
    if (per < 1) throw ConfigError("subset: total " + std::to_string(total) + " below class count");
    std::vector<int> taken(static_cast<size_t>(d.classes), 0);
    std::vector<int> keep;
    for (int i = 0; i < d.size(); ++i) {
        const int y = d.labels[static_cast<size_t>(i)];
        if (taken[static_cast<size_t>(y)] < per) {
            ++taken[static_cast<size_t>(y)];
            keep.push_back(i);
        }
    }
    Dataset out;
    out.classes = d.classes;
    out.split = d.split;
    const size_t stride = d.images.size() / static_cast<size_t>(d.size());
    out.images = TensorF({static_cast<int>(keep.size()), d.channels(), d.height(), d.width()});
    for (size_t j = 0; j < keep.size(); ++j) {
        std::copy_n(d.images.data() + static_cast<size_t>(keep[j]) * stride, stride,
                    out.images.data() + j * stride);
        out.labels.push_back(d.labels[static_cast<size_t>(keep[j])]);
    }
    return out;
}

namespace {

/// Class-mean blob model shared by synthetic() and the CIFAR renderer.
struct BlobModel {
    std::vector<TensorF> means; // per class [C,H,W]
    BlobModel(int classes, int c, int h, int w, uint64_t seed) {
        Rng root(seed);
        for (int k = 0; k < classes; ++k) {
            Rng r = root.fork("class" + std::to_string(k));
            means.push_back(TensorF::randn({c, h, w}, r));
        }
    }
};

} // namespace

Dataset synthetic(int classes, int n, int channels, int h, int w, double snr, uint64_t seed,
                  const std::string& split) {
    if (n < classes) throw ConfigError("synthetic: need n >= classes");
    BlobModel model(classes, channels, h, w, seed);
    Rng root(seed);
    Rng noise = root.fork("noise." + split);
    Dataset d;
    d.classes = classes;
    d.split = split;
    d.images = TensorF({n, channels, h, w});
    const size_t stride = static_cast<size_t>(channels) * h * w;
    for (int i = 0; i < n; ++i) {
        const int y = i % classes;
        d.labels.push_back(y);
        const TensorF& mu = model.means[static_cast<size_t>(y)];
        float* dst = d.images.data() + static_cast<size_t>(i) * stride;
        for (size_t p = 0; p < stride; ++p)
            dst[p] = static_cast<float>(snr * mu[p] + noise.gaussian());
    }
    return d;
}

void write_synthetic_cifar10(const std::string& dir, int train_n, int test_n, double snr,
                             uint64_t seed) {
    BlobModel model(10, 3, 32, 32, seed);
    Rng root(seed);
    auto render = [&](const std::string& path, int n, const std::string& tag) {
        Rng noise = root.fork("noise." + tag);
        std::ofstream out(path, std::ios::binary);
        if (!out) throw DataError("data: cannot write '" + path + "'");
        const size_t stride = 3 * 32 * 32;
        for (int i = 0; i < n; ++i) {
            const int y = i % 10;
            out.put(static_cast<char>(y));
            const TensorF& mu = model.means[static_cast<size_t>(y)];
            for (size_t p = 0; p < stride; ++p) {
                const double v = 128.0 + 32.0 * (snr * mu[p] + noise.gaussian());
                const int b = std::clamp(static_cast<int>(std::lround(v)), 0, 255);
                out.put(static_cast<char>(b));
            }
        }
    };
    const int per_batch = train_n / 5;
    for (int b = 1; b <= 5; ++b)
        render(dir + "/data_batch_" + std::to_string(b) + ".bin", per_batch,
               "train" + std::to_string(b));
    render(dir + "/test_batch.bin", test_n, "test");
}

TensorF crop_padded(const TensorF& img, int pad, int dy, int dx) {
    const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    TensorF out({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int sy = y + dy - pad, sx = x + dx - pad;
                out.at(ch, y, x) =
                    (sy >= 0 && sy < h && sx >= 0 && sx < w) ? img.at(ch, sy, sx) : 0.0f;
            }
    return out;
}

void flip_horizontal(TensorF& img) {
    const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w / 2; ++x)
                std::swap(img.at(ch, y, x), img.at(ch, y, w - 1 - x));
}

void augment(TensorF& batch, Rng& rng, int pad) {
    const int n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    const size_t stride = static_cast<size_t>(c) * h * w;
    for (int i = 0; i < n; ++i) {
        const int dy = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(2 * pad + 1)));
        const int dx = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(2 * pad + 1)));
        const bool flip = rng.bernoulli(0.5);
        TensorF img({c, h, w});
        std::copy_n(batch.data() + static_cast<size_t>(i) * stride, stride, img.data());
        img = crop_padded(img, pad, dy, dx);
        if (flip) flip_horizontal(img);
        std::copy_n(img.data(), stride, batch.data() + static_cast<size_t>(i) * stride);
    }
}

} // namespace obn
