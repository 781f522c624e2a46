#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "nst/augment.hpp"
#include "nst/error.hpp"
#include "nst/hash.hpp"
#include "nst/rng.hpp"
#include "nst/tensor.hpp"

namespace nst {

enum class StoreKind { Labeled, Unlabeled };

struct LabeledExample {
    Tensor image;           // [H,W,C], pixels in [0,1]
    std::size_t label = 0;  // in [0,K)
};

struct UnlabeledExample {
    Tensor image;
};

// Immutable-after-construction collection of same-shape images, optionally
// with class labels.
struct DatasetStore {
    StoreKind kind = StoreKind::Labeled;
    ImageShape image_shape;
    std::size_t class_count = 0;
    std::vector<Tensor> images;
    std::vector<std::size_t> labels;  // empty for unlabeled stores

    std::size_t size() const { return images.size(); }
    bool labeled() const { return kind == StoreKind::Labeled; }

    LabeledExample labeled_example(std::size_t i) const { return {images[i], labels[i]}; }
    UnlabeledExample unlabeled_example(std::size_t i) const { return {images[i]}; }

    void validate() const {
        if (labeled() && labels.size() != images.size())
            throw ShapeError("label count " + std::to_string(labels.size()) +
                             " != image count " + std::to_string(images.size()));
        for (std::size_t i = 0; i < images.size(); ++i) {
            if (images[i].shape != std::vector<std::size_t>{image_shape.h, image_shape.w,
                                                            image_shape.c})
                throw ShapeError("image " + std::to_string(i) + " shape mismatch");
        }
        for (std::size_t l : labels)
            if (l >= class_count)
                throw ConfigError("label " + std::to_string(l) + " out of range for K=" +
                                  std::to_string(class_count));
    }
};

inline std::string dataset_hash(const DatasetStore& s) {
    ContentHash h;
    h.update_pod(s.image_shape.h);
    h.update_pod(s.image_shape.w);
    h.update_pod(s.image_shape.c);
    h.update_pod(s.class_count);
    for (const auto& img : s.images) h.update(img.data);
    for (std::size_t l : s.labels) h.update_pod(l);
    return h.hex();
}

// ---------------------------------------------------------------------------
// IDX loading and writing (big-endian dims, ubyte payload)
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint32_t read_be32(std::istream& in, std::size_t offset, const char* what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4) throw ParseError(std::string("truncated ") + what, offset);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

// Loads an IDX image file plus optional label file. Pixel bytes are scaled
// to [0,1] (255 -> 1.0 exactly). Without labels the result is an unlabeled
// store. class_count 0 means "infer from the labels".
inline DatasetStore load_idx(const std::string& images_path,
                             const std::optional<std::string>& labels_path,
                             std::size_t class_count = 0) {
    std::ifstream in(images_path, std::ios::binary);
    if (!in) throw IoError("cannot open IDX image file", images_path);
    const std::uint32_t magic = detail::read_be32(in, 0, "image magic");
    if (magic != kIdxImageMagic)
        throw ParseError("bad IDX image magic 0x" + std::to_string(magic), 0);
    const std::uint32_t count = detail::read_be32(in, 4, "image count");
    const std::uint32_t rows = detail::read_be32(in, 8, "image rows");
    const std::uint32_t cols = detail::read_be32(in, 12, "image cols");

    DatasetStore store;
    store.image_shape = {rows, cols, 1};
    store.images.reserve(count);
    std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t offset = 16 + static_cast<std::size_t>(i) * buf.size();
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (static_cast<std::size_t>(in.gcount()) != buf.size())
            throw ParseError("truncated image data", offset);
        Tensor img({rows, cols, 1});
        for (std::size_t p = 0; p < buf.size(); ++p)
            img.data[p] = static_cast<double>(buf[p]) / 255.0;
        store.images.push_back(std::move(img));
    }

    if (!labels_path) {
        store.kind = StoreKind::Unlabeled;
        store.class_count = class_count;
        return store;
    }

    std::ifstream lin(*labels_path, std::ios::binary);
    if (!lin) throw IoError("cannot open IDX label file", *labels_path);
    const std::uint32_t lmagic = detail::read_be32(lin, 0, "label magic");
    if (lmagic != kIdxLabelMagic)
        throw ParseError("bad IDX label magic 0x" + std::to_string(lmagic), 0);
    const std::uint32_t lcount = detail::read_be32(lin, 4, "label count");
    if (lcount != count)
        throw ParseError("label count " + std::to_string(lcount) + " != image count " +
                             std::to_string(count),
                         4);
    store.labels.reserve(lcount);
    std::size_t max_label = 0;
    for (std::uint32_t i = 0; i < lcount; ++i) {
        char b;
        lin.read(&b, 1);
        if (lin.gcount() != 1) throw ParseError("truncated label data", 8 + i);
        const auto label = static_cast<std::size_t>(static_cast<unsigned char>(b));
        max_label = std::max(max_label, label);
        store.labels.push_back(label);
    }
    store.kind = StoreKind::Labeled;
    store.class_count = class_count ? class_count : max_label + 1;
    store.validate();
    return store;
}

inline void write_idx_images(const DatasetStore& store, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open IDX image file for writing", path);
    detail::write_be32(out, kIdxImageMagic);
    detail::write_be32(out, static_cast<std::uint32_t>(store.size()));
    detail::write_be32(out, static_cast<std::uint32_t>(store.image_shape.h));
    detail::write_be32(out, static_cast<std::uint32_t>(store.image_shape.w));
    for (const auto& img : store.images)
        for (double v : img.data) {
            const long q = std::lround(std::min(std::max(v, 0.0), 1.0) * 255.0);
            const char b = static_cast<char>(static_cast<unsigned char>(q));
            out.write(&b, 1);
        }
    if (!out) throw IoError("IDX image write failed", path);
}

inline void write_idx_labels(const DatasetStore& store, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open IDX label file for writing", path);
    detail::write_be32(out, kIdxLabelMagic);
    detail::write_be32(out, static_cast<std::uint32_t>(store.labels.size()));
    for (std::size_t l : store.labels) {
        const char b = static_cast<char>(static_cast<unsigned char>(l));
        out.write(&b, 1);
    }
    if (!out) throw IoError("IDX label write failed", path);
}

// ---------------------------------------------------------------------------
// Synthetic benchmark generation
// ---------------------------------------------------------------------------

// Each class is a fixed smooth random prototype; examples are shifted,
// pixel-noised copies. Out-of-domain unlabeled images come from K extra
// phantom-class prototypes the labeled set never sees.
struct SynthParams {
    std::size_t classes = 10;
    std::size_t per_class_labeled = 10;
    std::size_t unlabeled_total = 10000;
    std::size_t test_per_class = 200;
    double in_domain_fraction = 0.7;
    std::size_t image_side = 28;
    double noise_sigma = 0.65;
    long max_shift = 3;
    std::uint64_t seed = 0;

    void validate() const {
        if (classes == 0 || per_class_labeled == 0 || test_per_class == 0 || image_side == 0)
            throw ConfigError("synthetic dataset counts must be positive");
        if (!(in_domain_fraction >= 0.0 && in_domain_fraction <= 1.0))
            throw ConfigError("in_domain_fraction must be in [0,1]",
                              "data.in_domain_fraction");
    }
};

struct SynthDataset {
    DatasetStore labeled;
    DatasetStore unlabeled;
    DatasetStore test;
    std::vector<Tensor> prototypes;  // 2K prototypes; [K, 2K) are phantom classes
};

namespace detail {

// Prototypes are coarse random grids upsampled bilinearly: large smooth
// blobs whose class identity survives the few-pixel shifts both the
// generator and the augmentation policies apply.
inline Tensor smooth_prototype(std::size_t side, Rng& rng) {
    constexpr std::size_t cells = 6;
    double grid[cells][cells];
    for (auto& row : grid)
        for (double& v : row) v = rng.uniform();

    Tensor img({side, side, 1});
    const double scale = static_cast<double>(cells - 1) / static_cast<double>(side - 1);
    for (std::size_t r = 0; r < side; ++r)
        for (std::size_t c = 0; c < side; ++c) {
            const double gr = static_cast<double>(r) * scale;
            const double gc = static_cast<double>(c) * scale;
            const auto r0 = static_cast<std::size_t>(gr), c0 = static_cast<std::size_t>(gc);
            const std::size_t r1 = std::min(r0 + 1, cells - 1), c1 = std::min(c0 + 1, cells - 1);
            const double fr = gr - static_cast<double>(r0), fc = gc - static_cast<double>(c0);
            img.data[r * side + c] = grid[r0][c0] * (1 - fr) * (1 - fc) +
                                     grid[r1][c0] * fr * (1 - fc) +
                                     grid[r0][c1] * (1 - fr) * fc + grid[r1][c1] * fr * fc;
        }

    double lo = img.data[0], hi = img.data[0];
    for (double v : img.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi - lo;
    for (double& v : img.data) v = span > 0 ? (v - lo) / span : 0.5;
    return img;
}

inline Tensor synth_example(const Tensor& prototype, double sigma, long max_shift, Rng& rng) {
    const long dr = max_shift > 0
                        ? static_cast<long>(rng.below(2 * static_cast<std::uint64_t>(max_shift) + 1)) - max_shift
                        : 0;
    const long dc = max_shift > 0
                        ? static_cast<long>(rng.below(2 * static_cast<std::uint64_t>(max_shift) + 1)) - max_shift
                        : 0;
    Tensor img = translate(prototype, dr, dc);
    for (double& v : img.data) v = clamp01(v + rng.normal(0.0, sigma));
    return img;
}

}  // namespace detail

inline SynthDataset synth_generate(const SynthParams& p) {
    p.validate();
    SynthDataset out;
    Rng rng(derive_seed(p.seed, 0x5d5d));

    const std::size_t k = p.classes;
    out.prototypes.reserve(2 * k);
    for (std::size_t c = 0; c < 2 * k; ++c)
        out.prototypes.push_back(detail::smooth_prototype(p.image_side, rng));

    const ImageShape shape{p.image_side, p.image_side, 1};
    auto init_store = [&](DatasetStore& s, StoreKind kind) {
        s.kind = kind;
        s.image_shape = shape;
        s.class_count = k;
    };
    init_store(out.labeled, StoreKind::Labeled);
    init_store(out.test, StoreKind::Labeled);
    init_store(out.unlabeled, StoreKind::Unlabeled);

    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t i = 0; i < p.per_class_labeled; ++i) {
            out.labeled.images.push_back(
                detail::synth_example(out.prototypes[c], p.noise_sigma, p.max_shift, rng));
            out.labeled.labels.push_back(c);
        }
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t i = 0; i < p.test_per_class; ++i) {
            out.test.images.push_back(
                detail::synth_example(out.prototypes[c], p.noise_sigma, p.max_shift, rng));
            out.test.labels.push_back(c);
        }
    for (std::size_t i = 0; i < p.unlabeled_total; ++i) {
        const bool in_domain = rng.uniform() < p.in_domain_fraction;
        const std::size_t c = (in_domain ? 0 : k) + static_cast<std::size_t>(rng.below(k));
        out.unlabeled.images.push_back(
            detail::synth_example(out.prototypes[c], p.noise_sigma, p.max_shift, rng));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

// Disjoint uniform subsets with floor(fraction * n) elements each.
inline std::vector<DatasetStore> split(const DatasetStore& store,
                                       const std::vector<double>& fractions,
                                       std::uint64_t seed) {
    double total = 0.0;
    for (double f : fractions) {
        if (f < 0.0) throw ConfigError("split fraction must be >= 0");
        total += f;
    }
    if (total > 1.0 + 1e-12) throw ConfigError("split fractions sum to more than 1");

    std::vector<std::size_t> perm(store.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    Rng rng(derive_seed(seed, 0x517));
    rng.shuffle(perm);

    std::vector<DatasetStore> shards;
    std::size_t cursor = 0;
    for (double f : fractions) {
        const auto want = static_cast<std::size_t>(f * static_cast<double>(store.size()));
        DatasetStore shard;
        shard.kind = store.kind;
        shard.image_shape = store.image_shape;
        shard.class_count = store.class_count;
        for (std::size_t i = 0; i < want && cursor < perm.size(); ++i, ++cursor) {
            shard.images.push_back(store.images[perm[cursor]]);
            if (store.labeled()) shard.labels.push_back(store.labels[perm[cursor]]);
        }
        if (shard.images.empty())
            std::cerr << "[warn] split produced an empty shard (fraction " << f << ")\n";
        shards.push_back(std::move(shard));
    }
    return shards;
}

// ---------------------------------------------------------------------------
// Mixed labeled/pseudo batch stream
// ---------------------------------------------------------------------------

struct MixedBatch {
    std::vector<std::size_t> labeled_indices;
    std::vector<std::size_t> pseudo_indices;
    std::size_t epoch = 0;        // 0-based labeled epoch this batch belongs to
    double epoch_fraction = 0.0;  // fractional labeled epochs consumed before this batch
    int ratio = 0;
};

// Streams one labeled epoch at a time (shuffled, every example exactly once)
// while the pseudo side cycles independently with a reshuffle on wrap, so
// pseudo data receives ratio-times more passes relative to its size. Epoch
// accounting is driven by the labeled stream.
class MixedBatchStream {
public:
    MixedBatchStream(std::size_t labeled_size, std::size_t pseudo_size, std::size_t labeled_batch,
                     int ratio, std::size_t epochs, std::uint64_t seed)
        : labeled_size_(labeled_size),
          pseudo_size_(pseudo_size),
          labeled_batch_(labeled_batch),
          ratio_(ratio),
          epochs_(epochs),
          labeled_rng_(derive_seed(seed, 0xa1)),
          pseudo_rng_(derive_seed(seed, 0xa2)) {
        if (labeled_size_ == 0) throw ConfigError("labeled store is empty");
        if (labeled_batch_ == 0) throw ConfigError("labeled batch size must be positive");
        if (pseudo_size_ > 0) {
            if (ratio_ < 1) throw ConfigError("batch ratio must be a positive integer");
            const double cycles = static_cast<double>(ratio_) * static_cast<double>(labeled_size_) /
                                  static_cast<double>(pseudo_size_);
            if (cycles > 1e6)
                throw ConfigError("pseudo store would cycle more than 1e6 times per labeled epoch");
            pseudo_perm_.resize(pseudo_size_);
            for (std::size_t i = 0; i < pseudo_size_; ++i) pseudo_perm_[i] = i;
            pseudo_rng_.shuffle(pseudo_perm_);
        }
    }

    std::optional<MixedBatch> next() {
        if (epoch_ >= epochs_) return std::nullopt;
        if (cursor_ == 0) start_epoch();

        MixedBatch batch;
        batch.epoch = epoch_;
        batch.epoch_fraction = static_cast<double>(epoch_) +
                               static_cast<double>(cursor_) / static_cast<double>(labeled_size_);
        batch.ratio = ratio_;
        const std::size_t take = std::min(labeled_batch_, labeled_size_ - cursor_);
        for (std::size_t i = 0; i < take; ++i)
            batch.labeled_indices.push_back(labeled_perm_[cursor_ + i]);
        cursor_ += take;

        if (pseudo_size_ > 0)
            for (std::size_t i = 0; i < take * static_cast<std::size_t>(ratio_); ++i)
                batch.pseudo_indices.push_back(next_pseudo());

        if (cursor_ >= labeled_size_) {
            cursor_ = 0;
            ++epoch_;
        }
        return batch;
    }

private:
    void start_epoch() {
        labeled_perm_.resize(labeled_size_);
        for (std::size_t i = 0; i < labeled_size_; ++i) labeled_perm_[i] = i;
        labeled_rng_.shuffle(labeled_perm_);
    }

    std::size_t next_pseudo() {
        if (pseudo_cursor_ >= pseudo_size_) {
            pseudo_rng_.shuffle(pseudo_perm_);
            pseudo_cursor_ = 0;
        }
        return pseudo_perm_[pseudo_cursor_++];
    }

    std::size_t labeled_size_, pseudo_size_, labeled_batch_;
    int ratio_;
    std::size_t epochs_;
    Rng labeled_rng_, pseudo_rng_;
    std::vector<std::size_t> labeled_perm_, pseudo_perm_;
    std::size_t cursor_ = 0, pseudo_cursor_ = 0, epoch_ = 0;
};

// Stacks store images into an [N,H,W,C] batch tensor.
inline Tensor images_to_batch(const DatasetStore& store, const std::vector<std::size_t>& indices) {
    const ImageShape s = store.image_shape;
    Tensor batch({indices.size(), s.h, s.w, s.c});
    for (std::size_t i = 0; i < indices.size(); ++i)
        std::copy(store.images[indices[i]].data.begin(), store.images[indices[i]].data.end(),
                  batch.data.begin() + static_cast<std::ptrdiff_t>(i * s.numel()));
    return batch;
}

inline Tensor onehot_targets(const DatasetStore& store, const std::vector<std::size_t>& indices) {
    Tensor t({indices.size(), store.class_count});
    for (std::size_t i = 0; i < indices.size(); ++i) t.at2(i, store.labels[indices[i]]) = 1.0;
    return t;
}

}  // namespace nst
