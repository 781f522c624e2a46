#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "nst/checkpoint.hpp"
#include "nst/data.hpp"
#include "nst/loss.hpp"
#include "nst/nn.hpp"

namespace nst {

struct PseudoLabeledExample {
    Tensor image;
    std::vector<double> soft;    // distribution over K classes
    std::size_t hard = 0;        // argmax(soft), ties to the lowest index
    double confidence = 0.0;     // soft[hard]
    std::size_t source_index = 0;  // index in the originating unlabeled store
};

struct PseudoPool {
    ImageShape image_shape;
    std::size_t class_count = 0;
    std::vector<PseudoLabeledExample> examples;

    std::size_t size() const { return examples.size(); }

    std::vector<std::size_t> per_class_counts() const {
        std::vector<std::size_t> counts(class_count, 0);
        for (const auto& e : examples) ++counts[e.hard];
        return counts;
    }

    // Number of distinct source images; equals size() iff nothing was
    // duplicated during balancing.
    std::size_t distinct_count() const {
        std::set<std::size_t> seen;
        for (const auto& e : examples) seen.insert(e.source_index);
        return seen.size();
    }
};

// One-hot with ties broken toward the lowest index.
inline std::vector<double> harden(const std::vector<double>& soft) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < soft.size(); ++j)
        if (soft[j] > soft[best]) best = j;
    std::vector<double> out(soft.size(), 0.0);
    out[best] = 1.0;
    return out;
}

struct PseudoGenOptions {
    // Table-8-style ablation: run the teacher noised (input augmentation
    // plus model noise in train mode) instead of the default clean pass.
    bool noised_teacher = false;
    NoiseConfig teacher_noise;
    std::uint64_t noise_seed = 0;
    std::size_t batch_size = 256;
};

// Pseudo labels from the teacher. The default path is an infer-mode forward
// with all noise disabled and no augmentation, so it is deterministic.
inline PseudoPool generate_pseudo_labels(const Model& teacher, const DatasetStore& unlabeled,
                                         const PseudoGenOptions& opt = {}) {
    if (unlabeled.image_shape.numel() != teacher.input.numel())
        throw ShapeError("unlabeled image size does not match teacher input");
    PseudoPool pool;
    pool.image_shape = unlabeled.image_shape;
    pool.class_count = teacher.class_count;
    pool.examples.reserve(unlabeled.size());

    Rng noise_rng(derive_seed(opt.noise_seed, 0x9e15));
    const NoiseConfig clean = NoiseConfig::clean();

    for (std::size_t begin = 0; begin < unlabeled.size(); begin += opt.batch_size) {
        const std::size_t end = std::min(begin + opt.batch_size, unlabeled.size());
        std::vector<std::size_t> indices(end - begin);
        std::iota(indices.begin(), indices.end(), begin);
        Tensor batch = images_to_batch(unlabeled, indices);
        if (opt.noised_teacher && opt.teacher_noise.enable_aug) {
            const ImageShape s = unlabeled.image_shape;
            for (std::size_t i = 0; i < indices.size(); ++i) {
                Tensor img({s.h, s.w, s.c});
                std::copy(batch.data.begin() + static_cast<std::ptrdiff_t>(i * s.numel()),
                          batch.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * s.numel()),
                          img.data.begin());
                Rng img_rng(derive_seed(opt.noise_seed, 0xa06, indices[i]));
                img = opt.teacher_noise.augment.apply(img, img_rng);
                std::copy(img.data.begin(), img.data.end(),
                          batch.data.begin() + static_cast<std::ptrdiff_t>(i * s.numel()));
            }
        }
        auto [logits, trace] =
            opt.noised_teacher
                ? forward(teacher, batch, opt.teacher_noise, Mode::Train, noise_rng)
                : forward(teacher, batch, clean, Mode::Infer, noise_rng);
        Tensor probs = softmax(logits);
        for (std::size_t i = 0; i < indices.size(); ++i) {
            PseudoLabeledExample e;
            e.image = unlabeled.images[indices[i]];
            e.soft.assign(probs.data.begin() + static_cast<std::ptrdiff_t>(i * pool.class_count),
                          probs.data.begin() +
                              static_cast<std::ptrdiff_t>((i + 1) * pool.class_count));
            e.hard = 0;
            for (std::size_t j = 1; j < pool.class_count; ++j)
                if (e.soft[j] > e.soft[e.hard]) e.hard = j;
            e.confidence = e.soft[e.hard];
            e.source_index = indices[i];
            pool.examples.push_back(std::move(e));
        }
    }
    return pool;
}

// Keeps exactly the examples with confidence strictly greater than tau,
// preserving order.
inline PseudoPool filter_confidence(const PseudoPool& pool, double tau) {
    if (!(tau >= 0.0 && tau < 1.0)) throw ConfigError("tau must be in [0,1)", "pseudo.tau");
    PseudoPool out;
    out.image_shape = pool.image_shape;
    out.class_count = pool.class_count;
    for (const auto& e : pool.examples)
        if (e.confidence > tau) out.examples.push_back(e);
    if (out.examples.empty() && !pool.examples.empty())
        std::cerr << "[warn] confidence filter removed every example (tau=" << tau << ")\n";
    return out;
}

struct BalanceResult {
    PseudoPool pool;
    std::vector<std::size_t> empty_classes;  // classes left with zero examples
};

// Per-class top-confidence truncation to cap (ties by original index) and
// uniformly random duplication of deficient classes up to cap. Every class
// ends at exactly cap or 0 examples.
inline BalanceResult balance(const PseudoPool& pool, std::size_t cap, Rng& rng) {
    if (cap < 1) throw ConfigError("balance cap must be >= 1", "pseudo.cap");
    std::vector<std::vector<std::size_t>> by_class(pool.class_count);
    for (std::size_t i = 0; i < pool.examples.size(); ++i)
        by_class[pool.examples[i].hard].push_back(i);

    std::vector<bool> keep(pool.examples.size(), true);
    for (auto& members : by_class)
        if (members.size() > cap) {
            std::vector<std::size_t> order = members;
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                return pool.examples[a].confidence > pool.examples[b].confidence;
            });
            for (std::size_t r = cap; r < order.size(); ++r) keep[order[r]] = false;
            members.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cap));
        }

    BalanceResult result;
    result.pool.image_shape = pool.image_shape;
    result.pool.class_count = pool.class_count;
    for (std::size_t i = 0; i < pool.examples.size(); ++i)
        if (keep[i]) result.pool.examples.push_back(pool.examples[i]);

    for (std::size_t c = 0; c < pool.class_count; ++c) {
        const auto& members = by_class[c];
        if (members.empty()) {
            result.empty_classes.push_back(c);
            continue;
        }
        for (std::size_t have = members.size(); have < cap; ++have) {
            const std::size_t pick = members[rng.below(members.size())];
            result.pool.examples.push_back(pool.examples[pick]);
        }
    }
    return result;
}

// Assigns examples to the interval containing their confidence. Intervals
// are [lo,hi); an interval ending at 1.0 also includes confidence 1.0.
inline std::vector<PseudoPool> bucket_by_confidence(
    const PseudoPool& pool, const std::vector<std::pair<double, double>>& intervals) {
    for (std::size_t a = 0; a < intervals.size(); ++a) {
        if (intervals[a].first >= intervals[a].second)
            throw ConfigError("confidence interval must have lo < hi");
        for (std::size_t b = a + 1; b < intervals.size(); ++b) {
            const double lo = std::max(intervals[a].first, intervals[b].first);
            const double hi = std::min(intervals[a].second, intervals[b].second);
            if (lo < hi) throw ConfigError("confidence intervals overlap");
        }
    }
    std::vector<PseudoPool> buckets(intervals.size());
    for (auto& b : buckets) {
        b.image_shape = pool.image_shape;
        b.class_count = pool.class_count;
    }
    for (const auto& e : pool.examples)
        for (std::size_t i = 0; i < intervals.size(); ++i) {
            const auto [lo, hi] = intervals[i];
            const bool in = e.confidence >= lo &&
                            (e.confidence < hi || (hi == 1.0 && e.confidence == 1.0));
            if (in) {
                buckets[i].examples.push_back(e);
                break;
            }
        }
    return buckets;
}

inline std::vector<std::pair<double, double>> decile_intervals() {
    std::vector<std::pair<double, double>> v;
    for (int i = 0; i < 10; ++i) v.emplace_back(i / 10.0, (i + 1) / 10.0);
    return v;
}

// ---------------------------------------------------------------------------
// Persistence: JSON manifest line + binary block
// ---------------------------------------------------------------------------

struct PoolMeta {
    std::string teacher_hash;
    double tau = 0.0;
    std::size_t cap = 0;
    std::uint64_t seed = 0;
};

inline void save_pool(const PseudoPool& pool, const PoolMeta& meta, const std::string& path) {
    nlohmann::json header;
    header["format"] = "nst-pseudo-pool-v1";
    header["teacher_hash"] = meta.teacher_hash;
    header["tau"] = meta.tau;
    header["cap"] = meta.cap;
    header["seed"] = meta.seed;
    header["image_shape"] = {pool.image_shape.h, pool.image_shape.w, pool.image_shape.c};
    header["class_count"] = pool.class_count;
    header["count"] = pool.size();
    header["distinct"] = pool.distinct_count();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open pool file for writing", path);
    out << header.dump() << '\n';
    auto write_u64 = [&](std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
    for (const auto& e : pool.examples) {
        out.write(reinterpret_cast<const char*>(e.image.data.data()),
                  static_cast<std::streamsize>(e.image.data.size() * sizeof(double)));
        out.write(reinterpret_cast<const char*>(e.soft.data()),
                  static_cast<std::streamsize>(e.soft.size() * sizeof(double)));
        out.write(reinterpret_cast<const char*>(&e.confidence), sizeof(double));
        write_u64(e.hard);
        write_u64(e.source_index);
    }
    if (!out) throw IoError("pool write failed", path);
}

inline std::pair<PseudoPool, PoolMeta> load_pool(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open pool file", path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("missing pool header", 0);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad pool header: ") + e.what(), 0);
    }
    if (header.value("format", "") != "nst-pseudo-pool-v1")
        throw ParseError("unknown pool format", 0);

    PseudoPool pool;
    auto shp = header.at("image_shape");
    pool.image_shape = {shp.at(0).get<std::size_t>(), shp.at(1).get<std::size_t>(),
                        shp.at(2).get<std::size_t>()};
    pool.class_count = header.at("class_count").get<std::size_t>();
    const auto count = header.at("count").get<std::size_t>();

    PoolMeta meta;
    meta.teacher_hash = header.at("teacher_hash").get<std::string>();
    meta.tau = header.at("tau").get<double>();
    meta.cap = header.at("cap").get<std::size_t>();
    meta.seed = header.at("seed").get<std::uint64_t>();

    const std::size_t pixels = pool.image_shape.numel();
    for (std::size_t i = 0; i < count; ++i) {
        PseudoLabeledExample e;
        e.image = Tensor({pool.image_shape.h, pool.image_shape.w, pool.image_shape.c});
        e.soft.resize(pool.class_count);
        const std::size_t pos = static_cast<std::size_t>(in.tellg());
        in.read(reinterpret_cast<char*>(e.image.data.data()),
                static_cast<std::streamsize>(pixels * sizeof(double)));
        in.read(reinterpret_cast<char*>(e.soft.data()),
                static_cast<std::streamsize>(pool.class_count * sizeof(double)));
        in.read(reinterpret_cast<char*>(&e.confidence), sizeof(double));
        std::uint64_t hard = 0, source = 0;
        in.read(reinterpret_cast<char*>(&hard), 8);
        in.read(reinterpret_cast<char*>(&source), 8);
        if (!in) throw ParseError("truncated pool example", pos);
        e.hard = hard;
        e.source_index = source;
        pool.examples.push_back(std::move(e));
    }
    return {std::move(pool), std::move(meta)};
}

inline std::string pool_hash(const PseudoPool& pool) {
    ContentHash h;
    h.update_pod(pool.class_count);
    for (const auto& e : pool.examples) {
        h.update(e.image.data);
        h.update(e.soft);
        h.update_pod(e.hard);
        h.update_pod(e.source_index);
    }
    return h.hex();
}

// Batch assembly for training: images plus soft or hardened targets.
inline Tensor pool_images_to_batch(const PseudoPool& pool,
                                   const std::vector<std::size_t>& indices) {
    const ImageShape s = pool.image_shape;
    Tensor batch({indices.size(), s.h, s.w, s.c});
    for (std::size_t i = 0; i < indices.size(); ++i)
        std::copy(pool.examples[indices[i]].image.data.begin(),
                  pool.examples[indices[i]].image.data.end(),
                  batch.data.begin() + static_cast<std::ptrdiff_t>(i * s.numel()));
    return batch;
}

inline Tensor pool_targets(const PseudoPool& pool, const std::vector<std::size_t>& indices,
                           bool hard_labels) {
    Tensor t({indices.size(), pool.class_count});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto& e = pool.examples[indices[i]];
        if (hard_labels) {
            t.at2(i, e.hard) = 1.0;
        } else {
            for (std::size_t j = 0; j < pool.class_count; ++j) t.at2(i, j) = e.soft[j];
        }
    }
    return t;
}

}  // namespace nst
