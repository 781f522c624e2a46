#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "nst/data.hpp"
#include "nst/loss.hpp"
#include "nst/nn.hpp"
#include "nst/optim.hpp"
#include "nst/pseudo.hpp"
#include "nst/robust.hpp"

namespace nst {

enum class LabelMode { Soft, Hard };
enum class LossMode { ConcatMean, SeparateMeans };

inline const char* to_string(LabelMode m) { return m == LabelMode::Soft ? "soft" : "hard"; }
inline const char* to_string(LossMode m) {
    return m == LossMode::ConcatMean ? "concat_mean" : "separate_means";
}

inline LabelMode label_mode_from_string(const std::string& s) {
    if (s == "soft") return LabelMode::Soft;
    if (s == "hard") return LabelMode::Hard;
    throw ConfigError("unknown label mode '" + s + "'");
}

inline LossMode loss_mode_from_string(const std::string& s) {
    if (s == "concat_mean") return LossMode::ConcatMean;
    if (s == "separate_means") return LossMode::SeparateMeans;
    throw ConfigError("unknown loss mode '" + s + "'");
}

struct TrainConfig {
    std::string arch = "mlp-S";
    std::size_t labeled_batch = 2048;
    int ratio = 1;
    std::size_t epochs = 350;
    double base_lr = 0.128;
    double lr_decay = 0.97;
    double decay_interval_epochs = 0.0;  // 0 -> convention derived from epochs
    NoiseConfig noise;
    LabelMode label_mode = LabelMode::Soft;
    LossMode loss_mode = LossMode::ConcatMean;
    std::uint64_t seed = 0;
    std::optional<std::string> warm_start_from;
    // Shifts the LR schedule so short warm-start budgets end at the same
    // decayed rate as the full run.
    double lr_epoch_offset = 0.0;

    void validate() const {
        if (labeled_batch == 0) throw ConfigError("labeled_batch must be positive");
        if (ratio < 1) throw ConfigError("ratio must be a positive integer");
        if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
        if (!(lr_decay > 0.0 && lr_decay < 1.0)) throw ConfigError("lr_decay must be in (0,1)");
        if (decay_interval_epochs < 0.0)
            throw ConfigError("decay_interval_epochs must be >= 0");
        noise.validate();
    }
};

// Decay interval convention: 2.4 epochs for 350-epoch runs, 4.8 for
// 700-epoch runs; other budgets scale proportionally so the schedule always
// ends at the same decayed rate.
inline double resolved_decay_interval(const TrainConfig& c) {
    if (c.decay_interval_epochs > 0.0) return c.decay_interval_epochs;
    if (c.epochs == 700) return 4.8;
    return 2.4 * static_cast<double>(c.epochs) / 350.0;
}

// lr = base_lr * (labeled_batch / 2048) * decay^floor(epoch / interval).
// The batch-size factor is the linear scaling rule anchored at the 0.128 /
// 2048 operating point.
inline double lr_at(double epoch, const TrainConfig& c) {
    if (epoch < 0.0) throw ConfigError("epoch must be >= 0");
    const double interval = resolved_decay_interval(c);
    const double scaled = c.base_lr * static_cast<double>(c.labeled_batch) / 2048.0;
    const double k = std::floor((epoch + c.lr_epoch_offset) / interval);
    return scaled * std::pow(c.lr_decay, k);
}

struct EpochRecord {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_loss_labeled = 0.0;
    double train_loss_pseudo = 0.0;
    double val_accuracy = -1.0;  // -1 when no eval store was given
};

struct TrainResult {
    Model model;
    std::vector<EpochRecord> log;
    bool diverged = false;
};

namespace detail {

// Primary training stream: either a labeled store (one-hot targets) or a
// pseudo pool (soft/hard targets) when pretraining on pseudo data only.
struct PrimaryData {
    std::size_t size = 0;
    std::function<Tensor(const std::vector<std::size_t>&)> images;
    std::function<Tensor(const std::vector<std::size_t>&)> targets;
};

inline PrimaryData primary_from_store(const DatasetStore& store) {
    if (store.size() == 0) throw ConfigError("labeled store is empty");
    PrimaryData p;
    p.size = store.size();
    p.images = [&store](const std::vector<std::size_t>& idx) {
        return images_to_batch(store, idx);
    };
    p.targets = [&store](const std::vector<std::size_t>& idx) {
        return onehot_targets(store, idx);
    };
    return p;
}

inline PrimaryData primary_from_pool(const PseudoPool& pool, LabelMode mode) {
    if (pool.size() == 0) throw ConfigError("pseudo pool is empty");
    PrimaryData p;
    p.size = pool.size();
    p.images = [&pool](const std::vector<std::size_t>& idx) {
        return pool_images_to_batch(pool, idx);
    };
    p.targets = [&pool, mode](const std::vector<std::size_t>& idx) {
        return pool_targets(pool, idx, mode == LabelMode::Hard);
    };
    return p;
}

inline void augment_batch_rows(Tensor& batch, const ImageShape& shape,
                               const AugmentPolicy& policy, std::uint64_t run_seed,
                               std::size_t epoch, std::uint64_t& position) {
    const std::size_t n = batch.shape[0];
    for (std::size_t i = 0; i < n; ++i, ++position) {
        Tensor img({shape.h, shape.w, shape.c});
        std::copy(batch.data.begin() + static_cast<std::ptrdiff_t>(i * shape.numel()),
                  batch.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * shape.numel()),
                  img.data.begin());
        Rng rng(derive_seed(run_seed, 0xa09, epoch, position));
        img = policy.apply(img, rng);
        std::copy(img.data.begin(), img.data.end(),
                  batch.data.begin() + static_cast<std::ptrdiff_t>(i * shape.numel()));
    }
}

struct LoopSpec {
    PrimaryData primary;
    const PseudoPool* pool = nullptr;  // mixed student training when set
    LabelMode label_mode = LabelMode::Soft;
    ImageShape input;
    std::size_t class_count = 0;
    const DatasetStore* eval_store = nullptr;
    NoiseConfig eval_noise = NoiseConfig::clean();
};

// Shared training loop. One labeled (primary) epoch at a time; optional
// pseudo stream mixed at the configured ratio; per-epoch eval and
// divergence handling (abort, keep the last finite checkpoint).
inline TrainResult run_training(const LoopSpec& spec, const TrainConfig& config,
                                std::optional<Model> init) {
    config.validate();
    Model model = init ? std::move(*init)
                       : make_model(config.arch, spec.input, spec.class_count,
                                    derive_seed(config.seed, 0x11));
    if (model.input.numel() != spec.input.numel())
        throw ShapeError("model input does not match dataset image size");

    TrainResult result;
    result.model = model;  // epoch-0 checkpoint (also the 0-epoch result)
    if (config.epochs == 0) return result;

    const std::size_t pool_size = spec.pool ? spec.pool->size() : 0;
    MixedBatchStream stream(spec.primary.size, pool_size, config.labeled_batch,
                            spec.pool ? config.ratio : 1, config.epochs,
                            derive_seed(config.seed, 0x22));
    MomentumState momentum = MomentumState::zeros_like(model);
    Rng forward_rng(derive_seed(config.seed, 0x33));
    std::uint64_t augment_position = 0;

    std::size_t current_epoch = 0;
    double loss_labeled_sum = 0.0, loss_pseudo_sum = 0.0;
    std::size_t labeled_rows = 0, pseudo_rows = 0;
    double last_lr = lr_at(0.0, config);

    auto finish_epoch = [&](std::size_t epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = last_lr;
        rec.train_loss_labeled = labeled_rows ? loss_labeled_sum / labeled_rows : 0.0;
        rec.train_loss_pseudo = pseudo_rows ? loss_pseudo_sum / pseudo_rows : 0.0;
        if (spec.eval_store)
            rec.val_accuracy = eval_topk(model, *spec.eval_store, 1, spec.eval_noise);
        result.log.push_back(rec);
        result.model = model;
        loss_labeled_sum = loss_pseudo_sum = 0.0;
        labeled_rows = pseudo_rows = 0;
    };

    while (auto batch = stream.next()) {
        if (batch->epoch != current_epoch) {
            finish_epoch(current_epoch);
            current_epoch = batch->epoch;
        }
        const std::size_t n_l = batch->labeled_indices.size();
        const std::size_t n_p = batch->pseudo_indices.size();

        Tensor images = spec.primary.images(batch->labeled_indices);
        Tensor targets = spec.primary.targets(batch->labeled_indices);
        if (n_p > 0) {
            Tensor p_images = pool_images_to_batch(*spec.pool, batch->pseudo_indices);
            Tensor p_targets =
                pool_targets(*spec.pool, batch->pseudo_indices, spec.label_mode == LabelMode::Hard);
            Tensor all({n_l + n_p, spec.input.h, spec.input.w, spec.input.c});
            std::copy(images.data.begin(), images.data.end(), all.data.begin());
            std::copy(p_images.data.begin(), p_images.data.end(),
                      all.data.begin() + static_cast<std::ptrdiff_t>(images.numel()));
            Tensor all_t({n_l + n_p, spec.class_count});
            std::copy(targets.data.begin(), targets.data.end(), all_t.data.begin());
            std::copy(p_targets.data.begin(), p_targets.data.end(),
                      all_t.data.begin() + static_cast<std::ptrdiff_t>(targets.numel()));
            images = std::move(all);
            targets = std::move(all_t);
        }

        if (config.noise.enable_aug)
            augment_batch_rows(images, spec.input, config.noise.augment, config.seed,
                               batch->epoch, augment_position);

        // Row weights realize the loss mode: concat_mean averages over the
        // concatenated batch; separate_means averages each part on its own.
        std::vector<double> weights(n_l + n_p);
        if (n_p == 0 || config.loss_mode == LossMode::ConcatMean) {
            std::fill(weights.begin(), weights.end(), 1.0 / static_cast<double>(n_l + n_p));
        } else {
            std::fill(weights.begin(), weights.begin() + static_cast<std::ptrdiff_t>(n_l),
                      1.0 / static_cast<double>(n_l));
            std::fill(weights.begin() + static_cast<std::ptrdiff_t>(n_l), weights.end(),
                      1.0 / static_cast<double>(n_p));
        }

        last_lr = lr_at(batch->epoch_fraction, config);
        try {
            auto [logits, trace] = forward(model, images, config.noise, Mode::Train, forward_rng);
            auto lg = softmax_cross_entropy(logits, targets, weights);
            if (!std::isfinite(lg.loss)) throw NumericError("non-finite training loss");
            Grads grads = backward(model, trace, lg.d_logits);
            sgd_step(model, grads, last_lr, momentum);

            for (std::size_t i = 0; i < n_l; ++i) loss_labeled_sum += lg.row_ce[i];
            for (std::size_t i = n_l; i < n_l + n_p; ++i) loss_pseudo_sum += lg.row_ce[i];
            labeled_rows += n_l;
            pseudo_rows += n_p;
        } catch (const NumericError& e) {
            std::cerr << "[warn] training diverged at epoch " << batch->epoch << ": " << e.what()
                      << "; keeping last finite checkpoint\n";
            result.diverged = true;
            return result;
        }
    }
    finish_epoch(current_epoch);
    return result;
}

}  // namespace detail

// Teacher training: cross entropy on labeled images, with noise applied as
// configured (the noise config of a plain supervised baseline can simply
// disable everything).
inline TrainResult train_supervised(const DatasetStore& labeled, const TrainConfig& config,
                                    const DatasetStore* eval_store = nullptr,
                                    std::optional<Model> init = std::nullopt) {
    detail::LoopSpec spec;
    spec.primary = detail::primary_from_store(labeled);
    spec.input = labeled.image_shape;
    spec.class_count = labeled.class_count;
    spec.eval_store = eval_store;
    spec.eval_noise = config.noise;
    if (!init && config.warm_start_from) init = load_model(*config.warm_start_from);
    return detail::run_training(spec, config, std::move(init));
}

// Student training: mixed labeled+pseudo batches, all images noised per the
// config, equal-or-larger arch expected (warned, not enforced).
inline TrainResult train_student(const DatasetStore& labeled, const PseudoPool& pool,
                                 const std::string& student_arch, TrainConfig config,
                                 const DatasetStore* eval_store = nullptr,
                                 const std::string& teacher_arch = {},
                                 std::optional<Model> init = std::nullopt) {
    if (pool.size() == 0) throw ConfigError("pseudo pool is empty");
    config.arch = student_arch;
    if (!teacher_arch.empty() && arch_compare(student_arch, teacher_arch) < 0)
        std::cerr << "[warn] student arch " << student_arch << " is smaller than teacher "
                  << teacher_arch << "\n";
    detail::LoopSpec spec;
    spec.primary = detail::primary_from_store(labeled);
    spec.pool = &pool;
    spec.label_mode = config.label_mode;
    spec.input = labeled.image_shape;
    spec.class_count = labeled.class_count;
    spec.eval_store = eval_store;
    spec.eval_noise = config.noise;
    if (!init && config.warm_start_from) init = load_model(*config.warm_start_from);
    return detail::run_training(spec, config, std::move(init));
}

// Pretraining phase of the pretrain+finetune baseline: pseudo data only.
inline TrainResult train_on_pool_only(const PseudoPool& pool, TrainConfig config,
                                      const DatasetStore* eval_store = nullptr) {
    detail::LoopSpec spec;
    spec.primary = detail::primary_from_pool(pool, config.label_mode);
    spec.input = pool.image_shape;
    spec.class_count = pool.class_count;
    spec.eval_store = eval_store;
    spec.eval_noise = config.noise;
    return detail::run_training(spec, config, std::nullopt);
}

// ---------------------------------------------------------------------------
// Iterative controller
// ---------------------------------------------------------------------------

struct PseudoConfig {
    double tau = 0.3;
    std::size_t cap = 130000;
    bool balance_enabled = true;
    LabelMode label_mode = LabelMode::Soft;
};

struct IterationEntry {
    std::string student_arch;
    int ratio = 1;
    TrainConfig train;
};

struct IterationPlan {
    std::vector<IterationEntry> entries;

    void validate() const {
        if (entries.empty()) throw ConfigError("iteration plan must be non-empty", "plan");
    }
};

struct IterationOutcome {
    std::string role;  // "teacher" or "iteration-<i>"
    Model model;
    double accuracy = -1.0;
    std::vector<EpochRecord> log;
    std::size_t pool_total = 0;
    std::size_t pool_distinct = 0;
};

// Full pipeline: teacher, then per plan entry regenerate pseudo labels with
// the best model so far, refilter/rebalance, and train a fresh student from
// scratch.
inline std::vector<IterationOutcome> iterate_noisy_student(
    const DatasetStore& labeled, const DatasetStore& unlabeled, const TrainConfig& teacher_config,
    const PseudoConfig& pseudo_config, const IterationPlan& plan,
    const DatasetStore* eval_store = nullptr) {
    plan.validate();
    std::vector<IterationOutcome> outcomes;

    TrainResult teacher = train_supervised(labeled, teacher_config, eval_store);
    IterationOutcome t;
    t.role = "teacher";
    t.model = teacher.model;
    t.accuracy = eval_store ? eval_topk(teacher.model, *eval_store, 1, teacher_config.noise) : -1.0;
    t.log = teacher.log;
    outcomes.push_back(std::move(t));

    Model best_model = outcomes.back().model;
    double best_accuracy = outcomes.back().accuracy;
    std::string teacher_arch = teacher_config.arch;

    for (std::size_t it = 0; it < plan.entries.size(); ++it) {
        const IterationEntry& entry = plan.entries[it];
        PseudoPool pool = generate_pseudo_labels(best_model, unlabeled);
        pool = filter_confidence(pool, pseudo_config.tau);
        std::size_t total = pool.size(), distinct = pool.distinct_count();
        if (pseudo_config.balance_enabled) {
            Rng balance_rng(derive_seed(entry.train.seed, 0xba1, it));
            BalanceResult balanced = balance(pool, pseudo_config.cap, balance_rng);
            pool = std::move(balanced.pool);
            total = pool.size();
            distinct = pool.distinct_count();
        }

        TrainConfig student_config = entry.train;
        student_config.ratio = entry.ratio;
        student_config.label_mode = pseudo_config.label_mode;
        TrainResult student = train_student(labeled, pool, entry.student_arch, student_config,
                                            eval_store, teacher_arch);

        IterationOutcome o;
        o.role = "iteration-" + std::to_string(it + 1);
        o.model = student.model;
        o.accuracy =
            eval_store ? eval_topk(student.model, *eval_store, 1, student_config.noise) : -1.0;
        o.log = student.log;
        o.pool_total = total;
        o.pool_distinct = distinct;
        outcomes.push_back(std::move(o));

        teacher_arch = entry.student_arch;
        if (!eval_store || outcomes.back().accuracy >= best_accuracy) {
            best_model = outcomes.back().model;
            best_accuracy = outcomes.back().accuracy;
        }
    }
    return outcomes;
}

// ---------------------------------------------------------------------------
// Ablation baselines
// ---------------------------------------------------------------------------

struct PretrainFinetuneResult {
    Model best;
    double best_accuracy = -1.0;
    std::size_t best_finetune_epochs = 0;
    double pretrain_accuracy = -1.0;
    std::vector<std::pair<std::size_t, double>> grid;  // (finetune epochs, accuracy)
};

// Pretrains on pseudo data only, then finetunes on labeled data for each
// budget in the grid, returning the best by validation accuracy.
inline PretrainFinetuneResult pretrain_then_finetune(const PseudoPool& pool,
                                                     const DatasetStore& labeled,
                                                     const TrainConfig& config,
                                                     const std::vector<std::size_t>& finetune_grid,
                                                     const DatasetStore& eval_store) {
    if (finetune_grid.empty()) throw ConfigError("finetune epoch grid must be non-empty");
    TrainResult pretrained = train_on_pool_only(pool, config, &eval_store);

    PretrainFinetuneResult result;
    result.pretrain_accuracy = eval_topk(pretrained.model, eval_store, 1, config.noise);
    for (std::size_t epochs : finetune_grid) {
        double acc;
        Model candidate = pretrained.model;
        if (epochs > 0) {
            TrainConfig ft = config;
            ft.epochs = epochs;
            ft.decay_interval_epochs = 0.0;  // re-derive for the short budget
            ft.seed = derive_seed(config.seed, 0xf7, epochs);
            TrainResult r = train_supervised(labeled, ft, &eval_store, pretrained.model);
            candidate = r.model;
            acc = eval_topk(candidate, eval_store, 1, config.noise);
        } else {
            acc = result.pretrain_accuracy;
        }
        result.grid.emplace_back(epochs, acc);
        if (acc > result.best_accuracy) {
            result.best_accuracy = acc;
            result.best_finetune_epochs = epochs;
            result.best = std::move(candidate);
        }
    }
    return result;
}

struct WarmStartRow {
    std::size_t epochs = 0;
    bool from_teacher = false;
    double accuracy = -1.0;
};

// Students initialized from the teacher, trained for each epoch budget with
// the LR schedule offset so every budget decays to the same final rate; a
// from-scratch run at the full budget is reported alongside.
inline std::vector<WarmStartRow> warm_start_student(const Model& teacher,
                                                    const DatasetStore& labeled,
                                                    const PseudoPool& pool,
                                                    const TrainConfig& config,
                                                    const std::vector<std::size_t>& epochs_grid,
                                                    const DatasetStore& eval_store) {
    if (config.arch != teacher.arch_id)
        throw ConfigError("warm start requires student arch == teacher arch (" + teacher.arch_id +
                          ")");
    std::vector<WarmStartRow> rows;
    const double full = static_cast<double>(config.epochs);
    for (std::size_t budget : epochs_grid) {
        WarmStartRow row;
        row.epochs = budget;
        row.from_teacher = true;
        if (budget == 0) {
            row.accuracy = eval_topk(teacher, eval_store, 1, config.noise);
        } else {
            TrainConfig c = config;
            c.epochs = budget;
            c.decay_interval_epochs = resolved_decay_interval(config);
            c.lr_epoch_offset = full - static_cast<double>(budget);
            c.seed = derive_seed(config.seed, 0x35, budget);
            TrainResult r =
                train_student(labeled, pool, config.arch, c, &eval_store, teacher.arch_id, teacher);
            row.accuracy = eval_topk(r.model, eval_store, 1, config.noise);
        }
        rows.push_back(row);
    }
    TrainResult scratch = train_student(labeled, pool, config.arch, config, &eval_store);
    rows.push_back({config.epochs, false, eval_topk(scratch.model, eval_store, 1, config.noise)});
    return rows;
}

}  // namespace nst
