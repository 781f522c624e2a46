// Command-line front end: dataset preparation, teacher/student training,
// pseudo labeling, the iterative pipeline, robustness evaluation, and the
// ablation studies, all driven by a strict JSON config.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <string>

#include "nst/checkpoint.hpp"
#include "nst/config.hpp"
#include "nst/data.hpp"
#include "nst/pseudo.hpp"
#include "nst/report.hpp"
#include "nst/robust.hpp"
#include "nst/train.hpp"

namespace nst::cli {

struct LoadedData {
    DatasetStore labeled, unlabeled, test;
    nlohmann::json provenance;
};

LoadedData load_data(const Config& cfg) {
    LoadedData d;
    if (cfg.data.source == "synthetic") {
        SynthParams p = cfg.data.synth;
        p.seed = derive_seed(cfg.seed, 0xda7a);
        SynthDataset s = synth_generate(p);
        d.labeled = std::move(s.labeled);
        d.unlabeled = std::move(s.unlabeled);
        d.test = std::move(s.test);
        d.provenance = {{"source", "synthetic"},
                        {"seed", p.seed},
                        {"classes", p.classes},
                        {"per_class_labeled", p.per_class_labeled},
                        {"unlabeled_total", p.unlabeled_total},
                        {"test_per_class", p.test_per_class},
                        {"in_domain_fraction", p.in_domain_fraction},
                        {"image_side", p.image_side},
                        {"noise_sigma", p.noise_sigma},
                        {"max_shift", p.max_shift}};
    } else {
        const auto& paths = cfg.data.idx;
        d.labeled = load_idx(paths.train_images, paths.train_labels);
        d.test = load_idx(paths.test_images, paths.test_labels, d.labeled.class_count);
        d.unlabeled = load_idx(paths.unlabeled_images, std::nullopt, d.labeled.class_count);
        d.provenance = {{"source", "idx"},
                        {"train_images", paths.train_images},
                        {"train_labels", paths.train_labels},
                        {"test_images", paths.test_images},
                        {"test_labels", paths.test_labels},
                        {"unlabeled_images", paths.unlabeled_images}};
    }
    d.provenance["labeled_hash"] = dataset_hash(d.labeled);
    d.provenance["unlabeled_hash"] = dataset_hash(d.unlabeled);
    d.provenance["test_hash"] = dataset_hash(d.test);
    return d;
}

void register_data_inputs(RunManifest& manifest, const LoadedData& d) {
    manifest.add_input("labeled", d.provenance["labeled_hash"].get<std::string>());
    manifest.add_input("unlabeled", d.provenance["unlabeled_hash"].get<std::string>());
    manifest.add_input("test", d.provenance["test_hash"].get<std::string>());
}

nlohmann::json train_summary(const TrainResult& r, const Model& model, double accuracy) {
    return {{"arch", model.arch_id},
            {"param_count", model.param_count()},
            {"checkpoint_hash", model_hash(model)},
            {"epochs_completed", r.log.size()},
            {"diverged", r.diverged},
            {"final_val_accuracy", r.log.empty() ? -1.0 : r.log.back().val_accuracy},
            {"test_accuracy", accuracy}};
}

TrainConfig teacher_config(const Config& cfg) {
    TrainConfig t = cfg.teacher;
    t.seed = derive_seed(cfg.seed, 0x7e);
    return t;
}

TrainConfig student_config(const Config& cfg) {
    TrainConfig s = cfg.student;
    s.seed = derive_seed(cfg.seed, 0x5d);
    s.label_mode = cfg.pseudo.base.label_mode;
    return s;
}

int cmd_train_teacher(const Config& cfg, const std::string& out) {
    ensure_out_dir(out);
    RunManifest manifest("train-teacher", cfg);
    LoadedData d = load_data(cfg);
    register_data_inputs(manifest, d);

    TrainConfig tc = teacher_config(cfg);
    TrainResult r = train_supervised(d.labeled, tc, &d.test);
    const double acc = eval_topk(r.model, d.test, 1, tc.noise);

    save_model(r.model, out + "/teacher.ckpt");
    write_metrics_jsonl(out + "/metrics.jsonl", r.log);
    write_json_atomic(out + "/summary.json", train_summary(r, r.model, acc));
    write_json_atomic(out + "/resolved_config.json", config_to_json(cfg));
    write_json_atomic(out + "/data.json", d.provenance);
    for (const char* f : {"teacher.ckpt", "metrics.jsonl", "summary.json"})
        manifest.add_output(f);
    manifest.write(out);
    std::cout << "teacher " << tc.arch << " test top-1 " << acc << "\n";
    return 0;
}

int cmd_pseudo_label(const Config& cfg, const std::string& out, const std::string& teacher_path) {
    ensure_out_dir(out);
    RunManifest manifest("pseudo-label", cfg);
    LoadedData d = load_data(cfg);
    register_data_inputs(manifest, d);

    Model teacher = load_model(teacher_path);
    manifest.add_input("teacher", model_hash(teacher));

    PseudoGenOptions opt;
    if (cfg.pseudo.noised_teacher) {
        opt.noised_teacher = true;
        opt.teacher_noise = cfg.teacher.noise;
        opt.noise_seed = derive_seed(cfg.seed, 0x9d);
    }
    PseudoPool pool = generate_pseudo_labels(teacher, d.unlabeled, opt);

    PoolMeta meta{model_hash(teacher), /*tau=*/-1.0, /*cap=*/0, cfg.seed};
    save_pool(pool, meta, out + "/pool.bin");
    nlohmann::json counts = pool.per_class_counts();
    write_json_atomic(out + "/summary.json", {{"count", pool.size()},
                                              {"distinct", pool.distinct_count()},
                                              {"per_class_counts", counts},
                                              {"noised_teacher", cfg.pseudo.noised_teacher},
                                              {"pool_hash", pool_hash(pool)}});
    write_json_atomic(out + "/resolved_config.json", config_to_json(cfg));
    manifest.add_output("pool.bin");
    manifest.write(out);
    std::cout << "pseudo pool: " << pool.size() << " examples\n";
    return 0;
}

int cmd_filter_balance(const Config& cfg, const std::string& out, const std::string& pool_path) {
    ensure_out_dir(out);
    RunManifest manifest("filter-balance", cfg);
    auto [pool, meta] = load_pool(pool_path);
    manifest.add_input("pool", pool_hash(pool));

    const std::size_t before = pool.size();
    PseudoPool filtered = filter_confidence(pool, cfg.pseudo.base.tau);
    const std::size_t after_filter = filtered.size();

    nlohmann::json summary = {{"input_count", before},
                              {"after_filter", after_filter},
                              {"tau", cfg.pseudo.base.tau},
                              {"balance", cfg.pseudo.base.balance_enabled}};
    if (cfg.pseudo.base.balance_enabled) {
        Rng rng(derive_seed(cfg.seed, 0xba1));
        BalanceResult r = balance(filtered, cfg.pseudo.base.cap, rng);
        filtered = std::move(r.pool);
        summary["cap"] = cfg.pseudo.base.cap;
        summary["empty_classes"] = r.empty_classes;
    }
    summary["total"] = filtered.size();
    summary["distinct"] = filtered.distinct_count();
    summary["per_class_counts"] = filtered.per_class_counts();

    meta.tau = cfg.pseudo.base.tau;
    meta.cap = cfg.pseudo.base.cap;
    save_pool(filtered, meta, out + "/pool.bin");
    write_json_atomic(out + "/summary.json", summary);
    write_json_atomic(out + "/resolved_config.json", config_to_json(cfg));
    manifest.add_output("pool.bin");
    manifest.write(out);
    std::cout << "filter+balance: " << before << " -> " << after_filter << " -> "
              << filtered.size() << " (distinct " << filtered.distinct_count() << ")\n";
    return 0;
}

int cmd_train_student(const Config& cfg, const std::string& out, const std::string& pool_path,
                      const std::string& teacher_path) {
    ensure_out_dir(out);
    RunManifest manifest("train-student", cfg);
    LoadedData d = load_data(cfg);
    register_data_inputs(manifest, d);
    auto [pool, meta] = load_pool(pool_path);
    manifest.add_input("pool", pool_hash(pool));

    std::string teacher_arch;
    if (!teacher_path.empty()) {
        Model teacher = load_model(teacher_path);
        teacher_arch = teacher.arch_id;
        manifest.add_input("teacher", model_hash(teacher));
    }

    TrainConfig sc = student_config(cfg);
    TrainResult r = train_student(d.labeled, pool, cfg.student.arch, sc, &d.test, teacher_arch);
    const double acc = eval_topk(r.model, d.test, 1, sc.noise);

    save_model(r.model, out + "/student.ckpt");
    write_metrics_jsonl(out + "/metrics.jsonl", r.log);
    write_json_atomic(out + "/summary.json", train_summary(r, r.model, acc));
    write_json_atomic(out + "/resolved_config.json", config_to_json(cfg));
    for (const char* f : {"student.ckpt", "metrics.jsonl", "summary.json"})
        manifest.add_output(f);
    manifest.write(out);
    std::cout << "student " << cfg.student.arch << " test top-1 " << acc << "\n";
    return 0;
}

int cmd_iterate(const Config& cfg, const std::string& out) {
    ensure_out_dir(out);
    RunManifest manifest("iterate", cfg);
    LoadedData d = load_data(cfg);
    register_data_inputs(manifest, d);

    IterationPlan plan;
    for (std::size_t i = 0; i < cfg.plan.size(); ++i) {
        IterationEntry e;
        e.student_arch = cfg.plan[i].arch;
        e.ratio = cfg.plan[i].ratio;
        e.train = cfg.plan[i].train;
        e.train.seed = derive_seed(cfg.seed, 0x17, i);
        plan.entries.push_back(std::move(e));
    }

    auto outcomes = iterate_noisy_student(d.labeled, d.unlabeled, teacher_config(cfg),
                                          cfg.pseudo.base, plan, &d.test);

    nlohmann::json rows = nlohmann::json::array();
    for (const auto& o : outcomes) {
        const std::string ckpt = o.role + ".ckpt";
        save_model(o.model, out + "/" + ckpt);
        write_metrics_jsonl(out + "/metrics-" + o.role + ".jsonl", o.log);
        rows.push_back({{"role", o.role},
                        {"arch", o.model.arch_id},
                        {"test_accuracy", o.accuracy},
                        {"pool_total", o.pool_total},
                        {"pool_distinct", o.pool_distinct},
                        {"checkpoint", ckpt},
                        {"checkpoint_hash", model_hash(o.model)}});
        manifest.add_output(ckpt);
        std::cout << o.role << " (" << o.model.arch_id << ") test top-1 " << o.accuracy << "\n";
    }
    write_json_atomic(out + "/summary.json", {{"iterations", rows}});
    write_json_atomic(out + "/resolved_config.json", config_to_json(cfg));
    manifest.add_output("summary.json");
    manifest.write(out);
    return 0;
}

int cmd_eval(const Config& cfg, const std::string& out, const std::string& model_path) {
    ensure_out_dir(out);
    RunManifest manifest("eval", cfg);
    LoadedData d = load_data(cfg);
    register_data_inputs(manifest, d);
    Model model = load_model(model_path);
    manifest.add_input("model", model_hash(model));

    nlohmann::json topk = nlohmann::json::object();
    for (std::size_t k : cfg.eval.topk) {
        const double acc = eval_topk(model, d.test, k, cfg.student.noise);
        topk["top-" + std::to_string(k)] = acc;
        std::cout << "top-" << k << " accuracy " << acc << "\n";
    }
    write_json_atomic(out + "/summary.json",
                      {{"model_hash", model_hash(model)}, {"accuracy", topk}});
    write_json_atomic(out + "/resolved_config.json", config_to_json(cfg));
    manifest.add_output("summary.json");
    manifest.write(out);
    return 0;
}

nlohmann::json error_matrix_json(const ErrorMatrix& em) {
    nlohmann::json rows = nlohmann::json::object();
    for (std::size_t ki = 0; ki < em.kinds.size(); ++ki)
        rows[to_string(em.kinds[ki])] = em.errors[ki];
    return rows;
}

nlohmann::json corruption_tables_json(const EvalConfig& eval) {
    const CorruptionTables& t = corruption_tables();
    auto arr = [](auto const& a) { return std::vector<double>(std::begin(a), std::end(a)); };
    nlohmann::json j = {{"gaussian-noise/sigma", arr(t.gaussian_sigma)},
                        {"shot-noise/scale", arr(t.shot_scale)},
                        {"defocus-blur/radius", arr(t.defocus_radius)},
                        {"motion-blur/length", arr(t.motion_length)},
                        {"snow-lite/fraction", arr(t.snow_fraction)},
                        {"snow-lite/alpha", t.snow_alpha},
                        {"fog-lite/blend", arr(t.fog_blend)},
                        {"fog-lite/plateau", t.fog_plateau},
                        {"brightness/delta", arr(t.brightness_delta)},
                        {"contrast/scale", arr(t.contrast_scale)},
                        {"pixelate/block", arr(t.pixelate_block)},
                        {"jpeg-lite/quant", arr(t.jpeg_quant)}};
    (void)eval;
    return j;
}

int cmd_corrupt_eval(const Config& cfg, const std::string& out, const std::string& model_path,
                     const std::string& baseline_path) {
    ensure_out_dir(out);
    RunManifest manifest("corrupt-eval", cfg);
    LoadedData d = load_data(cfg);
    register_data_inputs(manifest, d);
    Model model = load_model(model_path);
    const std::string bpath =
        baseline_path.empty() ? cfg.eval.baseline_checkpoint : baseline_path;
    if (bpath.empty()) throw ConfigError("corrupt-eval needs a baseline checkpoint");
    Model baseline = load_model(bpath);
    manifest.add_input("model", model_hash(model));
    manifest.add_input("baseline", model_hash(baseline));

    const std::uint64_t seed = derive_seed(cfg.seed, 0xce);
    ErrorMatrix me = corruption_error_matrix(model, d.test, cfg.eval.corruption_kinds,
                                             cfg.eval.severities, seed, cfg.student.noise);
    ErrorMatrix be = corruption_error_matrix(baseline, d.test, cfg.eval.corruption_kinds,
                                             cfg.eval.severities, seed);
    const double score = mce(me, be);

    std::string csv = "kind,severity,model_error,baseline_error\n";
    for (std::size_t ki = 0; ki < me.kinds.size(); ++ki)
        for (std::size_t si = 0; si < me.severities.size(); ++si)
            csv += csv_line({to_string(me.kinds[ki]), std::to_string(me.severities[si]),
                             std::to_string(me.errors[ki][si]), std::to_string(be.errors[ki][si])});
    write_text_atomic(out + "/corruption_errors.csv", csv);
    write_json_atomic(out + "/report.json",
                      {{"baseline", model_hash(baseline)},
                       {"model", model_hash(model)},
                       {"mce", score},
                       {"model_errors", error_matrix_json(me)},
                       {"baseline_errors", error_matrix_json(be)},
                       {"severity_tables", corruption_tables_json(cfg.eval)}});
    write_json_atomic(out + "/resolved_config.json", config_to_json(cfg));
    manifest.add_output("report.json");
    manifest.write(out);
    std::cout << "mCE " << score << " (baseline = 100)\n";
    return 0;
}

std::vector<PerturbationSequence> build_sequences(const DatasetStore& test,
                                                  PerturbationKind kind, std::size_t count,
                                                  std::size_t frames, std::uint64_t seed) {
    std::vector<PerturbationSequence> seqs;
    const std::size_t n = std::min(count, test.size());
    for (std::size_t i = 0; i < n; ++i)
        seqs.push_back(perturb_sequence(test.images[i], kind, frames, derive_seed(seed, i)));
    return seqs;
}

int cmd_perturb_eval(const Config& cfg, const std::string& out, const std::string& model_path,
                     const std::string& baseline_path) {
    ensure_out_dir(out);
    RunManifest manifest("perturb-eval", cfg);
    LoadedData d = load_data(cfg);
    register_data_inputs(manifest, d);
    Model model = load_model(model_path);
    const std::string bpath =
        baseline_path.empty() ? cfg.eval.baseline_checkpoint : baseline_path;
    if (bpath.empty()) throw ConfigError("perturb-eval needs a baseline checkpoint");
    Model baseline = load_model(bpath);
    manifest.add_input("model", model_hash(model));
    manifest.add_input("baseline", model_hash(baseline));

    std::vector<double> model_fp, baseline_fp;
    nlohmann::json per_kind = nlohmann::json::object();
    for (PerturbationKind kind : cfg.eval.perturb_kinds) {
        auto seqs = build_sequences(d.test, kind, cfg.eval.perturb_sequences,
                                    cfg.eval.perturb_frames, derive_seed(cfg.seed, 0xfe));
        model_fp.push_back(flip_probability(model, seqs, cfg.student.noise));
        baseline_fp.push_back(flip_probability(baseline, seqs));
        per_kind[to_string(kind)] = {{"model", model_fp.back()},
                                     {"baseline", baseline_fp.back()}};
    }
    const double score = mfr(model_fp, baseline_fp);
    write_json_atomic(out + "/report.json", {{"baseline", model_hash(baseline)},
                                             {"model", model_hash(model)},
                                             {"mfr", score},
                                             {"flip_probabilities", per_kind},
                                             {"frames", cfg.eval.perturb_frames},
                                             {"sequences_per_kind", cfg.eval.perturb_sequences}});
    write_json_atomic(out + "/resolved_config.json", config_to_json(cfg));
    manifest.add_output("report.json");
    manifest.write(out);
    std::cout << "mFR " << score << " (baseline = 100)\n";
    return 0;
}

int cmd_attack_eval(const Config& cfg, const std::string& out, const std::string& model_path) {
    ensure_out_dir(out);
    RunManifest manifest("attack-eval", cfg);
    LoadedData d = load_data(cfg);
    register_data_inputs(manifest, d);
    Model model = load_model(model_path);
    manifest.add_input("model", model_hash(model));

    DatasetStore subset = d.test;
    if (cfg.eval.attack_examples < subset.size()) {
        subset.images.resize(cfg.eval.attack_examples);
        subset.labels.resize(cfg.eval.attack_examples);
    }

    std::string csv = "eps,fgsm_accuracy,pgd_accuracy\n";
    nlohmann::json rows = nlohmann::json::array();
    for (double eps : cfg.eval.attack_eps) {
        const double fa =
            attack_accuracy(model, subset, eps, AttackKind::Fgsm, 0, 0.0, cfg.student.noise);
        const double pa = attack_accuracy(model, subset, eps, AttackKind::Pgd, cfg.eval.pgd_steps,
                                          cfg.eval.pgd_step_size, cfg.student.noise);
        rows.push_back({{"eps", eps}, {"fgsm_accuracy", fa}, {"pgd_accuracy", pa}});
        csv += csv_line({std::to_string(eps), std::to_string(fa), std::to_string(pa)});
        std::cout << "eps " << eps << ": fgsm " << fa << " pgd " << pa << "\n";
    }
    write_text_atomic(out + "/attack_accuracy.csv", csv);
    write_json_atomic(out + "/report.json",
                      {{"model", model_hash(model)},
                       {"examples", subset.size()},
                       {"pgd_steps", cfg.eval.pgd_steps},
                       {"rows", rows}});
    write_json_atomic(out + "/resolved_config.json", config_to_json(cfg));
    manifest.add_output("report.json");
    manifest.write(out);
    return 0;
}

// ---------------------------------------------------------------------------
// Ablation studies
// ---------------------------------------------------------------------------

struct StudyContext {
    const Config& cfg;
    LoadedData data;
    TrainResult teacher;
    double teacher_accuracy = 0.0;
    PseudoPool pool;  // filtered + balanced with the config's settings
};

PseudoPool make_pool(const Config& cfg, const Model& teacher, const DatasetStore& unlabeled,
                     std::uint64_t salt, bool balance_enabled = true) {
    PseudoPool pool = generate_pseudo_labels(teacher, unlabeled);
    pool = filter_confidence(pool, cfg.pseudo.base.tau);
    if (balance_enabled && cfg.pseudo.base.balance_enabled) {
        Rng rng(derive_seed(cfg.seed, 0xba1, salt));
        BalanceResult r = balance(pool, cfg.pseudo.base.cap, rng);
        pool = std::move(r.pool);
    }
    return pool;
}

StudyContext study_context(const Config& cfg) {
    StudyContext ctx{cfg, load_data(cfg), {}, 0.0, {}};
    TrainConfig tc = teacher_config(cfg);
    ctx.teacher = train_supervised(ctx.data.labeled, tc, nullptr);
    ctx.teacher_accuracy = eval_topk(ctx.teacher.model, ctx.data.test, 1, tc.noise);
    ctx.pool = make_pool(cfg, ctx.teacher.model, ctx.data.unlabeled, 0);
    return ctx;
}

double run_student_variant(const StudyContext& ctx, TrainConfig sc, const std::string& arch,
                           const PseudoPool& pool) {
    TrainResult r =
        train_student(ctx.data.labeled, pool, arch, sc, nullptr, ctx.cfg.teacher.arch);
    return eval_topk(r.model, ctx.data.test, 1, sc.noise);
}

nlohmann::json study_noise(const Config& cfg) {
    StudyContext ctx = study_context(cfg);
    TrainConfig sc = student_config(cfg);

    nlohmann::json rows = nlohmann::json::array();
    rows.push_back({{"name", "teacher (supervised)"}, {"accuracy", ctx.teacher_accuracy}});

    double full = run_student_variant(ctx, sc, cfg.student.arch, ctx.pool);
    rows.push_back({{"name", "noisy student"}, {"accuracy", full}});

    TrainConfig no_aug = sc;
    no_aug.noise.enable_aug = false;
    rows.push_back({{"name", "student w/o Aug"},
                    {"accuracy", run_student_variant(ctx, no_aug, cfg.student.arch, ctx.pool)}});

    TrainConfig no_noise = sc;
    no_noise.noise.enable_aug = false;
    no_noise.noise.enable_sd = false;
    no_noise.noise.enable_dropout = false;
    rows.push_back(
        {{"name", "student w/o Aug, SD, Dropout"},
         {"accuracy", run_student_variant(ctx, no_noise, cfg.student.arch, ctx.pool)}});

    PseudoGenOptions noised;
    noised.noised_teacher = true;
    noised.teacher_noise = cfg.teacher.noise;
    noised.noise_seed = derive_seed(cfg.seed, 0x9d);
    PseudoPool npool = generate_pseudo_labels(ctx.teacher.model, ctx.data.unlabeled, noised);
    npool = filter_confidence(npool, cfg.pseudo.base.tau);
    if (cfg.pseudo.base.balance_enabled) {
        Rng rng(derive_seed(cfg.seed, 0xba1, 99));
        npool = balance(npool, cfg.pseudo.base.cap, rng).pool;
    }
    rows.push_back({{"name", "teacher w. Aug, SD, Dropout"},
                    {"accuracy", run_student_variant(ctx, sc, cfg.student.arch, npool)}});
    return rows;
}

nlohmann::json study_teacher_capacity(const Config& cfg) {
    LoadedData d = load_data(cfg);
    nlohmann::json rows = nlohmann::json::array();
    for (const std::string& teacher_arch : {cfg.teacher.arch, cfg.student.arch}) {
        TrainConfig tc = teacher_config(cfg);
        tc.arch = teacher_arch;
        TrainResult teacher = train_supervised(d.labeled, tc, nullptr);
        const double tacc = eval_topk(teacher.model, d.test, 1, tc.noise);
        PseudoPool pool = make_pool(cfg, teacher.model, d.unlabeled, 1);
        TrainConfig sc = student_config(cfg);
        TrainResult student =
            train_student(d.labeled, pool, cfg.teacher.arch, sc, nullptr, teacher_arch);
        rows.push_back({{"teacher_arch", teacher_arch},
                        {"teacher_accuracy", tacc},
                        {"student_arch", cfg.teacher.arch},
                        {"student_accuracy", eval_topk(student.model, d.test, 1, sc.noise)}});
    }
    return rows;
}

nlohmann::json study_unlabeled_size(const Config& cfg) {
    StudyContext ctx = study_context(cfg);
    nlohmann::json rows = nlohmann::json::array();
    rows.push_back({{"fraction", 0.0},
                    {"name", "supervised baseline"},
                    {"accuracy", ctx.teacher_accuracy}});
    for (double frac : {1.0 / 128, 1.0 / 64, 1.0 / 32, 1.0 / 16, 1.0 / 4, 1.0}) {
        DatasetStore shard =
            frac < 1.0 ? split(ctx.data.unlabeled, {frac}, derive_seed(cfg.seed, 0x51))[0]
                       : ctx.data.unlabeled;
        if (shard.size() == 0) continue;
        PseudoPool pool = make_pool(cfg, ctx.teacher.model, shard, 2);
        if (pool.size() == 0) continue;
        TrainConfig sc = student_config(cfg);
        rows.push_back({{"fraction", frac},
                        {"pool_size", pool.size()},
                        {"accuracy", run_student_variant(ctx, sc, cfg.student.arch, pool)}});
    }
    return rows;
}

nlohmann::json study_soft_hard_buckets(const Config& cfg) {
    StudyContext ctx = study_context(cfg);
    PseudoPool unfiltered = generate_pseudo_labels(ctx.teacher.model, ctx.data.unlabeled);
    auto buckets = bucket_by_confidence(unfiltered, decile_intervals());
    nlohmann::json rows = nlohmann::json::array();
    rows.push_back({{"name", "supervised baseline"}, {"accuracy", ctx.teacher_accuracy}});
    for (std::size_t b = 0; b < buckets.size(); ++b) {
        if (buckets[b].size() < 10) continue;
        for (LabelMode mode : {LabelMode::Soft, LabelMode::Hard}) {
            TrainConfig sc = student_config(cfg);
            sc.label_mode = mode;
            rows.push_back(
                {{"bucket", b},
                 {"bucket_lo", b / 10.0},
                 {"bucket_size", buckets[b].size()},
                 {"label_mode", to_string(mode)},
                 {"accuracy", run_student_variant(ctx, sc, cfg.student.arch, buckets[b])}});
        }
    }
    return rows;
}

nlohmann::json study_student_capacity(const Config& cfg) {
    StudyContext ctx = study_context(cfg);
    nlohmann::json rows = nlohmann::json::array();
    for (const std::string& arch : {cfg.teacher.arch, cfg.student.arch}) {
        TrainConfig sc = student_config(cfg);
        rows.push_back({{"student_arch", arch},
                        {"teacher_accuracy", ctx.teacher_accuracy},
                        {"accuracy", run_student_variant(ctx, sc, arch, ctx.pool)}});
    }
    return rows;
}

nlohmann::json study_balancing(const Config& cfg) {
    StudyContext ctx = study_context(cfg);
    nlohmann::json rows = nlohmann::json::array();
    TrainConfig sc = student_config(cfg);
    rows.push_back({{"name", "with balancing"},
                    {"pool_size", ctx.pool.size()},
                    {"accuracy", run_student_variant(ctx, sc, cfg.student.arch, ctx.pool)}});
    PseudoPool unbalanced = make_pool(cfg, ctx.teacher.model, ctx.data.unlabeled, 3,
                                      /*balance_enabled=*/false);
    rows.push_back(
        {{"name", "w/o balancing"},
         {"pool_size", unbalanced.size()},
         {"accuracy", run_student_variant(ctx, sc, cfg.student.arch, unbalanced)}});
    return rows;
}

std::size_t pretrain_epochs_for(const Config& cfg, std::size_t pool_size) {
    // Match the student's optimization step count on the pool-only phase.
    const double student_images = static_cast<double>(cfg.student.epochs) *
                                  static_cast<double>(cfg.data.synth.classes) *
                                  static_cast<double>(cfg.data.synth.per_class_labeled) *
                                  (1.0 + cfg.student.ratio);
    return std::max<std::size_t>(
        1, static_cast<std::size_t>(student_images / static_cast<double>(pool_size)));
}

nlohmann::json study_joint(const Config& cfg) {
    StudyContext ctx = study_context(cfg);
    nlohmann::json rows = nlohmann::json::array();
    rows.push_back({{"name", "supervised"}, {"accuracy", ctx.teacher_accuracy}});

    TrainConfig pc = student_config(cfg);
    pc.arch = cfg.student.arch;
    pc.epochs = pretrain_epochs_for(cfg, ctx.pool.size());
    std::vector<std::size_t> grid = {cfg.student.epochs / 8, cfg.student.epochs / 4,
                                     cfg.student.epochs / 2, cfg.student.epochs};
    auto pf = pretrain_then_finetune(ctx.pool, ctx.data.labeled, pc, grid, ctx.data.test);
    rows.push_back({{"name", "pretraining"}, {"accuracy", pf.pretrain_accuracy}});
    rows.push_back({{"name", "pretraining + finetuning"},
                    {"accuracy", pf.best_accuracy},
                    {"best_finetune_epochs", pf.best_finetune_epochs}});

    TrainConfig sc = student_config(cfg);
    rows.push_back({{"name", "joint training"},
                    {"accuracy", run_student_variant(ctx, sc, cfg.student.arch, ctx.pool)}});
    return rows;
}

nlohmann::json study_ratio(const Config& cfg) {
    StudyContext ctx = study_context(cfg);
    nlohmann::json rows = nlohmann::json::array();
    for (int ratio : {1, 3, 6}) {
        TrainConfig sc = student_config(cfg);
        sc.ratio = ratio;
        rows.push_back({{"ratio", ratio},
                        {"accuracy", run_student_variant(ctx, sc, cfg.student.arch, ctx.pool)}});
    }
    return rows;
}

nlohmann::json study_warm_start(const Config& cfg) {
    StudyContext ctx = study_context(cfg);
    TrainConfig sc = student_config(cfg);
    sc.arch = ctx.teacher.model.arch_id;  // warm start requires equal archs
    std::vector<std::size_t> grid;
    for (double frac : {0.1, 0.2, 0.4, 0.8})
        grid.push_back(static_cast<std::size_t>(frac * static_cast<double>(sc.epochs)));
    grid.push_back(sc.epochs);
    auto rows_ws =
        warm_start_student(ctx.teacher.model, ctx.data.labeled, ctx.pool, sc, grid, ctx.data.test);
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : rows_ws)
        rows.push_back({{"epochs", r.epochs},
                        {"init", r.from_teacher ? "teacher" : "scratch"},
                        {"accuracy", r.accuracy}});
    return rows;
}

int cmd_ablate(const Config& cfg, const std::string& out, const std::string& study) {
    ensure_out_dir(out);
    RunManifest manifest("ablate --study " + study, cfg);
    nlohmann::json rows;
    if (study == "noise")
        rows = study_noise(cfg);
    else if (study == "teacher-capacity")
        rows = study_teacher_capacity(cfg);
    else if (study == "unlabeled-size")
        rows = study_unlabeled_size(cfg);
    else if (study == "soft-hard-buckets")
        rows = study_soft_hard_buckets(cfg);
    else if (study == "student-capacity")
        rows = study_student_capacity(cfg);
    else if (study == "balancing")
        rows = study_balancing(cfg);
    else if (study == "joint")
        rows = study_joint(cfg);
    else if (study == "ratio")
        rows = study_ratio(cfg);
    else if (study == "warm-start")
        rows = study_warm_start(cfg);
    else
        throw ConfigError("unknown study '" + study +
                          "'; expected one of: noise, teacher-capacity, unlabeled-size, "
                          "soft-hard-buckets, student-capacity, balancing, joint, ratio, "
                          "warm-start");

    write_json_atomic(out + "/study-" + study + ".json", {{"study", study}, {"rows", rows}});
    write_json_atomic(out + "/resolved_config.json", config_to_json(cfg));
    manifest.add_output("study-" + study + ".json");
    manifest.write(out);
    std::cout << "study " << study << ":\n" << rows.dump(2) << "\n";
    return 0;
}

}  // namespace nst::cli

int main(int argc, char** argv) {
    CLI::App app{"Noisy student self-training pipeline"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "runs/out", model_path, pool_path, teacher_path,
                baseline_path, study = "noise";
    std::uint64_t seed_override = 0;
    bool seed_given = false;
    int threads = 0;

    app.add_option("--config", config_path, "JSON config path")->envname("NST_CONFIG");
    app.add_option("--out", out_dir, "output directory");
    auto* seed_opt = app.add_option("--seed", seed_override, "seed override")->envname("NST_SEED");
    app.add_option("--threads", threads, "worker threads")->envname("NST_THREADS");

    auto* c_teacher = app.add_subcommand("train-teacher", "train the teacher on labeled data");
    auto* c_pseudo = app.add_subcommand("pseudo-label", "generate pseudo labels with a teacher");
    c_pseudo->add_option("--teacher", teacher_path, "teacher checkpoint")->required();
    auto* c_filter = app.add_subcommand("filter-balance", "confidence-filter and class-balance a pool");
    c_filter->add_option("--pool", pool_path, "pseudo pool file")->required();
    auto* c_student = app.add_subcommand("train-student", "train a noised student on labeled+pseudo");
    c_student->add_option("--pool", pool_path, "pseudo pool file")->required();
    c_student->add_option("--teacher", teacher_path, "teacher checkpoint (for the size check)");
    auto* c_iterate = app.add_subcommand("iterate", "full iterative pipeline per the config plan");
    auto* c_eval = app.add_subcommand("eval", "top-k accuracy of a checkpoint");
    c_eval->add_option("--model", model_path, "model checkpoint")->required();
    auto* c_corrupt = app.add_subcommand("corrupt-eval", "corruption error matrix and mCE");
    c_corrupt->add_option("--model", model_path, "model checkpoint")->required();
    c_corrupt->add_option("--baseline", baseline_path, "baseline checkpoint for normalization");
    auto* c_perturb = app.add_subcommand("perturb-eval", "perturbation flip rates and mFR");
    c_perturb->add_option("--model", model_path, "model checkpoint")->required();
    c_perturb->add_option("--baseline", baseline_path, "baseline checkpoint for normalization");
    auto* c_attack = app.add_subcommand("attack-eval", "FGSM/PGD accuracy sweep");
    c_attack->add_option("--model", model_path, "model checkpoint")->required();
    auto* c_ablate = app.add_subcommand("ablate", "run a named ablation study");
    c_ablate->add_option("--study", study, "study name")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        nst::Config cfg;
        if (!config_path.empty()) cfg = nst::load_config(config_path);
        if (seed_opt->count() > 0 || seed_given) cfg.seed = seed_override;
        if (threads > 0) cfg.threads = threads;

        if (*c_teacher) return nst::cli::cmd_train_teacher(cfg, out_dir);
        if (*c_pseudo) return nst::cli::cmd_pseudo_label(cfg, out_dir, teacher_path);
        if (*c_filter) return nst::cli::cmd_filter_balance(cfg, out_dir, pool_path);
        if (*c_student) return nst::cli::cmd_train_student(cfg, out_dir, pool_path, teacher_path);
        if (*c_iterate) return nst::cli::cmd_iterate(cfg, out_dir);
        if (*c_eval) return nst::cli::cmd_eval(cfg, out_dir, model_path);
        if (*c_corrupt) return nst::cli::cmd_corrupt_eval(cfg, out_dir, model_path, baseline_path);
        if (*c_perturb) return nst::cli::cmd_perturb_eval(cfg, out_dir, model_path, baseline_path);
        if (*c_attack) return nst::cli::cmd_attack_eval(cfg, out_dir, model_path);
        if (*c_ablate) return nst::cli::cmd_ablate(cfg, out_dir, study);
        std::cerr << "no subcommand selected\n";
        return 2;
    } catch (const nst::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
}
