#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "nst/data.hpp"
#include "nst/error.hpp"
#include "nst/robust.hpp"
#include "nst/train.hpp"

namespace nst {

// Strict-keys JSON configuration. Unknown keys anywhere are errors (with
// the offending field path); every field is range-checked; an empty object
// resolves to the reference hyperparameters: dropout 0.5, stochastic-depth
// survival 0.8, RandAugment (2 ops, magnitude 27), tau 0.3, soft labels,
// 350 epochs with lr 0.128 at labeled batch 2048 decaying 0.97 per 2.4
// epochs, and the 14:1 / 14:1 / 28:1 iteration schedule.

struct IdxPathsConfig {
    std::string train_images, train_labels, test_images, test_labels, unlabeled_images;
};

struct DataConfig {
    std::string source = "synthetic";  // "synthetic" | "idx"
    SynthParams synth;
    IdxPathsConfig idx;
};

struct PlanEntryConfig {
    std::string arch;
    int ratio = 1;
    TrainConfig train;
};

struct EvalConfig {
    std::vector<std::size_t> topk = {1, 5};
    std::vector<CorruptionKind> corruption_kinds = all_corruption_kinds();
    std::vector<int> severities = {1, 2, 3, 4, 5};
    std::vector<PerturbationKind> perturb_kinds = all_perturbation_kinds();
    std::size_t perturb_frames = 8;
    std::size_t perturb_sequences = 500;  // per kind; capped by test size
    std::vector<double> attack_eps = {2.0 / 255.0, 8.0 / 255.0, 16.0 / 255.0};
    std::size_t pgd_steps = 10;
    double pgd_step_size = 0.0;  // 0 -> eps/4
    std::size_t attack_examples = 500;
    std::string baseline_checkpoint;
};

struct PseudoFullConfig {
    PseudoConfig base;           // tau, cap, balance, label mode
    bool noised_teacher = false;  // ablation: noise the teacher during labeling
};

struct Config {
    std::uint64_t seed = 0;
    int threads = 1;
    DataConfig data;
    TrainConfig teacher;
    TrainConfig student;
    PseudoFullConfig pseudo;
    std::vector<PlanEntryConfig> plan;
    EvalConfig eval;

    Config() {
        teacher.arch = "mlp-S";
        student.arch = "mlp-L";
        student.ratio = 3;
        for (int ratio : {14, 14, 28}) {
            PlanEntryConfig e;
            e.arch = student.arch;
            e.ratio = ratio;
            e.train = student;
            plan.push_back(std::move(e));
        }
    }
};

namespace detail {

class StrictObject {
public:
    StrictObject(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("expected a JSON object", path_);
    }

    ~StrictObject() = default;

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key);
    }

    const nlohmann::json& at(const std::string& key) {
        seen_.insert(key);
        return j_.at(key);
    }

    std::string child_path(const std::string& key) const {
        return path_.empty() ? key : path_ + "." + key;
    }

    template <typename T>
    void get_to(const std::string& key, T& out) {
        if (!has(key)) return;
        try {
            j_.at(key).get_to(out);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("bad value: ") + e.what(), child_path(key));
        }
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key()))
                throw ConfigError("unknown key", child_path(it.key()));
    }

private:
    const nlohmann::json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline void parse_augment(const nlohmann::json& j, const std::string& path, AugmentPolicy& out) {
    StrictObject o(j, path);
    if (o.has("policy")) out.mode = augment_mode_from_string(o.at("policy").get<std::string>());
    o.get_to("num_ops", out.ra.num_ops);
    o.get_to("magnitude", out.ra.magnitude);
    if (o.has("op_menu")) {
        out.ra.op_menu.clear();
        for (const auto& s : o.at("op_menu"))
            out.ra.op_menu.push_back(aug_kind_from_string(s.get<std::string>()));
    }
    o.finish();
}

inline void parse_noise(const nlohmann::json& j, const std::string& path, NoiseConfig& out) {
    StrictObject o(j, path);
    o.get_to("enable_aug", out.enable_aug);
    o.get_to("enable_sd", out.enable_sd);
    o.get_to("enable_dropout", out.enable_dropout);
    o.get_to("dropout_rate", out.dropout_rate);
    o.get_to("sd_final_survival", out.sd_final_survival);
    if (o.has("augment")) parse_augment(o.at("augment"), o.child_path("augment"), out.augment);
    o.finish();
    out.validate();
}

inline void parse_train(const nlohmann::json& j, const std::string& path, TrainConfig& out) {
    StrictObject o(j, path);
    o.get_to("arch", out.arch);
    o.get_to("labeled_batch", out.labeled_batch);
    o.get_to("ratio", out.ratio);
    o.get_to("epochs", out.epochs);
    o.get_to("base_lr", out.base_lr);
    o.get_to("lr_decay", out.lr_decay);
    o.get_to("decay_interval_epochs", out.decay_interval_epochs);
    if (o.has("label_mode"))
        out.label_mode = label_mode_from_string(o.at("label_mode").get<std::string>());
    if (o.has("loss_mode"))
        out.loss_mode = loss_mode_from_string(o.at("loss_mode").get<std::string>());
    if (o.has("noise")) parse_noise(o.at("noise"), o.child_path("noise"), out.noise);
    if (o.has("warm_start_from"))
        out.warm_start_from = o.at("warm_start_from").get<std::string>();
    o.finish();
    arch_rank(out.arch);  // validates the arch id
    out.validate();
}

inline void parse_data(const nlohmann::json& j, const std::string& path, DataConfig& out) {
    StrictObject o(j, path);
    o.get_to("source", out.source);
    if (out.source != "synthetic" && out.source != "idx")
        throw ConfigError("source must be 'synthetic' or 'idx'", o.child_path("source"));
    o.get_to("classes", out.synth.classes);
    o.get_to("per_class_labeled", out.synth.per_class_labeled);
    o.get_to("unlabeled_total", out.synth.unlabeled_total);
    o.get_to("test_per_class", out.synth.test_per_class);
    o.get_to("in_domain_fraction", out.synth.in_domain_fraction);
    o.get_to("image_side", out.synth.image_side);
    o.get_to("noise_sigma", out.synth.noise_sigma);
    o.get_to("max_shift", out.synth.max_shift);
    if (o.has("idx")) {
        StrictObject oi(o.at("idx"), o.child_path("idx"));
        oi.get_to("train_images", out.idx.train_images);
        oi.get_to("train_labels", out.idx.train_labels);
        oi.get_to("test_images", out.idx.test_images);
        oi.get_to("test_labels", out.idx.test_labels);
        oi.get_to("unlabeled_images", out.idx.unlabeled_images);
        oi.finish();
    }
    o.finish();
    out.synth.validate();
}

inline void parse_pseudo(const nlohmann::json& j, const std::string& path,
                         PseudoFullConfig& out) {
    StrictObject o(j, path);
    o.get_to("tau", out.base.tau);
    o.get_to("cap", out.base.cap);
    o.get_to("balance", out.base.balance_enabled);
    if (o.has("label_mode"))
        out.base.label_mode = label_mode_from_string(o.at("label_mode").get<std::string>());
    o.get_to("noised_teacher", out.noised_teacher);
    o.finish();
    if (!(out.base.tau >= 0.0 && out.base.tau < 1.0))
        throw ConfigError("tau must be in [0,1)", path + ".tau");
    if (out.base.cap < 1) throw ConfigError("cap must be >= 1", path + ".cap");
}

inline void parse_eval(const nlohmann::json& j, const std::string& path, EvalConfig& out) {
    StrictObject o(j, path);
    o.get_to("topk", out.topk);
    if (o.has("corruption_kinds")) {
        out.corruption_kinds.clear();
        for (const auto& s : o.at("corruption_kinds"))
            out.corruption_kinds.push_back(corruption_kind_from_string(s.get<std::string>()));
    }
    o.get_to("severities", out.severities);
    for (int s : out.severities)
        if (s < 1 || s > 5)
            throw ConfigError("severities must be in [1,5]", o.child_path("severities"));
    if (o.has("perturb_kinds")) {
        out.perturb_kinds.clear();
        for (const auto& s : o.at("perturb_kinds"))
            out.perturb_kinds.push_back(perturbation_kind_from_string(s.get<std::string>()));
    }
    o.get_to("perturb_frames", out.perturb_frames);
    o.get_to("perturb_sequences", out.perturb_sequences);
    o.get_to("attack_eps", out.attack_eps);
    for (double e : out.attack_eps)
        if (e < 0.0) throw ConfigError("attack eps must be >= 0", o.child_path("attack_eps"));
    o.get_to("pgd_steps", out.pgd_steps);
    o.get_to("pgd_step_size", out.pgd_step_size);
    o.get_to("attack_examples", out.attack_examples);
    o.get_to("baseline_checkpoint", out.baseline_checkpoint);
    o.finish();
}

}  // namespace detail

inline Config config_from_json(const nlohmann::json& j) {
    Config out;
    detail::StrictObject o(j, "");
    o.get_to("seed", out.seed);
    o.get_to("threads", out.threads);
    if (out.threads < 1) throw ConfigError("threads must be >= 1", "threads");
    if (o.has("data")) detail::parse_data(o.at("data"), "data", out.data);
    if (o.has("teacher")) detail::parse_train(o.at("teacher"), "teacher", out.teacher);
    if (o.has("student")) detail::parse_train(o.at("student"), "student", out.student);
    if (o.has("pseudo")) detail::parse_pseudo(o.at("pseudo"), "pseudo", out.pseudo);
    if (o.has("plan")) {
        out.plan.clear();
        const auto& plan = o.at("plan");
        if (!plan.is_array()) throw ConfigError("plan must be an array", "plan");
        for (std::size_t i = 0; i < plan.size(); ++i) {
            const std::string path = "plan[" + std::to_string(i) + "]";
            detail::StrictObject oe(plan[i], path);
            PlanEntryConfig e;
            e.train = out.student;
            e.arch = out.student.arch;
            oe.get_to("arch", e.arch);
            oe.get_to("ratio", e.ratio);
            if (oe.has("train")) detail::parse_train(oe.at("train"), path + ".train", e.train);
            oe.finish();
            arch_rank(e.arch);
            if (e.ratio < 1) throw ConfigError("ratio must be >= 1", path + ".ratio");
            out.plan.push_back(std::move(e));
        }
        if (out.plan.empty()) throw ConfigError("plan must be non-empty", "plan");
    }
    if (o.has("eval")) detail::parse_eval(o.at("eval"), "eval", out.eval);
    o.finish();
    return out;
}

inline nlohmann::json augment_to_json(const AugmentPolicy& a) {
    nlohmann::json menu = nlohmann::json::array();
    for (AugKind k : a.ra.op_menu) menu.push_back(to_string(k));
    return {{"policy", to_string(a.mode)},
            {"num_ops", a.ra.num_ops},
            {"magnitude", a.ra.magnitude},
            {"op_menu", menu}};
}

inline nlohmann::json noise_to_json(const NoiseConfig& n) {
    return {{"enable_aug", n.enable_aug},
            {"enable_sd", n.enable_sd},
            {"enable_dropout", n.enable_dropout},
            {"dropout_rate", n.dropout_rate},
            {"sd_final_survival", n.sd_final_survival},
            {"augment", augment_to_json(n.augment)}};
}

inline nlohmann::json train_to_json(const TrainConfig& t) {
    nlohmann::json j = {{"arch", t.arch},
                        {"labeled_batch", t.labeled_batch},
                        {"ratio", t.ratio},
                        {"epochs", t.epochs},
                        {"base_lr", t.base_lr},
                        {"lr_decay", t.lr_decay},
                        {"decay_interval_epochs", t.decay_interval_epochs},
                        {"label_mode", to_string(t.label_mode)},
                        {"loss_mode", to_string(t.loss_mode)},
                        {"noise", noise_to_json(t.noise)}};
    if (t.warm_start_from) j["warm_start_from"] = *t.warm_start_from;
    return j;
}

inline nlohmann::json config_to_json(const Config& c) {
    nlohmann::json kinds = nlohmann::json::array();
    for (CorruptionKind k : c.eval.corruption_kinds) kinds.push_back(to_string(k));
    nlohmann::json pkinds = nlohmann::json::array();
    for (PerturbationKind k : c.eval.perturb_kinds) pkinds.push_back(to_string(k));
    nlohmann::json plan = nlohmann::json::array();
    for (const auto& e : c.plan)
        plan.push_back(
            {{"arch", e.arch}, {"ratio", e.ratio}, {"train", train_to_json(e.train)}});
    return {
        {"seed", c.seed},
        {"threads", c.threads},
        {"data",
         {{"source", c.data.source},
          {"classes", c.data.synth.classes},
          {"per_class_labeled", c.data.synth.per_class_labeled},
          {"unlabeled_total", c.data.synth.unlabeled_total},
          {"test_per_class", c.data.synth.test_per_class},
          {"in_domain_fraction", c.data.synth.in_domain_fraction},
          {"image_side", c.data.synth.image_side},
          {"noise_sigma", c.data.synth.noise_sigma},
          {"max_shift", c.data.synth.max_shift},
          {"idx",
           {{"train_images", c.data.idx.train_images},
            {"train_labels", c.data.idx.train_labels},
            {"test_images", c.data.idx.test_images},
            {"test_labels", c.data.idx.test_labels},
            {"unlabeled_images", c.data.idx.unlabeled_images}}}}},
        {"teacher", train_to_json(c.teacher)},
        {"student", train_to_json(c.student)},
        {"pseudo",
         {{"tau", c.pseudo.base.tau},
          {"cap", c.pseudo.base.cap},
          {"balance", c.pseudo.base.balance_enabled},
          {"label_mode", to_string(c.pseudo.base.label_mode)},
          {"noised_teacher", c.pseudo.noised_teacher}}},
        {"plan", plan},
        {"eval",
         {{"topk", c.eval.topk},
          {"corruption_kinds", kinds},
          {"severities", c.eval.severities},
          {"perturb_kinds", pkinds},
          {"perturb_frames", c.eval.perturb_frames},
          {"perturb_sequences", c.eval.perturb_sequences},
          {"attack_eps", c.eval.attack_eps},
          {"pgd_steps", c.eval.pgd_steps},
          {"pgd_step_size", c.eval.pgd_step_size},
          {"attack_examples", c.eval.attack_examples},
          {"baseline_checkpoint", c.eval.baseline_checkpoint}}},
    };
}

inline Config load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what(), path);
    }
    return config_from_json(j);
}

}  // namespace nst
