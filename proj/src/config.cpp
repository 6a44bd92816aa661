#include "ssdd/config.hpp"

#include "ssdd/error.hpp"
#include "ssdd/hash.hpp"

#include <cmath>
#include <fstream>
#include <regex>
#include <set>

namespace ssdd {

using nlohmann::json;

namespace {

constexpr std::string_view kModule = "config";

[[noreturn]] void invalid(const std::string& field, const std::string& why) { fail(kModule, field + ": " + why); }

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

void reject_unknown(const json& obj, const std::string& where, std::initializer_list<const char*> known) {
    if (!obj.is_object()) invalid(where, "expected an object");
    const std::set<std::string> allowed(known.begin(), known.end());
    for (const auto& [key, _] : obj.items()) {
        if (!allowed.count(key)) invalid(where.empty() ? key : where + "." + key, "unknown key");
    }
}

template <class V>
void read(const json& obj, const std::string& where, const char* key, V& out) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<V>();
    } catch (const json::exception&) {
        invalid(where + "." + key, "wrong type");
    }
}

void non_negative(double v, const std::string& field) {
    if (!(v >= 0) || !std::isfinite(v)) invalid(field, "must be a finite value >= 0, got " + std::to_string(v));
}

Stage parse_stage(const std::string& s, const std::string& field) {
    if (s == "pretrain_multiscale") return Stage::pretrain_multiscale;
    if (s == "finetune_fixed") return Stage::finetune_fixed;
    invalid(field, "unknown stage '" + s + "'");
}

LpipsTarget parse_lpips_target(const std::string& s, const std::string& field) {
    if (s == "original") return LpipsTarget::original;
    if (s == "teacher") return LpipsTarget::teacher;
    invalid(field, "must be 'original' or 'teacher'");
}

TrainSpec parse_train(const json& obj, const std::string& where, TrainSpec spec) {
    reject_unknown(obj, where,
                   {"lambda_lpips", "lambda_repa", "lambda_kl", "ema_decay", "ema_start_step", "learning_rate",
                    "weight_decay", "stage", "target_resolution", "seed", "batch_size", "steps", "joint_encoder",
                    "encoder_lr_scale", "augment", "resize_min", "resize_max", "grad_clip", "checkpoint_every",
                    "timestep_loc", "timestep_scale"});
    read(obj, where, "lambda_lpips", spec.lambda_lpips);
    read(obj, where, "lambda_repa", spec.lambda_repa);
    read(obj, where, "lambda_kl", spec.lambda_kl);
    read(obj, where, "ema_decay", spec.ema_decay);
    read(obj, where, "ema_start_step", spec.ema_start_step);
    read(obj, where, "learning_rate", spec.learning_rate);
    read(obj, where, "weight_decay", spec.weight_decay);
    if (obj.contains("stage")) {
        std::string s;
        read(obj, where, "stage", s);
        spec.stage = parse_stage(s, where + ".stage");
    }
    read(obj, where, "target_resolution", spec.target_resolution);
    read(obj, where, "seed", spec.seed);
    read(obj, where, "batch_size", spec.batch_size);
    read(obj, where, "steps", spec.steps);
    read(obj, where, "joint_encoder", spec.joint_encoder);
    read(obj, where, "encoder_lr_scale", spec.encoder_lr_scale);
    read(obj, where, "augment", spec.augment);
    read(obj, where, "resize_min", spec.resize_min);
    read(obj, where, "resize_max", spec.resize_max);
    read(obj, where, "grad_clip", spec.grad_clip);
    read(obj, where, "checkpoint_every", spec.checkpoint_every);
    read(obj, where, "timestep_loc", spec.timestep_loc);
    read(obj, where, "timestep_scale", spec.timestep_scale);
    try {
        spec.validate();
    } catch (const Error& e) {
        fail(kModule, where + "." + std::string(e.what()).substr(kModule.size() + 2));
    }
    return spec;
}

json train_to_json(const TrainSpec& s) {
    return json{{"lambda_lpips", s.lambda_lpips},
                {"lambda_repa", s.lambda_repa},
                {"lambda_kl", s.lambda_kl},
                {"ema_decay", s.ema_decay},
                {"ema_start_step", s.ema_start_step},
                {"learning_rate", s.learning_rate},
                {"weight_decay", s.weight_decay},
                {"stage", stage_name(s.stage)},
                {"target_resolution", s.target_resolution},
                {"seed", s.seed},
                {"batch_size", s.batch_size},
                {"steps", s.steps},
                {"joint_encoder", s.joint_encoder},
                {"encoder_lr_scale", s.encoder_lr_scale},
                {"augment", s.augment},
                {"resize_min", s.resize_min},
                {"resize_max", s.resize_max},
                {"grad_clip", s.grad_clip},
                {"checkpoint_every", s.checkpoint_every},
                {"timestep_loc", s.timestep_loc},
                {"timestep_scale", s.timestep_scale}};
}

TrainSpec default_finetune() {
    TrainSpec s;
    s.stage             = Stage::finetune_fixed;
    s.target_resolution = 64;
    s.learning_rate     = 1e-4;
    s.joint_encoder     = false;
    s.resize_min        = 64;
    s.resize_max        = 64;
    return s;
}

}  // namespace

EncoderSpec EncoderSpec::parse(std::string_view name) {
    static const std::regex pattern(R"(f(\d+)c(\d+))");
    std::cmatch m;
    if (!std::regex_match(name.begin(), name.end(), m, pattern)) {
        invalid("encoder", "expected a name like f8c4, got '" + std::string(name) + "'");
    }
    EncoderSpec spec{std::stoi(m[1].str()), std::stoi(m[2].str())};
    spec.validate();
    return spec;
}

void EncoderSpec::validate() const {
    if (!is_power_of_two(f)) invalid("encoder.f", "must be a power of two, got " + std::to_string(f));
    if (f < 2) invalid("encoder.f", "must be at least 2");
    if (c <= 0) invalid("encoder.c", "must be positive");
}

std::string ModelSizeSpec::name() const {
    switch (size) {
        case ModelSize::S: return "S";
        case ModelSize::B: return "B";
        case ModelSize::M: return "M";
        case ModelSize::L: return "L";
        case ModelSize::XL: return "XL";
        case ModelSize::H: return "H";
    }
    return "?";
}

ModelSizeSpec resolve_model_size(ModelSize size) {
    switch (size) {
        case ModelSize::S: return {ModelSize::S, 48, {1, 2, 3, 3}, 8};
        case ModelSize::B: return {ModelSize::B, 64, {1, 2, 3, 3}, 10};
        case ModelSize::M: return {ModelSize::M, 96, {1, 2, 3, 3}, 12};
        case ModelSize::L: return {ModelSize::L, 96, {1, 2, 4, 4}, 16};
        case ModelSize::XL: return {ModelSize::XL, 128, {1, 2, 4, 4}, 16};
        case ModelSize::H: return {ModelSize::H, 192, {1, 2, 4, 4}, 16};
    }
    invalid("model", "unknown size");
}

ModelSizeSpec resolve_model_size(std::string_view name) {
    static constexpr std::pair<std::string_view, ModelSize> kNames[] = {
        {"S", ModelSize::S}, {"B", ModelSize::B}, {"M", ModelSize::M},
        {"L", ModelSize::L}, {"XL", ModelSize::XL}, {"H", ModelSize::H}};
    for (const auto& [n, s] : kNames) {
        if (n == name) return resolve_model_size(s);
    }
    invalid("model", "unknown preset '" + std::string(name) + "' (expected S, B, M, L, XL or H)");
}

std::string stage_name(Stage s) { return s == Stage::pretrain_multiscale ? "pretrain_multiscale" : "finetune_fixed"; }

void TrainSpec::validate() const {
    non_negative(lambda_lpips, "lambda_lpips");
    non_negative(lambda_repa, "lambda_repa");
    non_negative(lambda_kl, "lambda_kl");
    if (!(ema_decay >= 0 && ema_decay <= 1)) invalid("ema_decay", "must lie in [0, 1]");
    if (ema_start_step < 0) invalid("ema_start_step", "must be >= 0");
    if (!(learning_rate > 0)) invalid("learning_rate", "must be positive");
    non_negative(weight_decay, "weight_decay");
    if (target_resolution <= 0 || target_resolution % 8 != 0)
        invalid("target_resolution", "must be a positive multiple of 8");
    if (batch_size <= 0) invalid("batch_size", "must be positive");
    if (steps < 0) invalid("steps", "must be >= 0");
    if (!(encoder_lr_scale > 0)) invalid("encoder_lr_scale", "must be positive");
    if (resize_min < target_resolution || resize_max < resize_min)
        invalid("resize_min", "need target_resolution <= resize_min <= resize_max");
    if (!(grad_clip > 0)) invalid("grad_clip", "must be positive");
    if (checkpoint_every < 0) invalid("checkpoint_every", "must be >= 0");
    if (!(timestep_scale > 0)) invalid("timestep_scale", "must be positive");
}

void SampleSpec::validate() const {
    if (n_steps < 1) invalid("sample.n_steps", "must be >= 1");
    if (!(rho >= 1)) invalid("sample.rho", "must be >= 1");
}

void DistillSpec::validate() const {
    if (teacher_steps < 1) invalid("distill.teacher_steps", "must be >= 1");
    if (!(teacher_rho >= 1)) invalid("distill.teacher_rho", "must be >= 1");
    if (steps < 0) invalid("distill.steps", "must be >= 0");
    if (batch_size <= 0) invalid("distill.batch_size", "must be positive");
    if (teacher_pool < 0) invalid("distill.teacher_pool", "must be >= 0");
    if (!(learning_rate > 0)) invalid("distill.learning_rate", "must be positive");
}

ExperimentConfig::ExperimentConfig() : finetune(default_finetune()) {}

void ExperimentConfig::validate() const {
    if (name.empty()) invalid("name", "must not be empty");
    encoder.validate();
    train.validate();
    finetune.validate();
    sample.validate();
    distill.validate();
    for (const TrainSpec* s : {&train, &finetune}) {
        if (s->target_resolution % encoder.f != 0)
            invalid("target_resolution", "must be divisible by encoder factor " + std::to_string(encoder.f));
    }
}

ExperimentConfig parse_config(const json& doc) {
    reject_unknown(doc, "",
                   {"name", "model", "encoder", "seed", "extractor_seed", "train", "finetune", "sample", "distill"});
    ExperimentConfig cfg;
    read(doc, "config", "name", cfg.name);
    if (doc.contains("model")) {
        if (!doc["model"].is_string()) invalid("model", "expected a preset name");
        cfg.model = resolve_model_size(doc["model"].get<std::string>());
    }
    if (doc.contains("encoder")) {
        const auto& e = doc["encoder"];
        if (e.is_string()) {
            cfg.encoder = EncoderSpec::parse(e.get<std::string>());
        } else {
            reject_unknown(e, "encoder", {"f", "c"});
            read(e, "encoder", "f", cfg.encoder.f);
            read(e, "encoder", "c", cfg.encoder.c);
            cfg.encoder.validate();
        }
    }
    read(doc, "config", "seed", cfg.seed);
    read(doc, "config", "extractor_seed", cfg.extractor_seed);

    TrainSpec train_defaults;
    train_defaults.seed = cfg.seed;
    cfg.train           = doc.contains("train") ? parse_train(doc["train"], "train", train_defaults) : train_defaults;
    TrainSpec ft_defaults = default_finetune();
    ft_defaults.seed      = cfg.seed;
    cfg.finetune = doc.contains("finetune") ? parse_train(doc["finetune"], "finetune", ft_defaults) : ft_defaults;

    if (doc.contains("sample")) {
        reject_unknown(doc["sample"], "sample", {"n_steps", "rho"});
        read(doc["sample"], "sample", "n_steps", cfg.sample.n_steps);
        read(doc["sample"], "sample", "rho", cfg.sample.rho);
    }
    if (doc.contains("distill")) {
        const auto& d = doc["distill"];
        reject_unknown(d, "distill", {"teacher_steps", "teacher_rho", "steps", "batch_size", "learning_rate", "lpips_target", "teacher_pool"});
        read(d, "distill", "teacher_pool", cfg.distill.teacher_pool);
        read(d, "distill", "teacher_steps", cfg.distill.teacher_steps);
        read(d, "distill", "teacher_rho", cfg.distill.teacher_rho);
        read(d, "distill", "steps", cfg.distill.steps);
        read(d, "distill", "batch_size", cfg.distill.batch_size);
        read(d, "distill", "learning_rate", cfg.distill.learning_rate);
        if (d.contains("lpips_target")) {
            std::string s;
            read(d, "distill", "lpips_target", s);
            cfg.distill.lpips_target = parse_lpips_target(s, "distill.lpips_target");
        }
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(kModule, "cannot open " + path.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::parse_error& e) {
        fail(kModule, "parse error in " + path.string() + ": " + e.what());
    }
    return parse_config(doc);
}

json to_json(const ExperimentConfig& cfg) {
    return json{{"name", cfg.name},
                {"model", cfg.model.name()},
                {"encoder", cfg.encoder.name()},
                {"seed", cfg.seed},
                {"extractor_seed", cfg.extractor_seed},
                {"train", train_to_json(cfg.train)},
                {"finetune", train_to_json(cfg.finetune)},
                {"sample", {{"n_steps", cfg.sample.n_steps}, {"rho", cfg.sample.rho}}},
                {"distill",
                 {{"teacher_steps", cfg.distill.teacher_steps},
                  {"teacher_rho", cfg.distill.teacher_rho},
                  {"steps", cfg.distill.steps},
                  {"batch_size", cfg.distill.batch_size},
                  {"learning_rate", cfg.distill.learning_rate},
                  {"teacher_pool", cfg.distill.teacher_pool},
                  {"lpips_target", cfg.distill.lpips_target == LpipsTarget::original ? "original" : "teacher"}}}};
}

void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) fail(kModule, "cannot write " + path.string());
    out << to_json(cfg).dump(2) << "\n";
}

std::string config_hash(const ExperimentConfig& cfg) { return hash_hex(to_json(cfg).dump()); }

}  // namespace ssdd
