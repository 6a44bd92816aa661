#pragma once

// Experiment configuration: encoder/decoder presets, loss weights, sampling
// and distillation settings. One JSON document describes one experiment.
//
// Pixel values are in [-1, 1] everywhere inside the library; 8-bit images
// are mapped with v / 127.5 - 1 on ingestion.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

namespace ssdd {

struct EncoderSpec {
    int f = 8;  // spatial downsampling factor, power of two
    int c = 4;  // latent channels

    std::string name() const { return "f" + std::to_string(f) + "c" + std::to_string(c); }
    // f8c4, f16c4, f16c16, f32c64, or any well-formed fNcM.
    static EncoderSpec parse(std::string_view name);
    void validate() const;
    friend bool operator==(const EncoderSpec&, const EncoderSpec&) = default;
};

enum class ModelSize { S, B, M, L, XL, H };

struct ModelSizeSpec {
    ModelSize size = ModelSize::S;
    int base_channels = 48;
    std::array<int, 4> depth_multipliers{1, 2, 3, 3};
    int num_transformer_blocks = 8;

    std::string name() const;
    friend bool operator==(const ModelSizeSpec&, const ModelSizeSpec&) = default;
};

ModelSizeSpec resolve_model_size(ModelSize size);
ModelSizeSpec resolve_model_size(std::string_view name);

enum class Stage { pretrain_multiscale, finetune_fixed };
std::string stage_name(Stage s);

struct TrainSpec {
    double lambda_lpips   = 0.5;
    double lambda_repa    = 0.25;
    double lambda_kl      = 1e-6;
    double ema_decay      = 0.999;
    int ema_start_step    = 50000;
    double learning_rate  = 3e-4;
    double weight_decay   = 1e-3;
    Stage stage           = Stage::pretrain_multiscale;
    int target_resolution = 32;
    std::uint64_t seed    = 0;

    // Desk-scale loop controls.
    int batch_size         = 8;
    int steps              = 1000;
    bool joint_encoder     = true;
    // Encoder learning rate relative to the decoder's (1e-4 vs 3e-4).
    double encoder_lr_scale = 1.0 / 3.0;
    bool augment            = true;
    int resize_min          = 32;
    int resize_max          = 64;
    double grad_clip        = 1.0;
    int checkpoint_every    = 0;  // 0: only the final checkpoint
    double timestep_loc     = 0.0;
    double timestep_scale   = 1.0;

    void validate() const;
    friend bool operator==(const TrainSpec&, const TrainSpec&) = default;
};

struct SampleSpec {
    int n_steps = 8;
    double rho  = 2.0;

    void validate() const;
    friend bool operator==(const SampleSpec&, const SampleSpec&) = default;
};

enum class LpipsTarget { original, teacher };

struct DistillSpec {
    int teacher_steps        = 7;
    double teacher_rho       = 2.0;
    int steps                = 2000;
    int batch_size           = 4;
    double learning_rate     = 1e-4;
    LpipsTarget lpips_target = LpipsTarget::original;
    int teacher_pool         = 0;  // > 0: teacher samples precomputed once, reused each step

    void validate() const;
    friend bool operator==(const DistillSpec&, const DistillSpec&) = default;
};

struct ExperimentConfig {
    std::string name = "experiment";
    ModelSizeSpec model = resolve_model_size(ModelSize::S);
    EncoderSpec encoder;
    std::uint64_t seed           = 0;
    std::uint64_t extractor_seed = 1234;
    TrainSpec train;
    TrainSpec finetune;
    SampleSpec sample;
    DistillSpec distill;

    ExperimentConfig();
    void validate() const;
    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// Parses and validates; unknown keys are rejected. Errors name the field.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& cfg);
void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path);
// Hash of the canonical serialization.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace ssdd
