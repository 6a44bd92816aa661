#pragma once

// Run directories, manifests, checkpoints and the end-to-end commands behind
// the ssdd tool.
//
// Layout of one command's run directory:
//   runs/<name>/manifest.json
//   runs/<name>/logs.csv            (train, finetune, distill)
//   runs/<name>/ckpt/step_<n>/      (each with its own manifest.json)
//   runs/<name>/reports/

#include "ssdd/config.hpp"
#include "ssdd/corpus.hpp"
#include "ssdd/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace ssdd {

// Short hash of the source tree the binary was built from.
std::string code_version();

struct ExperimentManifest {
    std::string kind;          // "run" or "checkpoint"
    std::string command;       // train, finetune, distill, sample, eval, sweep, demo_tradeoff
    std::string config_hash;
    std::string code_version;
    std::string stage;
    std::map<std::string, std::uint64_t> seeds;
    std::string extractor;
    std::string parent_checkpoint;  // empty for train
    int resolution = 0;
    long step      = 0;
    std::string weights_hash;
    std::vector<std::string> artifacts;  // paths relative to the manifest's directory
    nlohmann::json extra = nlohmann::json::object();
    // Excluded from content_hash.
    std::string started_at;
    std::string finished_at;

    nlohmann::json to_json() const;
    static ExperimentManifest from_json(const nlohmann::json& doc);
    // Hash of everything except the timestamps.
    std::string content_hash() const;
};

void write_manifest(const std::filesystem::path& dir, const ExperimentManifest& manifest);
ExperimentManifest read_manifest(const std::filesystem::path& dir);

std::string utc_timestamp();

// A checkpoint directory: weights.bin (+ ema.bin, optim.bin, state.json for
// resumable ones), config.json and manifest.json.
struct LoadedCheckpoint {
    ExperimentConfig config;
    ExperimentManifest manifest;
    std::filesystem::path dir;
};
LoadedCheckpoint read_checkpoint(const std::filesystem::path& dir);
// Builds the model described by a checkpoint and loads its weights. With
// use_ema the EMA shadow replaces the live weights when present.
Autoencoder load_model(const LoadedCheckpoint& ckpt, int feature_dim, bool use_ema = false);

// Latest ckpt/step_<n> under a run directory, if any.
std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& run_dir);

struct CommandOptions {
    std::filesystem::path run_dir;      // where this command writes
    std::filesystem::path data;         // PNG corpus
    std::filesystem::path checkpoint;   // parent (finetune, distill, sample, eval, sweep)
    std::filesystem::path resume;       // checkpoint to resume train/finetune from
    std::filesystem::path init_encoder; // weight archive with pretrained encoder weights (train)
    std::string encoder_prefix = "encoder/";
    int eval_count   = 0;               // images held out of training; 0 evaluates on the training set
    long steps       = -1;              // overrides the config when >= 0
    bool quiet       = false;
    bool use_ema     = false;
};

// Each command returns the path of its run directory.
std::filesystem::path cmd_train(const ExperimentConfig& cfg, const CommandOptions& opt);
std::filesystem::path cmd_finetune(const ExperimentConfig& cfg, const CommandOptions& opt);
std::filesystem::path cmd_distill(const ExperimentConfig& cfg, const CommandOptions& opt);

struct SampleOptions {
    std::optional<int> steps;
    std::optional<double> rho;
    std::uint64_t seed = 0;
    std::filesystem::path latents;  // archive with a "z" entry [B, c, h, w]; else encode --data
    int draws = 1;                  // samples per latent
};
std::filesystem::path cmd_sample(const CommandOptions& opt, const SampleOptions& sample);

struct EvalOptions {
    std::filesystem::path reference;       // directory of PNGs
    std::filesystem::path reconstruction;  // directory of PNGs, paired by sorted order
    std::optional<int> steps;
    std::optional<double> rho;
    std::uint64_t seed = 0;
    std::uint64_t extractor_seed = 1234;
};
// Either compares two PNG directories, or reconstructs the eval split of
// --data with --checkpoint and compares against it.
std::filesystem::path cmd_eval(const CommandOptions& opt, const EvalOptions& eval);

struct SweepOptions {
    std::vector<int> steps = {1, 2, 4, 8};
    std::vector<double> rhos = {1.0, 2.0, 4.0};
    std::uint64_t seed = 0;
};
std::filesystem::path cmd_sweep(const CommandOptions& opt, const SweepOptions& sweep);

std::filesystem::path cmd_demo_tradeoff(const CommandOptions& opt, long samples, std::uint64_t seed);

// Parameter counts per decoder level, encoder and head.
std::string cmd_describe(const ExperimentConfig& cfg, int resolution);

}  // namespace ssdd
