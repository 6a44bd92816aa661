// ssdd: train, finetune, distill, sample, eval, sweep and inspect decoders.

#include "ssdd/corpus.hpp"
#include "ssdd/error.hpp"
#include "ssdd/experiment.hpp"
#include "ssdd/simd.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace fs = std::filesystem;
using namespace ssdd;

namespace {

struct Common {
    std::string config;
    std::string run_dir;
    std::string data;
    std::string checkpoint;
    std::string resume;
    std::string init_encoder;
    std::string encoder_prefix = "encoder/";
    int eval_count = 0;
    long steps     = -1;
    bool quiet     = false;
    bool ema       = false;
    std::string isa;
};

// Config precedence: --config, else the checkpoint's own config, else defaults.
ExperimentConfig resolve_config(const Common& c) {
    if (!c.config.empty()) return load_config(c.config);
    if (!c.checkpoint.empty()) return read_checkpoint(c.checkpoint).config;
    if (!c.resume.empty()) return read_checkpoint(c.resume).config;
    return ExperimentConfig{};
}

CommandOptions options(const Common& c, const std::string& command, const ExperimentConfig* cfg) {
    CommandOptions o;
    o.run_dir    = c.run_dir;
    o.data       = c.data;
    o.checkpoint = c.checkpoint;
    o.resume     = c.resume;
    o.init_encoder   = c.init_encoder;
    o.encoder_prefix = c.encoder_prefix;
    o.eval_count = c.eval_count;
    o.steps      = c.steps;
    o.quiet      = c.quiet;
    o.use_ema    = c.ema;
    if (o.run_dir.empty() && o.resume.empty()) {
        o.run_dir = fs::path("runs") / ((cfg ? cfg->name : std::string("ssdd")) + "-" + command);
    }
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Single-stage diffusion decoder toolkit"};
    app.require_subcommand(1);
    Common c;
    app.add_option("--isa", c.isa, "Force the SIMD kernel set (scalar, avx2, avx512)");

    auto add_common = [&](CLI::App* sub, bool data, bool ckpt) {
        sub->add_option("--config", c.config, "Experiment config JSON");
        sub->add_option("--run-dir", c.run_dir, "Output run directory (default runs/<name>-<command>)");
        if (data) sub->add_option("--data", c.data, "Directory of PNG images");
        if (ckpt) sub->add_option("--checkpoint", c.checkpoint, "Checkpoint directory (runs/<name>/ckpt/step_<n>)");
        sub->add_option("--eval-count", c.eval_count, "Images held out at the end of the sorted corpus");
        sub->add_flag("--quiet", c.quiet, "Suppress progress output");
    };

    auto* train = app.add_subcommand("train", "Stage-one training on a PNG corpus");
    add_common(train, true, false);
    train->add_option("--resume", c.resume, "Checkpoint to resume from");
    train->add_option("--steps", c.steps, "Override the configured step count");
    train->add_option("--init-encoder", c.init_encoder, "Weight archive with pretrained encoder weights");
    train->add_option("--encoder-prefix", c.encoder_prefix, "Name prefix of the encoder weights in that archive");

    auto* finetune = app.add_subcommand("finetune", "Fixed-resolution finetuning with a frozen encoder");
    add_common(finetune, true, true);
    finetune->add_option("--resume", c.resume, "Checkpoint to resume from");
    finetune->add_option("--steps", c.steps, "Override the configured step count");

    auto* distill = app.add_subcommand("distill", "Single-step distillation from a multi-step teacher");
    add_common(distill, true, false);
    distill->add_option("--teacher", c.checkpoint, "Teacher checkpoint")->required();
    std::optional<int> teacher_steps;
    std::optional<double> teacher_rho;
    std::optional<int> teacher_pool;
    std::string lpips_target;
    distill->add_option("--teacher-steps", teacher_steps, "Euler steps of the teacher");
    distill->add_option("--rho", teacher_rho, "Teacher schedule exponent");
    distill->add_option("--steps", c.steps, "Distillation steps");
    distill->add_option("--teacher-pool", teacher_pool, "Precomputed teacher samples reused across steps (0: fresh every step)");
    distill->add_option("--lpips-target", lpips_target, "Perceptual target: original or teacher")
        ->check(CLI::IsMember({"original", "teacher"}));

    SampleOptions so;
    std::string latents;
    auto* sample = app.add_subcommand("sample", "Decode latents (or encoded images) with N Euler steps");
    add_common(sample, true, true);
    sample->add_option("--steps", so.steps, "Euler steps (default from the config)");
    sample->add_option("--rho", so.rho, "Schedule exponent");
    sample->add_option("--seed", so.seed, "Noise seed");
    sample->add_option("--latents", latents, "Weight archive holding a latent tensor named z");
    sample->add_option("--draws", so.draws, "Samples per latent");
    sample->add_option("--out", c.run_dir, "Alias of --run-dir");
    sample->add_flag("--ema", c.ema, "Use EMA weights");

    EvalOptions eo;
    std::string reference, reconstruction;
    auto* eval = app.add_subcommand("eval", "Reconstruction metrics");
    add_common(eval, true, true);
    eval->add_option("--reference", reference, "Reference PNG directory");
    eval->add_option("--reconstruction", reconstruction, "Reconstruction PNG directory");
    eval->add_option("--steps", eo.steps, "Euler steps for checkpoint evaluation");
    eval->add_option("--rho", eo.rho, "Schedule exponent");
    eval->add_option("--seed", eo.seed, "Noise seed");
    eval->add_option("--extractor-seed", eo.extractor_seed, "Feature extractor seed for directory evaluation");
    eval->add_flag("--ema", c.ema, "Use EMA weights");

    SweepOptions sw;
    auto* sweep = app.add_subcommand("sweep", "Metrics over a grid of step counts and schedule exponents");
    add_common(sweep, true, true);
    sweep->add_option("--steps", sw.steps, "Step counts")->delimiter(',');
    sweep->add_option("--rho", sw.rhos, "Schedule exponents")->delimiter(',');
    sweep->add_option("--seed", sw.seed, "Noise seed");
    sweep->add_flag("--ema", c.ema, "Use EMA weights");

    long toy_samples       = 1000000;
    std::uint64_t toy_seed = 0;
    auto* demo = app.add_subcommand("demo-tradeoff", "One-dimensional distortion versus distribution-shift example");
    demo->add_option("--run-dir", c.run_dir, "Output run directory");
    demo->add_option("--samples", toy_samples, "Number of samples (>= 10000)");
    demo->add_option("--seed", toy_seed, "Seed");
    demo->add_flag("--quiet", c.quiet, "Suppress the table");

    int describe_res = 0;
    auto* describe = app.add_subcommand("describe", "Parameter counts per decoder level");
    describe->add_option("--config", c.config, "Experiment config JSON");
    describe->add_option("--resolution", describe_res, "Resolution (default: training resolution)");

    std::string toy_dir;
    int toy_n = 8, toy_size = 32;
    std::uint64_t toy_corpus_seed = 0;
    auto* toy = app.add_subcommand("make-toy-corpus", "Write a synthetic PNG corpus");
    toy->add_option("dir", toy_dir, "Output directory")->required();
    toy->add_option("--count", toy_n, "Number of images");
    toy->add_option("--size", toy_size, "Image side length");
    toy->add_option("--seed", toy_corpus_seed, "Seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (!c.isa.empty()) {
            const auto isa = simd::parse_isa(c.isa);
            if (!isa) fail("cli", "unknown ISA " + c.isa);
            simd::set_isa(*isa);
        }
        fs::path out;
        if (train->parsed()) {
            const auto cfg = resolve_config(c);
            out            = cmd_train(cfg, options(c, "train", &cfg));
        } else if (finetune->parsed()) {
            const auto cfg = resolve_config(c);
            out            = cmd_finetune(cfg, options(c, "finetune", &cfg));
        } else if (distill->parsed()) {
            auto cfg = resolve_config(c);
            if (teacher_steps) cfg.distill.teacher_steps = *teacher_steps;
            if (teacher_rho) cfg.distill.teacher_rho = *teacher_rho;
            if (teacher_pool) cfg.distill.teacher_pool = *teacher_pool;
            if (!lpips_target.empty()) {
                cfg.distill.lpips_target = lpips_target == "teacher" ? LpipsTarget::teacher : LpipsTarget::original;
            }
            cfg.validate();
            out = cmd_distill(cfg, options(c, "distill", &cfg));
        } else if (sample->parsed()) {
            const auto cfg = resolve_config(c);
            so.latents     = latents;
            out            = cmd_sample(options(c, "sample", &cfg), so);
        } else if (eval->parsed()) {
            eo.reference      = reference;
            eo.reconstruction = reconstruction;
            out               = cmd_eval(options(c, "eval", nullptr), eo);
        } else if (sweep->parsed()) {
            out = cmd_sweep(options(c, "sweep", nullptr), sw);
        } else if (demo->parsed()) {
            out = cmd_demo_tradeoff(options(c, "demo-tradeoff", nullptr), toy_samples, toy_seed);
        } else if (describe->parsed()) {
            const auto cfg = resolve_config(c);
            std::cout << cmd_describe(cfg, describe_res > 0 ? describe_res : cfg.train.target_resolution);
            return 0;
        } else if (toy->parsed()) {
            make_toy_corpus(toy_dir, toy_n, toy_size, toy_corpus_seed);
            std::cout << "wrote " << toy_n << " images to " << toy_dir << std::endl;
            return 0;
        }
        std::cout << "run directory: " << out.string() << std::endl;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
    return 0;
}
