#include "ssdd/experiment.hpp"

#include "ssdd/distill.hpp"
#include "ssdd/hash.hpp"
#include "ssdd/metrics.hpp"
#include "ssdd/sampler.hpp"
#include "ssdd/tradeoff.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <regex>
#include <sstream>

#ifndef SSDD_CODE_VERSION
#define SSDD_CODE_VERSION "unknown"
#endif

namespace ssdd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kModule = "experiment";
constexpr int kChunk               = 8;

std::string step_dir_name(long step) { return "step_" + std::to_string(step); }

std::string rel(const fs::path& p, const fs::path& base) { return fs::relative(p, base).generic_string(); }

void prepare_run_dir(const fs::path& dir, bool resuming) {
    require(!dir.empty(), kModule, "no run directory given");
    if (!resuming) {
        require(!fs::exists(dir / "manifest.json"), kModule,
                dir.string() + " already holds a run; choose another --run-dir or --resume");
    }
    fs::create_directories(dir / "reports");
}

ExperimentManifest base_manifest(const std::string& command, const ExperimentConfig& cfg) {
    ExperimentManifest m;
    m.kind         = "run";
    m.command      = command;
    m.config_hash  = config_hash(cfg);
    m.code_version = code_version();
    m.seeds        = {{"model", cfg.seed}, {"extractor", cfg.extractor_seed}};
    m.started_at   = utc_timestamp();
    return m;
}

const TrainSpec& spec_for(const ExperimentConfig& cfg, const std::string& stage) {
    return stage == stage_name(Stage::finetune_fixed) ? cfg.finetune : cfg.train;
}

ResolutionPolicy eval_policy(int resolution) { return ResolutionPolicy{resolution, false, true}; }

// Posterior-mean reconstructions with eps drawn per image from `seed`.
std::vector<Tensor<float>> reconstruct(const Autoencoder& model, const std::vector<Tensor<float>>& images,
                                       const SampleSchedule& schedule, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Tensor<float>> out;
    for (std::size_t start = 0; start < images.size(); start += kChunk) {
        const std::size_t end = std::min(images.size(), start + kChunk);
        std::vector<Tensor<float>> chunk(images.begin() + static_cast<std::ptrdiff_t>(start),
                                         images.begin() + static_cast<std::ptrdiff_t>(end));
        const auto batch = stack_batch(chunk, false);
        Tensor<float> z;
        {
            ag::NoGradGuard guard;
            z = mode_latent(model.encoder.encode(batch), model.encoder.spec()).values.value();
        }
        const auto eps = randn<float>(batch.shape(), rng);
        const auto rec = sample(model.decoder, eps, z, schedule);
        for (int i = 0; i < rec.dim(0); ++i) {
            out.push_back(rec.batch_slice(i, 1).reshaped({3, rec.dim(2), rec.dim(3)}));
        }
    }
    return out;
}

std::vector<Tensor<float>> eval_images(const fs::path& data, int resolution, int eval_count) {
    const auto corpus = ingest(data, eval_policy(resolution));
    if (eval_count <= 0) return corpus.images;
    return split_corpus(corpus, eval_count).eval;
}

class CsvLog {
public:
    CsvLog(const fs::path& path, long resume_step) : path_(path) {
        std::vector<std::string> kept;
        if (resume_step > 0 && fs::exists(path)) {
            std::ifstream in(path);
            std::string line;
            std::getline(in, line);
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                if (std::stol(line.substr(0, line.find(','))) <= resume_step) kept.push_back(line);
            }
        }
        out_.open(path, std::ios::trunc);
        require(static_cast<bool>(out_), kModule, "cannot write " + path.string());
        out_ << "step,fm,lpips,repa,kl,total,wallclock\n";
        for (const auto& l : kept) out_ << l << '\n';
        out_.flush();
    }

    void row(long step, const LossBreakdown& l, double wallclock) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%ld,%.9g,%.9g,%.9g,%.9g,%.9g,%.3f\n", step, l.fm, l.lpips, l.repa, l.kl, l.total,
                      wallclock);
        out_ << buf;
        out_.flush();
    }

private:
    fs::path path_;
    std::ofstream out_;
};

void write_checkpoint_meta(const fs::path& dir, const ExperimentConfig& cfg, ExperimentManifest m,
                           const std::vector<std::string>& files) {
    save_config(cfg, dir / "config.json");
    m.kind      = "checkpoint";
    m.artifacts = files;
    m.artifacts.push_back("config.json");
    std::sort(m.artifacts.begin(), m.artifacts.end());
    m.finished_at = utc_timestamp();
    write_manifest(dir, m);
}

fs::path run_training(const ExperimentConfig& cfg, const CommandOptions& opt, Autoencoder& model, const TrainSpec& spec,
                      const std::string& command, const std::string& parent) {
    const bool resuming = !opt.resume.empty();
    fs::path run_dir    = opt.run_dir;
    if (resuming && run_dir.empty()) run_dir = opt.resume.parent_path().parent_path();
    prepare_run_dir(run_dir, resuming);

    const auto corpus = ingest(opt.data);
    const auto split  = split_corpus(corpus, opt.eval_count);
    ToyExtractor<float> extractor(cfg.extractor_seed);

    Trainer trainer(model, extractor, spec);
    if (resuming) trainer.restore(opt.resume);
    const long total = opt.steps >= 0 ? opt.steps : spec.steps;
    require(trainer.step_count() <= total, kModule,
            "checkpoint is at step " + std::to_string(trainer.step_count()) + ", past the target " + std::to_string(total));

    ExperimentManifest m = base_manifest(command, cfg);
    m.stage              = stage_name(spec.stage);
    m.seeds["train"]     = spec.seed;
    m.extractor          = extractor.identity();
    m.parent_checkpoint  = parent;
    m.resolution         = spec.target_resolution;
    m.extra              = {{"corpus", corpus.root.string()},
                            {"corpus_index", corpus.index_hash},
                            {"train_images", split.train.size()},
                            {"eval_images", split.eval.size()},
                            {"skipped", corpus.skipped}};
    if (resuming) m.extra["resumed_from"] = opt.resume.string();

    CsvLog log(run_dir / "logs.csv", trainer.step_count());
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::string> ckpts;
    auto save = [&](long step) {
        const fs::path dir = run_dir / "ckpt" / step_dir_name(step);
        trainer.save(dir);
        ExperimentManifest cm = m;
        cm.step               = step;
        cm.weights_hash       = model.hash();
        write_checkpoint_meta(dir, cfg, cm, {"weights.bin", "ema.bin", "optim.bin", "state.json"});
        ckpts.push_back(rel(dir, run_dir));
    };

    LossBreakdown last;
    while (trainer.step_count() < total) {
        last            = trainer.step(split.train);
        const long step = trainer.step_count();
        log.row(step, last, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        if (!opt.quiet && (step % 25 == 0 || step == total)) {
            std::cout << command << " step " << step << "/" << total << " " << describe(last) << std::endl;
        }
        if (spec.checkpoint_every > 0 && step % spec.checkpoint_every == 0 && step != total) save(step);
    }
    save(trainer.step_count());

    json summary = {{"step", trainer.step_count()},
                    {"weights_hash", model.hash()},
                    {"final_loss", {{"fm", last.fm}, {"lpips", last.lpips}, {"repa", last.repa}, {"kl", last.kl},
                                    {"total", last.total}}}};
    write_json(run_dir / "reports" / "summary.json", summary);

    // Earlier checkpoints of a resumed run stay listed.
    if (resuming && fs::exists(run_dir / "manifest.json")) {
        for (const auto& a : read_manifest(run_dir).artifacts) {
            if (a.rfind("ckpt/", 0) == 0 && std::find(ckpts.begin(), ckpts.end(), a) == ckpts.end()) ckpts.push_back(a);
        }
    }
    std::sort(ckpts.begin(), ckpts.end());
    m.step         = trainer.step_count();
    m.weights_hash = model.hash();
    m.artifacts    = {"logs.csv", "reports/summary.json"};
    m.artifacts.insert(m.artifacts.end(), ckpts.begin(), ckpts.end());
    m.finished_at = utc_timestamp();
    write_manifest(run_dir, m);
    return run_dir;
}

}  // namespace

std::string code_version() { return SSDD_CODE_VERSION; }

std::string utc_timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

json ExperimentManifest::to_json() const {
    return {{"kind", kind},
            {"command", command},
            {"config_hash", config_hash},
            {"code_version", code_version},
            {"stage", stage},
            {"seeds", seeds},
            {"extractor", extractor},
            {"parent_checkpoint", parent_checkpoint},
            {"resolution", resolution},
            {"step", step},
            {"weights_hash", weights_hash},
            {"artifacts", artifacts},
            {"extra", extra},
            {"started_at", started_at},
            {"finished_at", finished_at}};
}

ExperimentManifest ExperimentManifest::from_json(const json& doc) {
    ExperimentManifest m;
    try {
        m.kind              = doc.at("kind").get<std::string>();
        m.command           = doc.at("command").get<std::string>();
        m.config_hash       = doc.at("config_hash").get<std::string>();
        m.code_version      = doc.at("code_version").get<std::string>();
        m.stage             = doc.at("stage").get<std::string>();
        m.seeds             = doc.at("seeds").get<std::map<std::string, std::uint64_t>>();
        m.extractor         = doc.at("extractor").get<std::string>();
        m.parent_checkpoint = doc.at("parent_checkpoint").get<std::string>();
        m.resolution        = doc.at("resolution").get<int>();
        m.step              = doc.at("step").get<long>();
        m.weights_hash      = doc.at("weights_hash").get<std::string>();
        m.artifacts         = doc.at("artifacts").get<std::vector<std::string>>();
        m.extra             = doc.value("extra", json::object());
        m.started_at        = doc.value("started_at", "");
        m.finished_at       = doc.value("finished_at", "");
    } catch (const json::exception& e) {
        throw Error(std::string(kModule), std::string("malformed manifest: ") + e.what());
    }
    return m;
}

std::string ExperimentManifest::content_hash() const {
    auto doc = to_json();
    doc.erase("started_at");
    doc.erase("finished_at");
    return hash_hex(doc.dump());
}

void write_manifest(const fs::path& dir, const ExperimentManifest& manifest) {
    fs::create_directories(dir);
    auto doc            = manifest.to_json();
    doc["content_hash"] = manifest.content_hash();
    write_json(dir / "manifest.json", doc);
}

ExperimentManifest read_manifest(const fs::path& dir) {
    require(fs::exists(dir / "manifest.json"), kModule, "no manifest.json in " + dir.string());
    return ExperimentManifest::from_json(read_json(dir / "manifest.json"));
}

LoadedCheckpoint read_checkpoint(const fs::path& dir) {
    require(fs::is_directory(dir), kModule, "checkpoint " + dir.string() + " does not exist");
    LoadedCheckpoint c;
    c.dir      = dir;
    c.manifest = read_manifest(dir);
    require(c.manifest.kind == "checkpoint", kModule, dir.string() + " is a run directory, not a checkpoint");
    c.config = load_config(dir / "config.json");
    return c;
}

Autoencoder load_model(const LoadedCheckpoint& ckpt, int feature_dim, bool use_ema) {
    const auto& cfg = ckpt.config;
    Autoencoder model(cfg.model, cfg.encoder, ckpt.manifest.resolution, cfg.seed, feature_dim);
    model.load(load_archive(ckpt.dir / "weights.bin"));
    if (use_ema && fs::exists(ckpt.dir / "ema.bin")) model.load(load_archive(ckpt.dir / "ema.bin"), true);
    require(use_ema || model.hash() == ckpt.manifest.weights_hash, kModule,
            "weights in " + ckpt.dir.string() + " do not match the manifest hash");
    return model;
}

std::optional<fs::path> latest_checkpoint(const fs::path& run_dir) {
    static const std::regex pattern(R"(step_(\d+))");
    std::optional<fs::path> best;
    long best_step = -1;
    if (!fs::is_directory(run_dir / "ckpt")) return best;
    for (const auto& e : fs::directory_iterator(run_dir / "ckpt")) {
        std::smatch m;
        const std::string name = e.path().filename().string();
        if (e.is_directory() && std::regex_match(name, m, pattern) && std::stol(m[1]) > best_step) {
            best_step = std::stol(m[1]);
            best      = e.path();
        }
    }
    return best;
}

fs::path cmd_train(const ExperimentConfig& cfg, const CommandOptions& opt) {
    cfg.validate();
    ToyExtractor<float> extractor(cfg.extractor_seed);
    Autoencoder model(cfg.model, cfg.encoder, cfg.train.target_resolution, cfg.seed,
                      repa_feature_dim(extractor, cfg.train.target_resolution));
    std::string parent;
    if (!opt.init_encoder.empty() && opt.resume.empty()) {
        import_encoder(model.encoder, load_archive(opt.init_encoder), opt.encoder_prefix);
        parent = opt.init_encoder.string();
    }
    return run_training(cfg, opt, model, cfg.train, "train", parent);
}

fs::path cmd_finetune(const ExperimentConfig& cfg, const CommandOptions& opt) {
    cfg.validate();
    require(!opt.checkpoint.empty() || !opt.resume.empty(), kModule, "finetune needs a parent --checkpoint");
    ToyExtractor<float> extractor(cfg.extractor_seed);
    const int res = cfg.finetune.target_resolution;
    Autoencoder model(cfg.model, cfg.encoder, res, cfg.seed, repa_feature_dim(extractor, res));
    std::string parent;
    if (!opt.checkpoint.empty()) {
        const auto ckpt = read_checkpoint(opt.checkpoint);
        model.load(load_archive(ckpt.dir / "weights.bin"));
        // The encoder is frozen from here on; freeze its EMA copy.
        if (fs::exists(ckpt.dir / "ema.bin")) {
            WeightMap encoder_ema;
            for (auto& [name, t] : load_archive(ckpt.dir / "ema.bin")) {
                if (name.rfind("encoder/", 0) == 0) encoder_ema.emplace(name, std::move(t));
            }
            model.load(encoder_ema, true);
        }
        parent = ckpt.dir.string();
    } else {
        parent = read_manifest(opt.resume).parent_checkpoint;
    }
    return run_training(cfg, opt, model, cfg.finetune, "finetune", parent);
}

fs::path cmd_distill(const ExperimentConfig& cfg, const CommandOptions& opt) {
    cfg.validate();
    require(!opt.checkpoint.empty(), kModule, "distill needs a --checkpoint to use as the teacher");
    const auto ckpt = read_checkpoint(opt.checkpoint);
    const TrainSpec& base = spec_for(cfg, ckpt.manifest.stage);
    const int res         = ckpt.manifest.resolution;
    ToyExtractor<float> extractor(cfg.extractor_seed);
    Autoencoder model = load_model(ckpt, repa_feature_dim(extractor, res));

    prepare_run_dir(opt.run_dir, false);
    const auto corpus   = ingest(opt.data);
    const auto split    = split_corpus(corpus, opt.eval_count);
    const auto held_out = eval_images(opt.data, res, opt.eval_count);
    const std::uint64_t noise_seed = cfg.seed ^ 0x686f6c64ULL;

    Distiller distiller(model, extractor, cfg.distill, base);
    const double mse_before = distiller.student_teacher_mse(held_out, noise_seed);

    ExperimentManifest m = base_manifest("distill", cfg);
    m.stage              = "distill";
    m.seeds["train"]     = base.seed;
    m.seeds["held_out_noise"] = noise_seed;
    m.extractor          = extractor.identity();
    m.parent_checkpoint  = ckpt.dir.string();
    m.resolution         = res;

    const long total = opt.steps >= 0 ? opt.steps : cfg.distill.steps;
    CsvLog log(opt.run_dir / "logs.csv", 0);
    const auto t0 = std::chrono::steady_clock::now();
    while (distiller.step_count() < total) {
        const auto l    = distiller.step(split.train);
        const long step = distiller.step_count();
        log.row(step, l, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        if (!opt.quiet && (step % 25 == 0 || step == total)) {
            std::cout << "distill step " << step << "/" << total << " " << describe(l) << std::endl;
        }
    }
    const double mse_after = distiller.student_teacher_mse(held_out, noise_seed);

    const fs::path dir = opt.run_dir / "ckpt" / step_dir_name(distiller.step_count());
    distiller.save(dir);
    ExperimentManifest cm = m;
    cm.step               = distiller.step_count();
    cm.weights_hash       = model.hash();
    cm.extra              = {{"sampling_steps", 1}, {"distilled", true}};
    write_checkpoint_meta(dir, cfg, cm, {"weights.bin", "state.json"});

    json report = {{"teacher_steps", cfg.distill.teacher_steps},
                   {"teacher_rho", cfg.distill.teacher_rho},
                   {"teacher_hash", distiller.pair().teacher_hash},
                   {"steps", distiller.step_count()},
                   {"sync_checks", distiller.sync_checks()},
                   {"teacher_pool", distiller.pool_size()},
                   {"held_out_images", held_out.size()},
                   {"mse_student_teacher_before", mse_before},
                   {"mse_student_teacher_after", mse_after}};
    write_json(opt.run_dir / "reports" / "distill.json", report);
    if (!opt.quiet) {
        std::cout << "student/teacher mse " << mse_before << " -> " << mse_after << std::endl;
    }

    m.step         = distiller.step_count();
    m.weights_hash = model.hash();
    m.extra        = {{"distilled", true},
                      {"teacher_steps", cfg.distill.teacher_steps},
                      {"lpips_target", cfg.distill.lpips_target == LpipsTarget::teacher ? "teacher" : "original"}};
    m.artifacts    = {"logs.csv", "reports/distill.json", rel(dir, opt.run_dir)};
    m.finished_at  = utc_timestamp();
    write_manifest(opt.run_dir, m);
    return opt.run_dir;
}

fs::path cmd_sample(const CommandOptions& opt, const SampleOptions& so) {
    require(!opt.checkpoint.empty(), kModule, "sample needs a --checkpoint");
    require(so.draws >= 1, kModule, "sample needs at least one draw per latent");
    const auto ckpt = read_checkpoint(opt.checkpoint);
    const auto& cfg = ckpt.config;
    const int res   = ckpt.manifest.resolution;
    ToyExtractor<float> extractor(cfg.extractor_seed);
    const Autoencoder model = load_model(ckpt, repa_feature_dim(extractor, res), opt.use_ema);

    const int default_steps = ckpt.manifest.extra.value("sampling_steps", cfg.sample.n_steps);
    const auto schedule     = make_schedule(so.steps.value_or(default_steps), so.rho.value_or(cfg.sample.rho));

    Tensor<float> z;
    if (!so.latents.empty()) {
        const auto archive = load_archive(so.latents);
        auto it            = archive.find("z");
        require(it != archive.end() && it->second.rank() == 4, kModule, "latent archive needs a rank-4 entry named z");
        require(it->second.dim(1) == cfg.encoder.c, kModule,
                "latents have " + std::to_string(it->second.dim(1)) + " channels, the model expects " +
                    std::to_string(cfg.encoder.c));
        z = it->second;
    } else {
        require(!opt.data.empty(), kModule, "sample needs --data or --latents");
        const auto images = ingest(opt.data, eval_policy(res)).images;
        ag::NoGradGuard guard;
        z = mode_latent(model.encoder.encode(stack_batch(images, false)), model.encoder.spec()).values.value();
    }

    prepare_run_dir(opt.run_dir, false);
    fs::create_directories(opt.run_dir / "reports" / "samples");
    Rng rng(so.seed);
    const Shape eps_shape = {z.dim(0), 3, z.dim(2) * cfg.encoder.f, z.dim(3) * cfg.encoder.f};
    std::vector<std::string> files;
    for (int d = 0; d < so.draws; ++d) {
        const auto eps = randn<float>(eps_shape, rng);
        const auto out = sample(model.decoder, eps, z, schedule);
        for (int i = 0; i < out.dim(0); ++i) {
            char name[48];
            std::snprintf(name, sizeof name, "sample_%03d_d%02d.png", i, d);
            save_png(opt.run_dir / "reports" / "samples" / name, out.batch_slice(i, 1).reshaped({3, out.dim(2), out.dim(3)}));
            files.push_back(std::string("reports/samples/") + name);
        }
    }

    ExperimentManifest m = base_manifest("sample", cfg);
    m.stage              = ckpt.manifest.stage;
    m.seeds["noise"]     = so.seed;
    m.extractor          = extractor.identity();
    m.parent_checkpoint  = ckpt.dir.string();
    m.resolution         = eps_shape[2];
    m.weights_hash       = model.hash();
    m.extra              = {{"n_steps", schedule.n_steps}, {"rho", schedule.rho}, {"use_ema", opt.use_ema}};
    m.artifacts          = files;
    m.finished_at        = utc_timestamp();
    write_manifest(opt.run_dir, m);
    return opt.run_dir;
}

fs::path cmd_eval(const CommandOptions& opt, const EvalOptions& eo) {
    std::vector<Tensor<float>> reference, recon;
    ExperimentManifest m;
    std::uint64_t extractor_seed = eo.extractor_seed;
    std::vector<std::string> recon_files;

    if (!eo.reference.empty() || !eo.reconstruction.empty()) {
        require(!eo.reference.empty() && !eo.reconstruction.empty(), kModule,
                "directory evaluation needs both --reference and --reconstruction");
        reference = ingest(eo.reference).images;
        recon     = ingest(eo.reconstruction).images;
        require(reference.size() == recon.size(), kModule,
                "reference has " + std::to_string(reference.size()) + " images, reconstruction " +
                    std::to_string(recon.size()));
        ExperimentConfig cfg;
        cfg.extractor_seed = extractor_seed;
        m                  = base_manifest("eval", cfg);
        m.config_hash      = hash_hex(eo.reference.string() + "\n" + eo.reconstruction.string());
        m.extra            = {{"reference", eo.reference.string()}, {"reconstruction", eo.reconstruction.string()}};
        prepare_run_dir(opt.run_dir, false);
    } else {
        require(!opt.checkpoint.empty() && !opt.data.empty(), kModule,
                "eval needs --checkpoint with --data, or --reference with --reconstruction");
        const auto ckpt = read_checkpoint(opt.checkpoint);
        const auto& cfg = ckpt.config;
        extractor_seed  = cfg.extractor_seed;
        const int res   = ckpt.manifest.resolution;
        ToyExtractor<float> extractor(extractor_seed);
        const Autoencoder model = load_model(ckpt, repa_feature_dim(extractor, res), opt.use_ema);
        const int default_steps = ckpt.manifest.extra.value("sampling_steps", cfg.sample.n_steps);
        const auto schedule     = make_schedule(eo.steps.value_or(default_steps), eo.rho.value_or(cfg.sample.rho));
        reference               = eval_images(opt.data, res, opt.eval_count);
        recon                   = reconstruct(model, reference, schedule, eo.seed);

        m                   = base_manifest("eval", cfg);
        m.stage             = ckpt.manifest.stage;
        m.parent_checkpoint = ckpt.dir.string();
        m.resolution        = res;
        m.weights_hash      = model.hash();
        m.seeds["noise"]    = eo.seed;
        m.extra             = {{"n_steps", schedule.n_steps}, {"rho", schedule.rho}, {"eval_count", opt.eval_count},
                               {"use_ema", opt.use_ema}};
        prepare_run_dir(opt.run_dir, false);
        fs::create_directories(opt.run_dir / "reports" / "recon");
        for (std::size_t i = 0; i < recon.size(); ++i) {
            char name[32];
            std::snprintf(name, sizeof name, "recon_%03zu.png", i);
            save_png(opt.run_dir / "reports" / "recon" / name, recon[i]);
            recon_files.push_back(std::string("reports/recon/") + name);
        }
    }

    ToyExtractor<float> extractor(extractor_seed);
    const auto report = evaluate_sets(reference, recon, extractor, m.config_hash);
    write_json(opt.run_dir / "reports" / "metrics.json", report.to_json());
    if (!opt.quiet) std::cout << report.to_json().dump(2) << std::endl;

    m.extractor = extractor.identity();
    m.artifacts = {"reports/metrics.json"};
    m.artifacts.insert(m.artifacts.end(), recon_files.begin(), recon_files.end());
    m.finished_at = utc_timestamp();
    write_manifest(opt.run_dir, m);
    return opt.run_dir;
}

fs::path cmd_sweep(const CommandOptions& opt, const SweepOptions& so) {
    require(!opt.checkpoint.empty() && !opt.data.empty(), kModule, "sweep needs --checkpoint and --data");
    const auto ckpt = read_checkpoint(opt.checkpoint);
    const auto& cfg = ckpt.config;
    const int res   = ckpt.manifest.resolution;
    ToyExtractor<float> extractor(cfg.extractor_seed);
    const Autoencoder model = load_model(ckpt, repa_feature_dim(extractor, res), opt.use_ema);
    const auto reference    = eval_images(opt.data, res, opt.eval_count);

    const auto rows = step_sweep<float>(
        [&](const SampleSchedule& s) { return reconstruct(model, reference, s, so.seed); }, reference, so.steps,
        so.rhos, extractor);

    prepare_run_dir(opt.run_dir, false);
    write_text(opt.run_dir / "reports" / "sweep.csv", sweep_csv(rows));
    json doc = json::array();
    for (const auto& r : rows) doc.push_back({{"N", r.n_steps}, {"rho", r.rho}, {"metrics", r.report.to_json()}});
    write_json(opt.run_dir / "reports" / "sweep.json", doc);
    if (!opt.quiet) std::cout << sweep_csv(rows);

    ExperimentManifest m = base_manifest("sweep", cfg);
    m.stage              = ckpt.manifest.stage;
    m.seeds["noise"]     = so.seed;
    m.extractor          = extractor.identity();
    m.parent_checkpoint  = ckpt.dir.string();
    m.resolution         = res;
    m.weights_hash       = model.hash();
    m.extra              = {{"steps", so.steps}, {"rhos", so.rhos}, {"eval_count", opt.eval_count}};
    m.artifacts          = {"reports/sweep.csv", "reports/sweep.json"};
    m.finished_at        = utc_timestamp();
    write_manifest(opt.run_dir, m);
    return opt.run_dir;
}

fs::path cmd_demo_tradeoff(const CommandOptions& opt, long samples, std::uint64_t seed) {
    const auto report = run_toy_experiment(samples, seed);
    prepare_run_dir(opt.run_dir, false);
    write_json(opt.run_dir / "reports" / "tradeoff.json", report.to_json());
    write_text(opt.run_dir / "reports" / "tradeoff.txt", tradeoff_table(report));
    if (!opt.quiet) {
        std::cout << report.to_json().dump(2) << "\n" << tradeoff_table(report) << "tradeoff holds: " << (verify_tradeoff(report) ? "yes" : "no")
                  << std::endl;
    }

    ExperimentConfig cfg;
    ExperimentManifest m = base_manifest("demo_tradeoff", cfg);
    m.config_hash        = hash_hex("demo_tradeoff/" + std::to_string(samples));
    m.seeds              = {{"toy", seed}};
    m.extra              = {{"samples", samples}, {"verified", verify_tradeoff(report)}};
    m.artifacts          = {"reports/tradeoff.json", "reports/tradeoff.txt"};
    m.finished_at        = utc_timestamp();
    write_manifest(opt.run_dir, m);
    return opt.run_dir;
}

std::string cmd_describe(const ExperimentConfig& cfg, int resolution) {
    const Decoder<float> decoder(cfg.model, cfg.encoder, resolution, cfg.seed);
    const Encoder<float> encoder(cfg.model, cfg.encoder, cfg.seed);
    const auto& store  = decoder.params();
    const auto& layout = decoder.layout();
    std::ostringstream os;
    os << "decoder " << cfg.model.name() << " at " << resolution << "x" << resolution << ", encoder "
       << cfg.encoder.name() << "\n";
    os << "widths " << layout.widths[0] << "/" << layout.widths[1] << "/" << layout.widths[2] << "/"
       << layout.widths[3] << ", transformer " << layout.num_blocks << " blocks x " << layout.token_width << " ("
       << layout.heads << " heads)\n";
    auto line = [&](const std::string& label, std::size_t n) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "  %-22s %12zu\n", label.c_str(), n);
        os << buf;
    };
    std::size_t listed = 0;
    for (const char* p : {"decoder/time_embed/", "decoder/latent_embed/", "decoder/conv_in"}) {
        line(std::string(p).substr(8), store.count(p));
        listed += store.count(p);
    }
    for (int l = 0; l < 4; ++l) {
        const std::string p = "decoder/down" + std::to_string(l) + "/";
        line("down" + std::to_string(l), store.count(p));
        listed += store.count(p);
    }
    line("transformer", store.count("decoder/transformer/"));
    listed += store.count("decoder/transformer/");
    for (int l = 3; l >= 0; --l) {
        const std::string p = "decoder/up" + std::to_string(l) + "/";
        line("up" + std::to_string(l), store.count(p));
        listed += store.count(p);
    }
    line("output", store.count() - listed);
    line("decoder total", store.count());
    line("encoder total", encoder.params().count());
    return os.str();
}

}  // namespace ssdd
