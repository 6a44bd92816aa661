#include "ssdd/experiment.hpp"
#include "ssdd/error.hpp"
#include "ssdd/io.hpp"

#include "../helpers.hpp"

#include <doctest.h>

#include <cstdlib>
#include <map>
#include <set>

using namespace ssdd;
namespace fs = std::filesystem;

namespace {

ExperimentConfig smoke_config() {
    ExperimentConfig cfg;
    cfg.name                     = "smoke";
    cfg.train.target_resolution  = 16;
    cfg.train.resize_min         = 16;
    cfg.train.resize_max         = 24;
    cfg.train.batch_size         = 2;
    cfg.train.steps              = 3;
    cfg.train.checkpoint_every   = 2;
    cfg.finetune                 = cfg.train;
    cfg.finetune.stage           = Stage::finetune_fixed;
    cfg.finetune.joint_encoder   = false;
    cfg.finetune.steps           = 2;
    cfg.finetune.checkpoint_every = 0;
    cfg.distill.steps            = 2;
    cfg.distill.batch_size       = 2;
    cfg.distill.teacher_steps    = 3;
    cfg.sample.n_steps           = 2;
    return cfg;
}

// Maps every regular file under root (other than manifests) to the number of
// manifests that list it.
std::map<fs::path, int> manifest_ownership(const fs::path& root) {
    std::map<fs::path, int> owners;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file() && e.path().filename() != "manifest.json") owners[fs::weakly_canonical(e.path())] = 0;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file() || e.path().filename() != "manifest.json") continue;
        for (const auto& a : read_manifest(e.path().parent_path()).artifacts) {
            const auto p = fs::weakly_canonical(e.path().parent_path() / a);
            if (fs::is_directory(p)) CHECK(fs::exists(p / "manifest.json"));
            else ++owners[p];
        }
    }
    return owners;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(SSDD_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status      = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

}  // namespace

TEST_SUITE("experiment") {

TEST_CASE("manifest serialization") {
    ExperimentManifest m;
    m.kind        = "run";
    m.command     = "train";
    m.config_hash = "abc";
    m.seeds       = {{"model", 1}};
    m.artifacts   = {"logs.csv"};
    m.started_at  = "t0";
    const auto back = ExperimentManifest::from_json(m.to_json());
    CHECK(back.to_json() == m.to_json());
    auto later       = m;
    later.started_at = "t1";
    later.finished_at = "t2";
    CHECK(later.content_hash() == m.content_hash());
    later.step = 4;
    CHECK(later.content_hash() != m.content_hash());
    const auto dir = testing::temp_dir("manifest");
    write_manifest(dir, m);
    CHECK(read_json(dir / "manifest.json").at("content_hash") == m.content_hash());
    CHECK(read_manifest(dir).content_hash() == m.content_hash());
    CHECK_FALSE(code_version().empty());
}

TEST_CASE("train, finetune, distill, sample, eval and sweep") {
    const auto root = testing::temp_dir("pipeline");
    const auto data = root / "data";
    make_toy_corpus(data, 6, 24, 3);
    const auto cfg = smoke_config();

    CommandOptions opt;
    opt.data       = data;
    opt.eval_count = 2;
    opt.quiet      = true;
    opt.run_dir    = root / "train";
    const auto train_dir = cmd_train(cfg, opt);
    CHECK(fs::exists(train_dir / "ckpt" / "step_2" / "manifest.json"));
    const auto ckpt = latest_checkpoint(train_dir);
    REQUIRE(ckpt.has_value());
    CHECK(ckpt->filename() == "step_3");
    const auto train_m = read_manifest(train_dir);
    CHECK(train_m.kind == "run");
    CHECK(train_m.step == 3);
    CHECK(train_m.config_hash == config_hash(cfg));
    CHECK(read_checkpoint(*ckpt).config == cfg);
    CHECK_THROWS_AS(cmd_train(cfg, opt), Error);  // run directory already used

    opt.run_dir    = root / "finetune";
    opt.checkpoint = *ckpt;
    const auto ft_dir  = cmd_finetune(cfg, opt);
    const auto ft_ckpt = *latest_checkpoint(ft_dir);
    CHECK(read_manifest(ft_dir).parent_checkpoint == ckpt->string());
    CHECK(read_manifest(ft_dir).stage == "finetune_fixed");

    opt.run_dir    = root / "distill";
    opt.checkpoint = ft_ckpt;
    const auto d_dir = cmd_distill(cfg, opt);
    const auto d_m   = read_manifest(d_dir);
    CHECK(d_m.extra.at("distilled") == true);
    const auto d_report = read_json(d_dir / "reports" / "distill.json");
    CHECK(d_report.at("sync_checks") == 2);
    const auto d_ckpt = *latest_checkpoint(d_dir);

    opt.run_dir    = root / "eval";
    opt.checkpoint = d_ckpt;
    const auto e_dir = cmd_eval(opt, EvalOptions{});
    const auto metrics = read_json(e_dir / "reports" / "metrics.json");
    CHECK(metrics.at("n_images") == 2);
    CHECK(read_manifest(e_dir).extra.at("n_steps") == 1);

    opt.run_dir = root / "eval_again";
    cmd_eval(opt, EvalOptions{});
    CHECK(read_text(root / "eval_again" / "reports" / "metrics.json") == read_text(e_dir / "reports" / "metrics.json"));
    CHECK(read_manifest(root / "eval_again").content_hash() == read_manifest(e_dir).content_hash());

    opt.run_dir = root / "sample";
    SampleOptions so;
    so.draws = 2;
    const auto s_dir = cmd_sample(opt, so);
    CHECK(fs::exists(s_dir / "reports" / "samples" / "sample_000_d01.png"));

    opt.run_dir = root / "sweep";
    SweepOptions sw;
    sw.steps = {1, 2};
    sw.rhos  = {2.0};
    const auto sw_dir = cmd_sweep(opt, sw);
    CHECK(read_text(sw_dir / "reports" / "sweep.csv").rfind("N,rho,psnr", 0) == 0);

    for (const auto& [file, count] : manifest_ownership(root)) {
        if (file.string().find("/data/") != std::string::npos) continue;
        INFO(file.string());
        CHECK(count == 1);
    }
}

TEST_CASE("resumed training matches an uninterrupted run") {
    const auto root = testing::temp_dir("resume_cmd");
    const auto data = root / "data";
    make_toy_corpus(data, 4, 24, 5);
    auto cfg                   = smoke_config();
    cfg.train.steps            = 4;
    cfg.train.checkpoint_every = 2;

    CommandOptions opt;
    opt.data    = data;
    opt.quiet   = true;
    opt.run_dir = root / "full";
    cmd_train(cfg, opt);

    opt.run_dir = root / "part";
    opt.steps   = 2;
    cmd_train(cfg, opt);
    CommandOptions resume = opt;
    resume.run_dir.clear();
    resume.steps  = 4;
    resume.resume = root / "part" / "ckpt" / "step_2";
    const auto dir = cmd_train(cfg, resume);
    CHECK(fs::equivalent(dir, root / "part"));
    CHECK(read_manifest(root / "part").weights_hash == read_manifest(root / "full").weights_hash);
    CHECK(read_manifest(root / "part" / "ckpt" / "step_4").weights_hash ==
          read_manifest(root / "full" / "ckpt" / "step_4").weights_hash);
    CHECK(read_text(root / "part" / "ckpt" / "step_4" / "weights.bin") ==
          read_text(root / "full" / "ckpt" / "step_4" / "weights.bin"));
    const auto log = read_text(root / "part" / "logs.csv");
    CHECK(std::count(log.begin(), log.end(), '\n') == 5);
}

TEST_CASE("directory evaluation of identical sets") {
    const auto root = testing::temp_dir("eval_dirs");
    make_toy_corpus(root / "a", 6, 16, 1);
    CommandOptions opt;
    opt.quiet   = true;
    opt.run_dir = root / "run";
    EvalOptions eo;
    eo.reference      = root / "a";
    eo.reconstruction = root / "a";
    cmd_eval(opt, eo);
    const auto m = read_json(root / "run" / "reports" / "metrics.json");
    CHECK(m.at("psnr") == 100.0);
    CHECK(m.at("frechet").get<double>() == doctest::Approx(0).scale(1));
    CHECK(m.at("coverage") == 1.0);
}

TEST_CASE("toy tradeoff and describe") {
    const auto root = testing::temp_dir("demo");
    CommandOptions opt;
    opt.quiet   = true;
    opt.run_dir = root / "demo";
    cmd_demo_tradeoff(opt, 20000, 1);
    CHECK(read_manifest(root / "demo").extra.at("verified") == true);
    CHECK(read_json(root / "demo" / "reports" / "tradeoff.json").at("n_samples") == 20000);
    const auto text = cmd_describe(ExperimentConfig{}, 32);
    CHECK(text.find("decoder total") != std::string::npos);
    CHECK(text.find("8844067") != std::string::npos);
}

TEST_CASE("command-line tool") {
    const auto root = testing::temp_dir("cli");
    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("describe --resolution 64") == 0);
    CHECK(run_cli("make-toy-corpus " + (root / "toy").string() + " --count 3 --size 16") == 0);
    CHECK(run_cli("eval --reference " + (root / "toy").string() + " --reconstruction " + (root / "toy").string() +
                  " --run-dir " + (root / "ev").string() + " --quiet") == 0);
    CHECK(run_cli("eval --reference " + (root / "missing").string() + " --reconstruction x --run-dir " +
                  (root / "bad").string()) == 1);
    CHECK(run_cli("train --config " + (root / "nope.json").string()) == 1);
    CHECK(run_cli("--isa sse9 describe") == 1);
    CHECK(run_cli("frobnicate") != 0);
}

}
