// mvnet command-line driver.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <regex>

#include <CLI11.hpp>
#include <json.hpp>

#include "mvnet/binary_io.hpp"
#include "mvnet/error.hpp"
#include "mvnet/parallel.hpp"
#include "mvnet/pipeline/checkpoint.hpp"
#include "mvnet/pipeline/config.hpp"
#include "mvnet/pipeline/dataset.hpp"
#include "mvnet/pipeline/diagnostics.hpp"
#include "mvnet/pipeline/evaluate.hpp"
#include "mvnet/pipeline/probe.hpp"
#include "mvnet/pipeline/scene.hpp"
#include "mvnet/pipeline/trainer.hpp"

using namespace mvnet;
using namespace mvnet::pipeline;
namespace fs = std::filesystem;

namespace {

void write_json(const std::string& path, const nlohmann::json& j) {
  const std::string text = j.dump(2) + "\n";
  io::write_file(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::pair<int, int> parse_resolution(const std::string& s) {
  std::smatch m;
  static const std::regex re(R"((\d+)[xX](\d+))");
  if (!std::regex_match(s, m, re)) fail(ErrorCode::kInvalidInput, "--res expects HxW, got '" + s + "'");
  return {std::stoi(m[1]), std::stoi(m[2])};
}

int gen_scenes(const std::string& out, int scenes, int frames, const std::string& res, std::uint64_t seed,
               int objects) {
  const auto [h, w] = parse_resolution(res);
  const Dataset data = synthetic_dataset(seed, scenes, frames, h, w, objects,
                                        [](const std::string& msg) { std::cerr << "warning: " << msg << "\n"; });
  for (const auto& scene : data.scenes) {
    save_scene((fs::path(out) / scene.name).string(), scene);
    std::cout << scene.name << ": " << scene.frames.size() << " frames\n";
  }
  return 0;
}

int pretrain(const std::string& data_dir, const std::string& config_path, const std::string& out, bool deterministic,
             int log_every) {
  if (deterministic) set_threads(0);
  const TrainConfig cfg = config_path.empty() ? TrainConfig{} : load_config(config_path);
  const Dataset data = load_dataset(data_dir);
  Trainer trainer(cfg, data);
  const std::size_t steps = cfg.steps_for(data.frame_count());
  std::cout << "training " << steps << " steps on " << data.scenes.size() << " scenes ("
            << (deterministic_mode() ? "deterministic" : std::to_string(kernel_threads()) + " threads") << ")\n";
  const auto t0 = std::chrono::steady_clock::now();
  trainer.run(steps, [&](std::size_t step, const LossReport& r) {
    if (log_every > 0 && (step % std::size_t(log_every) == 0 || step + 1 == steps)) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::printf("step %5zu  L2d %.4f  Lm %.5f  total %.4f  (%.1fs)\n", step, r.l2d, r.lm, r.total, secs);
      std::fflush(stdout);
    }
  });
  save_checkpoint(out, trainer.checkpoint());
  std::cout << "wrote " << out << "\n";
  return 0;
}

int eval_corr(const std::string& ckpt_path, const std::string& data_dir, const std::string& report_path,
              std::uint64_t seed, int pairs_per_scene) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  auto trained = models_from_checkpoint(ckpt);
  Models untrained(trained->config);
  const Dataset data = load_dataset(data_dir);
  const auto a = evaluate_correspondence(*trained, data, seed, pairs_per_scene);
  const auto b = evaluate_correspondence(untrained, data, seed, pairs_per_scene);
  const nlohmann::json report = {{"checkpoint", ckpt_path},
                                 {"data", data_dir},
                                 {"seed", seed},
                                 {"trained", to_json(a)},
                                 {"untrained", to_json(b)},
                                 {"ratio", a.mean_error_px / b.mean_error_px}};
  write_json(report_path, report);
  std::printf("mean correspondence error %.3f px (untrained %.3f px) over %zu pairs\n", a.mean_error_px,
              b.mean_error_px, a.pairs);
  return 0;
}

int export_feats(const std::string& ckpt_path, const std::string& scene_dir, const std::string& out) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  auto encoder = encoder_from_checkpoint(ckpt);
  export_features(*encoder, load_scene(scene_dir), config_from_checkpoint(ckpt), out);
  std::cout << "wrote " << out << "\n";
  return 0;
}

int probe(const std::string& ckpt_path, const std::string& data_dir, int seeds) {
  if (seeds < 1) fail(ErrorCode::kInvalidInput, "--seeds must be positive");
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const TrainConfig cfg = config_from_checkpoint(ckpt);
  auto pretrained = encoder_from_checkpoint(ckpt);
  const Dataset data = load_dataset(data_dir);
  int wins = 0;
  for (int s = 0; s < seeds; ++s) {
    ProbeOptions opts;
    opts.seed = std::uint64_t(s);
    const auto p = linear_probe(*pretrained, data, cfg, opts);
    nn::Rng rng(std::uint64_t(s) + 1);
    Encoder3d<float> random_init(cfg.encoder, rng);
    const auto q = linear_probe(random_init, data, cfg, opts);
    const bool win = p.test_accuracy > q.test_accuracy;
    wins += win;
    std::printf("seed %2d  pretrained %.4f  random-init %.4f  %s\n", s, p.test_accuracy, q.test_accuracy,
                win ? "win" : "loss");
  }
  std::printf("pretrained wins %d of %d\n", wins, seeds);
  return 0;
}

int grad_check(const std::string& module) {
  const auto entries = run_gradient_suite(module);
  bool ok = true;
  for (const auto& e : entries) {
    std::printf("%-4s %-10s %-28s max rel err %.3e (%.2fs)\n", e.passed() ? "ok" : "FAIL", e.module.c_str(),
                e.name.c_str(), e.max_error, e.seconds);
    ok = ok && e.passed();
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mvnet: multi-view 3D pre-training at desk scale"};
  app.require_subcommand(1);

  std::string out, data, config, ckpt, report, scene, res = "32x32", module = "all";
  int scenes = 8, frames = 8, objects = 3, seeds = 10, log_every = 10, pairs_per_scene = 4;
  std::uint64_t seed = 0;
  bool deterministic = false;

  auto* gen = app.add_subcommand("gen-scenes", "render synthetic RGB-D scenes");
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--scenes", scenes, "number of scenes");
  gen->add_option("--frames-per-scene", frames, "frames per scene");
  gen->add_option("--res", res, "resolution HxW");
  gen->add_option("--seed", seed, "generator seed");
  gen->add_option("--objects", objects, "boxes per room");

  auto* pre = app.add_subcommand("pretrain", "pre-train encoder, student and decoder");
  pre->add_option("--data", data, "dataset directory")->required();
  pre->add_option("--config", config, "training config JSON (defaults when omitted)");
  pre->add_option("--out", out, "checkpoint path")->required();
  pre->add_flag("--deterministic", deterministic, "single thread, no producer thread");
  pre->add_option("--log-every", log_every, "print every N steps (0 = quiet)");

  auto* ev = app.add_subcommand("eval-corr", "held-out correspondence error");
  ev->add_option("--ckpt", ckpt, "checkpoint")->required();
  ev->add_option("--data", data, "dataset directory")->required();
  ev->add_option("--report", report, "JSON report path")->required();
  ev->add_option("--seed", seed, "pair sampling seed");
  ev->add_option("--pairs-per-scene", pairs_per_scene, "pairs drawn per scene");

  auto* ex = app.add_subcommand("export-features", "write per-point features of one scene");
  ex->add_option("--ckpt", ckpt, "checkpoint")->required();
  ex->add_option("--scene", scene, "scene directory")->required();
  ex->add_option("--out", out, "output file")->required();

  auto* pr = app.add_subcommand("probe", "linear probe: pre-trained vs random-init features");
  pr->add_option("--ckpt", ckpt, "checkpoint")->required();
  pr->add_option("--data", data, "labeled dataset directory")->required();
  pr->add_option("--seeds", seeds, "paired seeds");

  auto* gc = app.add_subcommand("grad-check", "finite-difference gradient checks");
  gc->add_option("--module", module, "layers, encoder3d, student, decoder or all");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return gen_scenes(out, scenes, frames, res, seed, objects);
    if (*pre) return pretrain(data, config, out, deterministic, log_every);
    if (*ev) return eval_corr(ckpt, data, report, seed, pairs_per_scene);
    if (*ex) return export_feats(ckpt, scene, out);
    if (*pr) return probe(ckpt, data, seeds);
    if (*gc) return grad_check(module);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
