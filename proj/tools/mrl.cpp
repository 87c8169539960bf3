// mrl: command-line harness.
//
//   mrl gradcheck    [--seed N] [--seeds K]
//   mrl equivariance [--seed N] [--seeds K]
//   mrl cost         [--spec NAME] [--input N] [--out DIR]
//   mrl train        [--config PATH] [--seed N] [--spec NAME] [--out DIR]
//   mrl eval         [--config PATH] [--seed N] [--spec NAME] [--out DIR]
//                    [--checkpoint PATH] [--transform identity|rot90]
//
// Exit status: 0 success, 1 suite or run failure, 2 usage error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mrl/mrl.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> spec;
  std::optional<mrl::Index> input;
  std::optional<std::string> out;
  std::optional<std::string> checkpoint;
  std::optional<std::string> transform;
  mrl::Index seeds = 0;
};

mrl::RunConfig resolve_unchecked(const Options& o) {
  mrl::RunConfig c = o.config.empty() ? mrl::parse_run_config(mrl::Json::object()) : mrl::load_run_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.spec) c.model = mrl::preset_spec(*o.spec);
  if (o.out) c.output_dir = *o.out;
  if (o.checkpoint) c.checkpoint = *o.checkpoint;
  if (o.transform) c.transform = mrl::parse_transform(*o.transform);
  c.finalize();
  return c;
}

// Config file plus command-line overrides. Any problem is a config error.
mrl::RunConfig resolve(const Options& o) {
  try {
    return resolve_unchecked(o);
  } catch (const mrl::Error& e) {
    if (e.kind() == mrl::ErrorKind::kConfig) throw;
    mrl::fail(mrl::ErrorKind::kConfig, e.what());
  }
}

int run_suite(const mrl::SuiteResult& result) {
  std::cout << result.table();
  std::cout << (result.passed() ? "all gating rows PASS\n" : "suite FAILED\n");
  return result.passed() ? kOk : kFailure;
}

int run_cost(const Options& o) {
  const mrl::ModelSpec spec = mrl::preset_spec(o.spec.value_or("mrl-cvt-13"));
  const mrl::Index input = o.input.value_or(spec.input_size);
  const mrl::VariantComparison c = mrl::compare_variants(spec, input);
  std::cout << mrl::comparison_summary(c);
  if (o.out) {
    const std::filesystem::path dir(*o.out);
    std::filesystem::create_directories(dir);
    mrl::write_text(dir / "cost_sa.csv", mrl::to_csv(c.sa));
    mrl::write_text(dir / "cost_mrl.csv", mrl::to_csv(c.mrl));
    mrl::write_text(dir / "cost_cq_mrl.csv", mrl::to_csv(c.cq_mrl));
    mrl::write_text(dir / "cost.json", mrl::to_json(c).dump(2) + "\n");
    std::cout << "# per-layer reports written to " << dir.string() << "\n";
  }
  return kOk;
}

int run_train(const Options& o) {
  const mrl::RunConfig config = resolve(o);
  std::printf("training %s (%s) for %zu epochs, seed %llu\n", config.model.name.c_str(),
              mrl::variant_label(config.model).c_str(), config.epochs, static_cast<unsigned long long>(config.seed));
  const mrl::TrainResult result = mrl::train(config, [](const mrl::EpochMetrics& m) {
    std::printf("epoch %zu  train_loss %.6f  test_acc %.4f  (%.1fs)\n", m.epoch, m.train_loss, m.test_acc,
                m.wall_seconds);
    std::fflush(stdout);
  });
  std::printf("metrics: %s\ncheckpoint: %s\n", result.metrics_path.string().c_str(),
              result.checkpoint_path.string().c_str());
  return kOk;
}

int run_eval(const Options& o) {
  const mrl::RunConfig config = resolve(o);
  const double acc = mrl::evaluate(config);
  std::printf("accuracy %.6f (%s split, %s transform, %s)\n", acc, config.eval_split.c_str(),
              mrl::to_string(config.transform), config.checkpoint_path().string().c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MRL blocks: verification suites, cost model and desk-scale training"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* cmd, bool run_options) {
    cmd->add_option("--seed", o.seed, "Random seed");
    if (run_options) {
      cmd->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
      cmd->add_option("--spec", o.spec, "Model preset (mrl-tiny, mrl-cvt-13, mrl-cvt-21)");
      cmd->add_option("--out", o.out, "Output directory");
    }
  };
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference checks of every layer and the block");
  add_common(gradcheck, false);
  gradcheck->add_option("--seeds", o.seeds, "Number of consecutive seeds (default 5)");
  CLI::App* equivariance = app.add_subcommand("equivariance", "p4 rotation equivariance identities");
  add_common(equivariance, false);
  equivariance->add_option("--seeds", o.seeds, "Number of consecutive seeds (default 10)");
  CLI::App* cost = app.add_subcommand("cost", "Parameter and FLOP accounting for SA, MRL and CQ+MRL");
  cost->add_option("--spec", o.spec, "Model preset (default mrl-cvt-13)");
  cost->add_option("--input", o.input, "Input size (default: the preset's)");
  cost->add_option("--out", o.out, "Directory for per-layer CSV and JSON reports");
  CLI::App* train = app.add_subcommand("train", "Train on oriented bars; writes metrics and a checkpoint");
  add_common(train, true);
  CLI::App* eval = app.add_subcommand("eval", "Accuracy of a checkpoint");
  add_common(eval, true);
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint path (default <out>/model.ckpt)");
  eval->add_option("--transform", o.transform, "identity or rot90");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*gradcheck) return run_suite(mrl::gradcheck_suite(o.seed.value_or(1), o.seeds ? o.seeds : 5));
    if (*equivariance) return run_suite(mrl::equivariance_suite(o.seed.value_or(1), o.seeds ? o.seeds : 10));
    if (*cost) return run_cost(o);
    if (*train) return run_train(o);
    if (*eval) return run_eval(o);
  } catch (const mrl::Error& e) {
    std::cerr << "mrl: " << e.what() << "\n";
    const bool usage = e.kind() == mrl::ErrorKind::kConfig || e.kind() == mrl::ErrorKind::kUsage ||
                       e.kind() == mrl::ErrorKind::kBuild;
    return usage ? kUsage : kFailure;
  } catch (const std::exception& e) {
    std::cerr << "mrl: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}
