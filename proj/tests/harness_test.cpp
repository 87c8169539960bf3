#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include "mrl/mrl.hpp"
#include "test_util.hpp"

namespace mrl {
namespace {

namespace fs = std::filesystem;
using test::bit_identical;
using test::throws_kind;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("mrl_harness_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

DatasetSpec small_dataset() {
  DatasetSpec d;
  d.train_count = 64;
  d.test_count = 32;
  return d;
}

RunConfig small_run(const fs::path& dir) {
  RunConfig c;
  c.epochs = 2;
  c.output_dir = dir.string();
  c.dataset = small_dataset();
  c.finalize();
  return c;
}

// ---------------------------------------------------------------- dataset

TEST(SynthDataset, DeterministicPerSeed) {
  const auto [a_train, a_test] = synth_dataset(small_dataset(), 5);
  const auto [b_train, b_test] = synth_dataset(small_dataset(), 5);
  EXPECT_TRUE(bit_identical(a_train.images, b_train.images));
  EXPECT_TRUE(bit_identical(a_test.images, b_test.images));
  EXPECT_EQ(a_train.labels, b_train.labels);
  const auto [c_train, c_test] = synth_dataset(small_dataset(), 6);
  EXPECT_FALSE(bit_identical(a_train.images, c_train.images));
}

TEST(SynthDataset, ShapesAndBalancedLabels) {
  DatasetSpec spec;
  spec.classes = 6;
  spec.train_count = 120;
  spec.test_count = 60;
  const auto [train, test] = synth_dataset(spec, 1);
  EXPECT_EQ(train.images.shape(), (Shape{120, 1, 32, 32}));
  EXPECT_EQ(test.images.shape(), (Shape{60, 1, 32, 32}));
  for (const Dataset* d : {&train, &test}) {
    std::vector<Index> histogram(spec.classes, 0);
    for (int label : d->labels) ++histogram.at(static_cast<Index>(label));
    for (Index count : histogram) EXPECT_EQ(count, d->size() / spec.classes);
  }
}

TEST(SynthDataset, QuarterTurnOfHorizontalBarIsClassTwo) {
  const Index s = 32;
  Bar bar;
  bar.angle_degrees = bar_angle(0, 4);
  bar.center_x = 3.25;
  bar.center_y = -2.5;
  bar.half_length = 9.0;
  bar.half_width = 1.5;
  bar.amplitude = 0.8;
  Tensor horizontal = Tensor::zeros({1, 1, s, s});
  render_bar(bar, s, horizontal.mutable_data());

  // A counterclockwise quarter turn maps centre (x, y) to (-y, x).
  Bar vertical = bar;
  vertical.angle_degrees = bar_angle(2, 4);
  vertical.center_x = -bar.center_y;
  vertical.center_y = bar.center_x;
  Tensor expected = Tensor::zeros({1, 1, s, s});
  render_bar(vertical, s, expected.mutable_data());
  EXPECT_LT(test::max_abs_diff(rot90(horizontal, 1).data(), expected.data()), 1e-12);

  // The same closure through the dataset transform at zero noise.
  DatasetSpec spec = small_dataset();
  spec.noise_sigma = 0.0;
  const auto [train, test] = synth_dataset(spec, 3);
  const Dataset turned = apply_transform(train, Transform::kRot90, spec.classes);
  for (Index i = 0; i < train.size(); ++i) EXPECT_EQ(turned.labels[i], (train.labels[i] + 2) % 4);
  EXPECT_TRUE(bit_identical(turned.images, rot90(train.images, 1)));
}

TEST(SynthDataset, BarOrientationMatchesLabel) {
  DatasetSpec spec = small_dataset();
  spec.noise_sigma = 0.0;
  const auto [train, test] = synth_dataset(spec, 9);
  // Second moments of the intensity give the bar direction.
  for (Index n = 0; n < train.size(); ++n) {
    double m = 0, mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
    for (Index i = 0; i < 32; ++i) {
      for (Index j = 0; j < 32; ++j) {
        const double v = train.images.at({n, 0, i, j});
        const double x = static_cast<double>(j), y = -static_cast<double>(i);
        m += v, mx += v * x, my += v * y, mxx += v * x * x, myy += v * y * y, mxy += v * x * y;
      }
    }
    const double cx = mx / m, cy = my / m;
    const double sxx = mxx / m - cx * cx, syy = myy / m - cy * cy, sxy = mxy / m - cx * cy;
    double angle = 0.5 * std::atan2(2 * sxy, sxx - syy) * 180.0 / M_PI;
    if (angle < 0) angle += 180.0;
    const double target = bar_angle(train.labels[n], 4);
    const double diff = std::min(std::abs(angle - target), 180.0 - std::abs(angle - target));
    EXPECT_LT(diff, 5.0) << "sample " << n << " label " << train.labels[n] << " angle " << angle;
  }
}

TEST(SynthDataset, InvalidSpecIsConfigError) {
  auto bad = [](auto edit) {
    DatasetSpec d = small_dataset();
    edit(d);
    return throws_kind([&] { synth_dataset(d, 1); }, ErrorKind::kConfig);
  };
  EXPECT_TRUE(bad([](DatasetSpec& d) { d.classes = 3; }));
  EXPECT_TRUE(bad([](DatasetSpec& d) { d.train_count = 2; }));
  EXPECT_TRUE(bad([](DatasetSpec& d) { d.test_count = 30; }));
  EXPECT_TRUE(bad([](DatasetSpec& d) { d.noise_sigma = -0.1; }));
  EXPECT_TRUE(bad([](DatasetSpec& d) { d.image_size = 4; }));
}

TEST(SynthDataset, RotatedInputsThroughP4LiftingCycleOrientations) {
  const auto [train, test] = synth_dataset(small_dataset(), 4);
  const std::vector<Index> rows{0, 1, 2};
  const Tensor x = train.batch(rows).first;
  Dataset three;
  three.images = x;
  three.labels = {0, 1, 2};
  const Tensor turned = apply_transform(three, Transform::kRot90, 4).images;
  Rng rng(1);
  const auto lift = P4ConvParams::init(P4Mode::kLifting, 1, 2, 3, rng);
  NoGradGuard guard;
  EXPECT_LT(test::max_rel_diff(p4_conv_forward(turned, lift).data(), p4_act(p4_conv_forward(x, lift)).data()), 1e-10);
}

// ---------------------------------------------------------------- optimizer

TEST(Adam, FirstStepMatchesClosedForm) {
  Tensor w = Tensor::from_values({3}, {1.0, -2.0, 0.5});
  w.set_requires_grad(true);
  Adam adam({{"w", w}}, {0.1, 0.9, 0.999, 1e-8});
  backward(sum(w * w));
  adam.step();
  // First bias-corrected step is lr * g / (|g| + eps).
  const std::vector<double> start{1.0, -2.0, 0.5};
  for (Index i = 0; i < 3; ++i) {
    const double g = 2 * start[i];
    EXPECT_NEAR(w.data()[i], start[i] - 0.1 * g / (std::abs(g) + 1e-8), 1e-15);
  }
}

TEST(Adam, MinimizesQuadratic) {
  Tensor w = Tensor::from_values({2}, {3.0, -4.0});
  w.set_requires_grad(true);
  Adam adam({{"w", w}}, {0.05, 0.9, 0.999, 1e-8});
  for (int i = 0; i < 2000; ++i) {
    adam.zero_grad();
    backward(sum(w * w));
    adam.step();
  }
  EXPECT_LT(std::abs(w.data()[0]) + std::abs(w.data()[1]), 1e-3);
  EXPECT_EQ(adam.steps(), 2000u);
  EXPECT_TRUE(throws_kind([] { AdamOptions{-1.0}.validate(); }, ErrorKind::kConfig));
  EXPECT_TRUE(throws_kind([] { AdamOptions{0.1, 1.0}.validate(); }, ErrorKind::kConfig));
}

// ---------------------------------------------------------------- checkpoint

TEST(Checkpoint, RoundTripIsBitExact) {
  const fs::path dir = scratch("roundtrip");
  const Model a = build_model(mrl_tiny_spec(), 1);
  save_checkpoint(dir / "a.ckpt", a.parameters());
  const Model b = build_model(mrl_tiny_spec(), 2);
  ParamList loaded = b.parameters();
  load_checkpoint(dir / "a.ckpt", loaded);
  const ParamList original = a.parameters();
  for (Index i = 0; i < original.size(); ++i) {
    EXPECT_TRUE(bit_identical(original[i].second, loaded[i].second)) << original[i].first;
  }
  save_checkpoint(dir / "b.ckpt", b.parameters());
  EXPECT_EQ(read_file(dir / "a.ckpt"), read_file(dir / "b.ckpt"));
}

TEST(Checkpoint, LayoutIsLittleEndian) {
  const ParamList params{{"w", Tensor::from_values({2}, {1.0, -0.5})}};
  const std::string bytes = encode_checkpoint(params);
  ASSERT_EQ(bytes.size(), 4u + 4 + 1 + 4 + 8 + 16);
  EXPECT_EQ(bytes.substr(0, 4), "MRL1");
  EXPECT_EQ(bytes.substr(4, 4), std::string("\x01\0\0\0", 4));
  EXPECT_EQ(bytes.substr(8, 1), "w");
  EXPECT_EQ(bytes.substr(9, 4), std::string("\x01\0\0\0", 4));
  EXPECT_EQ(bytes.substr(13, 8), std::string("\x02\0\0\0\0\0\0\0", 8));
  EXPECT_EQ(bytes.substr(21, 8), std::string("\0\0\0\0\0\0\xf0\x3f", 8));  // 1.0
  EXPECT_EQ(bytes.substr(29, 8), std::string("\0\0\0\0\0\0\xe0\xbf", 8));  // -0.5
}

TEST(Checkpoint, TruncationNamesLastCompleteEntry) {
  const ParamList params{{"first", Tensor::from_values({2}, {1.0, 2.0})},
                         {"second", Tensor::from_values({3}, {3.0, 4.0, 5.0})}};
  const std::string bytes = encode_checkpoint(params);
  try {
    decode_checkpoint(std::string_view(bytes).substr(0, bytes.size() - 5));
    FAIL() << "expected a checkpoint error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kCheckpoint);
    EXPECT_NE(std::string(e.what()).find("last complete entry: 'first'"), std::string::npos) << e.what();
  }
  for (Index cut = 5; cut < bytes.size(); ++cut) {
    if (cut == 4 + 4 + 5 + 4 + 8 + 16) continue;  // entry boundary: a valid shorter file
    EXPECT_TRUE(throws_kind([&] { decode_checkpoint(std::string_view(bytes).substr(0, cut)); }, ErrorKind::kCheckpoint))
        << "cut " << cut;
  }
}

TEST(Checkpoint, BadMagicAndVersion) {
  EXPECT_TRUE(throws_kind([] { decode_checkpoint("NOPE"); }, ErrorKind::kCheckpoint));
  EXPECT_TRUE(throws_kind([] { decode_checkpoint("MR"); }, ErrorKind::kCheckpoint));
  try {
    decode_checkpoint("MRL2");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
  EXPECT_TRUE(throws_kind([] { read_checkpoint("/nonexistent/x.ckpt"); }, ErrorKind::kCheckpoint));
}

TEST(Checkpoint, MismatchListsMissingAndExtraNames) {
  const ParamList saved{{"a", Tensor::zeros({2})}, {"b", Tensor::zeros({2})}};
  ParamList target{{"a", Tensor::zeros({2})}, {"c", Tensor::zeros({2})}};
  try {
    load_entries(decode_checkpoint(encode_checkpoint(saved)), target);
    FAIL();
  } catch (const Error& e) {
    const std::string what = e.what();
    EXPECT_EQ(e.kind(), ErrorKind::kCheckpoint);
    EXPECT_NE(what.find("missing (1) [c]"), std::string::npos) << what;
    EXPECT_NE(what.find("extra (1) [b]"), std::string::npos) << what;
  }
  ParamList reshaped{{"a", Tensor::zeros({2})}, {"b", Tensor::zeros({1, 2})}};
  try {
    load_entries(decode_checkpoint(encode_checkpoint(saved)), reshaped);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("'b'"), std::string::npos) << e.what();
  }
  // A failed load leaves the target untouched.
  EXPECT_EQ(reshaped[0].second.data()[0], 0.0);

  ModelSpec gc = mrl_tiny_spec();
  gc.local_mix = LocalMix::kGcP4;
  ParamList gc_params = build_model(gc, 1).parameters();
  EXPECT_TRUE(throws_kind(
      [&] { load_entries(decode_checkpoint(encode_checkpoint(build_model(mrl_tiny_spec(), 1).parameters())), gc_params); },
      ErrorKind::kCheckpoint));
}

// ---------------------------------------------------------------- config

TEST(RunConfig, DefaultsAndDerivedModelFields) {
  const RunConfig c = parse_run_config(Json::object());
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.epochs, 5u);
  EXPECT_EQ(c.batch_size, 32u);
  EXPECT_DOUBLE_EQ(c.optimizer.lr, 3e-3);
  EXPECT_DOUBLE_EQ(c.optimizer.beta1, 0.9);
  EXPECT_DOUBLE_EQ(c.optimizer.beta2, 0.999);
  EXPECT_DOUBLE_EQ(c.optimizer.eps, 1e-8);
  EXPECT_EQ(c.dataset.train_count, 2000u);
  EXPECT_EQ(c.dataset.test_count, 500u);
  EXPECT_EQ(c.model.name, "mrl-tiny");
  EXPECT_EQ(c.model.in_channels, 1u);
  EXPECT_EQ(c.model.input_size, 32u);
  EXPECT_EQ(c.model.num_classes, 4u);
  EXPECT_FALSE(c.record_wall_time);
}

TEST(RunConfig, ParsesEveryField) {
  const RunConfig c = parse_run_config_text(R"({
    "seed": 7, "epochs": 3, "batch_size": 16, "output_dir": "out", "record_wall_time": true,
    "checkpoint": "x.ckpt", "transform": "rot90", "eval_split": "train",
    "model": {"spec": "mrl-tiny", "mixer": "mrl", "qkv": "commonqkv", "local_mix": "gc-p4", "local_kernel": 5,
              "sampler": "dense", "out_proj": "full", "head_dim": 8, "ffn_expansion": 2,
              "sa_conv_projection": true, "sa_kv_stride": 2,
              "stages": [{"depth": 2, "dim": 16, "region": 4, "embed_kernel": 3, "embed_stride": 2, "embed_padding": 1}]},
    "optimizer": {"kind": "adam", "lr": 0.01, "beta1": 0.8, "beta2": 0.99, "eps": 1e-6},
    "dataset": {"kind": "oriented-bars", "image_size": 16, "classes": 8, "train_count": 80, "test_count": 16,
                "noise_sigma": 0.05}})");
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.transform, Transform::kRot90);
  EXPECT_EQ(c.model.qkv, QkvVariant::kCommon);
  EXPECT_EQ(c.model.local_mix, LocalMix::kGcP4);
  EXPECT_EQ(c.model.sampler, SamplerKind::kDense);
  EXPECT_EQ(c.model.out_proj, OutProjPlacement::kFull);
  EXPECT_EQ(c.model.local_kernel, 5u);
  ASSERT_EQ(c.model.stages.size(), 1u);
  EXPECT_EQ(c.model.stages[0].region, 4u);
  EXPECT_EQ(c.model.input_size, 16u);
  EXPECT_EQ(c.model.num_classes, 8u);
  EXPECT_DOUBLE_EQ(c.optimizer.lr, 0.01);
  EXPECT_EQ(c.checkpoint_path(), fs::path("x.ckpt"));

  const RunConfig again = parse_run_config(to_json(c));
  EXPECT_EQ(to_json(again).dump(), to_json(c).dump());
}

TEST(RunConfig, RejectsMalformedInput) {
  for (const char* text : {"{", "[]", R"({"epochz": 1})", R"({"model": {"mixer": "conv"}})",
                           R"({"model": {"spec": "resnet"}})", R"({"optimizer": {"kind": "sgd"}})",
                           R"({"dataset": {"kind": "imagenet"}})", R"({"epochs": -1})", R"({"epochs": 0})",
                           R"({"seed": "x"})", R"({"transform": "flip"})", R"({"dataset": {"classes": 5}})",
                           R"({"model": {"stages": [{"dim": 32, "depth": 1, "regions": 2}]}})"}) {
    EXPECT_TRUE(throws_kind([&] { parse_run_config_text(text); }, ErrorKind::kConfig)) << text;
  }
  EXPECT_TRUE(throws_kind([] { parse_run_config_text(R"({"model": {"stages": [{"dim": 32, "region": 3}]}})"); },
                          ErrorKind::kBuild));
  EXPECT_TRUE(throws_kind([] { load_run_config("/nonexistent/config.json"); }, ErrorKind::kConfig));
}

// ---------------------------------------------------------------- training

TEST(Train, SameConfigGivesIdenticalArtifacts) {
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  const TrainResult ra = train(small_run(a));
  const TrainResult rb = train(small_run(b));
  ASSERT_EQ(ra.epochs.size(), 2u);
  const std::string metrics = read_file(ra.metrics_path);
  EXPECT_EQ(metrics, read_file(rb.metrics_path));
  EXPECT_EQ(read_file(ra.checkpoint_path), read_file(rb.checkpoint_path));
  EXPECT_EQ(metrics.rfind("epoch,train_loss,test_acc,wall_seconds\n", 0), 0u);
  EXPECT_TRUE(fs::exists(a / "timing.csv"));
  EXPECT_TRUE(fs::exists(a / "config.json"));
  const RunConfig echoed = load_run_config(a / "config.json");
  EXPECT_EQ(to_json(echoed).dump(), to_json(small_run(a)).dump());
}

TEST(Train, SeedChangesTheRun) {
  RunConfig c = small_run(scratch("seed_a"));
  c.epochs = 1;
  const TrainResult ra = train(c);
  c.seed = 43;
  c.output_dir = scratch("seed_b").string();
  const TrainResult rb = train(c);
  EXPECT_NE(ra.epochs[0].train_loss, rb.epochs[0].train_loss);
}

TEST(Train, NonFiniteLossAbortsNamingTheStep) {
  const auto [train_set, test_set] = synth_dataset(small_dataset(), 1);
  Model model = build_model(parse_run_config(Json::object()).model, 1);
  ParamList params = model.parameters();
  params.back().second.mutable_data()[0] = std::nan("");
  try {
    train_model(model, train_set, test_set, {1, 32, {}, 1});
    FAIL() << "expected a validity error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNonFinite);
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos) << e.what();
  }
  Model model2 = build_model(parse_run_config(Json::object()).model, 1);
  model2.parameters().front().second.mutable_data()[0] = std::numeric_limits<double>::infinity();
  try {
    train_model(model2, train_set, test_set, {1, 32, {}, 1});
    FAIL() << "expected a validity error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNonFinite);
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos) << e.what();
  }
}

TEST(Evaluate, DeterministicAndConsistentWithAccuracy) {
  const fs::path dir = scratch("eval");
  RunConfig c = small_run(dir);
  train(c);
  const double first = evaluate(c);
  EXPECT_EQ(first, evaluate(c));

  Model model = build_model(c.model, c.seed);
  ParamList params = model.parameters();
  load_checkpoint(c.checkpoint_path(), params);
  const auto [train_set, test_set] = synth_dataset(c.dataset, c.seed);
  EXPECT_EQ(first, accuracy(model, test_set));
  c.eval_split = "train";
  EXPECT_EQ(evaluate(c), accuracy(model, train_set));
  c.transform = Transform::kRot90;
  EXPECT_EQ(evaluate(c), accuracy(model, apply_transform(train_set, Transform::kRot90, 4)));

  c.checkpoint = (dir / "missing.ckpt").string();
  EXPECT_TRUE(throws_kind([&] { evaluate(c); }, ErrorKind::kCheckpoint));
}

TEST(Metrics, CsvFormatting) {
  const std::vector<EpochMetrics> rows{{1, 0.5, 0.25, 3.5}, {2, 0.125, 1.0, 2.0}};
  EXPECT_EQ(metrics_csv(rows, false), "epoch,train_loss,test_acc,wall_seconds\n1,0.5,0.25,0\n2,0.125,1,0\n");
  EXPECT_EQ(metrics_csv(rows, true), "epoch,train_loss,test_acc,wall_seconds\n1,0.5,0.25,3.5\n2,0.125,1,2\n");
  EXPECT_EQ(std::stod(format_real(0.1)), 0.1);
}

// ---------------------------------------------------------------- suites

TEST(Suites, EquivarianceSuitePasses) {
  const SuiteResult r = equivariance_suite(1);
  EXPECT_TRUE(r.passed()) << r.table();
  EXPECT_EQ(r.rows.size(), 4u);
  for (const SuiteRow& row : r.rows) EXPECT_EQ(row.runs, 10u);
}

TEST(Suites, TableMarksInformationalRows) {
  SuiteResult r{"demo", {{"a", 1e-9, 1e-6, 5, true}, {"b", 1.0, 1e-4, 5, false}}};
  EXPECT_TRUE(r.passed());
  EXPECT_NE(r.table().find("info"), std::string::npos);
  r.rows[0].value = 1.0;
  EXPECT_FALSE(r.passed());
  EXPECT_NE(r.table().find("FAIL"), std::string::npos);
}

TEST(Suites, CostJsonMirrorsCsvTotals) {
  const VariantComparison c = compare_variants(mrl_cvt13_spec(), 224);
  const Json j = to_json(c);
  ASSERT_EQ(j["variants"].size(), 3u);
  EXPECT_EQ(j["variants"][1]["variant"], "MRL");
  EXPECT_EQ(j["variants"][1]["totals"]["attention-module"]["flops"].get<std::uint64_t>(),
            c.mrl.group(CostGroup::kAttention).flops());
  EXPECT_LT(j["deltas_vs_sa"]["MRL"]["attention_flops_percent"].get<double>(), -50.0);
  const std::string summary = comparison_summary(c);
  EXPECT_NE(summary.find("MRL," + std::to_string(c.mrl.group(CostGroup::kAttention).params)), std::string::npos);
}

// ---------------------------------------------------------------- CLI

int run_cli(const std::string& args, std::string* output = nullptr) {
  const std::string log = (fs::temp_directory_path() / "mrl_cli_test.log").string();
  const int status = std::system((std::string(MRL_CLI_PATH) + " " + args + " > " + log + " 2>&1").c_str());
  if (output) *output = read_file(log);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, ExitCodes) {
  std::string out;
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("bogus"), 2);
  EXPECT_EQ(run_cli("cost --spec nope", &out), 2) << out;
  EXPECT_EQ(run_cli("cost --input 200", &out), 2) << out;
  EXPECT_EQ(run_cli("train --config /nonexistent.json"), 2);
  const fs::path dir = scratch("cli");
  std::ofstream(dir / "bad.json") << "{\"epochz\": 1}";
  EXPECT_EQ(run_cli("train --config " + (dir / "bad.json").string(), &out), 2) << out;
  EXPECT_EQ(run_cli("eval --out " + (dir / "nothing").string(), &out), 1) << out;
  EXPECT_NE(out.find("checkpoint error"), std::string::npos) << out;
}

TEST(Cli, CostCommandReportsAttentionFlops) {
  std::string out;
  const fs::path dir = scratch("cli_cost");
  ASSERT_EQ(run_cli("cost --spec mrl-cvt-13 --input 224 --out " + dir.string(), &out), 0) << out;
  const std::size_t row = out.find("\nMRL,");
  ASSERT_NE(row, std::string::npos) << out;
  std::istringstream fields(out.substr(row + 5));
  std::string params, flops;
  std::getline(fields, params, ',');
  std::getline(fields, flops, ',');
  EXPECT_NEAR(std::stod(flops), 0.63e9, 0.25 * 0.63e9);
  for (const char* file : {"cost_sa.csv", "cost_mrl.csv", "cost_cq_mrl.csv", "cost.json"}) {
    EXPECT_TRUE(fs::exists(dir / file)) << file;
  }
}

TEST(Cli, EquivarianceAndGradcheckCommandsPass) {
  std::string out;
  EXPECT_EQ(run_cli("equivariance --seed 1", &out), 0) << out;
  EXPECT_NE(out.find("p4_group"), std::string::npos);
  EXPECT_EQ(run_cli("gradcheck --seed 1 --seeds 1", &out), 0) << out;
  EXPECT_EQ(out.find("FAIL"), std::string::npos) << out;
}

TEST(Cli, TrainThenEval) {
  const fs::path dir = scratch("cli_train");
  std::ofstream(dir / "config.json")
      << R"({"epochs": 1, "dataset": {"train_count": 64, "test_count": 32}, "output_dir": ")" << (dir / "run").string()
      << "\"}";
  std::string out;
  ASSERT_EQ(run_cli("train --config " + (dir / "config.json").string(), &out), 0) << out;
  EXPECT_TRUE(fs::exists(dir / "run" / "model.ckpt"));
  EXPECT_EQ(run_cli("eval --config " + (dir / "config.json").string() + " --transform rot90", &out), 0) << out;
  EXPECT_NE(out.find("accuracy"), std::string::npos);
  EXPECT_EQ(run_cli("eval --config " + (dir / "config.json").string() + " --transform flip", &out), 2) << out;
}

}  // namespace
}  // namespace mrl
