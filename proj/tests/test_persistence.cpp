#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "ocseg/checkpoint.hpp"
#include "ocseg/config.hpp"

using namespace ocseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("ocseg_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

SegModel<float> tiny_model(uint32_t seed, ModuleKind kind = ModuleKind::base_oc,
                           int mid = 4) {
  ModelConfig mc;
  mc.kind = kind;
  mc.backbone.stage_channels = {4, 4, 4, 6, 6};
  mc.mid_channels = mid;
  mc.out_channels = 4;
  mc.num_classes = 3;
  std::mt19937 rng(seed);
  return SegModel<float>(mc, &rng);
}

}  // namespace

TEST(CheckpointRecords, RoundTripPreservesEverything) {
  const auto dir = scratch_dir("ckpt_records");
  std::vector<TensorRecord> records;
  records.push_back({"alpha", {2, 3}, {1.f, 2.f, 3.f, 4.f, 5.f, 6.f}});
  records.push_back({"beta/gamma", {4}, {-1.f, 0.25f, 1e-30f, 3e30f}});
  records.push_back({"scalarish", {1}, {42.f}});
  const auto path = (dir / "a.ckpt").string();
  write_checkpoint_records(path, records);
  const auto back = read_checkpoint_records(path);
  ASSERT_EQ(back.size(), records.size());
  for (size_t i = 0; i < records.size(); ++i) {
    EXPECT_EQ(back[i].name, records[i].name);
    EXPECT_EQ(back[i].dims, records[i].dims);
    EXPECT_EQ(back[i].data, records[i].data);
  }
}

TEST(CheckpointRecords, SaveLoadSaveIsByteIdentical) {
  const auto dir = scratch_dir("ckpt_bytes");
  std::vector<TensorRecord> records;
  std::mt19937 rng(9);
  std::uniform_real_distribution<float> d(-2.f, 2.f);
  for (int t = 0; t < 5; ++t) {
    TensorRecord r;
    r.name = "tensor" + std::to_string(t);
    r.dims = {3, static_cast<uint32_t>(t + 1)};
    r.data.resize(3 * (t + 1));
    for (auto& v : r.data) v = d(rng);
    records.push_back(std::move(r));
  }
  const auto a = (dir / "a.ckpt").string(), b = (dir / "b.ckpt").string();
  write_checkpoint_records(a, records);
  write_checkpoint_records(b, read_checkpoint_records(a));
  EXPECT_EQ(slurp(a), slurp(b));
}

TEST(CheckpointRecords, FileStartsWithMagicAndVersion) {
  const auto dir = scratch_dir("ckpt_magic");
  const auto path = (dir / "m.ckpt").string();
  write_checkpoint_records(path, {{"t", {1}, {0.f}}});
  const auto raw = slurp(path);
  ASSERT_GE(raw.size(), 12u);
  EXPECT_EQ(raw.substr(0, 4), "OCN1");
  EXPECT_EQ(raw[4], 1);  // version 1, little-endian
  EXPECT_EQ(raw[8], 1);  // one tensor
}

TEST(CheckpointRecords, RejectsForeignAndTruncatedFiles) {
  const auto dir = scratch_dir("ckpt_bad");
  {
    std::ofstream f(dir / "foreign.bin", std::ios::binary);
    f << "P6\n1 1\n255\nxyz";
  }
  EXPECT_THROW(read_checkpoint_records((dir / "foreign.bin").string()), DataError);
  const auto good = (dir / "good.ckpt").string();
  write_checkpoint_records(good, {{"t", {2, 2}, {1.f, 2.f, 3.f, 4.f}}});
  const auto raw = slurp(good);
  {
    std::ofstream f(dir / "trunc.ckpt", std::ios::binary);
    f.write(raw.data(), static_cast<std::streamsize>(raw.size() - 6));
  }
  EXPECT_THROW(read_checkpoint_records((dir / "trunc.ckpt").string()), DataError);
  {
    std::string bumped = raw;
    bumped[4] = 9;  // unsupported version
    std::ofstream f(dir / "ver.ckpt", std::ios::binary);
    f.write(bumped.data(), static_cast<std::streamsize>(bumped.size()));
  }
  EXPECT_THROW(read_checkpoint_records((dir / "ver.ckpt").string()), DataError);
  EXPECT_THROW(read_checkpoint_records((dir / "absent.ckpt").string()), IoError);
}

TEST(RngWords, RoundTripResumesTheStream) {
  std::mt19937 rng(123);
  for (int i = 0; i < 100; ++i) rng();
  const auto words = rng_to_words(rng);
  std::mt19937 copy = rng;  // reference continuation
  std::mt19937 restored(999);
  rng_from_words(restored, words);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(restored(), copy());
  EXPECT_THROW(rng_from_words(restored, {}), DataError);
}

TEST(ModelCheckpoint, RestoresParametersBuffersOptimizerRngIteration) {
  const auto dir = scratch_dir("ckpt_model");
  auto model = tiny_model(31);
  auto params = model.parameters();
  SgdOptimizer<float> opt;
  opt.init(params);
  for (auto& v : opt.velocity)
    for (auto& x : v.tensor.data()) x = 0.125f;
  std::mt19937 rng(55);
  rng();
  const auto path = (dir / "m.ckpt").string();
  save_checkpoint(path, model, &opt, &rng, 17);

  // Scribble over everything, then restore.
  auto clobbered = tiny_model(32);
  SgdOptimizer<float> opt2;
  std::mt19937 rng2(1);
  int64_t iter = -1;
  load_checkpoint(path, clobbered, &opt2, &rng2, &iter);

  std::vector<NamedTensor<float>> pa, ba, pb, bb;
  model.collect(pa, ba);
  clobbered.collect(pb, bb);
  ASSERT_EQ(pa.size(), pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    for (int64_t j = 0; j < pa[i].tensor.numel(); ++j)
      EXPECT_EQ(pa[i].tensor.data()[j], pb[i].tensor.data()[j]);
  }
  for (size_t i = 0; i < ba.size(); ++i)
    for (int64_t j = 0; j < ba[i].tensor.numel(); ++j)
      EXPECT_EQ(ba[i].tensor.data()[j], bb[i].tensor.data()[j]);
  ASSERT_EQ(opt2.velocity.size(), opt.velocity.size());
  for (size_t i = 0; i < opt.velocity.size(); ++i)
    for (int64_t j = 0; j < opt.velocity[i].tensor.numel(); ++j)
      EXPECT_EQ(opt2.velocity[i].tensor.data()[j], opt.velocity[i].tensor.data()[j]);
  EXPECT_EQ(iter, 17);
  std::mt19937 expect_rng = rng;
  EXPECT_EQ(rng2(), expect_rng());
}

TEST(ModelCheckpoint, ModelLevelSaveLoadSaveIsByteIdentical) {
  const auto dir = scratch_dir("ckpt_model_bytes");
  auto model = tiny_model(41);
  std::mt19937 rng(7);
  SgdOptimizer<float>* no_opt = nullptr;
  const auto a = (dir / "a.ckpt").string(), b = (dir / "b.ckpt").string();
  save_checkpoint(a, model, no_opt, &rng, 3);
  auto twin = tiny_model(42);
  std::mt19937 rng2(8);
  int64_t iter = 0;
  load_checkpoint(a, twin, no_opt, &rng2, &iter);
  save_checkpoint(b, twin, no_opt, &rng2, iter);
  EXPECT_EQ(slurp(a), slurp(b));
}

TEST(ModelCheckpoint, MismatchedArchitecturesAreRejected) {
  const auto dir = scratch_dir("ckpt_mismatch");
  auto model = tiny_model(51);
  const auto path = (dir / "m.ckpt").string();
  save_checkpoint(path, model);
  auto wider = tiny_model(52, ModuleKind::base_oc, /*mid=*/6);
  EXPECT_THROW(load_checkpoint(path, wider), ShapeError);
  auto other_kind = tiny_model(53, ModuleKind::asp_oc);
  EXPECT_THROW(load_checkpoint(path, other_kind), DataError);
  EXPECT_EQ(checkpoint_num_classes(path), 3);
}

TEST(RunConfigParse, EmptyTextYieldsDocumentedDefaults) {
  const auto cfg = parse_run_config_text("", "inline");
  EXPECT_EQ(cfg.module, ModuleKind::base_oc);
  EXPECT_EQ(cfg.backbone_channels, (std::vector<int>{16, 32, 48, 64, 64}));
  EXPECT_EQ(cfg.mid_channels, 16);
  EXPECT_EQ(cfg.num_classes, 4);
  EXPECT_DOUBLE_EQ(cfg.schedule.base_lr, 0.01);
  EXPECT_DOUBLE_EQ(cfg.schedule.power, 0.9);
  EXPECT_DOUBLE_EQ(cfg.schedule.momentum, 0.9);
  EXPECT_FALSE(cfg.ohem);
  EXPECT_DOUBLE_EQ(cfg.supervision.aux_weight, 0.4);
  EXPECT_EQ(cfg.batch_size, 4);
  EXPECT_EQ(cfg.eval_scales, (std::vector<double>{1.0}));
  EXPECT_FALSE(cfg.eval_flip);
  EXPECT_EQ(cfg.seed, 1u);
}

TEST(RunConfigParse, ParsesKeysCommentsAndLists) {
  const std::string text =
      "# toy run\n"
      "module = pyramid-oc\n"
      "backbone_channels = 8, 16, 24, 32, 32\n"
      "pyramid_scales = 1,2\n"
      "base_lr = 0.02  # inline comment\n"
      "max_iter = 500\n"
      "\n"
      "ohem = true\n"
      "ohem_min_kept = 64\n"
      "eval_scales = 0.75, 1.0, 1.25\n"
      "eval_flip = on\n"
      "seed = 99\n";
  const auto cfg = parse_run_config_text(text, "inline");
  EXPECT_EQ(cfg.module, ModuleKind::pyramid_oc);
  EXPECT_EQ(cfg.backbone_channels, (std::vector<int>{8, 16, 24, 32, 32}));
  EXPECT_EQ(cfg.pyramid_scales, (std::vector<int>{1, 2}));
  EXPECT_DOUBLE_EQ(cfg.schedule.base_lr, 0.02);
  EXPECT_EQ(cfg.schedule.max_iter, 500);
  EXPECT_TRUE(cfg.ohem);
  EXPECT_EQ(cfg.ohem_min_kept, 64);
  EXPECT_EQ(cfg.eval_scales, (std::vector<double>{0.75, 1.0, 1.25}));
  EXPECT_TRUE(cfg.eval_flip);
  EXPECT_EQ(cfg.seed, 99u);
}

TEST(RunConfigParse, RejectionsNameTheOffendingLine) {
  const auto expect_line = [](const std::string& text, const std::string& needle) {
    try {
      parse_run_config_text(text, "cfg");
      FAIL() << "expected UsageError for: " << text;
    } catch (const UsageError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos)
          << "message was: " << e.what();
    }
  };
  expect_line("seed = 1\nwibble = 3\n", "line 2");
  expect_line("seed = 1\nwibble = 3\n", "wibble");
  expect_line("batch_size = soon\n", "line 1");
  expect_line("module = resnet\n", "line 1");
  expect_line("just some words\n", "key = value");
  expect_line("base_lr =\n", "missing value");
  expect_line("eval_scales = ,\n", "line 1");
}

TEST(RunConfigParse, SemanticValidationFailsAsUsageError) {
  EXPECT_THROW(parse_run_config_text("base_lr = 0\n", "cfg"), UsageError);
  EXPECT_THROW(parse_run_config_text("batch_size = 0\n", "cfg"), UsageError);
  EXPECT_THROW(parse_run_config_text("ohem = true\nohem_theta = 2\n", "cfg"),
               UsageError);
}

TEST(RunConfig, OhemMinKeptZeroResolvesToQuarterOfBatchPixels) {
  RunConfig cfg;
  cfg.ohem = true;
  EXPECT_EQ(cfg.ohem_config(1000).min_kept, 250);
  EXPECT_EQ(cfg.ohem_config(2).min_kept, 1);  // floor but never below 1
  cfg.ohem_min_kept = 7;
  EXPECT_EQ(cfg.ohem_config(1000).min_kept, 7);
}

TEST(RunConfig, ModelConfigMirrorsTheRunSettings) {
  RunConfig cfg;
  cfg.module = ModuleKind::asp_oc;
  cfg.backbone_channels = {4, 4, 4, 6, 6};
  cfg.mid_channels = 8;
  cfg.out_channels = 12;
  cfg.num_classes = 5;
  cfg.asp_rates = {2, 3, 5};
  const auto mc = cfg.model_config();
  EXPECT_EQ(mc.kind, ModuleKind::asp_oc);
  EXPECT_EQ(mc.backbone.stage_channels, cfg.backbone_channels);
  EXPECT_EQ(mc.mid_channels, 8);
  EXPECT_EQ(mc.out_channels, 12);
  EXPECT_EQ(mc.num_classes, 5);
  EXPECT_EQ(mc.asp_rates, (std::vector<int>{2, 3, 5}));
}

TEST(RunConfigFile, LoadsFromDiskAndMissingFileIsIoError) {
  const auto dir = scratch_dir("config_file");
  {
    std::ofstream f(dir / "run.conf");
    f << "module = baseline\nseed = 4\n";
  }
  const auto cfg = load_run_config((dir / "run.conf").string());
  EXPECT_EQ(cfg.module, ModuleKind::baseline);
  EXPECT_EQ(cfg.seed, 4u);
  EXPECT_THROW(load_run_config((dir / "nope.conf").string()), IoError);
}
