// Command-line front end: dataset generation, training, evaluation,
// gradient checking, and attention-map visualization.

#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ocseg/checkpoint.hpp"
#include "ocseg/gradcheck.hpp"
#include "ocseg/pipeline.hpp"
#include "ocseg/visualize.hpp"

namespace fs = std::filesystem;
using namespace ocseg;

namespace {

RunConfig load_config_or_default(const std::string& path, int64_t seed_override) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_run_config(path);
  if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
  return cfg;
}

ShapeGenConfig shape_gen_from(const RunConfig& cfg) {
  ShapeGenConfig gen;
  gen.height = cfg.height;
  gen.width = cfg.width;
  gen.num_classes = cfg.num_classes;
  gen.min_shapes = cfg.min_shapes;
  gen.max_shapes = cfg.max_shapes;
  gen.ignore_label = cfg.ignore_label;
  return gen;
}

std::vector<SegmentationSample<float>> synth_split(const RunConfig& cfg, uint64_t seed,
                                                   int count) {
  std::vector<SegmentationSample<float>> out;
  out.reserve(static_cast<size_t>(count));
  for (auto& g : generate_shapes<float>(seed, count, shape_gen_from(cfg)))
    out.push_back(std::move(g.sample));
  return out;
}

// The validation split uses an offset seed so it never overlaps the train
// split; gen-data and in-process training derive splits identically.
std::vector<SegmentationSample<float>> train_split(const RunConfig& cfg) {
  if (!cfg.train_manifest.empty()) return load_dataset<float>(cfg.train_manifest);
  return synth_split(cfg, cfg.seed, cfg.train_count);
}

std::vector<SegmentationSample<float>> val_split(const RunConfig& cfg) {
  if (!cfg.val_manifest.empty()) return load_dataset<float>(cfg.val_manifest);
  return synth_split(cfg, cfg.seed + 1, cfg.val_count);
}

int cmd_gen_data(const RunConfig& cfg, const std::string& out) {
  const auto train = synth_split(cfg, cfg.seed, cfg.train_count);
  const auto val = synth_split(cfg, cfg.seed + 1, cfg.val_count);
  const auto train_dir = (fs::path(out) / "train").string();
  const auto val_dir = (fs::path(out) / "val").string();
  export_dataset(train_dir, train);
  export_dataset(val_dir, val);
  std::cerr << "wrote " << train.size() << " train pairs to " << train_dir << "\n"
            << "wrote " << val.size() << " val pairs to " << val_dir << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& out, int64_t iters,
              const std::string& resume) {
  const auto train = train_split(cfg);
  const auto val = val_split(cfg);

  std::mt19937 rng(static_cast<uint32_t>(cfg.seed));
  SegModel<float> model(cfg.model_config(), &rng);
  SgdOptimizer<float> opt;
  int64_t start = 0;
  if (!resume.empty()) load_checkpoint(resume, model, &opt, &rng, &start);

  int64_t stop = cfg.schedule.max_iter;
  if (iters >= 0) stop = std::min<int64_t>(start + iters, cfg.schedule.max_iter);
  const auto progress = run_train(cfg, model, opt, train, val, rng, start, stop,
                                  &std::cout);

  fs::create_directories(out);
  const auto ckpt = (fs::path(out) / "model.ckpt").string();
  save_checkpoint(ckpt, model, &opt, &rng, progress.iteration);
  std::cerr << "checkpoint written to " << ckpt << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint,
             const std::string& manifest) {
  const int ckpt_classes = checkpoint_num_classes(checkpoint);
  if (ckpt_classes != cfg.num_classes)
    throw ContractError("checkpoint has " + std::to_string(ckpt_classes) +
                        " classes but config expects " +
                        std::to_string(cfg.num_classes));

  std::mt19937 rng(0);
  SegModel<float> model(cfg.model_config(), &rng);
  load_checkpoint(checkpoint, model);

  const auto data = manifest.empty() ? val_split(cfg) : load_dataset<float>(manifest);
  const auto rep = run_eval(model, data, cfg.eval_scales, cfg.eval_flip,
                            cfg.ignore_label);

  std::cout << std::setprecision(10);
  for (size_t c = 0; c < rep.per_class_iou.size(); ++c)
    std::cout << "iou\t" << c << "\t" << rep.per_class_iou[c] << "\n";
  std::cout << "miou\t" << rep.mean_iou << "\n";
  std::cout << "accuracy\t" << rep.pixel_accuracy << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& selector, uint64_t seed) {
  const auto results = run_gradcheck(selector, seed);
  bool all_ok = true;
  std::cout << std::setprecision(4);
  for (const auto& r : results) {
    for (const auto& g : r.groups)
      std::cout << r.check << "\t" << g.name << "\t" << std::scientific
                << g.max_rel_err << "\t" << r.threshold << "\t"
                << (g.max_rel_err < r.threshold ? "ok" : "FAIL") << "\n";
    all_ok = all_ok && r.passed;
  }
  std::cout << (all_ok ? "gradcheck passed" : "gradcheck FAILED") << "\n";
  return all_ok ? 0 : 1;
}

std::pair<int, int> parse_coord(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos || comma == 0 || comma + 1 == s.size())
    throw UsageError("coordinate '" + s + "' is not of the form y,x");
  try {
    size_t used_y = 0, used_x = 0;
    const int y = std::stoi(s.substr(0, comma), &used_y);
    const int x = std::stoi(s.substr(comma + 1), &used_x);
    if (used_y != comma || used_x != s.size() - comma - 1)
      throw std::invalid_argument(s);
    return {y, x};
  } catch (const std::exception&) {
    throw UsageError("coordinate '" + s + "' is not of the form y,x");
  }
}

int cmd_visualize(const RunConfig& cfg, const std::string& checkpoint,
                  const std::string& image_path,
                  const std::vector<std::string>& coords, const std::string& out) {
  std::mt19937 rng(0);
  SegModel<float> model(cfg.model_config(), &rng);
  if (!model.has_context_map())
    throw UsageError("module '" + module_kind_name(cfg.module) +
                     "' has no attention map to visualize");
  load_checkpoint(checkpoint, model);

  const ImageU8 img = read_ppm(image_path);
  const int stride = BackboneConfig::output_stride;
  const int rh = static_cast<int>(round_to_stride(img.height));
  const int rw = static_cast<int>(round_to_stride(img.width));

  // Image planes in [0,1]; resized to a stride-aligned grid if necessary.
  auto input = Tensor<float>::zeros({1, 3, rh, rw});
  {
    std::vector<float> plane(static_cast<size_t>(img.height) * img.width);
    std::vector<float> resized(static_cast<size_t>(rh) * rw);
    for (int c = 0; c < 3; ++c) {
      for (int i = 0; i < img.height * img.width; ++i)
        plane[static_cast<size_t>(i)] =
            static_cast<float>(img.pixels[static_cast<size_t>(i) * 3 + c]) / 255.0f;
      bilinear_resize_raw(plane.data(), 1, img.height, img.width, resized.data(), rh,
                          rw);
      std::copy(resized.begin(), resized.end(),
                input.data().begin() + static_cast<size_t>(c) * rh * rw);
    }
  }

  ObjectContextMap<float> map;
  model.forward(input, /*training=*/false, &map);

  fs::create_directories(out);
  for (const auto& raw : coords) {
    const auto [y, x] = parse_coord(raw);
    if (y < 0 || y >= img.height || x < 0 || x >= img.width)
      throw UsageError("pixel (" + std::to_string(y) + "," + std::to_string(x) +
                       ") lies outside the " + std::to_string(img.height) + "x" +
                       std::to_string(img.width) + " image");
    const int ry = static_cast<int>(static_cast<int64_t>(y) * rh / img.height);
    const int rx = static_cast<int>(static_cast<int64_t>(x) * rw / img.width);
    const auto [fy, fx] = query_feature_cell(ry, rx, rh, rw, stride);

    const std::string tag = "y" + std::to_string(y) + "_x" + std::to_string(x);
    write_pgm((fs::path(out) / ("attention_" + tag + ".pgm")).string(),
              attention_row_heatmap(map, fy, fx, stride));
    write_ppm((fs::path(out) / ("query_" + tag + ".ppm")).string(),
              mark_query_pixel(img, y, x));
    std::cerr << "wrote attention_" << tag << ".pgm and query_" << tag << ".ppm\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"object-context segmentation toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  int64_t seed_override = -1;
  std::string out = ".";
  app.add_option("--config", config_path, "run configuration file")
      ->configurable(false);
  app.add_option("--seed", seed_override, "override the configured seed");
  app.add_option("--out", out, "output directory");

  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset");

  auto* train = app.add_subcommand("train", "train a model and save a checkpoint");
  int64_t train_iters = -1;
  std::string resume;
  train->add_option("--iters", train_iters,
                    "train this many iterations (default: up to max_iter)");
  train->add_option("--resume", resume, "checkpoint to continue from");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_checkpoint, eval_manifest;
  eval->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
  eval->add_option("--manifest", eval_manifest,
                   "evaluate this manifest instead of the configured val split");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  std::string selector = "all";
  uint64_t grad_seed = 1;
  grad->add_option("check", selector, "op or module selector");
  grad->add_option("--seed", grad_seed, "probe seed");

  auto* vis = app.add_subcommand("visualize", "render attention maps for query pixels");
  std::string vis_checkpoint, vis_image;
  std::vector<std::string> vis_coords;
  vis->add_option("--checkpoint", vis_checkpoint, "checkpoint file")->required();
  vis->add_option("--image", vis_image, "input PPM image")->required();
  vis->add_option("--at", vis_coords, "query pixel as y,x (repeatable)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const RunConfig cfg = load_config_or_default(config_path, seed_override);
    if (app.got_subcommand(gen)) return cmd_gen_data(cfg, out);
    if (app.got_subcommand(train)) return cmd_train(cfg, out, train_iters, resume);
    if (app.got_subcommand(eval)) return cmd_eval(cfg, eval_checkpoint, eval_manifest);
    if (app.got_subcommand(grad)) return cmd_gradcheck(selector, grad_seed);
    if (app.got_subcommand(vis))
      return cmd_visualize(cfg, vis_checkpoint, vis_image, vis_coords, out);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
