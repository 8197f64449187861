// Run configuration: plain-text "key = value" files, one setting per line,
// '#' starts a comment, lists are comma-separated. Unknown keys and
// malformed values are rejected with the offending line number.
#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ocseg/common.hpp"
#include "ocseg/model.hpp"
#include "ocseg/training.hpp"

namespace ocseg {

struct RunConfig {
  // model
  ModuleKind module = ModuleKind::base_oc;
  std::vector<int> backbone_channels = {16, 32, 48, 64, 64};
  int mid_channels = 16;
  int out_channels = 16;
  int num_classes = 4;
  std::vector<int> pyramid_scales = {1, 2, 3, 6};
  std::vector<int> asp_rates = {12, 24, 36};
  bool scale_attention_logits = false;

  // data
  std::string train_manifest;
  std::string val_manifest;
  int ignore_label = 255;
  int height = 64;
  int width = 64;
  int train_count = 2000;
  int val_count = 200;
  int min_shapes = 1;
  int max_shapes = 4;
  bool augment = true;

  // optimization
  ScheduleConfig schedule;        // base_lr, max_iter, power, weight_decay, momentum
  SupervisionConfig supervision;  // main_weight, aux_weight
  bool ohem = false;
  double ohem_theta = 0.7;
  int64_t ohem_min_kept = 0;  // 0 = resolve to a quarter of the batch pixels
  bool class_balance = true;
  int batch_size = 4;
  int val_every = 0;  // 0 = only at the end
  int log_every = 10;

  // evaluation
  std::vector<double> eval_scales = {1.0};
  bool eval_flip = false;

  uint64_t seed = 1;

  ModelConfig model_config() const {
    ModelConfig mc;
    mc.kind = module;
    mc.backbone.stage_channels = backbone_channels;
    mc.mid_channels = mid_channels;
    mc.out_channels = out_channels;
    mc.num_classes = num_classes;
    mc.pyramid_scales = pyramid_scales;
    mc.asp_rates = asp_rates;
    mc.scale_attention_logits = scale_attention_logits;
    return mc;
  }

  OhemConfig ohem_config(int64_t batch_pixels) const {
    OhemConfig oc;
    oc.theta = ohem_theta;
    oc.min_kept = ohem_min_kept > 0 ? ohem_min_kept : std::max<int64_t>(1, batch_pixels / 4);
    return oc;
  }

  void validate() const {
    schedule.validate();
    supervision.validate();
    if (batch_size < 1) throw ContractError("batch_size must be >= 1");
    if (num_classes < 2) throw ContractError("num_classes must be >= 2");
    if (ohem) {
      if (!(ohem_theta > 0.0) || ohem_theta > 1.0)
        throw ContractError("ohem_theta must be in (0, 1]");
      if (ohem_min_kept < 0) throw ContractError("ohem_min_kept must be >= 0");
    }
    if (eval_scales.empty()) throw ContractError("eval_scales must not be empty");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

[[noreturn]] inline void bad_line(const std::string& origin, int lineno,
                                  const std::string& why) {
  throw UsageError(origin + " line " + std::to_string(lineno) + ": " + why);
}

inline int64_t parse_i64(const std::string& v, const std::string& origin, int lineno) {
  int64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    bad_line(origin, lineno, "expected an integer, got \"" + v + "\"");
  return out;
}

inline double parse_f64(const std::string& v, const std::string& origin, int lineno) {
  try {
    size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    bad_line(origin, lineno, "expected a number, got \"" + v + "\"");
  }
}

inline bool parse_bool(const std::string& v, const std::string& origin, int lineno) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  bad_line(origin, lineno, "expected true/false, got \"" + v + "\"");
}

template <typename F>
auto parse_list(const std::string& v, const std::string& origin, int lineno, F parse_one) {
  std::vector<decltype(parse_one(v, origin, lineno))> out;
  std::string item;
  std::istringstream is(v);
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (item.empty()) bad_line(origin, lineno, "empty list element");
    out.push_back(parse_one(item, origin, lineno));
  }
  if (out.empty()) bad_line(origin, lineno, "empty list");
  return out;
}

}  // namespace detail

inline RunConfig parse_run_config_text(const std::string& text,
                                       const std::string& origin) {
  RunConfig cfg;
  std::istringstream stream(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(stream, raw)) {
    ++lineno;
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw.resize(hash);
    const std::string line = detail::trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      detail::bad_line(origin, lineno, "expected \"key = value\"");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    if (key.empty()) detail::bad_line(origin, lineno, "missing key");
    if (val.empty()) detail::bad_line(origin, lineno, "missing value for " + key);

    auto as_int = [&] { return static_cast<int>(detail::parse_i64(val, origin, lineno)); };
    auto as_f = [&] { return detail::parse_f64(val, origin, lineno); };
    auto as_bool = [&] { return detail::parse_bool(val, origin, lineno); };

    if (key == "module") {
      try {
        cfg.module = parse_module_kind(val);
      } catch (const UsageError& e) {
        detail::bad_line(origin, lineno, e.what());
      }
    } else if (key == "backbone_channels") {
      auto list = detail::parse_list(val, origin, lineno, detail::parse_i64);
      cfg.backbone_channels.assign(list.begin(), list.end());
    } else if (key == "mid_channels") {
      cfg.mid_channels = as_int();
    } else if (key == "out_channels") {
      cfg.out_channels = as_int();
    } else if (key == "num_classes") {
      cfg.num_classes = as_int();
    } else if (key == "pyramid_scales") {
      auto list = detail::parse_list(val, origin, lineno, detail::parse_i64);
      cfg.pyramid_scales.assign(list.begin(), list.end());
    } else if (key == "asp_rates") {
      auto list = detail::parse_list(val, origin, lineno, detail::parse_i64);
      cfg.asp_rates.assign(list.begin(), list.end());
    } else if (key == "scale_attention_logits") {
      cfg.scale_attention_logits = as_bool();
    } else if (key == "train_manifest") {
      cfg.train_manifest = val;
    } else if (key == "val_manifest") {
      cfg.val_manifest = val;
    } else if (key == "ignore_label") {
      cfg.ignore_label = as_int();
    } else if (key == "height") {
      cfg.height = as_int();
    } else if (key == "width") {
      cfg.width = as_int();
    } else if (key == "train_count") {
      cfg.train_count = as_int();
    } else if (key == "val_count") {
      cfg.val_count = as_int();
    } else if (key == "min_shapes") {
      cfg.min_shapes = as_int();
    } else if (key == "max_shapes") {
      cfg.max_shapes = as_int();
    } else if (key == "augment") {
      cfg.augment = as_bool();
    } else if (key == "base_lr") {
      cfg.schedule.base_lr = as_f();
    } else if (key == "max_iter") {
      cfg.schedule.max_iter = detail::parse_i64(val, origin, lineno);
    } else if (key == "power") {
      cfg.schedule.power = as_f();
    } else if (key == "momentum") {
      cfg.schedule.momentum = as_f();
    } else if (key == "weight_decay") {
      cfg.schedule.weight_decay = as_f();
    } else if (key == "main_weight") {
      cfg.supervision.main_weight = as_f();
    } else if (key == "aux_weight") {
      cfg.supervision.aux_weight = as_f();
    } else if (key == "ohem") {
      cfg.ohem = as_bool();
    } else if (key == "ohem_theta") {
      cfg.ohem_theta = as_f();
    } else if (key == "ohem_min_kept") {
      cfg.ohem_min_kept = detail::parse_i64(val, origin, lineno);
    } else if (key == "class_balance") {
      cfg.class_balance = as_bool();
    } else if (key == "batch_size") {
      cfg.batch_size = as_int();
    } else if (key == "val_every") {
      cfg.val_every = as_int();
    } else if (key == "log_every") {
      cfg.log_every = as_int();
    } else if (key == "eval_scales") {
      cfg.eval_scales = detail::parse_list(val, origin, lineno, detail::parse_f64);
    } else if (key == "eval_flip") {
      cfg.eval_flip = as_bool();
    } else if (key == "seed") {
      cfg.seed = static_cast<uint64_t>(detail::parse_i64(val, origin, lineno));
    } else {
      detail::bad_line(origin, lineno, "unknown key \"" + key + "\"");
    }
  }
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw UsageError(origin + ": " + e.what());
  }
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_run_config_text(buf.str(), path);
}

}  // namespace ocseg
