// Named double-precision finite-difference gradient checks, runnable one
// group at a time from the command line. Linear ops (projections, matmul,
// upsampling) and softmax are held to 1e-6 relative error; compositions with
// normalization and nonlinearities to 1e-4.
#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ocseg/context_modules.hpp"
#include "ocseg/model.hpp"
#include "ocseg/nn.hpp"
#include "ocseg/ocp.hpp"
#include "ocseg/tensor.hpp"
#include "ocseg/training.hpp"

namespace ocseg {

struct GradCheckGroup {
  std::string name;      // which input/parameter was probed
  double max_rel_err = 0;
};

struct GradCheckResult {
  std::string check;
  double threshold = 0;
  std::vector<GradCheckGroup> groups;
  double worst = 0;
  bool passed = true;
};

namespace gradcheck_detail {

inline Tensor<double> uniform_away_from_zero(std::vector<int> shape,
                                             std::mt19937& rng) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  auto t = Tensor<double>::zeros(shape, /*requires_grad=*/true);
  for (auto& v : t.data()) {
    v = d(rng);
    // keep values off the ReLU kink so finite differences stay one-sided
    if (v >= 0 && v < 0.05) v += 0.05;
    if (v < 0 && v > -0.05) v -= 0.05;
  }
  return t;
}

// max relative error of d(sum(out*probe))/d(input) vs central differences,
// h = 1e-4, for each named input.
inline GradCheckResult check_groups(
    const std::string& check_name, double threshold,
    const std::function<Tensor<double>()>& forward,
    std::vector<NamedTensor<double>> inputs, unsigned probe_seed) {
  auto out0 = forward();
  std::mt19937 prng(probe_seed);
  std::uniform_real_distribution<double> pd(-1.0, 1.0);
  auto probe = Tensor<double>::zeros(out0.shape());
  for (auto& v : probe.data()) v = pd(prng);

  for (auto& in : inputs) in.tensor.zero_grad();
  sum_all(mul(out0, probe)).backward();

  auto loss_value = [&] {
    auto out = forward();
    double s = 0;
    for (int64_t i = 0; i < out.numel(); ++i) s += out.data()[i] * probe.data()[i];
    return s;
  };

  GradCheckResult result;
  result.check = check_name;
  result.threshold = threshold;
  const double h = 1e-4;
  for (auto& in : inputs) {
    GradCheckGroup group;
    group.name = in.name;
    auto data = in.tensor.data();
    auto grad = in.tensor.grad();
    for (int64_t i = 0; i < in.tensor.numel(); ++i) {
      const double keep = data[i];
      data[i] = keep + h;
      const double lp = loss_value();
      data[i] = keep - h;
      const double lm = loss_value();
      data[i] = keep;
      const double fd = (lp - lm) / (2 * h);
      const double denom = std::max({std::fabs(fd), std::fabs(grad[i]), 1e-6});
      group.max_rel_err = std::max(group.max_rel_err, std::fabs(fd - grad[i]) / denom);
    }
    result.worst = std::max(result.worst, group.max_rel_err);
    result.groups.push_back(std::move(group));
  }
  result.passed = result.worst < threshold;
  return result;
}

}  // namespace gradcheck_detail

inline std::vector<std::string> gradcheck_selectors() {
  return {"softmax", "linear",   "conv",       "bn",     "upsample",
          "ocp",     "base-oc",  "pyramid-oc", "asp-oc", "loss",
          "model",   "all"};
}

inline std::vector<GradCheckResult> run_gradcheck(const std::string& selector,
                                                  uint64_t seed) {
  using gradcheck_detail::check_groups;
  using gradcheck_detail::uniform_away_from_zero;
  std::mt19937 rng(static_cast<uint32_t>(seed ^ (seed >> 32)) + 7u);
  std::vector<GradCheckResult> results;
  const bool all = selector == "all";
  bool known = all;

  if (all || selector == "softmax") {
    known = true;
    auto x = uniform_away_from_zero({6, 6}, rng);
    results.push_back(check_groups(
        "softmax", 1e-6, [&] { return softmax_rows(x); }, {{"logits", x}}, 101));
  }
  if (all || selector == "linear") {
    known = true;
    auto a = uniform_away_from_zero({4, 5}, rng);
    auto b = uniform_away_from_zero({5, 3}, rng);
    results.push_back(check_groups(
        "matmul", 1e-6, [&] { return matmul(a, b); }, {{"a", a}, {"b", b}}, 102));
    auto ba = uniform_away_from_zero({2, 3, 4}, rng);
    auto bb = uniform_away_from_zero({2, 4, 2}, rng);
    results.push_back(check_groups(
        "bmm", 1e-6, [&] { return bmm(ba, bb); }, {{"a", ba}, {"b", bb}}, 103));
    auto x = uniform_away_from_zero({1, 4, 3, 3}, rng);
    auto w = uniform_away_from_zero({3, 4, 1, 1}, rng);
    results.push_back(check_groups(
        "conv1x1", 1e-6, [&] { return conv2d(x, w, 1, 0, 1); },
        {{"input", x}, {"weight", w}}, 104));
  }
  if (all || selector == "conv") {
    known = true;
    auto x = uniform_away_from_zero({2, 3, 6, 6}, rng);
    auto w = uniform_away_from_zero({4, 3, 3, 3}, rng);
    auto bias = uniform_away_from_zero({4}, rng);
    results.push_back(check_groups(
        "conv3x3", 1e-4, [&] { return conv2d(x, w, bias, 1, 1, 1); },
        {{"input", x}, {"weight", w}, {"bias", bias}}, 105));
    auto xd = uniform_away_from_zero({1, 2, 9, 9}, rng);
    auto wd = uniform_away_from_zero({2, 2, 3, 3}, rng);
    results.push_back(check_groups(
        "conv3x3-dilated", 1e-4, [&] { return conv2d(xd, wd, 1, 2, 2); },
        {{"input", xd}, {"weight", wd}}, 106));
  }
  if (all || selector == "bn") {
    known = true;
    auto x = uniform_away_from_zero({3, 4, 3, 3}, rng);
    auto gamma = uniform_away_from_zero({4}, rng);
    auto beta = uniform_away_from_zero({4}, rng);
    results.push_back(check_groups(
        "batchnorm-train", 1e-4,
        [&] {
          auto rm = Tensor<double>::zeros({4});
          auto rv = Tensor<double>::full({4}, 1.0);
          return batchnorm(x, gamma, beta, rm, rv, 1e-5, 0.1, true);
        },
        {{"input", x}, {"gamma", gamma}, {"beta", beta}}, 107));
    auto rm = uniform_away_from_zero({4}, rng);
    auto rv = Tensor<double>::full({4}, 1.5);
    results.push_back(check_groups(
        "batchnorm-eval", 1e-6,
        [&] {
          auto m = rm;  // eval mode never mutates the running stats
          auto v = rv;
          return batchnorm(x, gamma, beta, m, v, 1e-5, 0.1, false);
        },
        {{"input", x}, {"gamma", gamma}, {"beta", beta}}, 108));
  }
  if (all || selector == "upsample") {
    known = true;
    auto x = uniform_away_from_zero({1, 3, 3, 4}, rng);
    results.push_back(check_groups(
        "bilinear-upsample", 1e-6, [&] { return bilinear_upsample(x, 4); },
        {{"input", x}}, 109));
  }
  if (all || selector == "ocp") {
    known = true;
    OcpParams<double> p(5, 4, 3, &rng);
    auto x = uniform_away_from_zero({2, 5, 3, 3}, rng);
    std::vector<NamedTensor<double>> inputs{{"input", x}};
    std::vector<NamedTensor<double>> unused_buffers;
    p.collect("ocp", inputs, unused_buffers);
    results.push_back(check_groups(
        "ocp", 1e-4, [&] { return ocp_forward(x, p); }, inputs, 110));
  }
  auto module_check = [&](const std::string& name, auto&& make_module) {
    ChannelPlan plan(6, 4, 4);
    auto mod = make_module(plan);
    auto x = uniform_away_from_zero({1, 6, 4, 4}, rng);
    std::vector<NamedTensor<double>> inputs{{"input", x}};
    std::vector<NamedTensor<double>> buffers;
    mod.collect(name, inputs, buffers);
    results.push_back(check_groups(
        name, 1e-4,
        [&] { return mod.forward(x, /*training=*/true); }, inputs, 111));
  };
  if (all || selector == "base-oc") {
    known = true;
    module_check("base-oc",
                 [&](const ChannelPlan& p) { return BaseOcModule<double>(p, &rng); });
  }
  if (all || selector == "pyramid-oc") {
    known = true;
    module_check("pyramid-oc", [&](const ChannelPlan& p) {
      return PyramidOcModule<double>(p, {1, 2}, &rng);
    });
  }
  if (all || selector == "asp-oc") {
    known = true;
    module_check("asp-oc", [&](const ChannelPlan& p) {
      return AspOcModule<double>(p, {2, 3, 5}, &rng);
    });
  }
  if (all || selector == "loss") {
    known = true;
    auto main = uniform_away_from_zero({1, 3, 3, 3}, rng);
    auto aux = uniform_away_from_zero({1, 3, 3, 3}, rng);
    std::vector<int> labels = {0, 1, 2, 255, 1, 0, 2, 1, 0};
    std::vector<double> weights = {1.2, 0.8, 1.5};
    results.push_back(check_groups(
        "deep-supervised-loss", 1e-4,
        [&] {
          SupervisionConfig sup;
          return deep_supervised_loss(main, aux, labels, weights, 255, sup);
        },
        {{"main_logits", main}, {"aux_logits", aux}}, 112));
  }
  if (all || selector == "model") {
    known = true;
    ModelConfig mc;
    mc.kind = ModuleKind::base_oc;
    mc.backbone.stage_channels = {4, 4, 4, 6, 6};
    mc.mid_channels = 4;
    mc.out_channels = 4;
    mc.num_classes = 3;
    SegModel<double> model(mc, &rng);
    auto x = uniform_away_from_zero({1, 3, 16, 16}, rng);
    results.push_back(check_groups(
        "model", 1e-4,
        [&] {
          auto out = model.forward(x, /*training=*/true);
          std::vector<Tensor<double>> both = {out.main_logits, out.aux_logits};
          return concat_channels(both);
        },
        {{"input", x}}, 113));
  }
  if (!known) {
    std::string msg = "unknown gradient-check selector '" + selector + "'; valid:";
    for (const auto& s : gradcheck_selectors()) msg += " " + s;
    throw UsageError(msg);
  }
  return results;
}

}  // namespace ocseg
