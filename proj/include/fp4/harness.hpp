// Copyright 2026 The fp4train Authors
// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale FP4 training experiments. A small MLP of quantized linear layers
// is trained on a synthetic teacher-student regression task with Adam on
// binary64 master weights. Everything random (data, init, stochastic
// rounding, sign vectors) is counter-based, so a run is a pure function of
// its configuration.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fp4/counter_rng.hpp"
#include "fp4/errors.hpp"
#include "fp4/matrix.hpp"
#include "fp4/qlinear.hpp"

namespace fp4 {

// ---------------------------------------------------------------- config --

enum class LrScheduleKind : std::uint8_t { Constant, WarmupStableDecay };

struct LrSchedule {
  LrScheduleKind kind = LrScheduleKind::WarmupStableDecay;
  double peak = 3e-3;
  double warmup_fraction = 0.05;
  double decay_fraction = 0.2;
  double final_fraction = 0.0;  // lr at the last step, relative to peak

  double at(std::uint64_t step, std::uint64_t steps) const noexcept {
    if (kind == LrScheduleKind::Constant || steps == 0) return peak;
    const double t = static_cast<double>(step);
    const double n = static_cast<double>(steps);
    const double warm = warmup_fraction * n;
    const double decay_start = n * (1.0 - decay_fraction);
    if (t < warm) return peak * (t + 1.0) / warm;
    if (t < decay_start) return peak;
    const double frac = (t - decay_start) / std::max(1.0, n - 1.0 - decay_start);
    return peak * (1.0 - std::min(frac, 1.0) * (1.0 - final_fraction));
  }
};

struct OptimizerSpec {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Synthetic regression: Gaussian inputs, a frozen random tanh teacher.
/// `outlier_channels` leading input features are scaled by `outlier_scale`;
/// each sample is independently scaled by `spike_scale` with probability
/// `spike_prob`. Training labels (never validation labels) carry Gaussian
/// noise of deviation `label_noise`, and with probability `corrupt_prob` a
/// training sample's labels are replaced by noise of deviation
/// `corrupt_scale`: a heavy-tailed residual that produces gradient outliers
/// along the batch (Wgrad) dimension.
struct TaskSpec {
  std::uint64_t seed = 1;
  std::vector<std::size_t> teacher_hidden{64};
  std::size_t outlier_channels = 0;
  double outlier_scale = 1.0;
  double spike_prob = 0.0;
  double spike_scale = 1.0;
  double label_noise = 0.0;
  double corrupt_prob = 0.0;
  double corrupt_scale = 0.0;
};

enum class ExemptPosition : std::uint8_t { Last, First, FirstAndLast };

/// Which layers stay in high precision. FirstAndLast splits `count`, with
/// the larger half at the end.
struct ExemptionRule {
  ExemptPosition position = ExemptPosition::Last;
  std::size_t count = 1;
};

enum class SwitchScope : std::uint8_t { Forward, Backward, Both };

struct PrecisionSwitch {
  std::uint64_t step = 0;
  SwitchScope scope = SwitchScope::Both;
};

enum class Ablation : std::uint8_t {
  NoSR,
  NoRHT,
  No2D,
  FewerExempt,
  FirstExempt,
  Mxfp4,
  RhtDim4,
  RhtDim16,
  RhtDim128,
  SignNone,
  SignFixed,
  SignPerInstance,
};

using Variant = std::vector<Ablation>;

struct ExperimentConfig {
  std::vector<std::size_t> widths{32, 64, 64, 64, 8};  // input, hidden..., output
  TaskSpec task;
  std::uint64_t steps = 400;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;
  OptimizerSpec optimizer;
  LrSchedule lr;
  LayerPolicy policy;
  ExemptionRule exemption;
  std::optional<PrecisionSwitch> precision_switch;
  std::uint64_t eval_every = 50;
  std::size_t val_size = 256;
  std::vector<Variant> ablations;  // used by the ablation suite only

  std::size_t layer_count() const noexcept { return widths.size() < 2 ? 0 : widths.size() - 1; }
};

inline constexpr std::string_view ablation_name(Ablation a) noexcept {
  switch (a) {
    case Ablation::NoSR: return "no_sr";
    case Ablation::NoRHT: return "no_rht";
    case Ablation::No2D: return "no_2d";
    case Ablation::FewerExempt: return "fewer_exempt";
    case Ablation::FirstExempt: return "first_exempt";
    case Ablation::Mxfp4: return "mxfp4";
    case Ablation::RhtDim4: return "rht_dim_4";
    case Ablation::RhtDim16: return "rht_dim_16";
    case Ablation::RhtDim128: return "rht_dim_128";
    case Ablation::SignNone: return "sign_none";
    case Ablation::SignFixed: return "sign_fixed";
    case Ablation::SignPerInstance: return "sign_per_instance";
  }
  return "?";
}

inline std::optional<Ablation> parse_ablation(std::string_view s) noexcept {
  for (int i = 0; i <= static_cast<int>(Ablation::SignPerInstance); ++i) {
    const auto a = static_cast<Ablation>(i);
    if (ablation_name(a) == s) return a;
  }
  return std::nullopt;
}

inline std::string variant_name(const Variant& v) {
  if (v.empty()) return "base";
  std::string out;
  for (Ablation a : v) {
    if (!out.empty()) out += '+';
    out += ablation_name(a);
  }
  return out;
}

/// Every schema violation of a configuration, with the offending field.
inline std::vector<std::string> validate(const ExperimentConfig& c) {
  std::vector<std::string> v;
  if (c.widths.size() < 2) v.push_back("network.widths: need at least input and output width");
  for (std::size_t i = 0; i < c.widths.size(); ++i)
    if (c.widths[i] == 0) v.push_back("network.widths[" + std::to_string(i) + "]: must be positive");
  for (std::size_t i = 0; i < c.task.teacher_hidden.size(); ++i)
    if (c.task.teacher_hidden[i] == 0) v.push_back("task.teacher_hidden[" + std::to_string(i) + "]: must be positive");
  if (!c.widths.empty() && c.task.outlier_channels > c.widths.front())
    v.push_back("task.outlier_channels: exceeds input width");
  if (!(c.task.outlier_scale > 0.0)) v.push_back("task.outlier_scale: must be positive");
  if (!(c.task.spike_prob >= 0.0 && c.task.spike_prob <= 1.0)) v.push_back("task.spike_prob: must lie in [0, 1]");
  if (!(c.task.spike_scale > 0.0)) v.push_back("task.spike_scale: must be positive");
  if (!(c.task.label_noise >= 0.0)) v.push_back("task.label_noise: must be non-negative");
  if (!(c.task.corrupt_prob >= 0.0 && c.task.corrupt_prob <= 1.0))
    v.push_back("task.corrupt_prob: must lie in [0, 1]");
  if (!(c.task.corrupt_scale >= 0.0)) v.push_back("task.corrupt_scale: must be non-negative");
  if (c.steps == 0) v.push_back("steps: must be positive");
  if (c.batch_size == 0) v.push_back("batch_size: must be positive");
  if (!(c.lr.peak > 0.0)) v.push_back("lr_schedule.peak_lr: must be positive");
  if (!(c.lr.warmup_fraction >= 0.0 && c.lr.warmup_fraction <= 1.0))
    v.push_back("lr_schedule.warmup_fraction: must lie in [0, 1]");
  if (!(c.lr.decay_fraction >= 0.0 && c.lr.decay_fraction <= 1.0))
    v.push_back("lr_schedule.decay_fraction: must lie in [0, 1]");
  if (!(c.lr.warmup_fraction + c.lr.decay_fraction <= 1.0))
    v.push_back("lr_schedule: warmup_fraction + decay_fraction must not exceed 1");
  if (!(c.lr.final_fraction >= 0.0 && c.lr.final_fraction <= 1.0))
    v.push_back("lr_schedule.final_lr_fraction: must lie in [0, 1]");
  if (!(c.optimizer.beta1 >= 0.0 && c.optimizer.beta1 < 1.0)) v.push_back("optimizer.beta1: must lie in [0, 1)");
  if (!(c.optimizer.beta2 >= 0.0 && c.optimizer.beta2 < 1.0)) v.push_back("optimizer.beta2: must lie in [0, 1)");
  if (!(c.optimizer.eps > 0.0)) v.push_back("optimizer.eps: must be positive");
  if (!(c.optimizer.weight_decay >= 0.0)) v.push_back("optimizer.weight_decay: must be non-negative");
  if (c.exemption.count > c.layer_count()) v.push_back("exemption.count: exceeds the number of layers");
  if (c.precision_switch && c.precision_switch->step > c.steps)
    v.push_back("precision_switch.step: must not exceed steps");
  if (c.eval_every == 0) v.push_back("eval_every: must be positive");
  if (c.val_size == 0) v.push_back("val_size: must be positive");
  const LayerPolicy& p = c.policy;
  if (p.rht_dim < 2 || (p.rht_dim & (p.rht_dim - 1)) != 0) v.push_back("policy.rht_dim: must be a power of two >= 2");
  if (p.weight_layout == LayoutKind::Cols1D) v.push_back("policy.weight_layout: must be 'square' or 'rows'");
  if (p.act_grad_layout != LayoutKind::Rows1D) v.push_back("policy.act_grad_layout: must be 'rows'");
  return v;
}

// ------------------------------------------------------------------ data --

/// Stream identifiers of the harness's own randomness.
enum class HarnessStream : std::uint64_t {
  TrainData = 101,
  ValData = 102,
  Teacher = 103,
  Init = 104,
  Spike = 105,
  LabelNoise = 106,
  Corrupt = 107,
};

class TeacherTask {
 public:
  TeacherTask(const TaskSpec& spec, std::size_t in, std::size_t out) : spec_(spec), in_(in) {
    std::vector<std::size_t> w{in};
    w.insert(w.end(), spec.teacher_hidden.begin(), spec.teacher_hidden.end());
    w.push_back(out);
    const RandomStream s{spec.seed, static_cast<std::uint64_t>(HarnessStream::Teacher)};
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
      Matrix m(w[l + 1], w[l]);
      const RandomStream ls = s.substream({l});
      const double stdv = 1.0 / std::sqrt(static_cast<double>(w[l]));
      for (std::size_t i = 0; i < m.size(); ++i) m.values()[i] = stdv * ls.normal(i);
      layers_.push_back(std::move(m));
    }
  }

  /// Samples [first, first + n) of a stream. The teacher sees the inputs
  /// without the outlier-channel factor, so the student must learn to undo it.
  void sample(HarnessStream which, std::uint64_t first, std::size_t n, Matrix& x, Matrix& y) const {
    const RandomStream s{spec_.seed, static_cast<std::uint64_t>(which)};
    const RandomStream spike = s.substream({static_cast<std::uint64_t>(HarnessStream::Spike)});
    Matrix clean(n, in_);
    x = Matrix(n, in_);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint64_t id = first + i;
      const bool spiked = spec_.spike_prob > 0.0 && spike.uniform(id) < spec_.spike_prob;
      for (std::size_t j = 0; j < in_; ++j) {
        double v = s.normal(id * in_ + j);
        if (spiked) v *= spec_.spike_scale;
        clean(i, j) = v;
        x(i, j) = j < spec_.outlier_channels ? v * spec_.outlier_scale : v;
      }
    }
    y = teacher(clean);
    if (which != HarnessStream::TrainData) return;
    const RandomStream noise = s.substream({static_cast<std::uint64_t>(HarnessStream::LabelNoise)});
    const RandomStream corrupt = s.substream({static_cast<std::uint64_t>(HarnessStream::Corrupt)});
    const RandomStream corrupt_value = corrupt.substream({1});
    const std::size_t out = y.cols();
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint64_t id = first + i;
      const bool corrupted = spec_.corrupt_prob > 0.0 && corrupt.uniform(id) < spec_.corrupt_prob;
      for (std::size_t j = 0; j < out; ++j) {
        if (corrupted)
          y(i, j) = spec_.corrupt_scale * corrupt_value.normal(id * out + j);
        else if (spec_.label_noise > 0.0)
          y(i, j) += spec_.label_noise * noise.normal(id * out + j);
      }
    }
  }

 private:
  Matrix teacher(const Matrix& x) const {
    Matrix h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      h = matmul_nt(h, layers_[l]);
      if (l + 1 < layers_.size())
        for (double& v : h.values()) v = std::tanh(v);
    }
    return h;
  }

  TaskSpec spec_;
  std::size_t in_;
  std::vector<Matrix> layers_;
};

// --------------------------------------------------------------- records --

struct GemmSummary {
  std::size_t samples = 0;
  double mean_rel_error_a = 0.0;
  double mean_rel_error_b = 0.0;
  std::size_t saturated = 0;
  std::size_t underflow = 0;
};

struct LayerTraceSummary {
  std::size_t layer = 0;
  std::array<GemmSummary, 3> gemms{};
  std::size_t inconsistent_steps = 0;
};

struct RunRecord {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<double> train_loss;
  std::vector<std::pair<std::uint64_t, double>> val_loss;
  std::vector<LayerTraceSummary> traces;
  std::optional<std::uint64_t> diverged_at;
  std::optional<std::uint64_t> switch_step;
  double final_val_loss = 0.0;

  bool diverged() const noexcept { return diverged_at.has_value(); }
};

/// Relative loss difference (baseline - experiment) / baseline: negative
/// means the experiment is worse.
inline double relative_loss_difference(double baseline, double experiment) noexcept {
  return (baseline - experiment) / baseline;
}

// ---------------------------------------------------------------- policy --

inline std::vector<bool> exempt_layers(const ExemptionRule& rule, std::size_t layers) {
  std::vector<bool> ex(layers, false);
  const std::size_t n = std::min(rule.count, layers);
  switch (rule.position) {
    case ExemptPosition::Last:
      for (std::size_t i = 0; i < n; ++i) ex[layers - 1 - i] = true;
      break;
    case ExemptPosition::First:
      for (std::size_t i = 0; i < n; ++i) ex[i] = true;
      break;
    case ExemptPosition::FirstAndLast: {
      const std::size_t first = n / 2;
      for (std::size_t i = 0; i < first; ++i) ex[i] = true;
      for (std::size_t i = 0; i < n - first; ++i) ex[layers - 1 - i] = true;
      break;
    }
  }
  return ex;
}

/// Per-layer policies in effect at `step`.
inline std::vector<LayerPolicy> layer_policies(const ExperimentConfig& c, std::uint64_t step) {
  const std::vector<bool> ex = exempt_layers(c.exemption, c.layer_count());
  std::vector<LayerPolicy> out;
  for (std::size_t l = 0; l < c.layer_count(); ++l) {
    LayerPolicy p = ex[l] ? LayerPolicy::high_precision() : c.policy;
    if (c.precision_switch && step >= c.precision_switch->step) {
      switch (c.precision_switch->scope) {
        case SwitchScope::Forward: p.quantized_gemms.erase(GemmKind::Fprop); break;
        case SwitchScope::Backward:
          p.quantized_gemms.erase(GemmKind::Dgrad);
          p.quantized_gemms.erase(GemmKind::Wgrad);
          break;
        case SwitchScope::Both: p.quantized_gemms = GemmSet{}; break;
      }
    }
    out.push_back(p);
  }
  return out;
}

inline ExperimentConfig apply_variant(ExperimentConfig c, const Variant& v) {
  for (Ablation a : v) {
    LayerPolicy& p = c.policy;
    switch (a) {
      case Ablation::NoSR: p.sr_roles = RoleSet{}; break;
      case Ablation::NoRHT: p.rht_gemms = GemmSet{}; break;
      case Ablation::No2D: p.weight_layout = LayoutKind::Rows1D; break;
      case Ablation::FewerExempt: c.exemption.count = c.exemption.count > 0 ? c.exemption.count - 1 : 0; break;
      case Ablation::FirstExempt: c.exemption.position = ExemptPosition::First; break;
      case Ablation::Mxfp4:
        p.format = FormatSpec::mxfp4();
        p.rht_dim = std::max<std::size_t>(p.rht_dim, 32);  // transform size follows the block size
        break;
      case Ablation::RhtDim4: p.rht_dim = 4; break;
      case Ablation::RhtDim16: p.rht_dim = 16; break;
      case Ablation::RhtDim128: p.rht_dim = 128; break;
      case Ablation::SignNone: p.sign_strategy = SignSeedStrategy::None; break;
      case Ablation::SignFixed: p.sign_strategy = SignSeedStrategy::Fixed; break;
      case Ablation::SignPerInstance: p.sign_strategy = SignSeedStrategy::PerInstance; break;
    }
  }
  c.ablations.clear();
  return c;
}

// ---------------------------------------------------------------- network --

class Network {
 public:
  Network(const ExperimentConfig& c) {
    const RandomStream init{c.seed, static_cast<std::uint64_t>(HarnessStream::Init)};
    for (std::size_t l = 0; l < c.layer_count(); ++l) {
      LinearLayerState s;
      s.weights = Matrix(c.widths[l + 1], c.widths[l]);
      s.layer_index = l;
      s.seed = c.seed;
      const RandomStream ls = init.substream({l});
      const double stdv = std::sqrt((l + 1 < c.layer_count() ? 2.0 : 1.0) / static_cast<double>(c.widths[l]));
      for (std::size_t i = 0; i < s.weights.size(); ++i) s.weights.values()[i] = stdv * ls.normal(i);
      layers_.push_back(std::move(s));
      biases_.emplace_back(c.widths[l + 1], 0.0);
    }
  }

  std::size_t size() const noexcept { return layers_.size(); }
  LinearLayerState& layer(std::size_t l) noexcept { return layers_[l]; }
  std::vector<double>& bias(std::size_t l) noexcept { return biases_[l]; }

  struct Pass {
    Matrix output;
    std::vector<ForwardContext> contexts;
    std::vector<Matrix> pre_activations;  // hidden layers only
  };

  Pass forward(const Matrix& x, const std::vector<LayerPolicy>& policies, std::uint64_t step) const {
    Pass pass;
    Matrix h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      ForwardResult r = fp4::forward(layers_[l], h, policies[l], step);
      for (std::size_t i = 0; i < r.output.rows(); ++i)
        for (std::size_t j = 0; j < r.output.cols(); ++j) r.output(i, j) += biases_[l][j];
      pass.contexts.push_back(std::move(r.context));
      if (l + 1 < layers_.size()) {
        pass.pre_activations.push_back(r.output);
        for (double& v : r.output.values()) v = std::max(v, 0.0);
      }
      h = std::move(r.output);
    }
    pass.output = std::move(h);
    return pass;
  }

 private:
  std::vector<LinearLayerState> layers_;
  std::vector<std::vector<double>> biases_;
};

inline double mse(const Matrix& pred, const Matrix& target) {
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred.values()[i] - target.values()[i];
    s += d * d;
  }
  return s / static_cast<double>(pred.size());
}

class Adam {
 public:
  explicit Adam(const OptimizerSpec& spec) : spec_(spec) {}

  void update(std::span<double> params, std::span<const double> grads, std::size_t slot, double lr) {
    if (slot >= m_.size()) {
      m_.resize(slot + 1);
      v_.resize(slot + 1);
    }
    if (m_[slot].empty()) {
      m_[slot].assign(params.size(), 0.0);
      v_[slot].assign(params.size(), 0.0);
    }
    const double bc1 = 1.0 - std::pow(spec_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(spec_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[slot][i] = spec_.beta1 * m_[slot][i] + (1.0 - spec_.beta1) * grads[i];
      v_[slot][i] = spec_.beta2 * v_[slot][i] + (1.0 - spec_.beta2) * grads[i] * grads[i];
      const double mh = m_[slot][i] / bc1;
      const double vh = v_[slot][i] / bc2;
      params[i] -= lr * (mh / (std::sqrt(vh) + spec_.eps) + spec_.weight_decay * params[i]);
    }
  }

  void next_step() noexcept { ++t_; }

 private:
  OptimizerSpec spec_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ------------------------------------------------------------ experiment --

inline std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Canonical text of every field that influences a run (used for hashing).
inline std::string canonical_string(const ExperimentConfig& c) {
  std::ostringstream o;
  o.precision(17);
  o << "widths";
  for (auto w : c.widths) o << ' ' << w;
  o << "|task " << c.task.seed << ' ' << c.task.outlier_channels << ' ' << c.task.outlier_scale << ' '
    << c.task.spike_prob << ' ' << c.task.spike_scale << ' ' << c.task.label_noise << ' ' << c.task.corrupt_prob
    << ' ' << c.task.corrupt_scale << " th";
  for (auto w : c.task.teacher_hidden) o << ' ' << w;
  o << "|steps " << c.steps << "|batch " << c.batch_size << "|seed " << c.seed;
  o << "|opt " << c.optimizer.beta1 << ' ' << c.optimizer.beta2 << ' ' << c.optimizer.eps << ' '
    << c.optimizer.weight_decay;
  o << "|lr " << static_cast<int>(c.lr.kind) << ' ' << c.lr.peak << ' ' << c.lr.warmup_fraction << ' '
    << c.lr.decay_fraction << ' ' << c.lr.final_fraction;
  const LayerPolicy& p = c.policy;
  o << "|policy " << p.quantize << ' ' << p.format.name() << ' ' << static_cast<int>(p.weight_layout) << ' '
    << static_cast<int>(p.act_grad_layout) << ' ' << p.rht_dim << ' ' << static_cast<int>(p.sign_strategy) << ' '
    << p.sign_seed << ' ' << p.bf16_saved_activations << ' ' << static_cast<int>(p.accumulation);
  for (int k = 0; k < 3; ++k)
    o << ' ' << p.rht_gemms.contains(static_cast<GemmKind>(k)) << p.quantized_gemms.contains(static_cast<GemmKind>(k))
      << p.sr_roles.contains(static_cast<TensorRole>(k));
  o << "|exempt " << static_cast<int>(c.exemption.position) << ' ' << c.exemption.count;
  if (c.precision_switch)
    o << "|switch " << c.precision_switch->step << ' ' << static_cast<int>(c.precision_switch->scope);
  o << "|eval " << c.eval_every << ' ' << c.val_size;
  return o.str();
}

inline std::string config_hash(const ExperimentConfig& c) {
  std::ostringstream o;
  o << std::hex;
  o.width(16);
  o.fill('0');
  o << fnv1a64(canonical_string(c));
  return o.str();
}

namespace detail {

inline void accumulate_trace(LayerTraceSummary& s, const GemmTrace& t) {
  for (std::size_t k = 0; k < 3; ++k) {
    const GemmRecord& r = t.gemms[k];
    if (!r.quantized) continue;
    GemmSummary& g = s.gemms[k];
    const double n = static_cast<double>(g.samples);
    g.mean_rel_error_a = (g.mean_rel_error_a * n + r.a.rel_error) / (n + 1.0);
    g.mean_rel_error_b = (g.mean_rel_error_b * n + r.b.rel_error) / (n + 1.0);
    g.saturated += r.a.saturated + r.b.saturated;
    g.underflow += r.a.underflow + r.b.underflow;
    ++g.samples;
  }
  if (!t.consistent) ++s.inconsistent_steps;
}

}  // namespace detail

/// Train according to `c`. Divergence (non-finite loss) ends the run early
/// and is recorded, never thrown.
inline RunRecord run_experiment(const ExperimentConfig& c) {
  if (auto v = validate(c); !v.empty()) throw ConfigError(std::move(v));
  RunRecord rec;
  rec.config_hash = config_hash(c);
  rec.seed = c.seed;
  if (c.precision_switch) rec.switch_step = c.precision_switch->step;
  for (std::size_t l = 0; l < c.layer_count(); ++l) rec.traces.push_back({l, {}, 0});

  const TeacherTask task(c.task, c.widths.front(), c.widths.back());
  Matrix val_x, val_y;
  task.sample(HarnessStream::ValData, 0, c.val_size, val_x, val_y);
  Network net(c);
  Adam adam(c.optimizer);

  // Validation never draws stochastic rounding from a training step's streams.
  constexpr std::uint64_t kValStepBase = 1ull << 62;

  Matrix x, y;
  for (std::uint64_t step = 0; step < c.steps; ++step) {
    try {
      const std::vector<LayerPolicy> policies = layer_policies(c, step);
      task.sample(HarnessStream::TrainData, step * c.batch_size, c.batch_size, x, y);
      Network::Pass pass = net.forward(x, policies, step);
      const double loss = mse(pass.output, y);
      rec.train_loss.push_back(loss);
      if (!std::isfinite(loss)) {
        rec.diverged_at = step;
        break;
      }

      // dL/dy for the mean-squared error
      Matrix grad = subtract(pass.output, y);
      const double norm = 2.0 / static_cast<double>(grad.size());
      for (double& v : grad.values()) v *= norm;

      adam.next_step();
      const double lr = c.lr.at(step, c.steps);
      for (std::size_t l = net.size(); l-- > 0;) {
        std::vector<double> db(grad.cols(), 0.0);
        for (std::size_t i = 0; i < grad.rows(); ++i)
          for (std::size_t j = 0; j < grad.cols(); ++j) db[j] += grad(i, j);
        BackwardResult br = backward(pass.contexts[l], grad);
        detail::accumulate_trace(rec.traces[l], br.trace);
        adam.update(net.layer(l).weights.values(), br.weight_grad.values(), 2 * l, lr);
        adam.update(net.bias(l), db, 2 * l + 1, lr);
        if (l > 0) {
          const Matrix& pre = pass.pre_activations[l - 1];
          grad = std::move(br.input_grad);
          for (std::size_t i = 0; i < grad.size(); ++i)
            if (pre.values()[i] <= 0.0) grad.values()[i] = 0.0;
        }
      }

      if ((step + 1) % c.eval_every == 0 || step + 1 == c.steps) {
        const double v = mse(net.forward(val_x, policies, kValStepBase + step).output, val_y);
        rec.val_loss.emplace_back(step, v);
        if (!std::isfinite(v)) {
          rec.diverged_at = step;
          break;
        }
      }
    } catch (const InvalidInput&) {
      // Quantizers refuse non-finite activations or gradients: the run diverged.
      rec.diverged_at = step;
      break;
    }
  }
  rec.final_val_loss = rec.diverged() ? std::numeric_limits<double>::quiet_NaN() : rec.val_loss.back().second;
  return rec;
}

/// run_experiment for a configuration that must carry a precision switch.
inline RunRecord run_precision_switch(const ExperimentConfig& c) {
  if (!c.precision_switch) throw ConfigError({"precision_switch: required for a precision-switch run"});
  return run_experiment(c);
}

struct AblationRow {
  std::string name;
  RunRecord record;
  double rel_vs_base = 0.0;  // (base - variant) / base on final validation loss
  double rel_vs_wide = 0.0;  // (wide - variant) / wide
};

struct AblationTable {
  RunRecord reference;  // all layers in high precision, same seed
  std::vector<AblationRow> rows;  // base first, then one row per variant
};

inline ExperimentConfig wide_reference(ExperimentConfig c) {
  c.policy.quantize = false;
  c.precision_switch.reset();
  c.ablations.clear();
  return c;
}

/// Base run plus one run per variant, all sharing the base seed (identical
/// data order and initialization). Diverged variants are kept as rows with
/// NaN differences.
inline AblationTable run_ablation_suite(const ExperimentConfig& base, const std::vector<Variant>& variants) {
  AblationTable t;
  t.reference = run_experiment(wide_reference(base));
  const RunRecord base_rec = run_experiment(apply_variant(base, {}));
  const double wide = t.reference.final_val_loss;
  const double b = base_rec.final_val_loss;
  t.rows.push_back({"base", base_rec, 0.0, relative_loss_difference(wide, b)});
  for (const Variant& v : variants) {
    RunRecord r = run_experiment(apply_variant(base, v));
    const double f = r.final_val_loss;
    t.rows.push_back({variant_name(v), std::move(r), relative_loss_difference(b, f), relative_loss_difference(wide, f)});
  }
  return t;
}

}  // namespace fp4
