// Copyright 2026 The fp4train Authors
// SPDX-License-Identifier: Apache-2.0
//
// Quantized linear layer y = x * W^T with the three training GEMMs
//
//   Fprop  y  = x  * W^T     (K = in)
//   Dgrad  dx = dy * W       (K = out)
//   Wgrad  dW = dy^T * x     (K = batch)
//
// each emulated in FP4 according to a LayerPolicy. Master weights stay in
// binary64. With 2D (square) weight scaling the Dgrad weight operand is the
// transposed view of the exact tensor used in Fprop, so the backward pass
// differentiates the function evaluated in the forward pass. With 1D weight
// scaling the weight is requantized along the new dot-product dimension.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <string>
#include <utility>

#include "fp4/block_quant.hpp"
#include "fp4/codecs.hpp"
#include "fp4/counter_rng.hpp"
#include "fp4/errors.hpp"
#include "fp4/matrix.hpp"
#include "fp4/metrics.hpp"
#include "fp4/qgemm.hpp"
#include "fp4/rht.hpp"

namespace fp4 {

enum class TensorRole : std::uint8_t { Activation = 0, Weight = 1, Gradient = 2 };

enum class SignSeedStrategy : std::uint8_t { None, Fixed, PerInstance };

/// Small fixed-size set over an enum with values 0..N-1.
template <class Enum, std::size_t N>
class EnumSet {
 public:
  constexpr EnumSet() = default;
  constexpr EnumSet(std::initializer_list<Enum> items) {
    for (Enum e : items) insert(e);
  }
  static constexpr EnumSet all() {
    EnumSet s;
    s.bits_.fill(true);
    return s;
  }
  constexpr bool contains(Enum e) const noexcept { return bits_[static_cast<std::size_t>(e)]; }
  constexpr void insert(Enum e) noexcept { bits_[static_cast<std::size_t>(e)] = true; }
  constexpr void erase(Enum e) noexcept { bits_[static_cast<std::size_t>(e)] = false; }
  constexpr bool empty() const noexcept {
    for (bool b : bits_)
      if (b) return false;
    return true;
  }
  friend constexpr bool operator==(const EnumSet&, const EnumSet&) = default;

 private:
  std::array<bool, N> bits_{};
};

using GemmSet = EnumSet<GemmKind, 3>;
using RoleSet = EnumSet<TensorRole, 3>;

/// Per-layer precision decisions. The defaults are the recommended FP4
/// training configuration: 16x16 weight scaling, 1x16 activation/gradient
/// scaling, RHT (d = 16, one shared sign vector) on Wgrad inputs only, and
/// stochastic rounding on gradients only.
struct LayerPolicy {
  bool quantize = true;
  FormatSpec format = FormatSpec::nvfp4();
  LayoutKind weight_layout = LayoutKind::Square2D;
  LayoutKind act_grad_layout = LayoutKind::Rows1D;
  GemmSet rht_gemms{GemmKind::Wgrad};
  std::size_t rht_dim = 16;
  SignSeedStrategy sign_strategy = SignSeedStrategy::Fixed;
  std::uint64_t sign_seed = 0x9E3779B9ull;
  RoleSet sr_roles{TensorRole::Gradient};
  /// GEMMs that actually run in FP4; a precision switch clears entries.
  GemmSet quantized_gemms = GemmSet::all();
  /// High-precision layers only: keep the saved activation rounded to BF16.
  bool bf16_saved_activations = false;
  Accumulation accumulation = Accumulation::Binary64;

  static LayerPolicy recommended() { return {}; }
  static LayerPolicy high_precision() {
    LayerPolicy p;
    p.quantize = false;
    return p;
  }

  bool runs_quantized(GemmKind k) const noexcept { return quantize && quantized_gemms.contains(k); }

  friend bool operator==(const LayerPolicy&, const LayerPolicy&) = default;
};

struct LinearLayerState {
  Matrix weights;  // out x in, binary64 master copy
  std::size_t layer_index = 0;
  std::uint64_t seed = 0;  // global run seed; keys every random stream
};

struct OperandStats {
  double rel_error = 0.0;
  std::size_t saturated = 0;
  std::size_t underflow = 0;
};

struct GemmRecord {
  GemmKind kind = GemmKind::Fprop;
  bool quantized = false;
  bool transformed = false;
  OperandStats a, b;
};

struct GemmTrace {
  std::array<GemmRecord, 3> gemms{GemmRecord{GemmKind::Fprop, false, false, {}, {}},
                                  GemmRecord{GemmKind::Dgrad, false, false, {}, {}},
                                  GemmRecord{GemmKind::Wgrad, false, false, {}, {}}};
  /// Forward and Dgrad used bitwise-identical dequantized weights.
  bool consistent = true;

  const GemmRecord& operator[](GemmKind k) const noexcept { return gemms[static_cast<std::size_t>(k)]; }
  GemmRecord& operator[](GemmKind k) noexcept { return gemms[static_cast<std::size_t>(k)]; }
};

/// Random-stream tags of the tensors quantized in one layer step.
enum class StreamTag : std::uint64_t {
  FpropActivation = 1,
  FpropWeight = 2,
  DgradGradient = 3,
  DgradWeight = 4,
  WgradGradient = 5,
  WgradActivation = 6,
  HadamardSigns = 7,
};

/// Stream keyed by (global seed, layer, step, tag): draws never repeat
/// across steps or tensors.
constexpr RandomStream tensor_stream(std::uint64_t seed, std::size_t layer, std::uint64_t step, StreamTag tag) noexcept {
  return {seed, mix_ids({layer, step, static_cast<std::uint64_t>(tag)})};
}

inline HadamardSpec rht_spec_for(const LayerPolicy& p, std::size_t layer, std::uint64_t step, GemmKind gemm) {
  HadamardSpec spec{p.rht_dim, p.sign_seed, p.sign_strategy != SignSeedStrategy::None};
  if (p.sign_strategy == SignSeedStrategy::PerInstance)
    spec.sign_seed = mix_ids({p.sign_seed, layer, step, static_cast<std::uint64_t>(gemm),
                              static_cast<std::uint64_t>(StreamTag::HadamardSigns)});
  return spec;
}

/// One GEMM out = a * b^T, both operands K-major.
struct GemmSettings {
  bool quantize = false;
  FormatSpec format = FormatSpec::nvfp4();
  LayoutKind a_layout = LayoutKind::Rows1D;
  LayoutKind b_layout = LayoutKind::Rows1D;
  RoundingMode a_mode = NearestEven{};
  RoundingMode b_mode = NearestEven{};
  /// Applied to both operands along K (after zero padding K to a multiple
  /// of d), so it cancels in the product.
  std::optional<HadamardSpec> rht;
  Accumulation accumulation = Accumulation::Binary64;
};

struct GemmResult {
  Matrix out;
  GemmRecord record;
  std::optional<QuantizedTensor> qa, qb;
};

namespace detail {

inline OperandStats operand_stats(const Matrix& x, const QuantizedTensor& q) {
  const QuantStats s = quantization_stats(x, q);
  return {s.rel_error, s.saturated, s.underflow};
}

}  // namespace detail

/// Emulate one GEMM. A pre-quantized b operand is used as-is.
inline GemmResult emulated_gemm(GemmKind kind, Matrix a, Matrix b, const GemmSettings& s,
                                std::optional<QuantizedTensor> b_prequantized = std::nullopt) {
  GemmResult r;
  r.record.kind = kind;
  if (s.rht) {
    if (b_prequantized) throw ShapeError("emulated_gemm: cannot transform a pre-quantized operand");
    const HadamardMatrix h = build_hadamard(*s.rht);
    a = apply_rht_tiled(pad_cols(a, h.dim()), h);
    b = apply_rht_tiled(pad_cols(b, h.dim()), h);
    r.record.transformed = true;
  }
  if (!s.quantize) {
    r.out = matmul_nt(a, b);
    return r;
  }
  r.record.quantized = true;
  r.qa = quantize(a, s.format, layout_for(s.format, s.a_layout), s.a_mode);
  r.record.a = detail::operand_stats(a, *r.qa);
  if (b_prequantized) {
    r.qb = std::move(b_prequantized);
  } else {
    r.qb = quantize(b, s.format, layout_for(s.format, s.b_layout), s.b_mode);
  }
  if (r.qb->rows() == b.rows() && r.qb->cols() == b.cols()) r.record.b = detail::operand_stats(b, *r.qb);
  r.out = scaled_gemm(*r.qa, *r.qb, s.accumulation);
  return r;
}

struct ForwardContext {
  bool valid = false;
  Matrix input;    // wide x as saved for Wgrad
  Matrix weights;  // master weights at forward time
  LayerPolicy policy;
  std::size_t layer_index = 0;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  /// Quantized weight used by Fprop, reusable by Dgrad (untransformed only).
  std::optional<QuantizedTensor> fprop_weight;
  GemmRecord fprop;
};

struct ForwardResult {
  Matrix output;
  ForwardContext context;
};

struct BackwardResult {
  Matrix input_grad;   // dx, batch x in
  Matrix weight_grad;  // dW, out x in
  GemmTrace trace;
};

namespace detail {

inline RoundingMode mode_for(const LayerPolicy& p, TensorRole role, const LinearLayerState& layer, std::uint64_t step,
                             StreamTag tag) {
  if (p.sr_roles.contains(role)) return Stochastic{tensor_stream(layer.seed, layer.layer_index, step, tag)};
  return NearestEven{};
}

inline RoundingMode mode_for(const ForwardContext& c, TensorRole role, StreamTag tag) {
  if (c.policy.sr_roles.contains(role)) return Stochastic{tensor_stream(c.seed, c.layer_index, c.step, tag)};
  return NearestEven{};
}

}  // namespace detail

/// Fprop. `step` keys the random streams of this invocation.
inline ForwardResult forward(const LinearLayerState& layer, const Matrix& x, const LayerPolicy& policy,
                             std::uint64_t step) {
  const Matrix& w = layer.weights;
  if (x.cols() != w.cols())
    throw ShapeError("qlinear forward: input has " + std::to_string(x.cols()) + " features, layer expects " +
                     std::to_string(w.cols()));
  ForwardResult res;
  ForwardContext& ctx = res.context;
  ctx.valid = true;
  ctx.weights = w;
  ctx.policy = policy;
  ctx.layer_index = layer.layer_index;
  ctx.seed = layer.seed;
  ctx.step = step;

  GemmSettings s;
  s.quantize = policy.runs_quantized(GemmKind::Fprop);
  s.format = policy.format;
  s.a_layout = policy.act_grad_layout;
  s.b_layout = policy.weight_layout;
  s.accumulation = policy.accumulation;
  if (s.quantize) {
    s.a_mode = detail::mode_for(policy, TensorRole::Activation, layer, step, StreamTag::FpropActivation);
    s.b_mode = detail::mode_for(policy, TensorRole::Weight, layer, step, StreamTag::FpropWeight);
    if (policy.rht_gemms.contains(GemmKind::Fprop))
      s.rht = rht_spec_for(policy, layer.layer_index, step, GemmKind::Fprop);
  }
  GemmResult g = emulated_gemm(GemmKind::Fprop, x, w, s);
  res.output = std::move(g.out);
  ctx.fprop = g.record;
  if (g.qb && !s.rht) ctx.fprop_weight = std::move(g.qb);
  ctx.input = (!policy.quantize && policy.bf16_saved_activations) ? to_bf16(x) : x;
  return res;
}

/// Dgrad and Wgrad for a context produced by forward().
inline BackwardResult backward(const ForwardContext& ctx, const Matrix& dy) {
  if (!ctx.valid) throw Error("qlinear backward: missing forward context");
  const Matrix& w = ctx.weights;
  if (dy.rows() != ctx.input.rows() || dy.cols() != w.rows()) throw ShapeError("qlinear backward: dy shape mismatch");
  const LayerPolicy& p = ctx.policy;
  BackwardResult res;
  res.trace[GemmKind::Fprop] = ctx.fprop;

  // Dgrad: dx = dy * W, as dy (batch x out) times (W^T)^T with W^T: in x out.
  {
    GemmSettings s;
    s.quantize = p.runs_quantized(GemmKind::Dgrad);
    s.format = p.format;
    s.a_layout = p.act_grad_layout;
    s.b_layout = p.weight_layout;
    s.accumulation = p.accumulation;
    std::optional<QuantizedTensor> weight_view;
    if (s.quantize) {
      s.a_mode = detail::mode_for(ctx, TensorRole::Gradient, StreamTag::DgradGradient);
      s.b_mode = detail::mode_for(ctx, TensorRole::Weight, StreamTag::DgradWeight);
      if (p.rht_gemms.contains(GemmKind::Dgrad)) {
        s.rht = rht_spec_for(p, ctx.layer_index, ctx.step, GemmKind::Dgrad);
      } else if (p.weight_layout == LayoutKind::Square2D) {
        // Reuse the forward tensor; without a quantized forward, quantize W
        // the way forward would have.
        const QuantizedTensor fwd =
            ctx.fprop_weight ? *ctx.fprop_weight
                             : quantize(w, p.format, layout_for(p.format, LayoutKind::Square2D),
                                        detail::mode_for(ctx, TensorRole::Weight, StreamTag::FpropWeight));
        weight_view = transpose_quantized_view(fwd);
      }
    }
    GemmResult g = emulated_gemm(GemmKind::Dgrad, dy, transpose(w), s, std::move(weight_view));
    res.input_grad = std::move(g.out);
    res.trace[GemmKind::Dgrad] = g.record;

    const bool fq = ctx.fprop.quantized, bq = g.record.quantized;
    if (fq != bq || ctx.fprop.transformed || g.record.transformed) {
      res.trace.consistent = false;
    } else if (fq) {
      res.trace.consistent = ctx.fprop_weight && bitwise_equal(dequantize(*ctx.fprop_weight), transpose(dequantize(*g.qb)));
    }
  }

  // Wgrad: dW = dy^T * x, as dy^T (out x batch) times (x^T)^T.
  {
    GemmSettings s;
    s.quantize = p.runs_quantized(GemmKind::Wgrad);
    s.format = p.format;
    s.a_layout = p.act_grad_layout;
    s.b_layout = p.act_grad_layout;
    s.accumulation = p.accumulation;
    if (s.quantize) {
      s.a_mode = detail::mode_for(ctx, TensorRole::Gradient, StreamTag::WgradGradient);
      s.b_mode = detail::mode_for(ctx, TensorRole::Activation, StreamTag::WgradActivation);
      if (p.rht_gemms.contains(GemmKind::Wgrad))
        s.rht = rht_spec_for(p, ctx.layer_index, ctx.step, GemmKind::Wgrad);
    }
    GemmResult g = emulated_gemm(GemmKind::Wgrad, transpose(dy), transpose(ctx.input), s);
    res.weight_grad = std::move(g.out);
    res.trace[GemmKind::Wgrad] = g.record;
  }
  return res;
}

/// ||deq(W as quantized for Fprop) - deq(W as quantized for Dgrad)||_F / ||W||_F
/// for explicit forward/backward layouts. A Square2D backward layout means
/// the transposed view of the forward tensor.
inline double chain_rule_violation_metric(const Matrix& w, FormatSpec format, LayoutKind fwd, LayoutKind bwd) {
  const double norm = frobenius_norm(w);
  if (norm == 0.0) return 0.0;
  const QuantizedTensor qf = quantize(w, format, layout_for(format, fwd), NearestEven{});
  const Matrix wf = dequantize(qf);
  Matrix wb;
  if (bwd == LayoutKind::Square2D && fwd == LayoutKind::Square2D)
    wb = transpose(dequantize(transpose_quantized_view(qf)));
  else
    wb = dequantize(quantize(w, format, layout_for(format, bwd), NearestEven{}));
  return frobenius_norm(subtract(wf, wb)) / norm;
}

/// Violation implied by a policy: Square2D weights are reused transposed,
/// Rows1D weights are requantized column-wise for Dgrad.
inline double chain_rule_violation_metric(const Matrix& w, const LayerPolicy& policy) {
  if (!policy.quantize) return 0.0;
  const LayoutKind fwd = policy.weight_layout;
  const LayoutKind bwd = fwd == LayoutKind::Square2D ? LayoutKind::Square2D
                         : fwd == LayoutKind::Rows1D ? LayoutKind::Cols1D
                                                     : LayoutKind::Rows1D;
  return chain_rule_violation_metric(w, policy.format, fwd, bwd);
}

}  // namespace fp4
