// Copyright 2026 The fp4train Authors
// SPDX-License-Identifier: Apache-2.0
//
// JSON experiment configuration. Parsing collects every violation (unknown
// keys, wrong types, out-of-range values) with its field path before
// failing, so one run of the tool reports all problems at once.

#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fp4/errors.hpp"
#include "fp4/harness.hpp"

namespace fp4 {

using Json = nlohmann::ordered_json;

namespace detail {

class FieldReader {
 public:
  FieldReader(const Json& obj, std::string path, std::vector<std::string>& errors)
      : obj_(obj), path_(std::move(path)), errors_(errors) {}

  std::string field(std::string_view key) const { return path_.empty() ? std::string(key) : path_ + "." + std::string(key); }

  /// Report keys outside `known`.
  void allow(std::initializer_list<std::string_view> known) const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      bool ok = false;
      for (auto k : known) ok = ok || it.key() == k;
      if (!ok) errors_.push_back(field(it.key()) + ": unknown key");
    }
  }

  const Json* get(std::string_view key) const {
    auto it = obj_.find(std::string(key));
    return it == obj_.end() ? nullptr : &*it;
  }

  void number(std::string_view key, double& out) const {
    if (const Json* j = get(key)) {
      if (j->is_number())
        out = j->get<double>();
      else
        errors_.push_back(field(key) + ": expected a number");
    }
  }

  template <class Int>
  void integer(std::string_view key, Int& out) const {
    if (const Json* j = get(key)) {
      if (j->is_number_unsigned())
        out = static_cast<Int>(j->get<std::uint64_t>());
      else if (j->is_number_integer() && j->get<std::int64_t>() >= 0)
        out = static_cast<Int>(j->get<std::int64_t>());
      else
        errors_.push_back(field(key) + ": expected a non-negative integer");
    }
  }

  void boolean(std::string_view key, bool& out) const {
    if (const Json* j = get(key)) {
      if (j->is_boolean())
        out = j->get<bool>();
      else
        errors_.push_back(field(key) + ": expected true or false");
    }
  }

  std::optional<std::string> string(std::string_view key) const {
    if (const Json* j = get(key)) {
      if (j->is_string()) return j->get<std::string>();
      errors_.push_back(field(key) + ": expected a string");
    }
    return std::nullopt;
  }

  /// A nested object, or nullptr (with a violation when present but not an object).
  const Json* object(std::string_view key) const {
    const Json* j = get(key);
    if (j && !j->is_object()) {
      errors_.push_back(field(key) + ": expected an object");
      return nullptr;
    }
    return j;
  }

  void sizes(std::string_view key, std::vector<std::size_t>& out) const {
    const Json* j = get(key);
    if (!j) return;
    if (!j->is_array()) {
      errors_.push_back(field(key) + ": expected an array of integers");
      return;
    }
    std::vector<std::size_t> v;
    for (std::size_t i = 0; i < j->size(); ++i) {
      const Json& e = (*j)[i];
      if (e.is_number_unsigned() || (e.is_number_integer() && e.get<std::int64_t>() >= 0))
        v.push_back(e.get<std::size_t>());
      else
        errors_.push_back(field(key) + "[" + std::to_string(i) + "]: expected a non-negative integer");
    }
    out = std::move(v);
  }

  template <class Enum, std::size_t N, class Parse>
  void enum_set(std::string_view key, EnumSet<Enum, N>& out, Parse parse) const {
    const Json* j = get(key);
    if (!j) return;
    if (!j->is_array()) {
      errors_.push_back(field(key) + ": expected an array of names");
      return;
    }
    EnumSet<Enum, N> s;
    for (std::size_t i = 0; i < j->size(); ++i) {
      const Json& e = (*j)[i];
      std::optional<Enum> v = e.is_string() ? parse(e.get<std::string>()) : std::nullopt;
      if (v)
        s.insert(*v);
      else
        errors_.push_back(field(key) + "[" + std::to_string(i) + "]: unrecognized value");
    }
    out = s;
  }

  std::vector<std::string>& errors() const { return errors_; }

 private:
  const Json& obj_;
  std::string path_;
  std::vector<std::string>& errors_;
};

inline std::optional<GemmKind> parse_gemm(std::string_view s) {
  if (s == "fprop") return GemmKind::Fprop;
  if (s == "dgrad") return GemmKind::Dgrad;
  if (s == "wgrad") return GemmKind::Wgrad;
  return std::nullopt;
}

inline std::optional<TensorRole> parse_role(std::string_view s) {
  if (s == "activation") return TensorRole::Activation;
  if (s == "weight") return TensorRole::Weight;
  if (s == "gradient") return TensorRole::Gradient;
  return std::nullopt;
}

inline std::string_view role_name(TensorRole r) {
  switch (r) {
    case TensorRole::Activation: return "activation";
    case TensorRole::Weight: return "weight";
    case TensorRole::Gradient: return "gradient";
  }
  return "?";
}

inline std::string_view sign_strategy_name(SignSeedStrategy s) {
  switch (s) {
    case SignSeedStrategy::None: return "none";
    case SignSeedStrategy::Fixed: return "fixed";
    case SignSeedStrategy::PerInstance: return "per_instance";
  }
  return "?";
}

inline std::string_view exempt_position_name(ExemptPosition p) {
  switch (p) {
    case ExemptPosition::Last: return "last";
    case ExemptPosition::First: return "first";
    case ExemptPosition::FirstAndLast: return "first_and_last";
  }
  return "?";
}

inline std::string_view switch_scope_name(SwitchScope s) {
  switch (s) {
    case SwitchScope::Forward: return "forward";
    case SwitchScope::Backward: return "backward";
    case SwitchScope::Both: return "both";
  }
  return "?";
}

template <class Enum, std::size_t N, class Name>
Json enum_set_json(const EnumSet<Enum, N>& s, Name name) {
  Json a = Json::array();
  for (std::size_t i = 0; i < N; ++i)
    if (s.contains(static_cast<Enum>(i))) a.push_back(std::string(name(static_cast<Enum>(i))));
  return a;
}

inline void read_policy(const Json& j, const std::string& path, LayerPolicy& p, std::vector<std::string>& errors) {
  FieldReader r(j, path, errors);
  r.allow({"quantize", "format", "weight_layout", "act_grad_layout", "rht_gemms", "rht_dim", "sign_strategy",
           "sign_seed", "sr_roles", "quantized_gemms", "bf16_saved_activations", "accumulation"});
  r.boolean("quantize", p.quantize);
  if (auto s = r.string("format")) {
    if (auto k = parse_format(*s))
      p.format = FormatSpec::of(*k);
    else
      errors.push_back(r.field("format") + ": expected 'nvfp4' or 'mxfp4'");
  }
  if (auto s = r.string("weight_layout")) {
    if (auto k = parse_layout_kind(*s))
      p.weight_layout = *k;
    else
      errors.push_back(r.field("weight_layout") + ": expected 'rows', 'cols' or 'square'");
  }
  if (auto s = r.string("act_grad_layout")) {
    if (auto k = parse_layout_kind(*s))
      p.act_grad_layout = *k;
    else
      errors.push_back(r.field("act_grad_layout") + ": expected 'rows', 'cols' or 'square'");
  }
  r.enum_set("rht_gemms", p.rht_gemms, parse_gemm);
  r.integer("rht_dim", p.rht_dim);
  if (auto s = r.string("sign_strategy")) {
    if (*s == "none")
      p.sign_strategy = SignSeedStrategy::None;
    else if (*s == "fixed")
      p.sign_strategy = SignSeedStrategy::Fixed;
    else if (*s == "per_instance")
      p.sign_strategy = SignSeedStrategy::PerInstance;
    else
      errors.push_back(r.field("sign_strategy") + ": expected 'none', 'fixed' or 'per_instance'");
  }
  r.integer("sign_seed", p.sign_seed);
  r.enum_set("sr_roles", p.sr_roles, parse_role);
  r.enum_set("quantized_gemms", p.quantized_gemms, parse_gemm);
  r.boolean("bf16_saved_activations", p.bf16_saved_activations);
  if (auto s = r.string("accumulation")) {
    if (*s == "binary64")
      p.accumulation = Accumulation::Binary64;
    else if (*s == "binary32")
      p.accumulation = Accumulation::Binary32;
    else
      errors.push_back(r.field("accumulation") + ": expected 'binary64' or 'binary32'");
  }
}

}  // namespace detail

/// Build a configuration from parsed JSON. Missing keys keep their defaults.
/// Throws ConfigError listing every violation.
inline ExperimentConfig config_from_json(const Json& j) {
  std::vector<std::string> errors;
  ExperimentConfig c;
  if (!j.is_object()) throw ConfigError({"<root>: expected an object"});
  detail::FieldReader r(j, "", errors);
  r.allow({"network", "task", "steps", "batch_size", "seed", "optimizer", "lr_schedule", "policy", "exemption",
           "precision_switch", "eval_every", "val_size", "ablations", "description"});
  if (const Json* n = r.object("network")) {
    detail::FieldReader nr(*n, "network", errors);
    nr.allow({"widths"});
    nr.sizes("widths", c.widths);
  }
  if (const Json* t = r.object("task")) {
    detail::FieldReader tr(*t, "task", errors);
    tr.allow({"seed", "teacher_hidden", "outlier_channels", "outlier_scale", "spike_prob", "spike_scale",
              "label_noise", "corrupt_prob", "corrupt_scale"});
    tr.integer("seed", c.task.seed);
    tr.sizes("teacher_hidden", c.task.teacher_hidden);
    tr.integer("outlier_channels", c.task.outlier_channels);
    tr.number("outlier_scale", c.task.outlier_scale);
    tr.number("spike_prob", c.task.spike_prob);
    tr.number("spike_scale", c.task.spike_scale);
    tr.number("label_noise", c.task.label_noise);
    tr.number("corrupt_prob", c.task.corrupt_prob);
    tr.number("corrupt_scale", c.task.corrupt_scale);
  }
  r.integer("steps", c.steps);
  r.integer("batch_size", c.batch_size);
  r.integer("seed", c.seed);
  if (const Json* o = r.object("optimizer")) {
    detail::FieldReader orr(*o, "optimizer", errors);
    orr.allow({"beta1", "beta2", "eps", "weight_decay"});
    orr.number("beta1", c.optimizer.beta1);
    orr.number("beta2", c.optimizer.beta2);
    orr.number("eps", c.optimizer.eps);
    orr.number("weight_decay", c.optimizer.weight_decay);
  }
  if (const Json* l = r.object("lr_schedule")) {
    detail::FieldReader lr(*l, "lr_schedule", errors);
    lr.allow({"kind", "peak_lr", "warmup_fraction", "decay_fraction", "final_lr_fraction"});
    if (auto s = lr.string("kind")) {
      if (*s == "constant")
        c.lr.kind = LrScheduleKind::Constant;
      else if (*s == "wsd")
        c.lr.kind = LrScheduleKind::WarmupStableDecay;
      else
        errors.push_back("lr_schedule.kind: expected 'constant' or 'wsd'");
    }
    lr.number("peak_lr", c.lr.peak);
    lr.number("warmup_fraction", c.lr.warmup_fraction);
    lr.number("decay_fraction", c.lr.decay_fraction);
    lr.number("final_lr_fraction", c.lr.final_fraction);
  }
  if (const Json* p = r.object("policy")) detail::read_policy(*p, "policy", c.policy, errors);
  if (const Json* e = r.object("exemption")) {
    detail::FieldReader er(*e, "exemption", errors);
    er.allow({"position", "count"});
    if (auto s = er.string("position")) {
      if (*s == "last")
        c.exemption.position = ExemptPosition::Last;
      else if (*s == "first")
        c.exemption.position = ExemptPosition::First;
      else if (*s == "first_and_last")
        c.exemption.position = ExemptPosition::FirstAndLast;
      else
        errors.push_back("exemption.position: expected 'last', 'first' or 'first_and_last'");
    }
    er.integer("count", c.exemption.count);
  }
  if (const Json* s = r.get("precision_switch"); s && !s->is_null()) {
    if (!s->is_object()) {
      errors.push_back("precision_switch: expected an object or null");
    } else {
      detail::FieldReader sr(*s, "precision_switch", errors);
      sr.allow({"step", "fraction", "scope"});
      PrecisionSwitch ps;
      const bool has_step = sr.get("step") != nullptr, has_frac = sr.get("fraction") != nullptr;
      if (has_step == has_frac) errors.push_back("precision_switch: give exactly one of 'step' or 'fraction'");
      sr.integer("step", ps.step);
      if (has_frac) {
        double f = 0.0;
        sr.number("fraction", f);
        if (!(f >= 0.0 && f <= 1.0))
          errors.push_back("precision_switch.fraction: must lie in [0, 1]");
        else
          ps.step = static_cast<std::uint64_t>(std::llround(f * static_cast<double>(c.steps)));
      }
      if (auto sc = sr.string("scope")) {
        if (*sc == "forward")
          ps.scope = SwitchScope::Forward;
        else if (*sc == "backward")
          ps.scope = SwitchScope::Backward;
        else if (*sc == "both")
          ps.scope = SwitchScope::Both;
        else
          errors.push_back("precision_switch.scope: expected 'forward', 'backward' or 'both'");
      }
      c.precision_switch = ps;
    }
  }
  r.integer("eval_every", c.eval_every);
  r.integer("val_size", c.val_size);
  if (const Json* a = r.get("ablations")) {
    if (!a->is_array()) {
      errors.push_back("ablations: expected an array of variants");
    } else {
      for (std::size_t i = 0; i < a->size(); ++i) {
        const Json& v = (*a)[i];
        const std::string path = "ablations[" + std::to_string(i) + "]";
        Variant var;
        auto add = [&](const Json& name, const std::string& p) {
          std::optional<Ablation> ab = name.is_string() ? parse_ablation(name.get<std::string>()) : std::nullopt;
          if (ab)
            var.push_back(*ab);
          else
            errors.push_back(p + ": unknown ablation");
        };
        if (v.is_string())
          add(v, path);
        else if (v.is_array())
          for (std::size_t k = 0; k < v.size(); ++k) add(v[k], path + "[" + std::to_string(k) + "]");
        else
          errors.push_back(path + ": expected a name or an array of names");
        c.ablations.push_back(std::move(var));
      }
    }
  }
  for (std::string& v : validate(c)) errors.push_back(std::move(v));
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return c;
}

/// Parse configuration text. Malformed JSON raises FormatError; schema
/// problems raise ConfigError.
inline ExperimentConfig parse_config(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return parse_config(s.str());
}

/// Complete JSON form of a configuration; config_from_json(to_json(c)) == c
/// for every valid configuration.
inline Json to_json(const ExperimentConfig& c) {
  Json j;
  j["network"] = {{"widths", c.widths}};
  j["task"] = {{"seed", c.task.seed},
               {"teacher_hidden", c.task.teacher_hidden},
               {"outlier_channels", c.task.outlier_channels},
               {"outlier_scale", c.task.outlier_scale},
               {"spike_prob", c.task.spike_prob},
               {"spike_scale", c.task.spike_scale},
               {"label_noise", c.task.label_noise},
               {"corrupt_prob", c.task.corrupt_prob},
               {"corrupt_scale", c.task.corrupt_scale}};
  j["steps"] = c.steps;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["optimizer"] = {{"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"eps", c.optimizer.eps},
                    {"weight_decay", c.optimizer.weight_decay}};
  j["lr_schedule"] = {{"kind", c.lr.kind == LrScheduleKind::Constant ? "constant" : "wsd"},
                      {"peak_lr", c.lr.peak},
                      {"warmup_fraction", c.lr.warmup_fraction},
                      {"decay_fraction", c.lr.decay_fraction},
                      {"final_lr_fraction", c.lr.final_fraction}};
  const LayerPolicy& p = c.policy;
  j["policy"] = {{"quantize", p.quantize},
                 {"format", p.format.name()},
                 {"weight_layout", layout_name(p.weight_layout)},
                 {"act_grad_layout", layout_name(p.act_grad_layout)},
                 {"rht_gemms", detail::enum_set_json(p.rht_gemms, gemm_name)},
                 {"rht_dim", p.rht_dim},
                 {"sign_strategy", detail::sign_strategy_name(p.sign_strategy)},
                 {"sign_seed", p.sign_seed},
                 {"sr_roles", detail::enum_set_json(p.sr_roles, detail::role_name)},
                 {"quantized_gemms", detail::enum_set_json(p.quantized_gemms, gemm_name)},
                 {"bf16_saved_activations", p.bf16_saved_activations},
                 {"accumulation", p.accumulation == Accumulation::Binary64 ? "binary64" : "binary32"}};
  j["exemption"] = {{"position", detail::exempt_position_name(c.exemption.position)}, {"count", c.exemption.count}};
  if (c.precision_switch)
    j["precision_switch"] = {{"step", c.precision_switch->step},
                             {"scope", detail::switch_scope_name(c.precision_switch->scope)}};
  else
    j["precision_switch"] = nullptr;
  j["eval_every"] = c.eval_every;
  j["val_size"] = c.val_size;
  Json ab = Json::array();
  for (const Variant& v : c.ablations) {
    Json names = Json::array();
    for (Ablation a : v) names.push_back(std::string(ablation_name(a)));
    ab.push_back(std::move(names));
  }
  j["ablations"] = std::move(ab);
  return j;
}

/// JSON Schema (draft 2020-12) describing the configuration document.
inline Json config_schema() {
  auto num = [](const char* d) { return Json{{"type", "number"}, {"description", d}}; };
  auto uint = [](const char* d) { return Json{{"type", "integer"}, {"minimum", 0}, {"description", d}}; };
  auto frac = [](const char* d) { return Json{{"type", "number"}, {"minimum", 0}, {"maximum", 1}, {"description", d}}; };
  auto names = [](std::vector<std::string> allowed) {
    return Json{{"type", "array"}, {"items", {{"enum", allowed}}}};
  };
  Json ablations = Json::array();
  for (int i = 0; i <= static_cast<int>(Ablation::SignPerInstance); ++i)
    ablations.push_back(std::string(ablation_name(static_cast<Ablation>(i))));
  Json s;
  s["$schema"] = "https://json-schema.org/draft/2020-12/schema";
  s["title"] = "fp4train experiment configuration";
  s["type"] = "object";
  s["additionalProperties"] = false;
  s["properties"] = {
      {"description", {{"type", "string"}}},
      {"network",
       {{"type", "object"},
        {"additionalProperties", false},
        {"properties", {{"widths", {{"type", "array"}, {"minItems", 2}, {"items", {{"type", "integer"}, {"minimum", 1}}}}}}}}},
      {"task",
       {{"type", "object"},
        {"additionalProperties", false},
        {"properties",
         {{"seed", uint("teacher and data seed")},
          {"teacher_hidden", {{"type", "array"}, {"items", {{"type", "integer"}, {"minimum", 1}}}}},
          {"outlier_channels", uint("leading input features scaled by outlier_scale")},
          {"outlier_scale", num("factor applied to outlier channels (> 0)")},
          {"spike_prob", frac("probability that a sample is scaled by spike_scale")},
          {"spike_scale", num("factor applied to spiked samples (> 0)")},
          {"label_noise", num("deviation of additive training-label noise (>= 0)")},
          {"corrupt_prob", frac("probability that a training sample's labels are replaced by noise")},
          {"corrupt_scale", num("deviation of the replacement noise (>= 0)")}}}}},
      {"steps", uint("training steps (> 0)")},
      {"batch_size", uint("samples per step (> 0)")},
      {"seed", uint("run seed: initialization and stochastic rounding")},
      {"optimizer",
       {{"type", "object"},
        {"additionalProperties", false},
        {"properties",
         {{"beta1", num("[0, 1)")}, {"beta2", num("[0, 1)")}, {"eps", num("> 0")}, {"weight_decay", num(">= 0")}}}}},
      {"lr_schedule",
       {{"type", "object"},
        {"additionalProperties", false},
        {"properties",
         {{"kind", {{"enum", {"constant", "wsd"}}}},
          {"peak_lr", num("> 0")},
          {"warmup_fraction", frac("fraction of steps spent warming up")},
          {"decay_fraction", frac("fraction of steps spent decaying")},
          {"final_lr_fraction", frac("final learning rate relative to peak")}}}}},
      {"policy",
       {{"type", "object"},
        {"additionalProperties", false},
        {"properties",
         {{"quantize", {{"type", "boolean"}}},
          {"format", {{"enum", {"nvfp4", "mxfp4"}}}},
          {"weight_layout", {{"enum", {"square", "rows"}}}},
          {"act_grad_layout", {{"enum", {"rows"}}}},
          {"rht_gemms", names({"fprop", "dgrad", "wgrad"})},
          {"rht_dim", uint("power of two >= 2")},
          {"sign_strategy", {{"enum", {"none", "fixed", "per_instance"}}}},
          {"sign_seed", uint("seed of the shared sign vector")},
          {"sr_roles", names({"activation", "weight", "gradient"})},
          {"quantized_gemms", names({"fprop", "dgrad", "wgrad"})},
          {"bf16_saved_activations", {{"type", "boolean"}}},
          {"accumulation", {{"enum", {"binary64", "binary32"}}}}}}}},
      {"exemption",
       {{"type", "object"},
        {"additionalProperties", false},
        {"properties",
         {{"position", {{"enum", {"last", "first", "first_and_last"}}}},
          {"count", uint("number of high-precision layers")}}}}},
      {"precision_switch",
       {{"type", {"object", "null"}},
        {"additionalProperties", false},
        {"properties",
         {{"step", uint("first wide-precision step (<= steps)")},
          {"fraction", frac("switch step as a fraction of steps")},
          {"scope", {{"enum", {"forward", "backward", "both"}}}}}}}},
      {"eval_every", uint("validation interval in steps (> 0)")},
      {"val_size", uint("validation samples (> 0)")},
      {"ablations",
       {{"type", "array"},
        {"items", {{"oneOf", {{{"enum", ablations}}, {{"type", "array"}, {"items", {{"enum", ablations}}}}}}}}}}};
  return s;
}

}  // namespace fp4
