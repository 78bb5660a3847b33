// Copyright 2026 The fp4train Authors
// SPDX-License-Identifier: Apache-2.0
//
// Serialization of run records, ablation tables and quantization reports.

#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fp4/config.hpp"
#include "fp4/harness.hpp"
#include "fp4/metrics.hpp"

namespace fp4 {

namespace detail {

/// JSON number, or null for NaN/inf (JSON has no literal for them).
inline Json finite_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

/// Shortest text that reads back to the same double.
inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

}  // namespace detail

/// A run record as JSON Lines: a "run" header, then one line per training
/// step, validation point and layer trace, in that order.
inline std::string to_jsonl(const RunRecord& r) {
  std::ostringstream o;
  Json head{{"type", "run"},
            {"config_hash", r.config_hash},
            {"seed", r.seed},
            {"steps_completed", r.train_loss.size()},
            {"diverged_at", r.diverged_at ? Json(*r.diverged_at) : Json(nullptr)},
            {"switch_step", r.switch_step ? Json(*r.switch_step) : Json(nullptr)},
            {"final_val_loss", detail::finite_or_null(r.final_val_loss)}};
  o << head.dump() << '\n';
  for (std::size_t i = 0; i < r.train_loss.size(); ++i)
    o << Json{{"type", "train"}, {"step", i}, {"loss", detail::finite_or_null(r.train_loss[i])}}.dump() << '\n';
  for (const auto& [step, loss] : r.val_loss)
    o << Json{{"type", "val"}, {"step", step}, {"loss", detail::finite_or_null(loss)}}.dump() << '\n';
  for (const LayerTraceSummary& t : r.traces) {
    Json gemms = Json::object();
    for (std::size_t k = 0; k < 3; ++k) {
      const GemmSummary& g = t.gemms[k];
      gemms[gemm_name(static_cast<GemmKind>(k))] = {{"samples", g.samples},
                                                    {"mean_rel_error_a", g.mean_rel_error_a},
                                                    {"mean_rel_error_b", g.mean_rel_error_b},
                                                    {"saturated", g.saturated},
                                                    {"underflow", g.underflow}};
    }
    o << Json{{"type", "trace"}, {"layer", t.layer}, {"inconsistent_steps", t.inconsistent_steps}, {"gemms", gemms}}
             .dump()
      << '\n';
  }
  return o.str();
}

/// step,train_loss,val_loss (val empty where not evaluated).
inline std::string loss_curve_csv(const RunRecord& r) {
  std::ostringstream o;
  o << "step,train_loss,val_loss\n";
  std::size_t v = 0;
  for (std::size_t i = 0; i < r.train_loss.size(); ++i) {
    o << i << ',' << detail::fmt_double(r.train_loss[i]) << ',';
    if (v < r.val_loss.size() && r.val_loss[v].first == i) o << detail::fmt_double(r.val_loss[v++].second);
    o << '\n';
  }
  return o.str();
}

inline std::string ablation_csv(const AblationTable& t) {
  std::ostringstream o;
  o << "variant,final_val_loss,rel_diff_vs_base,rel_diff_vs_wide,diverged_at\n";
  o << "wide," << detail::fmt_double(t.reference.final_val_loss) << ",,,"
    << (t.reference.diverged_at ? std::to_string(*t.reference.diverged_at) : "") << '\n';
  for (const AblationRow& row : t.rows)
    o << row.name << ',' << detail::fmt_double(row.record.final_val_loss) << ',' << detail::fmt_double(row.rel_vs_base)
      << ',' << detail::fmt_double(row.rel_vs_wide) << ','
      << (row.record.diverged_at ? std::to_string(*row.record.diverged_at) : "") << '\n';
  return o.str();
}

inline std::string ablation_text_table(const AblationTable& t) {
  std::ostringstream o;
  char line[160];
  std::snprintf(line, sizeof line, "%-32s %14s %14s %14s\n", "variant", "final val", "vs base", "vs wide");
  o << line;
  std::snprintf(line, sizeof line, "%-32s %14.6g %14s %14s\n", "wide", t.reference.final_val_loss, "", "");
  o << line;
  for (const AblationRow& row : t.rows) {
    std::snprintf(line, sizeof line, "%-32s %14.6g %13.3f%% %13.3f%%%s\n", row.name.c_str(),
                  row.record.final_val_loss, 100.0 * row.rel_vs_base, 100.0 * row.rel_vs_wide,
                  row.record.diverged() ? "  (diverged)" : "");
    o << line;
  }
  return o.str();
}

inline Json to_json(const QuantStats& s) {
  return Json{{"rel_error", s.rel_error},
              {"sqnr_db", std::isinf(s.sqnr_db) ? Json("inf") : Json(s.sqnr_db)},
              {"max_rel_error", s.max_rel_error},
              {"saturated", s.saturated},
              {"underflow", s.underflow},
              {"amax_max_rel_error", s.amax_max_rel_error},
              {"mean_binades", s.mean_binades},
              {"min_binades", s.min_binades},
              {"full_binades", kE2M1Binades},
              {"nonzero_blocks", s.nonzero_blocks}};
}

}  // namespace fp4
