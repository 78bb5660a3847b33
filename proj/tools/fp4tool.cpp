// Copyright 2026 The fp4train Authors
// SPDX-License-Identifier: Apache-2.0
//
// fp4tool: quantize and inspect tensor files, run training experiments.
//
// Exit codes: 0 success, 1 usage, 2 I/O or malformed file, 3 configuration
// schema violation, 4 numeric input (non-finite values, degenerate tensors).

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "fp4/fp4.hpp"

namespace {

using fp4::Json;

enum Exit : int { kOk = 0, kUsage = 1, kIo = 2, kSchema = 3, kNumeric = 4 };

class UsageError : public fp4::Error {
 public:
  using Error::Error;
};

struct QuantOptions {
  std::string format = "nvfp4";
  std::string layout = "rows";
  std::string round = "rne";
  std::uint64_t seed = 0;
  bool rht = false;
  std::size_t rht_dim = 16;
};

fp4::FormatSpec format_of(const std::string& name) {
  const auto k = fp4::parse_format(name);
  if (!k) throw UsageError("unknown format '" + name + "' (expected nvfp4 or mxfp4)");
  return fp4::FormatSpec::of(*k);
}

// "rows", "cols", "square", optionally suffixed with the format's block length.
fp4::ScalingLayout layout_of(const std::string& name, fp4::FormatSpec f) {
  std::string kind = name;
  std::size_t len = f.block_len;
  const std::size_t digits = name.find_first_of("0123456789");
  if (digits != std::string::npos) {
    kind = name.substr(0, digits);
    try {
      len = std::stoul(name.substr(digits));
    } catch (const std::exception&) {
      throw UsageError("bad layout '" + name + "'");
    }
  }
  const auto k = fp4::parse_layout_kind(kind);
  if (!k) throw UsageError("unknown layout '" + name + "' (expected rows, cols or square)");
  if (len != f.block_len)
    throw UsageError("layout block length " + std::to_string(len) + " does not match " + std::string(f.name()) +
                     " blocks of " + std::to_string(f.block_len));
  return fp4::layout_for(f, *k);
}

fp4::RoundingMode rounding_of(const QuantOptions& o) {
  if (o.round == "rne") return fp4::NearestEven{};
  if (o.round == "sr") return fp4::Stochastic{fp4::RandomStream{o.seed, 0}};
  throw UsageError("unknown rounding '" + o.round + "' (expected rne or sr)");
}

fp4::Matrix read_wide(const std::string& path) {
  fp4::TensorData t = fp4::read_tensor_file(path);
  if (auto* m = std::get_if<fp4::Matrix>(&t)) return std::move(*m);
  throw UsageError("'" + path + "' holds a quantized tensor; a wide tensor is required");
}

fp4::Matrix maybe_rotate(const fp4::Matrix& x, const QuantOptions& o) {
  if (!o.rht) return x;
  if (x.cols() % o.rht_dim != 0)
    throw UsageError("--rht needs the column count (" + std::to_string(x.cols()) + ") to be a multiple of " +
                     std::to_string(o.rht_dim));
  return fp4::apply_rht_tiled(x, fp4::HadamardSpec{o.rht_dim, o.seed, true});
}

Json tensor_summary(const fp4::Matrix& x) {
  return Json{{"rows", x.rows()}, {"cols", x.cols()}, {"amax", fp4::max_abs(x)}, {"frobenius", fp4::frobenius_norm(x)}};
}

Json quant_entry(const fp4::Matrix& x, const fp4::QuantizedTensor& q, const std::string& layout, bool rht) {
  Json j{{"format", std::string(q.format().name())}, {"layout", layout}, {"rht", rht}};
  j["stats"] = fp4::to_json(fp4::quantization_stats(x, q));
  return j;
}

std::string text_table(const Json& report) {
  std::string out;
  char line[200];
  std::snprintf(line, sizeof line, "%-7s %-9s %-4s %10s %10s %10s %6s %6s %10s %8s\n", "format", "layout", "rht",
                "sqnr_db", "rel_err", "max_rel", "sat", "under", "amax_err", "binades");
  out += line;
  for (const Json& r : report["results"]) {
    const Json& s = r["stats"];
    const std::string sqnr = s["sqnr_db"].is_string() ? "inf" : std::to_string(s["sqnr_db"].get<double>());
    std::snprintf(line, sizeof line, "%-7s %-9s %-4s %10.10s %10.4g %10.4g %6zu %6zu %10.4g %8.3f\n",
                  r["format"].get<std::string>().c_str(), r["layout"].get<std::string>().c_str(),
                  r["rht"].get<bool>() ? "yes" : "no", sqnr.c_str(), s["rel_error"].get<double>(),
                  s["max_rel_error"].get<double>(), s["saturated"].get<std::size_t>(),
                  s["underflow"].get<std::size_t>(), s["amax_max_rel_error"].get<double>(),
                  s["mean_binades"].get<double>());
    out += line;
  }
  return out;
}

void emit(const Json& report, bool json, const std::string& report_path) {
  if (!report_path.empty()) fp4::write_file_atomic(report_path, report.dump(2) + "\n");
  if (json)
    std::cout << report.dump(2) << '\n';
  else
    std::cout << text_table(report);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw fp4::IoError("cannot create directory '" + dir + "'");
}

std::string join(const std::string& dir, const std::string& name) { return (std::filesystem::path(dir) / name).string(); }

int run_guarded(const std::function<void()>& body) {
  try {
    body();
    return kOk;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const fp4::ConfigError& e) {
    std::cerr << "configuration error:\n";
    for (const std::string& v : e.violations()) std::cerr << "  " << v << '\n';
    return kSchema;
  } catch (const fp4::IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const fp4::FormatError& e) {
    std::cerr << "malformed input: " << e.what() << '\n';
    return kIo;
  } catch (const fp4::InvalidInput& e) {
    std::cerr << "numeric input error: " << e.what() << '\n';
    return kNumeric;
  } catch (const fp4::InvalidCode& e) {
    std::cerr << "malformed input: " << e.what() << '\n';
    return kIo;
  } catch (const fp4::DegenerateTensor& e) {
    std::cerr << "numeric input error: " << e.what() << '\n';
    return kNumeric;
  } catch (const fp4::RangeError& e) {
    std::cerr << "numeric input error: " << e.what() << '\n';
    return kNumeric;
  } catch (const fp4::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
}

void add_quant_flags(CLI::App* cmd, QuantOptions& o, bool layout_list) {
  cmd->add_option("--format", o.format, "nvfp4 or mxfp4")->capture_default_str();
  if (!layout_list) cmd->add_option("--layout", o.layout, "rows, cols or square, e.g. rows16")->capture_default_str();
  cmd->add_option("--round", o.round, "rne or sr")->capture_default_str();
  cmd->add_option("--seed", o.seed, "seed for stochastic rounding and Hadamard signs")->capture_default_str();
  cmd->add_flag("--rht", o.rht, "apply a random Hadamard transform along rows before quantizing");
  cmd->add_option("--rht-dim", o.rht_dim, "Hadamard size")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FP4 microscaling quantization and training emulator"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "fp4tool 0.1.0");

  // gen
  std::string gen_kind = "gaussian", gen_out;
  std::size_t gen_rows = 16, gen_cols = 64;
  std::uint64_t gen_seed = 0;
  double gen_scale = 1.0, gen_spike = 100.0;
  auto* gen = app.add_subcommand("gen", "write a synthetic wide tensor file");
  gen->add_option("--kind", gen_kind, "gaussian, spike, binade-fixture or zeros")->capture_default_str();
  gen->add_option("--rows", gen_rows)->capture_default_str();
  gen->add_option("--cols", gen_cols)->capture_default_str();
  gen->add_option("--seed", gen_seed)->capture_default_str();
  gen->add_option("--scale", gen_scale, "standard deviation")->capture_default_str();
  gen->add_option("--spike", gen_spike, "magnitude of the single spike (kind=spike)")->capture_default_str();
  gen->add_option("--out", gen_out, "output tensor file")->required();

  // quantize
  QuantOptions qopt;
  std::string q_in, q_out, q_report;
  bool q_json = false;
  auto* quant = app.add_subcommand("quantize", "quantize a wide tensor file");
  quant->add_option("input", q_in, "wide tensor file")->required();
  add_quant_flags(quant, qopt, false);
  quant->add_option("--out", q_out, "output quantized tensor file")->required();
  quant->add_flag("--json", q_json, "print the report as JSON");
  quant->add_option("--report", q_report, "also write the JSON report to this path");

  // dequantize
  std::string d_in, d_out;
  auto* deq = app.add_subcommand("dequantize", "expand a quantized tensor file to wide values");
  deq->add_option("input", d_in, "quantized tensor file")->required();
  deq->add_option("--out", d_out, "output wide tensor file")->required();

  // analyze
  QuantOptions aopt;
  std::string a_in, a_report;
  std::vector<std::string> a_formats{"nvfp4", "mxfp4"}, a_layouts{"rows"};
  bool a_json = false;
  auto* analyze = app.add_subcommand("analyze", "compare formats and layouts on a wide tensor file");
  analyze->add_option("input", a_in, "wide tensor file")->required();
  add_quant_flags(analyze, aopt, true);
  analyze->add_option("--formats", a_formats, "formats to compare")->delimiter(',')->capture_default_str();
  analyze->add_option("--layouts", a_layouts, "layout kinds to compare")->delimiter(',')->capture_default_str();
  analyze->add_flag("--json", a_json, "print the report as JSON");
  analyze->add_option("--report", a_report, "also write the JSON report to this path");

  // run
  std::string r_cfg, r_dir;
  std::optional<std::uint64_t> r_seed, r_steps;
  auto* run = app.add_subcommand("run", "train one configuration");
  run->add_option("config", r_cfg, "experiment configuration (JSON)")->required();
  run->add_option("--out", r_dir, "output directory")->required();
  run->add_option("--seed", r_seed, "override the run seed");
  run->add_option("--steps", r_steps, "override the step count");

  // ablate
  std::string b_cfg, b_dir;
  std::optional<std::uint64_t> b_seed;
  auto* ablate = app.add_subcommand("ablate", "run the configuration's ablation suite");
  ablate->add_option("config", b_cfg, "experiment configuration (JSON)")->required();
  ablate->add_option("--out", b_dir, "output directory")->required();
  ablate->add_option("--seed", b_seed, "override the run seed");

  // schema
  auto* schema = app.add_subcommand("schema", "print the configuration JSON schema");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  if (*gen) {
    return run_guarded([&] {
      if (gen_rows == 0 || gen_cols == 0) throw UsageError("--rows and --cols must be positive");
      const fp4::RandomStream s{gen_seed, 1};
      fp4::Matrix m(gen_rows, gen_cols);
      if (gen_kind == "gaussian" || gen_kind == "spike") {
        for (std::size_t i = 0; i < m.size(); ++i) m.values()[i] = gen_scale * s.normal(i);
        if (gen_kind == "spike") m.values()[s.bits(m.size() * 2) % m.size()] = gen_spike;
      } else if (gen_kind == "binade-fixture") {
        // Uniform in [-3, 3] with 3.01 at the start of every 16-element run.
        for (std::size_t i = 0; i < m.size(); ++i) m.values()[i] = 6.0 * s.uniform(i) - 3.0;
        for (std::size_t i = 0; i < m.size(); i += 16) m.values()[i] = 3.01;
      } else if (gen_kind != "zeros") {
        throw UsageError("unknown --kind '" + gen_kind + "'");
      }
      fp4::write_tensor_file(gen_out, m);
    });
  }

  if (*quant) {
    return run_guarded([&] {
      const fp4::FormatSpec f = format_of(qopt.format);
      const fp4::ScalingLayout layout = layout_of(qopt.layout, f);
      const fp4::RoundingMode mode = rounding_of(qopt);
      const fp4::Matrix x = maybe_rotate(read_wide(q_in), qopt);
      const fp4::QuantizedTensor q = fp4::quantize(x, f, layout, mode);
      fp4::write_tensor_file(q_out, q);
      Json report{{"command", "quantize"}, {"input", tensor_summary(x)}, {"round", qopt.round}, {"seed", qopt.seed}};
      report["results"] = Json::array({quant_entry(x, q, qopt.layout, qopt.rht)});
      emit(report, q_json, q_report);
    });
  }

  if (*deq) {
    return run_guarded([&] {
      fp4::TensorData t = fp4::read_tensor_file(d_in);
      const auto* q = std::get_if<fp4::QuantizedTensor>(&t);
      if (!q) throw UsageError("'" + d_in + "' is already a wide tensor");
      fp4::write_tensor_file(d_out, fp4::dequantize(*q));
    });
  }

  if (*analyze) {
    return run_guarded([&] {
      const fp4::RoundingMode mode = rounding_of(aopt);
      const fp4::Matrix x = read_wide(a_in);
      if (auto i = fp4::first_non_finite(x))
        throw fp4::InvalidInput("analyze: non-finite value at index " + std::to_string(*i));
      Json report{{"command", "analyze"}, {"input", tensor_summary(x)}, {"round", aopt.round}, {"seed", aopt.seed}};
      report["results"] = Json::array();
      std::vector<bool> rht_modes{false};
      if (aopt.rht) rht_modes.push_back(true);
      for (bool rht : rht_modes) {
        QuantOptions o = aopt;
        o.rht = rht;
        const fp4::Matrix xr = maybe_rotate(x, o);
        for (const std::string& fname : a_formats) {
          const fp4::FormatSpec f = format_of(fname);
          for (const std::string& lname : a_layouts) {
            const fp4::QuantizedTensor q = fp4::quantize(xr, f, layout_of(lname, f), mode);
            report["results"].push_back(quant_entry(xr, q, lname, rht));
          }
        }
      }
      emit(report, a_json, a_report);
    });
  }

  if (*run) {
    return run_guarded([&] {
      fp4::ExperimentConfig c = fp4::load_config(r_cfg);
      if (r_seed) c.seed = *r_seed;
      if (r_steps) {
        c.steps = *r_steps;
        if (auto v = fp4::validate(c); !v.empty()) throw fp4::ConfigError(std::move(v));
      }
      ensure_dir(r_dir);
      const fp4::RunRecord rec = fp4::run_experiment(c);
      fp4::write_file_atomic(join(r_dir, "config.json"), fp4::to_json(c).dump(2) + "\n");
      fp4::write_file_atomic(join(r_dir, "run.jsonl"), fp4::to_jsonl(rec));
      fp4::write_file_atomic(join(r_dir, "loss.csv"), fp4::loss_curve_csv(rec));
      std::cout << "config " << rec.config_hash << "  seed " << rec.seed << "  steps " << rec.train_loss.size()
                << '\n';
      if (rec.diverged())
        std::cout << "diverged at step " << *rec.diverged_at << '\n';
      else
        std::cout << "final validation loss " << fp4::detail::fmt_double(rec.final_val_loss) << '\n';
    });
  }

  if (*ablate) {
    return run_guarded([&] {
      fp4::ExperimentConfig c = fp4::load_config(b_cfg);
      if (b_seed) c.seed = *b_seed;
      ensure_dir(b_dir);
      const fp4::AblationTable t = fp4::run_ablation_suite(c, c.ablations);
      fp4::write_file_atomic(join(b_dir, "config.json"), fp4::to_json(c).dump(2) + "\n");
      fp4::write_file_atomic(join(b_dir, "ablation.csv"), fp4::ablation_csv(t));
      fp4::write_file_atomic(join(b_dir, "wide.jsonl"), fp4::to_jsonl(t.reference));
      fp4::write_file_atomic(join(b_dir, "wide_loss.csv"), fp4::loss_curve_csv(t.reference));
      for (const fp4::AblationRow& row : t.rows) {
        fp4::write_file_atomic(join(b_dir, row.name + ".jsonl"), fp4::to_jsonl(row.record));
        fp4::write_file_atomic(join(b_dir, row.name + "_loss.csv"), fp4::loss_curve_csv(row.record));
      }
      const std::string table = fp4::ablation_text_table(t);
      fp4::write_file_atomic(join(b_dir, "summary.txt"), table);
      std::cout << table;
    });
  }

  if (*schema) {
    std::cout << fp4::config_schema().dump(2) << '\n';
    return kOk;
  }
  return kUsage;
}
