// Copyright 2026 The ctxpress Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// ctxpress command-line entry point.
//
// Exit codes: 0 success, 2 configuration error, 3 partial failures,
// 4 fatal I/O, 1 anything else.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ctxpress/curation.h"
#include "ctxpress/errors.h"
#include "ctxpress/gateway.h"
#include "ctxpress/perturb.h"
#include "ctxpress/runner.h"
#include "ctxpress/synth.h"
#include "ctxpress/util.h"

namespace {

using namespace ctxpress;

constexpr int kExitConfig = 2;
constexpr int kExitPartial = 3;
constexpr int kExitIo = 4;

struct Overrides {
  std::string config;
  std::string manifest;
  std::string output_dir;
  std::string cache_dir;
  int concurrency = 0;
};

void add_config_options(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config, "Experiment configuration (JSON)")->required();
  cmd->add_option("--manifest", o.manifest, "Override manifest path");
  cmd->add_option("--output-dir", o.output_dir, "Override output directory");
  cmd->add_option("--cache-dir", o.cache_dir, "Override response cache directory");
  cmd->add_option("--concurrency", o.concurrency, "Override worker count");
}

ExperimentConfig load_config(const Overrides& o) {
  ExperimentConfig c = ExperimentConfig::load(o.config);
  if (!o.manifest.empty()) c.manifest_path = o.manifest;
  if (!o.output_dir.empty()) c.output_dir = o.output_dir;
  if (!o.cache_dir.empty()) c.cache_dir = o.cache_dir;
  if (o.concurrency != 0) c.concurrency = o.concurrency;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stress-test harness for multimodal yes/no radiology models"};
  app.require_subcommand(1);

  // synth-corpus
  int synth_n = 100;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth-corpus", "Write a synthetic fixture corpus");
  synth->add_option("--n-per-class", synth_n, "Studies per class")->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--out", synth_out, "Output directory")->required();

  // curate
  std::string cur_labels, cur_meta, cur_out;
  int cur_n = 500;
  std::uint64_t cur_seed = 0;
  auto* curate = app.add_subcommand("curate", "Sample a balanced manifest from label tables");
  curate->add_option("--labels", cur_labels, "CheXpert-style label CSV")->required();
  curate->add_option("--metadata", cur_meta, "Per-image metadata CSV")->required();
  curate->add_option("--n-per-class", cur_n, "Studies per class")->check(CLI::PositiveNumber);
  curate->add_option("--seed", cur_seed, "Sampling seed");
  curate->add_option("--out", cur_out, "Manifest JSONL to write")->required();

  Overrides pair_o, bank_o, plan_o, run_o, report_o;

  std::string pair_out;
  auto* pair = app.add_subcommand("pair", "Assign opposite-label donors");
  add_config_options(pair, pair_o);
  pair->add_option("--out", pair_out, "Pairing JSON (default <output_dir>/pairing.json)");

  std::string bank_out, bank_regen;
  auto* bank = app.add_subcommand("bank", "Build the distractor report bank");
  add_config_options(bank, bank_o);
  bank->add_option("--out", bank_out, "Bank JSONL (default <output_dir>/bank.jsonl)");
  bank->add_option("--regenerate-with", bank_regen, "Model id whose endpoint rewrites the texts");

  std::string plan_out;
  auto* plan_cmd = app.add_subcommand("plan", "List the work items a run would execute");
  add_config_options(plan_cmd, plan_o);
  plan_cmd->add_option("--out", plan_out, "Write one record key per line");

  std::size_t max_items = 0;
  auto* run_cmd = app.add_subcommand("run", "Execute the pending part of the plan");
  add_config_options(run_cmd, run_o);
  run_cmd->add_option("--max-items", max_items, "Stop after this many items");

  std::string report_results, report_out;
  auto* report_cmd = app.add_subcommand("report", "Aggregate results into panel tables");
  add_config_options(report_cmd, report_o);
  report_cmd->add_option("--results", report_results, "Results JSONL (default from config)");
  report_cmd->add_option("--out", report_out, "Report directory (default <output_dir>/report)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*synth) {
      const auto c = synth_corpus(synth_n, synth_seed, synth_out);
      std::cout << "wrote " << c.records << " curated studies (" << c.ineligible_rows
                << " ineligible rows) to " << synth_out << "\n";
    } else if (*curate) {
      const auto res = curate_balanced_subset(parse_label_table(read_file(cur_labels)),
                                              parse_metadata_table(read_file(cur_meta)), cur_n,
                                              cur_seed);
      write_file_atomic(cur_out, manifest_to_jsonl(res.records));
      for (const auto& line : res.log) std::cerr << line << "\n";
      std::cout << "wrote " << res.records.size() << " studies to " << cur_out << "\n";
    } else if (*pair) {
      const auto cfg = load_config(pair_o);
      const auto p = pair_opposites(load_manifest(cfg.manifest_path), cfg.pairing_seed);
      const std::filesystem::path out =
          pair_out.empty() ? cfg.output_dir / "pairing.json" : std::filesystem::path(pair_out);
      std::filesystem::create_directories(out.parent_path());
      write_file_atomic(out, to_json(p).dump(2) + "\n");
      std::cout << "wrote " << out.string() << "\n";
    } else if (*bank) {
      const auto cfg = load_config(bank_o);
      const auto ctx = prepare(cfg);
      DistractorBank b = ctx.bank;
      if (!bank_regen.empty()) {
        const ModelConfig* model = nullptr;
        for (const auto& m : cfg.models) {
          if (m.id == bank_regen) model = &m;
        }
        if (model == nullptr) throw ConfigError("--regenerate-with: no model '" + bank_regen + "'");
        if (model->kind != ModelConfig::Kind::Http) {
          throw ConfigError("--regenerate-with needs an http model");
        }
        auto backend = default_backend(*model, ctx, cfg);
        GenerationSettings settings = model->generation;
        settings.max_output_tokens = std::max(settings.max_output_tokens, 512);
        b = regenerate_bank_text(b, *backend, settings);
      }
      const std::filesystem::path out =
          bank_out.empty() ? cfg.output_dir / "bank.jsonl" : std::filesystem::path(bank_out);
      std::filesystem::create_directories(out.parent_path());
      write_file_atomic(out, b.to_jsonl());
      std::cout << "wrote " << b.size() << " bank entries to " << out.string() << "\n";
    } else if (*plan_cmd) {
      const auto cfg = load_config(plan_o);
      const auto items = plan(cfg, load_manifest(cfg.manifest_path));
      if (!plan_out.empty()) {
        std::string text;
        for (const auto& w : items) text += w.key + "\n";
        write_file_atomic(plan_out, text);
      }
      std::cout << items.size() << " work items\n";
    } else if (*run_cmd) {
      const auto cfg = load_config(run_o);
      RunOptions opts;
      if (max_items > 0) opts.max_items = max_items;
      const auto s = run(cfg, opts);
      std::cout << s.to_json().dump() << "\n";
      return s.failed > 0 ? kExitPartial : 0;
    } else if (*report_cmd) {
      const auto cfg = load_config(report_o);
      const std::filesystem::path results =
          report_results.empty() ? cfg.results_path() : std::filesystem::path(report_results);
      const auto bundle = report(results, cfg);
      const std::filesystem::path out =
          report_out.empty() ? cfg.report_dir() : std::filesystem::path(report_out);
      write_report(bundle, out);
      if (bundle.malformed_lines > 0) {
        std::cerr << "warning: skipped " << bundle.malformed_lines << " malformed lines\n";
      }
      std::cout << "report over " << bundle.records_used << " records in " << out.string()
                << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
