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

#ifndef CTXPRESS_RUNNER_H_
#define CTXPRESS_RUNNER_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ctxpress/core.h"
#include "ctxpress/curation.h"
#include "ctxpress/gateway.h"
#include "ctxpress/metrics.h"
#include "ctxpress/parser.h"
#include "ctxpress/perturb.h"
#include "ctxpress/prompt.h"

namespace ctxpress {

struct ModelConfig {
  enum class Kind { Oracle, Http };

  std::string id;
  Kind kind = Kind::Oracle;
  OracleParams oracle;
  HttpConfig http;
  GenerationSettings generation;
};

// Conditions the sms design sweeps, in canonical order.
std::vector<Condition> sms_conditions();

struct ExperimentConfig {
  std::filesystem::path manifest_path;
  // Oracle sidecar mapping image_ref -> label; optional.
  std::optional<std::filesystem::path> image_polarity_path;
  // Precomputed artifacts; derived from the seeds when absent.
  std::optional<std::filesystem::path> pairing_path;
  std::optional<std::filesystem::path> bank_path;
  std::optional<std::filesystem::path> parser_rules_path;
  // Root for relative image refs at dispatch; defaults to the manifest's dir.
  std::optional<std::filesystem::path> image_root;

  std::uint64_t pairing_seed = 0;
  std::uint64_t bank_seed = 0;
  std::vector<Experiment> experiments;
  // Empty means every sms condition.
  std::vector<Condition> conditions;
  // Unset means v0 alone, or v0..v3 for the prompt-sensitivity sweep.
  std::optional<std::vector<VariantId>> variants;
  std::vector<int> history_lengths = {0, 1, 2, 3, 4, 5};
  std::vector<ModelConfig> models;
  int concurrency = 4;
  std::optional<std::filesystem::path> cache_dir;
  std::filesystem::path output_dir = "out";
  TargetMode target_mode = TargetMode::Original;
  BootstrapOptions bootstrap;

  // Relative paths resolve against base_dir. Throws ConfigError naming the
  // offending field path.
  static ExperimentConfig from_json(const json& j, const std::filesystem::path& base_dir = {});
  static ExperimentConfig load(const std::filesystem::path& path);
  void validate() const;

  std::filesystem::path results_path() const { return output_dir / "results.jsonl"; }
  std::filesystem::path report_dir() const { return output_dir / "report"; }
};

struct WorkItem {
  std::string key;
  std::size_t model_index = 0;
  std::string study_id;
  Condition condition = Condition::no_shift();
  PromptVariant variant;
};

// Everything plan and run need besides the config itself.
struct RunContext {
  Manifest manifest;
  PairingMap pairing;
  DistractorBank bank;
  ParserRules parser_rules;
  std::string manifest_checksum;
};

// Loads the manifest and derives (or loads) pairing and bank.
RunContext prepare(const ExperimentConfig& config);

// Deduplicated and sorted by record_key.
std::vector<WorkItem> plan(const ExperimentConfig& config, const Manifest& manifest);

struct RunSummary {
  std::size_t planned = 0;
  std::size_t completed = 0;
  std::size_t skipped = 0;  // already present in the output
  std::size_t failed = 0;
  std::size_t refusals = 0;
  std::size_t parse_errors = 0;
  std::size_t temperature_fallbacks = 0;
  std::vector<std::string> failures;  // "key: message"

  json to_json() const;
};

// Builds the backend for one model entry, cache-wrapped when the config has
// a cache_dir.
using BackendFactory =
    std::function<std::shared_ptr<Backend>(const ModelConfig&, const RunContext&)>;
std::shared_ptr<Backend> default_backend(const ModelConfig& model, const RunContext& ctx,
                                         const ExperimentConfig& config);

struct RunOptions {
  // Stop after this many pending items; simulates an interruption.
  std::optional<std::size_t> max_items;
  // Replaces default_backend, e.g. to inject a scripted test backend.
  BackendFactory backend_factory;
  // Progress and failure lines; stderr when unset.
  std::function<void(const std::string&)> log;
};

// Executes the pending part of the plan. Records are appended to
// results.jsonl in plan order by a single writer. Per-item failures are
// counted and retried by the next run; I/O failures abort with the output
// intact.
RunSummary run(const ExperimentConfig& config, const RunOptions& options = {});

// Builds one record for a work item; exposed for tests.
EvalRecord evaluate_item(const WorkItem& item, const ExperimentConfig& config,
                         const RunContext& ctx, Backend& backend);

struct LoadedResults {
  std::vector<EvalRecord> records;
  std::size_t malformed_lines = 0;
  std::size_t duplicate_keys = 0;
};

// Parses results.jsonl, skipping malformed lines and repeated keys (first
// occurrence wins).
LoadedResults load_results(const std::filesystem::path& path);

struct ReportBundle {
  // File name -> CSV contents.
  std::map<std::string, std::string> files;
  std::size_t records_used = 0;
  std::size_t malformed_lines = 0;
};

// Aggregates records into per-panel tables. Throws ReportError when there are
// no usable records. Output bytes depend only on the inputs.
ReportBundle build_report(const LoadedResults& results, const ExperimentConfig& config,
                          const Manifest* manifest = nullptr);
ReportBundle report(const std::filesystem::path& results_path, const ExperimentConfig& config);
void write_report(const ReportBundle& bundle, const std::filesystem::path& dir);

}  // namespace ctxpress

#endif  // CTXPRESS_RUNNER_H_
