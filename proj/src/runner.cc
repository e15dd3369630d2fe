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

#include "ctxpress/runner.h"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <variant>

#include "ctxpress/errors.h"
#include "ctxpress/util.h"

namespace ctxpress {

std::vector<Condition> sms_conditions() {
  return {Condition::no_shift(), Condition::text_shift(), Condition::image_shift(),
          Condition::image_only(), Condition::text_only()};
}

// ---------------------------------------------------------------------------
// Config

namespace {

constexpr std::array<VariantId, 4> kAllVariantIds = {VariantId::V0, VariantId::V1, VariantId::V2,
                                                     VariantId::V3};

// Typed access to a JSON object with field paths in every error.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  std::string where(std::string_view key = {}) const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
  }

  bool has(std::string_view key) const {
    used_.insert(std::string(key));
    return j_.contains(key) && !j_.at(std::string(key)).is_null();
  }
  const json& at(std::string_view key) const {
    used_.insert(std::string(key));
    return j_.at(std::string(key));
  }

  template <typename T>
  T get(std::string_view key, T fallback) const {
    if (!has(key)) return fallback;
    try {
      return at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + " has the wrong type");
    }
  }

  template <typename T>
  T require(std::string_view key) const {
    if (!has(key)) throw ConfigError(where(key) + " is required");
    return get<T>(key, T{});
  }

  // Every key must have been consumed; catches typos.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.contains(it.key())) throw ConfigError(where(it.key()) + " is not a known field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  mutable std::set<std::string> used_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) path = base / path;
  return path.lexically_normal();
}

double unit_interval(const Fields& f, std::string_view key, double fallback) {
  const double v = f.get<double>(key, fallback);
  if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(f.where(key) + " must be in [0, 1]");
  return v;
}

ModelConfig parse_model(const json& j, const std::string& path) {
  Fields f(j, path);
  ModelConfig m;
  m.id = f.require<std::string>("id");
  if (m.id.empty() || m.id.find('|') != std::string::npos) {
    throw ConfigError(f.where("id") + " must be non-empty and free of '|'");
  }
  const auto backend = f.get<std::string>("backend", "oracle");
  m.generation.temperature = f.get<double>("temperature", 0.0);
  if (m.generation.temperature < 0.0) throw ConfigError(f.where("temperature") + " must be >= 0");
  m.generation.max_output_tokens = f.get<int>("max_output_tokens", 16);
  if (m.generation.max_output_tokens < 1) {
    throw ConfigError(f.where("max_output_tokens") + " must be positive");
  }
  m.generation.capture_first_token_logits = f.get<bool>("first_token", false);

  if (backend == "oracle") {
    m.kind = ModelConfig::Kind::Oracle;
    m.oracle.alpha = unit_interval(f, "alpha", m.oracle.alpha);
    m.oracle.gamma = unit_interval(f, "gamma", m.oracle.gamma);
    m.oracle.epsilon = unit_interval(f, "epsilon", m.oracle.epsilon);
    m.oracle.seed = f.get<std::uint64_t>("seed", 0);
  } else if (backend == "http") {
    m.kind = ModelConfig::Kind::Http;
    m.http.base_url = f.get<std::string>("base_url", "");
    m.http.model = f.require<std::string>("model");
    m.http.max_in_flight = f.get<int>("max_in_flight", 4);
    if (m.http.max_in_flight < 1) throw ConfigError(f.where("max_in_flight") + " must be >= 1");
    m.http.requests_per_second = f.get<double>("requests_per_second", 0.0);
    m.http.burst = f.get<double>("burst", 4.0);
    m.http.retry.max_retries = f.get<int>("max_retries", 5);
    m.http.retry.initial_backoff =
        std::chrono::milliseconds(f.get<std::int64_t>("initial_backoff_ms", 500));
    m.http.retry.max_backoff =
        std::chrono::milliseconds(f.get<std::int64_t>("max_backoff_ms", 30000));
    m.http.timeout = std::chrono::seconds(f.get<std::int64_t>("timeout_s", 60));
    m.http.logprobs = f.get<bool>("logprobs", false);
    m.http.top_logprobs = f.get<int>("top_logprobs", 20);
  } else {
    throw ConfigError(f.where("backend") + " must be \"oracle\" or \"http\"");
  }
  f.finish();
  return m;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j, const std::filesystem::path& base_dir) {
  Fields f(j, "");
  ExperimentConfig c;
  c.manifest_path = resolve(base_dir, f.require<std::string>("manifest"));
  auto opt_path = [&](std::string_view key) -> std::optional<std::filesystem::path> {
    if (!f.has(key)) return std::nullopt;
    return resolve(base_dir, f.get<std::string>(key, ""));
  };
  c.image_polarity_path = opt_path("image_polarity");
  c.pairing_path = opt_path("pairing");
  c.bank_path = opt_path("bank");
  c.parser_rules_path = opt_path("parser_rules");
  c.image_root = opt_path("image_root");
  c.cache_dir = opt_path("cache_dir");
  c.output_dir = resolve(base_dir, f.get<std::string>("output_dir", "out"));
  c.pairing_seed = f.get<std::uint64_t>("pairing_seed", 0);
  c.bank_seed = f.get<std::uint64_t>("bank_seed", 0);
  c.concurrency = f.get<int>("concurrency", 4);

  for (const auto& e : f.get<std::vector<std::string>>("experiments", {})) {
    try {
      c.experiments.push_back(parse_experiment(e));
    } catch (const Error&) {
      throw ConfigError(f.where("experiments") + ": unknown experiment '" + e + "'");
    }
  }
  for (const auto& name : f.get<std::vector<std::string>>("conditions", {})) {
    Condition cond = Condition::no_shift();
    try {
      cond = Condition::parse(name);
    } catch (const Error&) {
      throw ConfigError(f.where("conditions") + ": unknown condition '" + name + "'");
    }
    if (cond.kind() == ConditionKind::History) {
      throw ConfigError(f.where("conditions") + ": use history_lengths for '" + name + "'");
    }
    c.conditions.push_back(cond);
  }
  if (f.has("variants")) {
    std::vector<VariantId> v;
    for (const auto& name : f.get<std::vector<std::string>>("variants", {})) {
      try {
        v.push_back(parse_variant_id(name));
      } catch (const Error&) {
        throw ConfigError(f.where("variants") + ": unknown variant '" + name + "'");
      }
    }
    c.variants = std::move(v);
  }
  if (f.has("history_lengths")) {
    c.history_lengths = f.get<std::vector<int>>("history_lengths", {});
  }
  if (f.has("target_mode")) {
    try {
      c.target_mode = parse_target_mode(f.get<std::string>("target_mode", ""));
    } catch (const Error&) {
      throw ConfigError(f.where("target_mode") + " is not a target mode");
    }
  }
  if (f.has("bootstrap")) {
    Fields b(f.at("bootstrap"), "bootstrap");
    c.bootstrap.iterations = b.get<int>("iterations", c.bootstrap.iterations);
    c.bootstrap.fraction = b.get<double>("fraction", c.bootstrap.fraction);
    c.bootstrap.seed = b.get<std::uint64_t>("seed", c.bootstrap.seed);
    c.bootstrap.with_replacement = b.get<bool>("with_replacement", false);
    b.finish();
  }
  if (f.has("models")) {
    const auto& models = f.at("models");
    if (!models.is_array()) throw ConfigError("models must be an array");
    for (std::size_t i = 0; i < models.size(); ++i) {
      c.models.push_back(parse_model(models[i], "models[" + std::to_string(i) + "]"));
    }
  }
  f.finish();
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

void ExperimentConfig::validate() const {
  if (experiments.empty()) throw ConfigError("experiments must name at least one experiment");
  if (models.empty()) throw ConfigError("models must list at least one model");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (!ids.insert(models[i].id).second) {
      throw ConfigError("models[" + std::to_string(i) + "].id duplicates '" + models[i].id + "'");
    }
  }
  for (int k : history_lengths) {
    if (k < 0 || k > kMaxHistory) throw ConfigError("history_lengths entries must be in [0, 5]");
  }
  if (concurrency < 1) throw ConfigError("concurrency must be >= 1");
  if (bootstrap.iterations < 1) throw ConfigError("bootstrap.iterations must be >= 1");
  if (!(bootstrap.fraction > 0.0 && bootstrap.fraction <= 1.0)) {
    throw ConfigError("bootstrap.fraction must be in (0, 1]");
  }
}

// ---------------------------------------------------------------------------
// Plan

RunContext prepare(const ExperimentConfig& config) {
  RunContext ctx;
  const std::string manifest_text = read_file(config.manifest_path);
  ctx.manifest = manifest_from_jsonl(manifest_text);
  ctx.manifest_checksum = sha256_hex(manifest_text);
  if (config.pairing_path) {
    try {
      ctx.pairing = pairing_from_json(json::parse(read_file(*config.pairing_path)));
    } catch (const json::exception& e) {
      throw SchemaError(config.pairing_path->string() + ": " + e.what());
    }
  } else if (!ctx.manifest.empty()) {
    ctx.pairing = pair_opposites(ctx.manifest, config.pairing_seed);
  }
  if (config.bank_path) {
    ctx.bank = DistractorBank::from_jsonl(read_file(*config.bank_path));
  } else if (!ctx.manifest.empty()) {
    ctx.bank = build_distractor_bank(ctx.manifest, config.bank_seed);
  }
  ctx.parser_rules = config.parser_rules_path
                         ? ParserRules::parse(read_file(*config.parser_rules_path))
                         : ParserRules::defaults();
  return ctx;
}

namespace {

bool has_experiment(const ExperimentConfig& c, Experiment e) {
  return std::find(c.experiments.begin(), c.experiments.end(), e) != c.experiments.end();
}

}  // namespace

std::vector<WorkItem> plan(const ExperimentConfig& config, const Manifest& manifest) {
  config.validate();
  const bool sweep = has_experiment(config, Experiment::PromptSensitivity);
  const bool sms = sweep || has_experiment(config, Experiment::Sms);
  const bool history = has_experiment(config, Experiment::History);

  const std::vector<Condition> conds = config.conditions.empty() ? sms_conditions()
                                                                 : config.conditions;
  const std::vector<VariantId> single = {VariantId::V0};
  const std::vector<VariantId> sms_variants =
      config.variants.value_or(sweep ? std::vector<VariantId>(kAllVariantIds.begin(),
                                                              kAllVariantIds.end())
                                     : single);
  const std::vector<VariantId> history_variants = config.variants.value_or(single);

  std::map<std::string, WorkItem> items;
  auto add = [&](std::size_t m, const StudyRecord& s, const Condition& c, PromptVariant v) {
    WorkItem w{record_key(s.study_id, c, v, config.models[m].id), m, s.study_id, c, v};
    items.emplace(w.key, std::move(w));
  };
  for (std::size_t m = 0; m < config.models.size(); ++m) {
    for (const auto& s : manifest.records()) {
      if (sms) {
        for (const auto& c : conds) {
          for (VariantId v : sms_variants) add(m, s, c, {v, PromptFamily::Standard});
        }
      }
      if (history) {
        for (int k : config.history_lengths) {
          const Condition c = k == 0 ? Condition::no_shift() : Condition::history(k);
          for (VariantId v : history_variants) add(m, s, c, {v, PromptFamily::History});
        }
      }
    }
  }
  std::vector<WorkItem> out;
  out.reserve(items.size());
  for (auto& [key, w] : items) out.push_back(std::move(w));
  return out;
}

// ---------------------------------------------------------------------------
// Run

json RunSummary::to_json() const {
  return {{"planned", planned},   {"completed", completed},
          {"skipped", skipped},   {"failed", failed},
          {"refusals", refusals}, {"parse_errors", parse_errors},
          {"temperature_fallbacks", temperature_fallbacks}};
}

std::shared_ptr<Backend> default_backend(const ModelConfig& model, const RunContext& ctx,
                                         const ExperimentConfig& config) {
  std::shared_ptr<Backend> backend;
  if (model.kind == ModelConfig::Kind::Oracle) {
    auto index = std::make_shared<ModalityIndex>(ModalityIndex::from_manifest(ctx.manifest));
    if (config.image_polarity_path) index->load_image_sidecar(*config.image_polarity_path);
    backend = std::make_shared<OracleBackend>(model.id, model.oracle, std::move(index));
  } else {
    backend = std::make_shared<HttpBackend>(model.id, model.http);
  }
  if (config.cache_dir) {
    backend = std::make_shared<CachingBackend>(std::move(backend),
                                               std::make_shared<ResponseCache>(*config.cache_dir));
  }
  return backend;
}

EvalRecord evaluate_item(const WorkItem& item, const ExperimentConfig& config,
                         const RunContext& ctx, Backend& backend) {
  const ModelConfig& model = config.models.at(item.model_index);
  const StudyRecord& study = ctx.manifest.at(item.study_id);
  const PerturbedCase c =
      apply_condition(study, item.condition, ctx.pairing, ctx.manifest, &ctx.bank, config.bank_seed);
  MessageSequence messages = render(c, item.variant);
  const auto root = config.image_root.value_or(config.manifest_path.parent_path());
  for (auto& part : messages.parts) {
    if (auto* img = std::get_if<ImagePart>(&part)) {
      const std::filesystem::path ref(img->image_ref);
      if (ref.is_relative() && !root.empty()) img->image_ref = (root / ref).string();
    }
  }
  const DispatchRequest request{messages, &c, item.variant, item.key};
  const RawResponse resp = backend.complete(request, model.generation);

  EvalRecord r;
  r.study_id = item.study_id;
  r.condition = item.condition;
  r.variant = item.variant;
  r.model_id = model.id;
  r.raw_text = resp.text;
  r.answer = classify(resp.text, ctx.parser_rules);
  r.labels = c.labels;
  r.first_token = resp.first_token;
  r.from_cache = resp.from_cache;
  r.timestamp = std::chrono::system_clock::now();
  return r;
}

LoadedResults load_results(const std::filesystem::path& path) {
  LoadedResults out;
  if (!std::filesystem::exists(path)) return out;
  std::istringstream in(read_file(path));
  std::set<std::string> keys;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    EvalRecord r;
    try {
      r = eval_record_from_json(json::parse(line));
    } catch (const std::exception&) {
      ++out.malformed_lines;
      continue;
    }
    if (!keys.insert(record_key(r)).second) {
      ++out.duplicate_keys;
      continue;
    }
    out.records.push_back(std::move(r));
  }
  return out;
}

namespace {

struct Outcome {
  std::variant<EvalRecord, std::string> value;
  bool temperature_fallback = false;
};

// Sees responses on their way through so the summary can count fallbacks
// without widening EvalRecord.
class FallbackProbe : public Backend {
 public:
  explicit FallbackProbe(std::shared_ptr<Backend> inner) : inner_(std::move(inner)) {}
  RawResponse complete(const DispatchRequest& req, const GenerationSettings& s) override {
    RawResponse r = inner_->complete(req, s);
    if (r.temperature_fallback) fallbacks_.fetch_add(1);
    return r;
  }
  std::string id() const override { return inner_->id(); }
  bool supports_first_token() const override { return inner_->supports_first_token(); }
  std::size_t fallbacks() const { return fallbacks_.load(); }

 private:
  std::shared_ptr<Backend> inner_;
  std::atomic<std::size_t> fallbacks_{0};
};

}  // namespace

RunSummary run(const ExperimentConfig& config, const RunOptions& options) {
  const auto log = options.log ? options.log
                               : std::function<void(const std::string&)>(
                                     [](const std::string& s) { std::cerr << s << "\n"; });
  const RunContext ctx = prepare(config);
  const auto items = plan(config, ctx.manifest);

  RunSummary summary;
  summary.planned = items.size();

  std::error_code ec;
  std::filesystem::create_directories(config.output_dir, ec);
  if (ec) throw IoError("cannot create " + config.output_dir.string() + ": " + ec.message());
  const auto results_path = config.results_path();

  std::set<std::string> done;
  bool needs_newline = false;
  if (std::filesystem::exists(results_path)) {
    const auto existing = load_results(results_path);
    for (const auto& r : existing.records) done.insert(record_key(r));
    if (existing.malformed_lines > 0) {
      log("warning: " + std::to_string(existing.malformed_lines) +
          " malformed lines in existing output left in place");
    }
    const std::string text = read_file(results_path);
    needs_newline = !text.empty() && text.back() != '\n';
  }

  std::vector<const WorkItem*> pending;
  for (const auto& w : items) {
    if (done.contains(w.key)) {
      ++summary.skipped;
    } else {
      pending.push_back(&w);
    }
  }
  if (options.max_items && pending.size() > *options.max_items) pending.resize(*options.max_items);

  std::vector<std::shared_ptr<FallbackProbe>> backends;
  for (const auto& m : config.models) {
    auto b = options.backend_factory ? options.backend_factory(m, ctx)
                                     : default_backend(m, ctx, config);
    backends.push_back(std::make_shared<FallbackProbe>(std::move(b)));
  }

  std::ofstream out(results_path, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot open " + results_path.string() + " for append");
  if (needs_newline) out << '\n';

  std::vector<std::optional<Outcome>> slots(pending.size());
  std::mutex mu;
  std::condition_variable ready;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= pending.size() || stop.load()) return;
      const WorkItem& w = *pending[i];
      Outcome o;
      try {
        o.value = evaluate_item(w, config, ctx, *backends[w.model_index]);
      } catch (const std::exception& e) {
        o.value = std::string(e.what());
      }
      {
        std::lock_guard lock(mu);
        slots[i] = std::move(o);
      }
      ready.notify_all();
    }
  };

  const std::size_t n_workers =
      std::min<std::size_t>(static_cast<std::size_t>(config.concurrency), pending.size());
  std::vector<std::thread> workers;
  for (std::size_t t = 0; t < n_workers; ++t) workers.emplace_back(worker);
  auto join_all = [&] {
    stop.store(true);
    for (auto& t : workers) {
      if (t.joinable()) t.join();
    }
  };

  try {
    for (std::size_t i = 0; i < pending.size(); ++i) {
      Outcome o;
      {
        std::unique_lock lock(mu);
        ready.wait(lock, [&] { return slots[i].has_value(); });
        o = std::move(*slots[i]);
        slots[i].reset();
      }
      if (auto* rec = std::get_if<EvalRecord>(&o.value)) {
        out << to_jsonl_line(*rec);
        out.flush();
        if (!out) throw IoError("write to " + results_path.string() + " failed");
        ++summary.completed;
        if (rec->answer == ModelAnswer::Refusal) ++summary.refusals;
        if (rec->answer == ModelAnswer::ParseError) ++summary.parse_errors;
      } else {
        ++summary.failed;
        const std::string msg = pending[i]->key + ": " + std::get<std::string>(o.value);
        summary.failures.push_back(msg);
        log("failed " + msg);
      }
    }
  } catch (...) {
    join_all();
    throw;
  }
  join_all();
  for (const auto& b : backends) summary.temperature_fallbacks += b->fallbacks();
  if (summary.temperature_fallbacks > 0) {
    log("warning: " + std::to_string(summary.temperature_fallbacks) +
        " requests fell back to the endpoint's default temperature");
  }

  json info = summary.to_json();
  info["manifest_sha256"] = ctx.manifest_checksum;
  info["templates_sha256"] = TemplateSet::embedded().checksum();
  info["parser_rules_sha256"] = ctx.parser_rules.checksum();
  write_file_atomic(config.output_dir / "run_summary.json", info.dump(2) + "\n");
  return summary;
}

// ---------------------------------------------------------------------------
// Report

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

int condition_rank(const Condition& c) {
  const auto all = all_conditions();
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i] == c) return static_cast<int>(i);
  }
  return static_cast<int>(all.size());
}

std::string condition_label(const EvalRecord& r) {
  if (r.variant.family == PromptFamily::History && r.condition.kind() == ConditionKind::NoShift) {
    return "history_0";
  }
  return r.condition.name();
}

struct Cell {
  std::string model_id;
  std::string experiment;
  std::string condition;
  std::string variant;
  std::string metric;
  MetricEstimate est;
  std::size_t excluded = 0;
};

// Records of one (model, family, variant, condition), keyed by study.
using Group = std::map<std::string, const EvalRecord*>;

struct ConditionKey {
  int rank;
  std::string name;
  bool operator<(const ConditionKey& o) const { return std::tie(rank, name) < std::tie(o.rank, o.name); }
};

// model -> family -> variant -> condition -> group
using Index =
    std::map<std::string,
             std::map<PromptFamily, std::map<std::string, std::map<ConditionKey, Group>>>>;

class Reporter {
 public:
  Reporter(const ExperimentConfig& config) : config_(config) {}

  BootstrapOptions options_for(std::initializer_list<std::string_view> labels) const {
    BootstrapOptions o = config_.bootstrap;
    o.seed = derive_seed(config_.bootstrap.seed, labels);
    return o;
  }

  std::optional<MetricEstimate> accuracy_of(const Group& g, const std::string& tag) const {
    std::vector<EvalRecord> items;
    for (const auto& [id, r] : g) items.push_back(*r);
    const TargetMode mode = config_.target_mode;
    auto metric = tolerant<EvalRecord>(
        [mode](std::span<const EvalRecord> s) { return accuracy(s, mode); });
    try {
      return bootstrap<EvalRecord>(metric, items, options_for({tag, "accuracy"}));
    } catch (const UndefinedMetricError&) {
      return std::nullopt;
    }
  }

  std::optional<MetricEstimate> nfr_of(const Group& base, const Group& pert,
                                       const std::string& tag) const {
    std::vector<EvalRecord> b, p;
    for (const auto& [id, r] : pert) {
      auto it = base.find(id);
      if (it == base.end()) continue;
      b.push_back(*it->second);
      p.push_back(*r);
    }
    if (p.empty()) return std::nullopt;
    const auto outcomes = pair_outcomes(b, p, config_.target_mode);
    auto metric = tolerant<PairedOutcome>(nfr);
    try {
      return bootstrap<PairedOutcome>(metric, outcomes, options_for({tag, "nfr"}));
    } catch (const UndefinedMetricError&) {
      return std::nullopt;
    }
  }

 private:
  const ExperimentConfig& config_;
};

std::string join_csv(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += csv_escape(fields[i]);
  }
  return out + "\n";
}

}  // namespace

ReportBundle build_report(const LoadedResults& results, const ExperimentConfig& config,
                          const Manifest* manifest) {
  if (results.records.empty()) throw ReportError("no usable records to report on");
  ReportBundle bundle;
  bundle.records_used = results.records.size();
  bundle.malformed_lines = results.malformed_lines;

  Index index;
  for (const auto& r : results.records) {
    const ConditionKey ck{condition_rank(r.condition), condition_label(r)};
    index[r.model_id][r.variant.family][std::string(r.variant.id_name())][ck][r.study_id] = &r;
  }

  const Reporter rep(config);
  std::vector<Cell> cells;
  std::string panel_a_acc = join_csv({"model_id", "variant", "condition", "accuracy", "ci_low",
                                      "ci_high", "n"});
  std::string panel_a_nfr = join_csv({"model_id", "variant", "condition", "nfr", "ci_low",
                                      "ci_high", "n"});
  std::string panel_b = join_csv({"model_id", "variant", "history_len", "accuracy", "acc_ci_low",
                                  "acc_ci_high", "nfr", "nfr_ci_low", "nfr_ci_high", "n"});
  std::string panel_c = join_csv({"model_id", "condition", "fleiss_kappa", "ci_low", "ci_high",
                                  "band", "n", "excluded"});
  std::string pairwise = join_csv({"model_id", "condition", "variant_a", "variant_b", "flip_rate",
                                   "flip_ci_low", "flip_ci_high", "cohen_kappa", "cohen_ci_low",
                                   "cohen_ci_high", "n", "excluded"});
  std::string dist = join_csv({"model_id", "experiment", "condition", "variant", "yes", "no",
                               "refusal", "parse_error", "total"});
  std::string first_tok = join_csv({"model_id", "experiment", "condition", "variant", "metric",
                                    "point", "ci_low", "ci_high", "n"});

  auto ci = [](const MetricEstimate& e) {
    return std::vector<std::string>{num(e.point), num(e.ci_low), num(e.ci_high)};
  };

  for (const auto& [model, families] : index) {
    for (const auto& [family, variants] : families) {
      const std::string experiment = family == PromptFamily::History ? "history" : "sms";
      for (const auto& [variant, conditions] : variants) {
        const Group* baseline = nullptr;
        for (const auto& [ck, g] : conditions) {
          if (ck.name == "no_shift" || ck.name == "history_0") baseline = &g;
        }
        for (const auto& [ck, g] : conditions) {
          const std::string tag = model + "|" + experiment + "|" + ck.name + "|" + variant;
          const auto acc = rep.accuracy_of(g, tag);
          std::optional<MetricEstimate> rate;
          if (baseline && baseline != &g) rate = rep.nfr_of(*baseline, g, tag);
          if (acc) cells.push_back({model, experiment, ck.name, variant, "accuracy", *acc, 0});
          if (rate) cells.push_back({model, experiment, ck.name, variant, "nfr", *rate, 0});

          if (family == PromptFamily::Standard) {
            if (acc) {
              auto row = std::vector<std::string>{model, variant, ck.name};
              for (auto& s : ci(*acc)) row.push_back(s);
              row.push_back(std::to_string(acc->n));
              panel_a_acc += join_csv(row);
            }
            if (rate) {
              auto row = std::vector<std::string>{model, variant, ck.name};
              for (auto& s : ci(*rate)) row.push_back(s);
              row.push_back(std::to_string(rate->n));
              panel_a_nfr += join_csv(row);
            }
          } else if (acc) {
            auto row = std::vector<std::string>{model, variant, ck.name.substr(8)};
            for (auto& s : ci(*acc)) row.push_back(s);
            if (rate) {
              for (auto& s : ci(*rate)) row.push_back(s);
            } else {
              row.insert(row.end(), {"", "", ""});
            }
            row.push_back(std::to_string(acc->n));
            panel_b += join_csv(row);
          }

          std::array<std::size_t, 4> counts{};
          for (const auto& [id, r] : g) ++counts[static_cast<std::size_t>(r->answer)];
          dist += join_csv({model, experiment, ck.name, variant, std::to_string(counts[0]),
                            std::to_string(counts[1]), std::to_string(counts[2]),
                            std::to_string(counts[3]), std::to_string(g.size())});

          std::vector<LabeledScore> scores;
          for (const auto& [id, r] : g) {
            if (r->first_token) {
              scores.push_back({r->first_token->p_yes, resolve_target_label(*r, config.target_mode)});
            }
          }
          if (!scores.empty()) {
            auto fta = tolerant<LabeledScore>(first_token_accuracy);
            auto calib = tolerant<LabeledScore>([](std::span<const LabeledScore> s) {
              std::vector<ConfidenceScore> c;
              for (const auto& x : s) c.push_back(score_first_token(x.p_yes, x.label));
              return ece(c);
            });
            const auto a = bootstrap<LabeledScore>(fta, scores, rep.options_for({tag, "fta"}));
            const auto e = bootstrap<LabeledScore>(calib, scores, rep.options_for({tag, "ece"}));
            for (const auto& [name, est] :
                 {std::pair{"first_token_accuracy", a}, std::pair{"ece", e}}) {
              cells.push_back({model, experiment, ck.name, variant, name, est, 0});
              auto row = std::vector<std::string>{model, experiment, ck.name, variant, name};
              for (auto& s : ci(est)) row.push_back(s);
              row.push_back(std::to_string(est.n));
              first_tok += join_csv(row);
            }
          }
        }
      }

      if (family != PromptFamily::Standard || variants.size() < 2) continue;
      // Prompt sensitivity: variants as raters, per condition.
      std::set<ConditionKey> conds;
      for (const auto& [v, cs] : variants) {
        for (const auto& [ck, g] : cs) conds.insert(ck);
      }
      for (const auto& ck : conds) {
        std::vector<std::string> names;
        std::vector<const Group*> groups;
        for (const auto& [v, cs] : variants) {
          auto it = cs.find(ck);
          if (it == cs.end()) continue;
          names.push_back(v);
          groups.push_back(&it->second);
        }
        if (groups.size() < 2) continue;
        std::vector<std::string> studies;
        for (const auto& [id, r] : *groups.front()) {
          if (std::all_of(groups.begin(), groups.end(),
                          [&](const Group* g) { return g->contains(id); })) {
            studies.push_back(id);
          }
        }
        if (studies.size() < 2) continue;
        const std::string tag = model + "|prompt_sensitivity|" + ck.name;

        // One row of answers per study, one column per variant.
        std::vector<std::vector<ModelAnswer>> rows;
        for (const auto& id : studies) {
          std::vector<ModelAnswer> row;
          for (const Group* g : groups) row.push_back(g->at(id)->answer);
          rows.push_back(std::move(row));
        }
        auto fleiss_metric = [](std::span<const std::vector<ModelAnswer>> s)
            -> std::optional<double> {
          RatingMatrix m;
          for (const auto& row : s) {
            if (std::all_of(row.begin(), row.end(), is_binary)) {
              m.rows.push_back(row);
            } else {
              ++m.excluded_items;
            }
          }
          try {
            return fleiss_kappa(m).value;
          } catch (const MatrixError&) {
            return std::nullopt;
          }
        };
        try {
          std::vector<Predictions> raters(groups.size());
          for (std::size_t v = 0; v < groups.size(); ++v) {
            for (const auto& id : studies) raters[v][id] = groups[v]->at(id)->answer;
          }
          const auto matrix = build_rating_matrix(raters);
          const auto est = bootstrap<std::vector<ModelAnswer>>(
              fleiss_metric, rows, rep.options_for({tag, "fleiss"}));
          cells.push_back({model, "prompt_sensitivity", ck.name, "all", "fleiss_kappa", est,
                           matrix.excluded_items});
          auto row = std::vector<std::string>{model, ck.name};
          for (auto& s : ci(est)) row.push_back(s);
          row.push_back(std::string(to_string(kappa_band(est.point))));
          row.push_back(std::to_string(matrix.rows.size()));
          row.push_back(std::to_string(matrix.excluded_items));
          panel_c += join_csv(row);
        } catch (const UndefinedMetricError&) {
        }

        for (std::size_t a = 0; a < groups.size(); ++a) {
          for (std::size_t b = 0; b < groups.size(); ++b) {
            using Pair = std::pair<ModelAnswer, ModelAnswer>;
            std::vector<Pair> pairs;
            for (const auto& id : studies) {
              pairs.emplace_back(groups[a]->at(id)->answer, groups[b]->at(id)->answer);
            }
            auto split = [](std::span<const Pair> s) {
              std::pair<Predictions, Predictions> out;
              for (std::size_t i = 0; i < s.size(); ++i) {
                out.first[std::to_string(i)] = s[i].first;
                out.second[std::to_string(i)] = s[i].second;
              }
              return out;
            };
            auto flips = tolerant<Pair>([&](std::span<const Pair> s) {
              const auto [x, y] = split(s);
              return flip_rate(x, y);
            });
            auto kappa = tolerant<Pair>([&](std::span<const Pair> s) {
              const auto [x, y] = split(s);
              return cohen_kappa(x, y).value;
            });
            const std::string pair_tag = tag + "|" + names[a] + "|" + names[b];
            const auto fr = bootstrap<Pair>(flips, pairs, rep.options_for({pair_tag, "flip"}));
            std::optional<MetricEstimate> ck_est;
            std::size_t excluded = 0;
            try {
              const auto [x, y] = split(pairs);
              excluded = cohen_kappa(x, y).excluded;
              ck_est = bootstrap<Pair>(kappa, pairs, rep.options_for({pair_tag, "cohen"}));
            } catch (const UndefinedMetricError&) {
            }
            const std::string pair_name = names[a] + "~" + names[b];
            cells.push_back({model, "prompt_sensitivity", ck.name, pair_name, "flip_rate", fr, 0});
            auto row = std::vector<std::string>{model, ck.name, names[a], names[b]};
            for (auto& s : ci(fr)) row.push_back(s);
            if (ck_est) {
              cells.push_back({model, "prompt_sensitivity", ck.name, pair_name, "cohen_kappa",
                               *ck_est, excluded});
              for (auto& s : ci(*ck_est)) row.push_back(s);
            } else {
              row.insert(row.end(), {"", "", ""});
            }
            row.push_back(std::to_string(pairs.size()));
            row.push_back(std::to_string(excluded));
            pairwise += join_csv(row);
          }
        }
      }
    }
  }

  std::string metrics = join_csv({"model_id", "experiment", "condition", "variant", "metric",
                                  "point", "ci_low", "ci_high", "n", "excluded"});
  for (const auto& c : cells) {
    metrics += join_csv({c.model_id, c.experiment, c.condition, c.variant, c.metric,
                         num(c.est.point), num(c.est.ci_low), num(c.est.ci_high),
                         std::to_string(c.est.n), std::to_string(c.excluded)});
  }

  bundle.files["metrics.csv"] = metrics;
  bundle.files["panel_a_accuracy.csv"] = panel_a_acc;
  bundle.files["panel_a_nfr.csv"] = panel_a_nfr;
  bundle.files["panel_b_history.csv"] = panel_b;
  bundle.files["panel_c_agreement.csv"] = panel_c;
  bundle.files["pairwise_agreement.csv"] = pairwise;
  bundle.files["response_distribution.csv"] = dist;
  bundle.files["first_token.csv"] = first_tok;

  if (manifest) {
    std::map<std::string, std::size_t> mix;
    for (const auto& s : manifest->records()) {
      ++mix[s.pathology ? std::string(to_string(*s.pathology)) : std::string("none")];
    }
    std::string out = join_csv({"pathology", "count"});
    for (const auto& [p, n] : mix) out += join_csv({p, std::to_string(n)});
    bundle.files["pathology_mix.csv"] = out;
  }

  std::string info = join_csv({"key", "value"});
  info += join_csv({"records_used", std::to_string(bundle.records_used)});
  info += join_csv({"malformed_lines", std::to_string(bundle.malformed_lines)});
  info += join_csv({"duplicate_keys", std::to_string(results.duplicate_keys)});
  info += join_csv({"target_mode", std::string(to_string(config.target_mode))});
  info += join_csv({"bootstrap_iterations", std::to_string(config.bootstrap.iterations)});
  info += join_csv({"bootstrap_fraction", num(config.bootstrap.fraction)});
  info += join_csv({"bootstrap_seed", std::to_string(config.bootstrap.seed)});
  bundle.files["report_info.csv"] = info;
  return bundle;
}

ReportBundle report(const std::filesystem::path& results_path, const ExperimentConfig& config) {
  const auto results = load_results(results_path);
  std::optional<Manifest> manifest;
  if (std::filesystem::exists(config.manifest_path)) manifest = load_manifest(config.manifest_path);
  return build_report(results, config, manifest ? &*manifest : nullptr);
}

void write_report(const ReportBundle& bundle, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (const auto& [name, content] : bundle.files) write_file_atomic(dir / name, content);
}

}  // namespace ctxpress
