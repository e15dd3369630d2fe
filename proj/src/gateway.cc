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

#include "ctxpress/gateway.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "ctxpress/errors.h"
#include "ctxpress/util.h"

namespace ctxpress {

double softmax_pair(double z_yes, double z_no) {
  if (!std::isfinite(z_yes) || !std::isfinite(z_no)) {
    throw NumericError("softmax_pair requires finite logits");
  }
  const double m = std::max(z_yes, z_no);
  const double ey = std::exp(z_yes - m);
  const double en = std::exp(z_no - m);
  return ey / (ey + en);
}

std::optional<FirstTokenScore> first_token_from_logits(
    const std::map<std::string, double>& token_logits) {
  auto best = [&](const auto& forms) -> std::optional<double> {
    std::optional<double> out;
    for (std::string_view f : forms) {
      auto it = token_logits.find(std::string(f));
      if (it != token_logits.end() && (!out || it->second > *out)) out = it->second;
    }
    return out;
  };
  const auto zy = best(kYesTokens);
  const auto zn = best(kNoTokens);
  if (!zy || !zn) return std::nullopt;
  return FirstTokenScore{*zy, *zn, softmax_pair(*zy, *zn)};
}

// ---------------------------------------------------------------------------
// Oracle

void OracleParams::validate() const {
  auto unit = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw RangeError(std::string("oracle parameter ") + name + " must be in [0, 1]");
    }
  };
  unit(alpha, "alpha");
  unit(gamma, "gamma");
  unit(epsilon, "epsilon");
}

std::optional<int> text_marker_label(std::string_view report) {
  const bool normal = report.find(kNormalImpression) != std::string_view::npos;
  const bool abnormal = report.find(kAbnormalImpression) != std::string_view::npos;
  if (normal == abnormal) return std::nullopt;
  return abnormal ? 1 : 0;
}

ModalityIndex ModalityIndex::from_manifest(const Manifest& manifest) {
  ModalityIndex idx;
  for (const auto& r : manifest.records()) {
    idx.add_image(r.image_ref, r.label);
    idx.add_text(r.report_text, r.label);
  }
  return idx;
}

void ModalityIndex::load_image_sidecar(const std::filesystem::path& csv_path) {
  const auto rows = parse_csv(read_file(csv_path));
  if (rows.empty() || rows.front().size() < 2 || rows.front()[0] != "image_ref" ||
      rows.front()[1] != "label") {
    throw SchemaError(csv_path.string() + ": expected header image_ref,label");
  }
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() == 1 && row[0].empty()) continue;
    if (row.size() < 2 || (row[1] != "0" && row[1] != "1")) {
      throw SchemaError(csv_path.string() + ": bad row " + std::to_string(i + 1));
    }
    add_image(row[0], row[1] == "1" ? 1 : 0);
  }
}

void ModalityIndex::add_text(std::string_view text, int label) {
  texts_[std::string(text)] = label;
}

std::optional<int> ModalityIndex::image_label(std::string_view ref) const {
  auto it = images_.find(std::string(ref));
  if (it == images_.end()) return std::nullopt;
  return it->second;
}

std::optional<int> ModalityIndex::text_label(std::string_view text) const {
  if (auto m = text_marker_label(text)) return m;
  auto it = texts_.find(std::string(text));
  if (it == texts_.end()) return std::nullopt;
  return it->second;
}

RawResponse oracle_predict(const PerturbedCase& c, const PromptVariant& variant,
                           const OracleParams& params, const ModalityIndex& index) {
  params.validate();
  std::optional<int> text_label, image_label;
  if (c.report_text) {
    text_label = index.text_label(*c.report_text);
    if (!text_label) throw OracleError("study " + c.study_id + ": report polarity unresolvable");
  }
  if (c.image_ref) {
    image_label = index.image_label(*c.image_ref);
    if (!image_label) throw OracleError("study " + c.study_id + ": image polarity unresolvable");
  }
  if (!text_label && !image_label) throw OracleError("study " + c.study_id + ": no modality");

  const std::string family = variant.family == PromptFamily::History ? "history" : "standard";
  // Keyed on the condition kind so History(k) stacks share their first k
  // flip draws; variants differ only through the epsilon draw.
  Rng base(derive_seed(params.seed,
                       {"oracle", c.study_id, std::string(c.condition.kind_name()), family}));
  Rng vary(derive_seed(params.seed, {"oracle-variant", c.study_id, c.condition.name(), family,
                                     std::string(variant.id_name())}));

  int decision = 0;
  double p_yes = 0.0;
  const double u_follow = base.uniform01();
  if (text_label && image_label) {
    decision = u_follow < params.alpha ? *text_label : *image_label;
    p_yes = params.alpha * *text_label + (1.0 - params.alpha) * *image_label;
  } else {
    decision = text_label ? *text_label : *image_label;
    p_yes = decision;
  }
  for (const auto& d : c.history) {
    const int pol = polarity_label(d.polarity);
    if (base.uniform01() < params.gamma) decision = pol;
    p_yes = p_yes * (1.0 - params.gamma) + params.gamma * pol;
  }
  const double u_variant = vary.uniform01();
  if (variant.id != VariantId::V0) {
    if (u_variant < params.epsilon) decision = 1 - decision;
    p_yes = p_yes * (1.0 - params.epsilon) + (1.0 - p_yes) * params.epsilon;
  }

  p_yes = std::clamp(p_yes, 1e-6, 1.0 - 1e-6);
  RawResponse out;
  out.text = decision == 1 ? "Yes" : "No";
  const double z_yes = std::log(p_yes);
  const double z_no = std::log1p(-p_yes);
  out.first_token = FirstTokenScore{z_yes, z_no, softmax_pair(z_yes, z_no)};
  return out;
}

OracleBackend::OracleBackend(std::string id, OracleParams params,
                             std::shared_ptr<const ModalityIndex> index)
    : id_(std::move(id)), params_(params), index_(std::move(index)) {
  params_.validate();
  if (!index_) throw PreconditionError("oracle backend needs a modality index");
}

RawResponse OracleBackend::complete(const DispatchRequest& request,
                                    const GenerationSettings& settings) {
  if (request.perturbed == nullptr) throw OracleError("oracle requests need a perturbed case");
  RawResponse out = oracle_predict(*request.perturbed, request.variant, params_, *index_);
  if (!settings.capture_first_token_logits) out.first_token.reset();
  out.backend_id = id_;
  return out;
}

// ---------------------------------------------------------------------------
// Cache

namespace {

json response_to_json(const std::string& key, const RawResponse& r) {
  json j;
  j["key"] = key;
  j["text"] = r.text;
  if (r.first_token) {
    j["first_token"] = {{"z_yes", r.first_token->z_yes},
                        {"z_no", r.first_token->z_no},
                        {"p_yes", r.first_token->p_yes}};
  } else {
    j["first_token"] = nullptr;
  }
  j["latency_ms"] = r.latency_ms;
  j["backend_id"] = r.backend_id;
  j["retries"] = r.retries;
  j["temperature_fallback"] = r.temperature_fallback;
  return j;
}

}  // namespace

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw IoError("cannot create cache dir " + dir_.string() + ": " + ec.message());
}

std::filesystem::path ResponseCache::path_for(const std::string& key) const {
  return dir_ / (sha256_hex(key) + ".json");
}

std::mutex& ResponseCache::lock_for(const std::string& key) {
  return stripes_[fnv1a64(key) % stripes_.size()];
}

std::optional<RawResponse> ResponseCache::load(const std::string& key) const {
  const auto path = path_for(key);
  if (!std::filesystem::exists(path)) return std::nullopt;
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ProtocolError("corrupt cache entry " + path.string() + ": " + e.what());
  }
  try {
    if (j.at("key").get<std::string>() != key) {
      throw ProtocolError("cache entry " + path.string() + " belongs to another key");
    }
    RawResponse r;
    r.text = j.at("text").get<std::string>();
    if (!j.at("first_token").is_null()) {
      const auto& f = j["first_token"];
      r.first_token = FirstTokenScore{f.at("z_yes").get<double>(), f.at("z_no").get<double>(),
                                      f.at("p_yes").get<double>()};
    }
    r.latency_ms = j.at("latency_ms").get<std::int64_t>();
    r.backend_id = j.at("backend_id").get<std::string>();
    r.retries = j.value("retries", 0);
    r.temperature_fallback = j.value("temperature_fallback", false);
    r.from_cache = true;
    return r;
  } catch (const json::exception& e) {
    throw ProtocolError("malformed cache entry " + path.string() + ": " + e.what());
  }
}

void ResponseCache::store(const std::string& key, const RawResponse& response) {
  write_file_atomic(path_for(key), response_to_json(key, response).dump() + "\n");
}

CachingBackend::CachingBackend(std::shared_ptr<Backend> inner, std::shared_ptr<ResponseCache> cache)
    : inner_(std::move(inner)), cache_(std::move(cache)) {}

RawResponse CachingBackend::complete(const DispatchRequest& request,
                                     const GenerationSettings& settings) {
  {
    std::lock_guard lock(cache_->lock_for(request.key));
    if (auto hit = cache_->load(request.key)) return *hit;
  }
  RawResponse fresh = inner_->complete(request, settings);
  std::lock_guard lock(cache_->lock_for(request.key));
  cache_->store(request.key, fresh);
  fresh.from_cache = false;
  return fresh;
}

// ---------------------------------------------------------------------------
// HTTP

std::chrono::milliseconds RetryPolicy::backoff_for(int attempt) const {
  double ms = static_cast<double>(initial_backoff.count()) * std::pow(2.0, attempt);
  ms = std::min(ms, static_cast<double>(max_backoff.count()));
  return std::chrono::milliseconds(static_cast<std::int64_t>(ms));
}

RateLimiter::RateLimiter(double tokens_per_second, double burst)
    : rate_(tokens_per_second),
      burst_(std::max(1.0, burst)),
      tokens_(std::max(1.0, burst)),
      last_(std::chrono::steady_clock::now()) {}

void RateLimiter::acquire() {
  if (rate_ <= 0.0) return;
  std::unique_lock lock(mu_);
  for (;;) {
    const auto now = std::chrono::steady_clock::now();
    const double elapsed = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    tokens_ = std::min(burst_, tokens_ + elapsed * rate_);
    if (tokens_ >= 1.0) {
      tokens_ -= 1.0;
      return;
    }
    const double wait_s = (1.0 - tokens_) / rate_;
    lock.unlock();
    std::this_thread::sleep_for(std::chrono::duration<double>(wait_s));
    lock.lock();
  }
}

void Semaphore::acquire() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return count_ > 0; });
  --count_;
}

void Semaphore::release() {
  {
    std::lock_guard lock(mu_);
    ++count_;
  }
  cv_.notify_one();
}

void HttpConfig::apply_environment() {
  if (base_url.empty()) {
    if (const char* v = std::getenv("CTXPRESS_BASE_URL")) base_url = v;
  }
  if (api_key.empty()) {
    if (const char* v = std::getenv("CTXPRESS_API_KEY")) api_key = v;
  }
}

json build_chat_request(const MessageSequence& messages, const GenerationSettings& settings,
                        const HttpConfig& config, bool include_temperature) {
  json content = json::array();
  for (const auto& part : messages.parts) {
    if (const auto* img = std::get_if<ImagePart>(&part)) {
      std::string bytes;
      try {
        bytes = read_file(img->image_ref);
      } catch (const Error& e) {
        throw IoError("image " + img->image_ref + " unreadable: " + e.what());
      }
      content.push_back(
          {{"type", "image_url"},
           {"image_url", {{"url", "data:" + img->media_type + ";base64," + base64_encode(bytes)}}}});
    } else {
      content.push_back({{"type", "text"}, {"text", std::get<TextPart>(part).text}});
    }
  }
  json body;
  body["model"] = config.model;
  body["messages"] = json::array({{{"role", "system"}, {"content", messages.system_text}},
                                  {{"role", "user"}, {"content", content}}});
  body["max_tokens"] = settings.max_output_tokens;
  if (include_temperature) body["temperature"] = settings.temperature;
  if (settings.capture_first_token_logits && config.logprobs) {
    body["logprobs"] = true;
    body["top_logprobs"] = config.top_logprobs;
  }
  return body;
}

RawResponse parse_chat_response(std::string_view body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("response is not JSON: ") + e.what());
  }
  RawResponse out;
  try {
    const auto& choice = j.at("choices").at(0);
    const auto& content = choice.at("message").at("content");
    out.text = content.is_null() ? std::string() : content.get<std::string>();
    if (choice.contains("logprobs") && choice["logprobs"].is_object() &&
        choice["logprobs"].contains("content") && choice["logprobs"]["content"].is_array() &&
        !choice["logprobs"]["content"].empty()) {
      std::map<std::string, double> logits;
      const auto& first = choice["logprobs"]["content"][0];
      if (first.contains("token") && first.contains("logprob")) {
        logits[first["token"].get<std::string>()] = first["logprob"].get<double>();
      }
      for (const auto& t : first.value("top_logprobs", json::array())) {
        const auto tok = t.at("token").get<std::string>();
        const double lp = t.at("logprob").get<double>();
        auto [it, inserted] = logits.emplace(tok, lp);
        if (!inserted) it->second = std::max(it->second, lp);
      }
      out.first_token = first_token_from_logits(logits);
    }
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("not a chat completion: ") + e.what());
  }
  return out;
}

namespace {

void split_base_url(const std::string& url, std::string& scheme_host_port, std::string& prefix) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("base_url needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  scheme_host_port = url.substr(0, path_start);
  prefix = path_start == std::string::npos ? std::string() : url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
}

bool retryable_status(int status) {
  return status == 408 || status == 429 || (status >= 500 && status <= 599);
}

}  // namespace

HttpBackend::HttpBackend(std::string id, HttpConfig config)
    : id_(std::move(id)),
      config_(std::move(config)),
      limiter_(config_.requests_per_second, config_.burst),
      in_flight_(std::max(1, config_.max_in_flight)) {
  config_.apply_environment();
  if (config_.base_url.empty()) throw ConfigError("http backend " + id_ + ": base_url unset");
  if (config_.model.empty()) throw ConfigError("http backend " + id_ + ": model unset");
  split_base_url(config_.base_url, scheme_host_port_, path_prefix_);
}

HttpBackend::~HttpBackend() = default;

RawResponse HttpBackend::complete(const DispatchRequest& request,
                                  const GenerationSettings& settings) {
  const auto started = std::chrono::steady_clock::now();
  bool include_temperature = true;
  bool fallback = false;
  int retries = 0;
  std::string last_error;
  const std::string path = path_prefix_ + "/chat/completions";

  for (int attempt = 0;; ++attempt) {
    const std::string body =
        build_chat_request(request.messages, settings, config_, include_temperature).dump();
    limiter_.acquire();
    in_flight_.acquire();
    httplib::Result res;
    {
      httplib::Client client(scheme_host_port_);
      client.set_connection_timeout(config_.timeout);
      client.set_read_timeout(config_.timeout);
      client.set_write_timeout(config_.timeout);
      httplib::Headers headers;
      if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);
      res = client.Post(path, headers, body, "application/json");
    }
    in_flight_.release();

    std::chrono::milliseconds wait{0};
    if (!res) {
      last_error = "transport: " + httplib::to_string(res.error());
    } else if (res->status == 200) {
      RawResponse out = parse_chat_response(res->body);
      out.backend_id = id_;
      out.retries = retries;
      out.temperature_fallback = fallback;
      out.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                           std::chrono::steady_clock::now() - started)
                           .count();
      return out;
    } else if (res->status == 401 || res->status == 403) {
      throw AuthError("endpoint " + config_.base_url + " rejected credentials (HTTP " +
                      std::to_string(res->status) + ")");
    } else if (res->status == 400 && include_temperature &&
               to_lower_ascii(res->body).find("temperature") != std::string::npos) {
      include_temperature = false;
      fallback = true;
      continue;
    } else if (retryable_status(res->status)) {
      last_error = "HTTP " + std::to_string(res->status);
      if (res->has_header("Retry-After")) {
        try {
          wait = std::chrono::seconds(std::stoll(res->get_header_value("Retry-After")));
        } catch (const std::exception&) {
        }
      }
    } else {
      throw ProtocolError("endpoint returned HTTP " + std::to_string(res->status) + ": " +
                          res->body.substr(0, 200));
    }

    if (retries >= config_.retry.max_retries) {
      throw TransportError("giving up after " + std::to_string(retries) + " retries: " +
                           last_error);
    }
    wait = std::min(std::max(wait, config_.retry.backoff_for(retries)), config_.retry.max_backoff);
    ++retries;
    std::this_thread::sleep_for(wait);
  }
}

DistractorBank regenerate_bank_text(const DistractorBank& bank, Backend& backend,
                                    const GenerationSettings& settings) {
  DistractorBank out;
  for (const auto& [id, entry] : bank.entries()) {
    BankEntry fresh = entry;
    for (auto& rep : fresh.reports) {
      MessageSequence msg;
      msg.system_text = "You write concise, clinically plausible radiology reports.";
      msg.parts.push_back(TextPart{
          "Write a " + std::string(to_string(rep.polarity)) + " " +
          std::string(to_string(rep.kind)) +
          " report with FINDINGS and IMPRESSION sections. Keep the tone of this draft:\n" +
          rep.report_text});
      const std::string key =
          backend.id() + "|" + id + "|bank|" + std::string(to_string(rep.kind));
      const DispatchRequest req{msg, nullptr, PromptVariant{}, key};
      RawResponse r = backend.complete(req, settings);
      if (trim(r.text).empty()) throw ProtocolError("empty regenerated report for " + key);
      rep.report_text = trim(r.text);
    }
    out.add(std::move(fresh));
  }
  return out;
}

}  // namespace ctxpress
