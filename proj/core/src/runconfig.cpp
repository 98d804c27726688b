#include "driftguard/runconfig.hpp"

#include <cstdlib>
#include <sstream>

namespace driftguard {

KvConfig KvConfig::parse(const std::string& text) {
  KvConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::string current;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        fail("config line " + std::to_string(line_no) + ": unterminated section");
      current = trim(t.substr(1, t.size() - 2));
      if (!cfg.find_section(current)) cfg.sections_.push_back({current, {}});
      continue;
    }
    auto eq = t.find('=');
    if (eq == std::string::npos)
      fail("config line " + std::to_string(line_no) + ": expected key = value");
    cfg.set(current, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

KvConfig KvConfig::load(const std::string& path) {
  return parse(read_text_file(path));
}

std::string KvConfig::dump() const {
  std::ostringstream out;
  for (const auto& s : sections_) {
    if (!s.name.empty()) out << "[" << s.name << "]\n";
    for (const auto& [k, v] : s.entries) out << k << " = " << v << "\n";
    out << "\n";
  }
  return out.str();
}

KvConfig::Section* KvConfig::find_section(const std::string& name) {
  for (auto& s : sections_)
    if (s.name == name) return &s;
  return nullptr;
}

const KvConfig::Section* KvConfig::find_section(const std::string& name) const {
  for (const auto& s : sections_)
    if (s.name == name) return &s;
  return nullptr;
}

bool KvConfig::has(const std::string& section, const std::string& key) const {
  const Section* s = find_section(section);
  if (!s) return false;
  for (const auto& [k, v] : s->entries)
    if (k == key) return true;
  return false;
}

std::string KvConfig::get(const std::string& section, const std::string& key,
                          const std::string& fallback) const {
  const Section* s = find_section(section);
  if (!s) return fallback;
  for (const auto& [k, v] : s->entries)
    if (k == key) return v;
  return fallback;
}

double KvConfig::get_double(const std::string& section, const std::string& key,
                            double fallback) const {
  const std::string v = get(section, key);
  if (v.empty()) return fallback;
  try {
    return std::stod(v);
  } catch (...) {
    fail("config value " + section + "." + key + " is not a number: " + v);
  }
}

int64_t KvConfig::get_int(const std::string& section, const std::string& key,
                          int64_t fallback) const {
  const std::string v = get(section, key);
  if (v.empty()) return fallback;
  try {
    return std::stoll(v);
  } catch (...) {
    fail("config value " + section + "." + key + " is not an integer: " + v);
  }
}

uint64_t KvConfig::get_uint(const std::string& section, const std::string& key,
                            uint64_t fallback) const {
  const std::string v = get(section, key);
  if (v.empty()) return fallback;
  try {
    return std::stoull(v);
  } catch (...) {
    fail("config value " + section + "." + key + " is not an integer: " + v);
  }
}

bool KvConfig::get_bool(const std::string& section, const std::string& key,
                        bool fallback) const {
  const std::string v = get(section, key);
  if (v.empty()) return fallback;
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail("config value " + section + "." + key + " is not a boolean: " + v);
}

void KvConfig::set(const std::string& section, const std::string& key,
                   const std::string& value) {
  Section* s = find_section(section);
  if (!s) {
    sections_.push_back({section, {}});
    s = &sections_.back();
  }
  for (auto& [k, v] : s->entries)
    if (k == key) {
      v = value;
      return;
    }
  s->entries.emplace_back(key, value);
}

void KvConfig::set_double(const std::string& section, const std::string& key, double v) {
  set(section, key, format_double(v));
}
void KvConfig::set_int(const std::string& section, const std::string& key, int64_t v) {
  set(section, key, std::to_string(v));
}
void KvConfig::set_uint(const std::string& section, const std::string& key, uint64_t v) {
  set(section, key, std::to_string(v));
}
void KvConfig::set_bool(const std::string& section, const std::string& key, bool v) {
  set(section, key, v ? "true" : "false");
}

void RunConfig::apply(const KvConfig& kv) {
  assets_dir = kv.get("paths", "assets", assets_dir);
  out_dir = kv.get("paths", "out", out_dir);

  model.n_layers = static_cast<int>(kv.get_int("model", "n_layers", model.n_layers));
  model.d_model = static_cast<int>(kv.get_int("model", "d_model", model.d_model));
  model.n_heads = static_cast<int>(kv.get_int("model", "n_heads", model.n_heads));
  model.d_ff = static_cast<int>(kv.get_int("model", "d_ff", model.d_ff));
  model.vocab_size = static_cast<int>(kv.get_int("model", "vocab_size", model.vocab_size));
  model.max_len = static_cast<int>(kv.get_int("model", "max_len", model.max_len));

  loss.temperature = kv.get_double("loss", "temperature", loss.temperature);
  loss.m_in = kv.get_double("loss", "m_in", loss.m_in);
  loss.m_out = kv.get_double("loss", "m_out", loss.m_out);
  loss.lambda = kv.get_double("loss", "lambda", loss.lambda);

  train.lr = kv.get_double("train", "lr", train.lr);
  train.batch_size = static_cast<int>(kv.get_int("train", "batch_size", train.batch_size));
  train.max_len = static_cast<int>(kv.get_int("train", "max_len", train.max_len));
  train.epochs = static_cast<int>(kv.get_int("train", "epochs", train.epochs));
  train.grad_clip = kv.get_double("train", "grad_clip", train.grad_clip);
  train.weight_decay = kv.get_double("train", "weight_decay", train.weight_decay);
  train.dropout = kv.get_double("train", "dropout", train.dropout);

  if (kv.has("cl", "update_mode"))
    cl.update_mode = update_mode_from_string(kv.get("cl", "update_mode"));
  cl.lr = kv.get_double("cl", "lr", cl.lr);
  cl.max_len = static_cast<int>(kv.get_int("cl", "max_len", cl.max_len));
  if (kv.has("cl", "early_stop")) {
    const double v = kv.get_double("cl", "early_stop", 0.0);
    cl.early_stop = v > 0.0 ? std::optional<double>(v) : std::nullopt;
  }
  if (kv.has("cl", "reinit"))
    cl.reinit = reinit_mode_from_string(kv.get("cl", "reinit"));
  cl.retention_every =
      static_cast<int>(kv.get_int("cl", "retention_every", cl.retention_every));
  cl.updates_enabled = kv.get_bool("cl", "updates_enabled", cl.updates_enabled);

  detect_method = kv.get("detect", "method", detect_method);
  if (kv.has("detect", "quantiles")) {
    quantiles.clear();
    std::istringstream qs(kv.get("detect", "quantiles"));
    std::string item;
    while (std::getline(qs, item, ','))
      if (!trim(item).empty()) quantiles.push_back(std::stod(trim(item)));
  }

  host = kv.get("serve", "host", host);
  port = static_cast<int>(kv.get_int("serve", "port", port));
  state_dir = kv.get("serve", "state", state_dir);
  serve_quantile = kv.get_double("serve", "quantile", serve_quantile);
  review_safe_flagged = kv.get_bool("serve", "review_safe_flagged", review_safe_flagged);

  if (kv.has("run", "seed")) seed = kv.get_uint("run", "seed", 0);
}

void RunConfig::apply_env() {
  if (const char* v = std::getenv("DRIFTGUARD_HOST"); v && *v) host = v;
  if (const char* v = std::getenv("DRIFTGUARD_PORT"); v && *v) port = std::atoi(v);
  if (const char* v = std::getenv("DRIFTGUARD_STATE"); v && *v) state_dir = v;
  if (const char* v = std::getenv("DRIFTGUARD_ASSETS"); v && *v) assets_dir = v;
}

KvConfig RunConfig::to_kv() const {
  KvConfig kv;
  kv.set("paths", "assets", assets_dir);
  kv.set("paths", "out", out_dir);
  if (seed) kv.set_uint("run", "seed", *seed);

  kv.set_int("model", "n_layers", model.n_layers);
  kv.set_int("model", "d_model", model.d_model);
  kv.set_int("model", "n_heads", model.n_heads);
  kv.set_int("model", "d_ff", model.d_ff);
  kv.set_int("model", "vocab_size", model.vocab_size);
  kv.set_int("model", "max_len", model.max_len);

  kv.set_double("loss", "temperature", loss.temperature);
  kv.set_double("loss", "m_in", loss.m_in);
  kv.set_double("loss", "m_out", loss.m_out);
  kv.set_double("loss", "lambda", loss.lambda);

  kv.set_double("train", "lr", train.lr);
  kv.set_int("train", "batch_size", train.batch_size);
  kv.set_int("train", "max_len", train.max_len);
  kv.set_int("train", "epochs", train.epochs);
  kv.set_double("train", "grad_clip", train.grad_clip);
  kv.set_double("train", "weight_decay", train.weight_decay);
  kv.set_double("train", "dropout", train.dropout);

  kv.set("cl", "update_mode", to_string(cl.update_mode));
  kv.set_double("cl", "lr", cl.lr);
  kv.set_int("cl", "max_len", cl.max_len);
  kv.set_double("cl", "early_stop", cl.early_stop ? *cl.early_stop : 0.0);
  kv.set("cl", "reinit", to_string(cl.reinit));
  kv.set_int("cl", "retention_every", cl.retention_every);
  kv.set_bool("cl", "updates_enabled", cl.updates_enabled);

  kv.set("detect", "method", detect_method);
  std::ostringstream qs;
  for (size_t i = 0; i < quantiles.size(); ++i)
    qs << (i ? "," : "") << format_double(quantiles[i], 2);
  kv.set("detect", "quantiles", qs.str());

  kv.set("serve", "host", host);
  kv.set_int("serve", "port", port);
  kv.set("serve", "state", state_dir);
  kv.set_double("serve", "quantile", serve_quantile);
  kv.set_bool("serve", "review_safe_flagged", review_safe_flagged);
  return kv;
}

void RunConfig::write_copy(const std::string& path) const {
  write_text_file(path, to_kv().dump());
}

uint64_t RunConfig::require_seed() const {
  if (!seed) fail("a seed is required (--seed or [run] seed in the config file)");
  return *seed;
}

}  // namespace driftguard
