#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "driftguard/continual.hpp"
#include "driftguard/model.hpp"
#include "driftguard/ood.hpp"
#include "driftguard/train.hpp"

namespace driftguard {

// TOML-style "[section]" + "key = value" configuration with deterministic
// round-tripping. Values are bare strings; typed getters parse on access.
class KvConfig {
 public:
  static KvConfig parse(const std::string& text);
  static KvConfig load(const std::string& path);
  std::string dump() const;

  bool has(const std::string& section, const std::string& key) const;
  std::string get(const std::string& section, const std::string& key,
                  const std::string& fallback = "") const;
  double get_double(const std::string& section, const std::string& key,
                    double fallback) const;
  int64_t get_int(const std::string& section, const std::string& key,
                  int64_t fallback) const;
  uint64_t get_uint(const std::string& section, const std::string& key,
                    uint64_t fallback) const;
  bool get_bool(const std::string& section, const std::string& key,
                bool fallback) const;

  void set(const std::string& section, const std::string& key,
           const std::string& value);
  void set_double(const std::string& section, const std::string& key, double v);
  void set_int(const std::string& section, const std::string& key, int64_t v);
  void set_uint(const std::string& section, const std::string& key, uint64_t v);
  void set_bool(const std::string& section, const std::string& key, bool v);

 private:
  struct Section {
    std::string name;
    std::vector<std::pair<std::string, std::string>> entries;
  };
  std::vector<Section> sections_;
  Section* find_section(const std::string& name);
  const Section* find_section(const std::string& name) const;
};

// Resolved configuration of one CLI run. Precedence: defaults < config file
// < environment (serve paths only) < command-line flags.
struct RunConfig {
  // paths
  std::string assets_dir;
  std::string out_dir = "out";

  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
  CLConfig cl;

  // detection
  std::string detect_method = "mahalanobis";
  std::vector<double> quantiles{0.90, 0.95, 0.99};

  // gateway
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string state_dir = "gateway_state";
  double serve_quantile = 0.99;
  bool review_safe_flagged = false;

  std::optional<uint64_t> seed;  // mandatory for reproducible subcommands

  void apply(const KvConfig& kv);
  void apply_env();  // DRIFTGUARD_HOST / DRIFTGUARD_PORT / DRIFTGUARD_STATE
  KvConfig to_kv() const;
  void write_copy(const std::string& path) const;

  uint64_t require_seed() const;
};

}  // namespace driftguard
