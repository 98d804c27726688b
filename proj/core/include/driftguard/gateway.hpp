#pragma once

#include <memory>
#include <string>

#include "driftguard/continual.hpp"
#include "driftguard/model.hpp"
#include "driftguard/ood.hpp"

namespace driftguard {

struct GatewayConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 binds an ephemeral port (tests)
  std::string model_path;
  std::string vocab_path;
  std::string profile_path;
  std::string state_dir = "gateway_state";  // queue/state/adapter files
  double quantile = 0.99;
  CLConfig cl;       // hyperparameters for operator-triggered updates
  LoraConfig lora;   // attached when cl.update_mode == lora
  // Route OOD-flagged prompts that the classifier still labels safe to a
  // review file instead of the adapt queue.
  bool review_safe_flagged = false;
};

struct GatewayStats {
  uint64_t requests = 0;
  uint64_t blocked = 0;
  uint64_t ood_flagged = 0;
  uint64_t adapt_steps = 0;
};

// JSON/HTTP moderation service over one trained guardrail. Readers classify
// against an immutable snapshot; adaptation is a single serialized writer
// that swaps in a new snapshot atomically. Queue and version state live on
// disk and survive restarts.
class GatewayService {
 public:
  explicit GatewayService(GatewayConfig cfg);
  ~GatewayService();
  GatewayService(const GatewayService&) = delete;
  GatewayService& operator=(const GatewayService&) = delete;

  // Binds and serves on a background thread until stop().
  void start();
  void stop();
  int port() const;

  // In-process handlers (the HTTP layer is a thin wrapper over these).
  std::string handle_classify(const std::string& body_json, int& http_status);
  std::string handle_adapt(const std::string& body_json, int& http_status);
  std::string stats_json() const;
  std::string health_json() const;

  size_t queue_length() const;
  std::string model_version() const;
  GatewayStats stats() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace driftguard
