#pragma once

#include <string>
#include <vector>

#include "driftguard/model.hpp"

namespace driftguard {

// On-disk container: 8-byte magic, little-endian u32 header length, JSON
// header {kind, config, tensor manifest}, then raw little-endian float32
// payloads in manifest order. One format backs model, adapter and profile
// files; `kind` tells them apart.
struct TensorEntry {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

struct Container {
  std::string kind;         // "model" | "adapter" | "profile"
  std::string config_json;  // kind-specific JSON blob
  std::vector<TensorEntry> tensors;

  const TensorEntry& find(const std::string& name) const;
};

void write_container(const Container& c, const std::string& path);
Container read_container(const std::string& path, const std::string& expect_kind = "");

void save_model_checkpoint(const GuardModel& model, const std::string& path);
GuardModel load_model_checkpoint(const std::string& path);

// Adapter-only checkpoint; records the base fingerprint and refuses to load
// onto a mismatched base.
void save_adapter_checkpoint(const GuardModel& model, const std::string& path);
void load_adapter_checkpoint(GuardModel& model, const std::string& path);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace driftguard
