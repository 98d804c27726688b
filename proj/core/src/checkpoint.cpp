#include "driftguard/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace driftguard {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian; big-endian hosts are unsupported");

namespace {
constexpr char kMagic[8] = {'D', 'G', 'C', 'K', 'P', 'T', '0', '1'};
}

const TensorEntry& Container::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  fail("checkpoint is missing tensor '" + name + "'");
}

void write_container(const Container& c, const std::string& path) {
  json header;
  header["kind"] = c.kind;
  header["config"] = c.config_json.empty() ? json::object()
                                           : json::parse(c.config_json);
  header["tensors"] = json::array();
  for (const auto& t : c.tensors)
    header["tensors"].push_back({{"name", t.name}, {"shape", t.shape}});
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  const uint32_t hlen = static_cast<uint32_t>(hs.size());
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& t : c.tensors)
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  if (!out) fail("checkpoint write failed: " + path);
}

Container read_container(const std::string& path, const std::string& expect_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open checkpoint: " + path);
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, 8) != 0)
    fail("checkpoint format/version mismatch: " + path);
  uint32_t hlen = 0;
  if (!in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen)))
    fail("truncated checkpoint header: " + path);
  std::string hs(hlen, '\0');
  if (!in.read(hs.data(), hlen)) fail("truncated checkpoint header: " + path);
  json header = json::parse(hs, nullptr, false);
  if (header.is_discarded()) fail("corrupt checkpoint header: " + path);

  Container c;
  c.kind = header.at("kind").get<std::string>();
  if (!expect_kind.empty() && c.kind != expect_kind)
    fail("checkpoint kind '" + c.kind + "' does not match expected '" +
         expect_kind + "': " + path);
  c.config_json = header.at("config").dump();
  for (const auto& m : header.at("tensors")) {
    TensorEntry t;
    t.name = m.at("name").get<std::string>();
    t.shape = m.at("shape").get<std::vector<int>>();
    size_t n = 1;
    for (int d : t.shape) {
      if (d <= 0) fail("corrupt tensor shape in checkpoint: " + path);
      n *= static_cast<size_t>(d);
    }
    t.data.resize(n);
    if (!in.read(reinterpret_cast<char*>(t.data.data()),
                 static_cast<std::streamsize>(n * sizeof(float))))
      fail("truncated checkpoint payload for tensor '" + t.name + "': " + path);
    c.tensors.push_back(std::move(t));
  }
  return c;
}

std::string model_config_to_json(const ModelConfig& cfg) {
  json j;
  j["n_layers"] = cfg.n_layers;
  j["d_model"] = cfg.d_model;
  j["n_heads"] = cfg.n_heads;
  j["d_ff"] = cfg.d_ff;
  j["vocab_size"] = cfg.vocab_size;
  j["max_len"] = cfg.max_len;
  j["seed"] = cfg.seed;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  json j = json::parse(text);
  ModelConfig cfg;
  cfg.n_layers = j.at("n_layers").get<int>();
  cfg.d_model = j.at("d_model").get<int>();
  cfg.n_heads = j.at("n_heads").get<int>();
  cfg.d_ff = j.at("d_ff").get<int>();
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.max_len = j.at("max_len").get<int>();
  cfg.seed = j.at("seed").get<uint64_t>();
  return cfg;
}

void save_model_checkpoint(const GuardModel& model, const std::string& path) {
  Container c;
  c.kind = "model";
  c.config_json = model_config_to_json(model.config());
  auto& params = const_cast<GuardModel&>(model).params();
  visit_params(params, [&](const std::string& name, Tensor& t) {
    c.tensors.push_back({name, t.shape(), t.values()});
  });
  write_container(c, path);
}

GuardModel load_model_checkpoint(const std::string& path) {
  Container c = read_container(path, "model");
  ModelConfig cfg = model_config_from_json(c.config_json);
  GuardModel model = GuardModel::init(cfg);
  size_t idx = 0;
  visit_params(model.params(), [&](const std::string& name, Tensor& t) {
    if (idx >= c.tensors.size()) fail("checkpoint has too few tensors: " + path);
    const TensorEntry& e = c.tensors[idx++];
    if (e.name != name || e.shape != t.shape())
      fail("checkpoint tensor mismatch at '" + name + "': " + path);
    t.values() = e.data;
  });
  if (idx != c.tensors.size()) fail("checkpoint has extra tensors: " + path);
  return model;
}

namespace {

std::string lora_config_json(const GuardModel& model) {
  const LoraConfig& l = model.lora_config();
  json j;
  j["rank"] = l.rank;
  j["alpha"] = l.alpha;
  j["dropout"] = l.dropout;
  j["target_embedding"] = l.target_embedding;
  j["target_attention"] = l.target_attention;
  j["target_ffn"] = l.target_ffn;
  json root;
  root["lora"] = j;
  root["base_fingerprint"] = to_hex(model.base_fingerprint());
  root["model_config"] = json::parse(model_config_to_json(model.config()));
  return root.dump();
}

}  // namespace

void save_adapter_checkpoint(const GuardModel& model, const std::string& path) {
  if (!model.has_lora()) fail("save_adapter_checkpoint: no adapters attached");
  Container c;
  c.kind = "adapter";
  c.config_json = lora_config_json(model);
  auto& lora = const_cast<GuardModel&>(model).lora();
  visit_lora(lora, [&](const std::string& name, Tensor& t) {
    c.tensors.push_back({name, t.shape(), t.values()});
  });
  write_container(c, path);
}

void load_adapter_checkpoint(GuardModel& model, const std::string& path) {
  Container c = read_container(path, "adapter");
  json root = json::parse(c.config_json);
  const std::string want = root.at("base_fingerprint").get<std::string>();
  const std::string have = to_hex(model.base_fingerprint());
  if (want != have)
    fail("adapter checkpoint base fingerprint " + want +
         " does not match model base " + have);
  json l = root.at("lora");
  LoraConfig lcfg;
  lcfg.rank = l.at("rank").get<int>();
  lcfg.alpha = l.at("alpha").get<double>();
  lcfg.dropout = l.at("dropout").get<double>();
  lcfg.target_embedding = l.at("target_embedding").get<bool>();
  lcfg.target_attention = l.at("target_attention").get<bool>();
  lcfg.target_ffn = l.at("target_ffn").get<bool>();
  if (!model.has_lora()) model.attach_lora(lcfg);
  size_t idx = 0;
  visit_lora(model.lora(), [&](const std::string& name, Tensor& t) {
    if (idx >= c.tensors.size()) fail("adapter checkpoint has too few tensors");
    const TensorEntry& e = c.tensors[idx++];
    if (e.name != name || e.shape != t.shape())
      fail("adapter tensor mismatch at '" + name + "': " + path);
    t.values() = e.data;
  });
  if (idx != c.tensors.size()) fail("adapter checkpoint has extra tensors: " + path);
}

}  // namespace driftguard
