#include "driftguard/gateway.hpp"

#include <atomic>
#include <deque>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <shared_mutex>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "driftguard/checkpoint.hpp"

namespace driftguard {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct QueueEntry {
  std::string text;
  double ood_score = 0.0;
  std::string label;
  uint64_t seq = 0;
};

}  // namespace

struct GatewayService::Impl {
  GatewayConfig cfg;
  Vocabulary vocab;
  GaussianProfile profile;
  OODThreshold threshold;

  // Immutable serving snapshot; swapped wholesale by the adapt writer.
  struct Snapshot {
    GuardModel model;
    std::string version;
  };
  mutable std::shared_mutex snapshot_mu;
  std::shared_ptr<const Snapshot> snapshot;

  // Writer-side state: the live model plus optimizer, serialized by adapt_mu.
  std::mutex adapt_mu;
  std::unique_ptr<ContinualLearner> learner;
  uint64_t version_counter = 0;

  // Queue state.
  mutable std::mutex queue_mu;
  std::deque<QueueEntry> queue;
  uint64_t queue_appended = 0;  // total entries ever written to the log
  uint64_t queue_consumed = 0;
  std::ofstream queue_log;

  std::atomic<uint64_t> requests{0};
  std::atomic<uint64_t> blocked{0};
  std::atomic<uint64_t> ood_flagged{0};
  std::atomic<uint64_t> adapt_steps{0};

  httplib::Server server;
  std::thread server_thread;
  int bound_port = 0;

  std::string queue_path() const { return cfg.state_dir + "/queue.jsonl"; }
  std::string review_path() const { return cfg.state_dir + "/review.jsonl"; }
  std::string state_path() const { return cfg.state_dir + "/state.json"; }
  std::string adapter_path(uint64_t version) const {
    return cfg.state_dir + "/adapter_v" + std::to_string(version) + ".ckpt";
  }
  std::string full_model_path(uint64_t version) const {
    return cfg.state_dir + "/model_v" + std::to_string(version) + ".ckpt";
  }

  std::shared_ptr<const Snapshot> current() const {
    std::shared_lock lock(snapshot_mu);
    return snapshot;
  }

  void publish(GuardModel model, uint64_t version) {
    auto snap = std::make_shared<Snapshot>();
    snap->model = std::move(model);
    snap->version = "v" + std::to_string(version);
    std::unique_lock lock(snapshot_mu);
    snapshot = std::move(snap);
  }

  void persist_state() {
    json j;
    j["version"] = version_counter;
    j["consumed"] = queue_consumed;
    j["adapt_steps"] = adapt_steps.load();
    write_text_file(state_path(), j.dump() + "\n");
  }

  void recover_state() {
    fs::create_directories(cfg.state_dir);
    if (fs::exists(state_path())) {
      json j = json::parse(read_text_file(state_path()));
      version_counter = j.value("version", 0ULL);
      queue_consumed = j.value("consumed", 0ULL);
      adapt_steps = j.value("adapt_steps", 0ULL);
    }
    if (fs::exists(queue_path())) {
      uint64_t seq = 0;
      for (const auto& line : read_lines(queue_path())) {
        if (trim(line).empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) fail("corrupt queue log: " + queue_path());
        ++seq;
        if (seq <= queue_consumed) continue;  // already trained on
        QueueEntry e;
        e.text = j.at("text").get<std::string>();
        e.ood_score = j.value("ood_score", 0.0);
        e.label = j.value("label", "unsafe");
        e.seq = seq;
        queue.push_back(std::move(e));
      }
      queue_appended = seq;
    }
    queue_log.open(queue_path(), std::ios::binary | std::ios::app);
    if (!queue_log) fail("cannot open queue log: " + queue_path());
  }
};

GatewayService::GatewayService(GatewayConfig cfg) : impl_(std::make_unique<Impl>()) {
  impl_->cfg = std::move(cfg);
  auto& c = impl_->cfg;
  if (c.model_path.empty() || c.vocab_path.empty() || c.profile_path.empty())
    fail("gateway config requires model, vocab and profile paths");

  impl_->vocab = Vocabulary::load(c.vocab_path);
  GuardModel model = load_model_checkpoint(c.model_path);
  ProfileBundle bundle = load_profile(c.profile_path);
  impl_->profile = std::move(bundle.profile);
  impl_->threshold = bundle.threshold_for(c.quantile);

  impl_->recover_state();

  if (c.cl.update_mode == UpdateMode::lora) {
    // Reload the newest adapter when one was persisted, else attach fresh.
    const std::string latest = impl_->adapter_path(impl_->version_counter);
    if (impl_->version_counter > 0 && fs::exists(latest)) {
      load_adapter_checkpoint(model, latest);
    } else {
      model.attach_lora(c.lora);
    }
  } else if (impl_->version_counter > 0 &&
             fs::exists(impl_->full_model_path(impl_->version_counter))) {
    model = load_model_checkpoint(impl_->full_model_path(impl_->version_counter));
  }

  impl_->learner =
      std::make_unique<ContinualLearner>(model.clone(), impl_->vocab, c.cl);
  impl_->publish(std::move(model), impl_->version_counter);
}

GatewayService::~GatewayService() { stop(); }

void GatewayService::start() {
  auto& server = impl_->server;

  server.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(health_json(), "application/json");
  });
  server.Get("/v1/stats", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(stats_json(), "application/json");
  });
  server.Post("/v1/classify", [this](const httplib::Request& req, httplib::Response& res) {
    int status = 200;
    std::string body = handle_classify(req.body, status);
    res.status = status;
    res.set_content(body, "application/json");
  });
  server.Post("/v1/adapt", [this](const httplib::Request& req, httplib::Response& res) {
    int status = 200;
    std::string body = handle_adapt(req.body, status);
    res.status = status;
    res.set_content(body, "application/json");
  });

  if (impl_->cfg.port == 0) {
    impl_->bound_port = server.bind_to_any_port(impl_->cfg.host);
    if (impl_->bound_port <= 0) fail("gateway: cannot bind to an ephemeral port");
  } else {
    if (!server.bind_to_port(impl_->cfg.host, impl_->cfg.port))
      fail("gateway: cannot bind " + impl_->cfg.host + ":" +
           std::to_string(impl_->cfg.port));
    impl_->bound_port = impl_->cfg.port;
  }
  impl_->server_thread = std::thread([this] { impl_->server.listen_after_bind(); });
  server.wait_until_ready();
}

void GatewayService::stop() {
  if (impl_->server_thread.joinable()) {
    impl_->server.stop();
    impl_->server_thread.join();
  }
}

int GatewayService::port() const { return impl_->bound_port; }

std::string GatewayService::handle_classify(const std::string& body_json,
                                            int& http_status) {
  impl_->requests.fetch_add(1);
  json req = json::parse(body_json, nullptr, false);
  if (req.is_discarded() || !req.is_object() || !req.contains("text") ||
      !req["text"].is_string() || trim(req["text"].get<std::string>()).empty()) {
    http_status = 400;
    return json{{"error", "body must be a JSON object with a non-empty \"text\""}}.dump();
  }
  const std::string text = req["text"].get<std::string>();

  auto snap = impl_->current();
  TokenSequence seq =
      encode(text, impl_->vocab, static_cast<size_t>(snap->model.config().max_len));
  auto logits = snap->model.logits(seq);
  const Label label = logits[kUnsafeIndex] > logits[kSafeIndex] ? Label::unsafe : Label::safe;
  auto feature = snap->model.penultimate_feature(seq);
  const double score = mahalanobis_score(impl_->profile, feature).d_min;
  const bool ood = score > impl_->threshold.tau;

  if (label == Label::unsafe) impl_->blocked.fetch_add(1);
  if (ood) {
    impl_->ood_flagged.fetch_add(1);
    json entry;
    entry["text"] = text;
    entry["ood_score"] = score;
    entry["label"] = to_string(label);
    if (impl_->cfg.review_safe_flagged && label == Label::safe) {
      std::lock_guard lock(impl_->queue_mu);
      std::ofstream review(impl_->review_path(), std::ios::binary | std::ios::app);
      review << entry.dump() << "\n";
    } else {
      std::lock_guard lock(impl_->queue_mu);
      QueueEntry e;
      e.text = text;
      e.ood_score = score;
      e.label = to_string(label);
      e.seq = ++impl_->queue_appended;
      impl_->queue.push_back(e);
      impl_->queue_log << entry.dump() << "\n";
      impl_->queue_log.flush();
    }
  }

  json res;
  res["label"] = to_string(label);
  res["blocked"] = label == Label::unsafe;
  res["ood"] = ood;
  res["ood_score"] = score;
  res["logits"] = {logits[0], logits[1]};
  res["model_version"] = snap->version;
  res["truncated"] = seq.truncated;
  http_status = 200;
  return res.dump();
}

std::string GatewayService::handle_adapt(const std::string& body_json,
                                         int& http_status) {
  std::lock_guard adapt_lock(impl_->adapt_mu);

  size_t n = 0;
  {
    json req = body_json.empty() ? json::object() : json::parse(body_json, nullptr, false);
    if (req.is_discarded()) {
      http_status = 400;
      return json{{"error", "invalid JSON body"}}.dump();
    }
    std::lock_guard lock(impl_->queue_mu);
    const size_t available = impl_->queue.size();
    if (available == 0) {
      http_status = 409;
      return json{{"error", "adapt queue is empty"}}.dump();
    }
    n = req.contains("n") ? req["n"].get<size_t>() : available;
    n = std::min(n, available);
  }

  // Train on the popped entries against the writer model, then publish.
  size_t updated = 0;
  for (size_t i = 0; i < n; ++i) {
    QueueEntry entry;
    {
      std::lock_guard lock(impl_->queue_mu);
      if (impl_->queue.empty()) break;
      entry = impl_->queue.front();
      impl_->queue.pop_front();
      impl_->queue_consumed = entry.seq;
    }
    JailbreakPrompt jb;
    jb.text = entry.text;
    impl_->learner->step_update(jb);
    impl_->adapt_steps.fetch_add(1);
    ++updated;
  }

  ++impl_->version_counter;
  if (impl_->cfg.cl.update_mode == UpdateMode::lora)
    save_adapter_checkpoint(impl_->learner->model(),
                            impl_->adapter_path(impl_->version_counter));
  else
    save_model_checkpoint(impl_->learner->model(),
                          impl_->full_model_path(impl_->version_counter));
  impl_->persist_state();
  impl_->publish(impl_->learner->model().clone(), impl_->version_counter);

  json res;
  res["updated"] = updated;
  res["model_version"] = model_version();
  res["queue_length"] = queue_length();
  http_status = 200;
  return res.dump();
}

std::string GatewayService::stats_json() const {
  json j;
  j["requests"] = impl_->requests.load();
  j["blocked"] = impl_->blocked.load();
  j["ood_flagged"] = impl_->ood_flagged.load();
  j["adapt_steps"] = impl_->adapt_steps.load();
  j["queue_length"] = queue_length();
  j["model_version"] = model_version();
  return j.dump();
}

std::string GatewayService::health_json() const {
  json j;
  j["status"] = "ok";
  j["model_version"] = model_version();
  return j.dump();
}

size_t GatewayService::queue_length() const {
  std::lock_guard lock(impl_->queue_mu);
  return impl_->queue.size();
}

std::string GatewayService::model_version() const {
  return impl_->current()->version;
}

GatewayStats GatewayService::stats() const {
  GatewayStats s;
  s.requests = impl_->requests.load();
  s.blocked = impl_->blocked.load();
  s.ood_flagged = impl_->ood_flagged.load();
  s.adapt_steps = impl_->adapt_steps.load();
  return s;
}

}  // namespace driftguard
