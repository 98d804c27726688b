// driftguard — adaptive prompt-guardrail toolkit.
//
// Subcommands chain the library into three end-to-end experiments: OOD
// detection quality (detect-eval), continual adaptation replay (simulate),
// and retention analysis, plus a JSON/HTTP moderation service (serve).

#include <algorithm>
#include <atomic>
#include <csignal>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "driftguard/attacks.hpp"
#include "driftguard/checkpoint.hpp"
#include "driftguard/continual.hpp"
#include "driftguard/corpus.hpp"
#include "driftguard/gateway.hpp"
#include "driftguard/metrics.hpp"
#include "driftguard/ood.hpp"
#include "driftguard/report.hpp"
#include "driftguard/runconfig.hpp"
#include "driftguard/tokenizer.hpp"
#include "driftguard/train.hpp"

namespace fs = std::filesystem;
using namespace driftguard;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

class ConfigError : public Error {
 public:
  using Error::Error;
};

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError("missing required path: " + what);
  if (!fs::exists(path)) throw ConfigError(what + " not found: " + path);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create directory " + dir + ": " + ec.message());
}

std::vector<AttackKind> parse_kinds(const std::string& csv) {
  std::vector<AttackKind> kinds;
  if (csv == "all" || csv.empty()) return all_attack_kinds();
  std::istringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!trim(item).empty()) kinds.push_back(attack_kind_from_string(trim(item)));
  if (kinds.empty()) throw ConfigError("no attack kinds given");
  return kinds;
}

std::vector<double> parse_quantiles(const std::string& csv) {
  std::vector<double> qs;
  std::istringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!trim(item).empty()) qs.push_back(std::stod(trim(item)));
  if (qs.empty()) throw ConfigError("no quantiles given");
  return qs;
}

void finish_run(const RunConfig& rc, bool verbose) {
  ensure_dir(rc.out_dir);
  rc.write_copy(rc.out_dir + "/config.ini");
  if (verbose) std::cout << rc.to_kv().dump();
}

AttackForge make_forge(const RunConfig& rc) {
  AttackConfig acfg;
  const std::string lexicon = rc.assets_dir + "/zulu_lexicon.txt";
  if (fs::exists(lexicon)) acfg.zulu_lexicon_path = lexicon;
  return AttackForge(rc.assets_dir, acfg);
}

// ---- synth ------------------------------------------------------------------

int cmd_synth(const RunConfig& rc, size_t n_safe, size_t n_unsafe,
              const std::string& fractions_csv, bool verbose) {
  PhraseBanks banks = PhraseBanks::load(rc.assets_dir);
  LabeledCorpus pool = synth_corpus(banks, n_safe, n_unsafe, rc.require_seed());
  ensure_dir(rc.out_dir);
  save_corpus(pool, rc.out_dir + "/pool.jsonl");

  std::vector<double> fractions;
  std::vector<std::string> names;
  std::istringstream ss(fractions_csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto colon = item.find(':');
    if (colon == std::string::npos)
      throw ConfigError("bad --fractions entry (want name:fraction): " + item);
    names.push_back(trim(item.substr(0, colon)));
    fractions.push_back(std::stod(item.substr(colon + 1)));
  }
  auto parts = split_corpus(pool, fractions, rc.require_seed());
  for (size_t i = 0; i < parts.size(); ++i)
    save_corpus(parts[i], rc.out_dir + "/" + names[i] + ".jsonl");

  finish_run(rc, verbose);
  std::cout << "synth: wrote pool (" << pool.size() << " examples) and "
            << parts.size() << " splits under " << rc.out_dir << "\n";
  return kExitOk;
}

// ---- attack-gen ---------------------------------------------------------------

int cmd_attack_gen(const RunConfig& rc, const std::string& corpus_path,
                   const std::string& kinds_csv, size_t per_kind, size_t holdout,
                   bool transform_mode, size_t transform_count, bool validate_only,
                   bool verbose) {
  AttackForge forge = make_forge(rc);
  if (validate_only) {
    for (const auto& line : forge.validate_templates()) std::cout << line << "\n";
    return kExitOk;
  }
  require_file(corpus_path, "--corpus");
  LabeledCorpus corpus = load_corpus(corpus_path);
  std::vector<AttackKind> kinds = parse_kinds(kinds_csv);
  ensure_dir(rc.out_dir);

  if (transform_mode) {
    // Round-robin the kinds over the corpus's unsafe prompts.
    LabeledCorpus out("transformed");
    size_t made = 0;
    const auto unsafe_pool = corpus.with_label(Label::unsafe);
    if (unsafe_pool.empty()) throw ConfigError("corpus has no unsafe prompts");
    for (size_t i = 0; made < transform_count; ++i) {
      const auto& ex = unsafe_pool.at(i % unsafe_pool.size());
      AttackKind kind = kinds[made % kinds.size()];
      JailbreakPrompt jb = forge.apply_attack(ex.text, kind, ex.source_id);
      LabeledExample o;
      o.text = jb.text;
      o.label = Label::unsafe;
      o.dist = Dist::OOD;
      o.source_id = std::string(to_string(kind)) + ":" + ex.source_id;
      out.add(std::move(o));
      ++made;
    }
    save_corpus(out, rc.out_dir + "/aux.jsonl");
    finish_run(rc, verbose);
    std::cout << "attack-gen: wrote " << out.size() << " transformed prompts to "
              << rc.out_dir << "/aux.jsonl\n";
    return kExitOk;
  }

  auto waves = forge.build_attack_waves(corpus, kinds, per_kind, holdout,
                                        rc.require_seed());
  save_waves(waves, rc.out_dir + "/waves.jsonl");
  finish_run(rc, verbose);
  std::cout << "attack-gen: wrote " << waves.size() << " waves to " << rc.out_dir
            << "/waves.jsonl\n";
  return kExitOk;
}

// ---- train --------------------------------------------------------------------

int cmd_train(RunConfig& rc, const std::string& id_train_path,
              const std::string& ood_aux_path, const std::string& id_val_path,
              bool verbose) {
  require_file(id_train_path, "--id-train");
  require_file(id_val_path, "--id-val");
  if (rc.loss.lambda > 0.0) require_file(ood_aux_path, "--ood-aux");

  LabeledCorpus id_train = load_corpus(id_train_path);
  LabeledCorpus id_val = load_corpus(id_val_path);
  LabeledCorpus ood_aux =
      ood_aux_path.empty() ? LabeledCorpus("empty") : load_corpus(ood_aux_path);

  rc.model.seed = rc.require_seed();
  rc.train.seed = rc.require_seed();

  Vocabulary vocab = train_bpe(id_train, static_cast<size_t>(rc.model.vocab_size));
  GuardModel model = GuardModel::init(rc.model);
  TrainLog log = train_guardrail(model, vocab, id_train, ood_aux, rc.loss, rc.train,
                                 id_val);

  ensure_dir(rc.out_dir);
  vocab.save(rc.out_dir + "/vocab.json");
  save_model_checkpoint(model, rc.out_dir + "/model.ckpt");
  log.save_csv(rc.out_dir + "/train_log.csv");
  finish_run(rc, verbose);
  std::cout << "train: best epoch " << log.best_epoch << ", val loss "
            << format_double(log.epochs[static_cast<size_t>(log.best_epoch - 1)].val_total)
            << "; artifacts under " << rc.out_dir << "\n";
  return kExitOk;
}

// ---- calibrate ------------------------------------------------------------------

int cmd_calibrate(const RunConfig& rc, const std::string& model_path,
                  const std::string& vocab_path, const std::string& id_train_path,
                  bool verbose) {
  require_file(model_path, "--model");
  require_file(vocab_path, "--vocab");
  require_file(id_train_path, "--id-train");

  GuardModel model = load_model_checkpoint(model_path);
  Vocabulary vocab = Vocabulary::load(vocab_path);
  LabeledCorpus id_train = load_corpus(id_train_path);

  auto features = extract_features(model, vocab, id_train,
                                   static_cast<size_t>(model.config().max_len));
  std::vector<Label> labels;
  for (const auto& e : id_train.examples()) labels.push_back(e.label);

  ProfileBundle bundle;
  bundle.profile = fit_gaussian_profile(features, labels);
  std::vector<double> scores;
  scores.reserve(features.size());
  for (const auto& f : features)
    scores.push_back(mahalanobis_score(bundle.profile, f).d_min);
  for (double q : rc.quantiles)
    bundle.thresholds.push_back(calibrate_threshold(scores, q));

  ensure_dir(rc.out_dir);
  save_profile(bundle, rc.out_dir + "/profile.ckpt");
  finish_run(rc, verbose);
  std::cout << "calibrate: profile with " << bundle.thresholds.size()
            << " thresholds written to " << rc.out_dir << "/profile.ckpt\n";
  return kExitOk;
}

// ---- detect-eval ----------------------------------------------------------------

std::vector<TokenSequence> encode_corpus(const LabeledCorpus& corpus,
                                         const Vocabulary& vocab, size_t max_len) {
  std::vector<TokenSequence> out;
  out.reserve(corpus.size());
  for (const auto& e : corpus.examples()) out.push_back(encode(e.text, vocab, max_len));
  return out;
}

int cmd_detect_eval(RunConfig& rc, const std::string& model_path,
                    const std::string& vocab_path, const std::string& profile_path,
                    const std::string& id_train_path, const std::string& id_test_path,
                    const std::string& ood_waves_path, const std::string& methods_csv,
                    bool verbose) {
  require_file(model_path, "--model");
  require_file(vocab_path, "--vocab");
  require_file(profile_path, "--profile");
  require_file(id_train_path, "--id-train");
  require_file(id_test_path, "--id-test");
  require_file(ood_waves_path, "--ood-waves");

  GuardModel model = load_model_checkpoint(model_path);
  Vocabulary vocab = Vocabulary::load(vocab_path);
  ProfileBundle bundle = load_profile(profile_path);
  LabeledCorpus id_train = load_corpus(id_train_path);
  LabeledCorpus id_test = load_corpus(id_test_path);
  auto waves = load_waves(ood_waves_path);

  std::vector<OODMethod> methods;
  if (methods_csv == "all" || methods_csv.empty()) {
    methods = all_ood_methods();
  } else {
    std::istringstream ss(methods_csv);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!trim(item).empty()) methods.push_back(ood_method_from_string(trim(item)));
  }

  const size_t max_len = static_cast<size_t>(model.config().max_len);
  auto id_cal_seqs = encode_corpus(id_train, vocab, max_len);
  auto id_test_seqs = encode_corpus(id_test, vocab, max_len);
  std::vector<TokenSequence> ood_seqs;
  for (const auto& wave : waves) {
    for (const auto& jb : wave.holdout_set) ood_seqs.push_back(encode(jb.text, vocab, max_len));
    for (const auto& jb : wave.adapt_set) ood_seqs.push_back(encode(jb.text, vocab, max_len));
  }

  // Background model for the likelihood-ratio baseline: same architecture
  // trained on the ID corpus with shuffled labels, plain CE.
  GuardModel background;
  const bool needs_background =
      std::find(methods.begin(), methods.end(), OODMethod::likelihood_ratio) != methods.end();
  if (needs_background) {
    LabeledCorpus shuffled("background");
    std::vector<Label> labels;
    for (const auto& e : id_train.examples()) labels.push_back(e.label);
    Rng rng(derive_seed(rc.require_seed(), 0xb6));
    rng.shuffle(labels);
    size_t i = 0;
    for (const auto& e : id_train.examples()) {
      LabeledExample copy = e;
      copy.label = labels[i++];
      shuffled.add(std::move(copy));
    }
    ModelConfig bg_cfg = model.config();
    bg_cfg.seed = derive_seed(rc.require_seed(), 0xb61);
    background = GuardModel::init(bg_cfg);
    LossConfig bg_loss = rc.loss;
    bg_loss.lambda = 0.0;
    TrainConfig bg_train = rc.train;
    bg_train.seed = bg_cfg.seed;
    train_guardrail(background, vocab, shuffled, LabeledCorpus("none"), bg_loss,
                    bg_train, shuffled);
  }

  DetectorContext ctx;
  ctx.model = &model;
  ctx.profile = &bundle.profile;
  ctx.background = needs_background ? &background : nullptr;
  ctx.temperature = rc.loss.temperature;
  ctx.ensemble_seed = derive_seed(rc.require_seed(), 0xe5);

  std::vector<DetectionRow> rows;
  for (OODMethod method : methods) {
    std::vector<double> cal_scores;
    cal_scores.reserve(id_cal_seqs.size());
    for (const auto& seq : id_cal_seqs) cal_scores.push_back(ood_score(method, ctx, seq));
    std::vector<double> test_id_scores, test_ood_scores;
    for (const auto& seq : id_test_seqs) test_id_scores.push_back(ood_score(method, ctx, seq));
    for (const auto& seq : ood_seqs) test_ood_scores.push_back(ood_score(method, ctx, seq));

    for (double q : rc.quantiles) {
      OODThreshold tau = calibrate_for_method(method, cal_scores, q);
      std::vector<bool> flagged, truth;
      const bool low_tail = method == OODMethod::likelihood_ratio;
      for (double s : test_id_scores) {
        flagged.push_back(low_tail ? s < tau.tau : s > tau.tau);
        truth.push_back(false);
      }
      for (double s : test_ood_scores) {
        flagged.push_back(low_tail ? s < tau.tau : s > tau.tau);
        truth.push_back(true);
      }
      DetectionReport rep = ood_report(flagged, truth);
      rows.push_back({to_string(method), q, rep.precision, rep.recall, rep.f1});
    }
  }

  ensure_dir(rc.out_dir);
  emit_report({}, rows, rc.out_dir);
  finish_run(rc, verbose);
  std::cout << "detect-eval: " << rows.size() << " rows written to " << rc.out_dir
            << "/detection.csv\n";
  return kExitOk;
}

// ---- simulate -------------------------------------------------------------------

int cmd_simulate(RunConfig& rc, const std::string& model_path,
                 const std::string& vocab_path, const std::string& profile_path,
                 const std::string& waves_path, const std::string& retention_path,
                 bool baseline_no_cl, bool detect_filter, size_t holdout,
                 bool verbose) {
  require_file(model_path, "--model");
  require_file(vocab_path, "--vocab");
  require_file(waves_path, "--waves");
  require_file(retention_path, "--retention");
  if (detect_filter) require_file(profile_path, "--profile");

  GuardModel base = load_model_checkpoint(model_path);
  Vocabulary vocab = Vocabulary::load(vocab_path);
  auto waves = load_waves(waves_path);
  LabeledCorpus retention = load_corpus(retention_path);

  if (detect_filter) {
    ProfileBundle bundle = load_profile(profile_path);
    waves = filter_waves_by_detection(waves, base, vocab, bundle.profile,
                                      bundle.threshold_for(rc.serve_quantile), holdout);
  }

  rc.cl.seed = rc.require_seed();
  ensure_dir(rc.out_dir);

  std::vector<NamedTrace> named;
  auto run_mode = [&](const std::string& name, CLConfig cfg, bool attach) {
    GuardModel model = base.clone();
    if (attach) {
      LoraConfig lora;
      model.attach_lora(lora);
    }
    ContinualLearner learner(std::move(model), vocab, cfg);
    SequenceResult result = learner.run_sequence(waves, retention);
    for (size_t w = 0; w < result.traces.size(); ++w) {
      const auto& trace = result.traces[w];
      write_text_file(rc.out_dir + "/trace_" + name + "_" + to_string(trace.kind) + ".json",
                      wave_trace_to_json(trace));
      named.push_back({name, trace});
      if (cfg.updates_enabled) {
        const std::string ckpt = rc.out_dir + "/ckpt_" + name + "_wave" +
                                 std::to_string(w + 1) + ".ckpt";
        if (cfg.update_mode == UpdateMode::lora && learner.model().has_lora())
          save_adapter_checkpoint(learner.model(), ckpt);
        else
          save_model_checkpoint(learner.model(), ckpt);
      }
    }
    if (!result.retrospective_dsr.empty()) {
      std::ostringstream csv;
      csv << "wave,final_dsr,retrospective_dsr\n";
      for (size_t w = 0; w < result.traces.size(); ++w)
        csv << to_string(result.traces[w].kind) << ","
            << format_double(result.traces[w].final_dsr()) << ","
            << format_double(result.retrospective_dsr[w]) << "\n";
      write_text_file(rc.out_dir + "/dsr_matrix_" + name + ".csv", csv.str());
    }
  };

  run_mode(to_string(rc.cl.update_mode), rc.cl,
           rc.cl.update_mode == UpdateMode::lora);
  if (baseline_no_cl) {
    CLConfig no_cl = rc.cl;
    no_cl.updates_enabled = false;
    no_cl.early_stop.reset();
    run_mode("no_cl", no_cl, rc.cl.update_mode == UpdateMode::lora);
  }

  // Timing summary across waves.
  std::ostringstream timing;
  timing << "mode,wave,update_seconds_per_step,holdout_infer_seconds_per_sample,peak_memory_kb\n";
  for (const auto& nt : named)
    timing << nt.method << "," << to_string(nt.trace.kind) << ","
           << format_double(nt.trace.update_time.per_sample(), 6) << ","
           << format_double(nt.trace.holdout_infer_time.mean, 6) << ","
           << peak_memory_kb() << "\n";
  write_text_file(rc.out_dir + "/timing.csv", timing.str());

  emit_report(named, {}, rc.out_dir);
  finish_run(rc, verbose);
  std::cout << "simulate: " << named.size() << " wave traces written under "
            << rc.out_dir << "\n";
  return kExitOk;
}

// ---- report ---------------------------------------------------------------------

int cmd_report(const RunConfig& rc, const std::string& in_dir, bool verbose) {
  if (!fs::is_directory(in_dir)) throw ConfigError("--in is not a directory: " + in_dir);
  std::vector<NamedTrace> named;
  std::vector<std::string> trace_files;
  for (const auto& entry : fs::directory_iterator(in_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("trace_", 0) == 0 && entry.path().extension() == ".csv")
      trace_files.push_back(entry.path().string());
  }
  std::sort(trace_files.begin(), trace_files.end());
  for (const auto& path : trace_files) {
    const std::string stem = fs::path(path).stem().string();  // trace_<method>
    const std::string method = stem.substr(6);
    // Group rows by wave value; rebuild minimal traces for re-rendering.
    std::map<std::string, WaveTrace> by_wave;
    bool header = true;
    for (const auto& line : read_lines(path)) {
      if (header) {
        header = false;
        continue;
      }
      if (trim(line).empty()) continue;
      std::istringstream ls(line);
      std::string wave, step, pred, dsr_s, f1_s;
      std::getline(ls, wave, ',');
      std::getline(ls, step, ',');
      std::getline(ls, pred, ',');
      std::getline(ls, dsr_s, ',');
      std::getline(ls, f1_s, ',');
      WaveTrace& t = by_wave[wave];
      t.kind = attack_kind_from_string(wave);
      StepRecord rec;
      rec.step = std::stoi(step);
      rec.pre_update_pred = label_from_string(pred);
      rec.dsr = std::stod(dsr_s);
      rec.id_f1 = trim(f1_s).empty() ? std::nan("") : std::stod(f1_s);
      t.steps.push_back(rec);
    }
    for (auto& [wave, trace] : by_wave) {
      trace.initial_dsr = trace.steps.empty() ? 0.0 : trace.steps.front().dsr;
      named.push_back({method, trace});
    }
  }
  std::vector<DetectionRow> detection;
  if (fs::exists(in_dir + "/detection.csv"))
    detection = detection_rows_from_csv(read_text_file(in_dir + "/detection.csv"));

  auto written = emit_report(named, detection, rc.out_dir);
  finish_run(rc, verbose);
  std::cout << "report: " << written.size() << " files written under " << rc.out_dir
            << "\n";
  return kExitOk;
}

// ---- serve ----------------------------------------------------------------------

std::unique_ptr<GatewayService> g_service;
std::atomic<bool> g_stop_requested{false};

void handle_signal(int) { g_stop_requested = true; }

int cmd_serve(RunConfig& rc, const std::string& model_path,
              const std::string& vocab_path, const std::string& profile_path,
              bool verbose) {
  require_file(model_path, "--model");
  require_file(vocab_path, "--vocab");
  require_file(profile_path, "--profile");

  GatewayConfig gc;
  gc.host = rc.host;
  gc.port = rc.port;
  gc.model_path = model_path;
  gc.vocab_path = vocab_path;
  gc.profile_path = profile_path;
  gc.state_dir = rc.state_dir;
  gc.quantile = rc.serve_quantile;
  gc.cl = rc.cl;
  gc.review_safe_flagged = rc.review_safe_flagged;

  if (verbose) std::cout << rc.to_kv().dump();
  g_service = std::make_unique<GatewayService>(gc);
  g_service->start();
  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);
  std::cout << "serve: listening on " << gc.host << ":" << g_service->port()
            << " (model " << g_service->model_version() << ")\n";
  // start() returns immediately; block until a signal asks us to stop.
  while (!g_stop_requested)
    std::this_thread::sleep_for(std::chrono::milliseconds(200));
  g_service->stop();
  g_service.reset();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"driftguard: adaptive prompt guardrail with OOD detection and low-rank continual updates"};
  app.require_subcommand(1);

  std::string config_path;
  bool verbose = false;
  app.add_option("--config", config_path, "key = value config file ([section] headers)");
  app.add_flag("--verbose", verbose, "print the resolved configuration");

  RunConfig rc;
  rc.assets_dir = resolve_assets_dir();

  // Shared flags; CLI flags override config-file and environment values.
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--assets", rc.assets_dir, "assets directory");
    cmd->add_option("--out", rc.out_dir, "output directory");
    cmd->add_option("--seed", [&rc](const std::vector<std::string>& vals) {
      rc.seed = std::stoull(vals.at(0));
      return true;
    }, "master random seed (required for generative/training subcommands)");
  };

  // synth
  auto* synth = app.add_subcommand("synth", "generate synthetic labeled corpora");
  size_t n_safe = 200, n_unsafe = 200;
  std::string fractions = "id_train:0.30,id_val:0.10,id_test:0.10,origins:0.50";
  synth->add_option("--safe", n_safe, "number of safe prompts");
  synth->add_option("--unsafe", n_unsafe, "number of unsafe prompts");
  synth->add_option("--fractions", fractions, "name:fraction splits of the pool");
  add_common(synth);

  // attack-gen
  auto* attack = app.add_subcommand("attack-gen", "transform prompts into jailbreak waves");
  std::string ag_corpus, ag_kinds = "all";
  size_t per_kind = 105, holdout = 50, transform_count = 200;
  bool transform_mode = false, validate_templates = false;
  attack->add_option("--corpus", ag_corpus, "unsafe origin corpus (JSONL)");
  attack->add_option("--kinds", ag_kinds, "comma list of attack kinds or 'all'");
  attack->add_option("--per-kind", per_kind, "prompts per wave");
  attack->add_option("--holdout", holdout, "holdout size per wave");
  attack->add_flag("--transform", transform_mode, "emit a transformed corpus instead of waves");
  attack->add_option("--count", transform_count, "transformed prompt count (with --transform)");
  attack->add_flag("--validate-templates", validate_templates, "list and validate attack templates");
  add_common(attack);

  // train
  auto* train_cmd = app.add_subcommand("train", "train the OOD-aware guardrail classifier");
  std::string id_train_path, ood_aux_path, id_val_path;
  train_cmd->add_option("--id-train", id_train_path, "ID training corpus (JSONL)");
  train_cmd->add_option("--ood-aux", ood_aux_path, "auxiliary OOD corpus (JSONL)");
  train_cmd->add_option("--id-val", id_val_path, "ID validation corpus (JSONL)");
  train_cmd->add_option("--lambda", rc.loss.lambda, "blend weight of the OOD loss");
  train_cmd->add_option("--epochs", rc.train.epochs, "training epochs");
  train_cmd->add_option("--lr", rc.train.lr, "learning rate");
  train_cmd->add_option("--vocab-size", rc.model.vocab_size, "BPE vocabulary size");
  add_common(train_cmd);

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "fit the Gaussian profile and quantile thresholds");
  std::string model_path, vocab_path, profile_path;
  cal->add_option("--model", model_path, "model checkpoint");
  cal->add_option("--vocab", vocab_path, "vocabulary JSON");
  cal->add_option("--id-train", id_train_path, "ID training corpus (JSONL)");
  std::string quantiles_csv;
  cal->add_option("--quantiles", quantiles_csv, "comma list, default 0.90,0.95,0.99");
  add_common(cal);

  // detect-eval
  auto* de = app.add_subcommand("detect-eval", "score OOD detection methods (P/R/F1 per quantile)");
  std::string id_test_path, ood_waves_path, methods_csv = "all";
  de->add_option("--model", model_path, "model checkpoint");
  de->add_option("--vocab", vocab_path, "vocabulary JSON");
  de->add_option("--profile", profile_path, "profile checkpoint");
  de->add_option("--id-train", id_train_path, "ID calibration corpus (JSONL)");
  de->add_option("--id-test", id_test_path, "held-out ID corpus (JSONL)");
  de->add_option("--ood-waves", ood_waves_path, "attack waves file (JSONL)");
  de->add_option("--methods", methods_csv, "comma list of methods or 'all'");
  de->add_option("--quantiles", quantiles_csv, "comma list, default 0.90,0.95,0.99");
  add_common(de);

  // simulate
  auto* sim = app.add_subcommand("simulate", "inference-then-update replay over attack waves");
  std::string waves_path, retention_path, update_mode = "lora", reinit_mode = "per_wave";
  double early_stop = 0.0;
  bool baseline_no_cl = false, no_detect_filter = false;
  sim->add_option("--model", model_path, "model checkpoint");
  sim->add_option("--vocab", vocab_path, "vocabulary JSON");
  sim->add_option("--profile", profile_path, "profile checkpoint (for --detect-filter)");
  sim->add_option("--waves", waves_path, "attack waves file (JSONL)");
  sim->add_option("--retention", retention_path, "ID retention corpus (JSONL)");
  sim->add_option("--update", update_mode, "lora | full");
  sim->add_option("--mode", reinit_mode, "per_wave | sequential");
  sim->add_option("--early-stop", early_stop, "DSR target; 0 disables early stopping");
  sim->add_option("--retention-every", rc.cl.retention_every,
                  "evaluate retention every k steps (0 = final step only)");
  sim->add_flag("--baseline-no-cl", baseline_no_cl, "also replay without updates");
  sim->add_flag("--no-detect-filter", no_detect_filter,
                "skip filtering waves by OOD detection");
  sim->add_option("--holdout", holdout, "holdout size per wave after filtering");
  add_common(sim);

  // report
  auto* rep = app.add_subcommand("report", "re-render CSV traces into SVG charts");
  std::string in_dir;
  rep->add_option("--in", in_dir, "directory with trace_*.csv / detection.csv");
  add_common(rep);

  // serve
  auto* serve = app.add_subcommand("serve", "run the JSON/HTTP moderation gateway");
  serve->add_option("--model", model_path, "model checkpoint");
  serve->add_option("--vocab", vocab_path, "vocabulary JSON");
  serve->add_option("--profile", profile_path, "profile checkpoint");
  serve->add_option("--host", rc.host, "bind address");
  serve->add_option("--port", rc.port, "bind port");
  serve->add_option("--state", rc.state_dir, "state directory (queue, versions)");
  serve->add_option("--quantile", rc.serve_quantile, "detection threshold quantile");
  serve->add_flag("--review-safe-flagged", rc.review_safe_flagged,
                  "route flagged-but-safe prompts to a review file");
  add_common(serve);

  try {
    // Config file and environment are applied before flag parsing so flags
    // win; --config is pre-scanned because its value is needed first.
    for (int i = 1; i < argc; ++i) {
      const std::string a = argv[i];
      if (a == "--config" && i + 1 < argc) config_path = argv[i + 1];
      else if (a.rfind("--config=", 0) == 0) config_path = a.substr(9);
    }
    if (!config_path.empty()) {
      require_file(config_path, "--config");
      rc.apply(KvConfig::load(config_path));
    }
    rc.apply_env();
    app.parse(argc, argv);

    if (!quantiles_csv.empty()) rc.quantiles = parse_quantiles(quantiles_csv);

    if (synth->parsed()) return cmd_synth(rc, n_safe, n_unsafe, fractions, verbose);
    if (attack->parsed())
      return cmd_attack_gen(rc, ag_corpus, ag_kinds, per_kind, holdout, transform_mode,
                            transform_count, validate_templates, verbose);
    if (train_cmd->parsed())
      return cmd_train(rc, id_train_path, ood_aux_path, id_val_path, verbose);
    if (cal->parsed())
      return cmd_calibrate(rc, model_path, vocab_path, id_train_path, verbose);
    if (de->parsed())
      return cmd_detect_eval(rc, model_path, vocab_path, profile_path, id_train_path,
                             id_test_path, ood_waves_path, methods_csv, verbose);
    if (sim->parsed()) {
      rc.cl.update_mode = update_mode_from_string(update_mode);
      rc.cl.reinit = reinit_mode_from_string(reinit_mode);
      rc.cl.early_stop = early_stop > 0.0 ? std::optional<double>(early_stop) : std::nullopt;
      return cmd_simulate(rc, model_path, vocab_path, profile_path, waves_path,
                          retention_path, baseline_no_cl, !no_detect_filter, holdout,
                          verbose);
    }
    if (rep->parsed()) return cmd_report(rc, in_dir, verbose);
    if (serve->parsed())
      return cmd_serve(rc, model_path, vocab_path, profile_path, verbose);
    return kExitConfig;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
