#include "memefuse/cli.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "memefuse/checkpoint.hpp"
#include "memefuse/data.hpp"
#include "memefuse/digest.hpp"
#include "memefuse/evaluation.hpp"
#include "memefuse/pipeline.hpp"
#include "memefuse/preprocess.hpp"
#include "memefuse/training.hpp"

namespace memefuse {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::argument:
    case ErrorKind::config: return exit_code::config;
    case ErrorKind::data: return exit_code::data;
    case ErrorKind::transport: return exit_code::transport;
    case ErrorKind::integrity: return exit_code::integrity;
    case ErrorKind::pipeline: return exit_code::pipeline;
  }
  return exit_code::failure;
}

fs::path RunDirLock::lock_path(const fs::path& dir) { return dir / ".memefuse.lock"; }

RunDirLock::RunDirLock(const fs::path& dir) : path_(lock_path(dir)) {
  fs::create_directories(dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0)
    throw ConfigError("run directory " + dir.string() + " is in use by another command (remove " + path_.string() +
                      " if that command is gone)");
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

RunDirLock::~RunDirLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

namespace {

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write " + path.string());
  out << text;
}

}  // namespace

RunManifest::RunManifest(std::string command) {
  body_ = {{"command", std::move(command)}, {"started_at", utc_now()}, {"datasets", json::object()},
           {"artifacts", json::array()}};
}

void RunManifest::add_dataset(const fs::path& path, const std::string& digest) {
  body_["datasets"][path.generic_string()] = digest;
}

void RunManifest::add_artifact(const fs::path& path) {
  body_["artifacts"].push_back({{"path", path.generic_string()}, {"sha256", sha256_file(path)}});
}

fs::path RunManifest::write(const fs::path& dir) {
  body_["finished_at"] = utc_now();
  const fs::path path = dir / ("manifest." + body_["command"].get<std::string>() + ".json");
  write_text(path, body_.dump(2) + "\n");
  return path;
}

std::shared_ptr<ChatTransport> make_transport(const ChatSettings& s) {
  if (s.transport == "none") return nullptr;
  if (s.transport == "template") return std::make_shared<TemplateTeacher>();
  if (s.transport == "replay") {
    if (s.transcript.empty()) throw ConfigError("replay transport needs a transcript path");
    return std::make_shared<ReplayTransport>(ReplayTransport::load(s.transcript));
  }
  if (s.transport == "http") {
    HttpChatConfig h;
    h.base_url = s.base_url;
    h.path = s.path;
    h.model = s.model;
    h.api_key_env = s.api_key_env;
    h.timeout_seconds = s.timeout_s;
    return std::make_shared<HttpChatTransport>(h);
  }
  throw ConfigError("unknown chat transport '" + s.transport + "'");
}

DistillationSet distillation_set_from(std::vector<RationaleRecord> records) {
  DistillationSet set;
  set.records = std::move(records);
  set.summary.total = set.records.size();
  for (const auto& r : set.records) {
    if (r.valid) ++set.summary.valid;
    else ++set.summary.invalid;
    if (r.attempt > 1) ++set.summary.reprompted;
  }
  return set;
}

namespace {

struct Context {
  std::ostream& out;
  std::ostream& err;
};

std::optional<CaptionCache> load_captions(const fs::path& path) {
  if (path.empty() || !fs::exists(path)) return std::nullopt;
  return CaptionCache::load(path);
}

// -- fixtures ---------------------------------------------------------------

struct FixturesArgs {
  fs::path out = "fixtures";
  std::size_t n = 4;
  std::uint64_t seed = 7;
};

int cmd_fixtures(const FixturesArgs& a, Context& ctx) {
  Dataset ds = make_fixture_set(a.seed, a.n);
  ds.split = Split::train;
  save_dataset(ds, a.out / "train.jsonl", a.out / "images");
  Dataset test = ds;
  test.split = Split::test;
  save_dataset(test, a.out / "test.jsonl", a.out / "images");
  ctx.out << "wrote " << ds.size() << " fixture memes to " << (a.out / "train.jsonl").string() << " and "
          << (a.out / "test.jsonl").string() << '\n';
  return exit_code::ok;
}

// -- preprocess ---------------------------------------------------------------

struct PreprocessArgs {
  std::vector<fs::path> datasets;
  std::string backend = "stub";
  fs::path cache;
};

int cmd_preprocess(const PreprocessArgs& a, Context& ctx) {
  const fs::path dir = a.cache.has_parent_path() ? a.cache.parent_path() : fs::path(".");
  RunDirLock lock(dir);
  RunManifest manifest("preprocess");
  CaptionCache cache = fs::exists(a.cache) ? CaptionCache::load(a.cache) : CaptionCache{};
  CaptionRunStats total;
  for (const auto& path : a.datasets) {
    const Dataset ds = load_dataset(path, Split::train, &ctx.err);
    manifest.add_dataset(path, ds.digest());
    const auto stats = caption_dataset(ds, a.backend, cache);
    total.computed += stats.computed;
    total.reused += stats.reused;
  }
  cache.save(a.cache);
  manifest.set("backend", a.backend);
  manifest.set("captions_computed", total.computed);
  manifest.set("captions_reused", total.reused);
  manifest.add_artifact(a.cache);
  manifest.write(dir);
  ctx.out << "captions: " << total.computed << " computed, " << total.reused << " reused -> " << a.cache.string()
          << '\n';
  return exit_code::ok;
}

// -- abduce -------------------------------------------------------------------

struct AbduceArgs {
  fs::path config;
  fs::path dataset;
  fs::path captions;
  fs::path out;
  fs::path cache;
  std::string backend;
  std::string transport;
  fs::path transcript;
  int max_inflight = 0;
};

// Adds this run's exchanges to the transcript at `path`, keeping earlier ones,
// so a rerun served from the cache does not erase what a replay needs.
void merge_transcript(const ChatClient& client, const fs::path& path) {
  std::map<std::string, std::string> lines;
  if (fs::exists(path)) {
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) lines[json::parse(line).at("prompt_hash").get<std::string>()] = line;
  }
  for (const auto& e : client.transcript())
    lines[e.prompt_hash] =
        json{{"prompt_hash", e.prompt_hash}, {"system", e.system}, {"user", e.user}, {"response", e.response}}.dump();
  std::string body;
  for (const auto& [hash, line] : lines) body += line + '\n';
  write_text(path, body);
}

int cmd_abduce(const AbduceArgs& a, Context& ctx) {
  RunConfig cfg;
  if (!a.config.empty()) cfg = load_run_config(a.config);
  const fs::path dataset = a.dataset.empty() ? cfg.train : a.dataset;
  const fs::path captions_path = a.captions.empty() ? cfg.captions : a.captions;
  const fs::path out = a.out.empty() ? cfg.rationales : a.out;
  if (dataset.empty()) throw ConfigError("abduce needs a training dataset (--dataset or config 'train')");
  if (captions_path.empty()) throw ConfigError("abduce needs a caption cache (--captions or config 'captions')");
  if (out.empty()) throw ConfigError("abduce needs an output path (--out or config 'rationales')");
  ChatSettings chat = cfg.chat;
  if (!a.transport.empty()) chat.transport = a.transport;
  if (!a.transcript.empty()) chat.transcript = a.transcript;
  if (a.max_inflight > 0) chat.max_inflight = a.max_inflight;
  const std::string backend = a.backend.empty() ? cfg.caption_backend : a.backend;

  const fs::path dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
  RunDirLock lock(dir);
  RunManifest manifest("abduce");
  if (!a.config.empty()) manifest.set_config_digest(cfg.digest());

  const Dataset ds = load_dataset(dataset, Split::train, &ctx.err);
  manifest.add_dataset(dataset, ds.digest());
  if (!fs::exists(captions_path))
    throw FileError("caption cache " + captions_path.string() + " not found; run preprocess first");
  const CaptionCache captions = CaptionCache::load(captions_path);

  // A replay transport reads the transcript; new transcripts go next to the corpus.
  RetryPolicy retry;
  retry.max_attempts = chat.max_attempts;
  retry.base_delay = std::chrono::milliseconds(chat.base_delay_ms);
  ChatClient client(make_transport(chat), retry, chat.max_inflight);
  const fs::path cache_path = a.cache.empty() ? dir / "rationale_cache.jsonl" : a.cache;
  if (fs::exists(cache_path)) client.cache().load_from(cache_path);

  std::ostringstream log;
  DistillationSet set = build_distillation_set(ds, captions, backend, client, &log);
  ctx.err << log.str();
  save_rationales(set.records, out);
  client.cache().save(cache_path);

  const json summary{{"total", set.summary.total},
                     {"valid", set.summary.valid},
                     {"invalid", set.summary.invalid},
                     {"reprompted", set.summary.reprompted},
                     {"upstream_calls", client.upstream_calls()},
                     {"transport", chat.transport}};
  fs::path summary_path = out;
  summary_path.replace_extension(".summary.json");
  write_text(summary_path, summary.dump(2) + "\n");
  manifest.add_artifact(out);
  manifest.add_artifact(summary_path);
  manifest.add_artifact(cache_path);
  if (client.online() && chat.transport != "replay") {
    const fs::path transcript = dir / "transcript.jsonl";
    merge_transcript(client, transcript);
    manifest.add_artifact(transcript);
  }
  manifest.set("summary", summary);
  manifest.write(dir);
  ctx.out << "rationales: " << set.summary.valid << " valid, " << set.summary.invalid << " invalid, "
          << client.upstream_calls() << " upstream calls -> " << out.string() << '\n';
  return exit_code::ok;
}

// -- train --------------------------------------------------------------------

struct TrainArgs {
  fs::path config;
  std::vector<std::uint64_t> seeds;
  std::string schedule;
  std::string mode;
  fs::path output_dir;
};

RunConfig apply_overrides(RunConfig cfg, const std::vector<std::uint64_t>& seeds, const std::string& schedule,
                          const std::string& mode, const fs::path& output_dir) {
  if (!seeds.empty()) cfg.seeds = seeds;
  if (!schedule.empty()) cfg.schedule = schedule_from_string(schedule);
  if (!mode.empty()) cfg.mode = ablation_mode_from_string(mode);
  if (!output_dir.empty()) cfg.output_dir = output_dir;
  return cfg;
}

int cmd_train(const TrainArgs& a, Context& ctx) {
  const RunConfig cfg = apply_overrides(load_run_config(a.config), a.seeds, a.schedule, a.mode, a.output_dir);
  if (cfg.train.empty()) throw ConfigError("run config has no 'train' dataset");
  const Dataset train = load_dataset(cfg.train, Split::train, &ctx.err);
  std::optional<CaptionCache> captions = load_captions(cfg.captions);
  std::optional<DistillationSet> rationales;
  if (cfg.schedule != Schedule::infer_only) {
    if (cfg.rationales.empty() || !fs::exists(cfg.rationales))
      throw FileError("rationale corpus '" + cfg.rationales.string() + "' not found; run abduce first");
    rationales = distillation_set_from(load_rationales(cfg.rationales));
  }
  const std::vector<RationaleRecord> records = rationales ? rationales->records : std::vector<RationaleRecord>{};
  const WordTokenizer tokenizer = build_tokenizer({&train}, records, captions ? &*captions : nullptr);

  for (const auto seed : cfg.seeds) {
    const fs::path dir = cfg.output_dir / ("seed-" + std::to_string(seed));
    RunDirLock lock(dir);
    RunManifest manifest("train");
    manifest.set_config_digest(cfg.digest());
    manifest.set_seeds({seed});
    manifest.add_dataset(cfg.train, train.digest());
    if (rationales) manifest.add_dataset(cfg.rationales, sha256_file(cfg.rationales));
    manifest.set("schedule", to_string(cfg.schedule));
    manifest.set("mode", to_string(cfg.mode));
    write_text(dir / "config.json", cfg.to_json().dump(2) + "\n");
    manifest.add_artifact(dir / "config.json");

    LearnerOptions opts;
    opts.mode = cfg.mode;
    opts.caption_backend = cfg.caption_backend;
    opts.use_clean_image = cfg.use_clean_image;
    Learner learner = Learner::create(tokenizer, cfg.model, seed, opts, captions ? &*captions : nullptr);
    StageConfig distill = cfg.stages.distill, infer = cfg.stages.infer;
    distill.seed = infer.seed = seed;

    const fs::path log_path = dir / "train_log.jsonl";
    std::ofstream log(log_path, std::ios::binary);
    if (!log) throw FileError("cannot write " + log_path.string());

    auto save = [&](const Checkpoint& ck, const std::string& name) {
      const fs::path p = dir / name;
      const std::string digest = save_checkpoint(ck, p);
      manifest.add_artifact(p);
      return digest;
    };
    switch (cfg.schedule) {
      case Schedule::two_stage: {
        auto r = run_two_stage(learner, train, *rationales, distill, infer, &log);
        const std::string d1 = save(r.stage1, "stage1.ckpt.json");
        const std::string d2 = save(r.stage2, "stage2.ckpt.json");
        manifest.set("stages", json::array({{{"stage", "distill"},
                                             {"checkpoint", "stage1.ckpt.json"},
                                             {"checkpoint_digest", d1},
                                             {"final_parameter_digest", r.distill.final_digest},
                                             {"final_loss", r.distill.state.loss_history.back()}},
                                            {{"stage", "infer"},
                                             {"checkpoint", "stage2.ckpt.json"},
                                             {"checkpoint_digest", d2},
                                             {"parent_checkpoint_digest", d1},
                                             {"initial_parameter_digest", r.infer.initial_digest},
                                             {"final_loss", r.infer.state.loss_history.back()}}}));
        ctx.out << "seed " << seed << ": distill loss " << r.distill.state.loss_history.back() << ", infer loss "
                << r.infer.state.loss_history.back() << " -> " << dir.string() << '\n';
        break;
      }
      case Schedule::infer_only: {
        auto r = run_infer_only(learner, train, infer, &log);
        const std::string d = save(r.checkpoint, "model.ckpt.json");
        manifest.set("stages", json::array({{{"stage", "infer"}, {"checkpoint", "model.ckpt.json"},
                                             {"checkpoint_digest", d},
                                             {"final_loss", r.stage.state.loss_history.back()}}}));
        ctx.out << "seed " << seed << ": infer loss " << r.stage.state.loss_history.back() << " -> " << dir.string()
                << '\n';
        break;
      }
      case Schedule::one_stage_explanation:
      case Schedule::one_stage_reasoning: {
        const Stage variant = cfg.schedule == Schedule::one_stage_explanation ? Stage::one_stage_explanation
                                                                              : Stage::one_stage_reasoning;
        auto r = run_one_stage(learner, train, *rationales, variant, infer, &log);
        const std::string d = save(r.checkpoint, "model.ckpt.json");
        manifest.set("stages", json::array({{{"stage", to_string(variant)}, {"checkpoint", "model.ckpt.json"},
                                             {"checkpoint_digest", d},
                                             {"final_loss", r.stage.state.loss_history.back()}}}));
        ctx.out << "seed " << seed << ": " << to_string(variant) << " loss " << r.stage.state.loss_history.back()
                << " -> " << dir.string() << '\n';
        break;
      }
    }
    log.close();
    manifest.add_artifact(log_path);
    manifest.write(dir);
  }
  return exit_code::ok;
}

// -- eval ---------------------------------------------------------------------

struct EvalArgs {
  std::vector<fs::path> checkpoints;
  fs::path test;
  std::string mode;
  fs::path captions;
  std::string backend = "stub";
  fs::path out = "eval";
  bool rationales = false;
};

int cmd_eval(const EvalArgs& a, Context& ctx) {
  RunDirLock lock(a.out);
  RunManifest manifest("eval");
  const Dataset test = load_dataset(a.test, Split::test, &ctx.err);
  manifest.add_dataset(a.test, test.digest());
  std::optional<CaptionCache> captions = load_captions(a.captions);
  EvalOptions eo;
  eo.captions = captions ? &*captions : nullptr;
  eo.caption_backend = a.backend;

  std::vector<EvalReport> reports;
  json runs = json::array();
  for (std::size_t i = 0; i < a.checkpoints.size(); ++i) {
    const Checkpoint ck = load_checkpoint(a.checkpoints[i]);
    const std::string tag = a.checkpoints.size() == 1 ? std::string{} : "." + std::to_string(i);
    runs.push_back({{"checkpoint", a.checkpoints[i].generic_string()}, {"sha256", sha256_file(a.checkpoints[i])}});
    if (a.rationales) {
      const fs::path p = a.out / ("rationales" + tag + ".jsonl");
      std::ostringstream body;
      for (const auto& s : test.samples)
        body << json{{"meme_id", s.id}, {"rationale", elicit_rationale(ck, s, eo)}}.dump() << '\n';
      write_text(p, body.str());
      manifest.add_artifact(p);
      ctx.out << "rationales for " << test.size() << " memes -> " << p.string() << '\n';
      continue;
    }
    const AblationMode mode = a.mode.empty() ? ck.meta.mode : ablation_mode_from_string(a.mode);
    EvalReport report = evaluate(ck, test, mode, eo);
    const fs::path json_path = a.out / ("eval_report" + tag + ".json");
    const fs::path table_path = a.out / ("eval_report" + tag + ".txt");
    const fs::path preds_path = a.out / ("predictions" + tag + ".jsonl");
    write_text(json_path, report.to_json().dump(2) + "\n");
    write_text(table_path, report.table());
    save_predictions(report.predictions, preds_path);
    for (const auto& p : {json_path, table_path, preds_path}) manifest.add_artifact(p);
    ctx.out << a.checkpoints[i].string() << '\n' << report.table();
    reports.push_back(std::move(report));
  }
  if (reports.size() > 1) {
    const MetricSummary s = summarize(reports);
    const fs::path p = a.out / "summary.json";
    write_text(p, s.to_json().dump(2) + "\n");
    manifest.add_artifact(p);
    char buf[160];
    std::snprintf(buf, sizeof buf, "mean over %zu runs: accuracy %.2f +- %.2f, macro_f1 %.2f +- %.2f\n", s.runs,
                  100.0 * s.accuracy_mean, 100.0 * s.accuracy_std, 100.0 * s.macro_f1_mean, 100.0 * s.macro_f1_std);
    ctx.out << buf;
  }
  manifest.set("checkpoints", runs);
  manifest.write(a.out);
  return exit_code::ok;
}

// -- ablate -------------------------------------------------------------------

struct AblateArgs {
  fs::path config;
  fs::path output_dir;
  std::vector<std::uint64_t> seeds;
};

int cmd_ablate(const AblateArgs& a, Context& ctx) {
  const RunConfig cfg = apply_overrides(load_run_config(a.config), a.seeds, {}, {}, a.output_dir);
  if (cfg.train.empty() || cfg.test.empty()) throw ConfigError("ablate needs 'train' and 'test' in the run config");
  const fs::path dir = cfg.output_dir / "ablation";
  RunDirLock lock(dir);
  RunManifest manifest("ablate");
  manifest.set_config_digest(cfg.digest());
  manifest.set_seeds(cfg.seeds);
  const Dataset train = load_dataset(cfg.train, Split::train, &ctx.err);
  const Dataset test = load_dataset(cfg.test, Split::test, &ctx.err);
  manifest.add_dataset(cfg.train, train.digest());
  manifest.add_dataset(cfg.test, test.digest());
  std::optional<CaptionCache> captions = load_captions(cfg.captions);
  std::optional<DistillationSet> rationales;
  if (!cfg.rationales.empty() && fs::exists(cfg.rationales))
    rationales = distillation_set_from(load_rationales(cfg.rationales));

  std::shared_ptr<ChatTransport> transport;
  if (cfg.chat.transport == "http") transport = make_transport(cfg.chat);
  std::optional<ChatClient> client;
  if (transport) client.emplace(transport, RetryPolicy{}, cfg.chat.max_inflight);

  json per_seed = json::array();
  std::string last_table;
  for (const auto seed : cfg.seeds) {
    AblationInputs in;
    in.train = &train;
    in.test = &test;
    in.rationales = rationales ? &*rationales : nullptr;
    in.captions = captions ? &*captions : nullptr;
    in.caption_backend = cfg.caption_backend;
    in.dataset_key = cfg.dataset;
    in.model = cfg.model;
    in.stages = cfg.stages;
    in.seed = seed;
    in.use_clean_image = cfg.use_clean_image;
    in.live_client = client ? &*client : nullptr;
    in.log = &ctx.err;
    const AblationReport report = run_ablations(in);
    const std::string tag = "seed-" + std::to_string(seed);
    const fs::path json_path = dir / ("ablation_report." + tag + ".json");
    const fs::path table_path = dir / ("ablation_report." + tag + ".txt");
    write_text(json_path, report.to_json().dump(2) + "\n");
    write_text(table_path, report.table());
    manifest.add_artifact(json_path);
    manifest.add_artifact(table_path);
    per_seed.push_back({{"seed", seed}, {"report_digest", sha256_file(json_path)}});
    ctx.out << "seed " << seed << '\n' << report.table();
  }
  manifest.set("reports", per_seed);
  manifest.write(dir);
  return exit_code::ok;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"memefuse: harmful meme detection with distilled multimodal reasoning"};
  app.require_subcommand(1);
  Context ctx{out, err};

  FixturesArgs fx;
  auto* fixtures = app.add_subcommand("fixtures", "Write a synthetic fixture dataset");
  fixtures->add_option("--out", fx.out, "Output directory")->capture_default_str();
  fixtures->add_option("-n,--count", fx.n, "Number of memes (even)")->capture_default_str();
  fixtures->add_option("--seed", fx.seed, "Generator seed")->capture_default_str();

  PreprocessArgs pp;
  auto* preprocess = app.add_subcommand("preprocess", "Caption meme images into a cache");
  preprocess->add_option("-d,--dataset", pp.datasets, "Dataset JSONL file(s)")->required();
  preprocess->add_option("-b,--backend", pp.backend, "Captioning backend")->capture_default_str();
  preprocess->add_option("-c,--cache", pp.cache, "Caption cache JSONL")->required();

  AbduceArgs ab;
  auto* abduce = app.add_subcommand("abduce", "Collect label-conditioned rationales from a chat model");
  abduce->add_option("--config", ab.config, "Run config (.jsonc); flags override it");
  abduce->add_option("-d,--dataset", ab.dataset, "Training dataset JSONL");
  abduce->add_option("-c,--captions", ab.captions, "Caption cache JSONL");
  abduce->add_option("-o,--out", ab.out, "Rationale corpus JSONL");
  abduce->add_option("--cache", ab.cache, "Rationale cache (default: rationale_cache.jsonl next to --out)");
  abduce->add_option("-b,--backend", ab.backend, "Caption backend name");
  abduce->add_option("-t,--transport", ab.transport, "none | template | replay | http (key via environment)");
  abduce->add_option("--transcript", ab.transcript, "Transcript to replay");
  abduce->add_option("--max-inflight", ab.max_inflight, "Concurrent upstream requests");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train one model per seed");
  train->add_option("--config", tr.config, "Run config (.jsonc)")->required();
  train->add_option("--seed", tr.seeds, "Seed list (overrides config)");
  train->add_option("--schedule", tr.schedule, "two_stage | infer_only | one_stage_explanation | one_stage_reasoning");
  train->add_option("--mode", tr.mode, "full | no_vision | caption_append | text_only");
  train->add_option("--output-dir", tr.output_dir, "Run root (overrides config)");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Evaluate checkpoints on a labeled split");
  eval->add_option("-k,--checkpoint", ev.checkpoints, "Checkpoint file(s); several give a mean/stddev row")
      ->required();
  eval->add_option("-t,--test", ev.test, "Test dataset JSONL")->required();
  eval->add_option("--mode", ev.mode, "Ablation mode (default: the checkpoint's)");
  eval->add_option("-c,--captions", ev.captions, "Caption cache, for caption_append checkpoints");
  eval->add_option("-b,--backend", ev.backend, "Caption backend name")->capture_default_str();
  eval->add_option("-o,--out", ev.out, "Output directory")->capture_default_str();
  eval->add_flag("--rationales", ev.rationales, "Dump generated rationales from a distill checkpoint");

  AblateArgs ad;
  auto* ablate = app.add_subcommand("ablate", "Run every ablation setting and tabulate the results");
  ablate->add_option("--config", ad.config, "Run config (.jsonc)")->required();
  ablate->add_option("--output-dir", ad.output_dir, "Run root (overrides config)");
  ablate->add_option("--seed", ad.seeds, "Seed list (overrides config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? exit_code::ok : exit_code::config;
  }

  try {
    if (*fixtures) return cmd_fixtures(fx, ctx);
    if (*preprocess) return cmd_preprocess(pp, ctx);
    if (*abduce) return cmd_abduce(ab, ctx);
    if (*train) return cmd_train(tr, ctx);
    if (*eval) return cmd_eval(ev, ctx);
    if (*ablate) return cmd_ablate(ad, ctx);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::data;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::failure;
  }
  return exit_code::failure;
}

}  // namespace memefuse
