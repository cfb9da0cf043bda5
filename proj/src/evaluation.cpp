#include "memefuse/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "memefuse/errors.hpp"
#include "memefuse/pipeline.hpp"

namespace memefuse {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

}  // namespace

std::optional<Label> parse_label(const std::string& generated) {
  std::size_t i = 0;
  while (i < generated.size() && is_space(generated[i])) ++i;
  std::size_t j = i;
  while (j < generated.size() && !is_space(generated[j])) ++j;
  std::string token = generated.substr(i, j - i);
  std::size_t a = 0, b = token.size();
  while (a < b && is_punct(token[a])) ++a;
  while (b > a && is_punct(token[b - 1])) --b;
  token = token.substr(a, b - a);
  std::transform(token.begin(), token.end(), token.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (token == "harmful") return Label::harmful;
  if (token == "harmless") return Label::harmless;
  return std::nullopt;
}

std::optional<Label> parse_prediction(const std::string& generated, Stage stage) {
  if (stage != Stage::one_stage_reasoning) return parse_label(generated);
  const auto pos = generated.rfind(kSepText);
  if (pos == std::string::npos) return std::nullopt;
  return parse_label(generated.substr(pos + kSepText.size()));
}

ConfusionMatrix ConfusionMatrix::from(const std::vector<Prediction>& predictions) {
  ConfusionMatrix cm;
  for (const auto& p : predictions) {
    const bool gold_pos = p.gold == Label::harmful;
    // An invalid output is scored as the opposite of the gold label.
    const bool pred_pos = p.parsed ? *p.parsed == Label::harmful : !gold_pos;
    if (pred_pos && gold_pos) ++cm.tp;
    else if (pred_pos) ++cm.fp;
    else if (gold_pos) ++cm.fn;
    else ++cm.tn;
  }
  return cm;
}

double f1_score(std::size_t tp, std::size_t fp, std::size_t fn) {
  const double denom = 2.0 * static_cast<double>(tp) + static_cast<double>(fp) + static_cast<double>(fn);
  return denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp) / denom;
}

double accuracy(const std::vector<Prediction>& predictions) {
  if (predictions.empty()) throw ArgumentError("accuracy of an empty prediction set");
  const auto correct = std::count_if(predictions.begin(), predictions.end(), [](const Prediction& p) {
    return p.correct();
  });
  return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

double macro_f1(const std::vector<Prediction>& predictions) {
  if (predictions.empty()) throw ArgumentError("macro-F1 of an empty prediction set");
  const auto cm = ConfusionMatrix::from(predictions);
  return (f1_score(cm.tp, cm.fp, cm.fn) + f1_score(cm.tn, cm.fn, cm.fp)) / 2.0;
}

EvalReport score(std::vector<Prediction> predictions) {
  if (predictions.empty()) throw ArgumentError("cannot score an empty prediction set");
  EvalReport r;
  r.confusion = ConfusionMatrix::from(predictions);
  r.accuracy = accuracy(predictions);
  r.f1_harmful = f1_score(r.confusion.tp, r.confusion.fp, r.confusion.fn);
  r.f1_harmless = f1_score(r.confusion.tn, r.confusion.fn, r.confusion.fp);
  r.macro_f1 = (r.f1_harmful + r.f1_harmless) / 2.0;
  r.invalid_count = static_cast<std::size_t>(
      std::count_if(predictions.begin(), predictions.end(), [](const Prediction& p) { return !p.parsed; }));
  r.predictions = std::move(predictions);
  return r;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json preds = nlohmann::json::array();
  for (const auto& p : predictions)
    preds.push_back({{"meme_id", p.meme_id},
                     {"generated", p.generated},
                     {"parsed", p.parsed ? nlohmann::json(to_string(*p.parsed)) : nlohmann::json("invalid")},
                     {"gold", to_string(p.gold)}});
  return {{"accuracy", accuracy},
          {"f1_harmful", f1_harmful},
          {"f1_harmless", f1_harmless},
          {"macro_f1", macro_f1},
          {"invalid_count", invalid_count},
          {"confusion", {{"tp", confusion.tp}, {"fp", confusion.fp}, {"fn", confusion.fn}, {"tn", confusion.tn}}},
          {"predictions", preds}};
}

std::string EvalReport::table() const {
  std::ostringstream out;
  out << "metric        value\n";
  out << "accuracy      " << percent(accuracy) << '\n';
  out << "macro_f1      " << percent(macro_f1) << '\n';
  out << "f1_harmful    " << percent(f1_harmful) << '\n';
  out << "f1_harmless   " << percent(f1_harmless) << '\n';
  out << "invalid       " << invalid_count << " / " << predictions.size() << '\n';
  out << "confusion     tp=" << confusion.tp << " fp=" << confusion.fp << " fn=" << confusion.fn
      << " tn=" << confusion.tn << '\n';
  return out.str();
}

EvalReport evaluate_with(const Dataset& test, const Predictor& predict, Stage stage) {
  std::vector<Prediction> preds;
  preds.reserve(test.samples.size());
  for (const auto& s : test.samples) {
    if (!s.label) throw MissingLabelError("meme " + s.id + " has no gold label to score against");
    Prediction p;
    p.meme_id = s.id;
    p.generated = predict(s);
    p.parsed = parse_prediction(p.generated, stage);
    p.gold = *s.label;
    preds.push_back(std::move(p));
  }
  return score(std::move(preds));
}

EvalReport evaluate(const Checkpoint& checkpoint, const Dataset& test, AblationMode mode, const EvalOptions& options) {
  if (!predicts_labels(checkpoint.meta.stage))
    throw ConfigError("checkpoint stage '" + std::string(to_string(checkpoint.meta.stage)) +
                      "' does not predict labels; use rationale elicitation instead");
  if (!modes_compatible(checkpoint.meta.mode, mode))
    throw ConfigError("checkpoint was trained in mode '" + std::string(to_string(checkpoint.meta.mode)) +
                      "' and cannot be evaluated in mode '" + std::string(to_string(mode)) + "'");
  Learner learner = Learner::from_checkpoint(checkpoint, options.captions, options.caption_backend);
  const int max_len = options.max_len > 0 ? options.max_len : checkpoint.model.config().max_target;
  return evaluate_with(
      test, [&](const MemeSample& s) { return learner.generate(s, max_len); }, checkpoint.meta.stage);
}

std::string elicit_rationale(const Checkpoint& checkpoint, const MemeSample& sample, const EvalOptions& options) {
  if (checkpoint.meta.stage != Stage::distill)
    throw ConfigError("rationale elicitation needs a distill checkpoint, got '" +
                      std::string(to_string(checkpoint.meta.stage)) + "'");
  Learner learner = Learner::from_checkpoint(checkpoint, options.captions, options.caption_backend);
  const int max_len = options.max_len > 0 ? options.max_len : checkpoint.model.config().max_target;
  return learner.generate(sample, max_len);
}

void save_predictions(const std::vector<Prediction>& predictions, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write " + path.string());
  for (const auto& p : predictions) {
    nlohmann::json j{{"meme_id", p.meme_id},
                     {"generated", p.generated},
                     {"parsed", p.parsed ? nlohmann::json(to_string(*p.parsed)) : nlohmann::json("invalid")},
                     {"gold", to_string(p.gold)},
                     {"correct", p.correct()}};
    out << j.dump() << '\n';
  }
}

nlohmann::json MetricSummary::to_json() const {
  return {{"runs", runs},
          {"accuracy_mean", accuracy_mean},
          {"accuracy_std", accuracy_std},
          {"macro_f1_mean", macro_f1_mean},
          {"macro_f1_std", macro_f1_std}};
}

MetricSummary summarize(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw ArgumentError("no reports to summarize");
  MetricSummary s;
  s.runs = reports.size();
  const double n = static_cast<double>(reports.size());
  for (const auto& r : reports) {
    s.accuracy_mean += r.accuracy / n;
    s.macro_f1_mean += r.macro_f1 / n;
  }
  if (reports.size() > 1) {
    double va = 0.0, vf = 0.0;
    for (const auto& r : reports) {
      va += (r.accuracy - s.accuracy_mean) * (r.accuracy - s.accuracy_mean);
      vf += (r.macro_f1 - s.macro_f1_mean) * (r.macro_f1 - s.macro_f1_mean);
    }
    s.accuracy_std = std::sqrt(va / (n - 1.0));
    s.macro_f1_std = std::sqrt(vf / (n - 1.0));
  }
  return s;
}

// -- ablations ---------------------------------------------------------------

std::optional<ReferenceScore> reference_score(const std::string& setting, const std::string& dataset) {
  static const std::map<std::string, std::map<std::string, ReferenceScore>> table{
      {"full", {{"harm-c", {86.16, 85.43}}, {"harm-p", {89.58, 89.57}}, {"fhm", {75.40, 75.10}}}},
      {"no_distillation", {{"harm-c", {83.33, 81.44}}, {"harm-p", {88.17, 88.17}}, {"fhm", {73.60, 73.41}}}},
      {"no_vision", {{"harm-c", {82.48, 80.30}}, {"harm-p", {87.04, 87.03}}, {"fhm", {58.80, 57.01}}}},
      {"no_fusion", {{"harm-c", {79.38, 75.36}}, {"harm-p", {87.46, 87.45}}, {"fhm", {74.40, 74.25}}}},
      {"one_stage_explanation", {{"harm-c", {83.05, 81.45}}, {"harm-p", {63.32, 63.32}}, {"fhm", {67.40, 65.77}}}},
      {"one_stage_reasoning", {{"harm-c", {68.93, 56.19}}, {"harm-p", {56.90, 56.67}}, {"fhm", {63.00, 59.29}}}},
      {"direct_prompting", {{"harm-c", {71.75, 66.86}}, {"harm-p", {61.13, 60.27}}, {"fhm", {60.00, 57.72}}}},
  };
  auto s = table.find(setting);
  if (s == table.end()) return std::nullopt;
  auto d = s->second.find(dataset);
  if (d == s->second.end()) return std::nullopt;
  return d->second;
}

PromptBundle zero_shot_bundle(const std::string& text, const std::string& caption) {
  PromptBundle b;
  b.system = "You are a content moderator who decides whether a meme is harmful or harmless.";
  b.user = "Given a Text: \"" + text + "\", which is embedded in an Image: \"" + caption +
           "\"; is this meme harmful or harmless? Answer with exactly one word: harmful or harmless.";
  return b;
}

namespace {

nlohmann::json row_json(const AblationRow& row) {
  nlohmann::json j{{"setting", row.setting}, {"title", row.title}};
  if (row.report) {
    j["accuracy"] = row.report->accuracy;
    j["macro_f1"] = row.report->macro_f1;
    j["f1_harmful"] = row.report->f1_harmful;
    j["f1_harmless"] = row.report->f1_harmless;
    j["invalid_count"] = row.report->invalid_count;
  } else {
    j["skipped"] = row.skipped;
  }
  if (row.reference) j["reference"] = {{"accuracy", row.reference->accuracy}, {"macro_f1", row.reference->macro_f1}};
  return j;
}

void table_rows(std::ostringstream& out, const std::vector<AblationRow>& rows) {
  char buf[256];
  for (const auto& row : rows) {
    std::string ref = "-";
    if (row.reference) {
      char r[64];
      std::snprintf(r, sizeof r, "%.2f / %.2f", row.reference->accuracy, row.reference->macro_f1);
      ref = r;
    }
    if (row.report)
      std::snprintf(buf, sizeof buf, "%-34s %8s %8s %8zu   %s\n", row.title.c_str(), percent(row.report->accuracy).c_str(),
                    percent(row.report->macro_f1).c_str(), row.report->invalid_count, ref.c_str());
    else
      std::snprintf(buf, sizeof buf, "%-34s %8s %8s %8s   %s   (skipped: %s)\n", row.title.c_str(), "-", "-", "-",
                    ref.c_str(), row.skipped.c_str());
    out << buf;
  }
}

}  // namespace

nlohmann::json AblationReport::to_json() const {
  nlohmann::json rj = nlohmann::json::array(), vj = nlohmann::json::array();
  for (const auto& r : rows) rj.push_back(row_json(r));
  for (const auto& r : variants) vj.push_back(row_json(r));
  return {{"dataset", dataset}, {"rows", rj}, {"one_stage_variants", vj}, {"notes", notes}};
}

std::string AblationReport::table() const {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-34s %8s %8s %8s   %s\n", "setting", "acc", "macro_f1", "invalid",
                "reference acc / macro_f1");
  out << buf;
  table_rows(out, rows);
  if (!variants.empty()) {
    out << '\n';
    table_rows(out, variants);
  }
  for (const auto& n : notes) out << "note: " << n << '\n';
  return out.str();
}

AblationReport run_ablations(const AblationInputs& in) {
  if (!in.train || !in.test) throw ConfigError("ablations need both a train and a test split");
  AblationReport report;
  report.dataset = in.dataset_key;

  std::vector<RationaleRecord> records;
  if (in.rationales) records = in.rationales->records;
  const WordTokenizer tokenizer = build_tokenizer({in.train, in.test}, records, in.captions);

  auto fresh = [&](AblationMode mode) {
    LearnerOptions opts;
    opts.mode = mode;
    opts.caption_backend = in.caption_backend;
    opts.use_clean_image = in.use_clean_image;
    return Learner::create(tokenizer, in.model, in.seed, opts, in.captions);
  };
  auto eval = [&](const Checkpoint& ckpt) {
    EvalOptions eo;
    eo.captions = in.captions;
    eo.caption_backend = in.caption_backend;
    return evaluate(ckpt, *in.test, ckpt.meta.mode, eo);
  };
  StageConfig distill = in.stages.distill, infer = in.stages.infer;
  distill.seed = infer.seed = in.seed;

  auto attempt = [&](std::vector<AblationRow>& into, std::string key, std::string title, auto&& body) {
    AblationRow row;
    row.setting = std::move(key);
    row.title = std::move(title);
    row.reference = reference_score(row.setting, in.dataset_key);
    try {
      row.report = body();
    } catch (const Error& e) {
      row.skipped = e.what();
    }
    if (in.log) *in.log << (&into == &report.rows ? "ablation " : "variant ") << row.setting << (row.report ? " done" : " skipped: " + row.skipped) << '\n';
    into.push_back(std::move(row));
  };
  auto need_rationales = [&] {
    if (!in.rationales) throw PipelineError("no rationale corpus; run abduce first");
  };

  attempt(report.rows, "full", "full model", [&] {
    need_rationales();
    Learner l = fresh(AblationMode::full);
    return eval(run_two_stage(l, *in.train, *in.rationales, distill, infer).stage2);
  });
  attempt(report.rows, "no_distillation", "w/o reasoning distillation", [&] {
    Learner l = fresh(AblationMode::full);
    return eval(run_infer_only(l, *in.train, infer).checkpoint);
  });
  attempt(report.rows, "no_vision", "w/o visual features", [&] {
    need_rationales();
    Learner l = fresh(AblationMode::no_vision);
    return eval(run_two_stage(l, *in.train, *in.rationales, distill, infer).stage2);
  });
  attempt(report.rows, "no_fusion", "w/o multimodal fusion (captions)", [&] {
    need_rationales();
    if (!in.captions) throw PipelineError("no caption cache; run preprocess first");
    Learner l = fresh(AblationMode::caption_append);
    return eval(run_two_stage(l, *in.train, *in.rationales, distill, infer).stage2);
  });

  // The one-stage stage runs with the label-inference budget.
  std::optional<EvalReport> explanation;
  attempt(report.rows, "one_stage_explanation", "w/o two-stage training", [&] {
    need_rationales();
    Learner l = fresh(AblationMode::full);
    explanation = eval(run_one_stage(l, *in.train, *in.rationales, Stage::one_stage_explanation, infer).checkpoint);
    return *explanation;
  });

  if (in.live_client) {
    attempt(report.rows, "direct_prompting", "w/o fine-tuning small LMs", [&] {
      if (!in.captions) throw PipelineError("direct prompting needs captions; run preprocess first");
      return evaluate_with(*in.test, [&](const MemeSample& s) {
        const auto caption = in.captions->find(s.id, in.caption_backend);
        if (!caption) throw PipelineError("no caption for meme " + s.id);
        return in.live_client->complete(zero_shot_bundle(s.text, *caption));
      });
    });
  } else {
    report.notes.push_back("direct prompting row omitted: no live chat client configured");
  }

  attempt(report.variants, "one_stage_explanation", "one-stage: explanation", [&] {
    if (explanation) return *explanation;
    throw PipelineError("explanation variant did not run");
  });
  attempt(report.variants, "one_stage_reasoning", "one-stage: reasoning", [&] {
    need_rationales();
    Learner l = fresh(AblationMode::full);
    return eval(run_one_stage(l, *in.train, *in.rationales, Stage::one_stage_reasoning, infer).checkpoint);
  });
  if (!in.dataset_key.empty() && !reference_score("full", in.dataset_key))
    report.notes.push_back("no published reference scores for dataset '" + in.dataset_key + "'");
  return report;
}

}  // namespace memefuse
