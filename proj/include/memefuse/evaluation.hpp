#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "memefuse/abduction.hpp"
#include "memefuse/checkpoint.hpp"
#include "memefuse/data.hpp"
#include "memefuse/preprocess.hpp"
#include "memefuse/training.hpp"

namespace memefuse {

/// First whitespace-delimited token, lowercased and stripped of punctuation,
/// matched exactly against "harmful"/"harmless". Anything else is invalid.
std::optional<Label> parse_label(const std::string& generated);
/// Stage-aware parsing: the reasoning variant carries its label after the last
/// [SEP]; every other stage leads with it.
std::optional<Label> parse_prediction(const std::string& generated, Stage stage);

struct Prediction {
  std::string meme_id;
  std::string generated;
  std::optional<Label> parsed;  // nullopt = invalid
  Label gold = Label::harmless;

  bool correct() const { return parsed && *parsed == gold; }
};

/// Harmful is the positive class. An invalid prediction counts against its
/// gold class: fn for a harmful meme, fp for a harmless one.
struct ConfusionMatrix {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  static ConfusionMatrix from(const std::vector<Prediction>& predictions);
  std::size_t total() const { return tp + fp + fn + tn; }
};

double f1_score(std::size_t tp, std::size_t fp, std::size_t fn);
/// Throws ArgumentError on an empty input.
double accuracy(const std::vector<Prediction>& predictions);
double macro_f1(const std::vector<Prediction>& predictions);

struct EvalReport {
  double accuracy = 0.0;
  double f1_harmful = 0.0;
  double f1_harmless = 0.0;
  double macro_f1 = 0.0;
  std::size_t invalid_count = 0;
  ConfusionMatrix confusion;
  std::vector<Prediction> predictions;

  nlohmann::json to_json() const;
  std::string table() const;
};

/// Throws ArgumentError on an empty input.
EvalReport score(std::vector<Prediction> predictions);

using Predictor = std::function<std::string(const MemeSample&)>;

/// Generates once per labeled test sample in dataset order and scores the result.
EvalReport evaluate_with(const Dataset& test, const Predictor& predict, Stage stage = Stage::infer);

struct EvalOptions {
  const CaptionCache* captions = nullptr;
  std::string caption_backend = "stub";
  int max_len = 0;  // 0 = the checkpoint's max_target
};

/// Throws ConfigError when `mode` does not match the checkpoint's training mode
/// or the checkpoint does not predict labels.
EvalReport evaluate(const Checkpoint& checkpoint, const Dataset& test, AblationMode mode, const EvalOptions& options = {});

/// Greedy rationale from a distillation checkpoint, for inspection only.
/// Throws ConfigError for any other stage.
std::string elicit_rationale(const Checkpoint& checkpoint, const MemeSample& sample, const EvalOptions& options = {});

void save_predictions(const std::vector<Prediction>& predictions, const std::filesystem::path& path);

struct MetricSummary {
  std::size_t runs = 0;
  double accuracy_mean = 0.0, accuracy_std = 0.0;
  double macro_f1_mean = 0.0, macro_f1_std = 0.0;

  nlohmann::json to_json() const;
};

/// Mean and sample standard deviation over seeded runs.
MetricSummary summarize(const std::vector<EvalReport>& reports);

// -- ablations ---------------------------------------------------------------

struct ReferenceScore {
  double accuracy;
  double macro_f1;
};

/// Published scores for `setting` on "harm-c", "harm-p" or "fhm", in percent.
std::optional<ReferenceScore> reference_score(const std::string& setting, const std::string& dataset);

struct AblationRow {
  std::string setting;  // machine key
  std::string title;
  std::optional<EvalReport> report;
  std::string skipped;  // reason, when report is empty
  std::optional<ReferenceScore> reference;
};

struct AblationReport {
  std::string dataset;
  std::vector<AblationRow> rows;      // the ablation table
  std::vector<AblationRow> variants;  // one-stage explanation and reasoning
  std::vector<std::string> notes;

  nlohmann::json to_json() const;
  std::string table() const;
};

struct AblationInputs {
  const Dataset* train = nullptr;
  const Dataset* test = nullptr;
  const DistillationSet* rationales = nullptr;
  const CaptionCache* captions = nullptr;
  std::string caption_backend = "stub";
  std::string dataset_key;  // selects reference scores
  ModelConfig model;
  StageDefaults stages;
  std::uint64_t seed = 0;
  bool use_clean_image = true;
  ChatClient* live_client = nullptr;  // enables the direct-prompting row
  std::ostream* log = nullptr;
};

/// Trains and evaluates every ablation setting from the same seed. A setting
/// whose prerequisites are missing is recorded as skipped; the rest proceed.
AblationReport run_ablations(const AblationInputs& inputs);

/// Zero-shot classification prompt for the direct-prompting row.
PromptBundle zero_shot_bundle(const std::string& text, const std::string& caption);

}  // namespace memefuse
