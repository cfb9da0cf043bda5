#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "memefuse/abduction.hpp"
#include "memefuse/checkpoint.hpp"
#include "memefuse/data.hpp"
#include "memefuse/pipeline.hpp"

namespace memefuse {

struct StageConfig {
  Stage stage = Stage::infer;
  int epochs = 1;
  int batch_size = 1;
  double peak_lr = 5e-5;
  double warmup_fraction = 0.1;  // linear warmup
  bool linear_decay = false;     // after warmup; constant when off
  std::uint64_t seed = 0;
  double weight_decay = 0.01;
  double max_grad_norm = 0.0;    // 0 disables clipping
  std::optional<int> max_steps;  // caps the epoch-derived step count

  void validate() const;
};

int warmup_steps(int total_steps, double warmup_fraction);
/// Linear ramp from 0 over the warmup steps, then peak (or a linear decay to 0).
double lr_at(int step, int total_steps, const StageConfig& cfg);
int total_steps(const StageConfig& cfg, std::size_t examples);

struct StageDefaults {
  StageConfig distill;
  StageConfig infer;
};

/// Per-dataset stage settings: "harm-c", "harm-p", "fhm" or "fixture".
StageDefaults defaults_for_dataset(std::string_view dataset);

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  std::string describe() const;
};

/// Adam with decoupled weight decay over the trainable parameters of a model.
class AdamW {
 public:
  explicit AdamW(AdamWOptions options = {}) : options_(options) {}
  void step(Model& model, double lr);
  int steps_taken() const { return t_; }
  const AdamWOptions& options() const { return options_; }

 private:
  AdamWOptions options_;
  int t_ = 0;
  std::vector<Eigen::MatrixXd> m_, v_;
};

/// One supervised pair: encoder input from `sample`, decoder target text.
struct TrainExample {
  const MemeSample* sample = nullptr;
  std::string target;
};

struct DistillPair {
  const MemeSample* sample = nullptr;
  const RationaleRecord* rationale = nullptr;
};

/// Zeroes gradients, then accumulates the gradient of the batch-mean
/// teacher-forced loss. Returns that loss.
double accumulate_gradients(Learner& learner, const std::vector<TrainExample>& batch);
/// Rescales all trainable gradients so their joint L2 norm is at most `max_norm`.
double clip_gradients(Model& model, double max_norm);

/// Rationale-generation step. Throws GuardError on an invalid rationale.
double distill_step(Learner& learner, AdamW& opt, const std::vector<DistillPair>& batch, double lr);
/// Label-word step. Throws GuardError on an unlabeled sample.
double infer_step(Learner& learner, AdamW& opt, const std::vector<const MemeSample*>& batch, double lr);

/// Target text for a one-stage variant: "label [SEP] rationale" for the
/// explanation variant, "rationale [SEP] label" for the reasoning variant.
std::string one_stage_target(Stage variant, Label label, const std::string& rationale);

struct TrainState {
  int step = 0;
  int total_steps = 0;
  double current_lr = 0.0;
  std::vector<double> loss_history;
  std::string checkpoint_ref;  // digest of the checkpoint written for this stage
};

struct StageResult {
  TrainState state;
  std::string initial_digest;  // all parameters, before the first step
  std::string final_digest;
};

/// Mini-batch training over `examples` for cfg's step budget. Batches come from
/// a per-epoch shuffle seeded by cfg.seed. Each step appends a JSON line
/// {"stage","step","lr","loss"} to `log`.
StageResult train_stage(Learner& learner, const std::vector<TrainExample>& examples, const StageConfig& cfg,
                        std::ostream* log = nullptr);

std::vector<TrainExample> distill_examples(const Dataset& train, const DistillationSet& rationales);
std::vector<TrainExample> infer_examples(const Dataset& train);
std::vector<TrainExample> one_stage_examples(const Dataset& train, const DistillationSet& rationales, Stage variant);

struct TwoStageResult {
  StageResult distill;
  StageResult infer;
  Checkpoint stage1;
  Checkpoint stage2;
};

/// Reasoning distillation followed by harmfulness inference on the same
/// parameters. Throws PipelineError when no rationale is valid.
TwoStageResult run_two_stage(Learner& learner, const Dataset& train, const DistillationSet& rationales,
                             const StageConfig& distill_cfg, const StageConfig& infer_cfg, std::ostream* log = nullptr);

struct SingleStageResult {
  StageResult stage;
  Checkpoint checkpoint;
};

/// Label-only training without the distillation stage.
SingleStageResult run_infer_only(Learner& learner, const Dataset& train, const StageConfig& cfg,
                                 std::ostream* log = nullptr);
/// Joint label and rationale target. Throws ArgumentError unless `variant`
/// is one of the one-stage stages.
SingleStageResult run_one_stage(Learner& learner, const Dataset& train, const DistillationSet& rationales,
                                Stage variant, const StageConfig& cfg, std::ostream* log = nullptr);

}  // namespace memefuse
