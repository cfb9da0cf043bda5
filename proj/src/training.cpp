#include "memefuse/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "memefuse/errors.hpp"
#include "memefuse/random.hpp"

namespace memefuse {

void StageConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0)) throw ConfigError("warmup_fraction must lie in (0, 1)");
  if (!(peak_lr >= 0.0) || !std::isfinite(peak_lr)) throw ConfigError("peak_lr must be a finite non-negative number");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (max_grad_norm < 0.0) throw ConfigError("max_grad_norm must be non-negative");
  if (max_steps && *max_steps < 1) throw ConfigError("max_steps must be at least 1");
}

int warmup_steps(int total_steps, double warmup_fraction) {
  // The tolerance keeps products like 0.1 * 30 from rounding up a whole step.
  return static_cast<int>(std::ceil(warmup_fraction * total_steps - 1e-9));
}

double lr_at(int step, int total_steps, const StageConfig& cfg) {
  if (step < 0 || step > total_steps)
    throw ArgumentError("step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  const int warm = warmup_steps(total_steps, cfg.warmup_fraction);
  if (step < warm) return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(warm);
  if (cfg.linear_decay && total_steps > warm)
    return cfg.peak_lr * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warm);
  return cfg.peak_lr;
}

int total_steps(const StageConfig& cfg, std::size_t examples) {
  if (examples == 0) throw ArgumentError("no training examples");
  const auto per_epoch = static_cast<int>((examples + static_cast<std::size_t>(cfg.batch_size) - 1) /
                                          static_cast<std::size_t>(cfg.batch_size));
  const int total = per_epoch * cfg.epochs;
  return cfg.max_steps ? std::min(total, *cfg.max_steps) : total;
}

StageDefaults defaults_for_dataset(std::string_view dataset) {
  StageDefaults d;
  d.distill.stage = Stage::distill;
  d.infer.stage = Stage::infer;
  if (dataset == "fixture") {
    d.distill.epochs = 250;
    d.distill.batch_size = 2;
    d.distill.peak_lr = 1e-2;
    d.infer.epochs = 100;
    d.infer.batch_size = 4;
    d.infer.peak_lr = 1e-2;
    d.distill.weight_decay = d.infer.weight_decay = 0.0;
    return d;
  }
  d.distill.epochs = 10;
  d.distill.batch_size = 32;
  d.distill.peak_lr = 5e-5;
  d.infer.epochs = 30;
  d.infer.batch_size = 32;
  if (dataset == "harm-c")
    d.infer.peak_lr = 5e-5;
  else if (dataset == "harm-p")
    d.infer.peak_lr = 5e-4;
  else if (dataset == "fhm")
    d.infer.peak_lr = 1e-4;
  else
    throw ConfigError("no stage defaults for dataset '" + std::string(dataset) +
                      "'; expected harm-c, harm-p, fhm or fixture");
  return d;
}

std::string AdamWOptions::describe() const {
  nlohmann::json j{{"name", "adamw"}, {"beta1", beta1}, {"beta2", beta2}, {"eps", eps}, {"weight_decay", weight_decay}};
  return j.dump();
}

void AdamW::step(Model& model, double lr) {
  auto& params = model.parameters();
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = Eigen::MatrixXd::Zero(params[i].value.rows(), params[i].value.cols());
      v_[i] = m_[i];
    }
  }
  if (m_.size() != params.size()) throw ArgumentError("optimizer state belongs to a different model");
  ++t_;
  const double c1 = 1.0 - std::pow(options_.beta1, t_);
  const double c2 = 1.0 - std::pow(options_.beta2, t_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable) continue;
    m_[i] = options_.beta1 * m_[i] + (1.0 - options_.beta1) * p.grad;
    v_[i] = options_.beta2 * v_[i] + (1.0 - options_.beta2) * p.grad.cwiseAbs2();
    p.value *= 1.0 - lr * options_.weight_decay;
    p.value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + options_.eps);
  }
}

double accumulate_gradients(Learner& learner, const std::vector<TrainExample>& batch) {
  if (batch.empty()) throw ArgumentError("empty batch");
  Model& model = learner.model();
  model.zero_grad();
  const double inv = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& ex : batch) {
    const PreparedInput in = learner.prepare(*ex.sample);
    Model::Tape tape(true);
    auto state = learner.encode(tape, in);
    const auto targets = target_tokens(learner.tokenizer(), ex.target, model.config().max_target);
    auto loss = model.teacher_forced_loss(tape, state, targets);
    total += loss.value()(0, 0);
    tape.backward(ad::scale(loss, inv));
  }
  return total * inv;
}

double clip_gradients(Model& model, double max_norm) {
  double sq = 0.0;
  for (const auto& p : model.parameters())
    if (p.trainable) sq += p.grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& p : model.parameters())
      if (p.trainable) p.grad *= s;
  }
  return norm;
}

double distill_step(Learner& learner, AdamW& opt, const std::vector<DistillPair>& batch, double lr) {
  std::vector<TrainExample> examples;
  for (const auto& pair : batch) {
    if (!pair.rationale->valid)
      throw GuardError("rationale for meme " + pair.rationale->meme_id + " is invalid and cannot be a target");
    examples.push_back({pair.sample, pair.rationale->rationale});
  }
  const double loss = accumulate_gradients(learner, examples);
  opt.step(learner.model(), lr);
  return loss;
}

double infer_step(Learner& learner, AdamW& opt, const std::vector<const MemeSample*>& batch, double lr) {
  std::vector<TrainExample> examples;
  for (const auto* s : batch) {
    if (!s->label) throw GuardError("meme " + s->id + " has no label; inference training needs gold labels");
    examples.push_back({s, std::string(to_string(*s->label))});
  }
  const double loss = accumulate_gradients(learner, examples);
  opt.step(learner.model(), lr);
  return loss;
}

std::string one_stage_target(Stage variant, Label label, const std::string& rationale) {
  const std::string sep(kSepText);
  switch (variant) {
    case Stage::one_stage_explanation: return std::string(to_string(label)) + " " + sep + " " + rationale;
    case Stage::one_stage_reasoning: return rationale + " " + sep + " " + std::string(to_string(label));
    default: throw ArgumentError("stage '" + std::string(to_string(variant)) + "' is not a one-stage variant");
  }
}

StageResult train_stage(Learner& learner, const std::vector<TrainExample>& examples, const StageConfig& cfg,
                        std::ostream* log) {
  cfg.validate();
  StageResult result;
  result.state.total_steps = total_steps(cfg, examples.size());
  result.initial_digest = learner.model().digest();

  AdamWOptions opts;
  opts.weight_decay = cfg.weight_decay;
  AdamW opt(opts);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(examples.size());
  std::size_t cursor = order.size();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  for (int step = 0; step < result.state.total_steps; ++step) {
    if (cursor >= order.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      rng.shuffle(order);
      cursor = 0;
    }
    std::vector<TrainExample> mb;
    for (std::size_t k = cursor; k < std::min(cursor + batch, order.size()); ++k) mb.push_back(examples[order[k]]);
    cursor += batch;

    const double lr = lr_at(step, result.state.total_steps, cfg);
    const double loss = accumulate_gradients(learner, mb);
    if (cfg.max_grad_norm > 0.0) clip_gradients(learner.model(), cfg.max_grad_norm);
    opt.step(learner.model(), lr);

    result.state.step = step + 1;
    result.state.current_lr = lr;
    result.state.loss_history.push_back(loss);
    if (log) {
      nlohmann::json line{{"stage", to_string(cfg.stage)}, {"step", step + 1}, {"lr", lr}, {"loss", loss}};
      *log << line.dump() << '\n';
    }
  }
  result.final_digest = learner.model().digest();
  return result;
}

std::vector<TrainExample> distill_examples(const Dataset& train, const DistillationSet& rationales) {
  std::vector<TrainExample> out;
  for (const auto& s : train.samples) {
    const RationaleRecord* r = rationales.find(s.id);
    if (r && r->valid) out.push_back({&s, r->rationale});
  }
  return out;
}

std::vector<TrainExample> infer_examples(const Dataset& train) {
  std::vector<TrainExample> out;
  for (const auto& s : train.samples) {
    if (!s.label) throw GuardError("meme " + s.id + " has no label; inference training needs gold labels");
    out.push_back({&s, std::string(to_string(*s.label))});
  }
  return out;
}

std::vector<TrainExample> one_stage_examples(const Dataset& train, const DistillationSet& rationales, Stage variant) {
  one_stage_target(variant, Label::harmful, {});
  std::vector<TrainExample> out;
  for (const auto& s : train.samples) {
    if (!s.label) throw GuardError("meme " + s.id + " has no label; training needs gold labels");
    const RationaleRecord* r = rationales.find(s.id);
    if (r && r->valid) out.push_back({&s, one_stage_target(variant, *s.label, r->rationale)});
  }
  return out;
}

namespace {

void require_train_split(const Dataset& train) {
  if (train.split != Split::train)
    throw GuardError("training needs the train split, got '" + std::string(to_string(train.split)) + "'");
  require_labels(train);
}

Checkpoint finish(Learner& learner, Stage stage, const StageConfig& cfg, const Dataset& train,
                  std::string parent) {
  Checkpoint ckpt = learner.checkpoint(stage, cfg.seed, std::move(parent), train.name);
  AdamWOptions opts;
  opts.weight_decay = cfg.weight_decay;
  ckpt.meta.optimizer = opts.describe();
  return ckpt;
}

}  // namespace

TwoStageResult run_two_stage(Learner& learner, const Dataset& train, const DistillationSet& rationales,
                             const StageConfig& distill_cfg, const StageConfig& infer_cfg, std::ostream* log) {
  require_train_split(train);
  const auto d_examples = distill_examples(train, rationales);
  if (d_examples.empty())
    throw PipelineError("no valid rationales for the training set; inspect the abduction summary and rationale file");

  StageConfig c1 = distill_cfg;
  c1.stage = Stage::distill;
  StageResult r1 = train_stage(learner, d_examples, c1, log);
  Checkpoint ck1 = finish(learner, Stage::distill, c1, train, r1.initial_digest);

  StageConfig c2 = infer_cfg;
  c2.stage = Stage::infer;
  StageResult r2 = train_stage(learner, infer_examples(train), c2, log);
  if (r2.initial_digest != r1.final_digest)
    throw PipelineError("stage-2 parameters do not start from the stage-1 result");
  Checkpoint ck2 = finish(learner, Stage::infer, c2, train, r1.final_digest);
  return TwoStageResult{std::move(r1), std::move(r2), std::move(ck1), std::move(ck2)};
}

SingleStageResult run_infer_only(Learner& learner, const Dataset& train, const StageConfig& cfg, std::ostream* log) {
  require_train_split(train);
  StageConfig c = cfg;
  c.stage = Stage::infer;
  StageResult r = train_stage(learner, infer_examples(train), c, log);
  Checkpoint ck = finish(learner, Stage::infer, c, train, r.initial_digest);
  return SingleStageResult{std::move(r), std::move(ck)};
}

SingleStageResult run_one_stage(Learner& learner, const Dataset& train, const DistillationSet& rationales,
                                Stage variant, const StageConfig& cfg, std::ostream* log) {
  if (variant != Stage::one_stage_explanation && variant != Stage::one_stage_reasoning)
    throw ArgumentError("unknown one-stage variant '" + std::string(to_string(variant)) + "'");
  require_train_split(train);
  const auto examples = one_stage_examples(train, rationales, variant);
  if (examples.empty())
    throw PipelineError("no valid rationales for the training set; inspect the abduction summary and rationale file");
  StageConfig c = cfg;
  c.stage = variant;
  StageResult r = train_stage(learner, examples, c, log);
  Checkpoint ck = finish(learner, variant, c, train, r.initial_digest);
  return SingleStageResult{std::move(r), std::move(ck)};
}

}  // namespace memefuse
