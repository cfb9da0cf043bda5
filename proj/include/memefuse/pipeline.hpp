#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "memefuse/abduction.hpp"
#include "memefuse/checkpoint.hpp"
#include "memefuse/data.hpp"
#include "memefuse/model.hpp"
#include "memefuse/preprocess.hpp"
#include "memefuse/tokenizer.hpp"

namespace memefuse {

/// Model inputs for one meme.
struct PreparedInput {
  std::vector<int> tokens;
  Eigen::MatrixXd raw_vision;  // n x d_v; empty outside full mode
};

struct LearnerOptions {
  AblationMode mode = AblationMode::full;
  std::string caption_backend = "stub";
  /// Feed the text-free image from the separator to the extractor instead of the raw meme.
  bool use_clean_image = true;
};

/// A model together with its tokenizer and input preparation. Frozen vision
/// features are computed once per meme id and reused.
class Learner {
 public:
  Learner(WordTokenizer tokenizer, Model model, LearnerOptions options, const CaptionCache* captions = nullptr);
  /// Fresh model for `config`; the vocab is widened to fit the tokenizer.
  static Learner create(WordTokenizer tokenizer, ModelConfig config, std::uint64_t seed, LearnerOptions options,
                        const CaptionCache* captions = nullptr);
  static Learner from_checkpoint(const Checkpoint& ckpt, const CaptionCache* captions = nullptr,
                                 std::string caption_backend = "stub");

  Model& model() { return model_; }
  const Model& model() const { return model_; }
  const WordTokenizer& tokenizer() const { return tokenizer_; }
  AblationMode mode() const { return options_.mode; }
  const LearnerOptions& options() const { return options_; }
  void set_captions(const CaptionCache* captions) { captions_ = captions; }

  /// Throws PipelineError when caption-append mode has no caption for the meme.
  PreparedInput prepare(const MemeSample& sample);

  Model::EncoderState encode(Model::Tape& tape, const PreparedInput& input);
  /// Greedy decode for one meme.
  std::string generate(const MemeSample& sample, int max_len);
  /// Teacher-forced loss of `target` without touching gradients.
  double loss(const MemeSample& sample, const std::string& target);

  Checkpoint checkpoint(Stage stage, std::uint64_t seed, std::string parent_digest = {},
                        std::string dataset = {}) const;

 private:
  WordTokenizer tokenizer_;
  Model model_;
  LearnerOptions options_;
  const CaptionCache* captions_;
  std::map<std::string, Eigen::MatrixXd> vision_cache_;
};

/// Tokenizer vocabulary from every text the pipeline will see: meme texts,
/// rationales and captions.
WordTokenizer build_tokenizer(const std::vector<const Dataset*>& datasets, const std::vector<RationaleRecord>& rationales,
                              const CaptionCache* captions);

}  // namespace memefuse
