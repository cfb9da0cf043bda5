#include "memefuse/pipeline.hpp"

#include <algorithm>

#include "memefuse/errors.hpp"

namespace memefuse {

Learner::Learner(WordTokenizer tokenizer, Model model, LearnerOptions options, const CaptionCache* captions)
    : tokenizer_(std::move(tokenizer)), model_(std::move(model)), options_(std::move(options)), captions_(captions) {
  if (tokenizer_.size() > model_.config().vocab)
    throw ConfigError("tokenizer has " + std::to_string(tokenizer_.size()) + " pieces but the model vocab is " +
                      std::to_string(model_.config().vocab));
}

Learner Learner::create(WordTokenizer tokenizer, ModelConfig config, std::uint64_t seed, LearnerOptions options,
                        const CaptionCache* captions) {
  config.vocab = std::max(config.vocab, tokenizer.size());
  Model model(config, seed);
  return Learner(std::move(tokenizer), std::move(model), std::move(options), captions);
}

Learner Learner::from_checkpoint(const Checkpoint& ckpt, const CaptionCache* captions, std::string caption_backend) {
  LearnerOptions opts;
  opts.mode = ckpt.meta.mode;
  opts.caption_backend = std::move(caption_backend);
  return Learner(ckpt.tokenizer, ckpt.model, opts, captions);
}

PreparedInput Learner::prepare(const MemeSample& sample) {
  PreparedInput in;
  const int m_max = model_.config().m_max;
  if (uses_caption(options_.mode)) {
    std::optional<std::string> caption;
    if (captions_) caption = captions_->find(sample.id, options_.caption_backend);
    if (!caption)
      throw PipelineError("caption-append mode needs a '" + options_.caption_backend + "' caption for meme " +
                          sample.id);
    in.tokens = encoder_tokens(tokenizer_, sample.text, &*caption, m_max);
  } else {
    in.tokens = encoder_tokens(tokenizer_, sample.text, nullptr, m_max);
  }
  if (uses_vision(options_.mode)) {
    auto it = vision_cache_.find(sample.id);
    if (it == vision_cache_.end()) {
      const ImageRef image = options_.use_clean_image ? separate_text_and_image(sample).clean_image : sample.image;
      it = vision_cache_.emplace(sample.id, model_.extract_vision(prepare_pixels(image))).first;
    }
    in.raw_vision = it->second;
  }
  return in;
}

Model::EncoderState Learner::encode(Model::Tape& tape, const PreparedInput& input) {
  return model_.encode(tape, input.tokens, input.raw_vision.size() ? &input.raw_vision : nullptr, options_.mode);
}

std::string Learner::generate(const MemeSample& sample, int max_len) {
  const PreparedInput in = prepare(sample);
  Model::Tape tape(false);
  auto state = encode(tape, in);
  return tokenizer_.decode(model_.generate_greedy(state.hidden.value(), state.key_mask, max_len));
}

double Learner::loss(const MemeSample& sample, const std::string& target) {
  const PreparedInput in = prepare(sample);
  Model::Tape tape(false);
  auto state = encode(tape, in);
  const auto targets = target_tokens(tokenizer_, target, model_.config().max_target);
  return model_.teacher_forced_loss(tape, state, targets).value()(0, 0);
}

Checkpoint Learner::checkpoint(Stage stage, std::uint64_t seed, std::string parent_digest, std::string dataset) const {
  CheckpointMeta meta;
  meta.stage = stage;
  meta.mode = options_.mode;
  meta.seed = seed;
  meta.parent_digest = std::move(parent_digest);
  meta.dataset = std::move(dataset);
  return Checkpoint{meta, tokenizer_, model_};
}

WordTokenizer build_tokenizer(const std::vector<const Dataset*>& datasets, const std::vector<RationaleRecord>& rationales,
                              const CaptionCache* captions) {
  std::vector<std::string> corpus;
  for (const auto* ds : datasets)
    for (const auto& s : ds->samples) corpus.push_back(s.text);
  for (const auto& r : rationales) corpus.push_back(r.rationale);
  if (captions)
    for (const auto& c : captions->records()) corpus.push_back(c.caption);
  return WordTokenizer::build(corpus);
}

}  // namespace memefuse
