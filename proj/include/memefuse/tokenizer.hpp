#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace memefuse {

namespace token_id {
inline constexpr int pad = 0;  // also the decoder start token
inline constexpr int eos = 1;
inline constexpr int unk = 2;
inline constexpr int sep = 3;
}  // namespace token_id

inline constexpr std::string_view kSepText = "[SEP]";

/// Word-level tokenizer: lowercase words, single punctuation marks, and the
/// literal "[SEP]" marker. Ids 0..3 are reserved for pad, eos, unk and [SEP].
class WordTokenizer {
 public:
  WordTokenizer();
  /// Vocabulary of every piece in `corpus`, sorted, after the reserved ids.
  static WordTokenizer build(const std::vector<std::string>& corpus);
  static WordTokenizer from_vocab(std::vector<std::string> vocab);

  static std::vector<std::string> split(std::string_view text);

  std::vector<int> encode(std::string_view text) const;
  /// Stops at eos, skips pad.
  std::string decode(const std::vector<int>& ids) const;

  int size() const { return static_cast<int>(vocab_.size()); }
  const std::vector<std::string>& vocab() const { return vocab_; }
  std::optional<int> id_of(const std::string& piece) const;

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> index_;
};

/// Encoder input: the meme text, or text ⊕ [SEP] ⊕ caption when `caption` is
/// given. The result is truncated to `max_len`.
std::vector<int> encoder_tokens(const WordTokenizer& tok, const std::string& text,
                                const std::string* caption, int max_len);

/// Target ids followed by eos, truncated so eos always fits in `max_len`.
std::vector<int> target_tokens(const WordTokenizer& tok, const std::string& text, int max_len);

}  // namespace memefuse
