#include "memefuse/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "memefuse/errors.hpp"

namespace memefuse {

WordTokenizer::WordTokenizer() {
  for (const char* piece : {"<pad>", "</s>", "<unk>"}) {
    index_[piece] = static_cast<int>(vocab_.size());
    vocab_.emplace_back(piece);
  }
  index_[std::string(kSepText)] = token_id::sep;
  vocab_.emplace_back(kSepText);
}

WordTokenizer WordTokenizer::from_vocab(std::vector<std::string> vocab) {
  WordTokenizer t;
  for (auto& piece : vocab) {
    if (t.index_.count(piece)) continue;
    t.index_[piece] = static_cast<int>(t.vocab_.size());
    t.vocab_.push_back(std::move(piece));
  }
  return t;
}

std::vector<std::string> WordTokenizer::split(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
    } else if (text.substr(i, kSepText.size()) == kSepText) {
      out.emplace_back(kSepText);
      i += kSepText.size();
    } else if (std::isalnum(c) || c >= 0x80) {
      std::size_t j = i;
      while (j < text.size()) {
        const auto cj = static_cast<unsigned char>(text[j]);
        if (std::isalnum(cj) || cj >= 0x80) {
          ++j;
        } else if (cj == '\'' && j + 1 < text.size() && std::isalpha(static_cast<unsigned char>(text[j + 1]))) {
          j += 2;
        } else {
          break;
        }
      }
      std::string w(text.substr(i, j - i));
      std::transform(w.begin(), w.end(), w.begin(),
                     [](unsigned char ch) { return ch < 0x80 ? static_cast<char>(std::tolower(ch)) : ch; });
      out.push_back(std::move(w));
      i = j;
    } else {
      out.emplace_back(1, static_cast<char>(c));
      ++i;
    }
  }
  return out;
}

WordTokenizer WordTokenizer::build(const std::vector<std::string>& corpus) {
  std::set<std::string> pieces;
  for (const auto& text : corpus)
    for (auto& p : split(text)) pieces.insert(std::move(p));
  pieces.insert("harmful");
  pieces.insert("harmless");
  return from_vocab(std::vector<std::string>(pieces.begin(), pieces.end()));
}

std::optional<int> WordTokenizer::id_of(const std::string& piece) const {
  auto it = index_.find(piece);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<int> WordTokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& p : split(text)) ids.push_back(id_of(p).value_or(token_id::unk));
  return ids;
}

std::string WordTokenizer::decode(const std::vector<int>& ids) const {
  static const std::string tight = ".,!?;:)";
  std::string out;
  for (int id : ids) {
    if (id == token_id::eos) break;
    if (id == token_id::pad) continue;
    if (id < 0 || id >= size()) throw EncodingError("token id " + std::to_string(id) + " outside the vocabulary");
    const std::string& piece = vocab_[static_cast<std::size_t>(id)];
    const bool attach = piece.size() == 1 && tight.find(piece[0]) != std::string::npos;
    if (!out.empty() && !attach) out += ' ';
    out += piece;
  }
  return out;
}

std::vector<int> encoder_tokens(const WordTokenizer& tok, const std::string& text, const std::string* caption,
                                int max_len) {
  std::vector<int> ids = tok.encode(text);
  if (caption) {
    ids.push_back(token_id::sep);
    auto c = tok.encode(*caption);
    ids.insert(ids.end(), c.begin(), c.end());
  }
  if (ids.empty()) throw EncodingError("encoder input is empty");
  if (static_cast<int>(ids.size()) > max_len) ids.resize(static_cast<std::size_t>(max_len));
  return ids;
}

std::vector<int> target_tokens(const WordTokenizer& tok, const std::string& text, int max_len) {
  std::vector<int> ids = tok.encode(text);
  if (max_len < 1) throw ArgumentError("target length must be at least 1");
  if (static_cast<int>(ids.size()) > max_len - 1) ids.resize(static_cast<std::size_t>(max_len - 1));
  ids.push_back(token_id::eos);
  return ids;
}

}  // namespace memefuse
