#include "memefuse/abduction.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <regex>
#include <thread>

#include <nlohmann/json.hpp>

#include "memefuse/digest.hpp"
#include "memefuse/errors.hpp"

namespace memefuse {

namespace {

bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string PromptBundle::hash() const {
  Sha256 h;
  h.update_field(system).update_field(user).update_field(format_real(temperature));
  h.update_field(std::to_string(max_tokens));
  return h.hex_digest();
}

std::string render_system_prompt() {
  return "You have been specially designed to perform abductive reasoning for the harmful meme detection "
         "task. Your primary function is that, according to a harmfulness label about an image with a text "
         "embedded, please provide a streamlined rationale, without explicitly indicating the label, for how "
         "it is reasoned as the given harmfulness label. The image and the textual content in the meme are "
         "often uncorrelated, but its overall semantics is presented holistically. Thus it is important to "
         "note that you are prohibited from relying on your own imagination, as your goal is to provide the "
         "most accurate and reliable rationale possible so that people can infer the harmfulness according "
         "to your reasoning about the background context and relationship between the given text and image.";
}

std::string render_user_prompt(const std::string& text, const std::string& caption, Label label) {
  if (blank(text)) throw ArgumentError("user prompt needs non-empty meme text");
  if (blank(caption)) throw ArgumentError("user prompt needs a non-empty image caption");
  const std::string y(to_string(label));
  return "Given a Text: \"" + text + "\", which is embedded in an Image: \"" + caption +
         "\"; and a harmfulness label " + y +
         ", please give me a streamlined rationale associated with the meme, without explicitly indicating "
         "the label, for how it is reasoned as " + y + ".";
}

PromptBundle make_bundle(const std::string& text, const std::string& caption, Label label) {
  return PromptBundle{render_system_prompt(), render_user_prompt(text, caption, label), 0.0, 256};
}

std::optional<std::string> label_declaration(const std::string& rationale) {
  using std::regex;
  static const std::vector<std::pair<std::string, regex>> patterns = [] {
    const auto flags = regex::ECMAScript | regex::icase;
    return std::vector<std::pair<std::string, regex>>{
        {"the label is", regex(R"(\bthe\s+label\s+is\b)", flags)},
        {"labeled as", regex(R"(\blabell?ed\s+as\b)", flags)},
        {"classified as", regex(R"(\bclassified\s+as\s+(harmful|harmless)\b)", flags)},
        {"leading label token", regex(R"(^\W*(harmful|harmless)\s*:)", flags)},
    };
  }();
  for (const auto& [name, re] : patterns)
    if (std::regex_search(rationale, re)) return name;
  return std::nullopt;
}

bool validate_rationale(const std::string& rationale, Label) { return !label_declaration(rationale).has_value(); }

std::string ScriptedTransport::complete(const PromptBundle& bundle) {
  const int index = calls_.fetch_add(1);
  return script_(bundle, index);
}

std::string TemplateTeacher::complete(const PromptBundle& bundle) {
  calls_.fetch_add(1);
  static const std::regex re(R"re(Given a Text: "([\s\S]*)", which is embedded in an Image: "([\s\S]*)"; and a harmfulness label (harmful|harmless),)re");
  std::smatch m;
  if (!std::regex_search(bundle.user, m, re)) throw ConfigError("template teacher cannot parse the user prompt");
  const std::string text = m[1];
  const std::string caption = m[2];
  if (m[3] == "harmful") {
    return "the text \"" + text + "\" next to " + caption +
           " targets a group with contempt and invites the audience to mock them.";
  }
  return "the text \"" + text + "\" next to " + caption +
         " is a relatable everyday joke with no target and no hostility.";
}

ReplayTransport ReplayTransport::load(const std::filesystem::path& transcript) {
  std::ifstream in(transcript);
  if (!in) throw FileError("cannot open transcript " + transcript.string());
  ReplayTransport t;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    t.responses_[j.at("prompt_hash").get<std::string>()] = j.at("response").get<std::string>();
  }
  return t;
}

std::string ReplayTransport::complete(const PromptBundle& bundle) {
  auto it = responses_.find(bundle.hash());
  if (it == responses_.end()) throw ConfigError("transcript has no response for prompt " + bundle.hash());
  return it->second;
}

namespace {

nlohmann::json record_to_json(const RationaleRecord& r) {
  return {{"meme_id", r.meme_id}, {"rationale", r.rationale}, {"prompt_hash", r.prompt_hash},
          {"valid", r.valid},     {"attempt", r.attempt}};
}

RationaleRecord record_from_json(const nlohmann::json& j) {
  return {j.at("meme_id").get<std::string>(), j.at("rationale").get<std::string>(),
          j.at("prompt_hash").get<std::string>(), j.at("valid").get<bool>(), j.at("attempt").get<int>()};
}

}  // namespace

std::size_t RationaleCache::load_from(const std::filesystem::path& path) {
  auto loaded = load_rationales(path);
  std::lock_guard lock(mu_);
  for (auto& r : loaded) records_[r.prompt_hash] = std::move(r);
  return loaded.size();
}

void RationaleCache::save(const std::filesystem::path& path) const {
  std::vector<RationaleRecord> all;
  {
    std::lock_guard lock(mu_);
    for (const auto& [_, r] : records_) all.push_back(r);
  }
  save_rationales(all, path);
}

std::optional<RationaleRecord> RationaleCache::find(const std::string& prompt_hash) const {
  std::lock_guard lock(mu_);
  auto it = records_.find(prompt_hash);
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

void RationaleCache::put(const RationaleRecord& record) {
  std::lock_guard lock(mu_);
  records_[record.prompt_hash] = record;
}

std::size_t RationaleCache::size() const {
  std::lock_guard lock(mu_);
  return records_.size();
}

ChatClient::ChatClient(std::shared_ptr<ChatTransport> transport, RetryPolicy retry, int max_inflight)
    : transport_(std::move(transport)),
      retry_(retry),
      max_inflight_(std::clamp(max_inflight, 1, 64)),
      slots_(max_inflight_) {
  if (retry_.max_attempts < 1) throw ConfigError("retry budget must be at least 1");
}

std::vector<TranscriptEntry> ChatClient::transcript() const {
  std::lock_guard lock(transcript_mu_);
  return transcript_;
}

void ChatClient::save_transcript(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write transcript " + path.string());
  auto entries = transcript();
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.prompt_hash < b.prompt_hash; });
  for (const auto& e : entries)
    out << nlohmann::json{{"prompt_hash", e.prompt_hash}, {"system", e.system}, {"user", e.user},
                          {"response", e.response}}.dump()
        << '\n';
}

std::string ChatClient::complete(const PromptBundle& bundle, int* attempts) {
  if (!transport_)
    throw ConfigError("offline mode: prompt " + bundle.hash() +
                      " is not cached; configure a chat client (chat.transport = http, template or replay)");
  auto delay = retry_.base_delay;
  for (int attempt = 1;; ++attempt) {
    slots_.acquire();
    try {
      upstream_calls_.fetch_add(1);
      std::string text = transport_->complete(bundle);
      slots_.release();
      if (attempts) *attempts = attempt;
      std::lock_guard lock(transcript_mu_);
      transcript_.push_back({bundle.hash(), bundle.system, bundle.user, text});
      return text;
    } catch (const TransportError& e) {
      slots_.release();
      if (attempt >= retry_.max_attempts)
        throw TransportError("giving up after " + std::to_string(attempt) + " attempts: " + e.what());
    } catch (...) {
      slots_.release();
      throw;
    }
    if (delay.count() > 0) std::this_thread::sleep_for(delay);
    delay = std::chrono::milliseconds(static_cast<long long>(std::llround(delay.count() * retry_.multiplier)));
  }
}

RationaleRecord request_rationale(ChatClient& client, const PromptBundle& bundle, const std::string& meme_id) {
  const std::string key = bundle.hash();
  if (auto hit = client.cache().find(key)) {
    if (!meme_id.empty()) hit->meme_id = meme_id;
    return *hit;
  }
  int attempts = 0;
  std::string text = client.complete(bundle, &attempts);
  if (blank(text)) throw EmptyRationaleError("empty rationale for prompt " + key);
  const bool valid = !label_declaration(text).has_value();
  RationaleRecord rec{meme_id, std::move(text), key, valid, attempts};
  client.cache().put(rec);
  return rec;
}

std::vector<RationaleRecord> DistillationSet::targets() const {
  std::vector<RationaleRecord> out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out), [](const auto& r) { return r.valid; });
  return out;
}

const RationaleRecord* DistillationSet::find(const std::string& meme_id) const {
  for (const auto& r : records)
    if (r.meme_id == meme_id) return &r;
  return nullptr;
}

DistillationSet build_distillation_set(const Dataset& dataset, const CaptionCache& captions,
                                       const std::string& caption_backend, ChatClient& client, std::ostream* log) {
  if (dataset.split != Split::train)
    throw GuardError("abductive reasoning runs on training data only; got split '" +
                     std::string(to_string(dataset.split)) + "'");
  require_labels(dataset);
  std::vector<std::string> caption_of(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& s = dataset.samples[i];
    auto c = captions.find(s.id, caption_backend);
    if (!c) throw PipelineError("no '" + caption_backend + "' caption for meme " + s.id);
    caption_of[i] = *c;
  }

  DistillationSet out;
  out.records.resize(dataset.size());
  std::vector<char> reprompted(dataset.size(), 0);
  std::vector<std::exception_ptr> errors(dataset.size());

  auto work = [&](std::size_t i) {
    const auto& s = dataset.samples[i];
    PromptBundle bundle = make_bundle(s.text, caption_of[i], *s.label);
    RationaleRecord rec = request_rationale(client, bundle, s.id);
    if (auto why = label_declaration(rec.rationale)) {
      reprompted[i] = 1;
      bundle.user += "\n\nYour previous rationale was rejected because it explicitly stated the label (\"" +
                     *why + "\"). Explain the reasoning without naming the label.";
      rec = request_rationale(client, bundle, s.id);
      rec.valid = validate_rationale(rec.rationale, *s.label);
    }
    out.records[i] = rec;
  };

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < dataset.size();) {
      try {
        work(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_workers = std::min<std::size_t>(static_cast<std::size_t>(client.max_inflight()), dataset.size());
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  for (std::size_t i = 0; i < out.records.size(); ++i) {
    out.summary.total += 1;
    out.summary.reprompted += reprompted[i];
    (out.records[i].valid ? out.summary.valid : out.summary.invalid) += 1;
  }
  if (log) {
    *log << "abduction: " << out.summary.total << " rationales, " << out.summary.valid << " valid, "
         << out.summary.invalid << " invalid, " << out.summary.reprompted << " re-prompted\n";
    if (out.summary.valid == 0 && out.summary.total > 0)
      *log << "warning: no valid rationales; the reasoning-distillation target set is empty\n";
  }
  return out;
}

void save_rationales(const std::vector<RationaleRecord>& records, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write rationales " + path.string());
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
}

std::vector<RationaleRecord> load_rationales(const std::filesystem::path& path) {
  std::vector<RationaleRecord> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace memefuse
