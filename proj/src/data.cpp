#include "memefuse/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "memefuse/digest.hpp"
#include "memefuse/errors.hpp"
#include "memefuse/random.hpp"

namespace memefuse {

namespace {

std::string normalize(std::string_view raw) {
  std::size_t b = 0;
  std::size_t e = raw.size();
  while (b < e && std::isspace(static_cast<unsigned char>(raw[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(raw[e - 1]))) --e;
  std::string out(raw.substr(b, e - b));
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

std::string_view to_string(Label label) {
  return label == Label::harmful ? "harmful" : "harmless";
}

std::optional<Label> label_from_string(std::string_view text) {
  if (text == "harmful") return Label::harmful;
  if (text == "harmless") return Label::harmless;
  return std::nullopt;
}

Label merge_harm_labels(std::string_view raw) {
  const std::string key = normalize(raw);
  if (key == "very harmful" || key == "partially harmful" || key == "harmful") return Label::harmful;
  if (key == "harmless") return Label::harmless;
  throw UnknownLabelError("unknown harmfulness label '" + std::string(raw) + "'");
}

ImageRef ImageRef::from_path(std::string path) { return ImageRef{std::move(path), nullptr}; }

ImageRef ImageRef::from_bytes(std::string name, Bytes data) {
  return ImageRef{std::move(name), std::make_shared<const Bytes>(std::move(data))};
}

Bytes ImageRef::load() const {
  if (bytes) return *bytes;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DecodeError("cannot read image " + path);
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

bool operator==(const ImageRef& a, const ImageRef& b) {
  if (a.path != b.path) return false;
  if (a.bytes && b.bytes) return *a.bytes == *b.bytes;
  return true;
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "train";
}

Split split_from_string(std::string_view text) {
  const std::string key = normalize(text);
  if (key == "train") return Split::train;
  if (key == "validation" || key == "val" || key == "dev") return Split::validation;
  if (key == "test") return Split::test;
  throw ArgumentError("unknown split '" + std::string(text) + "'");
}

const MemeSample& Dataset::at(std::string_view id) const {
  for (const auto& s : samples)
    if (s.id == id) return s;
  throw ArgumentError("no sample with id '" + std::string(id) + "'");
}

void Dataset::validate() const {
  std::unordered_set<std::string> seen;
  for (const auto& s : samples) {
    if (!seen.insert(s.id).second) throw IntegrityError("duplicate sample id '" + s.id + "'");
    if (blank(s.text)) throw IntegrityError("sample '" + s.id + "' has empty text");
  }
}

Dataset Dataset::shuffled(std::uint64_t seed) const {
  Dataset out = *this;
  Rng rng(seed);
  rng.shuffle(out.samples);
  return out;
}

std::string Dataset::digest() const {
  Sha256 h;
  h.update_field(name).update_field(to_string(split));
  for (const auto& s : samples) {
    h.update_field(s.id).update_field(s.image.path).update_field(s.text);
    h.update_field(s.label ? to_string(*s.label) : "");
  }
  return h.hex_digest();
}

Dataset load_dataset(const std::filesystem::path& path, Split split, std::ostream* warn) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open dataset " + path.string());
  static const std::set<std::string> known{"id", "image_path", "text", "label"};

  Dataset ds;
  ds.name = path.stem().string();
  ds.split = split;
  const auto base = path.parent_path();
  std::unordered_set<std::string> ids;
  std::set<std::string> warned;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(path.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
    auto where = [&] { return path.string() + " line " + std::to_string(lineno) + ": "; };
    if (!obj.is_object()) throw ParseError(where() + "expected a JSON object");
    for (const auto& key : {"id", "image_path", "text"}) {
      if (!obj.contains(key) || !obj[key].is_string())
        throw ParseError(where() + "missing string field '" + key + "'");
    }
    if (warn) {
      for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!known.count(it.key()) && warned.insert(it.key()).second)
          *warn << "warning: " << where() << "ignoring unknown key '" << it.key() << "'\n";
      }
    }
    MemeSample s;
    s.id = obj["id"].get<std::string>();
    std::filesystem::path img = obj["image_path"].get<std::string>();
    if (img.is_relative() && !base.empty()) img = base / img;
    s.image = ImageRef::from_path(img.lexically_normal().string());
    s.text = obj["text"].get<std::string>();
    if (obj.contains("label") && !obj["label"].is_null()) {
      if (!obj["label"].is_string()) throw ParseError(where() + "label must be a string");
      s.label = merge_harm_labels(obj["label"].get<std::string>());
    }
    if (!ids.insert(s.id).second)
      throw IntegrityError(where() + "duplicate sample id '" + s.id + "'");
    if (blank(s.text)) throw IntegrityError(where() + "sample '" + s.id + "' has empty text");
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path,
                  const std::filesystem::path& image_dir) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write dataset " + path.string());
  const fs::path base = path.parent_path();
  for (const auto& s : dataset.samples) {
    fs::path img = s.image.path;
    if (s.image.bytes) {
      if (image_dir.empty()) throw ArgumentError("sample '" + s.id + "' has inline image bytes; pass an image_dir");
      fs::create_directories(image_dir);
      img = image_dir / fs::path(s.image.path).filename();
      std::ofstream io(img, std::ios::binary);
      io.write(reinterpret_cast<const char*>(s.image.bytes->data()),
               static_cast<std::streamsize>(s.image.bytes->size()));
    }
    std::string stored = img.string();
    if (!base.empty() && img.is_absolute() == base.is_absolute()) {
      auto rel = img.lexically_relative(base);
      if (!rel.empty()) stored = rel.string();
    }
    nlohmann::json obj{{"id", s.id}, {"image_path", stored}, {"text", s.text}};
    if (s.label) obj["label"] = to_string(*s.label);
    out << obj.dump() << '\n';
  }
}

DatasetStats compute_stats(const Dataset& dataset) {
  DatasetStats st;
  for (const auto& s : dataset.samples) {
    if (!s.label) throw MissingLabelError("sample '" + s.id + "' has no label");
    (*s.label == Label::harmful ? st.n_harmful : st.n_harmless) += 1;
  }
  return st;
}

void require_labels(const Dataset& dataset) {
  for (const auto& s : dataset.samples)
    if (!s.label) throw MissingLabelError("sample '" + s.id + "' has no label");
}

namespace {

constexpr std::array kSubjects{"my neighbor", "the new intern", "those tourists", "that group",
                               "our landlord", "the referee", "people like them", "the other team"};
constexpr std::array kHarmfulTails{"deserve to be mocked", "should be thrown out", "are all liars",
                                   "ruin everything they touch", "are a disease", "need to disappear"};
constexpr std::array kActivities{"finally finish the puzzle", "get a free coffee", "find your keys",
                                 "watch the sunset", "beat the high score", "bake bread"};
constexpr std::array kTimes{"on a monday", "before lunch", "after the storm", "at the beach",
                            "on vacation", "with grandma"};

/// Binary PPM (P6); harmful memes lean warm, harmless ones lean cool.
Bytes draw_fixture_image(Rng& rng, Label label, int side) {
  std::string header = "P6\n" + std::to_string(side) + " " + std::to_string(side) + "\n255\n";
  Bytes out(header.begin(), header.end());
  const bool warm = label == Label::harmful;
  const int base_r = warm ? 150 + static_cast<int>(rng.index(80)) : 20 + static_cast<int>(rng.index(60));
  const int base_g = 40 + static_cast<int>(rng.index(80));
  const int base_b = warm ? 20 + static_cast<int>(rng.index(60)) : 150 + static_cast<int>(rng.index(80));
  const int cx = static_cast<int>(rng.index(static_cast<std::size_t>(side)));
  const int cy = static_cast<int>(rng.index(static_cast<std::size_t>(side)));
  const int radius = 3 + static_cast<int>(rng.index(static_cast<std::size_t>(side / 3)));
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const bool inside = (x - cx) * (x - cx) + (y - cy) * (y - cy) <= radius * radius;
      const int shade = (x + y) % 8;
      out.push_back(static_cast<std::uint8_t>(inside ? 255 - base_r / 2 : std::min(255, base_r + shade)));
      out.push_back(static_cast<std::uint8_t>(inside ? 255 - base_g / 2 : base_g));
      out.push_back(static_cast<std::uint8_t>(inside ? 255 - base_b / 2 : std::min(255, base_b + shade)));
    }
  }
  return out;
}

template <std::size_t N>
std::string pick(Rng& rng, const std::array<const char*, N>& bank) {
  return bank[rng.index(N)];
}

}  // namespace

Dataset make_fixture_set(std::uint64_t seed, std::size_t n) {
  if (n < 2 || n % 2 != 0) throw ArgumentError("fixture size must be even and at least 2, got " + std::to_string(n));
  Rng rng(seed);
  std::vector<Label> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i < n / 2 ? Label::harmful : Label::harmless;
  rng.shuffle(labels);

  Dataset ds;
  ds.name = "fixture-" + std::to_string(seed);
  ds.split = Split::train;
  for (std::size_t i = 0; i < n; ++i) {
    MemeSample s;
    s.id = "m" + std::to_string(i + 1);
    s.label = labels[i];
    if (labels[i] == Label::harmful) {
      s.text = pick(rng, kSubjects) + " " + pick(rng, kHarmfulTails);
    } else {
      s.text = "when you " + pick(rng, kActivities) + " " + pick(rng, kTimes);
    }
    s.image = ImageRef::from_bytes(s.id + ".ppm", draw_fixture_image(rng, labels[i], 32));
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace memefuse
