#include "memefuse/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "memefuse/digest.hpp"
#include "memefuse/errors.hpp"

namespace memefuse {

RgbImage decode_image(const Bytes& bytes) {
  if (bytes.empty()) throw DecodeError("empty image buffer");
  cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat bgr;
  try {
    bgr = cv::imdecode(raw, cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    throw DecodeError(std::string("image decode failed: ") + e.what());
  }
  if (bgr.empty() || bgr.type() != CV_8UC3) throw DecodeError("image decode failed");
  RgbImage img;
  img.height = bgr.rows;
  img.width = bgr.cols;
  img.rgb.resize(static_cast<std::size_t>(img.height) * img.width * 3);
  for (int y = 0; y < img.height; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.width; ++x) {
      auto* px = &img.rgb[(static_cast<std::size_t>(y) * img.width + x) * 3];
      px[0] = row[x][2];
      px[1] = row[x][1];
      px[2] = row[x][0];
    }
  }
  return img;
}

namespace {

struct Tap {
  int lo;
  int hi;
  double w;  // weight of hi
};

Tap source_tap(int dst, int dst_size, int src_size) {
  const double scale = static_cast<double>(src_size) / dst_size;
  double src = (dst + 0.5) * scale - 0.5;
  src = std::clamp(src, 0.0, static_cast<double>(src_size - 1));
  const int lo = static_cast<int>(std::floor(src));
  const int hi = std::min(lo + 1, src_size - 1);
  return {lo, hi, src - lo};
}

}  // namespace

PixelGrid resize_bilinear(const RgbImage& image) {
  if (image.height <= 0 || image.width <= 0) throw DecodeError("image has no pixels");
  PixelGrid grid;
  grid.values.resize(static_cast<Eigen::Index>(kImageSize) * kImageSize, 3);
  std::array<Tap, kImageSize> xs{};
  for (int x = 0; x < kImageSize; ++x) xs[x] = source_tap(x, kImageSize, image.width);
  auto px = [&](int y, int x, int c) {
    return image.rgb[(static_cast<std::size_t>(y) * image.width + x) * 3 + c] / 255.0;
  };
  for (int y = 0; y < kImageSize; ++y) {
    const Tap ty = source_tap(y, kImageSize, image.height);
    for (int x = 0; x < kImageSize; ++x) {
      const Tap tx = xs[x];
      for (int c = 0; c < 3; ++c) {
        // a + w * (b - a) is exact when a == b, so flat regions stay flat.
        const double top = px(ty.lo, tx.lo, c) + tx.w * (px(ty.lo, tx.hi, c) - px(ty.lo, tx.lo, c));
        const double bot = px(ty.hi, tx.lo, c) + tx.w * (px(ty.hi, tx.hi, c) - px(ty.hi, tx.lo, c));
        grid.values(y * kImageSize + x, c) = std::clamp(top + ty.w * (bot - top), 0.0, 1.0);
      }
    }
  }
  return grid;
}

PixelGrid prepare_pixels(const ImageRef& image) { return resize_bilinear(decode_image(image.load())); }

namespace {

constexpr std::array kAdjectives{"smiling", "angry",   "tired",    "confused", "proud",  "nervous",
                                 "sleepy",  "excited", "serious",  "surprised", "bored", "cheerful",
                                 "worried", "calm",    "grumpy",   "curious"};
constexpr std::array kNouns{"man",     "woman",  "child",  "dog",    "cat",     "crowd",
                            "politician", "student", "chef", "soldier", "teacher", "robot",
                            "athlete", "farmer", "doctor", "musician"};
constexpr std::array kScenes{"in a kitchen",      "on a stage",         "at a protest",   "in an office",
                             "on a beach",        "in a classroom",     "at a party",     "in the rain",
                             "next to a car",     "in front of a flag", "at a stadium",   "in a forest",
                             "on a city street",  "in a hospital",      "on a farm",      "at a concert"};

}  // namespace

std::string StubCaptioner::caption(const Bytes& image_bytes) const {
  decode_image(image_bytes);
  const std::string hex = sha256_hex(std::span<const std::uint8_t>(image_bytes));
  auto nibble = [&](std::size_t i) { return static_cast<std::size_t>(std::stoi(hex.substr(i, 1), nullptr, 16)); };
  return std::string("a ") + kAdjectives[nibble(0)] + " " + kNouns[nibble(1)] + " " + kScenes[nibble(2)];
}

SeparatedMeme StubSeparator::separate(const MemeSample& sample) const {
  decode_image(sample.image.load());
  return {sample.text, sample.image};
}

SeparatedMeme separate_text_and_image(const MemeSample& sample, const TextSeparator& backend) {
  return backend.separate(sample);
}

BackendRegistry::BackendRegistry() {
  captioners_["stub"] = [] { return std::make_unique<StubCaptioner>(); };
}

BackendRegistry& BackendRegistry::instance() {
  static BackendRegistry registry;
  return registry;
}

void BackendRegistry::register_captioner(const std::string& name, CaptionFactory factory) {
  captioners_[name] = std::move(factory);
}

std::unique_ptr<CaptionBackend> BackendRegistry::captioner(const std::string& name) const {
  auto it = captioners_.find(name);
  if (it == captioners_.end()) throw ConfigError("unknown caption backend '" + name + "'");
  return it->second();
}

std::vector<std::string> BackendRegistry::captioner_names() const {
  std::vector<std::string> names;
  for (const auto& [k, _] : captioners_) names.push_back(k);
  return names;
}

CaptionRecord caption_image(const MemeSample& sample, const std::string& backend) {
  auto captioner = BackendRegistry::instance().captioner(backend);
  std::string text = captioner->caption(sample.image.load());
  if (text.empty()) throw PipelineError("backend '" + backend + "' produced an empty caption for " + sample.id);
  return {sample.id, std::move(text), captioner->name()};
}

CaptionCache CaptionCache::load(const std::filesystem::path& path) {
  CaptionCache cache;
  std::ifstream in(path);
  if (!in) return cache;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      cache.put({j.at("meme_id").get<std::string>(), j.at("caption").get<std::string>(),
                 j.at("backend").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cache;
}

void CaptionCache::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write caption cache " + path.string());
  for (const auto& r : records())
    out << nlohmann::json{{"meme_id", r.meme_id}, {"caption", r.caption}, {"backend", r.backend}}.dump() << '\n';
}

std::optional<std::string> CaptionCache::find(const std::string& meme_id, const std::string& backend) const {
  auto it = records_.find({meme_id, backend});
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

void CaptionCache::put(const CaptionRecord& record) {
  if (record.caption.empty()) throw IntegrityError("empty caption for " + record.meme_id);
  records_[{record.meme_id, record.backend}] = record.caption;
}

std::vector<CaptionRecord> CaptionCache::records() const {
  std::vector<CaptionRecord> out;
  for (const auto& [key, caption] : records_) out.push_back({key.first, caption, key.second});
  return out;
}

CaptionRunStats caption_dataset(const Dataset& dataset, const std::string& backend, CaptionCache& cache) {
  BackendRegistry::instance().captioner(backend);
  CaptionRunStats stats;
  for (const auto& s : dataset.samples) {
    if (cache.find(s.id, backend)) {
      ++stats.reused;
      continue;
    }
    cache.put(caption_image(s, backend));
    ++stats.computed;
  }
  return stats;
}

}  // namespace memefuse
