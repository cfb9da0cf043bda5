#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "memefuse/data.hpp"

namespace memefuse {

inline constexpr int kImageSize = 224;

/// Decoded 8-bit RGB image, channel-last.
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> rgb;  // height * width * 3
};

/// Decodes PNG/JPEG/PPM and friends. Throws DecodeError.
RgbImage decode_image(const Bytes& bytes);

/// 224x224x3 image scaled to [0,1]. Row `y * 224 + x` holds the (r, g, b) triple.
struct PixelGrid {
  static constexpr int height = kImageSize;
  static constexpr int width = kImageSize;
  static constexpr int channels = 3;
  Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> values;

  double at(int y, int x, int c) const { return values(y * width + x, c); }
};

/// Bilinear resampling with half-pixel centers (corners not aligned).
PixelGrid resize_bilinear(const RgbImage& image);

PixelGrid prepare_pixels(const ImageRef& image);

struct CaptionRecord {
  std::string meme_id;
  std::string caption;
  std::string backend;

  friend bool operator==(const CaptionRecord&, const CaptionRecord&) = default;
};

class CaptionBackend {
 public:
  virtual ~CaptionBackend() = default;
  virtual std::string name() const = 0;
  virtual std::string caption(const Bytes& image_bytes) const = 0;
};

/// Deterministic captioner: a SHA-256 of the image bytes indexes a fixed phrase bank.
class StubCaptioner final : public CaptionBackend {
 public:
  std::string name() const override { return "stub"; }
  std::string caption(const Bytes& image_bytes) const override;
};

struct SeparatedMeme {
  std::string embedded_text;
  ImageRef clean_image;
};

class TextSeparator {
 public:
  virtual ~TextSeparator() = default;
  virtual std::string name() const = 0;
  virtual SeparatedMeme separate(const MemeSample& sample) const = 0;
};

/// Returns the stored text and the untouched image after checking it decodes.
class StubSeparator final : public TextSeparator {
 public:
  std::string name() const override { return "stub"; }
  SeparatedMeme separate(const MemeSample& sample) const override;
};

SeparatedMeme separate_text_and_image(const MemeSample& sample, const TextSeparator& backend = StubSeparator{});

/// Name -> factory registry for captioners. "stub" is always registered.
class BackendRegistry {
 public:
  using CaptionFactory = std::function<std::unique_ptr<CaptionBackend>()>;

  static BackendRegistry& instance();
  void register_captioner(const std::string& name, CaptionFactory factory);
  /// Throws ConfigError for an unknown name.
  std::unique_ptr<CaptionBackend> captioner(const std::string& name) const;
  std::vector<std::string> captioner_names() const;

 private:
  BackendRegistry();
  std::map<std::string, CaptionFactory> captioners_;
};

CaptionRecord caption_image(const MemeSample& sample, const std::string& backend);

/// Captions keyed by (meme_id, backend), persisted as JSON Lines.
class CaptionCache {
 public:
  CaptionCache() = default;
  static CaptionCache load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::optional<std::string> find(const std::string& meme_id, const std::string& backend) const;
  void put(const CaptionRecord& record);
  std::size_t size() const { return records_.size(); }
  std::vector<CaptionRecord> records() const;

 private:
  std::map<std::pair<std::string, std::string>, std::string> records_;
};

struct CaptionRunStats {
  std::size_t computed = 0;
  std::size_t reused = 0;
};

/// Fills `cache` with one caption per sample, computing only the missing ones.
CaptionRunStats caption_dataset(const Dataset& dataset, const std::string& backend, CaptionCache& cache);

}  // namespace memefuse
