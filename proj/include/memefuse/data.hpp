#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace memefuse {

enum class Label { harmful, harmless };

std::string_view to_string(Label label);
/// Strict parse of the canonical lowercase forms.
std::optional<Label> label_from_string(std::string_view text);

/// Maps the raw dataset annotations onto the binary label. "very harmful" and
/// "partially harmful" collapse into harmful. Case and surrounding whitespace
/// are ignored. Throws UnknownLabelError for anything else.
Label merge_harm_labels(std::string_view raw);

using Bytes = std::vector<std::uint8_t>;

/// An image either on disk or held in memory. Equality compares the path and,
/// when both sides carry inline bytes, the bytes.
struct ImageRef {
  std::string path;
  std::shared_ptr<const Bytes> bytes;

  static ImageRef from_path(std::string path);
  static ImageRef from_bytes(std::string name, Bytes data);

  /// Inline bytes when present, otherwise the file contents.
  Bytes load() const;

  friend bool operator==(const ImageRef& a, const ImageRef& b);
};

struct MemeSample {
  std::string id;
  ImageRef image;
  std::string text;
  std::optional<Label> label;

  friend bool operator==(const MemeSample&, const MemeSample&) = default;
};

enum class Split { train, validation, test };

std::string_view to_string(Split split);
Split split_from_string(std::string_view text);

struct Dataset {
  std::string name;
  Split split = Split::train;
  std::vector<MemeSample> samples;

  std::size_t size() const { return samples.size(); }
  const MemeSample& at(std::string_view id) const;
  /// Throws IntegrityError on a duplicate id or an empty text.
  void validate() const;
  /// Deterministic permutation of the sample order.
  Dataset shuffled(std::uint64_t seed) const;
  /// Canonical digest of ids, texts, labels and image paths.
  std::string digest() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct DatasetStats {
  std::size_t n_harmful = 0;
  std::size_t n_harmless = 0;

  std::size_t total() const { return n_harmful + n_harmless; }
  friend bool operator==(const DatasetStats&, const DatasetStats&) = default;
};

/// Reads a JSON Lines dataset. Relative image paths resolve against the file's
/// directory. Blank lines are skipped; unknown keys produce a warning on `warn`.
Dataset load_dataset(const std::filesystem::path& path, Split split, std::ostream* warn = nullptr);

/// Writes `dataset` as JSON Lines. Samples whose image lives only in memory are
/// written under `image_dir` (created on demand) and referenced by path.
void save_dataset(const Dataset& dataset, const std::filesystem::path& path,
                  const std::filesystem::path& image_dir = {});

DatasetStats compute_stats(const Dataset& dataset);

/// Throws MissingLabelError naming the first unlabeled sample.
void require_labels(const Dataset& dataset);

/// Balanced synthetic memes with procedurally drawn PPM images. Identical
/// (seed, n) produce identical datasets. n must be even and at least 2.
Dataset make_fixture_set(std::uint64_t seed, std::size_t n);

}  // namespace memefuse
