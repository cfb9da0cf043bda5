#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "memefuse/model.hpp"
#include "memefuse/tokenizer.hpp"

namespace memefuse {

using Model = FusionSeq2Seq<double>;

enum class Stage { distill, infer, one_stage_explanation, one_stage_reasoning };

std::string_view to_string(Stage stage);
Stage stage_from_string(std::string_view text);
inline bool predicts_labels(Stage s) { return s != Stage::distill; }

struct CheckpointMeta {
  Stage stage = Stage::infer;
  AblationMode mode = AblationMode::full;
  std::uint64_t seed = 0;
  std::string optimizer = "adamw(beta1=0.9,beta2=0.999,eps=1e-8)";
  std::string parent_digest;  // trainable digest this stage started from
  std::string dataset;
};

struct Checkpoint {
  CheckpointMeta meta;
  WordTokenizer tokenizer;
  Model model;
};

inline constexpr int kCheckpointVersion = 1;

/// JSON container {format, version, payload, digest}; the digest is SHA-256
/// of the serialized payload. Returns that digest.
std::string save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws IntegrityError on a digest mismatch or unsupported version.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace memefuse
