#include "memefuse/model.hpp"

#include <algorithm>

namespace memefuse {

std::string_view to_string(AblationMode mode) {
  switch (mode) {
    case AblationMode::full: return "full";
    case AblationMode::no_vision: return "no_vision";
    case AblationMode::caption_append: return "caption_append";
    case AblationMode::text_only: return "text_only";
  }
  return "full";
}

AblationMode ablation_mode_from_string(std::string_view text) {
  if (text == "full") return AblationMode::full;
  if (text == "no_vision") return AblationMode::no_vision;
  if (text == "caption_append" || text == "no_fusion_text_plus_caption") return AblationMode::caption_append;
  if (text == "text_only") return AblationMode::text_only;
  throw ConfigError("unknown ablation mode '" + std::string(text) + "'");
}

bool modes_compatible(AblationMode trained, AblationMode requested) {
  auto canon = [](AblationMode m) { return m == AblationMode::text_only ? AblationMode::no_vision : m; };
  return canon(trained) == canon(requested);
}

std::string_view to_string(SizePreset preset) {
  switch (preset) {
    case SizePreset::tiny: return "tiny";
    case SizePreset::small: return "small";
    case SizePreset::base: return "base";
    case SizePreset::large: return "large";
  }
  return "tiny";
}

SizePreset size_preset_from_string(std::string_view text) {
  if (text == "tiny") return SizePreset::tiny;
  if (text == "small") return SizePreset::small;
  if (text == "base") return SizePreset::base;
  if (text == "large") return SizePreset::large;
  throw ConfigError("unknown size preset '" + std::string(text) + "'");
}

ModelConfig ModelConfig::for_preset(SizePreset preset, int vocab) {
  ModelConfig c;
  c.preset = preset;
  c.vocab = vocab;
  auto big = [&](int layers, int d, int heads, int d_ff) {
    c.layers = layers;
    c.decoder_layers = layers;
    c.d = d;
    c.heads = heads;
    c.d_ff = d_ff;
    c.m_max = 128;
    c.max_target = 256;
    c.patches = 49;
    c.d_v = 768;
    c.init_std = 1.0;
  };
  switch (preset) {
    case SizePreset::tiny: break;
    case SizePreset::small: big(8, 512, 8, 1024); break;
    case SizePreset::base: big(12, 768, 12, 2048); break;
    case SizePreset::large: big(24, 1024, 16, 2816); break;
  }
  return c;
}

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid model config: " + what);
  };
  need(layers >= 1, "layers must be >= 1");
  need(decoder_layers >= 1, "decoder_layers must be >= 1");
  need(d >= 1, "d must be >= 1");
  need(heads >= 1 && d % heads == 0, "heads must divide d");
  need(d_ff >= 1, "d_ff must be >= 1");
  need(m_max >= 1 && max_target >= 1, "sequence limits must be >= 1");
  need(d_v >= 1, "d_v must be >= 1");
  need(vocab > token_id::sep, "vocab must hold the reserved tokens");
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(patches))));
  need(patches >= 1 && side * side == patches && kImageSize % side == 0, "patches must be a square tiling 224");
}

std::int64_t ModelConfig::parameter_count() const {
  const std::int64_t D = d, F = d_ff, V = vocab;
  const std::int64_t attn = 4 * D * D;
  const std::int64_t ff = 3 * D * F;
  const std::int64_t enc = layers * (attn + ff + 2 * D);
  const std::int64_t fusion = layers * (4 * D * D + 4 * D);
  const std::int64_t dec = decoder_layers * (2 * attn + ff + 3 * D);
  const std::int64_t embed = V * D + static_cast<std::int64_t>(m_max + max_target) * D;
  const std::int64_t head = D * V + V + 2 * D;
  const std::int64_t vision = static_cast<std::int64_t>(d_v) * D + D;
  return enc + fusion + dec + embed + head + vision;
}

ad::BoolMask key_mask_for(std::span<const int> tokens) {
  ad::BoolMask mask(1, static_cast<Eigen::Index>(tokens.size()));
  for (std::size_t i = 0; i < tokens.size(); ++i) mask(0, static_cast<Eigen::Index>(i)) = tokens[i] != token_id::pad;
  return mask;
}

template class FusionSeq2Seq<double>;
template class FusionSeq2Seq<float>;

}  // namespace memefuse
