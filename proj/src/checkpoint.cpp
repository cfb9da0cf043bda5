#include "memefuse/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "memefuse/digest.hpp"
#include "memefuse/errors.hpp"

namespace memefuse {

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::distill: return "distill";
    case Stage::infer: return "infer";
    case Stage::one_stage_explanation: return "one_stage_explanation";
    case Stage::one_stage_reasoning: return "one_stage_reasoning";
  }
  return "infer";
}

Stage stage_from_string(std::string_view text) {
  if (text == "distill") return Stage::distill;
  if (text == "infer") return Stage::infer;
  if (text == "one_stage_explanation" || text == "explanation") return Stage::one_stage_explanation;
  if (text == "one_stage_reasoning" || text == "reasoning") return Stage::one_stage_reasoning;
  throw ArgumentError("unknown stage '" + std::string(text) + "'");
}

namespace {

using nlohmann::json;

json config_to_json(const ModelConfig& c) {
  return {{"preset", to_string(c.preset)},
          {"layers", c.layers},
          {"decoder_layers", c.decoder_layers},
          {"d", c.d},
          {"heads", c.heads},
          {"d_ff", c.d_ff},
          {"m_max", c.m_max},
          {"max_target", c.max_target},
          {"patches", c.patches},
          {"d_v", c.d_v},
          {"vocab", c.vocab},
          {"init_std", c.init_std},
          {"fusion_init_std", c.fusion_init_std},
          {"zero_init_fusion_out", c.zero_init_fusion_out}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.preset = size_preset_from_string(j.at("preset").get<std::string>());
  c.layers = j.at("layers");
  c.decoder_layers = j.at("decoder_layers");
  c.d = j.at("d");
  c.heads = j.at("heads");
  c.d_ff = j.at("d_ff");
  c.m_max = j.at("m_max");
  c.max_target = j.at("max_target");
  c.patches = j.at("patches");
  c.d_v = j.at("d_v");
  c.vocab = j.at("vocab");
  c.init_std = j.at("init_std");
  c.fusion_init_std = j.at("fusion_init_std");
  c.zero_init_fusion_out = j.at("zero_init_fusion_out");
  return c;
}

}  // namespace

std::string save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  json params = json::array();
  for (const auto& p : ckpt.model.parameters()) {
    std::vector<double> data(p.value.data(), p.value.data() + p.value.size());
    params.push_back({{"name", p.name},
                      {"rows", p.value.rows()},
                      {"cols", p.value.cols()},
                      {"trainable", p.trainable},
                      {"data", data}});
  }
  json payload{
      {"config", config_to_json(ckpt.model.config())},
      {"stage", to_string(ckpt.meta.stage)},
      {"mode", to_string(ckpt.meta.mode)},
      {"seed", ckpt.meta.seed},
      {"optimizer", ckpt.meta.optimizer},
      {"parent_digest", ckpt.meta.parent_digest},
      {"dataset", ckpt.meta.dataset},
      {"vocab", ckpt.tokenizer.vocab()},
      {"parameters", params},
  };
  const std::string body = payload.dump();
  const std::string digest = sha256_hex(body);
  json container{{"format", "memefuse-checkpoint"}, {"version", kCheckpointVersion}, {"payload", payload},
                 {"digest", digest}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write checkpoint " + path.string());
  out << container.dump() << '\n';
  return digest;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open checkpoint " + path.string());
  json container;
  try {
    container = json::parse(in);
  } catch (const json::parse_error& e) {
    throw IntegrityError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  try {
    if (container.at("format") != "memefuse-checkpoint") throw IntegrityError("not a memefuse checkpoint");
    if (container.at("version") != kCheckpointVersion)
      throw IntegrityError("unsupported checkpoint version " + container.at("version").dump());
    const json& payload = container.at("payload");
    if (sha256_hex(payload.dump()) != container.at("digest").get<std::string>())
      throw IntegrityError("checkpoint " + path.string() + " failed its integrity check");

    CheckpointMeta meta;
    meta.stage = stage_from_string(payload.at("stage").get<std::string>());
    meta.mode = ablation_mode_from_string(payload.at("mode").get<std::string>());
    meta.seed = payload.at("seed").get<std::uint64_t>();
    meta.optimizer = payload.at("optimizer").get<std::string>();
    meta.parent_digest = payload.at("parent_digest").get<std::string>();
    meta.dataset = payload.at("dataset").get<std::string>();
    WordTokenizer tok = WordTokenizer::from_vocab(payload.at("vocab").get<std::vector<std::string>>());
    Model model(config_from_json(payload.at("config")), meta.seed);
    for (const auto& jp : payload.at("parameters")) {
      auto& p = model.parameter(jp.at("name").get<std::string>());
      const auto rows = jp.at("rows").get<Eigen::Index>();
      const auto cols = jp.at("cols").get<Eigen::Index>();
      const auto data = jp.at("data").get<std::vector<double>>();
      if (rows != p.value.rows() || cols != p.value.cols() || static_cast<Eigen::Index>(data.size()) != rows * cols)
        throw IntegrityError("parameter " + p.name + " has the wrong shape");
      p.value = Eigen::Map<const Eigen::MatrixXd>(data.data(), rows, cols);
    }
    return Checkpoint{meta, std::move(tok), std::move(model)};
  } catch (const json::exception& e) {
    throw IntegrityError("malformed checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace memefuse
