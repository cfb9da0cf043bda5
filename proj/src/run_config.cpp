#include "memefuse/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "memefuse/digest.hpp"
#include "memefuse/errors.hpp"

namespace memefuse {

using nlohmann::json;

std::string_view to_string(Schedule s) {
  switch (s) {
    case Schedule::two_stage: return "two_stage";
    case Schedule::infer_only: return "infer_only";
    case Schedule::one_stage_explanation: return "one_stage_explanation";
    case Schedule::one_stage_reasoning: return "one_stage_reasoning";
  }
  return "two_stage";
}

Schedule schedule_from_string(std::string_view text) {
  if (text == "two_stage") return Schedule::two_stage;
  if (text == "infer_only") return Schedule::infer_only;
  if (text == "one_stage_explanation" || text == "explanation") return Schedule::one_stage_explanation;
  if (text == "one_stage_reasoning" || text == "reasoning") return Schedule::one_stage_reasoning;
  throw ConfigError("unknown schedule '" + std::string(text) +
                    "'; expected two_stage, infer_only, one_stage_explanation or one_stage_reasoning");
}

json parse_jsonc(const std::string& text) {
  try {
    return json::parse(text, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.contains(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : (base / path).lexically_normal();
}

json stage_json(const StageConfig& s) {
  json j{{"epochs", s.epochs},
         {"batch_size", s.batch_size},
         {"peak_lr", s.peak_lr},
         {"warmup_fraction", s.warmup_fraction},
         {"linear_decay", s.linear_decay},
         {"weight_decay", s.weight_decay},
         {"max_grad_norm", s.max_grad_norm}};
  j["max_steps"] = s.max_steps ? json(*s.max_steps) : json(nullptr);
  return j;
}

void read_stage(const json& j, StageConfig& s, const std::string& where) {
  check_keys(j, {"epochs", "batch_size", "peak_lr", "warmup_fraction", "linear_decay", "weight_decay", "max_grad_norm",
                 "max_steps"},
             where);
  if (j.contains("epochs")) s.epochs = j["epochs"];
  if (j.contains("batch_size")) s.batch_size = j["batch_size"];
  if (j.contains("peak_lr")) s.peak_lr = j["peak_lr"];
  if (j.contains("warmup_fraction")) s.warmup_fraction = j["warmup_fraction"];
  if (j.contains("linear_decay")) s.linear_decay = j["linear_decay"];
  if (j.contains("weight_decay")) s.weight_decay = j["weight_decay"];
  if (j.contains("max_grad_norm")) s.max_grad_norm = j["max_grad_norm"];
  if (j.contains("max_steps")) {
    if (j["max_steps"].is_null())
      s.max_steps.reset();
    else
      s.max_steps = j["max_steps"].get<int>();
  }
  s.validate();
}

}  // namespace

json RunConfig::to_json() const {
  return {{"dataset", dataset},
          {"train", train.generic_string()},
          {"test", test.generic_string()},
          {"captions", captions.generic_string()},
          {"rationales", rationales.generic_string()},
          {"output_dir", output_dir.generic_string()},
          {"caption_backend", caption_backend},
          {"use_clean_image", use_clean_image},
          {"preset", to_string(model.preset)},
          {"model",
           {{"layers", model.layers},
            {"decoder_layers", model.decoder_layers},
            {"d", model.d},
            {"heads", model.heads},
            {"d_ff", model.d_ff},
            {"m_max", model.m_max},
            {"max_target", model.max_target},
            {"patches", model.patches},
            {"d_v", model.d_v},
            {"init_std", model.init_std},
            {"fusion_init_std", model.fusion_init_std},
            {"zero_init_fusion_out", model.zero_init_fusion_out}}},
          {"mode", to_string(mode)},
          {"schedule", to_string(schedule)},
          {"stages", {{"distill", stage_json(stages.distill)}, {"infer", stage_json(stages.infer)}}},
          {"seeds", seeds},
          {"chat",
           {{"transport", chat.transport},
            {"base_url", chat.base_url},
            {"path", chat.path},
            {"model", chat.model},
            {"api_key_env", chat.api_key_env},
            {"transcript", chat.transcript.generic_string()},
            {"max_inflight", chat.max_inflight},
            {"max_attempts", chat.max_attempts},
            {"base_delay_ms", chat.base_delay_ms},
            {"timeout_s", chat.timeout_s}}}};
}

std::string RunConfig::digest() const { return sha256_hex(to_json().dump()); }

RunConfig run_config_from_json(const json& j, const std::filesystem::path& base) {
  check_keys(j,
             {"dataset", "train", "test", "captions", "rationales", "output_dir", "caption_backend", "use_clean_image",
              "preset", "model", "mode", "schedule", "stages", "seeds", "chat"},
             "run config");
  RunConfig c;
  try {
    c.dataset = j.value("dataset", c.dataset);
    c.stages = defaults_for_dataset(c.dataset);
    c.train = resolve(base, j.value("train", std::string{}));
    c.test = resolve(base, j.value("test", std::string{}));
    c.captions = resolve(base, j.value("captions", std::string{}));
    c.rationales = resolve(base, j.value("rationales", std::string{}));
    c.output_dir = resolve(base, j.value("output_dir", std::string("runs")));
    c.caption_backend = j.value("caption_backend", c.caption_backend);
    c.use_clean_image = j.value("use_clean_image", c.use_clean_image);

    const auto preset = size_preset_from_string(j.value("preset", std::string("tiny")));
    c.model = ModelConfig::for_preset(preset, 32);
    if (j.contains("model")) {
      const json& m = j["model"];
      check_keys(m,
                 {"layers", "decoder_layers", "d", "heads", "d_ff", "m_max", "max_target", "patches", "d_v",
                  "init_std", "fusion_init_std", "zero_init_fusion_out"},
                 "model");
      c.model.layers = m.value("layers", c.model.layers);
      c.model.decoder_layers = m.value("decoder_layers", c.model.decoder_layers);
      c.model.d = m.value("d", c.model.d);
      c.model.heads = m.value("heads", c.model.heads);
      c.model.d_ff = m.value("d_ff", c.model.d_ff);
      c.model.m_max = m.value("m_max", c.model.m_max);
      c.model.max_target = m.value("max_target", c.model.max_target);
      c.model.patches = m.value("patches", c.model.patches);
      c.model.d_v = m.value("d_v", c.model.d_v);
      c.model.init_std = m.value("init_std", c.model.init_std);
      c.model.fusion_init_std = m.value("fusion_init_std", c.model.fusion_init_std);
      c.model.zero_init_fusion_out = m.value("zero_init_fusion_out", c.model.zero_init_fusion_out);
    }
    c.model.validate();

    c.mode = ablation_mode_from_string(j.value("mode", std::string("full")));
    c.schedule = schedule_from_string(j.value("schedule", std::string("two_stage")));
    if (j.contains("stages")) {
      check_keys(j["stages"], {"distill", "infer"}, "stages");
      if (j["stages"].contains("distill")) read_stage(j["stages"]["distill"], c.stages.distill, "stages.distill");
      if (j["stages"].contains("infer")) read_stage(j["stages"]["infer"], c.stages.infer, "stages.infer");
    }
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (c.seeds.empty()) throw ConfigError("seeds must list at least one seed");

    if (j.contains("chat")) {
      const json& h = j["chat"];
      check_keys(h,
                 {"transport", "base_url", "path", "model", "api_key_env", "transcript", "max_inflight",
                  "max_attempts", "base_delay_ms", "timeout_s"},
                 "chat");
      c.chat.transport = h.value("transport", c.chat.transport);
      c.chat.base_url = h.value("base_url", c.chat.base_url);
      c.chat.path = h.value("path", c.chat.path);
      c.chat.model = h.value("model", c.chat.model);
      c.chat.api_key_env = h.value("api_key_env", c.chat.api_key_env);
      c.chat.transcript = resolve(base, h.value("transcript", std::string{}));
      c.chat.max_inflight = h.value("max_inflight", c.chat.max_inflight);
      c.chat.max_attempts = h.value("max_attempts", c.chat.max_attempts);
      c.chat.base_delay_ms = h.value("base_delay_ms", c.chat.base_delay_ms);
      c.chat.timeout_s = h.value("timeout_s", c.chat.timeout_s);
      static const std::set<std::string> transports{"none", "template", "replay", "http"};
      if (!transports.contains(c.chat.transport))
        throw ConfigError("unknown chat transport '" + c.chat.transport + "'; expected none, template, replay or http");
      if (c.chat.max_inflight < 1 || c.chat.max_inflight > 64) throw ConfigError("chat.max_inflight must be in 1..64");
      if (c.chat.max_attempts < 1) throw ConfigError("chat.max_attempts must be at least 1");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad run config value: ") + e.what());
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open run config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return run_config_from_json(parse_jsonc(ss.str()), path.parent_path());
}

}  // namespace memefuse
