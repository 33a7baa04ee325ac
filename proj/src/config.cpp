#include "dx2ct/config.hpp"

#include <fstream>
#include <initializer_list>

#include <json.hpp>

#include "dx2ct/common.hpp"

namespace dx2ct::config {

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& where, const std::string& what) {
  throw ValidationError("config: " + where + ": " + what);
}

void check_keys(const json& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) bad(where, "must be a JSON object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || it.key() == k;
    if (!ok) bad(where, "unknown key '" + it.key() + "'");
  }
}

void get_size(const json& obj, const std::string& where, const char* key,
              std::size_t& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_number_unsigned())
    bad(where, std::string("'") + key + "' must be a non-negative integer");
  out = v.get<std::size_t>();
}

void get_u64(const json& obj, const std::string& where, const char* key,
             std::uint64_t& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_number_unsigned())
    bad(where, std::string("'") + key + "' must be a non-negative integer");
  out = v.get<std::uint64_t>();
}

void get_int(const json& obj, const std::string& where, const char* key,
             int& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_number_integer())
    bad(where, std::string("'") + key + "' must be an integer");
  out = v.get<int>();
}

void get_double(const json& obj, const std::string& where, const char* key,
                double& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_number())
    bad(where, std::string("'") + key + "' must be a number");
  out = v.get<double>();
}

void get_bool(const json& obj, const std::string& where, const char* key,
              bool& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_boolean()) bad(where, std::string("'") + key + "' must be a boolean");
  out = v.get<bool>();
}

void get_sizes(const json& obj, const std::string& where, const char* key,
               std::vector<std::size_t>& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_array())
    bad(where, std::string("'") + key + "' must be an array of integers");
  std::vector<std::size_t> vals;
  for (const json& e : v) {
    if (!e.is_number_unsigned())
      bad(where, std::string("'") + key + "' must be an array of non-negative integers");
    vals.push_back(e.get<std::size_t>());
  }
  out = std::move(vals);
}

ops::Act parse_act(const json& obj, const std::string& where, ops::Act def) {
  if (!obj.contains("act")) return def;
  const json& v = obj.at("act");
  if (!v.is_string()) bad(where, "'act' must be a string");
  const std::string s = v.get<std::string>();
  if (s == "silu") return ops::Act::silu;
  if (s == "relu") return ops::Act::relu;
  if (s == "tanh") return ops::Act::tanh;
  if (s == "identity") return ops::Act::identity;
  bad(where, "'act' must be one of silu, relu, tanh, identity");
}

std::string act_name(ops::Act a) {
  switch (a) {
    case ops::Act::silu: return "silu";
    case ops::Act::relu: return "relu";
    case ops::Act::tanh: return "tanh";
    default: return "identity";
  }
}

model::CondMode parse_mode(const json& obj, const std::string& where,
                           model::CondMode def) {
  if (!obj.contains("mode")) return def;
  const json& v = obj.at("mode");
  if (!v.is_string()) bad(where, "'mode' must be a string");
  const std::string s = v.get<std::string>();
  if (s == "spade") return model::CondMode::spade;
  if (s == "concat") return model::CondMode::concat;
  if (s == "plain") return model::CondMode::plain;
  bad(where, "'mode' must be one of spade, concat, plain");
}

std::string mode_name(model::CondMode m) {
  switch (m) {
    case model::CondMode::spade: return "spade";
    case model::CondMode::concat: return "concat";
    default: return "plain";
  }
}

}  // namespace

RunConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: invalid JSON: ") + e.what());
  }
  check_keys(root, "config",
             {"biplanar", "use_pqt", "encoder", "posenc", "pqt", "unet",
              "schedule", "train"});

  RunConfig c;
  get_bool(root, "config", "biplanar", c.pipeline.biplanar);
  get_bool(root, "config", "use_pqt", c.pipeline.use_pqt);

  if (root.contains("encoder")) {
    const json& o = root.at("encoder");
    check_keys(o, "encoder", {"levels", "channels", "base_channels", "act"});
    get_size(o, "encoder", "levels", c.pipeline.encoder.levels);
    get_sizes(o, "encoder", "channels", c.pipeline.encoder.channels);
    get_size(o, "encoder", "base_channels", c.pipeline.encoder.base_channels);
    c.pipeline.encoder.act = parse_act(o, "encoder", c.pipeline.encoder.act);
  }
  if (root.contains("posenc")) {
    const json& o = root.at("posenc");
    check_keys(o, "posenc", {"num_freqs", "cp", "act"});
    get_size(o, "posenc", "num_freqs", c.pipeline.posenc.num_freqs);
    get_size(o, "posenc", "cp", c.pipeline.posenc.cp);
    c.pipeline.posenc.act = parse_act(o, "posenc", c.pipeline.posenc.act);
  }
  if (root.contains("pqt")) {
    const json& o = root.at("pqt");
    check_keys(o, "pqt", {"blocks", "heads", "d_attn", "mlp_mult", "act"});
    get_size(o, "pqt", "blocks", c.pipeline.pqt.blocks);
    get_size(o, "pqt", "heads", c.pipeline.pqt.heads);
    get_size(o, "pqt", "d_attn", c.pipeline.pqt.d_attn);
    get_size(o, "pqt", "mlp_mult", c.pipeline.pqt.mlp_mult);
    c.pipeline.pqt.act = parse_act(o, "pqt", c.pipeline.pqt.act);
  }
  if (root.contains("unet")) {
    const json& o = root.at("unet");
    check_keys(o, "unet",
               {"base", "mults", "temb_dim", "spade_hidden", "mode", "act"});
    get_size(o, "unet", "base", c.pipeline.unet.base);
    get_sizes(o, "unet", "mults", c.pipeline.unet.mults);
    get_size(o, "unet", "temb_dim", c.pipeline.unet.temb_dim);
    get_size(o, "unet", "spade_hidden", c.pipeline.unet.spade_hidden);
    c.pipeline.unet.mode = parse_mode(o, "unet", c.pipeline.unet.mode);
    c.pipeline.unet.act = parse_act(o, "unet", c.pipeline.unet.act);
  }
  if (root.contains("schedule")) {
    const json& o = root.at("schedule");
    check_keys(o, "schedule",
               {"timesteps", "beta_start", "beta_end", "ddim_steps"});
    get_int(o, "schedule", "timesteps", c.pipeline.schedule.timesteps);
    get_double(o, "schedule", "beta_start", c.pipeline.schedule.beta_start);
    get_double(o, "schedule", "beta_end", c.pipeline.schedule.beta_end);
    get_int(o, "schedule", "ddim_steps", c.pipeline.schedule.ddim_steps);
  }
  if (root.contains("train")) {
    const json& o = root.at("train");
    check_keys(o, "train",
               {"epochs", "steps", "batch_size", "lr", "adam_beta1",
                "adam_beta2", "adam_eps", "seed", "log_every",
                "checkpoint_every"});
    get_size(o, "train", "epochs", c.train.epochs);
    get_size(o, "train", "steps", c.train.steps);
    get_size(o, "train", "batch_size", c.train.batch_size);
    get_double(o, "train", "lr", c.train.lr);
    get_double(o, "train", "adam_beta1", c.train.adam_beta1);
    get_double(o, "train", "adam_beta2", c.train.adam_beta2);
    get_double(o, "train", "adam_eps", c.train.adam_eps);
    get_u64(o, "train", "seed", c.train.seed);
    get_size(o, "train", "log_every", c.train.log_every);
    get_size(o, "train", "checkpoint_every", c.train.checkpoint_every);
  }
  return c;
}

RunConfig read_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open for reading");
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError(path + ": read failed");
  return parse_config(text);
}

std::string config_echo(const RunConfig& c) {
  json j;
  j["biplanar"] = c.pipeline.biplanar;
  j["use_pqt"] = c.pipeline.use_pqt;
  j["encoder"] = {{"levels", c.pipeline.encoder.levels},
                  {"channels", c.pipeline.encoder.channels},
                  {"base_channels", c.pipeline.encoder.base_channels},
                  {"act", act_name(c.pipeline.encoder.act)}};
  j["posenc"] = {{"num_freqs", c.pipeline.posenc.num_freqs},
                 {"cp", c.pipeline.posenc.cp},
                 {"act", act_name(c.pipeline.posenc.act)}};
  j["pqt"] = {{"blocks", c.pipeline.pqt.blocks},
              {"heads", c.pipeline.pqt.heads},
              {"d_attn", c.pipeline.pqt.d_attn},
              {"mlp_mult", c.pipeline.pqt.mlp_mult},
              {"act", act_name(c.pipeline.pqt.act)}};
  j["unet"] = {{"base", c.pipeline.unet.base},
               {"mults", c.pipeline.unet.mults},
               {"temb_dim", c.pipeline.unet.temb_dim},
               {"spade_hidden", c.pipeline.unet.spade_hidden},
               {"mode", mode_name(c.pipeline.unet.mode)},
               {"act", act_name(c.pipeline.unet.act)}};
  j["schedule"] = {{"timesteps", c.pipeline.schedule.timesteps},
                   {"beta_start", c.pipeline.schedule.beta_start},
                   {"beta_end", c.pipeline.schedule.beta_end},
                   {"ddim_steps", c.pipeline.schedule.ddim_steps}};
  j["train"] = {{"epochs", c.train.epochs},
                {"steps", c.train.steps},
                {"batch_size", c.train.batch_size},
                {"lr", c.train.lr},
                {"adam_beta1", c.train.adam_beta1},
                {"adam_beta2", c.train.adam_beta2},
                {"adam_eps", c.train.adam_eps},
                {"seed", c.train.seed},
                {"log_every", c.train.log_every},
                {"checkpoint_every", c.train.checkpoint_every}};
  return j.dump();
}

}  // namespace dx2ct::config
