#include "fame/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "fame/error.hpp"

namespace fame {

void TrainConfig::validate() const {
  if (epochs < 0) throw Error(Errc::config, "epochs must be non-negative");
  if (!(lr > 0.0)) throw Error(Errc::config, "learning rate must be positive");
  if (batch < 1) throw Error(Errc::config, "batch size must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(Errc::config, "dropout must lie in [0, 1)");
  if (grid < 2) throw Error(Errc::config, "grid size must be at least 2");
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw Error(Errc::config, "split ratio must lie in (0, 1)");
  if (hidden < 1 || attn_dim < 1 || head_dim < 1 || heads < 1 || experts < 1 || summary_dim < 1 || conv_width < 1) {
    throw Error(Errc::config, "model dimensions must be positive");
  }
}

ModelConfig TrainConfig::model_config(int inputs, int outputs) const {
  validate();
  ModelConfig m;
  m.inputs = inputs;
  m.outputs = outputs;
  m.grid_size = grid;
  m.interp = interp;
  m.encoder.hidden = hidden;
  m.encoder.experts = no_moe ? 1 : experts;
  m.encoder.summary_dim = summary_dim;
  m.encoder.conv_width = conv_width;
  m.encoder.mlp_widths = mlp_widths;
  m.encoder.dropout = dropout;
  m.encoder.bidirectional = !no_bidir;
  m.encoder.scheme = scheme;
  m.attention.dim = attn_dim;
  m.attention.temperature = temperature;
  m.cross.heads = heads;
  m.cross.head_dim = head_dim;
  m.cross.norm_cap = norm_cap;
  m.cross.enabled = !no_crossattn;
  m.decoder.per_output = per_output;
  m.finalize();
  m.validate();
  return m;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"lr", c.lr},
          {"batch", c.batch},
          {"seed", c.seed},
          {"dropout", c.dropout},
          {"grid", c.grid},
          {"split_ratio", c.split_ratio},
          {"no_bidir", c.no_bidir},
          {"no_moe", c.no_moe},
          {"no_crossattn", c.no_crossattn},
          {"hidden", c.hidden},
          {"attn_dim", c.attn_dim},
          {"head_dim", c.head_dim},
          {"heads", c.heads},
          {"experts", c.experts},
          {"summary_dim", c.summary_dim},
          {"conv_width", c.conv_width},
          {"mlp_widths", c.mlp_widths},
          {"temperature", c.temperature},
          {"norm_cap", c.norm_cap},
          {"scheme", c.scheme == SolverScheme::euler ? "euler" : "midpoint"},
          {"interp", c.interp == Interp::linear ? "linear" : "cubic"},
          {"per_output", c.per_output}};
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_num(const std::string& key, const std::string& v) {
  T out{};
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw Error(Errc::config, "key '" + key + "': cannot parse '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(Errc::config, "key '" + key + "': expected a boolean, got '" + v + "'");
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& v) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_num<T>(key, item));
  }
  return out;
}

using Setter = std::function<void(const std::string&, const std::string&, TrainConfig&, GenSpec*)>;

GenSpec& need_gen(const std::string& key, GenSpec* g) {
  if (g == nullptr) throw Error(Errc::config, "key '" + key + "' configures data generation, which is not used here");
  return *g;
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"epochs", [](auto& k, auto& v, TrainConfig& t, GenSpec*) { t.epochs = parse_num<int>(k, v); }},
      {"lr", [](auto& k, auto& v, TrainConfig& t, GenSpec*) { t.lr = parse_num<double>(k, v); }},
      {"batch", [](auto& k, auto& v, TrainConfig& t, GenSpec*) { t.batch = parse_num<int>(k, v); }},
      {"seed", [](auto& k, auto& v, TrainConfig& t, GenSpec*) { t.seed = parse_num<std::uint64_t>(k, v); }},
      {"dropout", [](auto& k, auto& v, TrainConfig& t, GenSpec*) { t.dropout = parse_num<double>(k, v); }},
      {"grid", [](auto& k, auto& v, TrainConfig& t, GenSpec*) { t.grid = parse_num<int>(k, v); }},
      {"split_ratio", [](auto& k, auto& v, TrainConfig& t, GenSpec*) { t.split_ratio = parse_num<double>(k, v); }},
      {"no_bidir", [](auto& k, auto& v, TrainConfig& t, GenSpec*) { t.no_bidir = parse_bool(k, v); }},
      {"no_moe", [](auto& k, auto& v, TrainConfig& t, GenSpec*) { t.no_moe = parse_bool(k, v); }},
      {"no_crossattn", [](auto& k, auto& v, TrainConfig& t, GenSpec*) { t.no_crossattn = parse_bool(k, v); }},
      {"hidden", [](auto& k, auto& v, TrainConfig& t, GenSpec*) { t.hidden = parse_num<int>(k, v); }},
      {"attn_dim", [](auto& k, auto& v, TrainConfig& t, GenSpec*) { t.attn_dim = parse_num<int>(k, v); }},
      {"head_dim", [](auto& k, auto& v, TrainConfig& t, GenSpec*) { t.head_dim = parse_num<int>(k, v); }},
      {"heads", [](auto& k, auto& v, TrainConfig& t, GenSpec*) { t.heads = parse_num<int>(k, v); }},
      {"experts", [](auto& k, auto& v, TrainConfig& t, GenSpec*) { t.experts = parse_num<int>(k, v); }},
      {"summary_dim", [](auto& k, auto& v, TrainConfig& t, GenSpec*) { t.summary_dim = parse_num<int>(k, v); }},
      {"conv_width", [](auto& k, auto& v, TrainConfig& t, GenSpec*) { t.conv_width = parse_num<int>(k, v); }},
      {"mlp_widths", [](auto& k, auto& v, TrainConfig& t, GenSpec*) { t.mlp_widths = parse_list<int>(k, v); }},
      {"temperature", [](auto& k, auto& v, TrainConfig& t, GenSpec*) { t.temperature = parse_num<double>(k, v); }},
      {"norm_cap", [](auto& k, auto& v, TrainConfig& t, GenSpec*) { t.norm_cap = parse_num<double>(k, v); }},
      {"scheme",
       [](auto& k, auto& v, TrainConfig& t, GenSpec*) {
         if (v == "euler") t.scheme = SolverScheme::euler;
         else if (v == "midpoint") t.scheme = SolverScheme::midpoint;
         else throw Error(Errc::config, "key '" + k + "': expected euler or midpoint");
       }},
      {"interp",
       [](auto& k, auto& v, TrainConfig& t, GenSpec*) {
         if (v == "linear") t.interp = Interp::linear;
         else if (v == "cubic") t.interp = Interp::natural_cubic;
         else throw Error(Errc::config, "key '" + k + "': expected linear or cubic");
       }},
      {"per_output", [](auto& k, auto& v, TrainConfig& t, GenSpec*) { t.per_output = parse_bool(k, v); }},
      // generator
      {"case",
       [](auto& k, auto& v, TrainConfig&, GenSpec* g) {
         const GenSpec keep = need_gen(k, g);
         *g = case_defaults(parse_num<int>(k, v));
         g->seed = keep.seed;
       }},
      {"samples", [](auto& k, auto& v, TrainConfig&, GenSpec* g) { need_gen(k, g).samples = parse_num<int>(k, v); }},
      {"inputs", [](auto& k, auto& v, TrainConfig&, GenSpec* g) { need_gen(k, g).inputs = parse_num<int>(k, v); }},
      {"outputs", [](auto& k, auto& v, TrainConfig&, GenSpec* g) { need_gen(k, g).outputs = parse_num<int>(k, v); }},
      {"widths", [](auto& k, auto& v, TrainConfig&, GenSpec* g) { need_gen(k, g).widths = parse_list<double>(k, v); }},
      {"input_points",
       [](auto& k, auto& v, TrainConfig&, GenSpec* g) { need_gen(k, g).input_points = parse_num<int>(k, v); }},
      {"output_points",
       [](auto& k, auto& v, TrainConfig&, GenSpec* g) { need_gen(k, g).output_points = parse_num<int>(k, v); }},
      {"input_point_choices",
       [](auto& k, auto& v, TrainConfig&, GenSpec* g) { need_gen(k, g).input_point_choices = parse_list<int>(k, v); }},
      {"shared_grid",
       [](auto& k, auto& v, TrainConfig&, GenSpec* g) { need_gen(k, g).shared_grid = parse_bool(k, v); }},
      {"noise", [](auto& k, auto& v, TrainConfig&, GenSpec* g) { need_gen(k, g).noise = parse_num<double>(k, v); }},
      {"noise_sd", [](auto& k, auto& v, TrainConfig&, GenSpec* g) { need_gen(k, g).noise_sd = parse_num<double>(k, v); }},
      {"target",
       [](auto& k, auto& v, TrainConfig&, GenSpec* g) {
         if (v == "sin") need_gen(k, g).target = Target::sin_sum;
         else if (v == "sincos") need_gen(k, g).target = Target::sin_cos_sum;
         else throw Error(Errc::config, "key '" + k + "': expected sin or sincos");
       }},
      {"data_seed",
       [](auto& k, auto& v, TrainConfig&, GenSpec* g) { need_gen(k, g).seed = parse_num<std::uint64_t>(k, v); }},
  };
  return table;
}

}  // namespace

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(Errc::config, "line " + std::to_string(row) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw Error(Errc::config, "line " + std::to_string(row) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues load_key_values(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(Errc::io, "cannot open config '" + file.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

void apply(const KeyValues& kv, TrainConfig& train, GenSpec* gen) {
  const auto& table = setters();
  // "case" resets generator defaults, so it goes first.
  if (auto it = kv.find("case"); it != kv.end()) table.at("case")(it->first, it->second, train, gen);
  for (const auto& [k, v] : kv) {
    if (k == "case") continue;
    const auto it = table.find(k);
    if (it == table.end()) throw Error(Errc::config, "unknown config key '" + k + "'");
    it->second(k, v, train, gen);
  }
  train.validate();
  if (gen != nullptr) gen->validate();
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, v] : setters()) keys.push_back(k);
  return keys;
}

}  // namespace fame
