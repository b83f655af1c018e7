#include "grnr/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "grnr/errors.hpp"

namespace grnr::config {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || !std::isfinite(out)) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> split_commas(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

template <typename T, typename F>
std::string join_list(const std::vector<T>& xs, F fmt) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    out += fmt(xs[i]);
  }
  return out;
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Member>
Field int_field(const std::string& key, Member m) {
  return {[key, m](RunConfig& c, const std::string& v) { m(c) = static_cast<int>(parse_int(key, v)); },
          [m](const RunConfig& c) { return std::to_string(m(c)); }};
}

template <typename Member>
Field double_field(const std::string& key, Member m) {
  return {[key, m](RunConfig& c, const std::string& v) { m(c) = parse_double(key, v); },
          [m](const RunConfig& c) { return format_double(m(c)); }};
}

template <typename Member>
Field bool_field(const std::string& key, Member m) {
  return {[key, m](RunConfig& c, const std::string& v) { m(c) = parse_bool(key, v); },
          [m](const RunConfig& c) { return std::string(m(c) ? "true" : "false"); }};
}

template <typename Member>
Field string_field(Member m) {
  return {[m](RunConfig& c, const std::string& v) { m(c) = v; },
          [m](const RunConfig& c) { return m(c); }};
}

// Ordered by key; the echo lists fields in this order.
const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    t["profile"] = string_field([](auto& c) -> auto& { return c.profile; });
    t["seed"] = {[](RunConfig& c, const std::string& v) {
                   const auto n = parse_int("seed", v);
                   if (n < 0) throw ConfigError("seed must be non-negative");
                   c.seed = static_cast<std::uint64_t>(n);
                 },
                 [](const RunConfig& c) { return std::to_string(c.seed); }};

    t["encoder.kind"] = string_field([](auto& c) -> auto& { return c.model.encoder.kind; });
    t["encoder.dim"] = int_field("encoder.dim", [](auto& c) -> auto& { return c.model.encoder.dim; });
    t["encoder.input_size"] =
        int_field("encoder.input_size", [](auto& c) -> auto& { return c.model.encoder.input_size; });
    t["encoder.channels"] = {[](RunConfig& c, const std::string& v) {
                               std::vector<int> ch;
                               for (const auto& s : split_commas(v)) {
                                 ch.push_back(static_cast<int>(parse_int("encoder.channels", s)));
                               }
                               c.model.encoder.channels = ch;
                             },
                             [](const RunConfig& c) {
                               return join_list(c.model.encoder.channels,
                                                [](int x) { return std::to_string(x); });
                             }};
    t["encoder.shared_trunk"] =
        bool_field("encoder.shared_trunk", [](auto& c) -> auto& { return c.model.encoder.shared_trunk; });
    t["encoder.freeze_trunk"] =
        bool_field("encoder.freeze_trunk", [](auto& c) -> auto& { return c.model.encoder.freeze_trunk; });
    t["encoder.coord_channels"] = bool_field(
        "encoder.coord_channels", [](auto& c) -> auto& { return c.model.encoder.coord_channels; });
    t["encoder.alpha"] = double_field("encoder.alpha", [](auto& c) -> auto& { return c.model.encoder.alpha; });
    t["encoder.text_embed_dim"] = int_field(
        "encoder.text_embed_dim", [](auto& c) -> auto& { return c.model.encoder.text_embed_dim; });
    t["encoder.max_len"] = int_field("encoder.max_len", [](auto& c) -> auto& { return c.model.encoder.max_len; });
    t["encoder.depth_cmd"] = string_field([](auto& c) -> auto& { return c.model.encoder.depth_cmd; });
    t["encoder.road_cmd"] = string_field([](auto& c) -> auto& { return c.model.encoder.road_cmd; });
    t["encoder.text_cmd"] = string_field([](auto& c) -> auto& { return c.model.encoder.text_cmd; });

    t["layout.ref_w"] = int_field("layout.ref_w", [](auto& c) -> auto& { return c.model.layout.ref_w; });
    t["layout.ref_h"] = int_field("layout.ref_h", [](auto& c) -> auto& { return c.model.layout.ref_h; });
    t["layout.patch_w"] = int_field("layout.patch_w", [](auto& c) -> auto& { return c.model.layout.patch_w; });
    t["layout.patch_h"] = int_field("layout.patch_h", [](auto& c) -> auto& { return c.model.layout.patch_h; });
    t["layout.num_patches"] =
        int_field("layout.num_patches", [](auto& c) -> auto& { return c.model.layout.num_patches; });
    t["layout.stride"] = int_field("layout.stride", [](auto& c) -> auto& { return c.model.layout.stride; });

    t["model.n_v"] = int_field("model.n_v", [](auto& c) -> auto& { return c.model.n_v; });
    t["model.p_max"] = int_field("model.p_max", [](auto& c) -> auto& { return c.model.p_max; });
    t["model.hidden"] = int_field("model.hidden", [](auto& c) -> auto& { return c.model.hidden; });

    t["train.epochs"] = int_field("train.epochs", [](auto& c) -> auto& { return c.train.epochs; });
    t["train.batch_size"] = int_field("train.batch_size", [](auto& c) -> auto& { return c.train.batch_size; });
    t["train.lr"] = double_field("train.lr", [](auto& c) -> auto& { return c.train.lr; });
    t["train.beta1"] = double_field("train.beta1", [](auto& c) -> auto& { return c.train.beta1; });
    t["train.beta2"] = double_field("train.beta2", [](auto& c) -> auto& { return c.train.beta2; });
    t["train.adam_eps"] = double_field("train.adam_eps", [](auto& c) -> auto& { return c.train.adam_eps; });
    t["train.weight_decay"] =
        double_field("train.weight_decay", [](auto& c) -> auto& { return c.train.weight_decay; });
    t["train.lambda_pt"] = double_field("train.lambda_pt", [](auto& c) -> auto& { return c.train.lambda_pt; });
    t["train.warmup_epochs"] =
        int_field("train.warmup_epochs", [](auto& c) -> auto& { return c.train.warmup_epochs; });
    t["train.decay_epoch"] = int_field("train.decay_epoch", [](auto& c) -> auto& { return c.train.decay_epoch; });
    t["train.decay_factor"] =
        double_field("train.decay_factor", [](auto& c) -> auto& { return c.train.decay_factor; });
    t["train.val_every"] = int_field("train.val_every", [](auto& c) -> auto& { return c.train.val_every; });

    t["eval.msiou_K"] = double_field("eval.msiou_K", [](auto& c) -> auto& { return c.eval.msiou_K; });
    t["eval.p_at_k"] = {[](RunConfig& c, const std::string& v) {
                          std::vector<double> ks;
                          for (const auto& s : split_commas(v)) ks.push_back(parse_double("eval.p_at_k", s));
                          c.eval.p_at_k = ks;
                        },
                        [](const RunConfig& c) { return join_list(c.eval.p_at_k, format_double); }};
    t["eval.raster"] = {[](RunConfig& c, const std::string& v) {
                          const auto x = v.find('x');
                          if (x == std::string::npos) throw ConfigError("eval.raster: expected WxH, got '" + v + "'");
                          c.eval.raster_width = static_cast<int>(parse_int("eval.raster", v.substr(0, x)));
                          c.eval.raster_height = static_cast<int>(parse_int("eval.raster", v.substr(x + 1)));
                        },
                        [](const RunConfig& c) {
                          return std::to_string(c.eval.raster_width) + "x" + std::to_string(c.eval.raster_height);
                        }};
    return t;
  }();
  return table;
}

}  // namespace

RunConfig RunConfig::paper() {
  RunConfig c;
  c.profile = "paper";
  c.model.encoder.dim = 256;
  c.model.encoder.input_size = 224;
  c.model.encoder.text_embed_dim = 256;
  c.model.encoder.freeze_trunk = true;
  c.model.hidden = 256;
  c.model.layout = {1600, 900, 560, 315, 3, 8};
  c.train = training::TrainConfig::paper();
  return c;
}

RunConfig RunConfig::desk() {
  RunConfig c;
  c.profile = "desk";
  c.model.encoder.dim = 64;
  c.model.encoder.input_size = 32;
  c.model.encoder.text_embed_dim = 64;
  c.model.encoder.freeze_trunk = false;
  c.model.hidden = 128;
  c.model.layout = {160, 90, 56, 32, 3, 8};
  c.train = training::TrainConfig::desk();
  return c;
}

RunConfig RunConfig::for_profile(const std::string& name) {
  if (name == "paper") return paper();
  if (name == "desk") return desk();
  throw ConfigError("unknown profile '" + name + "' (expected paper or desk)");
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
  if (key == "profile") throw ConfigError("profile must be chosen before other keys are applied");
  it->second.set(*this, value);
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [key, field] : fields()) out.emplace_back(key, field.get(*this));
  return out;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (model.encoder.input_size < 8) throw ConfigError("encoder.input_size must be >= 8");
  if (model.encoder.channels.empty()) throw ConfigError("encoder.channels must not be empty");
  if (!(model.encoder.alpha >= 0.0 && model.encoder.alpha <= 1.0)) {
    throw ConfigError("encoder.alpha must lie in [0,1]");
  }
  if (!(eval.msiou_K > 0.0 && eval.msiou_K <= 1.0)) throw ConfigError("eval.msiou_K must lie in (0,1]");
  for (double k : eval.p_at_k) {
    if (!(k > 0.0 && k < 1.0)) throw ConfigError("eval.p_at_k thresholds must lie in (0,1)");
  }
  if (eval.raster_width < 1 || eval.raster_height < 1) throw ConfigError("eval.raster must be at least 1x1");
}

KeyValues parse_config_text(const std::string& text, const std::string& origin) {
  KeyValues out;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(n) + ": expected key=value");
    }
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

KeyValues parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

std::pair<std::string, std::string> parse_override(const std::string& arg) {
  const auto eq = arg.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects section.key=value, got '" + arg + "'");
  return {trim(arg.substr(0, eq)), trim(arg.substr(eq + 1))};
}

RunConfig resolve(const std::string& profile_override, const KeyValues& file_values,
                  const KeyValues& overrides) {
  std::string profile = "desk";
  for (const auto& [k, v] : file_values) {
    if (k == "profile") profile = v;
  }
  if (!profile_override.empty()) profile = profile_override;
  RunConfig c = RunConfig::for_profile(profile);
  for (const auto& [k, v] : file_values) {
    if (k != "profile") c.set(k, v);
  }
  for (const auto& [k, v] : overrides) c.set(k, v);
  c.train.seed = c.seed;
  c.validate();
  return c;
}

std::string format_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) return std::to_string(v);
  std::string out(buf, p);
  // to_chars pads exponents to two digits ("1e-04"); print "1e-4".
  const auto e = out.find('e');
  if (e != std::string::npos) {
    std::size_t d = e + 1;
    if (d < out.size() && (out[d] == '-' || out[d] == '+')) ++d;
    while (d + 1 < out.size() && out[d] == '0') out.erase(d, 1);
  }
  return out;
}

std::string stable_hash(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace grnr::config
