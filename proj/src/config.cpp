#include "pycat/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace pycat {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ParseError("expected a number, got '" + v + "'");
  return out;
}

int64_t to_int(const std::string& v) {
  int64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ParseError("expected an integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ParseError("expected true or false, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(static_cast<int>(to_int(trim(item))));
  if (out.empty()) throw ParseError("expected a comma-separated list, got '" + v + "'");
  return out;
}

// Shortest text that parses back to the same double.
std::string fmt(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string fmt_list(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Key {
  const char* name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define PYCAT_INT(key, field) \
  Key { key, [](const RunConfig& c) { return std::to_string(c.field); }, [](RunConfig& c, const std::string& v) { c.field = to_int(v); } }
#define PYCAT_UINT(key, field)                                                \
  Key {                                                                       \
    key, [](const RunConfig& c) { return std::to_string(c.field); },          \
        [](RunConfig& c, const std::string& v) {                              \
          const int64_t x = to_int(v);                                        \
          if (x < 0) throw ParseError("expected a non-negative integer");     \
          c.field = static_cast<uint64_t>(x);                                 \
        }                                                                     \
  }
#define PYCAT_NARROW(key, field, type)                                  \
  Key {                                                                 \
    key, [](const RunConfig& c) { return std::to_string(c.field); },    \
        [](RunConfig& c, const std::string& v) { c.field = static_cast<type>(to_int(v)); } \
  }
#define PYCAT_DOUBLE(key, field) \
  Key { key, [](const RunConfig& c) { return fmt(c.field); }, [](RunConfig& c, const std::string& v) { c.field = to_double(v); } }
#define PYCAT_BOOL(key, field)                                                        \
  Key {                                                                               \
    key, [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); },  \
        [](RunConfig& c, const std::string& v) { c.field = to_bool(v); }              \
  }
#define PYCAT_LIST(key, field) \
  Key { key, [](const RunConfig& c) { return fmt_list(c.field); }, [](RunConfig& c, const std::string& v) { c.field = to_int_list(v); } }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      Key{"variant", [](const RunConfig& c) { return variant_id(c.model.variant); },
          [](RunConfig& c, const std::string& v) { c.model.variant = parse_variant(v); }},
      PYCAT_UINT("seed", seed),
      PYCAT_INT("frames", frames),
      PYCAT_INT("model.image_size", model.image_size),
      PYCAT_INT("model.width", model.width),
      PYCAT_LIST("model.depths", model.depths),
      PYCAT_LIST("model.heads", model.heads),
      PYCAT_NARROW("model.window", model.window, int),
      PYCAT_INT("model.fusion_channels", model.fusion_channels),
      PYCAT_INT("model.ca_reduction", model.ca_reduction),
      PYCAT_BOOL("model.aspp", model.aspp),
      PYCAT_INT("regressor.samples", model.regressor.samples),
      PYCAT_INT("regressor.hidden", model.regressor.hidden),
      PYCAT_DOUBLE("regressor.init_scale", model.regressor.init_scale),
      PYCAT_INT("temporal.width", model.temporal.width),
      PYCAT_NARROW("temporal.heads", model.temporal.heads, int),
      PYCAT_NARROW("temporal.spatial_depth", model.temporal.spatial_depth, int),
      PYCAT_NARROW("temporal.temporal_depth", model.temporal.temporal_depth, int),
      PYCAT_INT("temporal.max_frames", model.temporal.max_frames),
      PYCAT_DOUBLE("train.lr", lr),
      PYCAT_INT("train.batch", batch),
      PYCAT_INT("train.steps", steps),
      PYCAT_INT("train.log_every", log_every),
      PYCAT_INT("train.checkpoint_every", checkpoint_every),
      PYCAT_BOOL("train.augment", augment),
      PYCAT_DOUBLE("augment.rotation_deg", ranges.rotation_deg),
      PYCAT_DOUBLE("augment.scale_min", ranges.scale_min),
      PYCAT_DOUBLE("augment.scale_max", ranges.scale_max),
      PYCAT_DOUBLE("augment.crop", ranges.crop),
      PYCAT_DOUBLE("loss.keypoints2d", loss.keypoints2d),
      PYCAT_DOUBLE("loss.joints3d", loss.joints3d),
      PYCAT_DOUBLE("loss.vertices3d", loss.vertices3d),
      PYCAT_DOUBLE("loss.parts", loss.parts),
      PYCAT_DOUBLE("loss.uv", loss.uv),
      PYCAT_DOUBLE("loss.camera", loss.camera),
      PYCAT_DOUBLE("loss.min_scale", loss.min_scale),
      PYCAT_INT("data.train_count", train_count),
      PYCAT_INT("data.eval_count", eval_count),
      PYCAT_UINT("data.seed", data_seed),
      PYCAT_BOOL("data.video", video),
      PYCAT_INT("data.sequence_length", sequence_length),
      PYCAT_DOUBLE("eval.oks_sigma", oks_sigma),
  };
  return table;
}

void validate(const RunConfig& c) {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ParseError(msg);
  };
  const auto& m = c.model;
  require(m.image_size > 0 && m.image_size % 16 == 0, "model.image_size must be a positive multiple of 16");
  require(m.width > 0 && m.fusion_channels > 0 && m.ca_reduction > 0, "model widths must be positive");
  require(m.depths.size() == 4 && m.heads.size() == 4, "model.depths and model.heads need 4 entries");
  require(m.window > 0, "model.window must be positive");
  require(m.regressor.samples > 0 && m.regressor.hidden > 0, "regressor sizes must be positive");
  require(m.regressor.init_scale > 0, "regressor.init_scale must be positive");
  require(c.frames >= 1, "frames must be at least 1");
  require(c.frames <= m.temporal.max_frames, "frames exceeds temporal.max_frames");
  require(c.frames == 1 || uses_temporal(m.variant), "frames > 1 needs a temporal variant");
  require(c.lr >= 0, "train.lr must be non-negative");
  require(c.batch >= 1 && c.steps >= 0 && c.log_every >= 1 && c.checkpoint_every >= 0, "bad train schedule");
  require(c.ranges.rotation_deg >= 0 && c.ranges.rotation_deg <= 30, "augment.rotation_deg must lie in [0, 30]");
  require(c.ranges.scale_min >= 0.8 && c.ranges.scale_min <= c.ranges.scale_max && c.ranges.scale_max <= 1.2,
          "augment scale range must lie within [0.8, 1.2]");
  require(c.ranges.crop >= 0 && c.ranges.crop <= 0.1, "augment.crop must lie in [0, 0.1]");
  const auto& w = c.loss;
  require(w.keypoints2d >= 0 && w.joints3d >= 0 && w.vertices3d >= 0 && w.parts >= 0 && w.uv >= 0 && w.camera >= 0,
          "loss weights must be non-negative");
  require(c.train_count >= 1 && c.eval_count >= 1, "data counts must be positive");
  require(c.sequence_length >= 1, "data.sequence_length must be positive");
  require(c.oks_sigma > 0, "eval.oks_sigma must be positive");
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const Key* k = nullptr;
    for (const auto& cand : keys())
      if (key == cand.name) k = &cand;
    if (!k) throw ParseError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    try {
      k->set(c, value);
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(lineno) + ": " + key + ": " + e.what());
    }
  }
  validate(c);
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string format_config(const RunConfig& c) {
  std::string out;
  for (const auto& k : keys()) out += std::string(k.name) + " = " + k.get(c) + "\n";
  return out;
}

}  // namespace pycat
