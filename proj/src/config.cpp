// Copyright (c) 2026 the sttn authors.
// Licensed under the Apache License, Version 2.0.

#include "sttn/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace sttn {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

Index parse_index(const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    require(pos == v.size(), "trailing characters in integer '" + v + "'");
    return Index(x);
  } catch (const std::exception&) {
    throw ValueError("config: invalid integer '" + v + "'");
  }
}

double parse_double(const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    require(pos == v.size(), "trailing characters in number '" + v + "'");
    return x;
  } catch (const std::exception&) {
    throw ValueError("config: invalid number '" + v + "'");
  }
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValueError("config: invalid bool '" + v + "'");
}

std::vector<std::array<Index, 2>> parse_patches(const std::string& v) {
  std::vector<std::array<Index, 2>> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    const auto x = item.find('x');
    require(x != std::string::npos, "config: patch entry '" + item +
                                        "' must look like r1xr2");
    out.push_back({parse_index(trim(item.substr(0, x))),
                   parse_index(trim(item.substr(x + 1)))});
  }
  require(!out.empty(), "config: empty patch list");
  return out;
}

std::string format_patches(const std::vector<std::array<Index, 2>>& p) {
  std::string s;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(p[i][0]) + "x" + std::to_string(p[i][1]);
  }
  return s;
}

std::vector<Index> parse_index_list(const std::string& v) {
  std::vector<Index> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_index(trim(item)));
  return out;
}

std::string format_index_list(const std::vector<Index>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

using Setter = std::function<void(RunConfig*, const std::string&)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct Field {
  Setter set;
  Getter get;
};

// ordered: the serialization order defines the digest
const std::vector<std::pair<std::string, Field>>& schema() {
  static const std::vector<std::pair<std::string, Field>> s = {
      {"model.width",
       {[](RunConfig* c, const std::string& v) { c->model.frame_width = parse_index(v); },
        [](const RunConfig& c) { return std::to_string(c.model.frame_width); }}},
      {"model.height",
       {[](RunConfig* c, const std::string& v) { c->model.frame_height = parse_index(v); },
        [](const RunConfig& c) { return std::to_string(c.model.frame_height); }}},
      {"model.base_channels",
       {[](RunConfig* c, const std::string& v) { c->model.base_channels = parse_index(v); },
        [](const RunConfig& c) { return std::to_string(c.model.base_channels); }}},
      {"model.mid_channels",
       {[](RunConfig* c, const std::string& v) { c->model.mid_channels = parse_index(v); },
        [](const RunConfig& c) { return std::to_string(c.model.mid_channels); }}},
      {"model.channels",
       {[](RunConfig* c, const std::string& v) { c->model.channels = parse_index(v); },
        [](const RunConfig& c) { return std::to_string(c.model.channels); }}},
      {"model.layers",
       {[](RunConfig* c, const std::string& v) { c->model.layers = parse_index(v); },
        [](const RunConfig& c) { return std::to_string(c.model.layers); }}},
      {"model.patches",
       {[](RunConfig* c, const std::string& v) { c->model.head_patches = parse_patches(v); },
        [](const RunConfig& c) { return format_patches(c.model.head_patches); }}},
      {"model.visibility_threshold",
       {[](RunConfig* c, const std::string& v) { c->model.visibility_threshold = parse_double(v); },
        [](const RunConfig& c) { return format_double(c.model.visibility_threshold); }}},
      {"model.disc_channels",
       {[](RunConfig* c, const std::string& v) { c->model.disc_channels = parse_index_list(v); },
        [](const RunConfig& c) { return format_index_list(c.model.disc_channels); }}},
      {"train.steps",
       {[](RunConfig* c, const std::string& v) { c->steps = parse_index(v); },
        [](const RunConfig& c) { return std::to_string(c.steps); }}},
      {"train.lr",
       {[](RunConfig* c, const std::string& v) { c->lr = parse_double(v); },
        [](const RunConfig& c) { return format_double(c.lr); }}},
      {"train.lr_decay_step",
       {[](RunConfig* c, const std::string& v) { c->lr_decay_step = parse_index(v); },
        [](const RunConfig& c) { return std::to_string(c.lr_decay_step); }}},
      {"train.lambda_hole",
       {[](RunConfig* c, const std::string& v) { c->lambda_hole = parse_double(v); },
        [](const RunConfig& c) { return format_double(c.lambda_hole); }}},
      {"train.lambda_valid",
       {[](RunConfig* c, const std::string& v) { c->lambda_valid = parse_double(v); },
        [](const RunConfig& c) { return format_double(c.lambda_valid); }}},
      {"train.lambda_adv",
       {[](RunConfig* c, const std::string& v) { c->lambda_adv = parse_double(v); },
        [](const RunConfig& c) { return format_double(c.lambda_adv); }}},
      {"train.clip_frames",
       {[](RunConfig* c, const std::string& v) { c->clip_frames = parse_index(v); },
        [](const RunConfig& c) { return std::to_string(c.clip_frames); }}},
      {"train.checkpoint_every",
       {[](RunConfig* c, const std::string& v) { c->checkpoint_every = parse_index(v); },
        [](const RunConfig& c) { return std::to_string(c.checkpoint_every); }}},
      {"train.seed",
       {[](RunConfig* c, const std::string& v) { c->seed = std::uint64_t(parse_index(v)); },
        [](const RunConfig& c) { return std::to_string(c.seed); }}},
      {"train.data_threads",
       {[](RunConfig* c, const std::string& v) { c->data_threads = parse_index(v); },
        [](const RunConfig& c) { return std::to_string(c.data_threads); }}},
      {"sample.radius",
       {[](RunConfig* c, const std::string& v) { c->sample_radius = parse_index(v); },
        [](const RunConfig& c) { return std::to_string(c.sample_radius); }}},
      {"sample.rate",
       {[](RunConfig* c, const std::string& v) { c->sample_rate = parse_index(v); },
        [](const RunConfig& c) { return std::to_string(c.sample_rate); }}},
      {"sample.distant",
       {[](RunConfig* c, const std::string& v) { c->sample_distant = parse_bool(v); },
        [](const RunConfig& c) { return c.sample_distant ? "true" : "false"; }}},
      {"data.video_frames",
       {[](RunConfig* c, const std::string& v) { c->video_frames = parse_index(v); },
        [](const RunConfig& c) { return std::to_string(c.video_frames); }}},
      {"data.sprites",
       {[](RunConfig* c, const std::string& v) { c->sprites = parse_index(v); },
        [](const RunConfig& c) { return std::to_string(c.sprites); }}},
      {"data.max_speed",
       {[](RunConfig* c, const std::string& v) { c->max_speed = parse_index(v); },
        [](const RunConfig& c) { return std::to_string(c.max_speed); }}},
      {"data.background",
       {[](RunConfig* c, const std::string& v) {
          require(v == "gradient" || v == "texture",
                  "config: background must be gradient or texture");
          c->background = v;
        },
        [](const RunConfig& c) { return c.background; }}},
      {"mask.max_points",
       {[](RunConfig* c, const std::string& v) { c->mask_max_points = parse_index(v); },
        [](const RunConfig& c) { return std::to_string(c.mask_max_points); }}},
      {"mask.max_length_frac",
       {[](RunConfig* c, const std::string& v) { c->mask_max_length_frac = parse_double(v); },
        [](const RunConfig& c) { return format_double(c.mask_max_length_frac); }}},
  };
  return s;
}

const Field& field_for(const std::string& key) {
  for (const auto& [k, f] : schema())
    if (k == key) return f;
  throw ValueError("config: unknown key '" + key + "'");
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  require(steps >= 1, "config: train.steps must be positive");
  require(lr > 0, "config: train.lr must be positive");
  require(lr_decay_step >= 1, "config: train.lr_decay_step must be positive");
  require(lambda_hole >= 0 && lambda_valid >= 0 && lambda_adv >= 0,
          "config: loss weights must be nonnegative");
  require(clip_frames >= 3 && clip_frames <= video_frames,
          "config: train.clip_frames must be in [3, data.video_frames]");
  require(checkpoint_every >= 1, "config: train.checkpoint_every");
  require(sample_radius >= 0 && sample_rate >= 1, "config: sampling plan");
  require(video_frames >= 1, "config: data.video_frames");
  require(max_speed >= 0 && max_speed <= 4, "config: data.max_speed <= 4");
  require(mask_max_points >= 3, "config: mask.max_points >= 3");
  require(mask_max_length_frac > 0 && mask_max_length_frac < 1,
          "config: mask.max_length_frac in (0,1)");
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, "config line " + std::to_string(lineno) +
                                         ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    field_for(key).set(&cfg, value);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void apply_override(RunConfig* cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos,
          "override '" + assignment + "': expected key=value");
  const std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  field_for(key).set(cfg, value);
  cfg->validate();
}

std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [key, field] : schema())
    out += key + " = " + field.get(cfg) + "\n";
  return out;
}

std::uint64_t config_digest(const RunConfig& cfg) {
  const std::string text = serialize_config(cfg);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace sttn
