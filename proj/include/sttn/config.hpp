// Copyright (c) 2026 the sttn authors.
// Licensed under the Apache License, Version 2.0.
//
// Flat key-value run configuration: `key = value` lines, `#` comments,
// unknown keys rejected. The canonical serialization (fixed key order) feeds
// a 64-bit FNV-1a digest that ties checkpoints to the configuration that
// produced them.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "sttn/model.hpp"

namespace sttn {

struct RunConfig {
  ModelConfig model;

  // training
  Index steps = 2000;
  double lr = 1e-4;
  Index lr_decay_step = 150000;  // lr multiplies by 0.1 every this many steps
  double lambda_hole = 1.0;
  double lambda_valid = 1.0;
  double lambda_adv = 0.01;
  Index clip_frames = 5;  // frames sampled per training step
  Index checkpoint_every = 500;
  std::uint64_t seed = 0;
  Index data_threads = 0;  // 0 = generate clips synchronously

  // inference window sampling
  Index sample_radius = 2;
  Index sample_rate = 10;
  bool sample_distant = true;

  // synthetic data
  Index video_frames = 20;
  Index sprites = 3;
  Index max_speed = 3;
  std::string background = "gradient";  // gradient | texture

  // stationary masks
  Index mask_max_points = 12;
  double mask_max_length_frac = 0.4;

  void validate() const;
};

/// Parse config text; unknown keys and malformed values throw ValueError.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// `key = value` override, same schema as the file.
void apply_override(RunConfig* cfg, const std::string& assignment);

/// Canonical text form (fixed key order; exact round trip through parse).
std::string serialize_config(const RunConfig& cfg);

/// FNV-1a 64-bit digest of the canonical serialization.
std::uint64_t config_digest(const RunConfig& cfg);

}  // namespace sttn
