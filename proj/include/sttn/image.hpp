// Copyright (c) 2026 the sttn authors.
// Licensed under the Apache License, Version 2.0.
//
// Minimal 8-bit image container plus PGM (P5) encode/decode. PNG goes
// through libpng in src/image_io.cpp. File writes land atomically via a
// temp-file rename.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sttn/base.hpp"

namespace sttn {

struct ImageU8 {
  Index width = 0;
  Index height = 0;
  Index channels = 1;  // 1 = gray, 3 = rgb
  std::vector<std::uint8_t> pixels;  // row-major, interleaved

  std::uint8_t& at(Index y, Index x, Index c = 0) {
    return pixels[std::size_t((y * width + x) * channels + c)];
  }
  std::uint8_t at(Index y, Index x, Index c = 0) const {
    return pixels[std::size_t((y * width + x) * channels + c)];
  }
};

inline void write_file_atomic(const std::filesystem::path& path,
                              const std::vector<std::uint8_t>& bytes) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              std::streamsize(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

/// Binary PGM bytes for a grayscale image.
inline std::vector<std::uint8_t> pgm_bytes(const ImageU8& img) {
  require(img.channels == 1, "pgm: image must be grayscale");
  std::string header = "P5\n" + std::to_string(img.width) + " " +
                       std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

inline void write_pgm(const std::filesystem::path& path, const ImageU8& img) {
  write_file_atomic(path, pgm_bytes(img));
}

inline ImageU8 read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic == "P6")
    throw IoError(path.string() + ": color PPM where a grayscale PGM is required");
  if (magic != "P5") throw IoError(path.string() + ": not a binary PGM (P5)");
  auto next_token = [&in, &path]() {
    // skip whitespace and '#' comment lines
    std::string tok;
    while (in >> tok) {
      if (tok[0] != '#') return tok;
      std::string rest;
      std::getline(in, rest);
    }
    throw IoError(path.string() + ": truncated PGM header");
  };
  ImageU8 img;
  img.width = std::stoll(next_token());
  img.height = std::stoll(next_token());
  const long maxval = std::stol(next_token());
  if (maxval <= 0 || maxval > 255)
    throw IoError(path.string() + ": unsupported PGM maxval");
  in.get();  // single whitespace after maxval
  img.channels = 1;
  img.pixels.resize(std::size_t(img.width * img.height));
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          std::streamsize(img.pixels.size()));
  if (!in) throw IoError(path.string() + ": truncated PGM data");
  return img;
}

// libpng-backed RGB8 read/write (src/image_io.cpp).
ImageU8 read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const ImageU8& img);

}  // namespace sttn
