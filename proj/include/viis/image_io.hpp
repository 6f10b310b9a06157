#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "viis/ispt.hpp"

namespace viis {

// Binary PPM (P6) for 3-channel and PGM (P5) for 1-channel images, maxval
// 255. Float <-> 8-bit via round(v*255) and v/255, so write-then-read
// round-trips 8-bit data exactly.

namespace detail {
// Reads one whitespace-delimited token, skipping '#' comments.
inline std::string pnm_token(std::istream& in, const std::string& path) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (!std::isspace(c)) {
      tok.push_back(static_cast<char>(c));
      while ((c = in.peek()) != EOF && !std::isspace(c) && c != '#') tok.push_back(static_cast<char>(in.get()));
      return tok;
    }
  }
  throw IoError(path + ": truncated header at byte offset " + std::to_string(in.tellg() == -1 ? 0 : (long)in.tellg()));
}
}  // namespace detail

inline Image read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open");
  std::string magic = detail::pnm_token(in, path);
  int channels;
  if (magic == "P6")
    channels = 3;
  else if (magic == "P5")
    channels = 1;
  else
    throw IoError(path + ": unsupported magic '" + magic + "' at byte offset 0");
  int w, h, maxval;
  try {
    w = std::stoi(detail::pnm_token(in, path));
    h = std::stoi(detail::pnm_token(in, path));
    maxval = std::stoi(detail::pnm_token(in, path));
  } catch (const std::logic_error&) {
    throw IoError(path + ": malformed header at byte offset " + std::to_string((long)in.tellg()));
  }
  if (w <= 0 || h <= 0) throw IoError(path + ": bad extents in header");
  if (maxval != 255)
    throw IoError(path + ": unsupported maxval " + std::to_string(maxval) + " at byte offset " +
                  std::to_string((long)in.tellg()));
  // exactly one whitespace byte separates header and payload
  in.get();
  const int64_t payload = static_cast<int64_t>(w) * h * channels;
  std::vector<unsigned char> raw(static_cast<size_t>(payload));
  in.read(reinterpret_cast<char*>(raw.data()), payload);
  if (in.gcount() != payload)
    throw IoError(path + ": truncated payload at byte offset " +
                  std::to_string(static_cast<long>(in.tellg() == -1 ? 0 : (long)in.tellg())));
  Image img({h, w, channels});
  for (int64_t i = 0; i < payload; ++i) img[i] = static_cast<float>(raw[static_cast<size_t>(i)]) / 255.0f;
  return img;
}

inline void write_image(const Image& img, const std::string& path) {
  if (img.rank() != 3 || (img.dim(2) != 1 && img.dim(2) != 3))
    throw DimError("write_image: expected [H,W,1] or [H,W,3]");
  const int h = img.dim(0), w = img.dim(1), c = img.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << (c == 3 ? "P6" : "P5") << "\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> raw(static_cast<size_t>(img.size()));
  for (int64_t i = 0; i < img.size(); ++i) {
    const double v = std::clamp(static_cast<double>(img[i]), 0.0, 1.0);
    raw[static_cast<size_t>(i)] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError(path + ": write failed");
}

}  // namespace viis
