// File formats: PNG images and masks, correspondence lists, flat key-value
// metrics files and the shared checkpoint container.
#pragma once

#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "alignformer/flow.hpp"
#include "alignformer/geometry.hpp"
#include "alignformer/image.hpp"
#include "alignformer/tensor.hpp"

namespace af::io {

// ---------------------------------------------------------------------------
// PNG

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void write_png_raw(const std::filesystem::path& path, int width, int height, int channels, int bit_depth,
                          const std::vector<std::uint8_t>& bytes) {
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot open for writing: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng: cannot create write struct");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng: error writing " + path.string());
  }
  png_init_io(png, fp.get());
  const int color = channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  png_set_IHDR(png, info, width, height, bit_depth, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(width) * channels * (bit_depth / 8);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(bytes.data() + stride * y));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct RawPng {
  int width = 0, height = 0, channels = 0, bit_depth = 0;
  std::vector<std::uint8_t> bytes;
};

inline RawPng read_png_raw(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open image: " + path.string());
  std::uint8_t sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw std::runtime_error("not a PNG file: " + path.string());
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng: cannot create read struct");
  }
  RawPng raw;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng: error reading " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_read_update_info(png, info);
  raw.width = static_cast<int>(png_get_image_width(png, info));
  raw.height = static_cast<int>(png_get_image_height(png, info));
  raw.channels = png_get_channels(png, info);
  raw.bit_depth = png_get_bit_depth(png, info);
  if (raw.channels != 1 && raw.channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("unsupported channel count " + std::to_string(raw.channels) + " in " + path.string());
  }
  const std::size_t stride = png_get_rowbytes(png, info);
  raw.bytes.resize(stride * raw.height);
  rows.resize(raw.height);
  for (int y = 0; y < raw.height; ++y) rows[y] = raw.bytes.data() + stride * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return raw;
}

}  // namespace detail

/// Writes a 16-bit PNG; values are clamped to [0,1].
inline void save_image(const std::filesystem::path& path, const ImageTensor& image) {
  const std::size_t n = image.size();
  std::vector<std::uint8_t> bytes(n * 2);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = std::min(1.0, std::max(0.0, static_cast<double>(image.values()[i])));
    const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
    bytes[2 * i] = static_cast<std::uint8_t>(q >> 8);
    bytes[2 * i + 1] = static_cast<std::uint8_t>(q & 0xff);
  }
  detail::write_png_raw(path, image.width(), image.height(), image.channels(), 16, bytes);
}

/// Loads an 8- or 16-bit grayscale or RGB PNG into [0,1].
inline ImageTensor load_image(const std::filesystem::path& path) {
  const detail::RawPng raw = detail::read_png_raw(path);
  ImageTensor image(raw.height, raw.width, raw.channels);
  const std::size_t n = image.size();
  if (raw.bit_depth == 16) {
    for (std::size_t i = 0; i < n; ++i) {
      const unsigned q = (static_cast<unsigned>(raw.bytes[2 * i]) << 8) | raw.bytes[2 * i + 1];
      image.values()[i] = static_cast<float>(q / 65535.0);
    }
  } else if (raw.bit_depth == 8) {
    for (std::size_t i = 0; i < n; ++i) image.values()[i] = static_cast<float>(raw.bytes[i] / 255.0);
  } else {
    throw std::runtime_error("unsupported bit depth " + std::to_string(raw.bit_depth) + " in " + path.string());
  }
  return image;
}

/// Masks are 8-bit grayscale PNGs holding 0 or 255.
inline void save_mask(const std::filesystem::path& path, const BinaryMask& mask) {
  std::vector<std::uint8_t> bytes(mask.values().size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = mask.values()[i] ? 255 : 0;
  detail::write_png_raw(path, mask.width(), mask.height(), 1, 8, bytes);
}

inline BinaryMask load_mask(const std::filesystem::path& path) {
  const detail::RawPng raw = detail::read_png_raw(path);
  if (raw.channels != 1 || raw.bit_depth != 8) throw std::runtime_error("mask must be 8-bit grayscale: " + path.string());
  BinaryMask mask(raw.height, raw.width, 0);
  for (std::size_t i = 0; i < raw.bytes.size(); ++i) mask.values()[i] = raw.bytes[i] >= 128 ? 1 : 0;
  return mask;
}

// ---------------------------------------------------------------------------
// Correspondences: plain text "x_A y_A x_B y_B" per line.

inline void write_correspondences(const std::filesystem::path& path, const std::vector<Correspondence>& pairs) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write correspondences: " + path.string());
  os << std::setprecision(9);
  for (const auto& [a, b] : pairs) os << a.x << ' ' << a.y << ' ' << b.x << ' ' << b.y << '\n';
}

inline std::vector<Correspondence> read_correspondences(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read correspondences: " + path.string());
  std::vector<Correspondence> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    Correspondence c;
    if (!(ls >> c.first.x >> c.first.y >> c.second.x >> c.second.y)) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected four numbers");
    }
    out.push_back(c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Flat "key = value" text.

using KeyValues = std::map<std::string, std::string>;

inline std::string format_number(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline void write_key_values(const std::filesystem::path& path, const KeyValues& kv) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  for (const auto& [k, v] : kv) os << k << " = " << v << '\n';
}

inline KeyValues parse_key_values(std::istream& is) {
  KeyValues kv;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw std::runtime_error("malformed key-value line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return kv;
}

inline KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return parse_key_values(is);
}

// ---------------------------------------------------------------------------
// Checkpoint container: magic "AFCKPT01", u32 metadata count, then
// (string key, string value) pairs, u32 array count, then per array: string
// name, u32 ndim, u32 dims[ndim], float32 data. Strings are u32 length +
// bytes; all integers and floats little-endian.

inline constexpr char kCheckpointMagic[8] = {'A', 'F', 'C', 'K', 'P', 'T', '0', '1'};

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor<float>>> arrays;

  const Tensor<float>& array(const std::string& name) const {
    for (const auto& [n, t] : arrays) {
      if (n == name) return t;
    }
    throw std::out_of_range("checkpoint has no array " + name);
  }
  bool has_array(const std::string& name) const {
    for (const auto& [n, t] : arrays) {
      if (n == name) return true;
    }
    return false;
  }

  friend bool operator==(const Checkpoint& a, const Checkpoint& b) {
    return a.meta == b.meta && a.arrays == b.arrays;
  }
};

namespace detail {
inline void write_string(std::ostream& os, const std::string& s) {
  af::detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string read_string(std::istream& is) {
  const auto len = af::detail::read_le<std::uint32_t>(is);
  if (len > (1u << 24)) throw std::runtime_error("checkpoint: implausible string length");
  std::string s(len, '\0');
  if (!is.read(s.data(), len)) throw std::runtime_error("checkpoint: truncated string");
  return s;
}
}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint: " + path.string());
  os.write(kCheckpointMagic, 8);
  af::detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.meta.size()));
  for (const auto& [k, v] : ckpt.meta) {
    detail::write_string(os, k);
    detail::write_string(os, v);
  }
  af::detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.arrays.size()));
  for (const auto& [name, t] : ckpt.arrays) {
    detail::write_string(os, name);
    af::detail::write_le<std::uint32_t>(os, 4);
    for (int d : t.shape()) af::detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (float f : t.vec()) af::detail::write_le<float>(os, f);
  }
  if (!os) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw std::runtime_error("not a checkpoint file: " + path.string());
  }
  Checkpoint ckpt;
  const auto n_meta = af::detail::read_le<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = detail::read_string(is);
    ckpt.meta[k] = detail::read_string(is);
  }
  const auto n_arrays = af::detail::read_le<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_arrays; ++i) {
    std::string name = detail::read_string(is);
    const auto ndim = af::detail::read_le<std::uint32_t>(is);
    if (ndim > 4) throw std::runtime_error("checkpoint: array rank > 4 for " + name);
    Shape s{1, 1, 1, 1};
    for (std::uint32_t d = 0; d < ndim; ++d) s[4 - ndim + d] = static_cast<int>(af::detail::read_le<std::uint32_t>(is));
    Tensor<float> t(s);
    for (float& f : t.vec()) f = af::detail::read_le<float>(is);
    ckpt.arrays.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

/// FNV-1a over the raw bytes of every array, in order. Used to assert that
/// frozen modules were not modified.
inline std::string hash_arrays(const std::vector<std::pair<std::string, Tensor<float>>>& arrays) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& [name, t] : arrays) {
    mix(name.data(), name.size());
    mix(t.shape().data(), sizeof(int) * 4);
    mix(t.data(), t.size() * sizeof(float));
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace af::io
