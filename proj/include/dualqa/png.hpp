#ifndef DUALQA_PNG_HPP
#define DUALQA_PNG_HPP

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dualqa/errors.hpp"
#include "dualqa/image.hpp"

namespace dualqa {

namespace detail {

inline void put_u32_be(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
  out.push_back(static_cast<unsigned char>(v & 0xff));
}

inline void put_chunk(std::vector<unsigned char>& out, const char type[4],
                      const std::vector<unsigned char>& data) {
  put_u32_be(out, static_cast<std::uint32_t>(data.size()));
  std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, out.data() + crc_start, static_cast<uInt>(4 + data.size()));
  put_u32_be(out, static_cast<std::uint32_t>(crc));
}

}  // namespace detail

/// Encodes an image as 8-bit PNG (RGB for 3 channels, grayscale for 1).
/// Values are quantized to the nearest integer. `comment`, when non-empty,
/// is stored in a tEXt chunk so run metadata (e.g. the seed) travels with
/// the artifact.
inline std::vector<unsigned char> encode_png(const Image& img,
                                             const std::string& comment = "") {
  const int h = img.height(), w = img.width(), c = img.channels();

  // Raw scanlines, filter byte 0 per row.
  std::vector<unsigned char> raw;
  raw.reserve(static_cast<std::size_t>(h) * (1 + w * c));
  for (int y = 0; y < h; ++y) {
    raw.push_back(0);
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        long q = std::lround(img.at(y, x, ch));
        raw.push_back(static_cast<unsigned char>(std::clamp(q, 0L, 255L)));
      }
  }

  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> idat(bound);
  if (compress2(idat.data(), &bound, raw.data(),
                static_cast<uLong>(raw.size()), 9) != Z_OK)
    throw Error("png: zlib compression failed");
  idat.resize(bound);

  std::vector<unsigned char> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a,
                                    0x1a, 0x0a};
  std::vector<unsigned char> ihdr;
  detail::put_u32_be(ihdr, static_cast<std::uint32_t>(w));
  detail::put_u32_be(ihdr, static_cast<std::uint32_t>(h));
  ihdr.push_back(8);                  // bit depth
  ihdr.push_back(c == 3 ? 2 : 0);     // color type: truecolor / grayscale
  ihdr.push_back(0);                  // compression
  ihdr.push_back(0);                  // filter
  ihdr.push_back(0);                  // interlace
  detail::put_chunk(out, "IHDR", ihdr);
  if (!comment.empty()) {
    std::vector<unsigned char> text;
    const char keyword[] = "Comment";
    text.insert(text.end(), keyword, keyword + sizeof(keyword));  // keeps NUL
    text.insert(text.end(), comment.begin(), comment.end());
    detail::put_chunk(out, "tEXt", text);
  }
  detail::put_chunk(out, "IDAT", idat);
  detail::put_chunk(out, "IEND", {});
  return out;
}

inline void write_png(const std::filesystem::path& path, const Image& img,
                      const std::string& comment = "") {
  auto bytes = encode_png(img, comment);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("png: cannot open " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("png: write failed for " + path.string());
}

}  // namespace dualqa

#endif  // DUALQA_PNG_HPP
