#include "ebnet/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ebnet {

namespace {

// Skips whitespace and '#' comments, then reads one header token.
std::string next_token(std::istream& in) {
  std::string tok;
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  while (c != EOF && !std::isspace(c)) {
    tok.push_back(static_cast<char>(c));
    c = in.get();
  }
  if (tok.empty()) throw ParseError("unexpected end of netpbm header");
  return tok;
}

int next_int(std::istream& in) {
  const std::string tok = next_token(in);
  try {
    return std::stoi(tok);
  } catch (const std::exception&) {
    throw ParseError("bad netpbm header token '" + tok + "'");
  }
}

struct PnmHeader {
  std::string magic;
  int width = 0, height = 0, maxval = 0;
  int channels() const { return (magic == "P3" || magic == "P6") ? 3 : 1; }
  bool ascii() const { return magic == "P2" || magic == "P3"; }
};

PnmHeader read_header(std::istream& in, const std::string& path) {
  PnmHeader h;
  h.magic = next_token(in);
  if (h.magic != "P2" && h.magic != "P3" && h.magic != "P5" && h.magic != "P6") {
    throw ParseError(path + ": unsupported netpbm magic '" + h.magic + "'");
  }
  h.width = next_int(in);
  h.height = next_int(in);
  h.maxval = next_int(in);
  if (h.width < 1 || h.height < 1 || h.maxval < 1 || h.maxval > 65535) {
    throw ParseError(path + ": bad netpbm dimensions or maxval");
  }
  return h;
}

}  // namespace

Tensor read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path);
  const PnmHeader h = read_header(in, path);
  const int C = h.channels(), H = h.height, W = h.width;
  const std::int64_t n = static_cast<std::int64_t>(C) * H * W;
  Tensor out({C, H, W});

  if (h.ascii()) {
    // ASCII samples are interleaved per pixel; deinterleave into planes.
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(H) * W; ++i) {
      for (int c = 0; c < C; ++c) out[static_cast<std::int64_t>(c) * H * W + i] = next_int(in);
    }
    return out;
  }

  const int bytes_per_sample = h.maxval > 255 ? 2 : 1;
  std::vector<unsigned char> buf(static_cast<std::size_t>(n) * bytes_per_sample);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
    throw ParseError(path + ": truncated pixel data");
  }
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(H) * W; ++i) {
    for (int c = 0; c < C; ++c) {
      const std::size_t s = static_cast<std::size_t>(i * C + c) * bytes_per_sample;
      double v;
      if (bytes_per_sample == 2) {
        v = 256.0 * buf[s] + buf[s + 1];  // network byte order per netpbm
      } else {
        v = buf[s];
      }
      out[static_cast<std::int64_t>(c) * H * W + i] = v;
    }
  }
  return out;
}

std::vector<int> pnm_extents(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path);
  const PnmHeader h = read_header(in, path);
  return {h.channels(), h.height, h.width};
}

void write_pnm8(const std::string& path, const Tensor& image) {
  if (image.ndim() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw ShapeMismatch("write_pnm8 expects 1 x h x w or 3 x h x w, got " + image.shape_str());
  }
  const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image " + path);
  out << (C == 1 ? "P5" : "P6") << "\n" << W << " " << H << "\n255\n";
  std::vector<unsigned char> buf(static_cast<std::size_t>(C) * H * W);
  std::int64_t j = 0;
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(H) * W; ++i) {
    for (int c = 0; c < C; ++c) {
      const double v = std::lround(image[static_cast<std::int64_t>(c) * H * W + i]);
      buf[static_cast<std::size_t>(j++)] =
          static_cast<unsigned char>(std::clamp(v, 0.0, 255.0));
    }
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed writing " + path);
}

void write_pgm16_scaled(const std::string& path, const Tensor& map) {
  if (map.ndim() != 3 || map.dim(0) != 1) {
    throw ShapeMismatch("write_pgm16_scaled expects 1 x h x w, got " + map.shape_str());
  }
  const int H = map.dim(1), W = map.dim(2);
  const double maxv = map.max_value();
  const double scale = maxv > 0.0 ? 65535.0 / maxv : 0.0;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image " + path);
  std::ostringstream maxrep;
  maxrep.precision(17);
  maxrep << maxv;
  out << "P5\n# max " << maxrep.str() << "\n" << W << " " << H << "\n65535\n";
  std::vector<unsigned char> buf(static_cast<std::size_t>(H) * W * 2);
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(H) * W; ++i) {
    const long q = std::clamp(std::lround(map[i] * scale), 0L, 65535L);
    buf[static_cast<std::size_t>(2 * i)] = static_cast<unsigned char>(q >> 8);
    buf[static_cast<std::size_t>(2 * i + 1)] = static_cast<unsigned char>(q & 0xff);
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed writing " + path);
}

void write_ebmap(const std::string& path, const Tensor& map) {
  if (map.ndim() != 3 || map.dim(0) != 1) {
    throw ShapeMismatch("write_ebmap expects 1 x h x w, got " + map.shape_str());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "EBMAP " << map.dim(1) << " " << map.dim(2) << "\n";
  static_assert(sizeof(double) == 8);
  // Host is little-endian on every supported target; bytes go out as stored.
  out.write(reinterpret_cast<const char*>(map.data()),
            static_cast<std::streamsize>(map.numel() * 8));
  if (!out) throw IoError("failed writing " + path);
}

Tensor read_ebmap(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string magic;
  int h = 0, w = 0;
  in >> magic >> h >> w;
  if (magic != "EBMAP" || h < 1 || w < 1) throw ParseError(path + ": not an EBMAP file");
  in.get();  // the single newline before the payload
  Tensor out({1, h, w});
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.numel() * 8));
  if (in.gcount() != static_cast<std::streamsize>(out.numel() * 8)) {
    throw ParseError(path + ": truncated EBMAP payload");
  }
  return out;
}

Tensor read_mask_pgm(const std::string& path) {
  Tensor img = read_pnm(path);
  if (img.dim(0) != 1) throw ShapeMismatch("mask must be grayscale: " + path);
  for (std::int64_t i = 0; i < img.numel(); ++i) img[i] = img[i] != 0.0 ? 1.0 : 0.0;
  return img;
}

}  // namespace ebnet
