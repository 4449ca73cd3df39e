#include "vpseg/image.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "vpseg/tensor.hpp"

namespace vpseg {

namespace {

void write_pgm_header(std::ostream& os, int w, int h, int maxval) {
  os << "P5\n" << w << " " << h << "\n" << maxval << "\n";
}

// Skips whitespace and '#' comment lines, then reads one unsigned integer.
int read_pnm_int(std::istream& is) {
  int c = is.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = is.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = is.get();
  }
  if (c == EOF || !std::isdigit(c)) throw std::runtime_error("pgm: malformed header");
  int value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    c = is.get();
  }
  return value;
}

struct PgmHeader {
  int width, height, maxval;
};

PgmHeader read_pgm_header(std::istream& is, const std::string& path) {
  char m0 = 0, m1 = 0;
  is.get(m0);
  is.get(m1);
  if (m0 != 'P' || m1 != '5') throw std::runtime_error("pgm: not a P5 file: " + path);
  PgmHeader h;
  h.width = read_pnm_int(is);
  h.height = read_pnm_int(is);
  h.maxval = read_pnm_int(is);
  if (h.width < 1 || h.height < 1 || h.maxval < 1 || h.maxval > 65535) {
    throw std::runtime_error("pgm: bad dimensions in " + path);
  }
  return h;
}

}  // namespace

void write_pgm(const GrayImage& img, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_pgm: cannot open " + path);
  write_pgm_header(os, img.width(), img.height(), 255);
  os.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
  if (!os) throw std::runtime_error("write_pgm: write failed for " + path);
}

void write_pgm16(const LabelMap& img, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_pgm16: cannot open " + path);
  write_pgm_header(os, img.width(), img.height(), 65535);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const std::uint16_t v = img.data()[i];
    const unsigned char bytes[2] = {static_cast<unsigned char>(v >> 8),
                                    static_cast<unsigned char>(v & 0xff)};
    os.write(reinterpret_cast<const char*>(bytes), 2);
  }
  if (!os) throw std::runtime_error("write_pgm16: write failed for " + path);
}

GrayImage read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_pgm: cannot open " + path);
  const PgmHeader h = read_pgm_header(is, path);
  if (h.maxval > 255) throw std::runtime_error("read_pgm: 16-bit file, expected 8-bit: " + path);
  GrayImage img(h.height, h.width);
  is.read(reinterpret_cast<char*>(img.data()), static_cast<std::streamsize>(img.size()));
  if (!is) throw std::runtime_error("read_pgm: truncated file " + path);
  return img;
}

LabelMap read_pgm_labels(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_pgm_labels: cannot open " + path);
  const PgmHeader h = read_pgm_header(is, path);
  LabelMap img(h.height, h.width);
  if (h.maxval <= 255) {
    std::vector<unsigned char> buf(img.size());
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    for (std::size_t i = 0; i < buf.size(); ++i) img.data()[i] = buf[i];
  } else {
    for (std::size_t i = 0; i < img.size(); ++i) {
      unsigned char bytes[2];
      is.read(reinterpret_cast<char*>(bytes), 2);
      img.data()[i] = static_cast<std::uint16_t>((bytes[0] << 8) | bytes[1]);
    }
  }
  if (!is) throw std::runtime_error("read_pgm_labels: truncated file " + path);
  return img;
}

GrayImage resize_gray(const GrayImage& img, int out_h, int out_w) {
  Tensor t({img.height(), img.width()});
  for (std::size_t i = 0; i < img.size(); ++i) t.data()[i] = static_cast<float>(img.data()[i]);
  const Tensor r = bilinear_resize(t, out_h, out_w);
  GrayImage out(out_h, out_w);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float v = std::round(r.data()[i]);
    out.data()[i] = static_cast<std::uint8_t>(v < 0.0f ? 0.0f : (v > 255.0f ? 255.0f : v));
  }
  return out;
}

}  // namespace vpseg
