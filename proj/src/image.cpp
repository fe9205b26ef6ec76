#include "rtn/image.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace rtn {

namespace {

// PPM header tokens may be separated by whitespace and '#' comments.
int read_header_int(std::istream& in, const std::string& path) {
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
    } else if (!std::isspace(ch)) {
      break;
    }
  }
  if (ch == EOF) throw ParseError(path + ": truncated PPM header");
  int value = 0;
  bool any = false;
  while (ch != EOF && std::isdigit(ch)) {
    value = value * 10 + (ch - '0');
    any = true;
    ch = in.get();
  }
  if (!any) throw ParseError(path + ": malformed PPM header token");
  if (ch != EOF) in.unget();
  return value;
}

}  // namespace

Image load_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open");
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || m1 != '6') throw ParseError(path + ": not a binary PPM (P6)");
  const int w = read_header_int(in, path);
  const int h = read_header_int(in, path);
  const int maxval = read_header_int(in, path);
  if (maxval != 255) throw ParseError(path + ": unsupported maxval " + std::to_string(maxval));
  if (w < 1 || h < 1) throw ParseError(path + ": degenerate dimensions");
  in.get();  // single whitespace after maxval
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw ParseError(path + ": truncated pixel data at byte offset " +
                     std::to_string(in.gcount()));
  }
  Image img(h, w);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    img.pixels[i] = static_cast<double>(raw[i]) / 255.0;
  }
  return img;
}

void save_ppm(const Image& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path + ": cannot write");
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> raw(img.pixels.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    double v = img.pixels[i];
    v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    raw[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw DataError(path + ": write failed");
}

KeypointSet load_keypoints(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open");
  KeypointSet set;
  std::set<int> ids;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream is(line);
    Keypoint kp;
    if (!(is >> kp.id >> kp.x >> kp.y)) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected 'id x y'");
    }
    std::string rest;
    if (is >> rest) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": trailing token '" + rest + "'");
    }
    if (!ids.insert(kp.id).second) {
      throw DataError(path + ":" + std::to_string(lineno) + ": duplicate keypoint id " +
                      std::to_string(kp.id));
    }
    set.points.push_back(kp);
  }
  return set;
}

void save_keypoints(const KeypointSet& kps, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError(path + ": cannot write");
  char buf[96];
  for (const auto& p : kps.points) {
    std::snprintf(buf, sizeof(buf), "%d %.17g %.17g\n", p.id, p.x, p.y);
    out << buf;
  }
}

}  // namespace rtn
