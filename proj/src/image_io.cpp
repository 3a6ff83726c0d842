#include "adair/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace adair {

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(const std::string& bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  Index number(const char* what) {
    skip_space_and_comments();
    const auto start = pos_;
    Index value = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > (Index{1} << 30)) fail(ErrorKind::MalformedHeader, std::string(what) + " is too large");
      ++pos_;
    }
    if (pos_ == start) fail(ErrorKind::MalformedHeader, std::string("expected ") + what);
    return value;
  }

  /// Exactly one whitespace byte separates maxval from the payload.
  std::size_t payload_start() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      fail(ErrorKind::MalformedHeader, "missing whitespace after maxval");
    }
    return pos_ + 1;
  }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 2;
};

}  // namespace

Image decode_ppm(const std::string& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') fail(ErrorKind::MalformedHeader, "magic is not P6");
  HeaderReader header(bytes);
  const Index width = header.number("width");
  const Index height = header.number("height");
  const Index maxval = header.number("maxval");
  if (width <= 0 || height <= 0) fail(ErrorKind::MalformedHeader, "image extents must be positive");
  if (maxval <= 0 || maxval > 255) fail(ErrorKind::MalformedHeader, "only 8-bit maxval (1..255) is supported");
  const std::size_t start = header.payload_start();
  const auto needed = static_cast<std::size_t>(width * height * 3);
  if (bytes.size() - start < needed) {
    fail(ErrorKind::TruncatedPayload, "payload has " + std::to_string(bytes.size() - start) + " of " +
                                          std::to_string(needed) + " bytes");
  }
  Image img({3, height, width});
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x)
      for (Index c = 0; c < 3; ++c) {
        const auto byte = static_cast<unsigned char>(bytes[start + static_cast<std::size_t>((y * width + x) * 3 + c)]);
        img.data_mut()[(c * height + y) * width + x] = std::min<double>(byte, static_cast<double>(maxval)) / static_cast<double>(maxval);
      }
  return img;
}

Image read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_ppm(ss.str());
}

std::string encode_ppm(const Image& img) {
  if (img.rank() != 3 || img.dim(0) != 3) {
    fail(ErrorKind::ShapeMismatch, "write_image expects 3×H×W, got " + shape_string(img.shape()));
  }
  const Index h = img.dim(1), w = img.dim(2);
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  const std::size_t header = out.size();
  out.resize(header + static_cast<std::size_t>(h * w * 3));
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < 3; ++c) {
        const double v = std::clamp(img.data()[(c * h + y) * w + x], 0.0, 1.0);
        out[header + static_cast<std::size_t>((y * w + x) * 3 + c)] = static_cast<char>(std::lround(v * 255.0));
      }
  return out;
}

void write_image(const std::string& path, const Image& img) {
  const auto bytes = encode_ppm(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "short write to " + path);
}

}  // namespace adair
