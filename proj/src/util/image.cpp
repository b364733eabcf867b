#include "util/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "util/error.hpp"

namespace sftok {

Image make_image(int h, int w, double fill) {
  check(h > 0 && w > 0, ErrorCode::invalid_argument, "image dims must be positive");
  Image img;
  img.h = h;
  img.w = w;
  img.v.assign(static_cast<size_t>(h) * w * 3, fill);
  return img;
}

namespace {

// Skips whitespace and '#' comment lines between PPM header fields.
int next_header_int(std::istream& in, const std::string& path) {
  while (true) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int value = -1;
  in >> value;
  check(in.good() && value >= 0, ErrorCode::io, path + ": malformed PPM header");
  return value;
}

}  // namespace

Image load_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), ErrorCode::io, "cannot open " + path);
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  check(in.good() && magic == "P6", ErrorCode::io,
        path + ": not a binary PPM (P6) file");
  int w = next_header_int(in, path);
  int h = next_header_int(in, path);
  int maxval = next_header_int(in, path);
  check(maxval == 255, ErrorCode::unsupported,
        path + ": only maxval 255 is supported");
  in.get();  // single whitespace after maxval

  Image img = make_image(h, w);
  std::vector<unsigned char> bytes(static_cast<size_t>(h) * w * 3);
  in.read(reinterpret_cast<char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  check(!in.fail(), ErrorCode::io, path + ": truncated pixel data");
  for (size_t i = 0; i < bytes.size(); ++i)
    img.v[i] = bytes[i] / 127.5 - 1.0;
  return img;
}

void save_ppm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), ErrorCode::io, "cannot write " + path);
  out << "P6\n" << img.w << " " << img.h << "\n255\n";
  std::vector<unsigned char> bytes(img.v.size());
  for (size_t i = 0; i < img.v.size(); ++i) {
    double b = std::lround((std::clamp(img.v[i], -1.0, 1.0) + 1.0) * 127.5);
    bytes[i] = static_cast<unsigned char>(std::clamp(b, 0.0, 255.0));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  check(out.good(), ErrorCode::io, "write failed for " + path);
}

Image resize_shorter_edge(const Image& img, int target) {
  check(target > 0, ErrorCode::invalid_argument, "resize target must be positive");
  const int shorter = std::min(img.h, img.w);
  const double s = static_cast<double>(target) / shorter;
  const int nh = std::max(target, static_cast<int>(std::lround(img.h * s)));
  const int nw = std::max(target, static_cast<int>(std::lround(img.w * s)));

  Image out = make_image(nh, nw);
  for (int y = 0; y < nh; ++y) {
    // Align sample centers: map output pixel center to input coordinates.
    double sy = (y + 0.5) * img.h / nh - 0.5;
    int y0 = std::clamp(static_cast<int>(std::floor(sy)), 0, img.h - 1);
    int y1 = std::min(y0 + 1, img.h - 1);
    double fy = std::clamp(sy - y0, 0.0, 1.0);
    for (int x = 0; x < nw; ++x) {
      double sx = (x + 0.5) * img.w / nw - 0.5;
      int x0 = std::clamp(static_cast<int>(std::floor(sx)), 0, img.w - 1);
      int x1 = std::min(x0 + 1, img.w - 1);
      double fx = std::clamp(sx - x0, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) {
        double top = img.at(y0, x0, c) * (1 - fx) + img.at(y0, x1, c) * fx;
        double bot = img.at(y1, x0, c) * (1 - fx) + img.at(y1, x1, c) * fx;
        out.at(y, x, c) = top * (1 - fy) + bot * fy;
      }
    }
  }
  return out;
}

Image crop(const Image& img, int top, int left, int size) {
  check(top >= 0 && left >= 0 && top + size <= img.h && left + size <= img.w,
        ErrorCode::out_of_range, "crop window outside image");
  Image out = make_image(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = img.at(top + y, left + x, c);
  return out;
}

Image center_crop(const Image& img, int size) {
  return crop(img, (img.h - size) / 2, (img.w - size) / 2, size);
}

Image hflip(const Image& img) {
  Image out = make_image(img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = img.at(y, img.w - 1 - x, c);
  return out;
}

}  // namespace sftok
