#pragma once

#include <string>
#include <vector>

namespace sftok {

// One RGB image, row-major H*W*3, values in [-1, 1].
struct Image {
  int h = 0;
  int w = 0;
  std::vector<double> v;

  double& at(int y, int x, int c) { return v[(y * w + x) * 3 + c]; }
  double at(int y, int x, int c) const { return v[(y * w + x) * 3 + c]; }
};

Image make_image(int h, int w, double fill = 0.0);

// Binary PPM (P6, maxval 255). Bytes map linearly onto [-1, 1].
Image load_ppm(const std::string& path);
void save_ppm(const std::string& path, const Image& img);

// Bilinear resize so the shorter edge equals `target`, aspect preserved.
Image resize_shorter_edge(const Image& img, int target);
Image crop(const Image& img, int top, int left, int size);
Image center_crop(const Image& img, int size);
Image hflip(const Image& img);

}  // namespace sftok
