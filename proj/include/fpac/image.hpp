#ifndef FPAC_IMAGE_HPP
#define FPAC_IMAGE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fpac {

// Pixel frame with values in [0, 1], stored [channel][row][col].
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;

  Image() = default;
  Image(int c, int h, int w)
      : channels(c), height(h), width(w),
        values(static_cast<std::size_t>(c) * h * w, 0.0) {}

  double& at(int c, int y, int x) {
    return values[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return values[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

// Quantized frame for replay storage.
struct ImageU8 {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;
};

inline ImageU8 quantize(const Image& img) {
  ImageU8 out;
  out.channels = img.channels;
  out.height = img.height;
  out.width = img.width;
  out.values.resize(img.values.size());
  for (std::size_t i = 0; i < img.values.size(); ++i) {
    double v = std::clamp(img.values[i], 0.0, 1.0);
    out.values[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

// Write a portable gray/pixmap. Grayscale images go to PGM (P5), 3-channel
// to PPM (P6).
inline void write_pnm(const Image& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_pnm: cannot open " + path);
  auto q = quantize(img);
  if (img.channels == 1) {
    f << "P5\n" << img.width << " " << img.height << "\n255\n";
    f.write(reinterpret_cast<const char*>(q.values.data()),
            static_cast<std::streamsize>(q.values.size()));
  } else if (img.channels == 3) {
    f << "P6\n" << img.width << " " << img.height << "\n255\n";
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        for (int c = 0; c < 3; ++c) {
          std::uint8_t v = q.values[(static_cast<std::size_t>(c) * img.height + y) * img.width + x];
          f.write(reinterpret_cast<const char*>(&v), 1);
        }
  } else {
    throw std::invalid_argument("write_pnm: unsupported channel count");
  }
}

}  // namespace fpac

#endif  // FPAC_IMAGE_HPP
