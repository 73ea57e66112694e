#pragma once

#include <cfenv>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "heatlens/tensor.hpp"

namespace heatlens {

// Raw netpbm payload: PGM P5 (1 channel) or PPM P6 (3 channels), maxval 255,
// interleaved bytes in raster order.
struct RawImage {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bytes;  // h*w*channels, pixel-interleaved
};

RawImage read_netpbm(std::istream& in);
void write_netpbm(std::ostream& out, const RawImage& img);
RawImage read_netpbm_file(const std::string& path);
void write_netpbm_file(const std::string& path, const RawImage& img);

// byte -> [0,1]
template <typename T>
Tensor<T> image_to_tensor(const RawImage& img) {
  const std::size_t c = img.channels, h = img.height, w = img.width;
  std::vector<T> vals(c * h * w);
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t i = 0; i < h * w; ++i)
      vals[ci * h * w + i] = static_cast<T>(img.bytes[i * c + ci]) / T(255);
  return Tensor<T>(Shape{c, h, w}, std::move(vals));
}

// [0,1] -> byte, clamped, round-half-even
template <typename T>
RawImage tensor_to_image(const Tensor<T>& t) {
  if (t.rank() != 3 || (t.shape()[0] != 1 && t.shape()[0] != 3))
    fail_shape("tensor_to_image", "expects [1,H,W] or [3,H,W], got " + shape_str(t.shape()));
  RawImage img;
  img.channels = t.shape()[0];
  img.height = t.shape()[1];
  img.width = t.shape()[2];
  img.bytes.resize(t.size());
  const auto& v = t.values();
  const std::size_t hw = img.height * img.width;
  for (std::size_t ci = 0; ci < img.channels; ++ci)
    for (std::size_t i = 0; i < hw; ++i) {
      T x = v[ci * hw + i];
      x = x < T(0) ? T(0) : (x > T(1) ? T(1) : x);
      // default FP environment rounds to nearest even
      img.bytes[i * img.channels + ci] =
          static_cast<std::uint8_t>(std::nearbyint(x * T(255)));
    }
  return img;
}

}  // namespace heatlens
