#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mdfn/boxes.hpp"
#include "mdfn/tensor.hpp"

namespace mdfn {

struct ImageU8 {
  int h = 0, w = 0;
  std::vector<uint8_t> rgb;  // interleaved, row-major
};

ImageU8 to_u8(const Tensor& image);   // (3,H,W) in [0,1], round to 0..255
Tensor to_tensor(const ImageU8& img); // back to (3,H,W) in [0,1]

// binary P6, maxval 255
void write_ppm(const std::string& path, const ImageU8& img);
ImageU8 read_ppm(const std::string& path);

// 1-px rectangle border; normalized corner c maps to pixel round(c*(S-1))
void draw_rect(ImageU8& img, const Box& box, std::array<uint8_t, 3> color);

std::array<uint8_t, 3> class_color(int class_id);

}  // namespace mdfn
