#include "mdfn/ppm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace mdfn {

ImageU8 to_u8(const Tensor& image) {
  if (image.ndim() != 3 || image.dim(0) != 3)
    throw ShapeError(msg("to_u8: expected (3,H,W), got ", shape_str(image.shape())));
  ImageU8 out;
  out.h = image.dim(1);
  out.w = image.dim(2);
  out.rgb.resize(static_cast<size_t>(out.h) * out.w * 3);
  const auto src = image.data();
  const size_t plane = static_cast<size_t>(out.h) * out.w;
  for (size_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp(src[c * plane + p], 0.0, 1.0);
      out.rgb[p * 3 + c] = static_cast<uint8_t>(std::lround(v * 255.0));
    }
  return out;
}

Tensor to_tensor(const ImageU8& img) {
  Tensor out = Tensor::zeros({3, img.h, img.w});
  auto dst = out.data();
  const size_t plane = static_cast<size_t>(img.h) * img.w;
  for (size_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c) dst[c * plane + p] = img.rgb[p * 3 + c] / 255.0;
  return out;
}

void write_ppm(const std::string& path, const ImageU8& img) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError(msg("cannot open for writing: ", path));
  os << "P6\n" << img.w << " " << img.h << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.rgb.data()),
           static_cast<std::streamsize>(img.rgb.size()));
  if (!os) throw IoError(msg("write failure: ", path));
}

namespace {

// skips whitespace and '#' comments between header tokens
int next_header_int(std::istream& is, const std::string& path) {
  int c = is.get();
  while (c != EOF && (std::isspace(c) || c == '#')) {
    if (c == '#')
      while (c != EOF && c != '\n') c = is.get();
    c = is.get();
  }
  if (c == EOF || !std::isdigit(c)) throw IoError(msg("malformed PPM header: ", path));
  int v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    c = is.get();
  }
  return v;
}

}  // namespace

ImageU8 read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(msg("cannot open image: ", path));
  char m0 = 0, m1 = 0;
  is.get(m0);
  is.get(m1);
  if (m0 != 'P' || m1 != '6') throw IoError(msg("not a binary P6 PPM: ", path));
  ImageU8 img;
  img.w = next_header_int(is, path);
  img.h = next_header_int(is, path);
  const int maxval = next_header_int(is, path);
  if (maxval != 255) throw IoError(msg("unsupported PPM maxval ", maxval, " in ", path));
  if (img.w <= 0 || img.h <= 0) throw IoError(msg("bad PPM dimensions in ", path));
  img.rgb.resize(static_cast<size_t>(img.h) * img.w * 3);
  is.read(reinterpret_cast<char*>(img.rgb.data()),
          static_cast<std::streamsize>(img.rgb.size()));
  if (!is) throw IoError(msg("truncated PPM payload: ", path));
  return img;
}

void draw_rect(ImageU8& img, const Box& box, std::array<uint8_t, 3> color) {
  auto px = [](double c, int extent) {
    return std::clamp(static_cast<int>(std::lround(c * (extent - 1))), 0, extent - 1);
  };
  const int x1 = px(box.x1(), img.w), x2 = px(box.x2(), img.w);
  const int y1 = px(box.y1(), img.h), y2 = px(box.y2(), img.h);
  auto set = [&](int x, int y) {
    uint8_t* p = img.rgb.data() + (static_cast<size_t>(y) * img.w + x) * 3;
    p[0] = color[0];
    p[1] = color[1];
    p[2] = color[2];
  };
  for (int x = x1; x <= x2; ++x) {
    set(x, y1);
    set(x, y2);
  }
  for (int y = y1; y <= y2; ++y) {
    set(x1, y);
    set(x2, y);
  }
}

std::array<uint8_t, 3> class_color(int class_id) {
  switch (class_id) {
    case 1:
      return {255, 40, 40};
    case 2:
      return {40, 255, 40};
    case 3:
      return {60, 60, 255};
    default:
      return {255, 255, 255};
  }
}

}  // namespace mdfn
