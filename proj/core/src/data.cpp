#include "mdfn/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "mdfn/ppm.hpp"

namespace fs = std::filesystem;

namespace mdfn {

const std::vector<std::string>& class_names() {
  static const std::vector<std::string> names = {"rect", "disc", "triangle"};
  return names;
}

nlohmann::json SceneSpec::to_json() const {
  return {{"image_size", image_size},
          {"min_objects", min_objects},
          {"max_objects", max_objects},
          {"small_fraction", small_fraction},
          {"occlusion_fraction", occlusion_fraction},
          {"seed", seed}};
}

SceneSpec SceneSpec::from_json(const nlohmann::json& j) {
  SceneSpec s;
  s.image_size = j.value("image_size", s.image_size);
  s.min_objects = j.value("min_objects", s.min_objects);
  s.max_objects = j.value("max_objects", s.max_objects);
  s.small_fraction = j.value("small_fraction", s.small_fraction);
  s.occlusion_fraction = j.value("occlusion_fraction", s.occlusion_fraction);
  s.seed = j.value("seed", s.seed);
  return s;
}

namespace {

struct ShapeInstance {
  int class_id = 0;
  double cx = 0, cy = 0, sx = 0, sy = 0;  // center and half-extents
  std::array<double, 3> color{};
  bool placed = false;

  bool contains(double px, double py) const {
    const double dx = px - cx, dy = py - cy;
    switch (class_id) {
      case 1:
        return std::abs(dx) <= sx && std::abs(dy) <= sy;
      case 2: {
        const double a = dx / sx, b = dy / sy;
        return a * a + b * b <= 1.0;
      }
      case 3: {  // isoceles triangle pointing up
        if (dy < -sy || dy > sy) return false;
        const double t = (dy + sy) / (2.0 * sy);
        return std::abs(dx) <= sx * t;
      }
      default:
        return false;
    }
  }

  Box bbox() const { return {cx, cy, 2 * sx, 2 * sy}; }
};

double bbox_cover(const Box& earlier, const Box& later) {
  const double ix1 = std::max(earlier.x1(), later.x1());
  const double iy1 = std::max(earlier.y1(), later.y1());
  const double ix2 = std::min(earlier.x2(), later.x2());
  const double iy2 = std::min(earlier.y2(), later.y2());
  if (ix2 <= ix1 || iy2 <= iy1) return 0.0;
  return (ix2 - ix1) * (iy2 - iy1) / earlier.area();
}

// exact raster fraction of `target`'s pixels that fall inside `cover`
double pixel_cover(const ShapeInstance& target, const ShapeInstance& cover, int size) {
  long long own = 0, covered = 0;
  const int y_lo = std::max(0, static_cast<int>((target.cy - target.sy) * size) - 1);
  const int y_hi = std::min(size - 1, static_cast<int>((target.cy + target.sy) * size) + 1);
  const int x_lo = std::max(0, static_cast<int>((target.cx - target.sx) * size) - 1);
  const int x_hi = std::min(size - 1, static_cast<int>((target.cx + target.sx) * size) + 1);
  for (int y = y_lo; y <= y_hi; ++y) {
    const double py = (y + 0.5) / size;
    for (int x = x_lo; x <= x_hi; ++x) {
      const double px = (x + 0.5) / size;
      if (!target.contains(px, py)) continue;
      ++own;
      if (cover.contains(px, py)) ++covered;
    }
  }
  return own == 0 ? 0.0 : static_cast<double>(covered) / static_cast<double>(own);
}

std::array<double, 3> sample_color(int class_id, Rng& rng) {
  auto hi = [&] { return 0.62 + 0.33 * rng.uniform(); };
  auto lo = [&] { return 0.05 + 0.20 * rng.uniform(); };
  switch (class_id) {
    case 1:
      return {hi(), lo(), lo()};
    case 2:
      return {lo(), hi(), lo()};
    default:
      return {lo(), lo(), hi()};
  }
}

int stochastic_round(double x, Rng& rng) {
  const double f = std::floor(x);
  return static_cast<int>(f) + (rng.uniform() < x - f ? 1 : 0);
}

}  // namespace

double raster_cover_fraction(int target_class, const Box& target, int cover_class,
                             const Box& cover, int image_size) {
  ShapeInstance t;
  t.class_id = target_class;
  t.cx = target.cx;
  t.cy = target.cy;
  t.sx = target.w / 2;
  t.sy = target.h / 2;
  ShapeInstance c;
  c.class_id = cover_class;
  c.cx = cover.cx;
  c.cy = cover.cy;
  c.sx = cover.w / 2;
  c.sy = cover.h / 2;
  return pixel_cover(t, c, image_size);
}

Scene generate(const SceneSpec& spec, int index) {
  if (spec.image_size < 8)
    throw ValueError(msg("generate: image_size too small: ", spec.image_size));
  if (spec.min_objects < 0 || spec.max_objects < spec.min_objects)
    throw ValueError(msg("generate: bad objects_per_image range [", spec.min_objects, ",",
                         spec.max_objects, "]"));
  Rng rng = Rng::derive(spec.seed, static_cast<uint64_t>(index));
  const int size = spec.image_size;

  const int n = spec.min_objects == spec.max_objects
                    ? spec.min_objects
                    : rng.uniform_int(spec.min_objects, spec.max_objects);

  std::vector<ShapeInstance> shapes(n);
  for (int i = 0; i < n; ++i) {
    ShapeInstance& s = shapes[i];
    s.class_id = 1 + rng.uniform_int(0, 2);
    const bool small = rng.uniform() < spec.small_fraction;
    const double area = small ? rng.uniform(0.015, 0.045) : rng.uniform(0.06, 0.16);
    const double aspect = rng.uniform(0.6, 1.6);
    s.sx = 0.5 * std::sqrt(area * aspect);
    s.sy = 0.5 * std::sqrt(area / aspect);
    s.color = sample_color(s.class_id, rng);
  }

  // pick which objects a later neighbor should cover
  std::vector<bool> occludee(n, false);
  if (n >= 2 && spec.occlusion_fraction > 0.0) {
    int quota = std::min(n - 1, stochastic_round(spec.occlusion_fraction * n, rng));
    std::vector<int> cand(n - 1);
    for (int i = 0; i < n - 1; ++i) cand[i] = i;
    for (int i = 0; i < quota; ++i) {
      const int j = rng.uniform_int(i, n - 2);
      std::swap(cand[i], cand[j]);
      occludee[cand[i]] = true;
    }
    // the designated occluder must be large enough to cover 30%
    for (int i = 0; i < n - 1; ++i) {
      if (!occludee[i]) continue;
      const double a_i = shapes[i].sx * shapes[i].sy;
      const double a_j = shapes[i + 1].sx * shapes[i + 1].sy;
      if (a_j < 0.6 * a_i) {
        std::swap(shapes[i].sx, shapes[i + 1].sx);
        std::swap(shapes[i].sy, shapes[i + 1].sy);
      }
    }
  }

  const double edge = 0.01;
  auto clamp_center = [&](ShapeInstance& s) {
    s.cx = std::clamp(s.cx, s.sx + edge, 1.0 - s.sx - edge);
    s.cy = std::clamp(s.cy, s.sy + edge, 1.0 - s.sy - edge);
  };

  int n_placed = 0;
  for (int i = 0; i < n; ++i) {
    ShapeInstance& s = shapes[i];
    if (s.sx + edge >= 0.5 || s.sy + edge >= 0.5) continue;  // cannot fit
    const bool pairs_previous = i > 0 && occludee[i - 1] && shapes[i - 1].placed;
    if (pairs_previous) {
      const ShapeInstance& prev = shapes[i - 1];
      bool done = false;
      for (int attempt = 0; attempt < 40 && !done; ++attempt) {
        s.cx = prev.cx + rng.uniform(-0.9, 0.9) * prev.sx;
        s.cy = prev.cy + rng.uniform(-0.9, 0.9) * prev.sy;
        clamp_center(s);
        const double cover = pixel_cover(prev, s, size);
        done = cover > 0.32 && cover < 0.68;
      }
      if (!done) {  // centered placement still yields a solid overlap
        s.cx = prev.cx;
        s.cy = prev.cy;
        clamp_center(s);
      }
      s.placed = true;
      ++n_placed;
      continue;
    }
    for (int attempt = 0; attempt < 50 && !s.placed; ++attempt) {
      s.cx = rng.uniform(s.sx + edge, 1.0 - s.sx - edge);
      s.cy = rng.uniform(s.sy + edge, 1.0 - s.sy - edge);
      bool ok = true;
      for (int j = 0; j < i && ok; ++j)
        if (shapes[j].placed && bbox_cover(shapes[j].bbox(), s.bbox()) > 0.12) ok = false;
      s.placed = ok;
    }
    if (s.placed) ++n_placed;
  }
  if (n > 0 && n_placed == 0)
    throw ValueError(msg("generate: could not place any of ", n, " objects at image_size ",
                         spec.image_size));

  // rasterize masks in draw order; the topmost shape owns each pixel
  std::vector<ShapeInstance> placed;
  for (const auto& s : shapes)
    if (s.placed) placed.push_back(s);
  const int np = static_cast<int>(placed.size());
  std::vector<std::vector<uint8_t>> masks(np);
  for (int i = 0; i < np; ++i) {
    masks[i].assign(static_cast<size_t>(size) * size, 0);
    for (int y = 0; y < size; ++y) {
      const double py = (y + 0.5) / size;
      for (int x = 0; x < size; ++x)
        if (placed[i].contains((x + 0.5) / size, py))
          masks[i][static_cast<size_t>(y) * size + x] = 1;
    }
  }

  // background: gradient plus one low-frequency sinusoid per channel
  Scene scene;
  scene.image = Tensor::zeros({3, size, size});
  auto img = scene.image.data();
  const size_t plane = static_cast<size_t>(size) * size;
  for (int c = 0; c < 3; ++c) {
    const double base = rng.uniform(0.25, 0.55);
    const double gx = rng.uniform(-0.15, 0.15), gy = rng.uniform(-0.15, 0.15);
    const double amp = rng.uniform(0.02, 0.10);
    const double fx = rng.uniform(0.5, 2.0), fy = rng.uniform(0.5, 2.0);
    const double phase = rng.uniform(0.0, 6.283185307179586);
    for (int y = 0; y < size; ++y) {
      const double py = (y + 0.5) / size;
      for (int x = 0; x < size; ++x) {
        const double px = (x + 0.5) / size;
        const double v =
            base + gx * px + gy * py + amp * std::sin(6.283185307179586 * (fx * px + fy * py) + phase);
        img[c * plane + static_cast<size_t>(y) * size + x] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  for (int i = 0; i < np; ++i) {
    for (size_t p = 0; p < plane; ++p) {
      if (!masks[i][p]) continue;
      for (int c = 0; c < 3; ++c) img[c * plane + p] = placed[i].color[c];
    }
  }

  scene.annotation.image_id = index;
  for (int i = 0; i < np; ++i) {
    long long own = 0, covered = 0;
    for (size_t p = 0; p < plane; ++p) {
      if (!masks[i][p]) continue;
      ++own;
      for (int j = i + 1; j < np; ++j)
        if (masks[j][p]) {
          ++covered;
          break;
        }
    }
    if (own == 0) continue;  // degenerate at raster resolution
    AnnotatedObject obj;
    obj.class_id = placed[i].class_id;
    obj.box = placed[i].bbox();
    obj.occluded_fraction = static_cast<double>(covered) / static_cast<double>(own);
    scene.annotation.objects.push_back(obj);
  }
  return scene;
}

Scene flip_horizontal(const Scene& scene) {
  Scene out;
  const int h = scene.image.dim(1), w = scene.image.dim(2);
  out.image = Tensor::zeros({3, h, w});
  const auto src = scene.image.data();
  auto dst = out.image.data();
  const size_t plane = static_cast<size_t>(h) * w;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        dst[c * plane + static_cast<size_t>(y) * w + x] =
            src[c * plane + static_cast<size_t>(y) * w + (w - 1 - x)];
  out.annotation = scene.annotation;
  for (auto& obj : out.annotation.objects) obj.box.cx = 1.0 - obj.box.cx;
  return out;
}

Scene augment(const Scene& scene, Rng& rng) {
  return rng.uniform() < 0.5 ? flip_horizontal(scene) : scene;
}

Dataset generate_dataset(const SceneSpec& spec, int count) {
  Dataset ds;
  ds.spec = spec;
  ds.images.reserve(count);
  ds.annotations.reserve(count);
  for (int i = 0; i < count; ++i) {
    Scene s = generate(spec, i);
    ds.images.push_back(std::move(s.image));
    ds.annotations.push_back(std::move(s.annotation));
  }
  return ds;
}

namespace {

std::string image_name(int index) {
  std::ostringstream os;
  os << "img_" << std::setfill('0') << std::setw(6) << index << ".ppm";
  return os.str();
}

}  // namespace

void write_dataset(const std::string& dir, const SceneSpec& spec, int count, bool force) {
  const fs::path root(dir);
  if (fs::exists(root) && !fs::is_empty(root) && !force)
    throw ConfigError(msg("output directory not empty (use --force): ", dir));
  fs::create_directories(root / "images");

  std::vector<Annotation> anns;
  for (int i = 0; i < count; ++i) {
    Scene s = generate(spec, i);
    write_ppm((root / "images" / image_name(i)).string(), to_u8(s.image));
    anns.push_back(std::move(s.annotation));
  }
  write_annotations_jsonl((root / "annotations.jsonl").string(), anns);

  nlohmann::json manifest;
  manifest["format"] = "mdfn-dataset-v1";
  manifest["count"] = count;
  manifest["spec"] = spec.to_json();
  std::ofstream os(root / "manifest.json", std::ios::trunc);
  if (!os) throw IoError(msg("cannot write manifest in ", dir));
  os << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
  const fs::path root(dir);
  std::ifstream ms(root / "manifest.json");
  if (!ms) throw ConfigError(msg("dataset manifest not found in ", dir));
  nlohmann::json manifest;
  try {
    ms >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(msg("bad dataset manifest: ", e.what()));
  }
  const int count = manifest.at("count").get<int>();

  Dataset ds;
  ds.spec = SceneSpec::from_json(manifest.at("spec"));
  auto anns = read_annotations_jsonl((root / "annotations.jsonl").string());
  ds.annotations.assign(count, Annotation{});
  for (auto& a : anns) {
    if (a.image_id < 0 || a.image_id >= count)
      throw IoError(msg("annotation references image ", a.image_id, " outside dataset of ",
                        count));
    ds.annotations[a.image_id] = std::move(a);
  }
  for (int i = 0; i < count; ++i) {
    ds.annotations[i].image_id = i;
    ds.images.push_back(to_tensor(read_ppm((root / "images" / image_name(i)).string())));
  }
  return ds;
}

void write_annotations_jsonl(const std::string& path, const std::vector<Annotation>& anns) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError(msg("cannot write annotations: ", path));
  for (const auto& a : anns) {
    for (const auto& obj : a.objects) {
      nlohmann::json line = {{"image_id", a.image_id},
                             {"class_id", obj.class_id},
                             {"cx", obj.box.cx},
                             {"cy", obj.box.cy},
                             {"w", obj.box.w},
                             {"h", obj.box.h},
                             {"occluded_fraction", obj.occluded_fraction}};
      os << line.dump() << "\n";
    }
  }
}

std::vector<Annotation> read_annotations_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError(msg("cannot open annotations: ", path));
  std::vector<Annotation> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(msg("bad annotation at ", path, ":", lineno, ": ", e.what()));
    }
    const int id = j.at("image_id").get<int>();
    AnnotatedObject obj;
    obj.class_id = j.at("class_id").get<int>();
    obj.box = {j.at("cx").get<double>(), j.at("cy").get<double>(), j.at("w").get<double>(),
               j.at("h").get<double>()};
    obj.occluded_fraction = j.at("occluded_fraction").get<double>();
    auto it = std::find_if(out.begin(), out.end(),
                           [id](const Annotation& a) { return a.image_id == id; });
    if (it == out.end()) {
      out.push_back(Annotation{id, {obj}});
    } else {
      it->objects.push_back(obj);
    }
  }
  return out;
}

}  // namespace mdfn
