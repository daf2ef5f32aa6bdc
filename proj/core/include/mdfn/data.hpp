#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "mdfn/boxes.hpp"
#include "mdfn/rng.hpp"
#include "mdfn/tensor.hpp"

namespace mdfn {

// class ids: 0 background, 1 rect, 2 disc, 3 triangle
const std::vector<std::string>& class_names();
constexpr int kNumClasses = 4;  // including background

// Parameters of the seeded scene generator. Generation is a pure function
// of (spec, index).
struct SceneSpec {
  int image_size = 64;
  int min_objects = 2;
  int max_objects = 5;
  double small_fraction = 0.3;      // objects with box area < 5% of the image
  double occlusion_fraction = 0.25; // objects covered > 30% by a later-drawn object
  uint64_t seed = 0;

  nlohmann::json to_json() const;
  static SceneSpec from_json(const nlohmann::json& j);
};

struct AnnotatedObject {
  int class_id = 0;
  Box box;                        // tight bound of the full shape, visible or not
  double occluded_fraction = 0.0; // raster fraction covered by later-drawn objects
};

struct Annotation {
  int image_id = 0;
  std::vector<AnnotatedObject> objects;
};

struct Scene {
  Tensor image;  // (3, H, W), values in [0,1]
  Annotation annotation;
};

// Deterministic scene: textured low-frequency background, class-colored
// shapes drawn in order (draw order defines occlusion), occluded fractions
// counted exactly on the raster. Unplaceable objects are dropped after
// bounded attempts; throws only if nothing can be placed.
Scene generate(const SceneSpec& spec, int index);

// Fraction of the target shape's raster pixels covered by the cover shape,
// both described by class id + tight box, measured on an image_size grid.
// This is the same pixel accounting the generator uses for
// occluded_fraction.
double raster_cover_fraction(int target_class, const Box& target, int cover_class,
                             const Box& cover, int image_size);

// horizontal mirror, exact box reflection
Scene flip_horizontal(const Scene& scene);

// flip with probability 0.5
Scene augment(const Scene& scene, Rng& rng);

// --- on-disk dataset ---

struct Dataset {
  SceneSpec spec;
  std::vector<Tensor> images;
  std::vector<Annotation> annotations;

  size_t size() const { return images.size(); }
};

// in-memory generation of `count` scenes
Dataset generate_dataset(const SceneSpec& spec, int count);

// images/img_NNNNNN.ppm + annotations.jsonl (one object per line) +
// manifest.json carrying the generating spec
void write_dataset(const std::string& dir, const SceneSpec& spec, int count, bool force);
Dataset load_dataset(const std::string& dir);

void write_annotations_jsonl(const std::string& path, const std::vector<Annotation>& anns);
std::vector<Annotation> read_annotations_jsonl(const std::string& path);

}  // namespace mdfn
