#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "featage/dataio.hpp"
#include "featage/rng.hpp"
#include "featage/tensor.hpp"

namespace featage::world {

inline constexpr int kImageSize = 32;
inline constexpr float kMinRenderAge = 2.0f;
inline constexpr float kMaxRenderAge = 26.0f;
inline constexpr float kMinCorpusAge = 2.0f;
inline constexpr float kMaxCorpusAge = 20.0f;

// Identity factors. Constant across every age of a subject; geometry and skin
// hue are functions of these alone, never of style.
struct SubjectSpec {
  std::string subject_id;
  uint64_t birth_seed = 0;
  float eye_spacing = 0.46f;     // fraction of head half-width
  float face_aspect = 1.0f;      // width/height stretch
  float skin_r = 0.87f, skin_g = 0.70f, skin_b = 0.55f;
  float brow_height = 0.5f;      // 0 = resting on the eyes, 1 = high
  float mouth_curvature = 0.0f;  // -1 frown .. +1 smile
  float eye_size = 1.0f;         // multiplier on the age-driven eye radius
  float contour_a = 0.0f;        // head outline cos(2θ) harmonic, mirror-symmetric
  float contour_b = 0.0f;        // head outline cos(4θ) harmonic, mirror-symmetric

  std::array<float, 10> factors() const {
    return {eye_spacing, face_aspect,     skin_r,   skin_g,    skin_b,
            brow_height, mouth_curvature, eye_size, contour_a, contour_b};
  }
};

// Capture-condition factors. Drawn independently of identity; they drive the
// background and its lighting but never the face geometry.
struct StyleSpec {
  int palette = 0;  // 0..7 base background color
  float bg_r = 0.5f, bg_g = 0.5f, bg_b = 0.5f;
  float grad_cos = 1.0f, grad_sin = 0.0f;  // lighting gradient direction
  float grad_strength = 0.1f;

  std::string style_id() const { return "p" + std::to_string(palette); }
  std::array<float, 6> factors() const { return {bg_r, bg_g, bg_b, grad_cos, grad_sin, grad_strength}; }

  static StyleSpec canonical();  // palette 0, no jitter, fixed gradient
};

// Growth curves shared by the renderer and its tests.
float head_scale(float age);      // strictly increasing, saturating
float eye_head_ratio(float age);  // eye radius relative to head, strictly decreasing
float texture_amp(float age);     // skin texture amplitude, increasing

SubjectSpec sample_subject(std::string subject_id, num::Rng& rng);
StyleSpec sample_style(num::Rng& rng);

// Pure: same inputs give bit-identical pixels. Rejects ages outside
// [kMinRenderAge, kMaxRenderAge].
io::ImageSample render(const SubjectSpec& subject, float age, const StyleSpec& style);

// Soft coverage of the head ellipse in [0,1], shape [size, size]. This is the
// exact footprint the renderer composites the face into.
num::Tensor head_mask(const SubjectSpec& subject, float age);

struct Corpus {
  io::Manifest manifest;
  std::vector<io::ImageSample> samples;  // parallel to manifest.records
  std::vector<SubjectSpec> subjects;
  std::vector<int> subject_of_sample;  // index into subjects, per record
  std::vector<StyleSpec> styles;       // per record
  bool all_train = false;              // set when too few subjects for a test split
};

// Deterministic corpus: ~80/20 train/test split by subject, train ages uniform
// in the corpus range, test subjects constructed so lapses from their youngest
// image land in short, medium, and long buckets (guaranteeing at least one
// >=5-year genuine pair each). Regenerating with the same arguments is
// byte-identical.
Corpus generate_corpus(int n_subjects, int ages_per_subject, uint64_t seed);

// Writes manifest.csv plus images/ under dir.
void write_corpus(const std::string& dir, const Corpus& corpus);

}  // namespace featage::world
