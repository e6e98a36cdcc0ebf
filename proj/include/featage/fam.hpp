#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "featage/adam.hpp"
#include "featage/dataio.hpp"
#include "featage/params.hpp"
#include "featage/rng.hpp"
#include "featage/tensor.hpp"

namespace featage::fam {

// The aging projection maps a unit embedding plus normalized enrollment and
// target ages through two fully connected layers, then back onto the unit
// sphere. Ages are divided by age_norm before concatenation.
struct FamConfig {
  int d = 64;
  float age_norm = 20.0f;
  float min_age = 2.0f;
  float max_age = 26.0f;
};

// Parameter names: fam.w1 [(d+2) x d], fam.b1 [d], fam.w2 [d x d], fam.b2 [d].
// At zero noise the init is an exact identity on unit embeddings: the +1 bias
// keeps every pre-activation of layer 1 nonnegative, so the leaky relu passes
// values through unchanged and layer 2's -1 bias undoes the shift.
num::ParamSet init_params(const FamConfig& cfg, uint64_t seed, float noise_sigma = 3e-4f);

// Plain inference forward for a batch: rows of src_aug are [embedding, e/age_norm,
// t/age_norm]. Returns unit-norm rows.
num::Tensor forward(const num::ParamSet& params, const FamConfig& cfg, const num::Tensor& src_aug);

// Ages one embedding from enroll_age to target_age. Output keeps the subject
// id and carries target_age as its age.
io::FaceEmbedding age_feature(const num::ParamSet& params, const FamConfig& cfg, const io::FaceEmbedding& emb,
                              float enroll_age, float target_age);

// Ages a batch in one forward: row i goes from from_ages[i] to to_age.
// Returns unit-norm rows [n, d].
num::Tensor age_rows(const num::ParamSet& params, const FamConfig& cfg,
                     const std::vector<const io::FaceEmbedding*>& embs, const std::vector<float>& from_ages,
                     float to_age);

// Mean squared L2 distance between aged sources and their true targets.
// Pairs are (source, target) embeddings of one subject; e and t come from the
// embeddings' own ages.
double pair_loss(const num::ParamSet& params, const FamConfig& cfg,
                 const std::vector<std::pair<io::FaceEmbedding, io::FaceEmbedding>>& genuine);

struct TrainConfig {
  FamConfig fam;
  int iterations = 20000;
  int batch = 64;
  num::AdamConfig adam;  // defaults already match the trainer contract
  uint64_t seed = 20;
  float init_noise = 3e-4f;
};

struct TrainResult {
  num::ParamSet params;
  std::vector<float> history;  // one loss per finished iteration
  bool diverged = false;       // params roll back to the last finite-loss state
};

// Trains on genuine pairs sampled from the given split. embeddings[i] must
// belong to manifest.records[i].
TrainResult train(const io::Manifest& manifest, const std::vector<io::FaceEmbedding>& embeddings, io::Split split,
                  const TrainConfig& cfg);

struct DifferenceProbe {
  num::Tensor diff;                   // |decode(aged) - decode(reconstructed)| per pixel
  double mean_abs = 0.0;              // mean over all pixels
  double mask_energy_fraction = 0.0;  // share of squared difference inside face_mask
};

// Decodes the embedding before and after aging through the supplied decoder
// and reports where the image changed. face_mask is [h, w] soft coverage.
DifferenceProbe feature_difference_probe(const num::ParamSet& params, const FamConfig& cfg,
                                         const io::FaceEmbedding& emb, float enroll_age, float target_age,
                                         const std::function<num::Tensor(const std::vector<float>&)>& decode_fn,
                                         const num::Tensor& face_mask);

}  // namespace featage::fam
