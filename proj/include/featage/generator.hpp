#pragma once

#include <string>
#include <vector>

#include "featage/adam.hpp"
#include "featage/dataio.hpp"
#include "featage/fam.hpp"
#include "featage/params.hpp"
#include "featage/tensor.hpp"

namespace featage::gen {

// Network plan is fixed to 32x32 inputs: three stride-2 convs for the ID
// encoder, four for the style encoder, four stride-2 transpose convs for the
// decoder. d is the embedding width, k the style width (k=0 disables the
// style path entirely).
struct GenConfig {
  int d = 64;
  int k = 32;
  int image = 32;
};

struct LossWeights {
  float id = 1.0f;
  float pix = 10.0f;
  float tv = 1e-4f;
};

// ---------- ID encoder ----------

num::ParamSet init_id_encoder(int d, uint64_t seed);

// images [n, 32, 32, 3] -> unit-norm rows [n, d]
num::Tensor embed_images(const num::ParamSet& idenc, const num::Tensor& images);
io::FaceEmbedding embed_sample(const num::ParamSet& idenc, const io::ImageSample& sample);

// embeddings for every manifest record, in record order
std::vector<io::FaceEmbedding> embed_corpus(const num::ParamSet& idenc,
                                            const std::vector<io::ImageSample>& samples);

struct EncoderTrainConfig {
  int d = 64;
  int iterations = 1500;
  int batch = 64;
  float logit_scale = 10.0f;  // softmax on unit embeddings needs spread
  num::AdamConfig adam;
  uint64_t seed = 20;
};

struct EncoderTrainResult {
  num::ParamSet params;
  std::vector<float> history;
  bool diverged = false;
};

// Softmax classification over the split's subjects; the embedding is the
// normalized penultimate layer and the classification head is discarded.
EncoderTrainResult train_id_encoder(const io::Manifest& manifest, const std::vector<io::ImageSample>& samples,
                                    io::Split split, const EncoderTrainConfig& cfg);

// ---------- style encoder + decoder ----------

num::ParamSet init_generator(const GenConfig& cfg, uint64_t seed);

// k floats; empty for k=0
std::vector<float> encode_style(const num::ParamSet& gen_params, const GenConfig& cfg, const io::ImageSample& img);
num::Tensor encode_style_batch(const num::ParamSet& gen_params, const GenConfig& cfg, const num::Tensor& images);

// style [n, k] (or [n, 0] for k=0) + id rows [n, d] -> images [n, 32, 32, 3]
num::Tensor decode_batch(const num::ParamSet& gen_params, const GenConfig& cfg, const num::Tensor& style,
                         const num::Tensor& id_rows);
num::Tensor decode_image(const num::ParamSet& gen_params, const GenConfig& cfg, const std::vector<float>& style,
                         const std::vector<float>& id_vec);

struct LossBreakdown {
  double id = 0.0;   // mean squared embedding distance, unweighted
  double pix = 0.0;  // mean absolute pixel error, unweighted
  double tv = 0.0;   // mean per-image total variation, unweighted
  double total = 0.0;
};

LossBreakdown generator_loss(const num::ParamSet& gen_params, const GenConfig& cfg, const num::ParamSet& idenc,
                             const num::Tensor& images, const LossWeights& weights);

struct GenTrainConfig {
  GenConfig gen;
  LossWeights weights;
  int iterations = 2500;
  int batch = 32;
  num::AdamConfig adam;
  uint64_t seed = 20;
};

struct GenTrainResult {
  num::ParamSet params;
  std::vector<float> history;
  bool diverged = false;
};

GenTrainResult train_generator(const io::Manifest& manifest, const std::vector<io::ImageSample>& samples,
                               io::Split split, const num::ParamSet& idenc, const GenTrainConfig& cfg);

// decode(encode_style(image), age_feature(embed(image), image.age -> target)).
// Keeps the subject and style ids; the output age is the target.
io::ImageSample synthesize_aged(const num::ParamSet& fam_params, const fam::FamConfig& fam_cfg,
                                const num::ParamSet& gen_params, const GenConfig& gen_cfg,
                                const num::ParamSet& idenc, const io::ImageSample& image, float target_age);

// ---------- style-width ablation ----------

struct AblationRow {
  int k = 0;
  double recon_rank1 = 0.0;      // gallery decoded without aging, re-encoded
  double aged_rank1 = 0.0;       // gallery decoded after feature aging, re-encoded
  double pixel_mae = 0.0;        // reconstruction error on gallery images
  double feature_only_rank1 = 0.0;  // aging in feature space, no image round trip
};

struct AblationConfig {
  GenTrainConfig train;       // k is overridden per row
  fam::FamConfig fam;
  float min_lapse = 5.0f;     // probes below this lapse are skipped
};

std::vector<AblationRow> ablate_style_dim(const std::vector<int>& k_values, const io::Manifest& manifest,
                                          const std::vector<io::ImageSample>& samples, const num::ParamSet& idenc,
                                          const num::ParamSet& fam_params, const AblationConfig& cfg);

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);

}  // namespace featage::gen
