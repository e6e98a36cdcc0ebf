#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "featage/rng.hpp"
#include "featage/tensor.hpp"

namespace featage::io {

// Unit-norm face feature with its capture age in years. Ages are kept as
// floats end to end; year boundaries only appear where a protocol buckets.
struct FaceEmbedding {
  std::string subject_id;
  float age = 0.0f;
  std::vector<float> vec;

  double norm() const;
  void validate() const;  // norm within 1e-4 of 1, age >= 0, finite
};

struct ImageSample {
  std::string subject_id;
  float age = 0.0f;
  std::string style_id;
  num::Tensor pixels;  // [h, w, 3], values in [0, 1]

  void validate() const;
};

enum class Split { train, test, gallery, probe, distractor };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct ManifestRecord {
  std::string subject_id;
  float age = 0.0f;
  std::string style_id;
  Split split = Split::train;
  std::string path;  // relative to the manifest's directory
};

// Corpus index. Validation enforces the split contracts: train and test
// subject sets must be disjoint, and records must be unique.
struct Manifest {
  std::vector<ManifestRecord> records;

  void validate() const;
  void merge(const Manifest& other);  // validates the combined index

  std::vector<int> indices_for_split(Split s) const;
  std::map<std::string, std::vector<int>> by_subject(Split s) const;
};

// CSV with a fixed header: subject_id,age,style_id,split,path
void save_manifest(const std::string& path, const Manifest& m);
Manifest load_manifest(const std::string& path);

// Binary pixel file, one per sample (8-bit binary PPM, P6). Loading maps
// bytes back to [0,1] floats.
void save_ppm(const std::string& path, const num::Tensor& pixels);
num::Tensor load_ppm(const std::string& path);

ImageSample load_image_sample(const std::string& manifest_dir, const ManifestRecord& rec);

// Embedding container: magic "FAEB", version, dimension, count, then per
// record a length-prefixed subject id, f32 age, and d f32 values. All
// little-endian.
void save_embeddings(const std::string& path, const std::vector<FaceEmbedding>& embs, int d);
std::vector<FaceEmbedding> load_embeddings(const std::string& path);

// Source/target index pair into a manifest; both records share a subject.
struct GenuinePair {
  int src = -1;
  int dst = -1;
};

// Uniform over subjects with at least two records, then uniform over ordered
// pairs of distinct records of that subject. Progression and regression pairs
// are both reachable; no age-gap rebalancing is applied.
std::vector<GenuinePair> sample_genuine_pairs(const Manifest& m, Split split, num::Rng& rng, int count);

// Exact gap-bucket distribution of the sampler above for a given manifest,
// used to audit the empirical histogram.
std::vector<double> genuine_pair_gap_distribution(const Manifest& m, Split split,
                                                  const std::vector<double>& bucket_edges);

}  // namespace featage::io
