#pragma once

#include <string>
#include <utility>
#include <vector>

#include "featage/dataio.hpp"
#include "featage/fam.hpp"
#include "featage/params.hpp"

namespace featage::eval {

// ---------- protocol inputs ----------

struct GalleryEntry {
  io::FaceEmbedding emb;
  bool distractor = false;
};

struct Gallery {
  std::vector<GalleryEntry> entries;

  void add(io::FaceEmbedding emb, bool distractor = false);
  void validate() const;  // non-empty ids, valid embeddings, consistent dimension
};

struct Probe {
  io::FaceEmbedding emb;
  bool mated = true;
};

struct ProbeSet {
  std::vector<Probe> items;

  // mated probes must name a subject the gallery actually enrolls
  void validate(const Gallery& gallery) const;
};

float cosine_similarity(const io::FaceEmbedding& a, const io::FaceEmbedding& b);

// ---------- reports ----------

struct LapsePoint {
  float lo = 0.0f;
  float hi = 0.0f;
  int probes = 0;
  double rank1_raw = 0.0;
  bool has_aged = false;
  double rank1_aged = 0.0;
};

struct IdentificationReport {
  int probes = 0;   // P: probes scored, including unmated ones in open-set runs
  int gallery = 0;  // G: gallery entries, distractors included
  double closed_set_rank1 = 0.0;
  bool has_open = false;
  double open_set_rank1 = 0.0;
  double far_target = 0.0;
  float threshold = 0.0f;
  std::vector<LapsePoint> per_lapse;

  void validate() const;  // rates in [0,1], counts positive
};

// ---------- search protocols ----------
// Every protocol takes an optional ager as a (params, config) pointer pair;
// pass nullptrs to match raw features. With an ager present each gallery
// feature is transformed from its own age to the probe's age before scoring.

// Scores one probe against every gallery entry, in entry order.
std::vector<float> score_gallery(const Gallery& gallery, const io::FaceEmbedding& probe,
                                 const num::ParamSet* fam_params = nullptr,
                                 const fam::FamConfig* fam_cfg = nullptr);

// Reduction from entry scores to the best-matching subject: a subject's score
// is the max over its entries, and equal subject scores keep the subject
// whose first entry was inserted earlier.
struct TopMatch {
  std::string subject;
  float score = -2.0f;
};

TopMatch top_subject(const Gallery& gallery, const std::vector<float>& scores);

// All probes must be mated. Rank-1 hit: the top-scoring subject (max over its
// entries, ties by first insertion) equals the probe's subject.
IdentificationReport closed_set_search(const Gallery& gallery, const ProbeSet& probes,
                                       const num::ParamSet* fam_params = nullptr,
                                       const fam::FamConfig* fam_cfg = nullptr);

// Smallest threshold whose empirical false-accept rate over the given
// impostor scores is at most far_target. Needs at least ceil(1/far_target)
// scores; ties at the cut push the threshold up so the bound still holds.
float calibrate_threshold(std::vector<float> impostor_scores, double far_target);

// Fraction of mated probes whose top subject is correct and whose top score
// clears the threshold. Unmated probes are ignored here.
double open_set_rank1_at_threshold(const Gallery& gallery, const ProbeSet& probes, float threshold,
                                   const num::ParamSet* fam_params = nullptr,
                                   const fam::FamConfig* fam_cfg = nullptr);

// Calibrates a threshold from the unmated probes' best gallery scores, then
// scores the mated probes against it. Requires both kinds of probe.
// closed_set_rank1 in the result is the threshold-free rate on mated probes.
IdentificationReport open_set_search(const Gallery& gallery, const ProbeSet& probes, double far_target,
                                     const num::ParamSet* fam_params = nullptr,
                                     const fam::FamConfig* fam_cfg = nullptr);

// Rank-1 per lapse bucket, where lapse is |probe age - enrollment age| and the
// enrollment age is the youngest gallery age of the probe's subject. Buckets
// are [lo, hi) and must be disjoint; empty buckets are omitted. When an ager
// is given each point carries both the raw and the aged rate.
std::vector<LapsePoint> lapse_curve(const Gallery& gallery, const ProbeSet& probes,
                                    const std::vector<std::pair<float, float>>& buckets,
                                    const num::ParamSet* fam_params = nullptr,
                                    const fam::FamConfig* fam_cfg = nullptr);

// ---------- diagnostics ----------

struct DriftPoint {
  float age = 0.0f;
  int count = 0;
  std::vector<float> diff;  // |mean at anchor (optionally aged to this age) - mean at this age|
  double magnitude = 0.0;   // L2 of diff
};

// Groups embeddings by exact age; the youngest group is the anchor. Without
// an ager the anchor mean is compared as-is, so drift grows with the gap;
// with one the anchor embeddings are first aged to each target age.
std::vector<DriftPoint> mean_feature_drift(const std::vector<io::FaceEmbedding>& embs,
                                           const num::ParamSet* fam_params = nullptr,
                                           const fam::FamConfig* fam_cfg = nullptr);

struct VerificationResult {
  double accuracy = 0.0;
  float threshold = 0.0f;
};

// Best-threshold binary accuracy of similarity scores: sweeps all decision
// boundaries between distinct scores plus both outer extremes. Requires both
// labels to be present.
VerificationResult verification_accuracy(const std::vector<float>& scores, const std::vector<char>& same);

// ---------- report emission ----------

struct EvalReport {
  IdentificationReport closed;
  bool has_open = false;
  IdentificationReport open;
  std::vector<LapsePoint> lapse;
};

// CSV header: protocol,P,G,rank1,far_target,threshold,lapse_bucket
// One row per protocol; lapse buckets get one row per rate (lapse_raw,
// lapse_aged) so the file stays flat.
void write_report_csv(const std::string& path, const EvalReport& report);

void write_report_json(const std::string& path, const EvalReport& report);
EvalReport read_report_json(const std::string& path);

}  // namespace featage::eval
