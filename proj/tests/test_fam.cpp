#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "featage/fam.hpp"

using namespace featage;
using io::FaceEmbedding;
using io::Manifest;
using io::Split;
using num::Rng;
using num::Tensor;

namespace {

FaceEmbedding unit_vec(const std::string& subject, float age, int d, Rng& rng) {
  FaceEmbedding e;
  e.subject_id = subject;
  e.age = age;
  e.vec.resize(static_cast<size_t>(d));
  double n2 = 0;
  for (float& v : e.vec) {
    v = static_cast<float>(rng.normal());
    n2 += static_cast<double>(v) * v;
  }
  double n = std::sqrt(n2);
  for (float& v : e.vec) v = static_cast<float>(v / n);
  return e;
}

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  double dot = 0;
  for (size_t i = 0; i < a.size(); ++i) dot += static_cast<double>(a[i]) * b[i];
  return dot;
}

// Embedding world with a shared age drift: x_s(a) = normalize(u_s + (a/20) w).
// The aging map is learnable from (embedding, e, t) alone.
struct DriftWorld {
  std::vector<float> w;
  int d;

  DriftWorld(int d_, Rng& rng) : d(d_) {
    w.resize(static_cast<size_t>(d));
    for (float& v : w) v = 0.8f * static_cast<float>(rng.normal()) / std::sqrt(static_cast<float>(d));
  }

  FaceEmbedding at(const std::string& subject, const std::vector<float>& base, float age) const {
    FaceEmbedding e;
    e.subject_id = subject;
    e.age = age;
    e.vec.resize(static_cast<size_t>(d));
    double n2 = 0;
    for (int j = 0; j < d; ++j) {
      float v = base[static_cast<size_t>(j)] + age / 20.0f * w[static_cast<size_t>(j)];
      e.vec[static_cast<size_t>(j)] = v;
      n2 += static_cast<double>(v) * v;
    }
    double n = std::sqrt(n2);
    for (float& v : e.vec) v = static_cast<float>(v / n);
    return e;
  }
};

struct DriftCorpus {
  Manifest manifest;
  std::vector<FaceEmbedding> embeddings;
};

DriftCorpus drift_corpus(int n_subjects, int n_test, int d, uint64_t seed) {
  Rng rng(seed);
  DriftWorld world(d, rng);
  DriftCorpus out;
  const float ages[4] = {3.0f, 8.0f, 14.0f, 19.0f};
  for (int s = 0; s < n_subjects; ++s) {
    std::string id = "s" + std::to_string(s);
    std::vector<float> base(static_cast<size_t>(d));
    for (float& v : base) v = static_cast<float>(rng.normal()) / std::sqrt(static_cast<float>(d));
    for (int j = 0; j < 4; ++j) {
      io::ManifestRecord rec;
      rec.subject_id = id;
      rec.age = ages[j] + static_cast<float>(rng.uniform(-0.5, 0.5));
      rec.style_id = "p0";
      rec.split = s < n_subjects - n_test ? Split::train : Split::test;
      rec.path = id + "_" + std::to_string(j) + ".ppm";
      out.manifest.records.push_back(rec);
      out.embeddings.push_back(world.at(id, base, rec.age));
    }
  }
  return out;
}

std::vector<std::pair<FaceEmbedding, FaceEmbedding>> all_genuine_pairs(const DriftCorpus& c, Split split) {
  std::vector<std::pair<FaceEmbedding, FaceEmbedding>> pairs;
  auto groups = c.manifest.by_subject(split);
  for (const auto& [subject, idxs] : groups)
    for (int i : idxs)
      for (int j : idxs)
        if (i != j)
          pairs.emplace_back(c.embeddings[static_cast<size_t>(i)], c.embeddings[static_cast<size_t>(j)]);
  return pairs;
}

}  // namespace

TEST_CASE("identity-initialized aging is a near no-op") {
  fam::FamConfig cfg;
  cfg.d = 32;
  auto params = fam::init_params(cfg, 1);
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    FaceEmbedding e = unit_vec("s0", 6.0f, cfg.d, rng);
    auto same = fam::age_feature(params, cfg, e, 6.0f, 6.0f);
    CHECK(cosine(same.vec, e.vec) >= 0.99);
    auto cross = fam::age_feature(params, cfg, e, 4.0f, 18.0f);
    CHECK(cosine(cross.vec, e.vec) >= 0.99);
  }
}

TEST_CASE("zero-noise initialization is an exact identity") {
  fam::FamConfig cfg;
  cfg.d = 8;
  auto params = fam::init_params(cfg, 1, 0.0f);
  Rng rng(3);
  FaceEmbedding e = unit_vec("s0", 10.0f, cfg.d, rng);
  auto out = fam::age_feature(params, cfg, e, 10.0f, 10.0f);
  for (int j = 0; j < cfg.d; ++j)
    CHECK(out.vec[static_cast<size_t>(j)] == doctest::Approx(e.vec[static_cast<size_t>(j)]).epsilon(1e-6));
}

TEST_CASE("aged outputs stay on the unit sphere for arbitrary finite params") {
  fam::FamConfig cfg;
  cfg.d = 16;
  Rng rng(4);
  auto params = fam::init_params(cfg, 5, 0.5f);  // far from identity
  for (int trial = 0; trial < 100; ++trial) {
    FaceEmbedding e = unit_vec("s0", 5.0f, cfg.d, rng);
    float from = static_cast<float>(rng.uniform(cfg.min_age, cfg.max_age));
    float to = static_cast<float>(rng.uniform(cfg.min_age, cfg.max_age));
    auto out = fam::age_feature(params, cfg, e, from, to);
    double n = 0;
    for (float v : out.vec) n += static_cast<double>(v) * v;
    CHECK(std::abs(std::sqrt(n) - 1.0) <= 1e-4);
    CHECK(out.age == to);
    CHECK(out.subject_id == e.subject_id);
  }
}

TEST_CASE("ages outside the world range are rejected") {
  fam::FamConfig cfg;
  cfg.d = 8;
  auto params = fam::init_params(cfg, 6);
  Rng rng(7);
  FaceEmbedding e = unit_vec("s0", 5.0f, cfg.d, rng);
  CHECK_THROWS_AS(fam::age_feature(params, cfg, e, 1.0f, 10.0f), std::invalid_argument);
  CHECK_THROWS_AS(fam::age_feature(params, cfg, e, 10.0f, 27.0f), std::invalid_argument);
}

TEST_CASE("dimension mismatches are rejected") {
  fam::FamConfig cfg;
  cfg.d = 8;
  auto params = fam::init_params(cfg, 8);
  Rng rng(9);
  FaceEmbedding wrong = unit_vec("s0", 5.0f, 12, rng);
  CHECK_THROWS_AS(fam::age_feature(params, cfg, wrong, 5.0f, 10.0f), std::invalid_argument);

  fam::FamConfig other = cfg;
  other.d = 12;
  CHECK_THROWS_AS(fam::age_feature(params, other, wrong, 5.0f, 10.0f), std::invalid_argument);
}

TEST_CASE("hand-built pair through the identity map scores loss 2") {
  fam::FamConfig cfg;
  cfg.d = 2;
  auto params = fam::init_params(cfg, 10, 0.0f);
  FaceEmbedding src, dst;
  src.subject_id = dst.subject_id = "s0";
  src.age = 3.0f;
  dst.age = 13.0f;
  src.vec = {1.0f, 0.0f};
  dst.vec = {0.0f, 1.0f};
  double loss = fam::pair_loss(params, cfg, {{src, dst}});
  CHECK(loss == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("identity-map loss equals two times one minus the mean cosine") {
  fam::FamConfig cfg;
  cfg.d = 24;
  auto params = fam::init_params(cfg, 11, 0.0f);
  Rng rng(12);
  std::vector<std::pair<FaceEmbedding, FaceEmbedding>> pairs;
  double mean_cos = 0;
  for (int i = 0; i < 64; ++i) {
    auto a = unit_vec("s", 4.0f, cfg.d, rng);
    auto b = unit_vec("s", 14.0f, cfg.d, rng);
    mean_cos += cosine(a.vec, b.vec);
    pairs.emplace_back(std::move(a), std::move(b));
  }
  mean_cos /= 64.0;
  double loss = fam::pair_loss(params, cfg, pairs);
  CHECK(loss == doctest::Approx(2.0 * (1.0 - mean_cos)).epsilon(1e-3));
}

TEST_CASE("pair loss rejects an empty batch") {
  fam::FamConfig cfg;
  auto params = fam::init_params(cfg, 13);
  CHECK_THROWS_AS(fam::pair_loss(params, cfg, {}), std::invalid_argument);
}

TEST_CASE("zero training iterations return the initialization unchanged") {
  auto corpus = drift_corpus(10, 2, 8, 14);
  fam::TrainConfig cfg;
  cfg.fam.d = 8;
  cfg.iterations = 0;
  cfg.seed = 21;
  auto result = fam::train(corpus.manifest, corpus.embeddings, Split::train, cfg);
  auto init = fam::init_params(cfg.fam, num::derive_seed(cfg.seed, "fam-init"), cfg.init_noise);
  CHECK_FALSE(result.diverged);
  CHECK(result.history.empty());
  for (size_t p = 0; p < init.size(); ++p) CHECK(result.params.tensors[p].data == init.tensors[p].data);
}

TEST_CASE("training is bit-deterministic under a fixed seed") {
  auto corpus = drift_corpus(20, 4, 12, 15);
  fam::TrainConfig cfg;
  cfg.fam.d = 12;
  cfg.iterations = 200;
  cfg.batch = 16;
  cfg.seed = 22;
  auto a = fam::train(corpus.manifest, corpus.embeddings, Split::train, cfg);
  auto b = fam::train(corpus.manifest, corpus.embeddings, Split::train, cfg);
  CHECK(a.history == b.history);
  REQUIRE(a.params.size() == b.params.size());
  for (size_t p = 0; p < a.params.size(); ++p) CHECK(a.params.tensors[p].data == b.params.tensors[p].data);
}

TEST_CASE("training beats the identity baseline on held-out subjects") {
  auto corpus = drift_corpus(50, 10, 16, 16);
  fam::TrainConfig cfg;
  cfg.fam.d = 16;
  cfg.iterations = 800;
  cfg.batch = 32;
  cfg.adam.lr = 0.002f;
  cfg.seed = 23;
  auto result = fam::train(corpus.manifest, corpus.embeddings, Split::train, cfg);
  CHECK_FALSE(result.diverged);
  REQUIRE(result.history.size() == 800);

  auto held_out = all_genuine_pairs(corpus, Split::test);
  REQUIRE(held_out.size() == 10 * 12);
  auto identity = fam::init_params(cfg.fam, 1, 0.0f);
  double baseline = fam::pair_loss(identity, cfg.fam, held_out);
  double trained = fam::pair_loss(result.params, cfg.fam, held_out);
  CHECK(trained < 0.9 * baseline);

  double head = std::accumulate(result.history.begin(), result.history.begin() + 50, 0.0) / 50.0;
  double tail = std::accumulate(result.history.end() - 50, result.history.end(), 0.0) / 50.0;
  CHECK(tail < head);
}

TEST_CASE("divergent training rolls back to the last finite-loss state") {
  auto corpus = drift_corpus(10, 2, 8, 17);
  fam::TrainConfig cfg;
  cfg.fam.d = 8;
  cfg.iterations = 50;
  cfg.batch = 8;
  cfg.adam.lr = 1e35f;
  cfg.seed = 24;
  auto result = fam::train(corpus.manifest, corpus.embeddings, Split::train, cfg);
  CHECK(result.diverged);
  CHECK(result.history.size() < 50);
  for (const auto& t : result.params.tensors) CHECK(t.all_finite());
  // the rolled-back params must still produce a finite loss
  auto held_out = all_genuine_pairs(corpus, Split::test);
  CHECK(std::isfinite(fam::pair_loss(result.params, cfg.fam, held_out)));
}

TEST_CASE("trainer validates the embedding table against the manifest") {
  auto corpus = drift_corpus(10, 2, 8, 18);
  fam::TrainConfig cfg;
  cfg.fam.d = 8;
  cfg.iterations = 1;

  auto short_table = corpus.embeddings;
  short_table.pop_back();
  CHECK_THROWS_AS(fam::train(corpus.manifest, short_table, Split::train, cfg), std::invalid_argument);

  auto swapped = corpus.embeddings;
  std::swap(swapped[0], swapped[4]);  // different subjects
  CHECK_THROWS_AS(fam::train(corpus.manifest, swapped, Split::train, cfg), std::invalid_argument);
}

TEST_CASE("feature difference probe reports image change and mask share") {
  fam::FamConfig cfg;
  cfg.d = 4;
  auto params = fam::init_params(cfg, 19, 0.0f);
  FaceEmbedding e;
  e.subject_id = "s0";
  e.age = 4.0f;
  e.vec = {0.5f, 0.5f, 0.5f, 0.5f};

  // stub decoder: paints the first embedding coordinate everywhere
  auto decode = [](const std::vector<float>& v) {
    Tensor img({4, 4, 1});
    for (float& p : img.data) p = v[0];
    return img;
  };
  Tensor mask({4, 4});
  mask.at(1, 1) = 1.0f;
  mask.at(1, 2) = 1.0f;

  SUBCASE("identical ages give a black difference image") {
    auto probe = fam::feature_difference_probe(params, cfg, e, 4.0f, 4.0f, decode, mask);
    CHECK(probe.mean_abs == doctest::Approx(0.0).epsilon(1e-9));
    for (float v : probe.diff.data) CHECK(v == 0.0f);
  }
  SUBCASE("mask fraction follows the decoder change pattern") {
    // decoder paints uniformly, so energy splits by pixel count: 2 of 16 inside
    fam::FamConfig wild = cfg;
    auto noisy = fam::init_params(wild, 20, 0.3f);
    auto probe = fam::feature_difference_probe(noisy, wild, e, 3.0f, 20.0f, decode, mask);
    if (probe.mean_abs > 0) CHECK(probe.mask_energy_fraction == doctest::Approx(2.0 / 16.0).epsilon(1e-6));
  }
  SUBCASE("mask shape mismatch is rejected") {
    Tensor bad({3, 4});
    CHECK_THROWS_AS(fam::feature_difference_probe(params, cfg, e, 3.0f, 20.0f, decode, bad), std::invalid_argument);
  }
}
