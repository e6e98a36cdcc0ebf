#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <unistd.h>
#include <vector>

#include "featage/eval.hpp"
#include "featage/rng.hpp"

using namespace featage;
using num::Rng;

namespace {

io::FaceEmbedding make_emb(const std::string& subject, float age, std::vector<float> vec) {
  double n2 = 0;
  for (float v : vec) n2 += static_cast<double>(v) * v;
  double n = std::sqrt(n2);
  for (float& v : vec) v = static_cast<float>(v / n);
  io::FaceEmbedding e;
  e.subject_id = subject;
  e.age = age;
  e.vec = std::move(vec);
  return e;
}

io::FaceEmbedding random_emb(const std::string& subject, float age, int d, Rng& rng) {
  std::vector<float> v(static_cast<size_t>(d));
  for (float& x : v) x = static_cast<float>(rng.normal());
  return make_emb(subject, age, std::move(v));
}

// Independent scoring path for the oracles: cosine by hand, subject max by
// hand, argmax with first-insertion tie order by hand.
double oracle_cosine(const io::FaceEmbedding& a, const io::FaceEmbedding& b) {
  double dot = 0;
  for (size_t j = 0; j < a.vec.size(); ++j) dot += static_cast<double>(a.vec[j]) * b.vec[j];
  return dot;
}

struct OracleTop {
  std::string subject;
  float score = -2.0f;
};

OracleTop oracle_top(const eval::Gallery& g, const io::FaceEmbedding& probe, const num::ParamSet* fp = nullptr,
                     const fam::FamConfig* fc = nullptr) {
  std::vector<std::string> order;
  std::vector<float> best;
  for (const auto& entry : g.entries) {
    float s;
    if (fp != nullptr) {
      io::FaceEmbedding aged = fam::age_feature(*fp, *fc, entry.emb, entry.emb.age, probe.age);
      s = static_cast<float>(oracle_cosine(aged, probe));
    } else {
      s = static_cast<float>(oracle_cosine(entry.emb, probe));
    }
    bool found = false;
    for (size_t j = 0; j < order.size(); ++j)
      if (order[j] == entry.emb.subject_id) {
        if (s > best[j]) best[j] = s;
        found = true;
        break;
      }
    if (!found) {
      order.push_back(entry.emb.subject_id);
      best.push_back(s);
    }
  }
  OracleTop top;
  for (size_t j = 0; j < order.size(); ++j)
    if (best[j] > top.score) {
      top.score = best[j];
      top.subject = order[j];
    }
  return top;
}

struct RandomInstance {
  eval::Gallery gallery;
  eval::ProbeSet probes;
};

// Up to 15 gallery entries over a handful of subjects (some with several
// images), up to 10 probes; unmated probes use subjects never enrolled.
RandomInstance random_instance(Rng& rng, int d, bool with_unmated) {
  RandomInstance inst;
  int subjects = 3 + rng.uniform_int(5);
  std::vector<std::string> names;  // subjects that actually received an entry
  for (int s = 0; s < subjects; ++s) {
    std::string name = "s" + std::to_string(s);
    int copies = 1 + rng.uniform_int(3);
    bool enrolled = false;
    for (int c = 0; c < copies && static_cast<int>(inst.gallery.entries.size()) < 15; ++c) {
      inst.gallery.add(random_emb(name, 3.0f + 20.0f * static_cast<float>(rng.uniform()), d, rng));
      enrolled = true;
    }
    if (enrolled) names.push_back(name);
  }
  int probes = 4 + rng.uniform_int(7);
  for (int p = 0; p < probes; ++p) {
    bool unmated = with_unmated && rng.uniform() < 0.4;
    std::string name =
        unmated ? ("u" + std::to_string(p)) : names[static_cast<size_t>(rng.uniform_int(static_cast<int>(names.size())))];
    eval::Probe probe;
    probe.emb = random_emb(name, 3.0f + 20.0f * static_cast<float>(rng.uniform()), d, rng);
    probe.mated = !unmated;
    inst.probes.items.push_back(std::move(probe));
  }
  return inst;
}

std::string temp_path(const char* stem, const char* ext) {
  return "/tmp/featage_eval_" + std::string(stem) + "_" + std::to_string(getpid()) + ext;
}

}  // namespace

TEST_CASE("cosine similarity fundamentals") {
  auto a = make_emb("a", 5.0f, {1.0f, 0.0f, 0.0f});
  auto b = make_emb("b", 5.0f, {0.0f, 1.0f, 0.0f});
  CHECK(eval::cosine_similarity(a, a) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(eval::cosine_similarity(a, b) == doctest::Approx(0.0));
  CHECK(eval::cosine_similarity(a, b) == eval::cosine_similarity(b, a));

  auto short_e = make_emb("c", 5.0f, {1.0f, 0.0f});
  CHECK_THROWS_AS(eval::cosine_similarity(a, short_e), std::invalid_argument);
}

TEST_CASE("input validation catches malformed galleries and probe sets") {
  eval::Gallery empty;
  CHECK_THROWS_WITH_AS(empty.validate(), doctest::Contains("empty"), std::invalid_argument);

  eval::Gallery g;
  g.add(make_emb("alice", 4.0f, {1.0f, 0.0f}));
  CHECK_NOTHROW(g.validate());

  eval::Gallery bad_id = g;
  bad_id.add(make_emb("", 4.0f, {1.0f, 0.0f}));
  CHECK_THROWS_WITH_AS(bad_id.validate(), doctest::Contains("subject id"), std::invalid_argument);

  eval::Gallery bad_dim = g;
  bad_dim.add(make_emb("bob", 4.0f, {1.0f, 0.0f, 0.0f}));
  CHECK_THROWS_WITH_AS(bad_dim.validate(), doctest::Contains("dimension"), std::invalid_argument);

  eval::ProbeSet probes;
  eval::Probe p;
  p.emb = make_emb("carol", 9.0f, {0.0f, 1.0f});
  p.mated = true;
  probes.items.push_back(p);
  CHECK_THROWS_WITH_AS(probes.validate(g), doctest::Contains("carol"), std::invalid_argument);
  probes.items[0].mated = false;
  CHECK_NOTHROW(probes.validate(g));
}

TEST_CASE("closed-set search basics") {
  eval::Gallery g;
  g.add(make_emb("alice", 4.0f, {1.0f, 0.0f, 0.0f}));
  g.add(make_emb("bob", 4.0f, {0.0f, 1.0f, 0.0f}));

  SUBCASE("a probe identical to its gallery entry is a rank-1 hit") {
    eval::ProbeSet probes;
    probes.items.push_back(eval::Probe{make_emb("alice", 4.0f, {1.0f, 0.0f, 0.0f}), true});
    auto report = eval::closed_set_search(g, probes);
    CHECK(report.closed_set_rank1 == 1.0);
    CHECK(report.probes == 1);
    CHECK(report.gallery == 2);
    CHECK_FALSE(report.has_open);
  }
  SUBCASE("unmated probes are rejected") {
    eval::ProbeSet probes;
    probes.items.push_back(eval::Probe{make_emb("alice", 4.0f, {1.0f, 0.0f, 0.0f}), false});
    CHECK_THROWS_WITH_AS(eval::closed_set_search(g, probes), doctest::Contains("mated"), std::invalid_argument);
  }
  SUBCASE("empty probe set is rejected") {
    eval::ProbeSet probes;
    CHECK_THROWS_AS(eval::closed_set_search(g, probes), std::invalid_argument);
  }
}

TEST_CASE("score ties keep the first-inserted subject") {
  auto v = std::vector<float>{1.0f, 0.0f};
  eval::Gallery first;
  first.add(make_emb("alice", 4.0f, v));
  first.add(make_emb("bob", 4.0f, v));
  eval::Gallery second;
  second.add(make_emb("bob", 4.0f, v));
  second.add(make_emb("alice", 4.0f, v));

  io::FaceEmbedding probe = make_emb("alice", 9.0f, v);
  CHECK(eval::top_subject(first, eval::score_gallery(first, probe)).subject == "alice");
  CHECK(eval::top_subject(second, eval::score_gallery(second, probe)).subject == "bob");
}

TEST_CASE("a subject with several gallery images is scored by its best one") {
  eval::Gallery g;
  g.add(make_emb("alice", 4.0f, {0.0f, 1.0f, 0.0f}));   // poor alice image
  g.add(make_emb("bob", 4.0f, {0.8f, 0.6f, 0.0f}));
  g.add(make_emb("alice", 6.0f, {1.0f, 0.0f, 0.0f}));   // strong alice image

  eval::ProbeSet probes;
  probes.items.push_back(eval::Probe{make_emb("alice", 9.0f, {1.0f, 0.0f, 0.0f}), true});
  CHECK(eval::closed_set_search(g, probes).closed_set_rank1 == 1.0);
}

TEST_CASE("closed-set search matches a brute-force oracle on random instances") {
  Rng rng(101);
  int instances = 0;
  for (int trial = 0; trial < 25; ++trial) {
    RandomInstance inst = random_instance(rng, 8, false);
    auto report = eval::closed_set_search(inst.gallery, inst.probes);

    int hits = 0;
    for (const auto& probe : inst.probes.items) {
      OracleTop top = oracle_top(inst.gallery, probe.emb);
      if (top.subject == probe.emb.subject_id) ++hits;
      // per-probe decision must agree, not only the aggregate
      auto got = eval::top_subject(inst.gallery, eval::score_gallery(inst.gallery, probe.emb));
      CHECK(got.subject == top.subject);
    }
    CHECK(report.closed_set_rank1 ==
          doctest::Approx(static_cast<double>(hits) / inst.probes.items.size()).epsilon(1e-12));
    ++instances;
  }
  CHECK(instances >= 20);
}

TEST_CASE("aged closed-set search matches an oracle that ages entries one at a time") {
  Rng rng(102);
  fam::FamConfig fcfg;
  fcfg.d = 8;
  auto fp = fam::init_params(fcfg, 7, 0.05f);

  for (int trial = 0; trial < 10; ++trial) {
    RandomInstance inst = random_instance(rng, 8, false);
    auto report = eval::closed_set_search(inst.gallery, inst.probes, &fp, &fcfg);
    int hits = 0;
    for (const auto& probe : inst.probes.items) {
      OracleTop top = oracle_top(inst.gallery, probe.emb, &fp, &fcfg);
      if (top.subject == probe.emb.subject_id) ++hits;
    }
    CHECK(report.closed_set_rank1 ==
          doctest::Approx(static_cast<double>(hits) / inst.probes.items.size()).epsilon(1e-12));
  }
}

TEST_CASE("threshold calibration") {
  SUBCASE("ten-value hand case") {
    std::vector<float> scores;
    for (int i = 1; i <= 10; ++i) scores.push_back(0.1f * static_cast<float>(i));
    float t = eval::calibrate_threshold(scores, 0.1f);
    CHECK(t == 1.0f);
    int above = 0;
    for (float s : scores) above += (s >= t);
    CHECK(above == 1);
  }
  SUBCASE("far of one accepts everything") {
    std::vector<float> scores = {0.9f, -0.4f, 0.2f};
    CHECK(eval::calibrate_threshold(scores, 1.0f) == -0.4f);
  }
  SUBCASE("ties at the cut push the threshold past them") {
    std::vector<float> scores = {0.5f, 0.5f, 0.5f, 0.2f, 0.1f, 0.0f, -0.1f, -0.2f, -0.3f, -0.4f};
    float t = eval::calibrate_threshold(scores, 0.1f);
    CHECK(t > 0.5f);
    int above = 0;
    for (float s : scores) above += (s >= t);
    CHECK(above == 0);
  }
  SUBCASE("insufficient scores name the required count") {
    std::vector<float> scores(37, 0.1f);
    CHECK_THROWS_WITH_AS(eval::calibrate_threshold(scores, 0.01), doctest::Contains("100"),
                         std::invalid_argument);
  }
  SUBCASE("far target domain") {
    std::vector<float> scores(10, 0.1f);
    CHECK_THROWS_AS(eval::calibrate_threshold(scores, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(eval::calibrate_threshold(scores, 1.5), std::invalid_argument);
    CHECK_THROWS_AS(eval::calibrate_threshold(scores, -0.2), std::invalid_argument);
  }
}

TEST_CASE("calibrated thresholds bound the false-accept rate on 1000 random sets") {
  Rng rng(103);
  const double fars[] = {0.01, 0.02, 0.05, 0.1, 0.25, 0.5, 1.0};
  for (int trial = 0; trial < 1000; ++trial) {
    double far = fars[rng.uniform_int(7)];
    int required = static_cast<int>(std::ceil(1.0 / far));
    int n = required + rng.uniform_int(300);
    bool quantize = rng.uniform() < 0.5;  // coarse grid forces score ties
    std::vector<float> scores(static_cast<size_t>(n));
    for (float& s : scores) {
      s = static_cast<float>(rng.uniform(-1.0, 1.0));
      if (quantize) s = std::round(s * 10.0f) / 10.0f;
    }

    float t = eval::calibrate_threshold(scores, far);
    int above = 0;
    for (float s : scores) above += (s >= t);
    double empirical = static_cast<double>(above) / n;
    REQUIRE(empirical <= far + 1e-12);

    // minimality: the next lower candidate threshold must violate the target
    float lower = -2.0f;
    bool found = false;
    for (float s : scores)
      if (s < t && s > lower) {
        lower = s;
        found = true;
      }
    if (found) {
      int above_lower = 0;
      for (float s : scores) above_lower += (s >= lower);
      REQUIRE(static_cast<double>(above_lower) / n > far);
    }
  }
}

TEST_CASE("open-set search") {
  Rng rng(104);

  SUBCASE("a threshold below every score reduces to closed-set") {
    RandomInstance inst = random_instance(rng, 8, false);
    auto closed = eval::closed_set_search(inst.gallery, inst.probes);
    double open = eval::open_set_rank1_at_threshold(inst.gallery, inst.probes, -1.0f);
    CHECK(open == doctest::Approx(closed.closed_set_rank1).epsilon(1e-12));
  }

  SUBCASE("hand instance with five probes") {
    eval::Gallery g;
    g.add(make_emb("alice", 4.0f, {1.0f, 0.0f, 0.0f}));
    g.add(make_emb("bob", 4.0f, {0.0f, 1.0f, 0.0f}));
    g.add(make_emb("carol", 4.0f, {0.0f, 0.0f, 1.0f}));

    eval::ProbeSet probes;
    probes.items.push_back(eval::Probe{make_emb("alice", 9.0f, {0.9f, 0.1f, 0.0f}), true});   // strong hit
    probes.items.push_back(eval::Probe{make_emb("bob", 9.0f, {0.6f, 0.8f, 0.0f}), true});     // weak hit
    probes.items.push_back(eval::Probe{make_emb("carol", 9.0f, {0.9f, 0.0f, 0.1f}), true});   // miss (alice wins)
    probes.items.push_back(eval::Probe{make_emb("x1", 9.0f, {0.5f, 0.5f, 0.5f}), false});
    probes.items.push_back(eval::Probe{make_emb("x2", 9.0f, {-1.0f, 0.0f, 0.0f}), false});

    // impostor best scores: x1 hits 0.577 on any subject, x2 hits 0 on bob.
    // far 0.5 over 2 impostors allows one accept, so the threshold lands on
    // the higher impostor score 0.577.
    auto report = eval::open_set_search(g, probes, 0.5f);
    CHECK(report.threshold == doctest::Approx(0.57735f).epsilon(1e-4));
    // alice probe scores 0.9938 (accepted hit); bob probe scores 0.8 on bob
    // (accepted hit); carol probe tops out on alice (miss either way)
    CHECK(report.closed_set_rank1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(report.open_set_rank1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(report.probes == 5);
    CHECK(report.gallery == 3);
    CHECK(report.far_target == 0.5f);
    CHECK(report.has_open);
  }

  SUBCASE("random instances match a brute-force oracle") {
    int instances = 0;
    while (instances < 25) {
      RandomInstance inst = random_instance(rng, 8, true);
      int unmated = 0, mated = 0;
      for (const auto& p : inst.probes.items) (p.mated ? mated : unmated)++;
      if (unmated < 2 || mated == 0) continue;
      float far = unmated >= 4 ? 0.25f : 0.5f;

      auto report = eval::open_set_search(inst.gallery, inst.probes, far);

      std::vector<float> impostors;
      for (const auto& p : inst.probes.items)
        if (!p.mated) impostors.push_back(oracle_top(inst.gallery, p.emb).score);
      std::sort(impostors.begin(), impostors.end(), std::greater<float>());
      size_t allowed = static_cast<size_t>(std::floor(far * static_cast<double>(impostors.size())));
      float oracle_threshold = std::nextafter(impostors.front(), 2.0f);
      size_t idx = 0;
      while (idx < impostors.size()) {
        size_t j = idx;
        while (j + 1 < impostors.size() && impostors[j + 1] == impostors[idx]) ++j;
        if (j + 1 > allowed) break;
        oracle_threshold = impostors[idx];
        idx = j + 1;
      }
      CHECK(report.threshold == oracle_threshold);

      int hits = 0, accepted = 0;
      for (const auto& p : inst.probes.items) {
        if (!p.mated) continue;
        OracleTop top = oracle_top(inst.gallery, p.emb);
        if (top.subject == p.emb.subject_id) {
          ++hits;
          if (top.score >= oracle_threshold) ++accepted;
        }
      }
      CHECK(report.closed_set_rank1 == doctest::Approx(static_cast<double>(hits) / mated).epsilon(1e-12));
      CHECK(report.open_set_rank1 == doctest::Approx(static_cast<double>(accepted) / mated).epsilon(1e-12));
      ++instances;
    }
    CHECK(instances >= 20);
  }

  SUBCASE("missing probe kinds are rejected") {
    RandomInstance mated_only = random_instance(rng, 8, false);
    CHECK_THROWS_WITH_AS(eval::open_set_search(mated_only.gallery, mated_only.probes, 0.5f),
                         doctest::Contains("unmated"), std::invalid_argument);

    RandomInstance inst = random_instance(rng, 8, false);
    for (auto& p : inst.probes.items) p.mated = false;
    for (auto& p : inst.probes.items) p.emb.subject_id = "ghost";
    CHECK_THROWS_WITH_AS(eval::open_set_search(inst.gallery, inst.probes, 0.5f), doctest::Contains("mated"),
                         std::invalid_argument);
  }
}

TEST_CASE("open-set rank-1 never exceeds closed-set rank-1") {
  Rng rng(105);
  for (int trial = 0; trial < 30; ++trial) {
    RandomInstance inst = random_instance(rng, 8, false);
    auto closed = eval::closed_set_search(inst.gallery, inst.probes);
    for (float t : {-0.5f, 0.0f, 0.3f, 0.7f, 0.95f}) {
      double open = eval::open_set_rank1_at_threshold(inst.gallery, inst.probes, t);
      CHECK(open <= closed.closed_set_rank1 + 1e-12);
    }
  }
}

TEST_CASE("ranking decisions survive strictly increasing score transforms") {
  Rng rng(106);
  for (int trial = 0; trial < 20; ++trial) {
    RandomInstance inst = random_instance(rng, 8, false);
    for (const auto& probe : inst.probes.items) {
      auto scores = eval::score_gallery(inst.gallery, probe.emb);
      auto base = eval::top_subject(inst.gallery, scores);

      auto affine = scores;
      for (float& s : affine) s = 2.0f * s + 1.0f;
      CHECK(eval::top_subject(inst.gallery, affine).subject == base.subject);

      auto cubed = scores;
      for (float& s : cubed) s = s * s * s;
      CHECK(eval::top_subject(inst.gallery, cubed).subject == base.subject);
    }
  }
}

TEST_CASE("searching without an ager equals an identity aging map") {
  Rng rng(107);
  fam::FamConfig fcfg;
  fcfg.d = 16;
  auto identity = fam::init_params(fcfg, 9, 0.0f);

  for (int trial = 0; trial < 10; ++trial) {
    RandomInstance inst = random_instance(rng, 16, false);
    for (const auto& probe : inst.probes.items) {
      auto raw = eval::score_gallery(inst.gallery, probe.emb);
      auto aged = eval::score_gallery(inst.gallery, probe.emb, &identity, &fcfg);
      REQUIRE(raw.size() == aged.size());
      for (size_t i = 0; i < raw.size(); ++i) CHECK(std::abs(raw[i] - aged[i]) <= 1e-6f);
    }
    auto a = eval::closed_set_search(inst.gallery, inst.probes);
    auto b = eval::closed_set_search(inst.gallery, inst.probes, &identity, &fcfg);
    CHECK(a.closed_set_rank1 == b.closed_set_rank1);
  }
}

TEST_CASE("lapse curve groups probes by gap to the enrollment age") {
  eval::Gallery g;
  g.add(make_emb("alice", 3.0f, {1.0f, 0.0f, 0.0f}));
  g.add(make_emb("alice", 12.0f, {0.0f, 0.0f, 1.0f}));  // older image; enrollment stays 3
  g.add(make_emb("bob", 4.0f, {0.0f, 1.0f, 0.0f}));

  eval::ProbeSet probes;
  probes.items.push_back(eval::Probe{make_emb("alice", 5.0f, {1.0f, 0.1f, 0.0f}), true});   // lapse 2
  probes.items.push_back(eval::Probe{make_emb("bob", 10.0f, {0.1f, 1.0f, 0.0f}), true});    // lapse 6
  probes.items.push_back(eval::Probe{make_emb("alice", 16.0f, {0.0f, 0.2f, 1.0f}), true});  // lapse 13

  std::vector<std::pair<float, float>> buckets = {{0.0f, 5.0f}, {5.0f, 10.0f}, {10.0f, 18.0f}};
  auto curve = eval::lapse_curve(g, probes, buckets);
  REQUIRE(curve.size() == 3);
  CHECK(curve[0].probes == 1);
  CHECK(curve[1].probes == 1);
  CHECK(curve[2].probes == 1);
  CHECK(curve[0].rank1_raw == 1.0);
  CHECK(curve[1].rank1_raw == 1.0);
  CHECK(curve[2].rank1_raw == 1.0);
  CHECK_FALSE(curve[0].has_aged);

  SUBCASE("empty buckets are omitted and out-of-range probes skipped") {
    std::vector<std::pair<float, float>> sparse = {{0.0f, 5.0f}, {30.0f, 40.0f}};
    auto c = eval::lapse_curve(g, probes, sparse);
    REQUIRE(c.size() == 1);
    CHECK(c[0].lo == 0.0f);
    CHECK(c[0].probes == 1);
  }
  SUBCASE("overlapping buckets are rejected") {
    std::vector<std::pair<float, float>> bad = {{0.0f, 6.0f}, {5.0f, 10.0f}};
    CHECK_THROWS_WITH_AS(eval::lapse_curve(g, probes, bad), doctest::Contains("overlap"),
                         std::invalid_argument);
  }
  SUBCASE("degenerate bucket is rejected") {
    std::vector<std::pair<float, float>> bad = {{5.0f, 5.0f}};
    CHECK_THROWS_AS(eval::lapse_curve(g, probes, bad), std::invalid_argument);
  }
}

TEST_CASE("a single bucket covering every lapse reproduces closed-set search") {
  Rng rng(108);
  fam::FamConfig fcfg;
  fcfg.d = 8;
  auto fp = fam::init_params(fcfg, 11, 0.05f);

  RandomInstance inst = random_instance(rng, 8, false);
  std::vector<std::pair<float, float>> all = {{0.0f, 100.0f}};
  auto curve = eval::lapse_curve(inst.gallery, inst.probes, all, &fp, &fcfg);
  REQUIRE(curve.size() == 1);
  CHECK(curve[0].probes == static_cast<int>(inst.probes.items.size()));
  CHECK(curve[0].rank1_raw == eval::closed_set_search(inst.gallery, inst.probes).closed_set_rank1);
  REQUIRE(curve[0].has_aged);
  CHECK(curve[0].rank1_aged == eval::closed_set_search(inst.gallery, inst.probes, &fp, &fcfg).closed_set_rank1);
}

TEST_CASE("mean feature drift") {
  SUBCASE("anchor compared to itself has zero drift") {
    Rng rng(109);
    std::vector<io::FaceEmbedding> embs;
    for (int i = 0; i < 10; ++i) embs.push_back(random_emb("s" + std::to_string(i), 4.0f, 8, rng));
    auto points = eval::mean_feature_drift(embs);
    REQUIRE(points.size() == 1);
    CHECK(points[0].age == 4.0f);
    CHECK(points[0].magnitude == 0.0);
  }
  SUBCASE("drift grows with the age gap when features move along a shared direction") {
    Rng rng(110);
    int d = 16;
    std::vector<float> w(static_cast<size_t>(d));
    for (float& v : w) v = static_cast<float>(rng.normal()) * 0.8f / std::sqrt(static_cast<float>(d));

    std::vector<io::FaceEmbedding> embs;
    for (int s = 0; s < 40; ++s) {
      std::vector<float> u(static_cast<size_t>(d));
      for (float& v : u) v = static_cast<float>(rng.normal());
      for (float age : {3.0f, 8.0f, 13.0f, 18.0f}) {
        std::vector<float> x(u);
        for (int j = 0; j < d; ++j) x[static_cast<size_t>(j)] += (age / 20.0f) * w[static_cast<size_t>(j)];
        embs.push_back(make_emb("s" + std::to_string(s), age, x));
      }
    }
    auto points = eval::mean_feature_drift(embs);
    REQUIRE(points.size() == 4);
    for (size_t i = 1; i < points.size(); ++i) CHECK(points[i].magnitude > points[i - 1].magnitude);
    CHECK(points[0].magnitude == 0.0);
    CHECK(points[3].count == 40);
    CHECK(points[3].diff.size() == static_cast<size_t>(d));
  }
  SUBCASE("an identity ager reproduces the raw drift within float noise") {
    Rng rng(111);
    fam::FamConfig fcfg;
    fcfg.d = 8;
    auto identity = fam::init_params(fcfg, 13, 0.0f);
    std::vector<io::FaceEmbedding> embs;
    for (int s = 0; s < 12; ++s)
      for (float age : {3.0f, 9.0f, 15.0f}) embs.push_back(random_emb("s" + std::to_string(s), age, 8, rng));
    auto raw = eval::mean_feature_drift(embs);
    auto aged = eval::mean_feature_drift(embs, &identity, &fcfg);
    REQUIRE(raw.size() == aged.size());
    for (size_t i = 0; i < raw.size(); ++i) CHECK(std::abs(raw[i].magnitude - aged[i].magnitude) <= 1e-5);
  }
  SUBCASE("empty input is rejected") {
    CHECK_THROWS_AS(eval::mean_feature_drift({}), std::invalid_argument);
  }
}

TEST_CASE("verification accuracy") {
  SUBCASE("perfectly separated scores reach accuracy one") {
    std::vector<float> scores = {0.9f, 0.8f, 0.7f, 0.2f, 0.1f, 0.0f};
    std::vector<char> same = {1, 1, 1, 0, 0, 0};
    auto r = eval::verification_accuracy(scores, same);
    CHECK(r.accuracy == 1.0);
    CHECK(r.threshold > 0.2f);
    CHECK(r.threshold < 0.7f);
  }
  SUBCASE("identical scores with balanced labels sit at one half") {
    std::vector<float> scores(8, 0.4f);
    std::vector<char> same = {1, 1, 1, 1, 0, 0, 0, 0};
    CHECK(eval::verification_accuracy(scores, same).accuracy == 0.5);
  }
  SUBCASE("hand six-pair instance matches an exhaustive sweep oracle") {
    std::vector<float> scores = {0.85f, 0.55f, 0.35f, 0.6f, 0.3f, 0.1f};
    std::vector<char> same = {1, 1, 1, 0, 0, 0};
    // oracle: try accepting the top m scores for every m
    std::vector<std::pair<float, char>> sorted;
    for (size_t i = 0; i < scores.size(); ++i) sorted.emplace_back(scores[i], same[i]);
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    double best = 0.0;
    for (size_t m = 0; m <= sorted.size(); ++m) {
      size_t correct = 0;
      for (size_t i = 0; i < sorted.size(); ++i) {
        bool accept = i < m;
        if (accept == (sorted[i].second != 0)) ++correct;
      }
      best = std::max(best, static_cast<double>(correct) / sorted.size());
    }
    CHECK(eval::verification_accuracy(scores, same).accuracy == doctest::Approx(best).epsilon(1e-12));
    CHECK(best == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  }
  SUBCASE("single-class input is rejected") {
    CHECK_THROWS_AS(eval::verification_accuracy({0.5f, 0.6f}, {1, 1}), std::invalid_argument);
    CHECK_THROWS_AS(eval::verification_accuracy({0.5f, 0.6f}, {0, 0}), std::invalid_argument);
    CHECK_THROWS_AS(eval::verification_accuracy({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(eval::verification_accuracy({0.5f}, {1, 0}), std::invalid_argument);
  }
}

TEST_CASE("report validation bounds") {
  eval::IdentificationReport r;
  r.probes = 10;
  r.gallery = 5;
  r.closed_set_rank1 = 0.8;
  CHECK_NOTHROW(r.validate());
  r.closed_set_rank1 = 1.2;
  CHECK_THROWS_AS(r.validate(), std::invalid_argument);
  r.closed_set_rank1 = 0.8;
  r.probes = 0;
  CHECK_THROWS_AS(r.validate(), std::invalid_argument);
}

TEST_CASE("reports round trip through json and emit flat csv") {
  eval::EvalReport report;
  report.closed.probes = 300;
  report.closed.gallery = 100;
  report.closed.closed_set_rank1 = 0.863333;
  report.has_open = true;
  report.open.probes = 360;
  report.open.gallery = 100;
  report.open.closed_set_rank1 = 0.861111;
  report.open.has_open = true;
  report.open.open_set_rank1 = 0.811111;
  report.open.far_target = 0.01;
  report.open.threshold = 0.412337f;
  eval::LapsePoint p;
  p.lo = 0.0f;
  p.hi = 5.0f;
  p.probes = 102;
  p.rank1_raw = 0.754902;
  p.has_aged = true;
  p.rank1_aged = 0.823529;
  report.lapse.push_back(p);
  p.lo = 5.0f;
  p.hi = 10.0f;
  p.probes = 98;
  p.rank1_raw = 0.704082;
  p.rank1_aged = 0.816327;
  report.lapse.push_back(p);

  std::string json_path = temp_path("report", ".json");
  std::string csv_path = temp_path("report", ".csv");
  eval::write_report_json(json_path, report);
  auto back = eval::read_report_json(json_path);
  CHECK(back.closed.probes == report.closed.probes);
  CHECK(back.closed.gallery == report.closed.gallery);
  CHECK(back.closed.closed_set_rank1 == report.closed.closed_set_rank1);
  CHECK(back.has_open);
  CHECK(back.open.open_set_rank1 == report.open.open_set_rank1);
  CHECK(back.open.far_target == report.open.far_target);
  CHECK(back.open.threshold == report.open.threshold);
  REQUIRE(back.lapse.size() == 2);
  CHECK(back.lapse[0].rank1_raw == report.lapse[0].rank1_raw);
  CHECK(back.lapse[1].rank1_aged == report.lapse[1].rank1_aged);
  CHECK(back.lapse[1].probes == 98);

  eval::write_report_csv(csv_path, report);
  std::ifstream f(csv_path);
  REQUIRE(f.good());
  std::string line;
  std::getline(f, line);
  CHECK(line == "protocol,P,G,rank1,far_target,threshold,lapse_bucket");
  std::getline(f, line);
  CHECK(line == "closed,300,100,0.863333,,,");
  std::getline(f, line);
  CHECK(line.rfind("open,360,100,0.811111,0.01,", 0) == 0);
  std::getline(f, line);
  CHECK(line == "lapse_raw,102,100,0.754902,,,\"[0,5)\"");
  std::getline(f, line);
  CHECK(line == "lapse_aged,102,100,0.823529,,,\"[0,5)\"");
  std::getline(f, line);
  CHECK(line == "lapse_raw,98,100,0.704082,,,\"[5,10)\"");
  std::getline(f, line);
  CHECK(line == "lapse_aged,98,100,0.816327,,,\"[5,10)\"");

  std::remove(json_path.c_str());
  std::remove(csv_path.c_str());

  SUBCASE("reading a missing file fails") {
    CHECK_THROWS_AS(eval::read_report_json("/tmp/featage_eval_does_not_exist.json"), std::runtime_error);
  }
}
