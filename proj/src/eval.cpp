#include "featage/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

namespace featage::eval {

namespace {

using nlohmann::json;

void check_ager(const num::ParamSet* fam_params, const fam::FamConfig* fam_cfg) {
  if ((fam_params == nullptr) != (fam_cfg == nullptr))
    throw std::invalid_argument("eval: ager needs both params and config, or neither");
}

// Youngest gallery age per subject; the protocol treats it as the
// enrollment age when computing lapse.
std::map<std::string, float> enrollment_ages(const Gallery& gallery) {
  std::map<std::string, float> ages;
  for (const auto& entry : gallery.entries) {
    auto it = ages.find(entry.emb.subject_id);
    if (it == ages.end() || entry.emb.age < it->second) ages[entry.emb.subject_id] = entry.emb.age;
  }
  return ages;
}

std::string format_rate(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string format_float(float v) {
  char buf[48];
  auto res = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip form
  return std::string(buf, res.ptr);
}

std::string format_double(double v) {
  char buf[48];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

json lapse_to_json(const LapsePoint& p) {
  json j;
  j["lo"] = p.lo;
  j["hi"] = p.hi;
  j["probes"] = p.probes;
  j["rank1_raw"] = p.rank1_raw;
  if (p.has_aged) j["rank1_aged"] = p.rank1_aged;
  return j;
}

LapsePoint lapse_from_json(const json& j) {
  LapsePoint p;
  p.lo = j.at("lo").get<float>();
  p.hi = j.at("hi").get<float>();
  p.probes = j.at("probes").get<int>();
  p.rank1_raw = j.at("rank1_raw").get<double>();
  if (j.contains("rank1_aged")) {
    p.has_aged = true;
    p.rank1_aged = j.at("rank1_aged").get<double>();
  }
  return p;
}

json ident_to_json(const IdentificationReport& r) {
  json j;
  j["P"] = r.probes;
  j["G"] = r.gallery;
  j["closed_set_rank1"] = r.closed_set_rank1;
  if (r.has_open) {
    j["open_set_rank1"] = r.open_set_rank1;
    j["far_target"] = r.far_target;
    j["threshold"] = r.threshold;
  }
  return j;
}

IdentificationReport ident_from_json(const json& j) {
  IdentificationReport r;
  r.probes = j.at("P").get<int>();
  r.gallery = j.at("G").get<int>();
  r.closed_set_rank1 = j.at("closed_set_rank1").get<double>();
  if (j.contains("open_set_rank1")) {
    r.has_open = true;
    r.open_set_rank1 = j.at("open_set_rank1").get<double>();
    r.far_target = j.at("far_target").get<double>();
    r.threshold = j.at("threshold").get<float>();
  }
  return r;
}

}  // namespace

void Gallery::add(io::FaceEmbedding emb, bool distractor) {
  entries.push_back(GalleryEntry{std::move(emb), distractor});
}

void Gallery::validate() const {
  if (entries.empty()) throw std::invalid_argument("eval: empty gallery");
  size_t d = entries.front().emb.vec.size();
  for (const auto& entry : entries) {
    if (entry.emb.subject_id.empty()) throw std::invalid_argument("eval: gallery entry without a subject id");
    entry.emb.validate();
    if (entry.emb.vec.size() != d) throw std::invalid_argument("eval: gallery dimensions disagree");
  }
}

void ProbeSet::validate(const Gallery& gallery) const {
  std::set<std::string> enrolled;
  for (const auto& entry : gallery.entries) enrolled.insert(entry.emb.subject_id);
  for (const auto& probe : items) {
    probe.emb.validate();
    if (probe.mated && enrolled.find(probe.emb.subject_id) == enrolled.end())
      throw std::invalid_argument("eval: mated probe '" + probe.emb.subject_id + "' has no gallery subject");
  }
}

TopMatch top_subject(const Gallery& gallery, const std::vector<float>& scores) {
  if (scores.size() != gallery.entries.size())
    throw std::invalid_argument("eval: one score per gallery entry required");
  std::unordered_map<std::string, size_t> index;
  std::vector<std::string> order;
  std::vector<float> best;
  for (size_t i = 0; i < gallery.entries.size(); ++i) {
    const std::string& s = gallery.entries[i].emb.subject_id;
    auto it = index.find(s);
    if (it == index.end()) {
      index.emplace(s, order.size());
      order.push_back(s);
      best.push_back(scores[i]);
    } else if (scores[i] > best[it->second]) {
      best[it->second] = scores[i];
    }
  }
  TopMatch top;
  for (size_t j = 0; j < order.size(); ++j) {
    if (best[j] > top.score) {
      top.score = best[j];
      top.subject = order[j];
    }
  }
  return top;
}

float cosine_similarity(const io::FaceEmbedding& a, const io::FaceEmbedding& b) {
  if (a.vec.size() != b.vec.size())
    throw std::invalid_argument("eval: cosine of dimensions " + std::to_string(a.vec.size()) + " and " +
                                std::to_string(b.vec.size()));
  if (a.vec.empty()) throw std::invalid_argument("eval: cosine of empty vectors");
  double dot = 0.0;
  for (size_t j = 0; j < a.vec.size(); ++j) dot += static_cast<double>(a.vec[j]) * b.vec[j];
  return static_cast<float>(dot);
}

void IdentificationReport::validate() const {
  if (probes <= 0 || gallery <= 0) throw std::invalid_argument("eval: report needs positive probe and gallery counts");
  auto check_rate = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument(std::string("eval: ") + name + " outside [0,1]");
  };
  check_rate(closed_set_rank1, "closed-set rank-1");
  if (has_open) {
    check_rate(open_set_rank1, "open-set rank-1");
    check_rate(far_target, "far target");
  }
  for (const auto& p : per_lapse) {
    check_rate(p.rank1_raw, "lapse rank-1");
    if (p.has_aged) check_rate(p.rank1_aged, "lapse rank-1");
  }
}

std::vector<float> score_gallery(const Gallery& gallery, const io::FaceEmbedding& probe,
                                 const num::ParamSet* fam_params, const fam::FamConfig* fam_cfg) {
  check_ager(fam_params, fam_cfg);
  if (gallery.entries.empty()) throw std::invalid_argument("eval: empty gallery");

  std::vector<float> scores(gallery.entries.size());
  if (fam_params == nullptr) {
    for (size_t i = 0; i < gallery.entries.size(); ++i) scores[i] = cosine_similarity(gallery.entries[i].emb, probe);
    return scores;
  }

  std::vector<const io::FaceEmbedding*> embs;
  std::vector<float> from_ages;
  embs.reserve(gallery.entries.size());
  for (const auto& entry : gallery.entries) {
    embs.push_back(&entry.emb);
    from_ages.push_back(entry.emb.age);
  }
  num::Tensor aged = fam::age_rows(*fam_params, *fam_cfg, embs, from_ages, probe.age);
  int d = aged.dim(1);
  if (static_cast<size_t>(d) != probe.vec.size()) throw std::invalid_argument("eval: probe dimension mismatch");
  for (int i = 0; i < aged.dim(0); ++i) {
    double dot = 0.0;
    for (int j = 0; j < d; ++j) dot += static_cast<double>(aged.at(i, j)) * probe.vec[static_cast<size_t>(j)];
    scores[static_cast<size_t>(i)] = static_cast<float>(dot);
  }
  return scores;
}

IdentificationReport closed_set_search(const Gallery& gallery, const ProbeSet& probes,
                                       const num::ParamSet* fam_params, const fam::FamConfig* fam_cfg) {
  gallery.validate();
  probes.validate(gallery);
  if (probes.items.empty()) throw std::invalid_argument("eval: empty probe set");
  for (const auto& probe : probes.items)
    if (!probe.mated) throw std::invalid_argument("eval: closed-set search requires mated probes");

  int hits = 0;
  for (const auto& probe : probes.items) {
    TopMatch top = top_subject(gallery, score_gallery(gallery, probe.emb, fam_params, fam_cfg));
    if (top.subject == probe.emb.subject_id) ++hits;
  }

  IdentificationReport report;
  report.probes = static_cast<int>(probes.items.size());
  report.gallery = static_cast<int>(gallery.entries.size());
  report.closed_set_rank1 = static_cast<double>(hits) / static_cast<double>(probes.items.size());
  report.validate();
  return report;
}

float calibrate_threshold(std::vector<float> impostor_scores, double far_target) {
  if (!(far_target > 0.0) || far_target > 1.0)
    throw std::invalid_argument("eval: far target must be in (0, 1]");
  size_t required = static_cast<size_t>(std::ceil(1.0 / far_target));
  if (impostor_scores.size() < required)
    throw std::invalid_argument("eval: far " + format_double(far_target) + " needs at least " +
                                std::to_string(required) + " impostor scores, got " +
                                std::to_string(impostor_scores.size()));
  for (float s : impostor_scores)
    if (!std::isfinite(s)) throw std::invalid_argument("eval: non-finite impostor score");

  std::sort(impostor_scores.begin(), impostor_scores.end(), std::greater<float>());
  size_t n = impostor_scores.size();
  size_t allowed = static_cast<size_t>(std::floor(far_target * static_cast<double>(n)));

  // walk distinct values from the top; the last one whose accept count stays
  // within the allowance is the answer
  float best = std::nextafter(impostor_scores.front(), std::numeric_limits<float>::infinity());
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && impostor_scores[j + 1] == impostor_scores[i]) ++j;
    if (j + 1 > allowed) break;
    best = impostor_scores[i];
    i = j + 1;
  }
  return best;
}

double open_set_rank1_at_threshold(const Gallery& gallery, const ProbeSet& probes, float threshold,
                                   const num::ParamSet* fam_params, const fam::FamConfig* fam_cfg) {
  gallery.validate();
  probes.validate(gallery);
  int mated = 0, hits = 0;
  for (const auto& probe : probes.items) {
    if (!probe.mated) continue;
    ++mated;
    TopMatch top = top_subject(gallery, score_gallery(gallery, probe.emb, fam_params, fam_cfg));
    if (top.subject == probe.emb.subject_id && top.score >= threshold) ++hits;
  }
  if (mated == 0) throw std::invalid_argument("eval: no mated probes to score");
  return static_cast<double>(hits) / static_cast<double>(mated);
}

IdentificationReport open_set_search(const Gallery& gallery, const ProbeSet& probes, double far_target,
                                     const num::ParamSet* fam_params, const fam::FamConfig* fam_cfg) {
  gallery.validate();
  probes.validate(gallery);

  std::vector<float> impostors;
  int mated = 0, hits = 0, accepted_hits = 0;
  for (const auto& probe : probes.items) {
    if (probe.mated) {
      ++mated;
      continue;
    }
    TopMatch top = top_subject(gallery, score_gallery(gallery, probe.emb, fam_params, fam_cfg));
    impostors.push_back(top.score);
  }
  if (mated == 0) throw std::invalid_argument("eval: open-set search needs mated probes");
  if (impostors.empty()) throw std::invalid_argument("eval: open-set search needs unmated probes to calibrate");

  float threshold = calibrate_threshold(impostors, far_target);
  for (const auto& probe : probes.items) {
    if (!probe.mated) continue;
    TopMatch top = top_subject(gallery, score_gallery(gallery, probe.emb, fam_params, fam_cfg));
    if (top.subject == probe.emb.subject_id) {
      ++hits;
      if (top.score >= threshold) ++accepted_hits;
    }
  }

  IdentificationReport report;
  report.probes = static_cast<int>(probes.items.size());
  report.gallery = static_cast<int>(gallery.entries.size());
  report.closed_set_rank1 = static_cast<double>(hits) / static_cast<double>(mated);
  report.has_open = true;
  report.open_set_rank1 = static_cast<double>(accepted_hits) / static_cast<double>(mated);
  report.far_target = far_target;
  report.threshold = threshold;
  report.validate();
  return report;
}

std::vector<LapsePoint> lapse_curve(const Gallery& gallery, const ProbeSet& probes,
                                    const std::vector<std::pair<float, float>>& buckets,
                                    const num::ParamSet* fam_params, const fam::FamConfig* fam_cfg) {
  check_ager(fam_params, fam_cfg);
  gallery.validate();
  probes.validate(gallery);
  if (buckets.empty()) throw std::invalid_argument("eval: no lapse buckets");
  for (const auto& b : buckets)
    if (!(b.first < b.second)) throw std::invalid_argument("eval: lapse bucket with lo >= hi");
  std::vector<std::pair<float, float>> sorted = buckets;
  std::sort(sorted.begin(), sorted.end());
  for (size_t i = 1; i < sorted.size(); ++i)
    if (sorted[i].first < sorted[i - 1].second) throw std::invalid_argument("eval: overlapping lapse buckets");

  std::map<std::string, float> enrolled = enrollment_ages(gallery);

  struct Tally {
    int probes = 0;
    int raw_hits = 0;
    int aged_hits = 0;
  };
  std::vector<Tally> tallies(sorted.size());

  for (const auto& probe : probes.items) {
    if (!probe.mated) continue;
    float lapse = std::abs(probe.emb.age - enrolled.at(probe.emb.subject_id));
    int bucket = -1;
    for (size_t b = 0; b < sorted.size(); ++b)
      if (lapse >= sorted[b].first && lapse < sorted[b].second) {
        bucket = static_cast<int>(b);
        break;
      }
    if (bucket < 0) continue;

    Tally& tally = tallies[static_cast<size_t>(bucket)];
    ++tally.probes;
    TopMatch raw = top_subject(gallery, score_gallery(gallery, probe.emb));
    if (raw.subject == probe.emb.subject_id) ++tally.raw_hits;
    if (fam_params != nullptr) {
      TopMatch aged = top_subject(gallery, score_gallery(gallery, probe.emb, fam_params, fam_cfg));
      if (aged.subject == probe.emb.subject_id) ++tally.aged_hits;
    }
  }

  std::vector<LapsePoint> out;
  for (size_t b = 0; b < sorted.size(); ++b) {
    if (tallies[b].probes == 0) continue;
    LapsePoint p;
    p.lo = sorted[b].first;
    p.hi = sorted[b].second;
    p.probes = tallies[b].probes;
    p.rank1_raw = static_cast<double>(tallies[b].raw_hits) / p.probes;
    if (fam_params != nullptr) {
      p.has_aged = true;
      p.rank1_aged = static_cast<double>(tallies[b].aged_hits) / p.probes;
    }
    out.push_back(p);
  }
  return out;
}

std::vector<DriftPoint> mean_feature_drift(const std::vector<io::FaceEmbedding>& embs,
                                           const num::ParamSet* fam_params, const fam::FamConfig* fam_cfg) {
  check_ager(fam_params, fam_cfg);
  if (embs.empty()) throw std::invalid_argument("eval: drift over an empty embedding set");
  size_t d = embs.front().vec.size();

  std::map<float, std::vector<const io::FaceEmbedding*>> by_age;
  for (const auto& e : embs) {
    if (e.vec.size() != d) throw std::invalid_argument("eval: drift dimensions disagree");
    by_age[e.age].push_back(&e);
  }

  auto group_mean = [d](const std::vector<const io::FaceEmbedding*>& group) {
    std::vector<double> mean(d, 0.0);
    for (const auto* e : group)
      for (size_t j = 0; j < d; ++j) mean[j] += e->vec[j];
    for (double& v : mean) v /= static_cast<double>(group.size());
    return mean;
  };

  float anchor_age = by_age.begin()->first;
  const auto& anchor = by_age.begin()->second;

  std::vector<DriftPoint> out;
  for (const auto& [age, group] : by_age) {
    std::vector<double> reference;
    if (fam_params == nullptr) {
      reference = group_mean(anchor);
    } else {
      std::vector<float> from_ages(anchor.size(), anchor_age);
      num::Tensor aged = fam::age_rows(*fam_params, *fam_cfg, anchor, from_ages, age);
      reference.assign(d, 0.0);
      for (int i = 0; i < aged.dim(0); ++i)
        for (size_t j = 0; j < d; ++j) reference[j] += aged.at(i, static_cast<int>(j));
      for (double& v : reference) v /= static_cast<double>(anchor.size());
    }

    std::vector<double> target = group_mean(group);
    DriftPoint p;
    p.age = age;
    p.count = static_cast<int>(group.size());
    p.diff.resize(d);
    double mag2 = 0.0;
    for (size_t j = 0; j < d; ++j) {
      double diff = std::abs(reference[j] - target[j]);
      p.diff[j] = static_cast<float>(diff);
      mag2 += diff * diff;
    }
    p.magnitude = std::sqrt(mag2);
    out.push_back(std::move(p));
  }
  return out;
}

VerificationResult verification_accuracy(const std::vector<float>& scores, const std::vector<char>& same) {
  if (scores.size() != same.size()) throw std::invalid_argument("eval: one label per verification score required");
  if (scores.empty()) throw std::invalid_argument("eval: verification over an empty pair set");
  size_t positives = 0;
  for (char c : same) positives += (c != 0);
  if (positives == 0 || positives == same.size())
    throw std::invalid_argument("eval: verification needs both genuine and impostor pairs");

  std::vector<float> distinct = scores;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  std::vector<float> candidates;
  candidates.push_back(distinct.front() - 1.0f);
  for (size_t i = 0; i + 1 < distinct.size(); ++i)
    candidates.push_back(distinct[i] + (distinct[i + 1] - distinct[i]) / 2.0f);
  candidates.push_back(distinct.back() + 1.0f);

  VerificationResult best;
  best.accuracy = -1.0;
  for (float t : candidates) {
    size_t correct = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
      bool accept = scores[i] >= t;
      if (accept == (same[i] != 0)) ++correct;
    }
    double acc = static_cast<double>(correct) / static_cast<double>(scores.size());
    if (acc > best.accuracy) {
      best.accuracy = acc;
      best.threshold = t;
    }
  }
  return best;
}

void write_report_csv(const std::string& path, const EvalReport& report) {
  std::ostringstream out;
  out << "protocol,P,G,rank1,far_target,threshold,lapse_bucket\n";
  out << "closed," << report.closed.probes << "," << report.closed.gallery << ","
      << format_rate(report.closed.closed_set_rank1) << ",,,\n";
  if (report.has_open) {
    out << "open," << report.open.probes << "," << report.open.gallery << ","
        << format_rate(report.open.open_set_rank1) << "," << format_double(report.open.far_target) << ","
        << format_float(report.open.threshold) << ",\n";
  }
  for (const auto& p : report.lapse) {
    std::string bucket = "\"[" + format_float(p.lo) + "," + format_float(p.hi) + ")\"";
    out << "lapse_raw," << p.probes << "," << report.closed.gallery << "," << format_rate(p.rank1_raw)
        << ",,," << bucket << "\n";
    if (p.has_aged)
      out << "lapse_aged," << p.probes << "," << report.closed.gallery << "," << format_rate(p.rank1_aged)
          << ",,," << bucket << "\n";
  }

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("eval: cannot write " + path);
  f << out.str();
  if (!f) throw std::runtime_error("eval: failed writing " + path);
}

void write_report_json(const std::string& path, const EvalReport& report) {
  json j;
  j["closed"] = ident_to_json(report.closed);
  if (report.has_open) j["open"] = ident_to_json(report.open);
  json lapse = json::array();
  for (const auto& p : report.lapse) lapse.push_back(lapse_to_json(p));
  j["lapse"] = lapse;

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("eval: cannot write " + path);
  f << j.dump(2) << "\n";
  if (!f) throw std::runtime_error("eval: failed writing " + path);
}

EvalReport read_report_json(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("eval: cannot read " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("eval: bad report json in " + path + ": " + e.what());
  }

  EvalReport report;
  report.closed = ident_from_json(j.at("closed"));
  if (j.contains("open")) {
    report.has_open = true;
    report.open = ident_from_json(j.at("open"));
  }
  for (const auto& item : j.at("lapse")) report.lapse.push_back(lapse_from_json(item));
  return report;
}

}  // namespace featage::eval
