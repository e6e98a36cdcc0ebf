#include "featage/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "binio.hpp"

namespace featage::io {

namespace {

std::string format_age(float age) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(age));
  return buf;
}

uint32_t float_bits(float v) {
  uint32_t b;
  std::memcpy(&b, &v, 4);
  return b;
}

void check_field(const std::string& field, const char* name) {
  if (field.empty()) throw std::invalid_argument(std::string("manifest: empty ") + name);
  if (field.find_first_of(",\r\n") != std::string::npos)
    throw std::invalid_argument(std::string("manifest: ") + name + " '" + field + "' contains a delimiter");
}

std::string join_path(const std::string& dir, const std::string& rel) {
  if (dir.empty()) return rel;
  if (dir.back() == '/') return dir + rel;
  return dir + "/" + rel;
}

}  // namespace

double FaceEmbedding::norm() const {
  double s = 0;
  for (float v : vec) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

void FaceEmbedding::validate() const {
  if (subject_id.empty()) throw std::invalid_argument("embedding: empty subject id");
  if (!std::isfinite(age) || age < 0)
    throw std::invalid_argument("embedding: bad age for subject '" + subject_id + "'");
  if (vec.empty()) throw std::invalid_argument("embedding: empty vector for subject '" + subject_id + "'");
  for (float v : vec)
    if (!std::isfinite(v)) throw std::invalid_argument("embedding: non-finite value for subject '" + subject_id + "'");
  double n = norm();
  if (std::abs(n - 1.0) > 1e-4)
    throw std::invalid_argument("embedding: subject '" + subject_id + "' has norm " + std::to_string(n) +
                                ", expected unit length");
}

void ImageSample::validate() const {
  if (pixels.ndim() != 3 || pixels.dim(2) != 3)
    throw std::invalid_argument("image: expected [h,w,3] pixels, got " + pixels.shape_str());
  for (float v : pixels.data)
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f)
      throw std::invalid_argument("image: pixel value outside [0,1] for subject '" + subject_id + "'");
  if (!std::isfinite(age) || age < 0) throw std::invalid_argument("image: bad age");
}

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::gallery: return "gallery";
    case Split::probe: return "probe";
    case Split::distractor: return "distractor";
  }
  throw std::invalid_argument("split: bad enum value");
}

Split split_from_name(const std::string& name) {
  for (Split s : {Split::train, Split::test, Split::gallery, Split::probe, Split::distractor})
    if (name == split_name(s)) return s;
  throw std::invalid_argument("manifest: unknown split '" + name + "'");
}

void Manifest::validate() const {
  std::set<std::tuple<std::string, uint32_t, std::string>> seen;
  std::set<std::string> paths;
  std::set<std::string> train_subjects, test_subjects;
  for (const ManifestRecord& r : records) {
    check_field(r.subject_id, "subject id");
    check_field(r.style_id, "style id");
    check_field(r.path, "path");
    if (!std::isfinite(r.age) || r.age < 0)
      throw std::invalid_argument("manifest: bad age for subject '" + r.subject_id + "'");
    if (!seen.insert({r.subject_id, float_bits(r.age), r.path}).second)
      throw std::invalid_argument("manifest: duplicate record for subject '" + r.subject_id + "' age " +
                                  format_age(r.age) + " at '" + r.path + "'");
    if (!paths.insert(r.path).second)
      throw std::invalid_argument("manifest: path '" + r.path + "' listed twice");
    if (r.split == Split::train) train_subjects.insert(r.subject_id);
    if (r.split == Split::test) test_subjects.insert(r.subject_id);
  }
  for (const std::string& s : train_subjects)
    if (test_subjects.count(s))
      throw std::invalid_argument("manifest: subject '" + s + "' appears in both train and test splits");
}

void Manifest::merge(const Manifest& other) {
  records.insert(records.end(), other.records.begin(), other.records.end());
  validate();
}

std::vector<int> Manifest::indices_for_split(Split s) const {
  std::vector<int> out;
  for (size_t i = 0; i < records.size(); ++i)
    if (records[i].split == s) out.push_back(static_cast<int>(i));
  return out;
}

std::map<std::string, std::vector<int>> Manifest::by_subject(Split s) const {
  std::map<std::string, std::vector<int>> out;
  for (size_t i = 0; i < records.size(); ++i)
    if (records[i].split == s) out[records[i].subject_id].push_back(static_cast<int>(i));
  return out;
}

void save_manifest(const std::string& path, const Manifest& m) {
  m.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("manifest: cannot open '" + path + "' for writing");
  os << "subject_id,age,style_id,split,path\n";
  for (const ManifestRecord& r : m.records)
    os << r.subject_id << ',' << format_age(r.age) << ',' << r.style_id << ',' << split_name(r.split) << ','
       << r.path << '\n';
  if (!os) throw std::runtime_error("manifest: write to '" + path + "' failed");
}

Manifest load_manifest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("manifest: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("manifest: '" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "subject_id,age,style_id,split,path")
    throw std::runtime_error("manifest: unexpected header '" + line + "' in '" + path + "'");
  Manifest m;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
      if (c == ',') {
        fields.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    fields.push_back(cur);
    if (fields.size() != 5)
      throw std::runtime_error("manifest: line " + std::to_string(lineno) + " has " +
                               std::to_string(fields.size()) + " fields, expected 5");
    ManifestRecord r;
    r.subject_id = fields[0];
    char* end = nullptr;
    r.age = std::strtof(fields[1].c_str(), &end);
    if (end == fields[1].c_str() || *end != '\0')
      throw std::runtime_error("manifest: line " + std::to_string(lineno) + " has bad age '" + fields[1] + "'");
    r.style_id = fields[2];
    r.split = split_from_name(fields[3]);
    r.path = fields[4];
    m.records.push_back(std::move(r));
  }
  m.validate();
  return m;
}

void save_ppm(const std::string& path, const num::Tensor& pixels) {
  if (pixels.ndim() != 3 || pixels.dim(2) != 3)
    throw std::invalid_argument("ppm: expected [h,w,3] pixels, got " + pixels.shape_str());
  const int h = pixels.dim(0), w = pixels.dim(1);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("ppm: cannot open '" + path + "' for writing");
  os << "P6\n" << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w * 3; ++c) {
      float v = pixels.data[static_cast<size_t>(r) * w * 3 + c];
      v = std::min(1.0f, std::max(0.0f, v));
      row[static_cast<size_t>(c)] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw std::runtime_error("ppm: write to '" + path + "' failed");
}

num::Tensor load_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("ppm: cannot open '" + path + "'");
  std::string magic;
  is >> magic;
  if (magic != "P6") throw std::runtime_error("ppm: '" + path + "' is not a binary PPM");
  int w = 0, h = 0, maxval = 0;
  is >> w >> h >> maxval;
  if (!is || w <= 0 || h <= 0 || maxval != 255)
    throw std::runtime_error("ppm: bad header in '" + path + "'");
  is.get();  // single whitespace after maxval
  num::Tensor px({h, w, 3});
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h * 3);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<size_t>(is.gcount()) != raw.size())
    throw std::runtime_error("ppm: '" + path + "' is truncated");
  for (size_t i = 0; i < raw.size(); ++i) px.data[i] = static_cast<float>(raw[i]) / 255.0f;
  return px;
}

ImageSample load_image_sample(const std::string& manifest_dir, const ManifestRecord& rec) {
  ImageSample s;
  s.subject_id = rec.subject_id;
  s.age = rec.age;
  s.style_id = rec.style_id;
  s.pixels = load_ppm(join_path(manifest_dir, rec.path));
  s.validate();
  return s;
}

void save_embeddings(const std::string& path, const std::vector<FaceEmbedding>& embs, int d) {
  if (d <= 0) throw std::invalid_argument("embeddings: dimension must be positive");
  for (const FaceEmbedding& e : embs) {
    e.validate();
    if (static_cast<int>(e.vec.size()) != d)
      throw std::invalid_argument("embeddings: subject '" + e.subject_id + "' has dimension " +
                                  std::to_string(e.vec.size()) + ", container expects " + std::to_string(d));
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("embeddings: cannot open '" + path + "' for writing");
  os.write("FAEB", 4);
  detail::put_u32(os, 1);
  detail::put_u32(os, static_cast<uint32_t>(d));
  detail::put_u64(os, embs.size());
  for (const FaceEmbedding& e : embs) {
    detail::put_str(os, e.subject_id);
    detail::put_f32(os, e.age);
    for (float v : e.vec) detail::put_f32(os, v);
  }
  if (!os) throw std::runtime_error("embeddings: write to '" + path + "' failed");
}

std::vector<FaceEmbedding> load_embeddings(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("embeddings: cannot open '" + path + "'");
  const std::string what = "embeddings: '" + path + "'";
  char magic[4];
  detail::get_bytes(is, magic, 4, what);
  if (std::memcmp(magic, "FAEB", 4) != 0)
    throw std::runtime_error(what + ": bad magic, not an embedding container");
  uint32_t version = detail::get_u32(is, what);
  if (version != 1) throw std::runtime_error(what + ": unsupported version " + std::to_string(version));
  uint32_t d = detail::get_u32(is, what);
  uint64_t count = detail::get_u64(is, what);
  if (d == 0 || d > 1u << 20) throw std::runtime_error(what + ": implausible dimension " + std::to_string(d));
  std::vector<FaceEmbedding> out;
  out.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    FaceEmbedding e;
    e.subject_id = detail::get_str(is, what);
    e.age = detail::get_f32(is, what);
    e.vec.resize(d);
    for (uint32_t j = 0; j < d; ++j) e.vec[j] = detail::get_f32(is, what);
    e.validate();
    out.push_back(std::move(e));
  }
  if (is.peek() != EOF) throw std::runtime_error(what + ": trailing bytes after last record");
  return out;
}

std::vector<GenuinePair> sample_genuine_pairs(const Manifest& m, Split split, num::Rng& rng, int count) {
  auto groups = m.by_subject(split);
  std::vector<const std::vector<int>*> eligible;
  for (const auto& [subject, idxs] : groups)
    if (idxs.size() >= 2) eligible.push_back(&idxs);
  if (eligible.empty())
    throw std::invalid_argument(std::string("pairs: no subject in split '") + split_name(split) +
                                "' has two or more records");
  std::vector<GenuinePair> out;
  out.reserve(static_cast<size_t>(count));
  for (int n = 0; n < count; ++n) {
    const std::vector<int>& idxs = *eligible[rng.uniform_int(static_cast<int>(eligible.size()))];
    int i = rng.uniform_int(static_cast<int>(idxs.size()));
    int j = rng.uniform_int(static_cast<int>(idxs.size()) - 1);
    if (j >= i) ++j;
    out.push_back({idxs[i], idxs[j]});
  }
  return out;
}

std::vector<double> genuine_pair_gap_distribution(const Manifest& m, Split split,
                                                  const std::vector<double>& bucket_edges) {
  if (bucket_edges.size() < 2) throw std::invalid_argument("pairs: need at least two bucket edges");
  for (size_t i = 1; i < bucket_edges.size(); ++i)
    if (bucket_edges[i] <= bucket_edges[i - 1])
      throw std::invalid_argument("pairs: bucket edges must be strictly increasing");
  auto groups = m.by_subject(split);
  std::vector<const std::vector<int>*> eligible;
  for (const auto& [subject, idxs] : groups)
    if (idxs.size() >= 2) eligible.push_back(&idxs);
  if (eligible.empty())
    throw std::invalid_argument(std::string("pairs: no subject in split '") + split_name(split) +
                                "' has two or more records");
  std::vector<double> probs(bucket_edges.size() - 1, 0.0);
  const double subject_w = 1.0 / static_cast<double>(eligible.size());
  for (const std::vector<int>* idxs : eligible) {
    const size_t n = idxs->size();
    const double pair_w = subject_w / static_cast<double>(n * (n - 1));
    for (size_t a = 0; a < n; ++a)
      for (size_t b = 0; b < n; ++b) {
        if (a == b) continue;
        double gap = std::abs(static_cast<double>(m.records[(*idxs)[a]].age) - m.records[(*idxs)[b]].age);
        if (gap < bucket_edges.front() || gap > bucket_edges.back())
          throw std::invalid_argument("pairs: age gap " + std::to_string(gap) + " outside bucket range");
        size_t bk = bucket_edges.size() - 2;
        for (size_t e = 1; e + 1 < bucket_edges.size(); ++e)
          if (gap < bucket_edges[e]) {
            bk = e - 1;
            break;
          }
        probs[bk] += pair_w;
      }
  }
  return probs;
}

}  // namespace featage::io
