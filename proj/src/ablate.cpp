#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "featage/eval.hpp"
#include "featage/generator.hpp"

namespace featage::gen {

namespace {

// Gallery: each test subject's youngest image. Probes: that subject's other
// test images at least min_lapse years past the gallery age.
struct ProtocolSplit {
  std::vector<int> gallery;
  std::vector<int> probes;
};

ProtocolSplit build_protocol(const io::Manifest& manifest, float min_lapse) {
  ProtocolSplit out;
  auto by_subject = manifest.by_subject(io::Split::test);
  if (by_subject.empty()) throw std::invalid_argument("ablate: manifest has no test subjects");
  for (const auto& [subject, idxs] : by_subject) {
    int youngest = idxs.front();
    for (int i : idxs)
      if (manifest.records[static_cast<size_t>(i)].age < manifest.records[static_cast<size_t>(youngest)].age)
        youngest = i;
    out.gallery.push_back(youngest);
    for (int i : idxs) {
      if (i == youngest) continue;
      float lapse = manifest.records[static_cast<size_t>(i)].age -
                    manifest.records[static_cast<size_t>(youngest)].age;
      if (lapse >= min_lapse) out.probes.push_back(i);
    }
  }
  if (out.probes.empty()) throw std::invalid_argument("ablate: no probes clear the minimum lapse");
  return out;
}

num::Tensor pack_images(const std::vector<io::ImageSample>& samples, const std::vector<int>& idxs) {
  const auto& shape = samples[static_cast<size_t>(idxs.front())].pixels.shape;
  num::Tensor out({static_cast<int>(idxs.size()), shape[0], shape[1], shape[2]});
  size_t stride = static_cast<size_t>(shape[0]) * shape[1] * shape[2];
  for (size_t i = 0; i < idxs.size(); ++i) {
    const auto& px = samples[static_cast<size_t>(idxs[i])].pixels;
    std::copy(px.data.begin(), px.data.end(), out.data.begin() + static_cast<ptrdiff_t>(i * stride));
  }
  return out;
}

// Embeds rows of an image batch, labeling them with the given records.
eval::Gallery embeddings_as_gallery(const io::Manifest& manifest, const std::vector<int>& idxs,
                                    const num::Tensor& embs) {
  eval::Gallery g;
  for (size_t i = 0; i < idxs.size(); ++i) {
    const auto& rec = manifest.records[static_cast<size_t>(idxs[i])];
    io::FaceEmbedding e;
    e.subject_id = rec.subject_id;
    e.age = rec.age;
    e.vec.assign(embs.data.begin() + static_cast<ptrdiff_t>(i) * embs.dim(1),
                 embs.data.begin() + static_cast<ptrdiff_t>(i + 1) * embs.dim(1));
    g.add(std::move(e));
  }
  return g;
}

std::string format_rate(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::vector<AblationRow> ablate_style_dim(const std::vector<int>& k_values, const io::Manifest& manifest,
                                          const std::vector<io::ImageSample>& samples, const num::ParamSet& idenc,
                                          const num::ParamSet& fam_params, const AblationConfig& cfg) {
  if (k_values.empty()) throw std::invalid_argument("ablate: no style widths given");
  for (int k : k_values)
    if (k != 0 && k != 8 && k != 32 && k != 128)
      throw std::invalid_argument("ablate: style width " + std::to_string(k) + " not in {0, 8, 32, 128}");
  if (manifest.records.size() != samples.size())
    throw std::invalid_argument("ablate: one image per manifest record required");

  ProtocolSplit split = build_protocol(manifest, cfg.min_lapse);

  num::Tensor gallery_images = pack_images(samples, split.gallery);
  num::Tensor probe_images = pack_images(samples, split.probes);
  num::Tensor gallery_embs = embed_images(idenc, gallery_images);
  num::Tensor probe_embs = embed_images(idenc, probe_images);

  eval::Gallery raw_gallery = embeddings_as_gallery(manifest, split.gallery, gallery_embs);
  eval::ProbeSet probes;
  {
    eval::Gallery as_gallery = embeddings_as_gallery(manifest, split.probes, probe_embs);
    for (auto& entry : as_gallery.entries) probes.items.push_back(eval::Probe{std::move(entry.emb), true});
  }

  double feature_only = eval::closed_set_search(raw_gallery, probes, &fam_params, &cfg.fam).closed_set_rank1;

  // probes grouped by whole-year target age; the gallery is decoded once per
  // group instead of once per probe
  std::map<int, std::vector<size_t>> probes_by_year;
  for (size_t p = 0; p < split.probes.size(); ++p) {
    float age = manifest.records[static_cast<size_t>(split.probes[p])].age;
    probes_by_year[static_cast<int>(std::lround(age))].push_back(p);
  }

  std::vector<const io::FaceEmbedding*> gallery_ptrs;
  std::vector<float> gallery_ages;
  for (const auto& entry : raw_gallery.entries) {
    gallery_ptrs.push_back(&entry.emb);
    gallery_ages.push_back(entry.emb.age);
  }

  std::vector<AblationRow> rows;
  for (int k : k_values) {
    GenTrainConfig tc = cfg.train;
    tc.gen.k = k;
    GenTrainResult trained = train_generator(manifest, samples, io::Split::train, idenc, tc);
    if (trained.diverged) throw std::runtime_error("ablate: generator training diverged at k=" + std::to_string(k));

    AblationRow row;
    row.k = k;
    row.feature_only_rank1 = feature_only;

    num::Tensor style = encode_style_batch(trained.params, tc.gen, gallery_images);

    // reconstruction: decode each gallery image at its own feature
    num::Tensor recon = decode_batch(trained.params, tc.gen, style, gallery_embs);
    double mae = 0.0;
    for (size_t i = 0; i < recon.data.size(); ++i)
      mae += std::abs(static_cast<double>(recon.data[i]) - gallery_images.data[i]);
    row.pixel_mae = mae / static_cast<double>(recon.data.size());

    eval::Gallery recon_gallery = embeddings_as_gallery(manifest, split.gallery, embed_images(idenc, recon));
    row.recon_rank1 = eval::closed_set_search(recon_gallery, probes).closed_set_rank1;

    // aging: decode the gallery from FAM-aged features once per probe year
    int aged_hits = 0;
    for (const auto& [year, probe_rows] : probes_by_year) {
      num::Tensor aged_feats =
          fam::age_rows(fam_params, cfg.fam, gallery_ptrs, gallery_ages, static_cast<float>(year));
      num::Tensor aged_images = decode_batch(trained.params, tc.gen, style, aged_feats);
      eval::Gallery aged_gallery =
          embeddings_as_gallery(manifest, split.gallery, embed_images(idenc, aged_images));
      for (size_t p : probe_rows) {
        auto top = eval::top_subject(aged_gallery, eval::score_gallery(aged_gallery, probes.items[p].emb));
        if (top.subject == probes.items[p].emb.subject_id) ++aged_hits;
      }
    }
    row.aged_rank1 = static_cast<double>(aged_hits) / static_cast<double>(split.probes.size());

    rows.push_back(row);
  }
  return rows;
}

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "k,recon_rank1,aged_rank1,pixel_mae,feature_only_rank1\n";
  for (const auto& row : rows)
    out << row.k << "," << format_rate(row.recon_rank1) << "," << format_rate(row.aged_rank1) << ","
        << format_rate(row.pixel_mae) << "," << format_rate(row.feature_only_rank1) << "\n";

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("ablate: cannot write " + path);
  f << out.str();
  if (!f) throw std::runtime_error("ablate: failed writing " + path);
}

}  // namespace featage::gen
