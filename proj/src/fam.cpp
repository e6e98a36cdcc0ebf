#include "featage/fam.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "featage/autodiff.hpp"

namespace featage::fam {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

void check_age(const FamConfig& cfg, float age, const char* what) {
  if (!(age >= cfg.min_age && age <= cfg.max_age))
    throw std::invalid_argument(std::string("fam: ") + what + " " + std::to_string(age) + " outside [" +
                                std::to_string(cfg.min_age) + ", " + std::to_string(cfg.max_age) + "]");
}

void check_params(const num::ParamSet& params, const FamConfig& cfg) {
  for (const char* name : {"fam.w1", "fam.b1", "fam.w2", "fam.b2"})
    if (params.find(name) < 0) throw std::invalid_argument(std::string("fam: params missing ") + name);
  if (params["fam.w1"].dim(0) != cfg.d + 2 || params["fam.w1"].dim(1) != cfg.d)
    throw std::invalid_argument("fam: w1 shape " + params["fam.w1"].shape_str() + " does not match d=" +
                                std::to_string(cfg.d));
}

num::Tensor augment_rows(const FamConfig& cfg, const std::vector<const io::FaceEmbedding*>& src,
                         const std::vector<float>& enroll, const std::vector<float>& target) {
  int b = static_cast<int>(src.size());
  num::Tensor out({b, cfg.d + 2});
  for (int r = 0; r < b; ++r) {
    if (static_cast<int>(src[static_cast<size_t>(r)]->vec.size()) != cfg.d)
      throw std::invalid_argument("fam: embedding dimension " +
                                  std::to_string(src[static_cast<size_t>(r)]->vec.size()) + " does not match d=" +
                                  std::to_string(cfg.d));
    for (int j = 0; j < cfg.d; ++j) out.at(r, j) = src[static_cast<size_t>(r)]->vec[static_cast<size_t>(j)];
    out.at(r, cfg.d) = enroll[static_cast<size_t>(r)] / cfg.age_norm;
    out.at(r, cfg.d + 1) = target[static_cast<size_t>(r)] / cfg.age_norm;
  }
  return out;
}

}  // namespace

num::ParamSet init_params(const FamConfig& cfg, uint64_t seed, float noise_sigma) {
  num::Rng rng(seed);
  num::ParamSet ps;

  num::Tensor w1({cfg.d + 2, cfg.d});
  for (int i = 0; i < cfg.d; ++i) w1.at(i, i) = 1.0f;
  for (float& v : w1.data) v += noise_sigma * static_cast<float>(rng.normal());
  ps.add("fam.w1", std::move(w1));

  num::Tensor b1({cfg.d});
  for (float& v : b1.data) v = 1.0f + noise_sigma * static_cast<float>(rng.normal());
  ps.add("fam.b1", std::move(b1));

  num::Tensor w2({cfg.d, cfg.d});
  for (int i = 0; i < cfg.d; ++i) w2.at(i, i) = 1.0f;
  for (float& v : w2.data) v += noise_sigma * static_cast<float>(rng.normal());
  ps.add("fam.w2", std::move(w2));

  num::Tensor b2({cfg.d});
  for (float& v : b2.data) v = -1.0f + noise_sigma * static_cast<float>(rng.normal());
  ps.add("fam.b2", std::move(b2));

  return ps;
}

num::Tensor forward(const num::ParamSet& params, const FamConfig& cfg, const num::Tensor& src_aug) {
  check_params(params, cfg);
  if (src_aug.ndim() != 2 || src_aug.dim(1) != cfg.d + 2)
    throw std::invalid_argument("fam: expected [b, d+2] input, got " + src_aug.shape_str());
  int b = src_aug.dim(0);

  ConstMatMap x(src_aug.data.data(), b, cfg.d + 2);
  ConstMatMap w1(params["fam.w1"].data.data(), cfg.d + 2, cfg.d);
  ConstMatMap w2(params["fam.w2"].data.data(), cfg.d, cfg.d);

  num::Tensor h({b, cfg.d});
  MatMap hm(h.data.data(), b, cfg.d);
  hm.noalias() = x * w1;
  for (int r = 0; r < b; ++r)
    for (int j = 0; j < cfg.d; ++j) {
      float v = h.at(r, j) + params["fam.b1"].data[static_cast<size_t>(j)];
      h.at(r, j) = v >= 0.0f ? v : 0.2f * v;
    }

  num::Tensor y({b, cfg.d});
  MatMap ym(y.data.data(), b, cfg.d);
  ym.noalias() = hm * w2;
  for (int r = 0; r < b; ++r) {
    double norm2 = 0.0;
    for (int j = 0; j < cfg.d; ++j) {
      float v = y.at(r, j) + params["fam.b2"].data[static_cast<size_t>(j)];
      y.at(r, j) = v;
      norm2 += static_cast<double>(v) * v;
    }
    double norm = std::sqrt(norm2);
    if (!(norm > 1e-12) || !std::isfinite(norm))
      throw std::runtime_error("fam: output row " + std::to_string(r) + " has degenerate norm");
    for (int j = 0; j < cfg.d; ++j) y.at(r, j) = static_cast<float>(y.at(r, j) / norm);
  }
  return y;
}

io::FaceEmbedding age_feature(const num::ParamSet& params, const FamConfig& cfg, const io::FaceEmbedding& emb,
                              float enroll_age, float target_age) {
  check_age(cfg, enroll_age, "enrollment age");
  check_age(cfg, target_age, "target age");

  num::Tensor aug = augment_rows(cfg, {&emb}, {enroll_age}, {target_age});
  num::Tensor y = forward(params, cfg, aug);

  io::FaceEmbedding out;
  out.subject_id = emb.subject_id;
  out.age = target_age;
  out.vec.assign(y.data.begin(), y.data.end());
  out.validate();
  return out;
}

num::Tensor age_rows(const num::ParamSet& params, const FamConfig& cfg,
                     const std::vector<const io::FaceEmbedding*>& embs, const std::vector<float>& from_ages,
                     float to_age) {
  if (embs.size() != from_ages.size()) throw std::invalid_argument("fam: one enrollment age per embedding required");
  if (embs.empty()) throw std::invalid_argument("fam: age_rows over an empty batch");
  for (float a : from_ages) check_age(cfg, a, "enrollment age");
  check_age(cfg, to_age, "target age");
  std::vector<float> t(embs.size(), to_age);
  return forward(params, cfg, augment_rows(cfg, embs, from_ages, t));
}

double pair_loss(const num::ParamSet& params, const FamConfig& cfg,
                 const std::vector<std::pair<io::FaceEmbedding, io::FaceEmbedding>>& genuine) {
  if (genuine.empty()) throw std::invalid_argument("fam: loss over an empty pair set");

  std::vector<const io::FaceEmbedding*> src;
  std::vector<float> e, t;
  for (const auto& p : genuine) {
    src.push_back(&p.first);
    e.push_back(p.first.age);
    t.push_back(p.second.age);
  }
  num::Tensor y = forward(params, cfg, augment_rows(cfg, src, e, t));

  double total = 0.0;
  for (size_t i = 0; i < genuine.size(); ++i) {
    const auto& target = genuine[i].second.vec;
    if (static_cast<int>(target.size()) != cfg.d) throw std::invalid_argument("fam: target dimension mismatch");
    for (int j = 0; j < cfg.d; ++j) {
      double diff = static_cast<double>(y.at(static_cast<int>(i), j)) - target[static_cast<size_t>(j)];
      total += diff * diff;
    }
  }
  return total / static_cast<double>(genuine.size());
}

TrainResult train(const io::Manifest& manifest, const std::vector<io::FaceEmbedding>& embeddings, io::Split split,
                  const TrainConfig& cfg) {
  if (embeddings.size() != manifest.records.size())
    throw std::invalid_argument("fam: embeddings count " + std::to_string(embeddings.size()) +
                                " does not match manifest records " + std::to_string(manifest.records.size()));
  for (size_t i = 0; i < embeddings.size(); ++i)
    if (embeddings[i].subject_id != manifest.records[i].subject_id)
      throw std::invalid_argument("fam: embedding " + std::to_string(i) + " subject mismatch");
  if (cfg.iterations < 0) throw std::invalid_argument("fam: negative iteration count");
  if (cfg.batch < 1) throw std::invalid_argument("fam: batch must be positive");

  TrainResult result;
  result.params = init_params(cfg.fam, num::derive_seed(cfg.seed, "fam-init"), cfg.init_noise);
  if (cfg.iterations == 0) return result;

  num::Rng pair_rng(num::derive_seed(cfg.seed, "fam-pairs"));
  num::Adam adam(cfg.adam);
  num::ParamSet last_good = result.params;

  for (int it = 0; it < cfg.iterations; ++it) {
    auto pairs = io::sample_genuine_pairs(manifest, split, pair_rng, cfg.batch);

    num::Tensor aug({cfg.batch, cfg.fam.d + 2});
    num::Tensor dst({cfg.batch, cfg.fam.d});
    for (int r = 0; r < cfg.batch; ++r) {
      const auto& se = embeddings[static_cast<size_t>(pairs[static_cast<size_t>(r)].src)];
      const auto& de = embeddings[static_cast<size_t>(pairs[static_cast<size_t>(r)].dst)];
      if (static_cast<int>(se.vec.size()) != cfg.fam.d || static_cast<int>(de.vec.size()) != cfg.fam.d)
        throw std::invalid_argument("fam: corpus embedding dimension does not match d");
      for (int j = 0; j < cfg.fam.d; ++j) {
        aug.at(r, j) = se.vec[static_cast<size_t>(j)];
        dst.at(r, j) = de.vec[static_cast<size_t>(j)];
      }
      aug.at(r, cfg.fam.d) = se.age / cfg.fam.age_norm;
      aug.at(r, cfg.fam.d + 1) = de.age / cfg.fam.age_norm;
    }

    try {
      num::Tape tape;
      num::BoundParams<num::Tape> bound(tape, result.params);
      auto x = tape.leaf(aug, false, "batch.src");
      auto target = tape.leaf(dst, false, "batch.dst");

      auto h = tape.leaky_relu(tape.affine(x, bound[0], bound[1]), 0.2f);
      auto y = tape.l2_normalize_rows(tape.affine(h, bound[2], bound[3]));
      auto diff = tape.sub(y, target);
      auto loss = tape.scale(tape.reduce_sum(tape.mul(diff, diff)), 1.0f / static_cast<float>(cfg.batch));

      float loss_value = tape.value(loss).data[0];
      if (!std::isfinite(loss_value)) throw std::runtime_error("fam: non-finite loss");

      tape.backward(loss);
      last_good = result.params;
      result.history.push_back(loss_value);

      std::vector<num::Tensor> grads;
      for (size_t p = 0; p < result.params.size(); ++p) grads.push_back(tape.grad(bound[p]));
      adam.step(result.params, grads);
    } catch (const std::runtime_error& err) {
      std::fprintf(stderr, "fam: training diverged at iteration %d (%s), rolling back\n", it, err.what());
      result.params = last_good;
      result.diverged = true;
      break;
    }
  }
  return result;
}

DifferenceProbe feature_difference_probe(const num::ParamSet& params, const FamConfig& cfg,
                                         const io::FaceEmbedding& emb, float enroll_age, float target_age,
                                         const std::function<num::Tensor(const std::vector<float>&)>& decode_fn,
                                         const num::Tensor& face_mask) {
  io::FaceEmbedding recon = age_feature(params, cfg, emb, enroll_age, enroll_age);
  io::FaceEmbedding aged = age_feature(params, cfg, emb, enroll_age, target_age);

  num::Tensor img_recon = decode_fn(recon.vec);
  num::Tensor img_aged = decode_fn(aged.vec);
  if (!img_recon.same_shape(img_aged)) throw std::invalid_argument("fam: decoder output shapes differ");
  if (img_recon.ndim() != 3) throw std::invalid_argument("fam: decoder must produce [h,w,c] images");
  if (face_mask.ndim() != 2 || face_mask.dim(0) != img_recon.dim(0) || face_mask.dim(1) != img_recon.dim(1))
    throw std::invalid_argument("fam: face mask shape does not match decoded image");

  DifferenceProbe probe;
  probe.diff = num::Tensor(img_recon.shape);
  double inside = 0.0, total = 0.0, abs_sum = 0.0;
  int h = img_recon.dim(0), w = img_recon.dim(1), c = img_recon.dim(2);
  for (int r = 0; r < h; ++r)
    for (int col = 0; col < w; ++col)
      for (int ch = 0; ch < c; ++ch) {
        float d = std::abs(img_aged.at(r, col, ch) - img_recon.at(r, col, ch));
        probe.diff.at(r, col, ch) = d;
        abs_sum += d;
        double e = static_cast<double>(d) * d;
        total += e;
        if (face_mask.at(r, col) > 0.0f) inside += e;
      }
  probe.mean_abs = abs_sum / static_cast<double>(probe.diff.numel());
  probe.mask_energy_fraction = total > 0.0 ? inside / total : 0.0;
  return probe;
}

}  // namespace featage::fam
