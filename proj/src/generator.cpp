#include "featage/generator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>

#include "featage/autodiff.hpp"

namespace featage::gen {

namespace {

using num::Tape;
using num::Tensor;

// tape leaves for a whole ParamSet, addressable by name
struct NamedVars {
  const num::ParamSet* ps = nullptr;
  std::vector<Tape::Var> vars;

  Tape::Var operator[](const std::string& name) const {
    int i = ps->find(name);
    if (i < 0) throw std::invalid_argument("generator: missing parameter '" + name + "'");
    return vars[static_cast<size_t>(i)];
  }
};

NamedVars bind(Tape& tape, const num::ParamSet& ps, bool requires_grad) {
  NamedVars nv;
  nv.ps = &ps;
  nv.vars.reserve(ps.size());
  for (size_t i = 0; i < ps.size(); ++i) nv.vars.push_back(tape.leaf(ps.tensors[i], requires_grad, ps.names[i]));
  return nv;
}

Tensor uniform_tensor(std::vector<int> shape, float bound, num::Rng& rng) {
  Tensor t(std::move(shape));
  for (float& v : t.data) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

void add_conv(num::ParamSet& ps, const std::string& name, int kh, int kw, int ci, int co, num::Rng& rng) {
  float bound = 1.0f / std::sqrt(static_cast<float>(kh * kw * ci));
  ps.add(name + ".k", uniform_tensor({kh, kw, ci, co}, bound, rng));
}

void add_tconv(num::ParamSet& ps, const std::string& name, int kh, int kw, int co, int ci, int stride,
               num::Rng& rng) {
  float bound = 1.0f / std::sqrt(static_cast<float>(kh * kw * ci) / static_cast<float>(stride * stride));
  ps.add(name + ".k", uniform_tensor({kh, kw, co, ci}, bound, rng));
}

void add_fc(num::ParamSet& ps, const std::string& name, int in, int out, num::Rng& rng) {
  float bound = 1.0f / std::sqrt(static_cast<float>(in));
  ps.add(name + ".w", uniform_tensor({in, out}, bound, rng));
  ps.add(name + ".b", Tensor({out}));
}

void add_inorm(num::ParamSet& ps, const std::string& name, int c) {
  ps.add(name + ".g", Tensor({c}, 1.0f));
  ps.add(name + ".s", Tensor({c}));
}

void check_images(const Tensor& images, int size) {
  if (images.ndim() != 4 || images.dim(1) != size || images.dim(2) != size || images.dim(3) != 3)
    throw std::invalid_argument("generator: expected [n," + std::to_string(size) + "," + std::to_string(size) +
                                ",3] images, got " + images.shape_str());
}

Tensor pack_images(const std::vector<const io::ImageSample*>& batch, int size) {
  Tensor out({static_cast<int>(batch.size()), size, size, 3});
  size_t stride = static_cast<size_t>(size) * size * 3;
  for (size_t i = 0; i < batch.size(); ++i) {
    const Tensor& px = batch[i]->pixels;
    if (px.ndim() != 3 || px.dim(0) != size || px.dim(1) != size || px.dim(2) != 3)
      throw std::invalid_argument("generator: sample " + std::to_string(i) + " has shape " + px.shape_str());
    std::copy(px.data.begin(), px.data.end(), out.data.begin() + static_cast<ptrdiff_t>(i * stride));
  }
  return out;
}

// ID encoder: three stride-2 convs with bias and leaky relu, then a fully
// connected projection normalized onto the unit sphere.
Tape::Var idenc_forward(Tape& tape, const NamedVars& p, Tape::Var images, int d) {
  auto h1 = tape.leaky_relu(tape.bias_add_channels(tape.conv2d(images, p["idenc.c1.k"], 2), p["idenc.c1.b"]), 0.2f);
  auto h2 = tape.leaky_relu(tape.bias_add_channels(tape.conv2d(h1, p["idenc.c2.k"], 2), p["idenc.c2.b"]), 0.2f);
  auto h3 = tape.leaky_relu(tape.bias_add_channels(tape.conv2d(h2, p["idenc.c3.k"], 2), p["idenc.c3.b"]), 0.2f);
  int n = tape.value(h3).dim(0);
  auto flat = tape.reshape(h3, {n, 4 * 4 * 64});
  auto emb = tape.affine(flat, p["idenc.fc.w"], p["idenc.fc.b"]);
  (void)d;
  return tape.l2_normalize_rows(emb);
}

// style encoder: four stride-2 convs with instance norm and leaky relu
Tape::Var style_forward(Tape& tape, const NamedVars& p, Tape::Var images, int k) {
  auto c1 = tape.leaky_relu(tape.instance_norm(tape.conv2d(images, p["gen.se.c1.k"], 2), p["gen.se.in1.g"],
                                               p["gen.se.in1.s"]),
                            0.2f);
  auto c2 = tape.leaky_relu(tape.instance_norm(tape.conv2d(c1, p["gen.se.c2.k"], 2), p["gen.se.in2.g"],
                                               p["gen.se.in2.s"]),
                            0.2f);
  auto c3 = tape.leaky_relu(tape.instance_norm(tape.conv2d(c2, p["gen.se.c3.k"], 2), p["gen.se.in3.g"],
                                               p["gen.se.in3.s"]),
                            0.2f);
  auto c4 = tape.leaky_relu(tape.instance_norm(tape.conv2d(c3, p["gen.se.c4.k"], 2), p["gen.se.in4.g"],
                                               p["gen.se.in4.s"]),
                            0.2f);
  int n = tape.value(c4).dim(0);
  auto flat = tape.reshape(c4, {n, 2 * 2 * 64});
  (void)k;
  return tape.affine(flat, p["gen.se.fc.w"], p["gen.se.fc.b"]);
}

// decoder: fully connected expansion, four stride-2 transpose convs, sigmoid
Tape::Var decoder_forward(Tape& tape, const NamedVars& p, Tape::Var zin) {
  int n = tape.value(zin).dim(0);
  auto seed = tape.reshape(tape.affine(zin, p["gen.dec.fc.w"], p["gen.dec.fc.b"]), {n, 2, 2, 128});
  auto t1 = tape.leaky_relu(tape.instance_norm(tape.conv2d_transpose(seed, p["gen.dec.t1.k"], 2), p["gen.dec.in1.g"],
                                               p["gen.dec.in1.s"]),
                            0.2f);
  auto t2 = tape.leaky_relu(tape.instance_norm(tape.conv2d_transpose(t1, p["gen.dec.t2.k"], 2), p["gen.dec.in2.g"],
                                               p["gen.dec.in2.s"]),
                            0.2f);
  auto t3 = tape.leaky_relu(tape.instance_norm(tape.conv2d_transpose(t2, p["gen.dec.t3.k"], 2), p["gen.dec.in3.g"],
                                               p["gen.dec.in3.s"]),
                            0.2f);
  auto t4 = tape.bias_add_channels(tape.conv2d_transpose(t3, p["gen.dec.t4.k"], 2), p["gen.dec.t4.b"]);
  return tape.sigmoid(t4);
}

struct LossVars {
  Tape::Var id, pix, tv, total;
};

// Eq-style objective: reconstruction must keep the frozen encoder's embedding
// (squared distance), stay close pixelwise (mean absolute error), and stay
// smooth (total variation); the total is the weighted sum.
LossVars loss_graph(Tape& tape, const NamedVars& gp, const NamedVars& ip, Tape::Var images, const GenConfig& cfg,
                    const LossWeights& w) {
  int n = tape.value(images).dim(0);
  auto emb_x = idenc_forward(tape, ip, images, cfg.d);

  Tape::Var zin = emb_x;
  if (cfg.k > 0) zin = tape.concat_cols(style_forward(tape, gp, images, cfg.k), emb_x);
  auto recon = decoder_forward(tape, gp, zin);
  auto emb_r = idenc_forward(tape, ip, recon, cfg.d);

  auto ediff = tape.sub(emb_r, emb_x);
  auto l_id = tape.scale(tape.reduce_sum(tape.mul(ediff, ediff)), 1.0f / static_cast<float>(n));

  auto pdiff = tape.abs(tape.sub(recon, images));
  auto l_pix = tape.scale(tape.reduce_sum(pdiff), 1.0f / static_cast<float>(tape.value(images).numel()));

  auto l_tv = tape.tv_loss(recon);

  LossVars lv;
  lv.id = l_id;
  lv.pix = l_pix;
  lv.tv = l_tv;
  lv.total = tape.add(tape.add(tape.scale(l_id, w.id), tape.scale(l_pix, w.pix)), tape.scale(l_tv, w.tv));
  return lv;
}

constexpr int kChunk = 256;  // fixed inference chunk keeps runs byte-stable

}  // namespace

num::ParamSet init_id_encoder(int d, uint64_t seed) {
  if (d < 1) throw std::invalid_argument("generator: embedding dimension must be positive");
  num::Rng rng(seed);
  num::ParamSet ps;
  add_conv(ps, "idenc.c1", 3, 3, 3, 16, rng);
  ps.add("idenc.c1.b", Tensor({16}));
  add_conv(ps, "idenc.c2", 3, 3, 16, 32, rng);
  ps.add("idenc.c2.b", Tensor({32}));
  add_conv(ps, "idenc.c3", 3, 3, 32, 64, rng);
  ps.add("idenc.c3.b", Tensor({64}));
  add_fc(ps, "idenc.fc", 4 * 4 * 64, d, rng);
  return ps;
}

num::Tensor embed_images(const num::ParamSet& idenc, const num::Tensor& images) {
  check_images(images, 32);
  int n = images.dim(0);
  int d = idenc["idenc.fc.w"].dim(1);
  Tensor out({n, d});
  size_t img_stride = static_cast<size_t>(32) * 32 * 3;

  for (int start = 0; start < n; start += kChunk) {
    int len = std::min(kChunk, n - start);
    Tensor chunk({len, 32, 32, 3});
    std::copy(images.data.begin() + static_cast<ptrdiff_t>(start * img_stride),
              images.data.begin() + static_cast<ptrdiff_t>((start + len) * img_stride), chunk.data.begin());
    Tape tape;
    NamedVars p = bind(tape, idenc, false);
    auto emb = idenc_forward(tape, p, tape.leaf(std::move(chunk), false, "images"), d);
    const Tensor& val = tape.value(emb);
    std::copy(val.data.begin(), val.data.end(), out.data.begin() + static_cast<ptrdiff_t>(start) * d);
  }
  return out;
}

io::FaceEmbedding embed_sample(const num::ParamSet& idenc, const io::ImageSample& sample) {
  Tensor batch = pack_images({&sample}, 32);
  Tensor emb = embed_images(idenc, batch);
  io::FaceEmbedding out;
  out.subject_id = sample.subject_id;
  out.age = sample.age;
  out.vec.assign(emb.data.begin(), emb.data.end());
  out.validate();
  return out;
}

std::vector<io::FaceEmbedding> embed_corpus(const num::ParamSet& idenc, const std::vector<io::ImageSample>& samples) {
  std::vector<const io::ImageSample*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s);
  Tensor batch = pack_images(ptrs, 32);
  Tensor emb = embed_images(idenc, batch);
  int d = emb.dim(1);

  std::vector<io::FaceEmbedding> out(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    out[i].subject_id = samples[i].subject_id;
    out[i].age = samples[i].age;
    out[i].vec.assign(emb.data.begin() + static_cast<ptrdiff_t>(i) * d,
                      emb.data.begin() + static_cast<ptrdiff_t>(i + 1) * d);
    out[i].validate();
  }
  return out;
}

// Random mirroring plus mild sensor noise teach the encoder that left/right
// framing and per-pixel grain are capture nuisances. Faces here are rendered
// pre-registered, so translations are not augmented, and aging and hue stay
// out of the augment set too; the encoder must not be handed age invariance
// for free, and absolute hue is identity.
void augment_encoder_batch(Tensor& images, num::Rng& rng) {
  constexpr float kNoiseSigma = 0.02f;
  int n = images.dim(0), h = images.dim(1), w = images.dim(2), c = images.dim(3);
  for (int i = 0; i < n; ++i) {
    float* img = images.data.data() + static_cast<ptrdiff_t>(i) * h * w * c;
    if (rng.uniform(0.0, 1.0) < 0.5) {
      for (int y = 0; y < h; ++y) {
        float* row = img + static_cast<ptrdiff_t>(y) * w * c;
        for (int x = 0; x < w / 2; ++x)
          for (int ch = 0; ch < c; ++ch) std::swap(row[x * c + ch], row[(w - 1 - x) * c + ch]);
      }
    }
    for (int j = 0; j < h * w * c; ++j) {
      float v = img[j] + kNoiseSigma * static_cast<float>(rng.normal());
      img[j] = std::min(1.0f, std::max(0.0f, v));
    }
  }
}

EncoderTrainResult train_id_encoder(const io::Manifest& manifest, const std::vector<io::ImageSample>& samples,
                                    io::Split split, const EncoderTrainConfig& cfg) {
  if (samples.size() != manifest.records.size())
    throw std::invalid_argument("generator: sample count does not match manifest");
  auto by_subject = manifest.by_subject(split);
  if (by_subject.size() < 50)
    throw std::invalid_argument("generator: encoder training needs at least 50 subjects, got " +
                                std::to_string(by_subject.size()));

  std::map<std::string, int> label_of;
  for (const auto& [subject, idxs] : by_subject) label_of.emplace(subject, static_cast<int>(label_of.size()));
  int n_classes = static_cast<int>(label_of.size());

  // Matcher training data behaves like vendor snapshots: each identity is
  // seen inside a short age window, never across its whole life. Longitudinal
  // coverage is the aging module's job, so the encoder must not be able to
  // absorb long-lapse invariance from the corpus.
  std::vector<int> pool;
  num::Rng window_rng(num::derive_seed(cfg.seed, "idenc-window"));
  for (const auto& [subject, idxs] : by_subject) {
    std::vector<int> sorted_idx = idxs;
    std::sort(sorted_idx.begin(), sorted_idx.end(), [&](int a, int b) {
      return manifest.records[static_cast<size_t>(a)].age < manifest.records[static_cast<size_t>(b)].age;
    });
    int window = std::min<int>(3, static_cast<int>(sorted_idx.size()));
    int start = window_rng.uniform_int(static_cast<int>(sorted_idx.size()) - window + 1);
    for (int j = start; j < start + window; ++j) pool.push_back(sorted_idx[static_cast<size_t>(j)]);
  }

  EncoderTrainResult result;
  result.params = init_id_encoder(cfg.d, num::derive_seed(cfg.seed, "idenc-init"));
  {
    num::Rng head_rng(num::derive_seed(cfg.seed, "idenc-head"));
    add_fc(result.params, "idenc.head", cfg.d, n_classes, head_rng);
  }
  if (cfg.iterations == 0) return result;

  num::Rng batch_rng(num::derive_seed(cfg.seed, "idenc-batches"));
  num::Rng augment_rng(num::derive_seed(cfg.seed, "idenc-augment"));
  num::Adam adam(cfg.adam);
  num::ParamSet last_good = result.params;

  for (int it = 0; it < cfg.iterations; ++it) {
    std::vector<const io::ImageSample*> batch;
    std::vector<int> labels;
    for (int b = 0; b < cfg.batch; ++b) {
      int idx = pool[static_cast<size_t>(batch_rng.uniform_int(static_cast<int>(pool.size())))];
      batch.push_back(&samples[static_cast<size_t>(idx)]);
      labels.push_back(label_of.at(manifest.records[static_cast<size_t>(idx)].subject_id));
    }

    try {
      Tape tape;
      NamedVars p = bind(tape, result.params, true);
      Tensor packed = pack_images(batch, 32);
      augment_encoder_batch(packed, augment_rng);
      auto images = tape.leaf(std::move(packed), false, "batch");
      auto emb = idenc_forward(tape, p, images, cfg.d);
      auto logits = tape.scale(tape.affine(emb, p["idenc.head.w"], p["idenc.head.b"]), cfg.logit_scale);
      auto loss = tape.softmax_cross_entropy(logits, labels);

      float loss_value = tape.value(loss).data[0];
      if (!std::isfinite(loss_value)) throw std::runtime_error("generator: non-finite encoder loss");

      tape.backward(loss);
      last_good = result.params;
      result.history.push_back(loss_value);

      std::vector<Tensor> grads;
      for (size_t q = 0; q < result.params.size(); ++q) grads.push_back(tape.grad(p.vars[q]));
      adam.step(result.params, grads);
    } catch (const std::runtime_error& err) {
      std::fprintf(stderr, "generator: encoder training diverged at iteration %d (%s), rolling back\n", it,
                   err.what());
      result.params = last_good;
      result.diverged = true;
      break;
    }
  }

  // the classification head only exists to shape the embedding
  num::ParamSet trimmed;
  for (size_t i = 0; i < result.params.size(); ++i)
    if (result.params.names[i].rfind("idenc.head.", 0) != 0)
      trimmed.add(result.params.names[i], result.params.tensors[i]);
  result.params = std::move(trimmed);
  return result;
}

num::ParamSet init_generator(const GenConfig& cfg, uint64_t seed) {
  if (cfg.k < 0) throw std::invalid_argument("generator: style width must be nonnegative");
  if (cfg.d < 1) throw std::invalid_argument("generator: embedding dimension must be positive");
  if (cfg.image != 32) throw std::invalid_argument("generator: the conv plan is fixed to 32x32 images");

  num::Rng rng(seed);
  num::ParamSet ps;
  if (cfg.k > 0) {
    add_conv(ps, "gen.se.c1", 3, 3, 3, 16, rng);
    add_inorm(ps, "gen.se.in1", 16);
    add_conv(ps, "gen.se.c2", 3, 3, 16, 32, rng);
    add_inorm(ps, "gen.se.in2", 32);
    add_conv(ps, "gen.se.c3", 3, 3, 32, 64, rng);
    add_inorm(ps, "gen.se.in3", 64);
    add_conv(ps, "gen.se.c4", 3, 3, 64, 64, rng);
    add_inorm(ps, "gen.se.in4", 64);
    add_fc(ps, "gen.se.fc", 2 * 2 * 64, cfg.k, rng);
  }
  add_fc(ps, "gen.dec.fc", cfg.k + cfg.d, 2 * 2 * 128, rng);
  add_tconv(ps, "gen.dec.t1", 4, 4, 64, 128, 2, rng);
  add_inorm(ps, "gen.dec.in1", 64);
  add_tconv(ps, "gen.dec.t2", 4, 4, 32, 64, 2, rng);
  add_inorm(ps, "gen.dec.in2", 32);
  add_tconv(ps, "gen.dec.t3", 4, 4, 16, 32, 2, rng);
  add_inorm(ps, "gen.dec.in3", 16);
  add_tconv(ps, "gen.dec.t4", 4, 4, 3, 16, 2, rng);
  ps.add("gen.dec.t4.b", Tensor({3}));
  return ps;
}

num::Tensor encode_style_batch(const num::ParamSet& gen_params, const GenConfig& cfg, const num::Tensor& images) {
  check_images(images, cfg.image);
  int n = images.dim(0);
  if (cfg.k == 0) return Tensor({n, 0});

  Tensor out({n, cfg.k});
  size_t img_stride = static_cast<size_t>(32) * 32 * 3;
  for (int start = 0; start < n; start += kChunk) {
    int len = std::min(kChunk, n - start);
    Tensor chunk({len, 32, 32, 3});
    std::copy(images.data.begin() + static_cast<ptrdiff_t>(start * img_stride),
              images.data.begin() + static_cast<ptrdiff_t>((start + len) * img_stride), chunk.data.begin());
    Tape tape;
    NamedVars p = bind(tape, gen_params, false);
    auto style = style_forward(tape, p, tape.leaf(std::move(chunk), false, "images"), cfg.k);
    const Tensor& val = tape.value(style);
    std::copy(val.data.begin(), val.data.end(), out.data.begin() + static_cast<ptrdiff_t>(start) * cfg.k);
  }
  return out;
}

std::vector<float> encode_style(const num::ParamSet& gen_params, const GenConfig& cfg, const io::ImageSample& img) {
  if (cfg.k == 0) return {};
  Tensor batch = pack_images({&img}, cfg.image);
  Tensor style = encode_style_batch(gen_params, cfg, batch);
  return {style.data.begin(), style.data.end()};
}

num::Tensor decode_batch(const num::ParamSet& gen_params, const GenConfig& cfg, const num::Tensor& style,
                         const num::Tensor& id_rows) {
  if (id_rows.ndim() != 2 || id_rows.dim(1) != cfg.d)
    throw std::invalid_argument("generator: expected [n," + std::to_string(cfg.d) + "] id rows, got " +
                                id_rows.shape_str());
  int n = id_rows.dim(0);
  if (style.ndim() != 2 || style.dim(0) != n || style.dim(1) != cfg.k)
    throw std::invalid_argument("generator: expected [n," + std::to_string(cfg.k) + "] style rows, got " +
                                style.shape_str());

  Tensor out({n, 32, 32, 3});
  size_t img_stride = static_cast<size_t>(32) * 32 * 3;
  for (int start = 0; start < n; start += kChunk) {
    int len = std::min(kChunk, n - start);
    Tensor zin({len, cfg.k + cfg.d});
    for (int r = 0; r < len; ++r) {
      for (int j = 0; j < cfg.k; ++j) zin.at(r, j) = style.at(start + r, j);
      for (int j = 0; j < cfg.d; ++j) zin.at(r, cfg.k + j) = id_rows.at(start + r, j);
    }
    Tape tape;
    NamedVars p = bind(tape, gen_params, false);
    auto recon = decoder_forward(tape, p, tape.leaf(std::move(zin), false, "zin"));
    const Tensor& val = tape.value(recon);
    std::copy(val.data.begin(), val.data.end(), out.data.begin() + static_cast<ptrdiff_t>(start) * img_stride);
  }
  return out;
}

num::Tensor decode_image(const num::ParamSet& gen_params, const GenConfig& cfg, const std::vector<float>& style,
                         const std::vector<float>& id_vec) {
  if (static_cast<int>(style.size()) != cfg.k)
    throw std::invalid_argument("generator: style size " + std::to_string(style.size()) + " does not match k=" +
                                std::to_string(cfg.k));
  if (static_cast<int>(id_vec.size()) != cfg.d)
    throw std::invalid_argument("generator: id size " + std::to_string(id_vec.size()) + " does not match d=" +
                                std::to_string(cfg.d));
  Tensor st({1, cfg.k});
  std::copy(style.begin(), style.end(), st.data.begin());
  Tensor id({1, cfg.d});
  std::copy(id_vec.begin(), id_vec.end(), id.data.begin());
  Tensor batch = decode_batch(gen_params, cfg, st, id);
  Tensor img({32, 32, 3});
  img.data = std::move(batch.data);
  return img;
}

LossBreakdown generator_loss(const num::ParamSet& gen_params, const GenConfig& cfg, const num::ParamSet& idenc,
                             const num::Tensor& images, const LossWeights& weights) {
  check_images(images, cfg.image);
  if (images.dim(0) < 1) throw std::invalid_argument("generator: loss over an empty batch");

  Tape tape;
  NamedVars gp = bind(tape, gen_params, false);
  NamedVars ip = bind(tape, idenc, false);
  auto lv = loss_graph(tape, gp, ip, tape.leaf(images, false, "batch"), cfg, weights);

  LossBreakdown out;
  out.id = tape.value(lv.id).data[0];
  out.pix = tape.value(lv.pix).data[0];
  out.tv = tape.value(lv.tv).data[0];
  out.total = tape.value(lv.total).data[0];
  return out;
}

GenTrainResult train_generator(const io::Manifest& manifest, const std::vector<io::ImageSample>& samples,
                               io::Split split, const num::ParamSet& idenc, const GenTrainConfig& cfg) {
  if (samples.size() != manifest.records.size())
    throw std::invalid_argument("generator: sample count does not match manifest");
  std::vector<int> pool = manifest.indices_for_split(split);
  if (pool.empty()) throw std::invalid_argument("generator: split has no samples");
  if (cfg.batch < 1) throw std::invalid_argument("generator: batch must be positive");

  GenTrainResult result;
  result.params = init_generator(cfg.gen, num::derive_seed(cfg.seed, "gen-init"));
  if (cfg.iterations == 0) return result;

  num::Rng batch_rng(num::derive_seed(cfg.seed, "gen-batches"));
  num::Adam adam(cfg.adam);
  num::ParamSet last_good = result.params;

  for (int it = 0; it < cfg.iterations; ++it) {
    std::vector<const io::ImageSample*> batch;
    for (int b = 0; b < cfg.batch; ++b)
      batch.push_back(&samples[static_cast<size_t>(pool[static_cast<size_t>(
          batch_rng.uniform_int(static_cast<int>(pool.size())))])]);

    try {
      Tape tape;
      NamedVars gp = bind(tape, result.params, true);
      NamedVars ip = bind(tape, idenc, false);
      auto lv = loss_graph(tape, gp, ip, tape.leaf(pack_images(batch, cfg.gen.image), false, "batch"), cfg.gen,
                           cfg.weights);

      float loss_value = tape.value(lv.total).data[0];
      if (!std::isfinite(loss_value)) throw std::runtime_error("generator: non-finite loss");

      tape.backward(lv.total);
      last_good = result.params;
      result.history.push_back(loss_value);

      std::vector<Tensor> grads;
      for (size_t q = 0; q < result.params.size(); ++q) grads.push_back(tape.grad(gp.vars[q]));
      adam.step(result.params, grads);
    } catch (const std::runtime_error& err) {
      std::fprintf(stderr, "generator: training diverged at iteration %d (%s), rolling back\n", it, err.what());
      result.params = last_good;
      result.diverged = true;
      break;
    }
  }
  return result;
}

io::ImageSample synthesize_aged(const num::ParamSet& fam_params, const fam::FamConfig& fam_cfg,
                                const num::ParamSet& gen_params, const GenConfig& gen_cfg,
                                const num::ParamSet& idenc, const io::ImageSample& image, float target_age) {
  io::FaceEmbedding emb = embed_sample(idenc, image);
  io::FaceEmbedding aged = fam::age_feature(fam_params, fam_cfg, emb, image.age, target_age);
  std::vector<float> style = encode_style(gen_params, gen_cfg, image);

  io::ImageSample out;
  out.subject_id = image.subject_id;
  out.age = target_age;
  out.style_id = image.style_id;
  out.pixels = decode_image(gen_params, gen_cfg, style, aged.vec);
  out.validate();
  return out;
}

}  // namespace featage::gen
