// Pipeline front end: every stage is a subcommand over explicit file paths.
// Run configuration resolves preset -> config file -> flags, and every
// artifact gets a sidecar with the resolved config and its hash.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "featage/checkpoint.hpp"
#include "featage/dataio.hpp"
#include "featage/eval.hpp"
#include "featage/fam.hpp"
#include "featage/generator.hpp"
#include "featage/world.hpp"

namespace {

using namespace featage;
using nlohmann::json;

// ---------- logging (FEATAGE_LOG: quiet | info | debug) ----------

int log_level() {
  const char* v = std::getenv("FEATAGE_LOG");
  if (v == nullptr) return 1;
  std::string s(v);
  if (s == "quiet" || s == "0") return 0;
  if (s == "debug" || s == "2") return 2;
  return 1;
}

void info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << "featage: " << msg << "\n";
}

void debug_history(const std::string& stage, const std::vector<float>& history) {
  if (log_level() < 2 || history.empty()) return;
  size_t step = std::max<size_t>(1, history.size() / 10);
  for (size_t i = 0; i < history.size(); i += step)
    std::cerr << "featage: " << stage << " iter " << i << " loss " << history[i] << "\n";
  std::cerr << "featage: " << stage << " final loss " << history.back() << "\n";
}

// ---------- run configuration ----------

struct RunConfig {
  std::string preset = "desk";
  uint64_t seed = 20;
  int subjects = 500;
  int ages_per_subject = 4;
  int d = 64;
  int k = 32;
  double lr = 0.0002;
  double beta1 = 0.5;
  double beta2 = 0.99;
  int batch = 64;
  double lambda_id = 1.0;
  double lambda_pix = 10.0;
  double lambda_tv = 1e-4;
  double far = 0.01;
  double min_lapse = 5.0;
  int encoder_iterations = 6000;
  int fam_iterations = 20000;
  int generator_iterations = 2500;
};

RunConfig preset_defaults(const std::string& name) {
  RunConfig cfg;
  cfg.preset = name;
  if (name == "desk") return cfg;
  if (name == "paper") {
    cfg.subjects = 2000;
    cfg.encoder_iterations = 12000;
    cfg.fam_iterations = 200000;
    cfg.generator_iterations = 10000;
    return cfg;
  }
  throw std::invalid_argument("unknown preset '" + name + "' (expected desk or paper)");
}

json config_to_json(const RunConfig& cfg) {
  json j;
  j["preset"] = cfg.preset;
  j["seed"] = cfg.seed;
  j["subjects"] = cfg.subjects;
  j["ages_per_subject"] = cfg.ages_per_subject;
  j["d"] = cfg.d;
  j["k"] = cfg.k;
  j["lr"] = cfg.lr;
  j["beta1"] = cfg.beta1;
  j["beta2"] = cfg.beta2;
  j["batch"] = cfg.batch;
  j["lambda_id"] = cfg.lambda_id;
  j["lambda_pix"] = cfg.lambda_pix;
  j["lambda_tv"] = cfg.lambda_tv;
  j["far"] = cfg.far;
  j["min_lapse"] = cfg.min_lapse;
  j["encoder_iterations"] = cfg.encoder_iterations;
  j["fam_iterations"] = cfg.fam_iterations;
  j["generator_iterations"] = cfg.generator_iterations;
  return j;
}

void overlay_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read config file " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("bad json in " + path + ": " + e.what());
  }
  for (const auto& [key, value] : j.items()) {
    if (key == "preset") cfg.preset = value.get<std::string>();
    else if (key == "seed") cfg.seed = value.get<uint64_t>();
    else if (key == "subjects") cfg.subjects = value.get<int>();
    else if (key == "ages_per_subject") cfg.ages_per_subject = value.get<int>();
    else if (key == "d") cfg.d = value.get<int>();
    else if (key == "k") cfg.k = value.get<int>();
    else if (key == "lr") cfg.lr = value.get<double>();
    else if (key == "beta1") cfg.beta1 = value.get<double>();
    else if (key == "beta2") cfg.beta2 = value.get<double>();
    else if (key == "batch") cfg.batch = value.get<int>();
    else if (key == "lambda_id") cfg.lambda_id = value.get<double>();
    else if (key == "lambda_pix") cfg.lambda_pix = value.get<double>();
    else if (key == "lambda_tv") cfg.lambda_tv = value.get<double>();
    else if (key == "far") cfg.far = value.get<double>();
    else if (key == "min_lapse") cfg.min_lapse = value.get<double>();
    else if (key == "encoder_iterations") cfg.encoder_iterations = value.get<int>();
    else if (key == "fam_iterations") cfg.fam_iterations = value.get<int>();
    else if (key == "generator_iterations") cfg.generator_iterations = value.get<int>();
    else throw std::runtime_error("unknown config key '" + key + "' in " + path);
  }
}

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string config_hash(const RunConfig& cfg) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(config_to_json(cfg).dump())));
  return buf;
}

// Sidecar next to an artifact: the fully resolved config plus its hash.
void write_config_sidecar(const std::string& artifact_path, const std::string& command, const RunConfig& cfg) {
  json j;
  j["command"] = command;
  j["config"] = config_to_json(cfg);
  j["hash"] = config_hash(cfg);
  std::string path = artifact_path + ".config.json";
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << j.dump(2) << "\n";
}

// Binds run-config flags to a subcommand and resolves
// preset -> config file -> explicitly passed flags.
struct ConfigCli {
  RunConfig flags;
  std::string preset_flag;
  std::string config_file;
  std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&, const RunConfig&)>>> appliers;

  template <typename T>
  void bind(CLI::App* cmd, const std::string& name, T RunConfig::* member, const std::string& help) {
    CLI::Option* opt = cmd->add_option(name, flags.*member, help);
    appliers.emplace_back(opt, [member](RunConfig& dst, const RunConfig& src) { dst.*member = src.*member; });
  }

  void attach(CLI::App* cmd) {
    cmd->add_option("--preset", preset_flag, "named defaults: desk or paper");
    cmd->add_option("--config", config_file, "json run-config file; explicit flags win");
    bind(cmd, "--seed", &RunConfig::seed, "master rng seed");
    bind(cmd, "--subjects", &RunConfig::subjects, "synthetic corpus subjects");
    bind(cmd, "--ages", &RunConfig::ages_per_subject, "images per subject");
    bind(cmd, "--dim", &RunConfig::d, "embedding dimension");
    bind(cmd, "--k", &RunConfig::k, "style vector width");
    bind(cmd, "--lr", &RunConfig::lr, "adam learning rate");
    bind(cmd, "--beta1", &RunConfig::beta1, "adam beta1");
    bind(cmd, "--beta2", &RunConfig::beta2, "adam beta2");
    bind(cmd, "--batch", &RunConfig::batch, "training batch size");
    bind(cmd, "--lambda-id", &RunConfig::lambda_id, "identity loss weight");
    bind(cmd, "--lambda-pix", &RunConfig::lambda_pix, "pixel loss weight");
    bind(cmd, "--lambda-tv", &RunConfig::lambda_tv, "total variation weight");
    bind(cmd, "--far", &RunConfig::far, "open-set false accept rate target");
    bind(cmd, "--min-lapse", &RunConfig::min_lapse, "minimum probe lapse in years");
    bind(cmd, "--encoder-iterations", &RunConfig::encoder_iterations, "id encoder training iterations");
    bind(cmd, "--fam-iterations", &RunConfig::fam_iterations, "feature aging training iterations");
    bind(cmd, "--generator-iterations", &RunConfig::generator_iterations, "generator training iterations");
  }

  RunConfig resolve() const {
    RunConfig cfg = preset_defaults(preset_flag.empty() ? "desk" : preset_flag);
    if (!config_file.empty()) overlay_config_file(cfg, config_file);
    for (const auto& [opt, apply] : appliers)
      if (opt->count() > 0) apply(cfg, flags);
    return cfg;
  }
};

// ---------- shared stage plumbing ----------

struct LoadedCorpus {
  io::Manifest manifest;
  std::vector<io::ImageSample> samples;
};

LoadedCorpus load_corpus(const std::string& dir) {
  LoadedCorpus c;
  c.manifest = io::load_manifest(dir + "/manifest.csv");
  c.samples.reserve(c.manifest.records.size());
  for (const auto& rec : c.manifest.records) c.samples.push_back(io::load_image_sample(dir, rec));
  return c;
}

void ensure_parent_dir(const std::string& path) {
  std::filesystem::path p(path);
  if (p.has_parent_path() && !p.parent_path().empty()) std::filesystem::create_directories(p.parent_path());
}

num::AdamConfig adam_from(const RunConfig& cfg) {
  num::AdamConfig a;
  a.lr = static_cast<float>(cfg.lr);
  a.beta1 = static_cast<float>(cfg.beta1);
  a.beta2 = static_cast<float>(cfg.beta2);
  return a;
}

num::ParamSet load_idenc(const std::string& path, int* d_out) {
  auto [meta, params] = io::load_checkpoint(path, "idenc");
  *d_out = static_cast<int>(meta.hyper_value("d"));
  return params;
}

fam::FamConfig fam_config_from(const io::CheckpointMeta& meta) {
  fam::FamConfig fc;
  fc.d = static_cast<int>(meta.hyper_value("d"));
  fc.age_norm = static_cast<float>(meta.hyper_value("age_norm"));
  fc.min_age = static_cast<float>(meta.hyper_value("min_age"));
  fc.max_age = static_cast<float>(meta.hyper_value("max_age"));
  return fc;
}

gen::GenConfig gen_config_from(const io::CheckpointMeta& meta) {
  gen::GenConfig gc;
  gc.d = static_cast<int>(meta.hyper_value("d"));
  gc.k = static_cast<int>(meta.hyper_value("k"));
  gc.image = static_cast<int>(meta.hyper_value("image"));
  return gc;
}

// ---------- stages ----------

void run_gen_synthetic(const RunConfig& cfg, const std::string& out_dir) {
  world::Corpus corpus = world::generate_corpus(cfg.subjects, cfg.ages_per_subject, cfg.seed);
  world::write_corpus(out_dir, corpus);
  write_config_sidecar(out_dir + "/manifest.csv", "gen-synthetic", cfg);
  info("wrote " + std::to_string(corpus.manifest.records.size()) + " images under " + out_dir);
}

void run_train_encoder(const RunConfig& cfg, const std::string& corpus_dir, const std::string& out) {
  LoadedCorpus corpus = load_corpus(corpus_dir);
  gen::EncoderTrainConfig ec;
  ec.d = cfg.d;
  ec.iterations = cfg.encoder_iterations;
  ec.batch = cfg.batch;
  ec.adam = adam_from(cfg);
  ec.seed = cfg.seed;
  gen::EncoderTrainResult result = gen::train_id_encoder(corpus.manifest, corpus.samples, io::Split::train, ec);
  debug_history("train-encoder", result.history);
  if (result.diverged) throw std::runtime_error("train-encoder: training diverged");

  io::CheckpointMeta meta;
  meta.kind = "idenc";
  meta.config_hash = config_hash(cfg);
  meta.set_hyper("d", cfg.d);
  ensure_parent_dir(out);
  io::save_checkpoint(out, meta, result.params);
  write_config_sidecar(out, "train-encoder", cfg);
  info("wrote id encoder checkpoint " + out);
}

void run_train_fam(const RunConfig& cfg, const std::string& corpus_dir, const std::string& encoder_path,
                   const std::string& out) {
  LoadedCorpus corpus = load_corpus(corpus_dir);
  int d = 0;
  num::ParamSet idenc = load_idenc(encoder_path, &d);
  std::vector<io::FaceEmbedding> embeddings = gen::embed_corpus(idenc, corpus.samples);

  fam::TrainConfig tc;
  tc.fam.d = d;
  tc.iterations = cfg.fam_iterations;
  tc.batch = cfg.batch;
  tc.adam = adam_from(cfg);
  tc.seed = cfg.seed;
  fam::TrainResult result = fam::train(corpus.manifest, embeddings, io::Split::train, tc);
  debug_history("train-fam", result.history);
  if (result.diverged) throw std::runtime_error("train-fam: training diverged");

  io::CheckpointMeta meta;
  meta.kind = "fam";
  meta.config_hash = config_hash(cfg);
  meta.set_hyper("d", tc.fam.d);
  meta.set_hyper("age_norm", tc.fam.age_norm);
  meta.set_hyper("min_age", tc.fam.min_age);
  meta.set_hyper("max_age", tc.fam.max_age);
  ensure_parent_dir(out);
  io::save_checkpoint(out, meta, result.params);
  write_config_sidecar(out, "train-fam", cfg);
  info("wrote feature aging checkpoint " + out);
}

void run_train_generator(const RunConfig& cfg, const std::string& corpus_dir, const std::string& encoder_path,
                         const std::string& out) {
  LoadedCorpus corpus = load_corpus(corpus_dir);
  int d = 0;
  num::ParamSet idenc = load_idenc(encoder_path, &d);

  gen::GenTrainConfig gc;
  gc.gen.d = d;
  gc.gen.k = cfg.k;
  gc.weights.id = static_cast<float>(cfg.lambda_id);
  gc.weights.pix = static_cast<float>(cfg.lambda_pix);
  gc.weights.tv = static_cast<float>(cfg.lambda_tv);
  gc.iterations = cfg.generator_iterations;
  gc.batch = cfg.batch;
  gc.adam = adam_from(cfg);
  gc.seed = cfg.seed;
  gen::GenTrainResult result = gen::train_generator(corpus.manifest, corpus.samples, io::Split::train, idenc, gc);
  debug_history("train-generator", result.history);
  if (result.diverged) throw std::runtime_error("train-generator: training diverged");

  io::CheckpointMeta meta;
  meta.kind = "gen";
  meta.config_hash = config_hash(cfg);
  meta.set_hyper("d", gc.gen.d);
  meta.set_hyper("k", gc.gen.k);
  meta.set_hyper("image", gc.gen.image);
  ensure_parent_dir(out);
  io::save_checkpoint(out, meta, result.params);
  write_config_sidecar(out, "train-generator", cfg);
  info("wrote generator checkpoint " + out);
}

void run_age(const RunConfig& cfg, const std::string& in, std::optional<double> from, double to,
             const std::string& fam_path, const std::string& out) {
  std::vector<io::FaceEmbedding> embs = io::load_embeddings(in);
  if (embs.empty()) throw std::runtime_error("age: empty embedding container " + in);
  auto [meta, params] = io::load_checkpoint(fam_path, "fam");
  fam::FamConfig fc = fam_config_from(meta);

  std::vector<io::FaceEmbedding> aged;
  aged.reserve(embs.size());
  for (const auto& e : embs) {
    float enroll = from.has_value() ? static_cast<float>(*from) : e.age;
    aged.push_back(fam::age_feature(params, fc, e, enroll, static_cast<float>(to)));
  }
  ensure_parent_dir(out);
  io::save_embeddings(out, aged, fc.d);
  write_config_sidecar(out, "age", cfg);
  info("aged " + std::to_string(aged.size()) + " embeddings to " + out);
}

void run_synthesize(const RunConfig& cfg, const std::string& image_path, double age,
                    const std::vector<double>& targets, const std::string& encoder_path,
                    const std::string& fam_path, const std::string& gen_path, const std::string& out_dir) {
  if (targets.empty()) throw std::runtime_error("synthesize: no target ages given");
  io::ImageSample sample;
  sample.subject_id = "probe";
  sample.style_id = "probe";
  sample.age = static_cast<float>(age);
  sample.pixels = io::load_ppm(image_path);
  sample.validate();

  int d = 0;
  num::ParamSet idenc = load_idenc(encoder_path, &d);
  auto [fam_meta, fam_params] = io::load_checkpoint(fam_path, "fam");
  fam::FamConfig fc = fam_config_from(fam_meta);
  auto [gen_meta, gen_params] = io::load_checkpoint(gen_path, "gen");
  gen::GenConfig gc = gen_config_from(gen_meta);

  std::filesystem::create_directories(out_dir);
  for (double t : targets) {
    io::ImageSample out = gen::synthesize_aged(fam_params, fc, gen_params, gc, idenc, sample,
                                               static_cast<float>(t));
    char name[48];
    std::snprintf(name, sizeof name, "aged_%g.ppm", t);
    io::save_ppm(out_dir + "/" + name, out.pixels);
  }
  write_config_sidecar(out_dir + "/synthesize", "synthesize", cfg);
  info("wrote " + std::to_string(targets.size()) + " aged renders under " + out_dir);
}

struct ProtocolInputs {
  eval::Gallery gallery;
  eval::ProbeSet headline;  // mated probes at or past the minimum lapse, plus all unmated
  eval::ProbeSet mated_all;  // every mated probe regardless of lapse
};

// Corpus-mode protocol: among test subjects, every third (in sorted order)
// is left out of the gallery and its images probe as unmated; the rest enroll
// their youngest image and probe with the others.
ProtocolInputs build_protocol_from_corpus(const LoadedCorpus& corpus, const num::ParamSet& idenc,
                                          double min_lapse) {
  auto by_subject = corpus.manifest.by_subject(io::Split::test);
  if (by_subject.empty()) throw std::runtime_error("evaluate: corpus has no test subjects");

  std::vector<int> wanted;
  for (const auto& [subject, idxs] : by_subject)
    for (int i : idxs) wanted.push_back(i);
  num::Tensor packed({static_cast<int>(wanted.size()), world::kImageSize, world::kImageSize, 3});
  size_t stride = static_cast<size_t>(world::kImageSize) * world::kImageSize * 3;
  for (size_t i = 0; i < wanted.size(); ++i) {
    const auto& px = corpus.samples[static_cast<size_t>(wanted[i])].pixels;
    std::copy(px.data.begin(), px.data.end(), packed.data.begin() + static_cast<ptrdiff_t>(i * stride));
  }
  num::Tensor embs = gen::embed_images(idenc, packed);

  std::map<int, io::FaceEmbedding> by_record;
  for (size_t i = 0; i < wanted.size(); ++i) {
    const auto& rec = corpus.manifest.records[static_cast<size_t>(wanted[i])];
    io::FaceEmbedding e;
    e.subject_id = rec.subject_id;
    e.age = rec.age;
    e.vec.assign(embs.data.begin() + static_cast<ptrdiff_t>(i) * embs.dim(1),
                 embs.data.begin() + static_cast<ptrdiff_t>(i + 1) * embs.dim(1));
    by_record.emplace(wanted[i], std::move(e));
  }

  ProtocolInputs out;
  size_t subject_idx = 0;
  for (const auto& [subject, idxs] : by_subject) {
    bool unmated = (subject_idx % 2 == 1);
    ++subject_idx;
    if (unmated) {
      for (int i : idxs) out.headline.items.push_back(eval::Probe{by_record.at(i), false});
      continue;
    }
    int youngest = idxs.front();
    for (int i : idxs)
      if (corpus.manifest.records[static_cast<size_t>(i)].age <
          corpus.manifest.records[static_cast<size_t>(youngest)].age)
        youngest = i;
    out.gallery.add(by_record.at(youngest));
    float enroll_age = corpus.manifest.records[static_cast<size_t>(youngest)].age;
    for (int i : idxs) {
      if (i == youngest) continue;
      const io::FaceEmbedding& e = by_record.at(i);
      out.mated_all.items.push_back(eval::Probe{e, true});
      if (e.age - enroll_age >= static_cast<float>(min_lapse))
        out.headline.items.push_back(eval::Probe{e, true});
    }
  }
  return out;
}

// FAEB-mode protocol: probes are mated when their subject is enrolled; the
// lapse filter uses the subject's youngest gallery age.
ProtocolInputs build_protocol_from_files(const std::string& gallery_path, const std::string& probes_path,
                                         double min_lapse) {
  ProtocolInputs out;
  std::map<std::string, float> enroll_age;
  for (auto& e : io::load_embeddings(gallery_path)) {
    auto it = enroll_age.find(e.subject_id);
    if (it == enroll_age.end() || e.age < it->second) enroll_age[e.subject_id] = e.age;
    out.gallery.add(std::move(e));
  }
  for (auto& e : io::load_embeddings(probes_path)) {
    auto it = enroll_age.find(e.subject_id);
    if (it == enroll_age.end()) {
      out.headline.items.push_back(eval::Probe{std::move(e), false});
      continue;
    }
    out.mated_all.items.push_back(eval::Probe{e, true});
    if (std::abs(e.age - it->second) >= static_cast<float>(min_lapse))
      out.headline.items.push_back(eval::Probe{std::move(e), true});
  }
  return out;
}

void save_protocol_embeddings(const std::string& prefix, const ProtocolInputs& inputs, int d,
                              const RunConfig& cfg) {
  std::vector<io::FaceEmbedding> gallery;
  for (const auto& entry : inputs.gallery.entries) gallery.push_back(entry.emb);
  io::save_embeddings(prefix + "_gallery.faeb", gallery, d);
  write_config_sidecar(prefix + "_gallery.faeb", "evaluate", cfg);

  std::vector<io::FaceEmbedding> probes;
  std::set<const io::FaceEmbedding*> seen;
  for (const auto& p : inputs.mated_all.items) probes.push_back(p.emb);
  for (const auto& p : inputs.headline.items)
    if (!p.mated) probes.push_back(p.emb);
  io::save_embeddings(prefix + "_probes.faeb", probes, d);
  write_config_sidecar(prefix + "_probes.faeb", "evaluate", cfg);
}

void run_evaluate(const RunConfig& cfg, const std::string& corpus_dir, const std::string& encoder_path,
                  const std::string& gallery_path, const std::string& probes_path, const std::string& fam_path,
                  const std::string& out_prefix) {
  bool corpus_mode = !corpus_dir.empty();
  if (corpus_mode == (!gallery_path.empty() || !probes_path.empty()))
    throw std::runtime_error("evaluate: pass either --corpus with --encoder, or --gallery with --probes");

  num::ParamSet fam_params;
  fam::FamConfig fam_cfg;
  bool with_fam = !fam_path.empty();
  if (with_fam) {
    auto [meta, params] = io::load_checkpoint(fam_path, "fam");
    fam_params = std::move(params);
    fam_cfg = fam_config_from(meta);
  }
  const num::ParamSet* ager = with_fam ? &fam_params : nullptr;
  const fam::FamConfig* ager_cfg = with_fam ? &fam_cfg : nullptr;

  ProtocolInputs inputs;
  int d = 0;
  if (corpus_mode) {
    if (encoder_path.empty()) throw std::runtime_error("evaluate: corpus mode needs --encoder");
    LoadedCorpus corpus = load_corpus(corpus_dir);
    num::ParamSet idenc = load_idenc(encoder_path, &d);
    inputs = build_protocol_from_corpus(corpus, idenc, cfg.min_lapse);
  } else {
    inputs = build_protocol_from_files(gallery_path, probes_path, cfg.min_lapse);
    d = static_cast<int>(inputs.gallery.entries.front().emb.vec.size());
  }

  eval::ProbeSet headline_mated;
  bool any_unmated = false;
  for (const auto& p : inputs.headline.items) {
    if (p.mated) headline_mated.items.push_back(p);
    else any_unmated = true;
  }
  if (headline_mated.items.empty())
    throw std::runtime_error("evaluate: no mated probes clear the minimum lapse of " +
                             std::to_string(cfg.min_lapse) + " years");

  eval::EvalReport report;
  report.closed = eval::closed_set_search(inputs.gallery, headline_mated, ager, ager_cfg);
  if (any_unmated) {
    report.has_open = true;
    report.open = eval::open_set_search(inputs.gallery, inputs.headline, cfg.far, ager, ager_cfg);
  } else {
    info("no unmated probes; skipping the open-set protocol");
  }
  std::vector<std::pair<float, float>> buckets = {{0.0f, 5.0f}, {5.0f, 10.0f}, {10.0f, 18.0f}};
  report.lapse = eval::lapse_curve(inputs.gallery, inputs.mated_all, buckets, ager, ager_cfg);

  ensure_parent_dir(out_prefix);
  eval::write_report_csv(out_prefix + ".csv", report);
  eval::write_report_json(out_prefix + ".json", report);
  write_config_sidecar(out_prefix + ".csv", "evaluate", cfg);
  if (corpus_mode) save_protocol_embeddings(out_prefix, inputs, d, cfg);
  info("closed-set rank-1 " + std::to_string(report.closed.closed_set_rank1) +
       (report.has_open ? " | open-set rank-1 " + std::to_string(report.open.open_set_rank1) : "") +
       " | report at " + out_prefix + ".csv");
}

void run_ablate(const RunConfig& cfg, const std::vector<int>& k_values, const std::string& corpus_dir,
                const std::string& encoder_path, const std::string& fam_path, const std::string& out) {
  LoadedCorpus corpus = load_corpus(corpus_dir);
  int d = 0;
  num::ParamSet idenc = load_idenc(encoder_path, &d);
  auto [fam_meta, fam_params] = io::load_checkpoint(fam_path, "fam");

  gen::AblationConfig ac;
  ac.train.gen.d = d;
  ac.train.weights.id = static_cast<float>(cfg.lambda_id);
  ac.train.weights.pix = static_cast<float>(cfg.lambda_pix);
  ac.train.weights.tv = static_cast<float>(cfg.lambda_tv);
  ac.train.iterations = cfg.generator_iterations;
  ac.train.batch = cfg.batch;
  ac.train.adam = adam_from(cfg);
  ac.train.seed = cfg.seed;
  ac.fam = fam_config_from(fam_meta);
  ac.min_lapse = static_cast<float>(cfg.min_lapse);

  std::vector<gen::AblationRow> rows =
      gen::ablate_style_dim(k_values, corpus.manifest, corpus.samples, idenc, fam_params, ac);
  ensure_parent_dir(out);
  gen::write_ablation_csv(out, rows);
  write_config_sidecar(out, "ablate-style-dim", cfg);
  info("wrote ablation table " + out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic longitudinal face identification pipeline"};
  app.require_subcommand(1);

  std::function<void()> action;

  // gen-synthetic
  auto* cmd_gen = app.add_subcommand("gen-synthetic", "render a synthetic longitudinal corpus");
  auto cfg_gen = std::make_shared<ConfigCli>();
  cfg_gen->attach(cmd_gen);
  auto gen_out = std::make_shared<std::string>();
  cmd_gen->add_option("--out", *gen_out, "output corpus directory")->required();
  cmd_gen->callback([&action, cfg_gen, gen_out] {
    action = [cfg_gen, gen_out] { run_gen_synthetic(cfg_gen->resolve(), *gen_out); };
  });

  // train-encoder
  auto* cmd_enc = app.add_subcommand("train-encoder", "train the toy id encoder");
  auto cfg_enc = std::make_shared<ConfigCli>();
  cfg_enc->attach(cmd_enc);
  auto enc_corpus = std::make_shared<std::string>();
  auto enc_out = std::make_shared<std::string>();
  cmd_enc->add_option("--corpus", *enc_corpus, "corpus directory")->required();
  cmd_enc->add_option("--out", *enc_out, "output checkpoint path")->required();
  cmd_enc->callback([&action, cfg_enc, enc_corpus, enc_out] {
    action = [cfg_enc, enc_corpus, enc_out] { run_train_encoder(cfg_enc->resolve(), *enc_corpus, *enc_out); };
  });

  // train-fam
  auto* cmd_fam = app.add_subcommand("train-fam", "train the feature aging module");
  auto cfg_fam = std::make_shared<ConfigCli>();
  cfg_fam->attach(cmd_fam);
  auto fam_corpus = std::make_shared<std::string>();
  auto fam_encoder = std::make_shared<std::string>();
  auto fam_out = std::make_shared<std::string>();
  cmd_fam->add_option("--corpus", *fam_corpus, "corpus directory")->required();
  cmd_fam->add_option("--encoder", *fam_encoder, "id encoder checkpoint")->required();
  cmd_fam->add_option("--out", *fam_out, "output checkpoint path")->required();
  cmd_fam->callback([&action, cfg_fam, fam_corpus, fam_encoder, fam_out] {
    action = [cfg_fam, fam_corpus, fam_encoder, fam_out] {
      run_train_fam(cfg_fam->resolve(), *fam_corpus, *fam_encoder, *fam_out);
    };
  });

  // train-generator
  auto* cmd_tg = app.add_subcommand("train-generator", "train the style encoder and decoder");
  auto cfg_tg = std::make_shared<ConfigCli>();
  cfg_tg->attach(cmd_tg);
  auto tg_corpus = std::make_shared<std::string>();
  auto tg_encoder = std::make_shared<std::string>();
  auto tg_out = std::make_shared<std::string>();
  cmd_tg->add_option("--corpus", *tg_corpus, "corpus directory")->required();
  cmd_tg->add_option("--encoder", *tg_encoder, "id encoder checkpoint")->required();
  cmd_tg->add_option("--out", *tg_out, "output checkpoint path")->required();
  cmd_tg->callback([&action, cfg_tg, tg_corpus, tg_encoder, tg_out] {
    action = [cfg_tg, tg_corpus, tg_encoder, tg_out] {
      run_train_generator(cfg_tg->resolve(), *tg_corpus, *tg_encoder, *tg_out);
    };
  });

  // age
  auto* cmd_age = app.add_subcommand("age", "age an embedding container in feature space");
  auto cfg_age = std::make_shared<ConfigCli>();
  cfg_age->attach(cmd_age);
  auto age_in = std::make_shared<std::string>();
  auto age_fam = std::make_shared<std::string>();
  auto age_out = std::make_shared<std::string>();
  auto age_from = std::make_shared<double>(0.0);
  auto age_to = std::make_shared<double>(0.0);
  auto age_from_opt = std::make_shared<CLI::Option*>(nullptr);
  cmd_age->add_option("--in", *age_in, "input .faeb container")->required();
  *age_from_opt = cmd_age->add_option("--from", *age_from, "enrollment age (default: each record's own age)");
  cmd_age->add_option("--to", *age_to, "target age")->required();
  cmd_age->add_option("--fam", *age_fam, "feature aging checkpoint")->required();
  cmd_age->add_option("--out", *age_out, "output .faeb container")->required();
  cmd_age->callback([&action, cfg_age, age_in, age_fam, age_out, age_from, age_to, age_from_opt] {
    action = [cfg_age, age_in, age_fam, age_out, age_from, age_to, age_from_opt] {
      std::optional<double> from;
      if ((*age_from_opt)->count() > 0) from = *age_from;
      run_age(cfg_age->resolve(), *age_in, from, *age_to, *age_fam, *age_out);
    };
  });

  // synthesize
  auto* cmd_syn = app.add_subcommand("synthesize", "render aged versions of one image");
  auto cfg_syn = std::make_shared<ConfigCli>();
  cfg_syn->attach(cmd_syn);
  auto syn_image = std::make_shared<std::string>();
  auto syn_encoder = std::make_shared<std::string>();
  auto syn_fam = std::make_shared<std::string>();
  auto syn_gen = std::make_shared<std::string>();
  auto syn_out = std::make_shared<std::string>();
  auto syn_age = std::make_shared<double>(0.0);
  auto syn_to = std::make_shared<std::vector<double>>();
  cmd_syn->add_option("--image", *syn_image, "input .ppm image")->required();
  cmd_syn->add_option("--age", *syn_age, "age of the input image")->required();
  cmd_syn->add_option("--to", *syn_to, "target ages")->required()->delimiter(',');
  cmd_syn->add_option("--encoder", *syn_encoder, "id encoder checkpoint")->required();
  cmd_syn->add_option("--fam", *syn_fam, "feature aging checkpoint")->required();
  cmd_syn->add_option("--generator", *syn_gen, "generator checkpoint")->required();
  cmd_syn->add_option("--out", *syn_out, "output directory")->required();
  cmd_syn->callback([&action, cfg_syn, syn_image, syn_encoder, syn_fam, syn_gen, syn_out, syn_age, syn_to] {
    action = [cfg_syn, syn_image, syn_encoder, syn_fam, syn_gen, syn_out, syn_age, syn_to] {
      run_synthesize(cfg_syn->resolve(), *syn_image, *syn_age, *syn_to, *syn_encoder, *syn_fam, *syn_gen,
                     *syn_out);
    };
  });

  // evaluate
  auto* cmd_eval = app.add_subcommand("evaluate", "run the identification protocols and emit reports");
  auto cfg_eval = std::make_shared<ConfigCli>();
  cfg_eval->attach(cmd_eval);
  auto ev_corpus = std::make_shared<std::string>();
  auto ev_encoder = std::make_shared<std::string>();
  auto ev_gallery = std::make_shared<std::string>();
  auto ev_probes = std::make_shared<std::string>();
  auto ev_fam = std::make_shared<std::string>();
  auto ev_prefix = std::make_shared<std::string>();
  cmd_eval->add_option("--corpus", *ev_corpus, "corpus directory (corpus mode)");
  cmd_eval->add_option("--encoder", *ev_encoder, "id encoder checkpoint (corpus mode)");
  cmd_eval->add_option("--gallery", *ev_gallery, "gallery .faeb (container mode)");
  cmd_eval->add_option("--probes", *ev_probes, "probe .faeb (container mode)");
  cmd_eval->add_option("--fam", *ev_fam, "feature aging checkpoint (optional)");
  cmd_eval->add_option("--out-prefix", *ev_prefix, "report path prefix")->required();
  cmd_eval->callback([&action, cfg_eval, ev_corpus, ev_encoder, ev_gallery, ev_probes, ev_fam, ev_prefix] {
    action = [cfg_eval, ev_corpus, ev_encoder, ev_gallery, ev_probes, ev_fam, ev_prefix] {
      run_evaluate(cfg_eval->resolve(), *ev_corpus, *ev_encoder, *ev_gallery, *ev_probes, *ev_fam, *ev_prefix);
    };
  });

  // ablate-style-dim
  auto* cmd_abl = app.add_subcommand("ablate-style-dim", "sweep style widths and tabulate the trade-off");
  auto cfg_abl = std::make_shared<ConfigCli>();
  cfg_abl->attach(cmd_abl);
  auto abl_corpus = std::make_shared<std::string>();
  auto abl_encoder = std::make_shared<std::string>();
  auto abl_fam = std::make_shared<std::string>();
  auto abl_out = std::make_shared<std::string>();
  auto abl_k = std::make_shared<std::vector<int>>(std::vector<int>{0, 8, 32, 128});
  cmd_abl->add_option("--corpus", *abl_corpus, "corpus directory")->required();
  cmd_abl->add_option("--encoder", *abl_encoder, "id encoder checkpoint")->required();
  cmd_abl->add_option("--fam", *abl_fam, "feature aging checkpoint")->required();
  cmd_abl->add_option("--widths", *abl_k, "style widths to sweep")->delimiter(',');
  cmd_abl->add_option("--out", *abl_out, "output csv path")->required();
  cmd_abl->callback([&action, cfg_abl, abl_corpus, abl_encoder, abl_fam, abl_out, abl_k] {
    action = [cfg_abl, abl_corpus, abl_encoder, abl_fam, abl_out, abl_k] {
      run_ablate(cfg_abl->resolve(), *abl_k, *abl_corpus, *abl_encoder, *abl_fam, *abl_out);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    action();
  } catch (const std::exception& e) {
    std::cerr << "featage: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
