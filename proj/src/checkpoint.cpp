#include "featage/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "binio.hpp"

namespace featage::io {

double CheckpointMeta::hyper_value(const std::string& name) const {
  for (const auto& [k, v] : hyper)
    if (k == name) return v;
  throw std::invalid_argument("checkpoint: hyperparameter '" + name + "' missing from '" + kind + "' header");
}

bool CheckpointMeta::has_hyper(const std::string& name) const {
  for (const auto& [k, v] : hyper)
    if (k == name) return true;
  return false;
}

void CheckpointMeta::set_hyper(const std::string& name, double value) {
  for (auto& [k, v] : hyper)
    if (k == name) {
      v = value;
      return;
    }
  hyper.emplace_back(name, value);
}

void save_checkpoint(const std::string& path, const CheckpointMeta& meta, const num::ParamSet& params) {
  if (meta.kind.empty()) throw std::invalid_argument("checkpoint: empty kind tag");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  os.write("FACP", 4);
  detail::put_u32(os, 1);
  detail::put_str(os, meta.kind);
  detail::put_str(os, meta.config_hash);
  detail::put_u32(os, static_cast<uint32_t>(meta.hyper.size()));
  for (const auto& [name, value] : meta.hyper) {
    detail::put_str(os, name);
    detail::put_f64(os, value);
  }
  detail::put_u32(os, static_cast<uint32_t>(params.size()));
  for (size_t i = 0; i < params.size(); ++i) {
    detail::put_str(os, params.names[i]);
    const num::Tensor& t = params.tensors[i];
    if (t.ndim() > 255) throw std::invalid_argument("checkpoint: tensor rank too large");
    os.put(static_cast<char>(t.ndim()));
    for (int d : t.shape) detail::put_u32(os, static_cast<uint32_t>(d));
    for (float v : t.data) detail::put_f32(os, v);
  }
  if (!os) throw std::runtime_error("checkpoint: write to '" + path + "' failed");
}

std::pair<CheckpointMeta, num::ParamSet> load_checkpoint(const std::string& path,
                                                         const std::string& expected_kind) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  const std::string what = "checkpoint: '" + path + "'";
  char magic[4];
  detail::get_bytes(is, magic, 4, what);
  if (std::memcmp(magic, "FACP", 4) != 0) throw std::runtime_error(what + ": bad magic, not a checkpoint");
  uint32_t version = detail::get_u32(is, what);
  if (version != 1) throw std::runtime_error(what + ": unsupported version " + std::to_string(version));

  CheckpointMeta meta;
  meta.kind = detail::get_str(is, what);
  meta.config_hash = detail::get_str(is, what);
  if (!expected_kind.empty() && meta.kind != expected_kind)
    throw std::runtime_error(what + ": holds a '" + meta.kind + "' model, expected '" + expected_kind + "'");
  uint32_t n_hyper = detail::get_u32(is, what);
  for (uint32_t i = 0; i < n_hyper; ++i) {
    std::string name = detail::get_str(is, what);
    double value = detail::get_f64(is, what);
    meta.hyper.emplace_back(std::move(name), value);
  }

  num::ParamSet params;
  uint32_t n_tensors = detail::get_u32(is, what);
  for (uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = detail::get_str(is, what);
    int ndim = is.get();
    if (ndim == EOF) detail::fail_truncated(what);
    std::vector<int> shape(static_cast<size_t>(ndim));
    for (int& d : shape) {
      uint32_t dim = detail::get_u32(is, what);
      if (dim > 1u << 28) throw std::runtime_error(what + ": implausible tensor dimension");
      d = static_cast<int>(dim);
    }
    num::Tensor t(shape);
    for (float& v : t.data) v = detail::get_f32(is, what);
    params.add(std::move(name), std::move(t));
  }
  if (is.peek() != EOF) throw std::runtime_error(what + ": trailing bytes after last tensor");
  return {std::move(meta), std::move(params)};
}

}  // namespace featage::io
