#pragma once

#include <string>
#include <utility>
#include <vector>

#include "featage/params.hpp"

namespace featage::io {

// Model snapshot header: which trainer wrote it, the resolved-config hash of
// that run, and the scalar hyperparameters needed to rebuild the network
// around the tensors.
struct CheckpointMeta {
  std::string kind;         // "fam", "idenc", "gen"
  std::string config_hash;  // may be empty for ad-hoc saves
  std::vector<std::pair<std::string, double>> hyper;

  double hyper_value(const std::string& name) const;
  bool has_hyper(const std::string& name) const;
  void set_hyper(const std::string& name, double value);
};

// Binary container, little-endian, bit-exact across a save/load round trip.
void save_checkpoint(const std::string& path, const CheckpointMeta& meta, const num::ParamSet& params);

// expected_kind, when non-empty, turns a wrong-model file into a load error.
std::pair<CheckpointMeta, num::ParamSet> load_checkpoint(const std::string& path,
                                                         const std::string& expected_kind = "");

}  // namespace featage::io
