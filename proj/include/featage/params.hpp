#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "featage/tensor.hpp"

namespace featage::num {

// Ordered, named parameter list. Order is part of the contract: optimizers,
// checkpoints, and tape bindings all index it positionally.
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  int add(std::string name, Tensor t) {
    if (find(name) >= 0) throw std::invalid_argument("params: duplicate name '" + name + "'");
    names.push_back(std::move(name));
    tensors.push_back(std::move(t));
    return static_cast<int>(tensors.size()) - 1;
  }

  int find(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    return -1;
  }

  Tensor& operator[](const std::string& name) {
    int i = find(name);
    if (i < 0) throw std::invalid_argument("params: unknown name '" + name + "'");
    return tensors[i];
  }

  const Tensor& operator[](const std::string& name) const {
    int i = find(name);
    if (i < 0) throw std::invalid_argument("params: unknown name '" + name + "'");
    return tensors[i];
  }

  size_t size() const { return tensors.size(); }

  int64_t total_elements() const {
    int64_t n = 0;
    for (const Tensor& t : tensors) n += t.numel();
    return n;
  }

  void append(const std::string& prefix, const ParamSet& other) {
    for (size_t i = 0; i < other.size(); ++i) add(prefix + other.names[i], other.tensors[i]);
  }
};

// Leaf variables for every tensor in a set, in order. Build one per tape.
template <typename TapeType>
struct BoundParams {
  std::vector<typename TapeType::Var> vars;

  BoundParams(TapeType& tape, const ParamSet& ps, bool requires_grad = true) {
    vars.reserve(ps.size());
    for (size_t i = 0; i < ps.size(); ++i)
      vars.push_back(tape.leaf(ps.tensors[i], requires_grad, ps.names[i]));
  }

  typename TapeType::Var operator[](size_t i) const { return vars.at(i); }
};

}  // namespace featage::num
