#pragma once

// One randomized finite-difference trial per tape primitive. Shared by the
// unit tests and the acceptance audit so both run the identical check list.

#include <functional>
#include <string>
#include <vector>

#include "gradcheck.hpp"

namespace gradcheck {

struct PrimitiveCheck {
  std::string name;
  double tolerance;
  std::function<double(uint64_t seed)> trial;  // returns max guarded relative error
};

inline std::vector<PrimitiveCheck> primitive_checks() {
  using featage::num::Rng;
  std::vector<PrimitiveCheck> checks;

  checks.push_back({"affine", 1e-4, [](uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({3, 4}, rng);
    auto w = random_tensor({4, 2}, rng);
    auto b = random_tensor({2}, rng);
    auto probe = random_tensor({3, 2}, rng);
    return max_rel_error(
        [probe](DTape& t, const std::vector<DVar>& v) {
          return weighted_sum(t, t.affine(v[0], v[1], v[2]), probe);
        },
        {x, w, b});
  }});

  checks.push_back({"leaky_relu", 1e-4, [](uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({3, 5}, rng);
    nudge_from_zero(x, 0.05);
    auto probe = random_tensor({3, 5}, rng);
    return max_rel_error(
        [probe](DTape& t, const std::vector<DVar>& v) {
          return weighted_sum(t, t.leaky_relu(v[0], 0.2), probe);
        },
        {x});
  }});

  checks.push_back({"instance_norm", 1e-3, [](uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({2, 3, 4, 2}, rng);
    auto gain = random_tensor({2}, rng, 0.5, 1.5);
    auto shift = random_tensor({2}, rng, -0.5, 0.5);
    auto probe = random_tensor({2, 3, 4, 2}, rng);
    return max_rel_error(
        [probe](DTape& t, const std::vector<DVar>& v) {
          return weighted_sum(t, t.instance_norm(v[0], v[1], v[2]), probe);
        },
        {x, gain, shift});
  }});

  checks.push_back({"conv2d", 1e-4, [](uint64_t seed) {
    Rng rng(seed);
    const int stride = 1 + rng.uniform_int(2);
    const int ks = 2 + rng.uniform_int(3);
    auto x = random_tensor({2, 5, 5, 2}, rng);
    auto k = random_tensor({ks, ks, 2, 3}, rng);
    const int oh = (5 + stride - 1) / stride;
    auto probe = random_tensor({2, oh, oh, 3}, rng);
    return max_rel_error(
        [probe, stride](DTape& t, const std::vector<DVar>& v) {
          return weighted_sum(t, t.conv2d(v[0], v[1], stride), probe);
        },
        {x, k});
  }});

  checks.push_back({"conv2d_transpose", 1e-4, [](uint64_t seed) {
    Rng rng(seed);
    const int stride = 1 + rng.uniform_int(2);
    const int ks = 3 + rng.uniform_int(2);
    auto x = random_tensor({2, 3, 3, 2}, rng);
    auto k = random_tensor({ks, ks, 3, 2}, rng);
    auto probe = random_tensor({2, 3 * stride, 3 * stride, 3}, rng);
    return max_rel_error(
        [probe, stride](DTape& t, const std::vector<DVar>& v) {
          return weighted_sum(t, t.conv2d_transpose(v[0], v[1], stride), probe);
        },
        {x, k});
  }});

  checks.push_back({"bias_add_channels", 1e-4, [](uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({2, 3, 3, 4}, rng);
    auto b = random_tensor({4}, rng);
    auto probe = random_tensor({2, 3, 3, 4}, rng);
    return max_rel_error(
        [probe](DTape& t, const std::vector<DVar>& v) {
          return weighted_sum(t, t.bias_add_channels(v[0], v[1]), probe);
        },
        {x, b});
  }});

  checks.push_back({"concat_cols", 1e-4, [](uint64_t seed) {
    Rng rng(seed);
    auto a = random_tensor({3, 2}, rng);
    auto b = random_tensor({3, 4}, rng);
    auto probe = random_tensor({3, 6}, rng);
    return max_rel_error(
        [probe](DTape& t, const std::vector<DVar>& v) {
          return weighted_sum(t, t.concat_cols(v[0], v[1]), probe);
        },
        {a, b});
  }});

  checks.push_back({"add", 1e-4, [](uint64_t seed) {
    Rng rng(seed);
    auto a = random_tensor({2, 7}, rng);
    auto b = random_tensor({2, 7}, rng);
    auto probe = random_tensor({2, 7}, rng);
    return max_rel_error(
        [probe](DTape& t, const std::vector<DVar>& v) {
          return weighted_sum(t, t.add(v[0], v[1]), probe);
        },
        {a, b});
  }});

  checks.push_back({"sub", 1e-4, [](uint64_t seed) {
    Rng rng(seed);
    auto a = random_tensor({2, 7}, rng);
    auto b = random_tensor({2, 7}, rng);
    auto probe = random_tensor({2, 7}, rng);
    return max_rel_error(
        [probe](DTape& t, const std::vector<DVar>& v) {
          return weighted_sum(t, t.sub(v[0], v[1]), probe);
        },
        {a, b});
  }});

  checks.push_back({"mul", 1e-4, [](uint64_t seed) {
    Rng rng(seed);
    auto a = random_tensor({2, 7}, rng);
    auto b = random_tensor({2, 7}, rng);
    auto probe = random_tensor({2, 7}, rng);
    return max_rel_error(
        [probe](DTape& t, const std::vector<DVar>& v) {
          return weighted_sum(t, t.mul(v[0], v[1]), probe);
        },
        {a, b});
  }});

  checks.push_back({"scale", 1e-4, [](uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({3, 4}, rng);
    const double c = rng.uniform(-2.0, 2.0);
    auto probe = random_tensor({3, 4}, rng);
    return max_rel_error(
        [probe, c](DTape& t, const std::vector<DVar>& v) {
          return weighted_sum(t, t.scale(v[0], c), probe);
        },
        {x});
  }});

  checks.push_back({"abs", 1e-4, [](uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({3, 5}, rng);
    nudge_from_zero(x, 0.05);
    auto probe = random_tensor({3, 5}, rng);
    return max_rel_error(
        [probe](DTape& t, const std::vector<DVar>& v) {
          return weighted_sum(t, t.abs(v[0]), probe);
        },
        {x});
  }});

  checks.push_back({"sigmoid", 1e-4, [](uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({3, 5}, rng, -3.0, 3.0);
    auto probe = random_tensor({3, 5}, rng);
    return max_rel_error(
        [probe](DTape& t, const std::vector<DVar>& v) {
          return weighted_sum(t, t.sigmoid(v[0]), probe);
        },
        {x});
  }});

  checks.push_back({"reshape", 1e-4, [](uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({2, 6}, rng);
    auto probe = random_tensor({3, 4}, rng);
    return max_rel_error(
        [probe](DTape& t, const std::vector<DVar>& v) {
          return weighted_sum(t, t.reshape(v[0], {3, 4}), probe);
        },
        {x});
  }});

  checks.push_back({"reduce_sum", 1e-4, [](uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({4, 3}, rng);
    const double c = rng.uniform(0.5, 2.0);
    return max_rel_error(
        [c](DTape& t, const std::vector<DVar>& v) { return t.scale(t.reduce_sum(v[0]), c); }, {x});
  }});

  checks.push_back({"l2_normalize_rows", 1e-4, [](uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({3, 5}, rng);
    for (int r = 0; r < 3; ++r) x.at(r, 0) += x.at(r, 0) < 0 ? -1.5 : 1.5;
    auto probe = random_tensor({3, 5}, rng);
    return max_rel_error(
        [probe](DTape& t, const std::vector<DVar>& v) {
          return weighted_sum(t, t.l2_normalize_rows(v[0]), probe);
        },
        {x});
  }});

  checks.push_back({"tv_loss", 1e-4, [](uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({2, 4, 4, 2}, rng);
    const double c = rng.uniform(0.5, 2.0);
    return max_rel_error(
        [c](DTape& t, const std::vector<DVar>& v) { return t.scale(t.tv_loss(v[0]), c); }, {x});
  }});

  checks.push_back({"softmax_cross_entropy", 1e-4, [](uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor({4, 5}, rng, -2.0, 2.0);
    std::vector<int> labels(4);
    for (int& l : labels) l = rng.uniform_int(5);
    return max_rel_error(
        [labels](DTape& t, const std::vector<DVar>& v) {
          return t.softmax_cross_entropy(v[0], labels);
        },
        {x});
  }});

  return checks;
}

}  // namespace gradcheck
