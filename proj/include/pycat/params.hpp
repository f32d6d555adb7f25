#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "pycat/tensor.hpp"

namespace pycat {

using Rng = std::mt19937_64;

struct InitSpec {
  enum class Kind { constant, normal };
  Kind kind = Kind::constant;
  double value = 0.0;  // constant value or normal standard deviation

  static InitSpec zeros() { return {Kind::constant, 0.0}; }
  static InitSpec ones() { return {Kind::constant, 1.0}; }
  static InitSpec normal(double stddev) { return {Kind::normal, stddev}; }
  // He-normal for ReLU paths.
  static InitSpec he(int64_t fan_in);
  // Glorot-normal.
  static InitSpec xavier(int64_t fan_in, int64_t fan_out);
};

/// Named, ordered collection of trainable leaves. Names are hierarchical
/// ("backbone.stage1.block0.attn.qkv.weight") and are what checkpoints store.
class ParamStore {
 public:
  Tensor create(const std::string& name, Shape shape, InitSpec init, Rng& rng);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  Tensor get(const std::string& name) const;
  const std::map<std::string, Tensor>& named() const { return params_; }
  std::vector<Tensor> parameters() const;
  int64_t total_size() const;

 private:
  std::map<std::string, Tensor> params_;
};

}  // namespace pycat
