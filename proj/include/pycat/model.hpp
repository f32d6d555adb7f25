#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pycat/body_model.hpp"
#include "pycat/conv_backbone.hpp"
#include "pycat/coord_attention.hpp"
#include "pycat/fusion.hpp"
#include "pycat/regressor.hpp"
#include "pycat/swin.hpp"
#include "pycat/temporal.hpp"

namespace pycat {

enum class Variant { baseline, ca, ca_transformer, ca_fpn_transformer, pycat4 };

/// Ablation ladder order.
const std::vector<Variant>& all_variants();
Variant parse_variant(const std::string& name);  // throws ParseError
std::string variant_id(Variant v);               // "ca_fpn_transformer"
std::string display_name(Variant v);             // "CA_FPN_Transformer"

bool uses_swin(Variant v);
bool uses_ca(Variant v);
bool uses_fpn(Variant v);
bool uses_temporal(Variant v);

struct ModelConfig {
  Variant variant = Variant::pycat4;
  int64_t image_size = 112;
  int64_t width = 32;
  std::vector<int> depths{2, 2, 2, 2};
  std::vector<int> heads{1, 2, 4, 8};
  int window = 7;
  int64_t fusion_channels = 64;
  int64_t ca_reduction = 8;
  bool aspp = true;
  RegressorConfig regressor;
  TemporalConfig temporal;
};

/// 32 px, narrow and shallow: for tests and gradient checks.
ModelConfig tiny_model_config(Variant v = Variant::pycat4);

struct ModelOutput {
  FeaturePyramid pyramid;
  IefResult ief;
  DensePrediction dense;
};

class Model {
 public:
  static std::unique_ptr<Model> create(const ModelConfig& cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const ArticulatedMesh& mesh() const { return mesh_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }

  /// Backbone stage maps, refined by coordinate attention where enabled.
  std::vector<Tensor> features(const Tensor& images) const;
  /// Per-frame pyramid for images [B,3,S,S].
  FeaturePyramid pyramid(const Tensor& images) const;
  /// Regressor and dense head on a (possibly fused) pyramid.
  ModelOutput head(FeaturePyramid pyramid) const;

  /// Single frame; temporal variants see a one-frame window.
  ModelOutput forward(const Tensor& images) const;
  /// Causal window of frames, oldest first, current last; `valid` holds
  /// B*T flags (empty means all valid). Past frames are encoded without
  /// gradient. Variants without temporal fusion use the current frame only.
  ModelOutput forward_window(const std::vector<Tensor>& frames, const std::vector<uint8_t>& valid) const;
  /// Same, with past pyramids already computed.
  ModelOutput forward_pyramids(std::vector<FeaturePyramid> pyramids, const std::vector<uint8_t>& valid) const;

  std::vector<int64_t> level_sizes() const;

 private:
  ModelConfig cfg_;
  ArticulatedMesh mesh_;
  ParamStore store_;
  std::optional<ConvBackbone> conv_;
  std::optional<SwinBackbone> swin_;
  std::vector<CoordAttention> ca_;
  std::optional<FusionParams> fusion_;
  std::optional<DeconvPyramidParams> deconv_;
  std::optional<TemporalParams> temporal_;
  RegressorParams regressor_;
};

}  // namespace pycat
