#pragma once

#include <string>
#include <vector>

#include "pycat/body_model.hpp"
#include "pycat/fusion.hpp"
#include "pycat/nn.hpp"

namespace pycat {

struct RegressorConfig {
  int64_t samples = 32;  // downsampled vertices per feature lookup
  int64_t hidden = 256;
  double init_scale = 0.9;
  bool zero_final = true;  // zero final layer of every correction network
};

// Two hidden ReLU layers mapping (features | state) to a state update.
struct CorrectionNet {
  nn::Linear fc1;
  nn::Linear fc2;
  nn::Linear fc3;

  static CorrectionNet create(ParamStore& store, const std::string& name, int64_t in, int64_t hidden,
                              int64_t out, Rng& rng, bool zero_final);
  Tensor operator()(const Tensor& x) const;
};

struct DenseHeadParams {
  std::vector<nn::Conv2d> parts;  // per level, P+1 logits
  std::vector<nn::Conv2d> uv;     // per level, 2 channels

  static DenseHeadParams create(ParamStore& store, const std::string& name, int64_t channels, int64_t parts,
                                int64_t levels, Rng& rng);
};

struct RegressorParams {
  RegressorConfig cfg;
  std::vector<CorrectionNet> nets;  // one per pyramid level, coarse to fine
  Tensor theta0;                    // [1, S]
  DenseHeadParams dense;
  std::vector<int64_t> sample_indices;

  static RegressorParams create(ParamStore& store, const std::string& name, const ArticulatedMesh& mesh,
                                int64_t level_channels, int64_t global_width, const RegressorConfig& cfg, Rng& rng);
};

/// Mean state: zero pose and shape, camera (init_scale, 0, 0).
Tensor initial_state(const ArticulatedMesh& mesh, double scale);

/// Samples `level` [B,C,H,W] at the projected sample vertices of `state` and
/// appends `global` [B,G]: [B, d*C + G].
Tensor mesh_aligned_features(const Tensor& level, const Tensor& global, const BodyState& state,
                             const ArticulatedMesh& mesh, const std::vector<int64_t>& sample_indices);

/// theta + net(features | theta).
Tensor ief_step(const Tensor& theta, const Tensor& features, const CorrectionNet& net);

struct IefResult {
  std::vector<Tensor> states;  // one per correction step, flattened [B,S]
  Tensor final() const { return states.back(); }
};

IefResult ief_loop(const FeaturePyramid& pyramid, const ArticulatedMesh& mesh, const RegressorParams& params);

struct DensePrediction {
  std::vector<Tensor> logits;  // [B,P+1,s,s] per level, class 0 background
  std::vector<Tensor> uv;      // [B,2,s,s] per level, in [0,1]
};

DensePrediction aux_dense_head(const FeaturePyramid& pyramid, const DenseHeadParams& p);

struct LossWeights {
  double keypoints2d = 1.0;
  double joints3d = 1.0;
  double vertices3d = 1.0;
  double parts = 0.1;
  double uv = 0.1;
  double camera = 1.0;
  double min_scale = 0.5;
};

/// Ground truth for a batch. 2D keypoints are mandatory; 3D fields are used
/// when defined, restricted to samples flagged in `has_3d` (empty means all).
/// Dense maps are used when present, one per pyramid level.
struct SampleTargets {
  Tensor keypoints2d;  // [B,K,2]
  Tensor keypoint_visibility;  // [B,K] 0/1 weights, undefined means all visible
  Tensor joints3d;     // [B,K,3]
  Tensor vertices3d;   // [B,N,3]
  std::vector<uint8_t> has_3d;
  std::vector<Tensor> part_labels;  // [B,s,s] class indices
  std::vector<Tensor> uv_maps;      // [B,2,s,s]
};

struct LossTerm {
  std::string name;
  Tensor value;  // weighted contribution
};

struct LossResult {
  Tensor total;
  std::vector<LossTerm> terms;
};

/// Weighted sum of per-step 2D keypoint L2; on the final state, root-relative
/// 3D joint and vertex L2 and the camera scale bound; per-level part
/// cross-entropy and foreground UV L1. Throws ContractError when mandatory
/// targets are missing.
LossResult total_loss(const IefResult& states, const DensePrediction& dense, const SampleTargets& targets,
                      const ArticulatedMesh& mesh, const LossWeights& weights);

}  // namespace pycat
