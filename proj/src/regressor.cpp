#include "pycat/regressor.hpp"

#include <algorithm>
#include <cmath>

namespace pycat {

CorrectionNet CorrectionNet::create(ParamStore& store, const std::string& name, int64_t in, int64_t hidden,
                                    int64_t out, Rng& rng, bool zero_final) {
  return {nn::Linear::create(store, name + ".fc1", in, hidden, rng),
          nn::Linear::create(store, name + ".fc2", hidden, hidden, rng),
          nn::Linear::create(store, name + ".fc3", hidden, out, rng, zero_final)};
}

Tensor CorrectionNet::operator()(const Tensor& x) const { return fc3(relu(fc2(relu(fc1(x))))); }

DenseHeadParams DenseHeadParams::create(ParamStore& store, const std::string& name, int64_t channels, int64_t parts,
                                        int64_t levels, Rng& rng) {
  DenseHeadParams p;
  for (int64_t i = 0; i < levels; ++i) {
    const std::string n = name + ".level" + std::to_string(i);
    p.parts.push_back(nn::Conv2d::create(store, n + ".parts", channels, parts + 1, 1, {}, rng));
    p.uv.push_back(nn::Conv2d::create(store, n + ".uv", channels, 2, 1, {}, rng));
  }
  return p;
}

Tensor initial_state(const ArticulatedMesh& mesh, double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw ContractError("initial camera scale must be positive");
  std::vector<double> v(state_size(mesh), 0.0);
  v[3 * mesh.num_joints + mesh.num_shape] = scale;
  return Tensor({1, state_size(mesh)}, std::move(v));
}

RegressorParams RegressorParams::create(ParamStore& store, const std::string& name, const ArticulatedMesh& mesh,
                                        int64_t level_channels, int64_t global_width, const RegressorConfig& cfg,
                                        Rng& rng) {
  RegressorParams p;
  p.cfg = cfg;
  p.theta0 = initial_state(mesh, cfg.init_scale);
  p.sample_indices = mesh_downsample(mesh, cfg.samples);
  const int64_t S = state_size(mesh);
  const int64_t in = cfg.samples * level_channels + global_width + S;
  for (int i = 0; i < 3; ++i) {
    p.nets.push_back(CorrectionNet::create(store, name + ".ief" + std::to_string(i), in, cfg.hidden, S, rng,
                                           cfg.zero_final));
  }
  p.dense = DenseHeadParams::create(store, name + ".dense", level_channels, mesh.num_parts, 3, rng);
  return p;
}

Tensor mesh_aligned_features(const Tensor& level, const Tensor& global, const BodyState& state,
                             const ArticulatedMesh& mesh, const std::vector<int64_t>& sample_indices) {
  if (level.rank() != 4) throw DimensionError("feature level must be [B,C,H,W], got " + shape_str(level.shape()));
  const int64_t B = level.size(0);
  if (global.rank() != 2 || global.size(0) != B) {
    throw DimensionError("global vector must be [" + std::to_string(B) + ",G], got " + shape_str(global.shape()));
  }
  MeshOutput out = pose_shape_to_mesh(mesh, state.pose, state.shape);
  Tensor verts = index_select(out.vertices, 1, sample_indices);
  Tensor points = project_weak_perspective(verts, state.cam);
  Tensor sampled = nn::grid_sample_bilinear(level, points);  // [B,C,d]
  const int64_t d = static_cast<int64_t>(sample_indices.size());
  return concat({reshape(sampled, {B, level.size(1) * d}), global}, 1);
}

Tensor ief_step(const Tensor& theta, const Tensor& features, const CorrectionNet& net) {
  return theta + net(concat({features, theta}, 1));
}

IefResult ief_loop(const FeaturePyramid& pyramid, const ArticulatedMesh& mesh, const RegressorParams& params) {
  if (pyramid.levels.size() != params.nets.size()) {
    throw DimensionError("pyramid has " + std::to_string(pyramid.levels.size()) + " levels, regressor expects " +
                         std::to_string(params.nets.size()));
  }
  const int64_t B = pyramid.global.size(0);
  Tensor theta = Tensor::zeros({B, params.theta0.size(1)}) + params.theta0;
  IefResult result;
  for (std::size_t i = 0; i < params.nets.size(); ++i) {
    Tensor f = mesh_aligned_features(pyramid.levels[i], pyramid.global, split_state(theta, mesh), mesh,
                                     params.sample_indices);
    theta = ief_step(theta, f, params.nets[i]);
    result.states.push_back(theta);
  }
  return result;
}

DensePrediction aux_dense_head(const FeaturePyramid& pyramid, const DenseHeadParams& p) {
  if (pyramid.levels.size() != p.parts.size()) throw DimensionError("dense head level count mismatch");
  DensePrediction out;
  for (std::size_t i = 0; i < p.parts.size(); ++i) {
    out.logits.push_back(p.parts[i](pyramid.levels[i]));
    out.uv.push_back(sigmoid(p.uv[i](pyramid.levels[i])));
  }
  return out;
}

namespace {

Tensor root_relative(const Tensor& points, const Tensor& joints) {
  return points - narrow(joints, 1, 0, 1);
}

// Per-sample 0/1 mask broadcast over [B,*,*] and its count.
std::pair<Tensor, double> sample_mask(const std::vector<uint8_t>& flags, int64_t B) {
  std::vector<double> m(B, 1.0);
  if (!flags.empty()) {
    if (static_cast<int64_t>(flags.size()) != B) throw DimensionError("has_3d must hold one flag per sample");
    for (int64_t b = 0; b < B; ++b) m[b] = flags[b] ? 1.0 : 0.0;
  }
  double count = 0.0;
  for (double v : m) count += v;
  return {Tensor({B, 1, 1}, std::move(m)), count};
}

Tensor masked_l2(const Tensor& pred, const Tensor& target, const Tensor& mask, double count) {
  const double denom = count * static_cast<double>(pred.size(1) * pred.size(2));
  return sum(square(pred - target) * mask) / denom;
}

void require_shape(const Tensor& t, const Shape& shape, const std::string& what) {
  if (t.shape() != shape) {
    throw DimensionError(what + " must be " + shape_str(shape) + ", got " + shape_str(t.shape()));
  }
}

}  // namespace

LossResult total_loss(const IefResult& states, const DensePrediction& dense, const SampleTargets& targets,
                      const ArticulatedMesh& mesh, const LossWeights& weights) {
  if (states.states.empty()) throw ContractError("loss needs at least one regressor state");
  if (!targets.keypoints2d.defined()) throw ContractError("2D keypoint targets are mandatory");
  const int64_t B = states.states.front().size(0);
  const int64_t K = mesh.num_joints;
  require_shape(targets.keypoints2d, {B, K, 2}, "2D keypoint targets");
  const bool use_joints = targets.joints3d.defined();
  const bool use_verts = targets.vertices3d.defined();
  if (!targets.has_3d.empty() && !use_joints && !use_verts) {
    throw ContractError("has_3d flags given without 3D targets");
  }
  if (use_verts && !use_joints) throw ContractError("vertex targets need joint targets for the root");
  if (use_joints) require_shape(targets.joints3d, {B, K, 3}, "3D joint targets");
  if (use_verts) require_shape(targets.vertices3d, {B, mesh.num_vertices, 3}, "3D vertex targets");
  auto [mask3d, count3d] = sample_mask(targets.has_3d, B);
  Tensor kp_mask;
  double kp_count = static_cast<double>(B * K);
  if (targets.keypoint_visibility.defined()) {
    require_shape(targets.keypoint_visibility, {B, K}, "keypoint visibility");
    kp_count = 0.0;
    for (double v : targets.keypoint_visibility.values()) kp_count += v;
    kp_mask = reshape(targets.keypoint_visibility, {B, K, 1});
  }

  LossResult result;
  auto add = [&](std::string name, double w, const Tensor& raw) { result.terms.push_back({std::move(name), raw * w}); };

  for (std::size_t i = 0; i < states.states.size(); ++i) {
    BodyState st = split_state(states.states[i], mesh);
    MeshOutput out = pose_shape_to_mesh(mesh, st.pose, st.shape);
    Tensor kp = project_weak_perspective(out.joints, st.cam);
    Tensor kp_err = square(kp - targets.keypoints2d);
    if (kp_mask.defined()) kp_err = kp_err * kp_mask;
    add("keypoints2d." + std::to_string(i), weights.keypoints2d, sum(kp_err) / (2.0 * std::max(kp_count, 1.0)));
    if (i + 1 < states.states.size()) continue;
    if (count3d > 0.0) {
      Tensor gt_root = use_joints ? narrow(targets.joints3d, 1, 0, 1) : Tensor();
      if (use_joints) {
        add("joints3d", weights.joints3d,
            masked_l2(root_relative(out.joints, out.joints), targets.joints3d - gt_root, mask3d, count3d));
      }
      if (use_verts) {
        add("vertices3d", weights.vertices3d,
            masked_l2(root_relative(out.vertices, out.joints), targets.vertices3d - gt_root, mask3d, count3d));
      }
    }
    add("camera", weights.camera, mean(square(relu(weights.min_scale - narrow(st.cam, 1, 0, 1)))));
  }

  if (!targets.part_labels.empty()) {
    if (targets.part_labels.size() != dense.logits.size()) throw ContractError("part label count mismatch");
    for (std::size_t i = 0; i < dense.logits.size(); ++i) {
      const Tensor& logits = dense.logits[i];
      const int64_t C = logits.size(1), H = logits.size(2), W = logits.size(3);
      require_shape(targets.part_labels[i], {B, H, W}, "part labels");
      std::vector<double> onehot(B * C * H * W, 0.0);
      std::vector<double> fg(B * 2 * H * W, 0.0);
      double fg_count = 0.0;
      const auto labels = targets.part_labels[i].values();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t p = 0; p < H * W; ++p) {
          const auto cls = static_cast<int64_t>(std::lround(labels[b * H * W + p]));
          if (cls < 0 || cls >= C) throw ContractError("part label out of range");
          onehot[(b * C + cls) * H * W + p] = 1.0;
          if (cls > 0) {
            fg[(b * 2) * H * W + p] = fg[(b * 2 + 1) * H * W + p] = 1.0;
            fg_count += 2.0;
          }
        }
      Tensor ce = -sum(log_softmax(logits, 1) * Tensor(logits.shape(), std::move(onehot))) /
                  static_cast<double>(B * H * W);
      add("parts." + std::to_string(i), weights.parts, ce);
      if (targets.uv_maps.size() == dense.uv.size()) {
        require_shape(targets.uv_maps[i], dense.uv[i].shape(), "UV targets");
        Tensor mask({B, 2, H, W}, std::move(fg));
        Tensor l1 = fg_count > 0.0 ? sum(abs(dense.uv[i] - targets.uv_maps[i]) * mask) / fg_count
                                   : Tensor::scalar(0.0);
        add("uv." + std::to_string(i), weights.uv, l1);
      } else if (!targets.uv_maps.empty()) {
        throw ContractError("UV map count mismatch");
      }
    }
  }

  for (const auto& t : result.terms) result.total = result.total.defined() ? result.total + t.value : t.value;
  return result;
}

}  // namespace pycat
