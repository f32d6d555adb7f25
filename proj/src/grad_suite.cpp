#include "pycat/grad_suite.hpp"

#include <algorithm>
#include <random>

#include "pycat/coord_attention.hpp"
#include "pycat/data.hpp"
#include "pycat/fusion.hpp"
#include "pycat/gradcheck.hpp"
#include "pycat/harness.hpp"
#include "pycat/model.hpp"
#include "pycat/regressor.hpp"
#include "pycat/swin.hpp"
#include "pycat/temporal.hpp"

namespace pycat {

namespace {

constexpr double kOpTolerance = 1e-5;
constexpr double kEndToEndTolerance = 1e-4;

using Probes = std::vector<std::pair<std::string, Tensor>>;

struct Suite {
  std::string module;
  std::vector<GradSuiteResult>* out;
  const std::function<void(const GradSuiteResult&)>* on_result;

  void check(const std::string& op, const std::function<Tensor()>& loss, const Probes& probes,
             double tol = kOpTolerance, int64_t max_entries = 0) {
    for (const auto& r : check_gradients(loss, probes, tol, 1e-5, max_entries)) {
      GradSuiteResult g{module, op + "/" + r.name, r.rel_error, r.tolerance};
      if (*on_result) (*on_result)(g);
      out->push_back(std::move(g));
    }
  }
};

Tensor leaf(Shape shape, std::mt19937_64& rng, double scale = 1.0, double offset = 0.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = offset + n(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

// Values bounded away from zero, for ops with a kink or pole there.
Tensor away_from_zero(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.3, 1.5);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = sign(rng) ? u(rng) : -u(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

// Fixed random projection so checks see a generic upstream gradient.
Tensor project(const Tensor& y, uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> w(y.numel());
  for (auto& x : w) x = n(rng);
  return sum(y * Tensor(y.shape(), std::move(w)));
}

void randomize_zero_parameters(ParamStore& store, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  for (const auto& [_, t] : store.named()) {
    Tensor p = t;
    auto v = p.mutable_values();
    if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; }))
      for (auto& x : v) x = n(rng);
  }
}

void tensor_engine(Suite& s) {
  std::mt19937_64 rng(1);
  Tensor a = leaf({2, 3}, rng), b = leaf({3}, rng), d = away_from_zero({3}, rng);
  s.check("add", [&] { return project(a + b); }, {{"a", a}, {"b", b}});
  s.check("sub", [&] { return project(a - b); }, {{"a", a}, {"b", b}});
  s.check("mul", [&] { return project(a * b); }, {{"a", a}, {"b", b}});
  s.check("div", [&] { return project(a / d); }, {{"a", a}, {"d", d}});
  s.check("scalar", [&] { return project(2.0 - a * 3.0 + (-a) / 4.0 + d * 0.5 - 1.0); }, {{"a", a}, {"d", d}});

  Tensor x = leaf({2, 4}, rng), pos = leaf({2, 4}, rng, 0.2, 1.5), nz = away_from_zero({2, 4}, rng);
  s.check("exp", [&] { return project(exp(x)); }, {{"x", x}});
  s.check("log", [&] { return project(log(pos)); }, {{"x", pos}});
  s.check("sqrt", [&] { return project(sqrt(pos)); }, {{"x", pos}});
  s.check("square", [&] { return project(square(x)); }, {{"x", x}});
  s.check("abs", [&] { return project(abs(nz)); }, {{"x", nz}});
  s.check("relu", [&] { return project(relu(nz)); }, {{"x", nz}});
  s.check("sigmoid", [&] { return project(sigmoid(x)); }, {{"x", x}});
  s.check("tanh", [&] { return project(tanh(x)); }, {{"x", x}});
  s.check("gelu", [&] { return project(gelu(x)); }, {{"x", x}});

  Tensor m1 = leaf({3, 4}, rng), m2 = leaf({4, 2}, rng), b1 = leaf({2, 3, 4}, rng), b2 = leaf({2, 4, 2}, rng);
  s.check("matmul", [&] { return project(matmul(m1, m2)); }, {{"a", m1}, {"b", m2}});
  s.check("matmul_batched", [&] { return project(matmul(b1, b2)); }, {{"a", b1}, {"b", b2}});
  s.check("matmul_broadcast", [&] { return project(matmul(b1, m2)); }, {{"a", b1}, {"b", m2}});

  Tensor r = leaf({2, 3, 4}, rng);
  s.check("sum", [&] { return sum(r * r); }, {{"x", r}});
  s.check("mean", [&] { return mean(r * r); }, {{"x", r}});
  s.check("sum_axis", [&] { return project(sum(r, 1)); }, {{"x", r}});
  s.check("mean_axis", [&] { return project(mean(r, 2, true)); }, {{"x", r}});
  s.check("max_axis", [&] { return project(max(r, 1)); }, {{"x", r}});
  s.check("softmax", [&] { return project(softmax(r, 2)); }, {{"x", r}});
  s.check("log_softmax", [&] { return project(log_softmax(r, 1)); }, {{"x", r}});

  Tensor q = leaf({2, 3}, rng);
  s.check("reshape", [&] { return project(reshape(r, {4, -1})); }, {{"x", r}});
  s.check("permute", [&] { return project(permute(r, {2, 0, 1})); }, {{"x", r}});
  s.check("transpose", [&] { return project(transpose(r, 0, 2)); }, {{"x", r}});
  s.check("narrow", [&] { return project(narrow(r, 2, 1, 2)); }, {{"x", r}});
  s.check("concat", [&] { return project(concat({a, q}, 0)); }, {{"a", a}, {"b", q}});
  s.check("index_select", [&] { return project(index_select(r, 1, {2, 0, 2})); }, {{"x", r}});
  auto idx = std::make_shared<const std::vector<int64_t>>(std::vector<int64_t>{5, 0, 5, 23, 11});
  s.check("gather", [&] { return project(gather(r, idx, {5})); }, {{"x", r}});
}

void nn_layers(Suite& s) {
  std::mt19937_64 rng(2);
  Tensor x = leaf({2, 3, 7, 6}, rng), w = leaf({4, 3, 3, 3}, rng, 0.5), b = leaf({4}, rng);
  s.check("conv2d", [&] { return project(nn::conv2d(x, w, b, {1, 1, 1})); }, {{"x", x}, {"w", w}, {"b", b}});
  s.check("conv2d_strided_dilated", [&] { return project(nn::conv2d(x, w, b, {2, 2, 2})); },
          {{"x", x}, {"w", w}, {"b", b}});
  Tensor tx = leaf({1, 3, 4, 3}, rng), tw = leaf({3, 2, 4, 4}, rng, 0.5), tb = leaf({2}, rng);
  s.check("transposed_conv2d", [&] { return project(nn::transposed_conv2d(tx, tw, tb, {2, 1, 1})); },
          {{"x", tx}, {"w", tw}, {"b", tb}});
  Tensor ln = leaf({2, 3, 5}, rng), g = leaf({5}, rng, 0.3, 1.0), lb = leaf({5}, rng), gc = leaf({3}, rng, 0.3, 1.0),
         lc = leaf({3}, rng);
  s.check("layer_norm", [&] { return project(nn::layer_norm(ln, g, lb)); }, {{"x", ln}, {"gain", g}, {"bias", lb}});
  s.check("layer_norm_axis1", [&] { return project(nn::layer_norm(ln, gc, lc, 1)); },
          {{"x", ln}, {"gain", gc}, {"bias", lc}});
  s.check("global_avg_pool", [&] { return project(nn::global_avg_pool(x)); }, {{"x", x}});
  s.check("bilinear_up", [&] { return project(nn::bilinear_resize(x, 11, 13)); }, {{"x", x}});
  s.check("bilinear_down", [&] { return project(nn::bilinear_resize(x, 3, 4)); }, {{"x", x}});
  std::uniform_real_distribution<double> u(-0.9, 0.9);
  std::vector<double> pts(2 * 5 * 2);
  for (auto& v : pts) v = u(rng);
  Tensor points({2, 5, 2}, pts, true);
  s.check("grid_sample", [&] { return project(nn::grid_sample_bilinear(x, points)); }, {{"x", x}, {"points", points}});
  Tensor li = leaf({2, 3, 4}, rng), lw = leaf({4, 5}, rng), lbias = leaf({5}, rng);
  s.check("linear", [&] { return project(nn::linear(li, lw, lbias)); }, {{"x", li}, {"w", lw}, {"b", lbias}});

  nn::MHAParams p;
  p.heads = 2;
  p.qkv_weight = leaf({4, 12}, rng, 0.5);
  p.qkv_bias = leaf({12}, rng, 0.1);
  p.out_weight = leaf({4, 4}, rng, 0.5);
  p.out_bias = leaf({4}, rng, 0.1);
  Tensor tokens = leaf({2, 3, 4}, rng), bias = leaf({2, 3, 3}, rng, 0.3);
  Tensor mask({3, 3}, {0, 0, kMaskValue, 0, 0, 0, kMaskValue, 0, 0});
  s.check("mha", [&] { return project(nn::mha_core(tokens, p, bias, mask)); },
          {{"tokens", tokens}, {"qkv_w", p.qkv_weight}, {"qkv_b", p.qkv_bias}, {"out_w", p.out_weight}, {"bias", bias}});
}

void coord_attention(Suite& s) {
  std::mt19937_64 rng(3);
  ParamStore store;
  CoordAttention ca = CoordAttention::create(store, "ca", 8, 4, rng);
  Tensor x = leaf({2, 8, 5, 4}, rng);
  s.check("directional_pool", [&] {
    auto [h, w] = directional_pool(x);
    return project(h) + project(w, 7);
  }, {{"x", x}});
  Probes probes{{"x", x}};
  for (const auto& [name, t] : store.named()) probes.emplace_back(name, t);
  s.check("ca_forward", [&] { return project(ca_forward(x, ca)); }, probes);
}

void swin_backbone(Suite& s) {
  std::mt19937_64 rng(4);
  ParamStore store;
  PatchEmbed embed = PatchEmbed::create(store, "embed", 3, 4, 2, rng);
  Tensor image = leaf({1, 3, 8, 8}, rng);
  s.check("patch_embed", [&] { return project(patch_embed(image, embed)); },
          {{"image", image}, {"proj", embed.proj.weight}, {"gain", embed.norm.gain}});
  Tensor grid = leaf({2, 4, 4, 3}, rng);
  s.check("window_partition", [&] { return project(window_partition(grid, 2)); }, {{"x", grid}});
  Tensor wins = leaf({8, 4, 3}, rng);
  s.check("window_reverse", [&] { return project(window_reverse(wins, 2, 4, 4)); }, {{"x", wins}});
  s.check("roll2d", [&] { return project(roll2d(grid, -1, 2)); }, {{"x", grid}});
  Tensor table = leaf({2, 9}, rng);
  s.check("relative_position_bias", [&] { return project(relative_position_bias(table, 2, 2)); }, {{"table", table}});

  SwinBlockParams blk = SwinBlockParams::create(store, "block", 4, 2, 2, 2.0, rng);
  Tensor x = leaf({1, 4, 4, 4}, rng);
  const Probes probes{{"x", x},          {"qkv", blk.attn.qkv_weight}, {"bias_table", blk.bias_table},
                      {"fc1", blk.mlp.fc1.weight}, {"norm1", blk.norm1.gain}};
  s.check("w_msa_block", [&] { return project(swin_block(x, {2, 0}, blk)); }, probes);
  s.check("sw_msa_block", [&] { return project(swin_block(x, {2, 1}, blk)); }, probes);

  PatchMergingParams merge = PatchMergingParams::create(store, "merge", 4, rng);
  Tensor odd = leaf({1, 3, 5, 4}, rng);
  s.check("patch_merging", [&] { return project(patch_merging(x, merge)); },
          {{"x", x}, {"reduction", merge.reduction.weight}});
  s.check("patch_merging_padded", [&] { return project(patch_merging(odd, merge, true)); }, {{"x", odd}});
}

void multiscale_fusion(Suite& s) {
  std::mt19937_64 rng(5);
  ParamStore store;
  AsppParams aspp_p = AsppParams::create(store, "aspp", 4, 3, {1, 2}, rng);
  Tensor x = leaf({1, 4, 5, 5}, rng);
  Probes ap{{"x", x}};
  for (const auto& [name, t] : store.named()) ap.emplace_back(name, t);
  s.check("aspp", [&] { return project(aspp(x, aspp_p)); }, ap);

  std::vector<Tensor> stages{leaf({1, 2, 8, 8}, rng), leaf({1, 4, 4, 4}, rng), leaf({1, 8, 2, 2}, rng),
                             leaf({1, 8, 1, 1}, rng)};
  ParamStore fstore;
  FusionConfig fc;
  fc.channels = 3;
  fc.rates = {1, 2};
  FusionParams fusion = FusionParams::create(fstore, "fusion", {2, 4, 8, 8}, fc, rng);
  Probes fp;
  for (std::size_t i = 0; i < stages.size(); ++i) fp.emplace_back("stage" + std::to_string(i), stages[i]);
  fp.emplace_back("lateral0", fusion.fpn.laterals[0].weight);
  s.check("fuse_pyramid", [&] {
    FeaturePyramid p = fuse_pyramid(stages, fusion);
    Tensor l = project(p.global, 3);
    for (std::size_t i = 0; i < p.levels.size(); ++i) l = l + project(p.levels[i], 10 + i);
    return l;
  }, fp);

  ParamStore dstore;
  DeconvPyramidParams deconv = DeconvPyramidParams::create(dstore, "deconv", 8, 3, rng);
  s.check("deconv_pyramid", [&] {
    FeaturePyramid p = deconv_pyramid(stages, deconv);
    Tensor l = project(p.global, 3);
    for (std::size_t i = 0; i < p.levels.size(); ++i) l = l + project(p.levels[i], 20 + i);
    return l;
  }, {{"stage3", stages[3]}, {"deconv0", deconv.deconv[0].weight}});
}

void temporal_fusion(Suite& s) {
  std::mt19937_64 rng(6);
  ParamStore store;
  TransformerBlockParams blk = TransformerBlockParams::create(store, "block", 4, 2, 2.0, rng);
  Tensor x = leaf({2, 3, 4}, rng);
  s.check("transformer_block", [&] { return project(transformer_block(x, blk)); },
          {{"x", x}, {"qkv", blk.attn.qkv_weight}, {"fc2", blk.mlp.fc2.weight}});

  TemporalConfig cfg;
  cfg.width = 4;
  cfg.heads = 2;
  cfg.spatial_depth = 1;
  cfg.temporal_depth = 1;
  cfg.max_frames = 3;
  ParamStore tstore;
  TemporalParams tp = TemporalParams::create(tstore, "temporal", 3, 5, cfg, rng, false);
  auto pyramid = [&] {
    FeaturePyramid p;
    for (int64_t sz : {2, 3, 4}) p.levels.push_back(leaf({1, 3, sz, sz}, rng));
    p.global = leaf({1, 5}, rng);
    return p;
  };
  FeaturePyramid past = pyramid(), current = pyramid();
  s.check("temporal_fuse", [&] { return project(temporal_fuse({{past, current}, {}}, tp).global); },
          {{"past_global", past.global},
           {"past_level", past.levels[1]},
           {"current_global", current.global},
           {"temporal_pos", tp.temporal_pos},
           {"output", tp.output.weight}});
}

void body_model(Suite& s) {
  std::mt19937_64 rng(7);
  const ArticulatedMesh mesh = build_toy_mesh();
  Tensor aa = leaf({4, 3}, rng, 0.8);
  s.check("rodrigues", [&] { return project(rodrigues(aa)); }, {{"axis_angle", aa}});
  Tensor pose = leaf({1, mesh.num_joints, 3}, rng, 0.3), shape = leaf({1, mesh.num_shape}, rng);
  s.check("pose_shape_to_mesh", [&] {
    MeshOutput m = pose_shape_to_mesh(mesh, pose, shape);
    return project(m.vertices) + project(m.joints, 5);
  }, {{"pose", pose}, {"shape", shape}});
  Tensor pts = leaf({2, 5, 3}, rng), cam = leaf({2, 3}, rng);
  s.check("project_weak_perspective", [&] { return project(project_weak_perspective(pts, cam)); },
          {{"points", pts}, {"cam", cam}});
}

void regressor(Suite& s) {
  std::mt19937_64 rng(8);
  const ArticulatedMesh mesh = build_toy_mesh();
  const auto idx = mesh_downsample(mesh, 8);
  Tensor level = leaf({1, 3, 6, 6}, rng), global = leaf({1, 4}, rng);
  Tensor theta = Tensor::zeros({1, state_size(mesh)}) + initial_state(mesh, 0.9);
  theta = Tensor(theta.shape(), std::vector<double>(theta.values().begin(), theta.values().end()), true);
  {
    auto v = theta.mutable_values();
    std::normal_distribution<double> n(0.0, 0.1);
    for (int64_t i = 0; i < 3 * mesh.num_joints + mesh.num_shape; ++i) v[i] += n(rng);
  }
  s.check("mesh_aligned_features",
          [&] { return project(mesh_aligned_features(level, global, split_state(theta, mesh), mesh, idx)); },
          {{"theta", theta}, {"level", level}, {"global", global}});

  ParamStore store;
  RegressorConfig rc;
  rc.samples = 8;
  rc.hidden = 6;
  RegressorParams rp = RegressorParams::create(store, "regressor", mesh, 3, 4, rc, rng);
  randomize_zero_parameters(store, rng, 0.02);
  FeaturePyramid pyr;
  for (int64_t sz : {2, 4, 6}) pyr.levels.push_back(leaf({2, 3, sz, sz}, rng));
  pyr.global = leaf({2, 4}, rng);
  s.check("ief_loop", [&] { return project(ief_loop(pyr, mesh, rp).final()); },
          {{"level0", pyr.levels[0]}, {"global", pyr.global}, {"fc3", rp.nets[2].fc3.weight}}, kOpTolerance, 40);

  const auto samples = synth_generate(mesh, 2, 9, false, 1, 24);
  SampleTargets t;
  std::vector<double> kp, vis, joints, verts;
  for (const auto& r : samples) {
    for (int64_t k = 0; k < mesh.num_joints; ++k) {
      kp.push_back(pixel_to_normalized(r.keypoints[k * 3], r.width));
      kp.push_back(pixel_to_normalized(r.keypoints[k * 3 + 1], r.height));
      vis.push_back(k == 3 ? 0.0 : 1.0);
    }
    joints.insert(joints.end(), r.joints3d.begin(), r.joints3d.end());
    verts.insert(verts.end(), r.vertices3d.begin(), r.vertices3d.end());
  }
  t.keypoints2d = Tensor({2, mesh.num_joints, 2}, kp);
  t.keypoint_visibility = Tensor({2, mesh.num_joints}, vis);
  t.joints3d = Tensor({2, mesh.num_joints, 3}, joints);
  t.vertices3d = Tensor({2, mesh.num_vertices, 3}, verts);
  t.has_3d = {1, 0};
  DenseHeadParams dense = rp.dense;
  for (int64_t sz : {2, 4, 6}) {
    std::vector<double> labels(2 * sz * sz);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<double>((i * 7) % (mesh.num_parts + 1));
    t.part_labels.emplace_back(Shape{2, sz, sz}, labels);
    std::uniform_real_distribution<double> u(0.1, 0.9);
    std::vector<double> uv(2 * 2 * sz * sz);
    for (auto& v : uv) v = u(rng);
    t.uv_maps.emplace_back(Shape{2, 2, sz, sz}, uv);
  }
  Tensor states = leaf({2, state_size(mesh)}, rng, 0.2);
  s.check("total_loss", [&] {
    IefResult ief;
    ief.states = {states * 0.5, states};
    return total_loss(ief, aux_dense_head(pyr, dense), t, mesh, {}).total;
  }, {{"states", states}, {"level2", pyr.levels[2]}, {"uv_head", dense.uv[2].weight}}, kOpTolerance, 40);
}

void end_to_end(Suite& s) {
  std::mt19937_64 rng(10);
  auto model = Model::create(tiny_model_config(Variant::pycat4), 11);
  randomize_zero_parameters(model->store(), rng, 0.02);
  const auto data = synth_generate(model->mesh(), 2, 12, false, 1, model->config().image_size);
  const Batch batch = make_batch({{&data[0]}, {&data[1]}}, *model);
  Probes probes;
  for (const char* name :
       {"backbone.embed.proj.weight", "backbone.stage0.block1.attn.qkv.weight", "backbone.merge1.reduction.weight",
        "ca1.conv_h.weight", "fusion.aspp.pointwise.weight", "fusion.fpn.lateral1.weight",
        "temporal.temporal0.attn.qkv.weight", "temporal.output.weight", "regressor.ief0.fc1.weight",
        "regressor.ief2.fc3.weight", "regressor.dense.level2.parts.weight"}) {
    probes.emplace_back(name, model->store().get(name));
  }
  s.check("pycat4_loss", [&] {
    ModelOutput o = model->forward_window(batch.frames, batch.valid);
    return total_loss(o.ief, o.dense, batch.targets, model->mesh(), {}).total;
  }, probes, kEndToEndTolerance, 10);
}

struct ModuleEntry {
  std::string name;
  void (*run)(Suite&);
};

const std::vector<ModuleEntry>& entries() {
  static const std::vector<ModuleEntry> e = {
      {"tensor-engine", tensor_engine},     {"nn-layers", nn_layers},         {"coord-attention", coord_attention},
      {"swin-backbone", swin_backbone},     {"multiscale-fusion", multiscale_fusion},
      {"temporal-fusion", temporal_fusion}, {"body-model", body_model},       {"regressor", regressor},
      {"end-to-end", end_to_end},
  };
  return e;
}

}  // namespace

const std::vector<std::string>& grad_suite_modules() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& e : entries()) n.push_back(e.name);
    return n;
  }();
  return names;
}

std::vector<GradSuiteResult> run_grad_suite(const std::string& module,
                                            const std::function<void(const GradSuiteResult&)>& on_result) {
  bool known = module.empty();
  for (const auto& e : entries()) known = known || e.name == module;
  if (!known) {
    std::string list;
    for (const auto& n : grad_suite_modules()) list += (list.empty() ? "" : ", ") + n;
    throw ParseError("unknown module '" + module + "' (expected one of " + list + ")");
  }
  std::vector<GradSuiteResult> out;
  for (const auto& e : entries()) {
    if (!module.empty() && e.name != module) continue;
    Suite s{e.name, &out, &on_result};
    e.run(s);
  }
  return out;
}

}  // namespace pycat
