#include "pycat/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "pycat/checkpoint.hpp"
#include "pycat/nn.hpp"
#include "pycat/optim.hpp"

namespace pycat {

namespace {

constexpr const char* kMeshPrefix = "__mesh.";

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw IoError("failed writing '" + path.string() + "'");
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int64_t effective_frames(const Model& model, int64_t frames) {
  if (frames < 1) throw ContractError("window must hold at least one frame");
  return uses_temporal(model.config().variant) ? frames : 1;
}

void require_image(const SampleRecord& s, int64_t size) {
  if (s.height != size || s.width != size) {
    throw ContractError("sample '" + s.file + "' is " + std::to_string(s.height) + "x" + std::to_string(s.width) +
                        ", model expects " + std::to_string(size) + "x" + std::to_string(size));
  }
}

void require_keypoints(const SampleRecord& s, const ArticulatedMesh& mesh) {
  if (s.num_keypoints() != mesh.num_joints) {
    throw ContractError("sample '" + s.file + "' has " + std::to_string(s.num_keypoints()) +
                        " keypoints, the body model has " + std::to_string(mesh.num_joints));
  }
}

struct Inputs {
  std::vector<Tensor> frames;
  std::vector<uint8_t> valid;
};

Inputs make_inputs(const std::vector<std::vector<const SampleRecord*>>& windows, const Model& model) {
  if (windows.empty()) throw ContractError("batch needs at least one sample");
  const int64_t B = static_cast<int64_t>(windows.size());
  const int64_t T = static_cast<int64_t>(windows.front().size());
  const int64_t S = model.config().image_size;
  const int64_t plane = 3 * S * S;
  Inputs in;
  in.valid.assign(B * T, 0);
  std::vector<std::vector<double>> frames(T, std::vector<double>(B * plane, 0.0));
  for (int64_t b = 0; b < B; ++b) {
    if (static_cast<int64_t>(windows[b].size()) != T) throw DimensionError("windows in a batch must share a length");
    if (!windows[b].back()) throw ContractError("the current frame of a window cannot be padding");
    for (int64_t t = 0; t < T; ++t) {
      const SampleRecord* s = windows[b][t];
      if (!s) continue;
      require_image(*s, S);
      std::copy(s->image.begin(), s->image.end(), frames[t].begin() + b * plane);
      in.valid[b * T + t] = 1;
    }
  }
  for (auto& f : frames) in.frames.emplace_back(Shape{B, 3, S, S}, std::move(f));
  return in;
}

Tensor stack_points(const std::vector<const SampleRecord*>& samples, int64_t count,
                    const std::vector<double> SampleRecord::*field) {
  const int64_t B = static_cast<int64_t>(samples.size());
  std::vector<double> out(B * count * 3, 0.0);
  for (int64_t b = 0; b < B; ++b) {
    if (!samples[b]->has_3d) continue;
    const auto& v = samples[b]->*field;
    std::copy(v.begin(), v.end(), out.begin() + b * count * 3);
  }
  return Tensor({B, count, 3}, std::move(out));
}

SampleTargets make_targets(const std::vector<const SampleRecord*>& samples, const Model& model) {
  const ArticulatedMesh& mesh = model.mesh();
  const int64_t B = static_cast<int64_t>(samples.size());
  const int64_t K = mesh.num_joints;
  SampleTargets t;
  std::vector<double> kp(B * K * 2), vis(B * K);
  bool any3d = false, all_vertices = true, all_dense = true;
  for (int64_t b = 0; b < B; ++b) {
    const SampleRecord& s = *samples[b];
    require_keypoints(s, mesh);
    for (int64_t k = 0; k < K; ++k) {
      kp[(b * K + k) * 2] = pixel_to_normalized(s.keypoints[k * 3], s.width);
      kp[(b * K + k) * 2 + 1] = pixel_to_normalized(s.keypoints[k * 3 + 1], s.height);
      vis[b * K + k] = s.keypoints[k * 3 + 2] > 0 ? 1.0 : 0.0;
    }
    if (s.has_3d) {
      any3d = true;
      all_vertices = all_vertices && !s.vertices3d.empty();
    }
    all_dense = all_dense && s.has_dense();
  }
  t.keypoints2d = Tensor({B, K, 2}, std::move(kp));
  t.keypoint_visibility = Tensor({B, K}, std::move(vis));
  if (any3d) {
    t.has_3d.resize(B);
    for (int64_t b = 0; b < B; ++b) t.has_3d[b] = samples[b]->has_3d ? 1 : 0;
    t.joints3d = stack_points(samples, K, &SampleRecord::joints3d);
    if (all_vertices) t.vertices3d = stack_points(samples, mesh.num_vertices, &SampleRecord::vertices3d);
  }
  if (all_dense) {
    for (int64_t s : model.level_sizes()) {
      std::vector<double> labels(B * s * s), uv(B * 2 * s * s);
      for (int64_t b = 0; b < B; ++b) {
        const SampleRecord& r = *samples[b];
        const auto l = resample_labels(r.part_map, r.height, r.width, s);
        for (int64_t i = 0; i < s * s; ++i) labels[b * s * s + i] = l[i];
        for (int64_t c = 0; c < 2; ++c) {
          for (int64_t y = 0; y < s; ++y) {
            const int64_t sy = std::min(r.height - 1, (2 * y + 1) * r.height / (2 * s));
            for (int64_t x = 0; x < s; ++x) {
              const int64_t sx = std::min(r.width - 1, (2 * x + 1) * r.width / (2 * s));
              uv[((b * 2 + c) * s + y) * s + x] = r.uv_map[(c * r.height + sy) * r.width + sx];
            }
          }
        }
      }
      t.part_labels.emplace_back(Shape{B, s, s}, std::move(labels));
      t.uv_maps.emplace_back(Shape{B, 2, s, s}, std::move(uv));
    }
  }
  return t;
}

std::vector<std::vector<const SampleRecord*>> resolve(const std::vector<SampleRecord>& data,
                                                      const std::vector<std::vector<int64_t>>& windows,
                                                      const std::vector<int64_t>& picks) {
  std::vector<std::vector<const SampleRecord*>> out;
  for (int64_t i : picks) {
    std::vector<const SampleRecord*> w;
    for (int64_t j : windows[i]) w.push_back(j < 0 ? nullptr : &data[j]);
    out.push_back(std::move(w));
  }
  return out;
}

struct Decoded {
  Tensor state;      // [B,S]
  Tensor keypoints;  // [B,K,2] normalized
  MeshOutput mesh;
};

Decoded decode(const Model& model, const Tensor& state) {
  BodyState st = split_state(state, model.mesh());
  MeshOutput m = pose_shape_to_mesh(model.mesh(), st.pose, st.shape);
  return {state, project_weak_perspective(m.joints, st.cam), m};
}

std::vector<double> slice(const Tensor& t, int64_t b) {
  const int64_t n = t.numel() / t.size(0);
  const auto v = t.values();
  return std::vector<double>(v.begin() + b * n, v.begin() + (b + 1) * n);
}

std::vector<double> to_pixels(std::vector<double> normalized, int64_t width, int64_t height) {
  for (std::size_t i = 0; i < normalized.size(); i += 2) {
    normalized[i] = normalized_to_pixel(normalized[i], width);
    normalized[i + 1] = normalized_to_pixel(normalized[i + 1], height);
  }
  return normalized;
}

Points3 as_points(const std::vector<double>& v) {
  Points3 p(static_cast<Eigen::Index>(v.size() / 3), 3);
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (int c = 0; c < 3; ++c) p(i, c) = v[i * 3 + c];
  return p;
}

Points3 root_relative(const Points3& p, const Points3& joints) { return p.rowwise() - joints.row(0); }

std::string format_duration(double seconds) {
  char buf[64];
  if (seconds < 60.0) {
    std::snprintf(buf, sizeof buf, "%.3fs", seconds);
  } else {
    const int minutes = static_cast<int>(seconds / 60.0);
    std::snprintf(buf, sizeof buf, "%dm %.0fs", minutes, seconds - 60.0 * minutes);
  }
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------

void Fnv1a::update(uint64_t word) {
  for (int i = 0; i < 8; ++i) {
    hash_ ^= (word >> (8 * i)) & 0xff;
    hash_ *= 0x100000001b3ULL;
  }
}

void Fnv1a::update(const std::string& bytes) {
  for (unsigned char c : bytes) {
    hash_ ^= c;
    hash_ *= 0x100000001b3ULL;
  }
}

std::string Fnv1a::hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_));
  return buf;
}

std::vector<std::vector<int64_t>> causal_windows(const std::vector<SampleRecord>& data, int64_t frames) {
  if (frames < 1) throw ContractError("window must hold at least one frame");
  std::map<std::pair<int64_t, int64_t>, int64_t> index;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data[i].sequence >= 0) index[{data[i].sequence, data[i].frame}] = static_cast<int64_t>(i);
  std::vector<std::vector<int64_t>> out(data.size(), std::vector<int64_t>(frames, -1));
  for (std::size_t i = 0; i < data.size(); ++i) {
    out[i][frames - 1] = static_cast<int64_t>(i);
    if (data[i].sequence < 0) continue;
    for (int64_t back = 1; back < frames; ++back) {
      auto it = index.find({data[i].sequence, data[i].frame - back});
      if (it != index.end()) out[i][frames - 1 - back] = it->second;
    }
  }
  return out;
}

std::vector<int> resample_labels(const std::vector<int>& labels, int64_t height, int64_t width, int64_t size) {
  if (static_cast<int64_t>(labels.size()) != height * width) throw DimensionError("label map size mismatch");
  std::vector<int> out(size * size);
  for (int64_t y = 0; y < size; ++y) {
    const int64_t sy = std::min(height - 1, (2 * y + 1) * height / (2 * size));
    for (int64_t x = 0; x < size; ++x) {
      const int64_t sx = std::min(width - 1, (2 * x + 1) * width / (2 * size));
      out[y * size + x] = labels[sy * width + sx];
    }
  }
  return out;
}

Batch make_batch(const std::vector<std::vector<const SampleRecord*>>& windows, const Model& model) {
  Inputs in = make_inputs(windows, model);
  std::vector<const SampleRecord*> current;
  for (const auto& w : windows) current.push_back(w.back());
  return {std::move(in.frames), std::move(in.valid), make_targets(current, model)};
}

// ---------------------------------------------------------------------------
// Training

TrainResult train(const RunConfig& cfg, const std::vector<SampleRecord>& data, const TrainOptions& opts) {
  if (data.empty()) throw ContractError("training needs at least one sample");
  TrainResult result;
  result.model = Model::create(cfg.model, cfg.seed);
  Model& model = *result.model;
  const int64_t T = effective_frames(model, cfg.frames);
  const int64_t S = cfg.model.image_size;
  const auto windows = causal_windows(data, T);
  for (const auto& s : data) {
    require_image(s, S);
    require_keypoints(s, model.mesh());
  }

  std::mt19937_64 order_rng(cfg.seed ^ 0x6a09e667f3bcc908ULL);
  std::mt19937_64 aug_rng(cfg.seed ^ 0xbb67ae8584caa73bULL);
  std::vector<int64_t> perm(data.size());
  std::size_t cursor = perm.size();
  Fnv1a digest;

  Adam adam(model.store().parameters(), AdamOptions{cfg.lr});
  if (!opts.out_dir.empty()) std::filesystem::create_directories(opts.out_dir);

  for (int64_t step = 0; step < cfg.steps; ++step) {
    std::vector<int64_t> picks;
    while (static_cast<int64_t>(picks.size()) < cfg.batch) {
      if (cursor == perm.size()) {
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), order_rng);
        cursor = 0;
      }
      picks.push_back(perm[cursor++]);
    }
    std::sort(picks.begin(), picks.end());
    for (int64_t i : picks) digest.update(static_cast<uint64_t>(i));

    std::vector<std::vector<SampleRecord>> owned;
    std::vector<std::vector<const SampleRecord*>> batch_windows;
    for (int64_t i : picks) {
      const Affine2 a = cfg.augment ? sample_affine(cfg.ranges, S, aug_rng) : Affine2{};
      std::vector<SampleRecord> w;
      for (int64_t j : windows[i]) w.push_back(j < 0 ? SampleRecord{} : apply_affine(data[j], a));
      owned.push_back(std::move(w));
    }
    for (std::size_t b = 0; b < owned.size(); ++b) {
      std::vector<const SampleRecord*> w;
      for (std::size_t t = 0; t < owned[b].size(); ++t)
        w.push_back(windows[picks[b]][t] < 0 ? nullptr : &owned[b][t]);
      batch_windows.push_back(std::move(w));
    }
    Batch batch = make_batch(batch_windows, model);

    StepLog log;
    log.step = step;
    Gradients grads;
    {
      Tape tape;
      TapeScope scope(tape);
      ModelOutput out = model.forward_window(batch.frames, batch.valid);
      LossResult loss = total_loss(out.ief, out.dense, batch.targets, model.mesh(), cfg.loss);
      for (const auto& term : loss.terms) {
        const double v = term.value.item();
        if (!std::isfinite(v)) {
          throw NumericError("step " + std::to_string(step) + ": loss term '" + term.name + "' is not finite");
        }
        log.terms.emplace_back(term.name, v);
      }
      log.total = loss.total.item();
      if (!std::isfinite(log.total)) throw NumericError("step " + std::to_string(step) + ": total loss is not finite");
      grads = tape.backward(loss.total);
    }
    adam.step(grads);
    result.curve.push_back(log);
    if (opts.on_step) opts.on_step(log);

    if (!opts.out_dir.empty() && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
        step + 1 < cfg.steps) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%06lld.ckpt", static_cast<long long>(step + 1));
      save_model(opts.out_dir / name, model, cfg);
      write_text(opts.out_dir / "loss_curve.csv", format_loss_curve(result.curve));
    }
  }
  result.data_digest = digest.hex();

  if (!opts.out_dir.empty()) {
    save_model(opts.out_dir / "model.ckpt", model, cfg);
    write_text(opts.out_dir / "loss_curve.csv", format_loss_curve(result.curve));
    nlohmann::ordered_json summary;
    summary["variant"] = variant_id(cfg.model.variant);
    summary["steps"] = cfg.steps;
    summary["parameters"] = model.store().total_size();
    summary["data_digest"] = result.data_digest;
    if (!result.curve.empty()) {
      summary["initial_loss"] = result.curve.front().total;
      summary["final_loss"] = result.curve.back().total;
    }
    write_text(opts.out_dir / "train_summary.json", summary.dump(2) + "\n");
  }
  return result;
}

std::string format_loss_curve(const std::vector<StepLog>& curve) {
  std::vector<std::string> columns;
  for (const auto& log : curve)
    for (const auto& [name, _] : log.terms)
      if (std::find(columns.begin(), columns.end(), name) == columns.end()) columns.push_back(name);
  std::string out = "step,total";
  for (const auto& c : columns) out += "," + c;
  out += "\n";
  auto shortest = [](double v) {
    char buf[32];
    return std::string(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
  };
  for (const auto& log : curve) {
    out += std::to_string(log.step) + "," + shortest(log.total);
    for (const auto& c : columns) {
      out += ",";
      for (const auto& [name, v] : log.terms)
        if (name == c) out += shortest(v);
    }
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_model(const std::filesystem::path& path, const Model& model, const RunConfig& cfg) {
  std::map<std::string, Tensor> tensors = model.store().named();
  const ArticulatedMesh& m = model.mesh();
  const std::string p = kMeshPrefix;
  tensors.emplace(p + "template_vertices", m.template_t);
  tensors.emplace(p + "shape_basis", m.basis_t);
  tensors.emplace(p + "joint_regressor", m.regressor_t);
  tensors.emplace(p + "skinning_weights", m.weights_t);
  save_checkpoint(path, tensors);
  RunConfig c = cfg;
  c.model = model.config();
  write_text(path.string() + ".cfg", format_config(c));
}

std::unique_ptr<Model> load_model(const std::filesystem::path& path, RunConfig* cfg_out) {
  const std::filesystem::path sidecar = path.string() + ".cfg";
  if (!std::filesystem::exists(sidecar)) {
    throw LoadError(path.string() + ": missing config sidecar '" + sidecar.string() + "'");
  }
  RunConfig cfg;
  try {
    cfg = parse_config(read_text(sidecar));
  } catch (const ParseError& e) {
    throw LoadError(sidecar.string() + ": " + e.what());
  }
  auto model = Model::create(cfg.model, cfg.seed);
  auto stored = read_checkpoint(path);
  const ArticulatedMesh& m = model->mesh();
  const std::pair<std::string, const Tensor*> constants[] = {{"template_vertices", &m.template_t},
                                                              {"shape_basis", &m.basis_t},
                                                              {"joint_regressor", &m.regressor_t},
                                                              {"skinning_weights", &m.weights_t}};
  for (const auto& [name, expected] : constants) {
    auto it = stored.find(kMeshPrefix + name);
    if (it == stored.end()) throw LoadError(path.string() + ": missing mesh constant '" + name + "'");
    const auto a = it->second.values();
    const auto b = expected->values();
    if (it->second.shape() != expected->shape() || !std::equal(a.begin(), a.end(), b.begin())) {
      throw LoadError(path.string() + ": mesh constant '" + name + "' differs from the built-in body model");
    }
    stored.erase(it);
  }
  assign_parameters(stored, model->store(), path.string());
  if (cfg_out) *cfg_out = cfg;
  return model;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalMode parse_eval_mode(const std::string& s) {
  if (s == "2d") return EvalMode::d2;
  if (s == "3d") return EvalMode::d3;
  throw ParseError("unknown evaluation mode '" + s + "' (expected 2d or 3d)");
}

std::vector<Prediction> predict(const Model& model, const std::vector<SampleRecord>& data, int64_t frames,
                                int64_t batch) {
  if (batch < 1) throw ContractError("batch must be positive");
  const int64_t T = effective_frames(model, frames);
  const auto windows = causal_windows(data, T);
  NoGradScope no_grad;
  std::vector<Prediction> out;
  for (std::size_t start = 0; start < data.size(); start += batch) {
    std::vector<int64_t> picks;
    for (std::size_t i = start; i < std::min(data.size(), start + batch); ++i) picks.push_back(static_cast<int64_t>(i));
    Inputs in = make_inputs(resolve(data, windows, picks), model);
    ModelOutput o = model.forward_window(in.frames, in.valid);
    Decoded d = decode(model, o.ief.final());
    const Tensor fg = 1.0 - narrow(softmax(o.dense.logits.back(), 1), 1, 0, 1);
    const Tensor at_joints = nn::grid_sample_bilinear(fg, d.keypoints);  // [B,1,K]
    for (std::size_t b = 0; b < picks.size(); ++b) {
      const SampleRecord& s = data[picks[b]];
      Prediction p;
      p.state = slice(d.state, b);
      p.keypoints2d = to_pixels(slice(d.keypoints, b), s.width, s.height);
      p.joints3d = slice(d.mesh.joints, b);
      p.vertices3d = slice(d.mesh.vertices, b);
      const auto conf = slice(at_joints, b);
      p.score = std::clamp(std::accumulate(conf.begin(), conf.end(), 0.0) / static_cast<double>(conf.size()), 0.0, 1.0);
      out.push_back(std::move(p));
    }
  }
  return out;
}

std::vector<Prediction> oracle_predictions(const std::vector<SampleRecord>& data) {
  std::vector<Prediction> out;
  for (const auto& s : data) {
    Prediction p;
    p.state = s.theta;
    for (int64_t k = 0; k < s.num_keypoints(); ++k) {
      p.keypoints2d.push_back(s.keypoints[k * 3]);
      p.keypoints2d.push_back(s.keypoints[k * 3 + 1]);
    }
    p.joints3d = s.joints3d;
    p.vertices3d = s.vertices3d;
    p.score = 1.0;
    out.push_back(std::move(p));
  }
  return out;
}

MetricsReport score_predictions(const std::vector<Prediction>& preds, const std::vector<SampleRecord>& data,
                                EvalMode mode, const std::vector<double>& sigmas, const std::string& model_name) {
  if (preds.size() != data.size()) throw ContractError("one prediction per sample is required");
  if (data.empty()) throw ContractError("evaluation needs at least one sample");
  MetricsReport report{model_name, std::nullopt, std::nullopt};
  if (mode == EvalMode::d3) {
    Metrics3d m;
    int64_t n = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const SampleRecord& s = data[i];
      if (!s.has_3d) continue;
      if (preds[i].joints3d.size() != s.joints3d.size() || preds[i].vertices3d.size() != s.vertices3d.size()) {
        throw ContractError("prediction " + std::to_string(i) + " does not match the ground-truth point counts");
      }
      const Points3 pj = as_points(preds[i].joints3d), gj = as_points(s.joints3d);
      const Points3 pr = root_relative(pj, pj), gr = root_relative(gj, gj);
      m.mpjpe += mpjpe(pr, gr);
      m.pa_mpjpe += pa_mpjpe(pr, gr);
      m.pve += pve(root_relative(as_points(preds[i].vertices3d), pj), root_relative(as_points(s.vertices3d), gj));
      ++n;
    }
    if (n == 0) throw ContractError("3D evaluation needs samples with 3D ground truth");
    m.mpjpe /= static_cast<double>(n);
    m.pa_mpjpe /= static_cast<double>(n);
    m.pve /= static_cast<double>(n);
    report.m3d = m;
  } else {
    std::vector<ImageKeypoints> images;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const SampleRecord& s = data[i];
      const int64_t K = s.num_keypoints();
      if (static_cast<int64_t>(preds[i].keypoints2d.size()) != 2 * K) {
        throw ContractError("prediction " + std::to_string(i) + " has the wrong keypoint count");
      }
      KeypointTruth truth;
      truth.keypoints.resize(K, 2);
      KeypointDetection det;
      det.keypoints.resize(K, 2);
      for (int64_t k = 0; k < K; ++k) {
        truth.keypoints(k, 0) = s.keypoints[k * 3];
        truth.keypoints(k, 1) = s.keypoints[k * 3 + 1];
        truth.visible.push_back(s.keypoints[k * 3 + 2] > 0 ? 1 : 0);
        det.keypoints(k, 0) = preds[i].keypoints2d[k * 2];
        det.keypoints(k, 1) = preds[i].keypoints2d[k * 2 + 1];
      }
      truth.area = s.area;
      det.score = preds[i].score;
      images.push_back({{truth}, {det}});
    }
    report.m2d = summarize_2d(ap_ar(images, coco_thresholds(), sigmas));
  }
  return report;
}

MetricsReport evaluate(const Model& model, const std::vector<SampleRecord>& data, EvalMode mode, int64_t frames,
                       const std::vector<double>& sigmas) {
  return score_predictions(predict(model, data, frames), data, mode, sigmas, display_name(model.config().variant));
}

// ---------------------------------------------------------------------------
// Ablation

std::vector<SampleRecord> synthetic_train_set(const RunConfig& cfg, const ArticulatedMesh& mesh) {
  return synth_generate(mesh, cfg.train_count, cfg.data_seed, cfg.video, cfg.sequence_length, cfg.model.image_size);
}

std::vector<SampleRecord> synthetic_eval_set(const RunConfig& cfg, const ArticulatedMesh& mesh) {
  return synth_generate(mesh, cfg.eval_count, cfg.data_seed ^ 0x3c6ef372fe94f82bULL, cfg.video, cfg.sequence_length,
                        cfg.model.image_size);
}

AblationResult ablate(const RunConfig& base, const std::filesystem::path& out_dir,
                      const std::function<void(const std::string&)>& log) {
  const ArticulatedMesh mesh = build_toy_mesh();
  const auto train_data = synthetic_train_set(base, mesh);
  const auto eval_data = synthetic_eval_set(base, mesh);
  const std::vector<double> sigmas(mesh.num_joints, base.oks_sigma);
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  AblationResult result;
  for (Variant v : all_variants()) {
    RunConfig cfg = base;
    cfg.model.variant = v;
    if (!uses_temporal(v)) cfg.frames = 1;
    if (log) log("training " + display_name(v));
    TrainOptions opts;
    if (!out_dir.empty()) opts.out_dir = out_dir / variant_id(v);
    TrainResult trained = train(cfg, train_data, opts);
    const auto preds = predict(*trained.model, eval_data, cfg.frames);
    MetricsReport r = score_predictions(preds, eval_data, EvalMode::d3, sigmas, display_name(v));
    r.m2d = score_predictions(preds, eval_data, EvalMode::d2, sigmas, display_name(v)).m2d;
    result.reports.push_back(std::move(r));
    result.digests.push_back(trained.data_digest);
    if (log) log(display_name(v) + " data digest " + trained.data_digest);
  }
  result.table_csv = format_report(result.reports, ReportFormat::csv);
  result.table_text = format_report(result.reports, ReportFormat::text);
  if (!out_dir.empty()) {
    write_text(out_dir / "ablation.csv", result.table_csv);
    write_text(out_dir / "ablation.txt", result.table_text);
    std::string digests;
    for (std::size_t i = 0; i < result.digests.size(); ++i)
      digests += variant_id(all_variants()[i]) + " " + result.digests[i] + "\n";
    write_text(out_dir / "digests.txt", digests);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Stream

StreamResult stream(const Model& model, const std::filesystem::path& dir, int64_t frames,
                    const std::function<void(const StreamRecord&)>& on_record) {
  using Clock = std::chrono::steady_clock;
  auto seconds = [](Clock::time_point a, Clock::time_point b) { return std::chrono::duration<double>(b - a).count(); };
  const int64_t T = effective_frames(model, frames);
  const int64_t S = model.config().image_size;

  if (!std::filesystem::is_directory(dir)) throw IoError("frames directory '" + dir.string() + "' does not exist");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".ppm" || ext == ".pgm" || ext == ".pnm")) files.push_back(e.path());
  }
  if (files.empty()) throw ContractError("no frame files (.ppm, .pgm, .pnm) in '" + dir.string() + "'");
  std::sort(files.begin(), files.end(),
            [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });

  NoGradScope no_grad;
  StreamResult result;
  std::deque<FeaturePyramid> window;
  int64_t index = 0;
  for (const auto& file : files) {
    auto t0 = Clock::now();
    int64_t h = 0, w = 0;
    std::vector<double> pixels;
    try {
      pixels = read_pnm(file, h, w);
    } catch (const Error& e) {
      result.warnings.push_back("skipping " + file.filename().string() + ": " + e.what());
      result.times.tracker += seconds(t0, Clock::now());
      continue;
    }
    Tensor image({1, 3, h, w}, std::move(pixels));
    if (h != S || w != S) image = nn::bilinear_resize(image, S, S);
    auto t1 = Clock::now();

    window.push_back(model.pyramid(image));
    if (static_cast<int64_t>(window.size()) > T) window.pop_front();
    ModelOutput out = model.forward_pyramids({window.begin(), window.end()}, {});
    auto t2 = Clock::now();

    Decoded d = decode(model, out.ief.final());
    StreamRecord rec;
    rec.index = index++;
    rec.file = file.filename().string();
    rec.state = slice(d.state, 0);
    rec.keypoints2d = to_pixels(slice(d.keypoints, 0), w, h);
    if (on_record) on_record(rec);
    result.records.push_back(std::move(rec));
    auto t3 = Clock::now();

    result.times.tracker += seconds(t0, t1);
    result.times.reconstruction += seconds(t1, t2);
    result.times.rendering += seconds(t2, t3);
    ++result.times.frames;
  }
  return result;
}

std::string format_stream_record(const StreamRecord& r) {
  nlohmann::ordered_json j;
  j["frame"] = r.index;
  j["file"] = r.file;
  j["state"] = r.state;
  nlohmann::ordered_json kp = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i + 1 < r.keypoints2d.size(); i += 2) kp.push_back({r.keypoints2d[i], r.keypoints2d[i + 1]});
  j["keypoints2d"] = kp;
  return j.dump();
}

std::string format_stage_times(const StageTimes& t, const std::string& model_name) {
  const double total = t.tracker + t.reconstruction + t.rendering;
  const std::pair<std::string, std::string> rows[] = {
      {"Task", model_name},
      {"Tracker", format_duration(t.tracker)},
      {"Reconstruction", format_duration(t.reconstruction)},
      {"Rendering Output", format_duration(t.rendering)},
      {"Total", format_duration(total)},
  };
  std::size_t w0 = 0, w1 = 0;
  for (const auto& [a, b] : rows) {
    w0 = std::max(w0, a.size());
    w1 = std::max(w1, b.size());
  }
  char fps[64];
  std::snprintf(fps, sizeof fps, "%.2f", total > 0 ? static_cast<double>(t.frames) / total : 0.0);
  std::ostringstream os;
  os << "Processing time for a " << t.frames << "-frame clip\n";
  for (std::size_t i = 0; i < std::size(rows); ++i) {
    os << rows[i].first << std::string(w0 - rows[i].first.size() + 2, ' ')
       << std::string(w1 - rows[i].second.size(), ' ') << rows[i].second << "\n";
    if (i == 0) os << std::string(w0 + 2 + w1, '-') << "\n";
  }
  os << "Frames/sec" << std::string(w0 - 10 + 2, ' ') << fps << "\n";
  return os.str();
}

}  // namespace pycat
