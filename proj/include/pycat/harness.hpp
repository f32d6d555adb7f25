#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pycat/config.hpp"
#include "pycat/data.hpp"
#include "pycat/metrics.hpp"
#include "pycat/model.hpp"

namespace pycat {

/// 64-bit FNV-1a over little-endian words.
class Fnv1a {
 public:
  void update(uint64_t word);
  void update(const std::string& bytes);
  uint64_t value() const { return hash_; }
  std::string hex() const;

 private:
  uint64_t hash_ = 0xcbf29ce484222325ULL;
};

/// Per sample, the indices of its causal window of `frames` entries, oldest
/// first and the sample itself last. Entries before the start of a sequence
/// (or any past entry of a still image) are -1.
std::vector<std::vector<int64_t>> causal_windows(const std::vector<SampleRecord>& data, int64_t frames);

/// Nearest-neighbour resampling of a [H,W] label map to [size,size].
std::vector<int> resample_labels(const std::vector<int>& labels, int64_t height, int64_t width, int64_t size);

struct Batch {
  std::vector<Tensor> frames;  // T tensors [B,3,S,S], oldest first
  std::vector<uint8_t> valid;  // B*T
  SampleTargets targets;
};

/// Stacks windows of samples (already augmented) into model input and
/// targets. Padding entries are null and become invalid zero frames. Throws
/// ContractError when an image does not match the model resolution.
Batch make_batch(const std::vector<std::vector<const SampleRecord*>>& windows, const Model& model);

struct StepLog {
  int64_t step = 0;
  double total = 0.0;
  std::vector<std::pair<std::string, double>> terms;
};

struct TrainResult {
  std::unique_ptr<Model> model;
  std::vector<StepLog> curve;
  std::string data_digest;
};

struct TrainOptions {
  std::filesystem::path out_dir;             // empty: no files written
  std::function<void(const StepLog&)> on_step;
};

/// Adam without decay over seeded shuffled batches with per-step
/// augmentation. Throws NumericError naming the first non-finite term.
TrainResult train(const RunConfig& cfg, const std::vector<SampleRecord>& data, const TrainOptions& opts = {});

std::string format_loss_curve(const std::vector<StepLog>& curve);

/// Parameters plus the mesh constants (reserved "__mesh." names), with the
/// run config in a `<path>.cfg` sidecar.
void save_model(const std::filesystem::path& path, const Model& model, const RunConfig& cfg);
/// Rebuilds the model from the sidecar config and loads every parameter.
/// Throws LoadError for incompatible checkpoints.
std::unique_ptr<Model> load_model(const std::filesystem::path& path, RunConfig* cfg_out = nullptr);

enum class EvalMode { d2, d3 };
EvalMode parse_eval_mode(const std::string& s);  // "2d" or "3d"

struct Prediction {
  std::vector<double> state;        // [S]
  std::vector<double> keypoints2d;  // [K,2] pixels
  std::vector<double> joints3d;     // [K,3]
  std::vector<double> vertices3d;   // [N,3]
  double score = 0.0;               // detection confidence in [0,1]
};

/// Inference over `data` with causal windows of `frames`, `batch` samples at
/// a time. Scores are the mean foreground probability of the finest dense
/// head level at the projected joints.
std::vector<Prediction> predict(const Model& model, const std::vector<SampleRecord>& data, int64_t frames,
                                int64_t batch = 8);

/// Ground truth re-packaged as predictions with score 1.
std::vector<Prediction> oracle_predictions(const std::vector<SampleRecord>& data);

/// 3D metrics are root-relative, in millimetres, over samples with 3D ground
/// truth; 2D metrics treat every sample as one image holding one person.
MetricsReport score_predictions(const std::vector<Prediction>& preds, const std::vector<SampleRecord>& data,
                                EvalMode mode, const std::vector<double>& sigmas, const std::string& model_name);

MetricsReport evaluate(const Model& model, const std::vector<SampleRecord>& data, EvalMode mode, int64_t frames,
                       const std::vector<double>& sigmas);

/// Synthetic train and held-out sets drawn from the config's data settings.
std::vector<SampleRecord> synthetic_train_set(const RunConfig& cfg, const ArticulatedMesh& mesh);
std::vector<SampleRecord> synthetic_eval_set(const RunConfig& cfg, const ArticulatedMesh& mesh);

struct AblationResult {
  std::vector<MetricsReport> reports;  // ladder order
  std::vector<std::string> digests;    // data-order digest per variant
  std::string table_csv;
  std::string table_text;
};

/// Trains and evaluates every variant with the base config's seeds, data and
/// schedule. Writes per-variant checkpoints and curves under `out_dir` when
/// it is not empty.
AblationResult ablate(const RunConfig& base, const std::filesystem::path& out_dir = {},
                      const std::function<void(const std::string&)>& log = {});

struct StreamRecord {
  int64_t index = 0;
  std::string file;
  std::vector<double> state;
  std::vector<double> keypoints2d;  // [K,2] pixels
};

struct StageTimes {
  double tracker = 0.0;         // frame decoding and window upkeep
  double reconstruction = 0.0;  // network inference
  double rendering = 0.0;       // mesh posing and record output
  int64_t frames = 0;
};

struct StreamResult {
  std::vector<StreamRecord> records;
  std::vector<std::string> warnings;
  StageTimes times;
};

/// Frame-by-frame inference over the PNM files of `dir` in lexicographic
/// order with a rolling causal window of `frames`. Unreadable frames are
/// skipped with a warning; no frame files at all is a ContractError.
StreamResult stream(const Model& model, const std::filesystem::path& dir, int64_t frames,
                    const std::function<void(const StreamRecord&)>& on_record = {});

std::string format_stream_record(const StreamRecord& r);
std::string format_stage_times(const StageTimes& t, const std::string& model_name);

}  // namespace pycat
