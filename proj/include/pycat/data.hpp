#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "pycat/body_model.hpp"

namespace pycat {

/// One annotated image or video frame. Keypoints are pixel coordinates with
/// pixel centres at integer positions; 3D fields are metres in model space.
struct SampleRecord {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<double> image;      // [3,H,W] in [0,1]
  std::vector<double> keypoints;  // [K,3] as (x, y, visibility)
  double area = 0.0;              // person area in square pixels
  bool has_3d = false;
  std::vector<double> joints3d;    // [K,3]
  std::vector<double> vertices3d;  // [N,3]
  std::vector<double> theta;       // flattened body state, empty when unknown
  std::vector<int> part_map;       // [H,W], 0 background, 1..P body parts
  std::vector<double> uv_map;      // [2,H,W]
  int64_t sequence = -1;
  int64_t frame = 0;
  std::string file;

  int64_t num_keypoints() const { return static_cast<int64_t>(keypoints.size() / 3); }
  bool has_dense() const { return !part_map.empty(); }
};

/// Throws ContractError when the record breaks its invariants.
void validate_sample(const SampleRecord& s);

/// Keypoint pixel <-> normalized [-1,1] coordinates (half-pixel centres).
double pixel_to_normalized(double p, int64_t extent);
double normalized_to_pixel(double x, int64_t extent);

/// Renders the posed toy mesh: flat-shaded parts over uniform noise, with a
/// Gaussian blob at every joint. Ground truth is derived from the same pose.
SampleRecord render_sample(const ArticulatedMesh& mesh, const std::vector<double>& theta, int64_t size,
                           std::mt19937_64& rng);

/// Random plausible body state (flattened, pose | shape | cam).
std::vector<double> sample_body_state(const ArticulatedMesh& mesh, std::mt19937_64& rng);

/// `count` samples; video mode yields sequences of `frames` frames that follow
/// a smooth random trajectory between two body states.
std::vector<SampleRecord> synth_generate(const ArticulatedMesh& mesh, int64_t count, uint64_t seed, bool video,
                                         int64_t frames, int64_t size);

struct AugmentRanges {
  double rotation_deg = 30.0;
  double scale_min = 0.8;
  double scale_max = 1.2;
  double crop = 0.1;  // translation jitter, fraction of the image size
};

struct Affine2 {
  double angle = 0.0;  // radians
  double scale = 1.0;
  double dx = 0.0;
  double dy = 0.0;

  bool identity() const { return angle == 0.0 && scale == 1.0 && dx == 0.0 && dy == 0.0; }
};

Affine2 sample_affine(const AugmentRanges& ranges, int64_t size, std::mt19937_64& rng);

/// Applies p' = c + scale R(angle) (p - c) + (dx, dy) about the image centre
/// to the image, keypoints, dense maps and (as an in-plane rotation) the 3D
/// ground truth. Keypoints leaving the frame lose visibility; the body state
/// ground truth is dropped for any non-identity transform.
SampleRecord apply_affine(const SampleRecord& s, const Affine2& a);

SampleRecord augment(const SampleRecord& s, const AugmentRanges& ranges, std::mt19937_64& rng);

// Binary PPM (P6) and PGM (P5), 8 bits per channel.
void write_ppm(const std::filesystem::path& path, int64_t height, int64_t width, const std::vector<double>& chw);
void write_pgm(const std::filesystem::path& path, int64_t height, int64_t width, const std::vector<double>& hw);
/// Reads P5 or P6; gray images are replicated across three channels.
/// Returns [C,H,W] in [0,1] with C = 3, or 1 when `gray` is requested.
std::vector<double> read_pnm(const std::filesystem::path& path, int64_t& height, int64_t& width,
                             bool gray = false);

/// Writes images/, parts/, uv/ and annotations.json under `dir`.
void export_annotations(const std::filesystem::path& dir, const std::vector<SampleRecord>& samples,
                        const ArticulatedMesh& mesh);

/// Parses the COCO-keypoints-compatible subset written by export_annotations.
/// Throws ParseError with field context for schema violations and IoError
/// naming any missing image file. `sigmas` receives per-keypoint constants
/// when the category provides them.
std::vector<SampleRecord> ingest_annotations(const std::filesystem::path& path, std::vector<double>* sigmas = nullptr);

}  // namespace pycat
