#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>

#include "pycat/data.hpp"
#include "pycat/error.hpp"

using namespace pycat;
namespace fs = std::filesystem;

namespace {

const ArticulatedMesh& mesh() {
  static const ArticulatedMesh m = build_toy_mesh();
  return m;
}

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("pycat_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(PixelCoordinates, RoundTrip) {
  for (double p : {0.0, 3.5, 111.0}) EXPECT_NEAR(normalized_to_pixel(pixel_to_normalized(p, 112), 112), p, 1e-12);
  EXPECT_DOUBLE_EQ(normalized_to_pixel(-1.0, 112), -0.5);
  EXPECT_DOUBLE_EQ(normalized_to_pixel(1.0, 112), 111.5);
}

TEST(Synth, KeypointsMatchReprojection) {
  auto data = synth_generate(mesh(), 6, 1, false, 1, 112);
  ASSERT_EQ(data.size(), 6u);
  for (const auto& s : data) {
    validate_sample(s);
    NoGradScope ng;
    BodyState st = split_state(Tensor({1, state_size(mesh())}, s.theta), mesh());
    MeshOutput out = pose_shape_to_mesh(mesh(), st.pose, st.shape);
    Tensor kp = project_weak_perspective(out.joints, st.cam);
    for (int64_t k = 0; k < 16; ++k) {
      EXPECT_NEAR(normalized_to_pixel(kp.values()[k * 2], 112), s.keypoints[k * 3], 1e-6);
      EXPECT_NEAR(normalized_to_pixel(kp.values()[k * 2 + 1], 112), s.keypoints[k * 3 + 1], 1e-6);
      EXPECT_NEAR(out.joints.values()[k * 3 + 2], s.joints3d[k * 3 + 2], 1e-12);
    }
  }
}

TEST(Synth, DeterministicForSeed) {
  auto a = synth_generate(mesh(), 4, 7, false, 1, 112);
  auto b = synth_generate(mesh(), 4, 7, false, 1, 112);
  auto c = synth_generate(mesh(), 4, 8, false, 1, 112);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].keypoints, b[i].keypoints);
    EXPECT_EQ(a[i].part_map, b[i].part_map);
  }
  EXPECT_NE(a[0].image, c[0].image);
}

TEST(Synth, EverySampleHasForeground) {
  auto data = synth_generate(mesh(), 40, 3, false, 1, 112);
  for (const auto& s : data) {
    int64_t fg = 0;
    for (int v : s.part_map) {
      fg += v > 0;
      EXPECT_LE(v, static_cast<int>(mesh().num_parts));
    }
    EXPECT_GT(fg, 0);
    EXPECT_EQ(s.area, static_cast<double>(fg));
    for (double v : s.image) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
    for (double v : s.uv_map) EXPECT_TRUE(v >= 0.0 && v <= 1.0 + 1e-12);
  }
}

TEST(Synth, VideoSequencesAreSmooth) {
  auto data = synth_generate(mesh(), 10, 4, true, 5, 112);
  ASSERT_EQ(data.size(), 10u);
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(data[i].sequence, static_cast<int64_t>(i / 5));
    EXPECT_EQ(data[i].frame, static_cast<int64_t>(i % 5));
  }
  // Consecutive frames move keypoints by less than a disjoint pair of draws would.
  double step = 0.0;
  for (int t = 0; t + 1 < 5; ++t)
    for (int64_t k = 0; k < 48; k += 3) step = std::max(step, std::abs(data[t].keypoints[k] - data[t + 1].keypoints[k]));
  EXPECT_LT(step, 20.0);
  EXPECT_EQ(data[0].theta[3 * 16], data[4].theta[3 * 16]);
}

TEST(Augment, IdentityLeavesSampleUnchanged) {
  auto s = synth_generate(mesh(), 1, 5, false, 1, 112)[0];
  std::mt19937_64 rng(5);
  SampleRecord o = augment(s, {0.0, 1.0, 1.0, 0.0}, rng);
  EXPECT_EQ(o.image, s.image);
  EXPECT_EQ(o.keypoints, s.keypoints);
  EXPECT_EQ(o.part_map, s.part_map);
  EXPECT_EQ(o.joints3d, s.joints3d);
  EXPECT_EQ(o.theta, s.theta);
}

TEST(Augment, QuarterTurnMatchesAnalyticRotation) {
  auto s = synth_generate(mesh(), 1, 6, false, 1, 112)[0];
  const double c = 55.5;
  SampleRecord o = apply_affine(s, {std::numbers::pi / 2.0, 1.0, 0.0, 0.0});
  for (int64_t k = 0; k < 16; ++k) {
    const double x = s.keypoints[k * 3], y = s.keypoints[k * 3 + 1];
    EXPECT_NEAR(o.keypoints[k * 3], c - (y - c), 0.5);
    EXPECT_NEAR(o.keypoints[k * 3 + 1], c + (x - c), 0.5);
    EXPECT_NEAR(o.joints3d[k * 3], -s.joints3d[k * 3 + 1], 1e-12);
    EXPECT_NEAR(o.joints3d[k * 3 + 1], s.joints3d[k * 3], 1e-12);
  }
  // Pixel (x, y) lands at (c - (y - c), c + (x - c)); a quarter turn is exact on the grid.
  for (int64_t y = 0; y < 112; y += 7)
    for (int64_t x = 0; x < 112; x += 5) {
      const int64_t nx = 111 - y, ny = x;
      EXPECT_NEAR(o.image[ny * 112 + nx], s.image[y * 112 + x], 1e-9);
      EXPECT_EQ(o.part_map[ny * 112 + nx], s.part_map[y * 112 + x]);
    }
  EXPECT_TRUE(o.theta.empty());
}

TEST(Augment, KeypointLeavingFrameLosesVisibility) {
  auto s = synth_generate(mesh(), 1, 7, false, 1, 112)[0];
  SampleRecord o = apply_affine(s, {0.0, 1.0, 200.0, 0.0});
  for (int64_t k = 0; k < 16; ++k) EXPECT_EQ(o.keypoints[k * 3 + 2], 0.0);
  validate_sample(o);
  EXPECT_EQ(o.area, 1.0);
}

TEST(Augment, RandomRangesKeepInvariants) {
  auto data = synth_generate(mesh(), 10, 8, false, 1, 112);
  std::mt19937_64 rng(8);
  for (const auto& s : data) {
    SampleRecord o = augment(s, {}, rng);
    validate_sample(o);
    for (int64_t k = 0; k < 16; ++k) {
      const double d3 = std::hypot(o.joints3d[k * 3] - o.joints3d[0], o.joints3d[k * 3 + 1] - o.joints3d[1]);
      const double d0 = std::hypot(s.joints3d[k * 3] - s.joints3d[0], s.joints3d[k * 3 + 1] - s.joints3d[1]);
      EXPECT_NEAR(d3, d0, 1e-12);
    }
  }
}

TEST(Pnm, RoundTripQuantizes) {
  const fs::path dir = temp_dir("pnm");
  std::vector<double> img(3 * 4 * 5);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i % 256) / 255.0;
  write_ppm(dir / "a.ppm", 4, 5, img);
  int64_t h = 0, w = 0;
  auto back = read_pnm(dir / "a.ppm", h, w);
  EXPECT_EQ(h, 4);
  EXPECT_EQ(w, 5);
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(back[i], img[i], 1e-12);
  std::vector<double> gray = {0.0, 0.5, 1.0, 0.25};
  write_pgm(dir / "g.pgm", 2, 2, gray);
  auto g3 = read_pnm(dir / "g.pgm", h, w);
  ASSERT_EQ(g3.size(), 12u);
  EXPECT_EQ(g3[1], g3[5]);
  EXPECT_THROW(read_pnm(dir / "missing.ppm", h, w), IoError);
  std::ofstream(dir / "bad.ppm") << "P6\n4 4\n255\nxx";
  EXPECT_THROW(read_pnm(dir / "bad.ppm", h, w), IoError);
}

TEST(Annotations, ExportIngestRoundTrip) {
  const fs::path dir = temp_dir("roundtrip");
  auto data = synth_generate(mesh(), 3, 9, true, 3, 112);
  export_annotations(dir, data, mesh());
  std::vector<double> sigmas;
  auto back = ingest_annotations(dir / "annotations.json", &sigmas);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(sigmas, std::vector<double>(16, 0.05));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].keypoints, data[i].keypoints);
    EXPECT_EQ(back[i].joints3d, data[i].joints3d);
    EXPECT_EQ(back[i].vertices3d, data[i].vertices3d);
    EXPECT_EQ(back[i].theta, data[i].theta);
    EXPECT_EQ(back[i].part_map, data[i].part_map);
    EXPECT_EQ(back[i].area, data[i].area);
    EXPECT_EQ(back[i].sequence, data[i].sequence);
    EXPECT_EQ(back[i].frame, data[i].frame);
    for (std::size_t p = 0; p < data[i].image.size(); ++p) EXPECT_NEAR(back[i].image[p], data[i].image[p], 0.5 / 255.0 + 1e-12);
    for (std::size_t p = 0; p < data[i].uv_map.size(); ++p) EXPECT_NEAR(back[i].uv_map[p], data[i].uv_map[p], 0.5 / 255.0 + 1e-12);
  }
}

namespace {

void write_minimal(const fs::path& dir, int keypoint_values, bool with_category = true) {
  write_ppm(dir / "img.ppm", 8, 8, std::vector<double>(3 * 64, 0.5));
  std::ofstream f(dir / "ann.json");
  f << "{\n  \"images\": [{\"id\": 7, \"file_name\": \"img.ppm\", \"width\": 8, \"height\": 8}],\n"
    << "  \"annotations\": [{\"id\": 1, \"image_id\": 7, \"category_id\": 1, \"keypoints\": [";
  for (int i = 0; i < keypoint_values; ++i) f << (i ? ", " : "") << (i % 3 == 2 ? 2 : 1 + (i % 5));
  f << "], \"extra\": true}]";
  if (with_category) {
    f << ",\n  \"categories\": [{\"id\": 1, \"name\": \"person\", \"keypoints\": [";
    for (int k = 0; k < 17; ++k) f << (k ? ", " : "") << "\"k" << k << "\"";
    f << "]}]";
  }
  f << "\n}\n";
}

}  // namespace

TEST(Annotations, MinimalSeventeenKeypointFile) {
  const fs::path dir = temp_dir("minimal");
  write_minimal(dir, 51);
  auto s = ingest_annotations(dir / "ann.json");
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].num_keypoints(), 17);
  EXPECT_FALSE(s[0].has_3d);
  EXPECT_EQ(s[0].height, 8);
  EXPECT_NEAR(s[0].image[10], 128.0 / 255.0, 1e-12);
}

TEST(Annotations, SchemaViolations) {
  const fs::path dir = temp_dir("schema");
  write_minimal(dir, 50);
  try {
    ingest_annotations(dir / "ann.json");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("annotations[0].keypoints"), std::string::npos) << e.what();
  }
  write_minimal(dir, 50, false);
  EXPECT_THROW(ingest_annotations(dir / "ann.json"), ParseError);
  std::ofstream(dir / "broken.json") << "{\n \"images\": [\n  {\"id\": 1,,}\n]}";
  try {
    ingest_annotations(dir / "broken.json");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Annotations, MissingImageNamesFile) {
  const fs::path dir = temp_dir("missing");
  write_minimal(dir, 51);
  fs::remove(dir / "img.ppm");
  try {
    ingest_annotations(dir / "ann.json");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("img.ppm"), std::string::npos);
  }
}
