#include "pycat/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <json.hpp>
#include <numbers>
#include <sstream>

#include "pycat/error.hpp"

namespace pycat {

namespace fs = std::filesystem;

void validate_sample(const SampleRecord& s) {
  const int64_t H = s.height, W = s.width;
  if (H <= 0 || W <= 0) throw ContractError("sample has no image extent");
  if (static_cast<int64_t>(s.image.size()) != 3 * H * W) throw ContractError("sample image must be [3,H,W]");
  if (s.keypoints.empty() || s.keypoints.size() % 3 != 0) throw ContractError("sample keypoints must be [K,3]");
  const int64_t K = s.num_keypoints();
  for (int64_t k = 0; k < K; ++k) {
    const double x = s.keypoints[k * 3], y = s.keypoints[k * 3 + 1];
    if (s.keypoints[k * 3 + 2] > 0.0 && !(x >= -0.5 && x <= W - 0.5 && y >= -0.5 && y <= H - 0.5)) {
      throw ContractError("visible keypoint " + std::to_string(k) + " lies outside the image");
    }
  }
  if (s.has_3d != (!s.joints3d.empty())) throw ContractError("3D fields must be present iff has_3d is set");
  if (s.has_3d && static_cast<int64_t>(s.joints3d.size()) != 3 * K) throw ContractError("joints3d must be [K,3]");
  if (!s.part_map.empty() && static_cast<int64_t>(s.part_map.size()) != H * W) {
    throw ContractError("part map must be [H,W]");
  }
  if (!s.uv_map.empty() && static_cast<int64_t>(s.uv_map.size()) != 2 * H * W) {
    throw ContractError("UV map must be [2,H,W]");
  }
}

double pixel_to_normalized(double p, int64_t extent) { return (2.0 * p + 1.0) / static_cast<double>(extent) - 1.0; }

double normalized_to_pixel(double x, int64_t extent) {
  return ((x + 1.0) * static_cast<double>(extent) - 1.0) / 2.0;
}

namespace {

constexpr double kPalette[9][3] = {{0.85, 0.35, 0.30}, {0.30, 0.55, 0.85}, {0.95, 0.80, 0.35},
                                   {0.40, 0.80, 0.40}, {0.75, 0.40, 0.80}, {0.35, 0.80, 0.80},
                                   {0.90, 0.55, 0.20}, {0.55, 0.35, 0.20}, {0.60, 0.60, 0.95}};

struct Posed {
  std::vector<double> vertices;  // [N,3]
  std::vector<double> joints;    // [K,3]
  std::vector<double> pix;       // [N,2]
  std::vector<double> joint_pix; // [K,2]
};

Posed pose_mesh(const ArticulatedMesh& mesh, const std::vector<double>& theta, int64_t size) {
  NoGradScope no_grad;
  const int64_t S = state_size(mesh);
  if (static_cast<int64_t>(theta.size()) != S) {
    throw ContractError("body state must hold " + std::to_string(S) + " values, got " + std::to_string(theta.size()));
  }
  BodyState st = split_state(Tensor({1, S}, theta), mesh);
  MeshOutput out = pose_shape_to_mesh(mesh, st.pose, st.shape);
  Tensor pv = project_weak_perspective(out.vertices, st.cam);
  Tensor pj = project_weak_perspective(out.joints, st.cam);
  Posed p;
  p.vertices.assign(out.vertices.values().begin(), out.vertices.values().end());
  p.joints.assign(out.joints.values().begin(), out.joints.values().end());
  for (double v : pv.values()) p.pix.push_back(normalized_to_pixel(v, size));
  for (double v : pj.values()) p.joint_pix.push_back(normalized_to_pixel(v, size));
  return p;
}

}  // namespace

SampleRecord render_sample(const ArticulatedMesh& mesh, const std::vector<double>& theta, int64_t size,
                           std::mt19937_64& rng) {
  const Posed posed = pose_mesh(mesh, theta, size);
  const int64_t H = size, W = size, HW = H * W;
  SampleRecord s;
  s.height = H;
  s.width = W;
  s.theta = theta;
  s.image.resize(3 * HW);
  std::uniform_real_distribution<double> noise(0.0, 0.3);
  for (auto& v : s.image) v = noise(rng);
  s.part_map.assign(HW, 0);
  s.uv_map.assign(2 * HW, 0.0);
  std::vector<double> depth(HW, std::numeric_limits<double>::infinity());

  for (const auto& f : mesh.faces) {
    const double* a = &posed.pix[f[0] * 2];
    const double* b = &posed.pix[f[1] * 2];
    const double* c = &posed.pix[f[2] * 2];
    const double area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    if (std::abs(area) < 1e-12) continue;
    const double* A = &posed.vertices[f[0] * 3];
    const double* B = &posed.vertices[f[1] * 3];
    const double* C = &posed.vertices[f[2] * 3];
    const double e1[3] = {B[0] - A[0], B[1] - A[1], B[2] - A[2]};
    const double e2[3] = {C[0] - A[0], C[1] - A[1], C[2] - A[2]};
    const double n[3] = {e1[1] * e2[2] - e1[2] * e2[1], e1[2] * e2[0] - e1[0] * e2[2], e1[0] * e2[1] - e1[1] * e2[0]};
    const double nn = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
    const double shade = 0.55 + 0.45 * (nn > 0.0 ? std::abs(n[2]) / nn : 0.0);
    const int part = mesh.vertex_part[f[0]];
    const int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(std::ceil(std::min({a[0], b[0], c[0]}))));
    const int64_t x1 = std::min<int64_t>(W - 1, static_cast<int64_t>(std::floor(std::max({a[0], b[0], c[0]}))));
    const int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(std::ceil(std::min({a[1], b[1], c[1]}))));
    const int64_t y1 = std::min<int64_t>(H - 1, static_cast<int64_t>(std::floor(std::max({a[1], b[1], c[1]}))));
    for (int64_t y = y0; y <= y1; ++y)
      for (int64_t x = x0; x <= x1; ++x) {
        const double wa = ((b[0] - x) * (c[1] - y) - (b[1] - y) * (c[0] - x)) / area;
        const double wb = ((c[0] - x) * (a[1] - y) - (c[1] - y) * (a[0] - x)) / area;
        const double wc = 1.0 - wa - wb;
        if (wa < 0.0 || wb < 0.0 || wc < 0.0) continue;
        const int64_t p = y * W + x;
        const double z = wa * A[2] + wb * B[2] + wc * C[2];
        if (z >= depth[p]) continue;
        depth[p] = z;
        s.part_map[p] = part + 1;
        for (int ch = 0; ch < 3; ++ch) s.image[ch * HW + p] = kPalette[part % 9][ch] * shade;
        for (int ch = 0; ch < 2; ++ch) {
          s.uv_map[ch * HW + p] = wa * mesh.vertex_uv[f[0] * 2 + ch] + wb * mesh.vertex_uv[f[1] * 2 + ch] +
                                  wc * mesh.vertex_uv[f[2] * 2 + ch];
        }
      }
  }

  const int64_t K = mesh.num_joints;
  s.keypoints.resize(K * 3);
  for (int64_t k = 0; k < K; ++k) {
    const double x = posed.joint_pix[k * 2], y = posed.joint_pix[k * 2 + 1];
    const bool vis = x >= 0.0 && x <= W - 1.0 && y >= 0.0 && y <= H - 1.0;
    s.keypoints[k * 3] = x;
    s.keypoints[k * 3 + 1] = y;
    s.keypoints[k * 3 + 2] = vis ? 1.0 : 0.0;
    if (!vis) continue;
    const double sigma = 1.2;
    const int64_t r = 4;
    for (int64_t py = std::max<int64_t>(0, std::lround(y) - r); py <= std::min<int64_t>(H - 1, std::lround(y) + r); ++py)
      for (int64_t px = std::max<int64_t>(0, std::lround(x) - r); px <= std::min<int64_t>(W - 1, std::lround(x) + r);
           ++px) {
        const double g = 0.4 * std::exp(-((px - x) * (px - x) + (py - y) * (py - y)) / (2.0 * sigma * sigma));
        for (int ch = 0; ch < 3; ++ch) {
          double& v = s.image[ch * HW + py * W + px];
          v = std::min(1.0, v + g);
        }
      }
  }
  int64_t fg = 0;
  for (int v : s.part_map) fg += v > 0;
  s.area = static_cast<double>(std::max<int64_t>(fg, 1));
  s.has_3d = true;
  s.joints3d = posed.joints;
  s.vertices3d = posed.vertices;
  return s;
}

std::vector<double> sample_body_state(const ArticulatedMesh& mesh, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int64_t K = mesh.num_joints;
  std::vector<double> theta(state_size(mesh), 0.0);
  const double root_sigma[3] = {0.1, 0.3, 0.15};
  for (int a = 0; a < 3; ++a) theta[a] = root_sigma[a] * n(rng);
  for (int64_t j = 1; j < K; ++j)
    for (int a = 0; a < 3; ++a) theta[j * 3 + a] = 0.3 * n(rng);
  for (int64_t b = 0; b < mesh.num_shape; ++b) theta[3 * K + b] = n(rng);
  const int64_t c = 3 * K + mesh.num_shape;
  theta[c] = 0.75 + 0.2 * u(rng);
  theta[c + 1] = 0.16 * (u(rng) - 0.5);
  theta[c + 2] = 0.16 * (u(rng) - 0.5);
  return theta;
}

std::vector<SampleRecord> synth_generate(const ArticulatedMesh& mesh, int64_t count, uint64_t seed, bool video,
                                         int64_t frames, int64_t size) {
  if (count < 1) throw ContractError("sample count must be at least 1");
  if (video && frames < 1) throw ContractError("video sequences need at least one frame");
  std::mt19937_64 rng(seed);
  std::vector<SampleRecord> out;
  out.reserve(count);
  int64_t sequence = 0;
  while (static_cast<int64_t>(out.size()) < count) {
    if (!video) {
      out.push_back(render_sample(mesh, sample_body_state(mesh, rng), size, rng));
      continue;
    }
    const auto a = sample_body_state(mesh, rng);
    auto b = sample_body_state(mesh, rng);
    // Keep the shape fixed along a sequence.
    for (int64_t i = 3 * mesh.num_joints; i < 3 * mesh.num_joints + mesh.num_shape; ++i) b[i] = a[i];
    for (int64_t t = 0; t < frames && static_cast<int64_t>(out.size()) < count; ++t) {
      const double x = frames > 1 ? static_cast<double>(t) / static_cast<double>(frames - 1) : 0.0;
      const double w = x * x * (3.0 - 2.0 * x);
      std::vector<double> theta(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) theta[i] = a[i] + w * (b[i] - a[i]);
      SampleRecord s = render_sample(mesh, theta, size, rng);
      s.sequence = sequence;
      s.frame = t;
      out.push_back(std::move(s));
    }
    ++sequence;
  }
  return out;
}

Affine2 sample_affine(const AugmentRanges& r, int64_t size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Affine2 a;
  // Draws happen unconditionally so the stream does not depend on the ranges.
  const double ua = u(rng), us = u(rng), ux = u(rng), uy = u(rng);
  a.angle = (2.0 * ua - 1.0) * r.rotation_deg * std::numbers::pi / 180.0;
  a.scale = r.scale_min + us * (r.scale_max - r.scale_min);
  a.dx = (2.0 * ux - 1.0) * r.crop * static_cast<double>(size);
  a.dy = (2.0 * uy - 1.0) * r.crop * static_cast<double>(size);
  return a;
}

SampleRecord apply_affine(const SampleRecord& s, const Affine2& a) {
  if (a.identity()) return s;
  const int64_t H = s.height, W = s.width, HW = H * W;
  const double cx = 0.5 * (W - 1), cy = 0.5 * (H - 1);
  const double co = std::cos(a.angle), si = std::sin(a.angle);
  SampleRecord o = s;
  o.theta.clear();
  // Inverse map from output pixel to source position.
  auto source = [&](double x, double y) {
    const double u = (x - cx - a.dx) / a.scale, v = (y - cy - a.dy) / a.scale;
    return std::pair<double, double>{cx + co * u + si * v, cy - si * u + co * v};
  };
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      auto [sx, sy] = source(static_cast<double>(x), static_cast<double>(y));
      const double fx = std::floor(sx), fy = std::floor(sy);
      const int64_t x0 = static_cast<int64_t>(fx), y0 = static_cast<int64_t>(fy);
      const double tx = sx - fx, ty = sy - fy;
      for (int ch = 0; ch < 3; ++ch) {
        double v = 0.0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int64_t px = x0 + dx, py = y0 + dy;
            if (px < 0 || py < 0 || px >= W || py >= H) continue;
            v += (dx ? tx : 1.0 - tx) * (dy ? ty : 1.0 - ty) * s.image[ch * HW + py * W + px];
          }
        o.image[ch * HW + y * W + x] = v;
      }
      if (!s.part_map.empty()) {
        const int64_t nx = std::lround(sx), ny = std::lround(sy);
        const bool inside = nx >= 0 && ny >= 0 && nx < W && ny < H;
        o.part_map[y * W + x] = inside ? s.part_map[ny * W + nx] : 0;
        if (!s.uv_map.empty()) {
          for (int ch = 0; ch < 2; ++ch) o.uv_map[ch * HW + y * W + x] = inside ? s.uv_map[ch * HW + ny * W + nx] : 0.0;
        }
      }
    }
  for (int64_t k = 0; k < s.num_keypoints(); ++k) {
    const double px = s.keypoints[k * 3] - cx, py = s.keypoints[k * 3 + 1] - cy;
    const double x = cx + a.scale * (co * px - si * py) + a.dx;
    const double y = cy + a.scale * (si * px + co * py) + a.dy;
    o.keypoints[k * 3] = x;
    o.keypoints[k * 3 + 1] = y;
    const bool inside = x >= 0.0 && x <= W - 1.0 && y >= 0.0 && y <= H - 1.0;
    if (!inside) o.keypoints[k * 3 + 2] = 0.0;
  }
  auto rotate = [&](std::vector<double>& pts) {
    for (std::size_t i = 0; i + 2 < pts.size(); i += 3) {
      const double x = pts[i], y = pts[i + 1];
      pts[i] = co * x - si * y;
      pts[i + 1] = si * x + co * y;
    }
  };
  rotate(o.joints3d);
  rotate(o.vertices3d);
  if (!o.part_map.empty()) {
    int64_t fg = 0;
    for (int v : o.part_map) fg += v > 0;
    o.area = static_cast<double>(std::max<int64_t>(fg, 1));
  } else {
    o.area = s.area * a.scale * a.scale;
  }
  return o;
}

SampleRecord augment(const SampleRecord& s, const AugmentRanges& ranges, std::mt19937_64& rng) {
  return apply_affine(s, sample_affine(ranges, s.width, rng));
}

// ---------------------------------------------------------------------------
// PNM images

namespace {

void write_pnm(const fs::path& path, const char* magic, int64_t height, int64_t width, int channels,
               const std::vector<double>& planar) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f << magic << "\n" << width << " " << height << "\n255\n";
  const int64_t HW = height * width;
  std::vector<unsigned char> bytes(HW * channels);
  for (int64_t p = 0; p < HW; ++p)
    for (int c = 0; c < channels; ++c) {
      const double v = std::clamp(planar[c * HW + p], 0.0, 1.0);
      bytes[p * channels + c] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing '" + path.string() + "'");
}

int64_t read_header_int(std::istream& in, const fs::path& path) {
  int ch = in.peek();
  while (ch != EOF) {
    if (std::isspace(ch)) {
      in.get();
    } else if (ch == '#') {
      std::string line;
      std::getline(in, line);
    } else {
      break;
    }
    ch = in.peek();
  }
  int64_t v = -1;
  if (!(in >> v) || v <= 0) throw IoError("malformed PNM header in '" + path.string() + "'");
  return v;
}

}  // namespace

void write_ppm(const fs::path& path, int64_t height, int64_t width, const std::vector<double>& chw) {
  if (static_cast<int64_t>(chw.size()) != 3 * height * width) throw DimensionError("PPM data must be [3,H,W]");
  write_pnm(path, "P6", height, width, 3, chw);
}

void write_pgm(const fs::path& path, int64_t height, int64_t width, const std::vector<double>& hw) {
  if (static_cast<int64_t>(hw.size()) != height * width) throw DimensionError("PGM data must be [H,W]");
  write_pnm(path, "P5", height, width, 1, hw);
}

std::vector<double> read_pnm(const fs::path& path, int64_t& height, int64_t& width, bool gray) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open image '" + path.string() + "'");
  std::string magic(2, '\0');
  f.read(magic.data(), 2);
  if (magic != "P5" && magic != "P6") throw IoError("'" + path.string() + "' is not a binary PGM/PPM file");
  width = read_header_int(f, path);
  height = read_header_int(f, path);
  const int64_t maxval = read_header_int(f, path);
  if (maxval > 255) throw IoError("'" + path.string() + "' uses more than 8 bits per channel");
  f.get();
  const int channels = magic == "P6" ? 3 : 1;
  const int64_t HW = height * width;
  std::vector<unsigned char> bytes(HW * channels);
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (f.gcount() != static_cast<std::streamsize>(bytes.size())) throw IoError("'" + path.string() + "' is truncated");
  const int out_channels = gray ? 1 : 3;
  std::vector<double> out(out_channels * HW);
  for (int64_t p = 0; p < HW; ++p)
    for (int c = 0; c < out_channels; ++c) {
      const int src = channels == 1 ? 0 : (gray ? -1 : c);
      double v;
      if (src >= 0) {
        v = bytes[p * channels + src];
      } else {
        v = (bytes[p * 3] + bytes[p * 3 + 1] + bytes[p * 3 + 2]) / 3.0;
      }
      out[c * HW + p] = v / static_cast<double>(maxval);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Annotations

namespace {

using Json = nlohmann::ordered_json;

std::string numbered(const char* fmt, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, i);
  return buf;
}

[[noreturn]] void schema_error(const std::string& field, const std::string& msg) {
  throw ParseError(field + ": " + msg);
}

const Json& require(const Json& obj, const std::string& key, const std::string& ctx) {
  if (!obj.is_object()) schema_error(ctx, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) schema_error(ctx + "." + key, "missing field");
  return *it;
}

std::vector<double> numbers(const Json& j, const std::string& ctx) {
  if (!j.is_array()) schema_error(ctx, "expected an array of numbers");
  std::vector<double> out;
  out.reserve(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) schema_error(ctx + "[" + std::to_string(i) + "]", "expected a number");
    out.push_back(j[i].get<double>());
  }
  return out;
}

int64_t integer(const Json& j, const std::string& ctx) {
  if (!j.is_number_integer()) schema_error(ctx, "expected an integer");
  return j.get<int64_t>();
}

std::string line_context(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace

void export_annotations(const fs::path& dir, const std::vector<SampleRecord>& samples, const ArticulatedMesh& mesh) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "parts");
  fs::create_directories(dir / "uv");
  Json images = Json::array(), annotations = Json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const SampleRecord& s = samples[i];
    validate_sample(s);
    const std::string name = numbered("%06zu", i);
    Json im;
    im["id"] = i + 1;
    im["file_name"] = "images/" + name + ".ppm";
    im["width"] = s.width;
    im["height"] = s.height;
    write_ppm(dir / "images" / (name + ".ppm"), s.height, s.width, s.image);
    if (s.has_dense()) {
      std::vector<double> labels(s.part_map.size());
      for (std::size_t p = 0; p < labels.size(); ++p) labels[p] = s.part_map[p] / 255.0;
      write_pgm(dir / "parts" / (name + ".pgm"), s.height, s.width, labels);
      im["part_file"] = "parts/" + name + ".pgm";
      if (!s.uv_map.empty()) {
        std::vector<double> uv(3 * s.height * s.width, 0.0);
        std::copy(s.uv_map.begin(), s.uv_map.end(), uv.begin());
        write_ppm(dir / "uv" / (name + ".ppm"), s.height, s.width, uv);
        im["uv_file"] = "uv/" + name + ".ppm";
      }
    }
    if (s.sequence >= 0) {
      im["sequence"] = s.sequence;
      im["frame"] = s.frame;
    }
    images.push_back(im);
    Json an;
    an["id"] = i + 1;
    an["image_id"] = i + 1;
    an["category_id"] = 1;
    Json kp = Json::array();
    int64_t visible = 0;
    for (int64_t k = 0; k < s.num_keypoints(); ++k) {
      const bool v = s.keypoints[k * 3 + 2] > 0.0;
      kp.push_back(s.keypoints[k * 3]);
      kp.push_back(s.keypoints[k * 3 + 1]);
      kp.push_back(v ? 2 : 0);
      visible += v;
    }
    an["keypoints"] = kp;
    an["num_keypoints"] = visible;
    an["area"] = s.area;
    if (s.has_3d) {
      an["joints3d"] = s.joints3d;
      if (!s.vertices3d.empty()) an["vertices3d"] = s.vertices3d;
    }
    if (!s.theta.empty()) an["theta"] = s.theta;
    annotations.push_back(an);
  }
  Json cat;
  cat["id"] = 1;
  cat["name"] = "person";
  cat["keypoints"] = mesh.joint_names;
  Json skeleton = Json::array();
  for (int64_t j = 1; j < mesh.num_joints; ++j) skeleton.push_back({mesh.parents[j] + 1, j + 1});
  cat["skeleton"] = skeleton;
  cat["sigmas"] = std::vector<double>(mesh.num_joints, 0.05);
  Json root;
  root["images"] = images;
  root["annotations"] = annotations;
  root["categories"] = Json::array({cat});
  std::ofstream f(dir / "annotations.json");
  if (!f) throw IoError("cannot write '" + (dir / "annotations.json").string() + "'");
  f << root.dump(1) << "\n";
}

std::vector<SampleRecord> ingest_annotations(const fs::path& path, std::vector<double>* sigmas) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open annotation file '" + path.string() + "'");
  std::stringstream buf;
  buf << f.rdbuf();
  const std::string text = buf.str();
  Json root;
  try {
    root = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + line_context(text, e.byte == 0 ? 0 : e.byte - 1) + ": invalid JSON");
  }
  if (!root.is_object()) schema_error("<root>", "expected an object");
  const Json& images = require(root, "images", "<root>");
  const Json& annotations = require(root, "annotations", "<root>");
  if (!images.is_array()) schema_error("images", "expected an array");
  if (!annotations.is_array()) schema_error("annotations", "expected an array");

  int64_t K = -1;
  if (root.contains("categories")) {
    const Json& cats = root["categories"];
    if (!cats.is_array()) schema_error("categories", "expected an array");
    for (std::size_t c = 0; c < cats.size(); ++c) {
      const std::string ctx = "categories[" + std::to_string(c) + "]";
      if (!cats[c].is_object()) schema_error(ctx, "expected an object");
      if (cats[c].contains("keypoints")) {
        if (!cats[c]["keypoints"].is_array()) schema_error(ctx + ".keypoints", "expected an array of names");
        K = static_cast<int64_t>(cats[c]["keypoints"].size());
      }
      if (cats[c].contains("sigmas") && sigmas) {
        *sigmas = numbers(cats[c]["sigmas"], ctx + ".sigmas");
        if (K >= 0 && static_cast<int64_t>(sigmas->size()) != K) {
          schema_error(ctx + ".sigmas", "expected " + std::to_string(K) + " values, got " +
                                            std::to_string(sigmas->size()));
        }
      }
    }
  }

  struct ImageEntry {
    std::string file, part_file, uv_file;
    int64_t width = -1, height = -1, sequence = -1, frame = 0;
  };
  std::map<int64_t, ImageEntry> by_id;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string ctx = "images[" + std::to_string(i) + "]";
    const Json& im = images[i];
    ImageEntry e;
    const int64_t id = integer(require(im, "id", ctx), ctx + ".id");
    const Json& name = require(im, "file_name", ctx);
    if (!name.is_string()) schema_error(ctx + ".file_name", "expected a string");
    e.file = name.get<std::string>();
    if (im.contains("width")) e.width = integer(im["width"], ctx + ".width");
    if (im.contains("height")) e.height = integer(im["height"], ctx + ".height");
    if (im.contains("part_file")) e.part_file = im["part_file"].get<std::string>();
    if (im.contains("uv_file")) e.uv_file = im["uv_file"].get<std::string>();
    if (im.contains("sequence")) e.sequence = integer(im["sequence"], ctx + ".sequence");
    if (im.contains("frame")) e.frame = integer(im["frame"], ctx + ".frame");
    if (!by_id.emplace(id, e).second) schema_error(ctx + ".id", "duplicate image id " + std::to_string(id));
  }

  const fs::path root_dir = path.parent_path();
  std::vector<SampleRecord> out;
  for (std::size_t a = 0; a < annotations.size(); ++a) {
    const std::string ctx = "annotations[" + std::to_string(a) + "]";
    const Json& an = annotations[a];
    const int64_t image_id = integer(require(an, "image_id", ctx), ctx + ".image_id");
    auto it = by_id.find(image_id);
    if (it == by_id.end()) schema_error(ctx + ".image_id", "no image with id " + std::to_string(image_id));
    const ImageEntry& e = it->second;
    std::vector<double> kp = numbers(require(an, "keypoints", ctx), ctx + ".keypoints");
    if (K < 0) {
      if (kp.empty() || kp.size() % 3 != 0) {
        schema_error(ctx + ".keypoints", "expected (x, y, v) triplets, got " + std::to_string(kp.size()) + " values");
      }
      K = static_cast<int64_t>(kp.size() / 3);
    }
    if (static_cast<int64_t>(kp.size()) != 3 * K) {
      schema_error(ctx + ".keypoints", "expected " + std::to_string(3 * K) + " values (3 x " + std::to_string(K) +
                                           " keypoints), got " + std::to_string(kp.size()));
    }
    SampleRecord s;
    s.file = e.file;
    s.image = read_pnm(root_dir / e.file, s.height, s.width);
    if ((e.width >= 0 && e.width != s.width) || (e.height >= 0 && e.height != s.height)) {
      throw ParseError(ctx + ": image '" + e.file + "' is " + std::to_string(s.width) + "x" +
                       std::to_string(s.height) + ", annotation says " + std::to_string(e.width) + "x" +
                       std::to_string(e.height));
    }
    s.keypoints.resize(3 * K);
    double minx = 1e300, miny = 1e300, maxx = -1e300, maxy = -1e300;
    for (int64_t k = 0; k < K; ++k) {
      s.keypoints[k * 3] = kp[k * 3];
      s.keypoints[k * 3 + 1] = kp[k * 3 + 1];
      s.keypoints[k * 3 + 2] = kp[k * 3 + 2] > 0.0 ? 1.0 : 0.0;
      if (kp[k * 3 + 2] > 0.0) {
        minx = std::min(minx, kp[k * 3]);
        maxx = std::max(maxx, kp[k * 3]);
        miny = std::min(miny, kp[k * 3 + 1]);
        maxy = std::max(maxy, kp[k * 3 + 1]);
      }
    }
    if (an.contains("area")) {
      if (!an["area"].is_number()) schema_error(ctx + ".area", "expected a number");
      s.area = an["area"].get<double>();
    } else {
      s.area = maxx >= minx ? std::max(1.0, (maxx - minx + 1.0) * (maxy - miny + 1.0)) : 1.0;
    }
    if (an.contains("joints3d")) {
      s.joints3d = numbers(an["joints3d"], ctx + ".joints3d");
      if (static_cast<int64_t>(s.joints3d.size()) != 3 * K) {
        schema_error(ctx + ".joints3d", "expected " + std::to_string(3 * K) + " values");
      }
      s.has_3d = true;
      if (an.contains("vertices3d")) s.vertices3d = numbers(an["vertices3d"], ctx + ".vertices3d");
    }
    if (an.contains("theta")) s.theta = numbers(an["theta"], ctx + ".theta");
    if (!e.part_file.empty()) {
      int64_t h = 0, w = 0;
      auto labels = read_pnm(root_dir / e.part_file, h, w, true);
      if (h != s.height || w != s.width) throw ParseError(ctx + ": part map size differs from the image");
      s.part_map.resize(labels.size());
      for (std::size_t p = 0; p < labels.size(); ++p) s.part_map[p] = static_cast<int>(std::lround(labels[p] * 255.0));
    }
    if (!e.uv_file.empty()) {
      int64_t h = 0, w = 0;
      auto uv = read_pnm(root_dir / e.uv_file, h, w);
      if (h != s.height || w != s.width) throw ParseError(ctx + ": UV map size differs from the image");
      s.uv_map.assign(uv.begin(), uv.begin() + 2 * h * w);
    }
    s.sequence = e.sequence;
    s.frame = e.frame;
    validate_sample(s);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace pycat
