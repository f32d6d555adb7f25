#include "pycat/body_model.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace pycat {

namespace {

constexpr double kTaylorThreshold = 1e-8;
constexpr double kSeriesThreshold = 1e-2;

struct RodriguesCoeffs {
  double A, B;  // sin(t)/t, (1 - cos t)/t^2
  double a, b;  // A'(t)/t, B'(t)/t
  double c;     // cos t
};

RodriguesCoeffs rodrigues_coeffs(double t2) {
  const double t = std::sqrt(t2);
  RodriguesCoeffs k{};
  if (t < kTaylorThreshold) {
    k.A = 1.0 - t2 / 6.0;
    k.B = 0.5 - t2 / 24.0;
    k.c = 1.0 - 0.5 * t2;
  } else {
    const double s = std::sin(t);
    const double h = std::sin(0.5 * t);
    k.A = s / t;
    k.B = 2.0 * h * h / t2;
    k.c = std::cos(t);
  }
  if (t < kSeriesThreshold) {
    k.a = -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0;
    k.b = -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0;
  } else {
    const double s = std::sin(t);
    const double h = std::sin(0.5 * t);
    k.a = (t * std::cos(t) - s) / (t2 * t);
    k.b = (t * s - 4.0 * h * h) / (t2 * t2);
  }
  return k;
}

struct Vec3 {
  double x, y, z;
};

Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
Vec3 cross(Vec3 a, Vec3 b) { return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x}; }
double norm(Vec3 a) { return std::sqrt(a.x * a.x + a.y * a.y + a.z * a.z); }
Vec3 normalized(Vec3 a) { return (1.0 / norm(a)) * a; }

// Frame orthogonal to an axis: u lies in the image plane when possible.
std::pair<Vec3, Vec3> ring_frame(Vec3 axis) {
  const Vec3 d = normalized(axis);
  Vec3 u = cross(d, {0, 0, 1});
  if (norm(u) < 1e-9) u = cross(d, {1, 0, 0});
  u = normalized(u);
  return {u, normalized(cross(d, u))};
}

}  // namespace

void ArticulatedMesh::finalize() {
  const int64_t N = num_vertices;
  template_t = Tensor({N, 3}, template_vertices);
  std::vector<double> basis(num_shape * N * 3);
  for (int64_t v = 0; v < N * 3; ++v)
    for (int64_t b = 0; b < num_shape; ++b) basis[b * N * 3 + v] = shape_basis[v * num_shape + b];
  basis_t = Tensor({num_shape, N * 3}, std::move(basis));
  regressor_t = Tensor({num_joints, N}, joint_regressor);
  weights_t = Tensor({N, num_joints}, skinning_weights);
}

ArticulatedMesh build_toy_mesh() {
  ArticulatedMesh m;
  m.joint_names = {"pelvis", "spine", "neck", "head", "l_shoulder", "l_elbow", "l_wrist", "r_shoulder",
                   "r_elbow", "r_wrist", "l_hip", "l_knee", "l_ankle", "r_hip", "r_knee", "r_ankle"};
  m.parents = {-1, 0, 1, 2, 2, 4, 5, 2, 7, 8, 0, 10, 11, 0, 13, 14};
  m.num_joints = 16;
  const std::vector<Vec3> joints = {
      {0.0, 0.0, 0.0},     {0.0, -0.25, 0.0},  {0.0, -0.5, 0.0},   {0.0, -0.66, 0.0},
      {0.18, -0.47, 0.0},  {0.3, -0.24, 0.0},  {0.38, -0.02, 0.0}, {-0.18, -0.47, 0.0},
      {-0.3, -0.24, 0.0},  {-0.38, -0.02, 0.0}, {0.1, 0.0, 0.0},   {0.11, 0.42, 0.0},
      {0.12, 0.82, 0.0},   {-0.1, 0.0, 0.0},   {-0.11, 0.42, 0.0}, {-0.12, 0.82, 0.0}};

  struct Part {
    std::string name;
    std::array<Vec3, 3> centers;
    double radius;
    std::array<std::vector<std::pair<int, double>>, 3> weights;  // per ring
  };
  const Vec3 head_top{0.0, -0.82, 0.0};
  auto mid = [](Vec3 a, Vec3 b) { return 0.5 * (a + b); };
  const std::vector<Part> parts = {
      {"pelvis", {joints[10], joints[0], joints[13]}, 0.11, {{{{0, 1.0}}, {{0, 1.0}}, {{0, 1.0}}}}},
      {"torso", {joints[0], joints[1], joints[2]}, 0.13, {{{{0, 1.0}}, {{0, 0.5}, {1, 0.5}}, {{1, 0.75}, {2, 0.25}}}}},
      {"head", {joints[2], joints[3], head_top}, 0.09, {{{{2, 1.0}}, {{2, 0.5}, {3, 0.5}}, {{3, 1.0}}}}},
      {"l_arm", {joints[4], joints[5], joints[6]}, 0.05, {{{{2, 0.25}, {4, 0.75}}, {{4, 0.5}, {5, 0.5}}, {{5, 0.75}, {6, 0.25}}}}},
      {"r_arm", {joints[7], joints[8], joints[9]}, 0.05, {{{{2, 0.25}, {7, 0.75}}, {{7, 0.5}, {8, 0.5}}, {{8, 0.75}, {9, 0.25}}}}},
      {"l_thigh", {joints[10], mid(joints[10], joints[11]), joints[11]}, 0.07,
       {{{{0, 0.25}, {10, 0.75}}, {{10, 1.0}}, {{10, 0.5}, {11, 0.5}}}}},
      {"l_shin", {joints[11], mid(joints[11], joints[12]), joints[12]}, 0.055,
       {{{{10, 0.5}, {11, 0.5}}, {{11, 1.0}}, {{11, 0.75}, {12, 0.25}}}}},
      {"r_thigh", {joints[13], mid(joints[13], joints[14]), joints[14]}, 0.07,
       {{{{0, 0.25}, {13, 0.75}}, {{13, 1.0}}, {{13, 0.5}, {14, 0.5}}}}},
      {"r_shin", {joints[14], mid(joints[14], joints[15]), joints[15]}, 0.055,
       {{{{13, 0.5}, {14, 0.5}}, {{14, 1.0}}, {{14, 0.75}, {15, 0.25}}}}},
  };
  // Joint -> (part, ring) whose vertex centroid defines it.
  const std::array<std::pair<int, int>, 16> joint_ring = {{{0, 1}, {1, 1}, {1, 2}, {2, 1}, {3, 0}, {3, 1}, {3, 2}, {4, 0},
                                                           {4, 1}, {4, 2}, {5, 0}, {6, 0}, {6, 2}, {7, 0}, {8, 0}, {8, 2}}};
  constexpr int kRing = 8;
  constexpr int kRings = 3;
  const int P = static_cast<int>(parts.size());
  m.num_parts = P;
  m.num_vertices = P * kRings * kRing;
  m.num_shape = 4;
  const int64_t N = m.num_vertices;
  const int64_t K = m.num_joints;
  m.template_vertices.resize(N * 3);
  m.shape_basis.assign(N * 3 * m.num_shape, 0.0);
  m.skinning_weights.assign(N * K, 0.0);
  m.joint_regressor.assign(K * N, 0.0);
  m.vertex_part.resize(N);
  m.vertex_uv.resize(N * 2);
  for (int p = 0; p < P; ++p) {
    const Part& part = parts[p];
    m.part_names.push_back(part.name);
    const bool leg = p >= 5;
    for (int r = 0; r < kRings; ++r) {
      Vec3 axis = r == 0 ? part.centers[1] - part.centers[0]
                  : r == 2 ? part.centers[2] - part.centers[1]
                           : part.centers[2] - part.centers[0];
      auto [u, w] = ring_frame(axis);
      for (int k = 0; k < kRing; ++k) {
        const double phi = 2.0 * std::numbers::pi * k / kRing;
        const Vec3 radial = std::cos(phi) * u + std::sin(phi) * w;
        const Vec3 pos = part.centers[r] + part.radius * radial;
        const int64_t v = (p * kRings + r) * kRing + k;
        m.template_vertices[v * 3 + 0] = pos.x;
        m.template_vertices[v * 3 + 1] = pos.y;
        m.template_vertices[v * 3 + 2] = pos.z;
        double* basis = &m.shape_basis[v * 3 * m.num_shape];
        const int64_t B = m.num_shape;
        // girth: radial offset
        basis[0 * B + 0] = 0.02 * radial.x;
        basis[1 * B + 0] = 0.02 * radial.y;
        basis[2 * B + 0] = 0.02 * radial.z;
        // height: vertical stretch about the pelvis
        basis[1 * B + 1] = 0.06 * pos.y;
        // width: horizontal stretch
        basis[0 * B + 2] = 0.06 * pos.x;
        // leg length
        if (leg) basis[1 * B + 3] = 0.08 * pos.y;
        for (auto [j, wgt] : part.weights[r]) m.skinning_weights[v * K + j] = wgt;
        m.vertex_part[v] = p;
        m.vertex_uv[v * 2 + 0] = 0.5 * r;
        m.vertex_uv[v * 2 + 1] = 0.5 * (1.0 + std::cos(phi));
      }
      if (r > 0) {
        for (int k = 0; k < kRing; ++k) {
          const int a0 = (p * kRings + r - 1) * kRing + k;
          const int a1 = (p * kRings + r - 1) * kRing + (k + 1) % kRing;
          const int b0 = (p * kRings + r) * kRing + k;
          const int b1 = (p * kRings + r) * kRing + (k + 1) % kRing;
          m.faces.push_back({a0, a1, b1});
          m.faces.push_back({a0, b1, b0});
        }
      }
    }
    for (int r : {0, kRings - 1}) {
      const int base = (p * kRings + r) * kRing;
      for (int k = 1; k + 1 < kRing; ++k) m.faces.push_back({base, base + k, base + k + 1});
    }
  }
  for (int64_t j = 0; j < K; ++j) {
    const auto [p, r] = joint_ring[j];
    for (int k = 0; k < kRing; ++k) m.joint_regressor[j * N + (p * kRings + r) * kRing + k] = 1.0 / kRing;
  }
  m.finalize();
  return m;
}

void validate_mesh(const ArticulatedMesh& mesh) {
  const int64_t N = mesh.num_vertices;
  const int64_t K = mesh.num_joints;
  auto check_convex = [](const double* row, int64_t n, const std::string& what) {
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      if (row[i] < 0.0) throw ContractError(what + " has a negative weight");
      s += row[i];
    }
    if (std::abs(s - 1.0) > 1e-9) throw ContractError(what + " does not sum to one");
  };
  if (static_cast<int64_t>(mesh.joint_regressor.size()) != K * N ||
      static_cast<int64_t>(mesh.skinning_weights.size()) != N * K ||
      static_cast<int64_t>(mesh.template_vertices.size()) != N * 3 ||
      static_cast<int64_t>(mesh.parents.size()) != K) {
    throw ContractError("mesh arrays have inconsistent sizes");
  }
  for (int64_t j = 0; j < K; ++j) check_convex(&mesh.joint_regressor[j * N], N, "regressor row " + std::to_string(j));
  for (int64_t v = 0; v < N; ++v) check_convex(&mesh.skinning_weights[v * K], K, "skinning row " + std::to_string(v));
  int roots = 0;
  for (int64_t j = 0; j < K; ++j) {
    if (mesh.parents[j] < 0) {
      ++roots;
      if (j != 0) throw ContractError("root must be joint 0");
    } else if (mesh.parents[j] >= j) {
      // Parents precede children, which also rules out cycles.
      throw ContractError("joint " + std::to_string(j) + " has parent that does not precede it");
    }
  }
  if (roots != 1) throw ContractError("parent tree must have exactly one root");
  for (const auto& f : mesh.faces)
    for (int v : f)
      if (v < 0 || v >= N) throw ContractError("face references a missing vertex");
}

Tensor rodrigues(const Tensor& axis_angle) {
  if (axis_angle.rank() < 1 || axis_angle.size(-1) != 3) {
    throw DimensionError("rodrigues expects [...,3], got " + shape_str(axis_angle.shape()));
  }
  const int64_t count = axis_angle.numel() / 3;
  const auto w = axis_angle.values();
  std::vector<double> out(count * 9);
  for (int64_t i = 0; i < count; ++i) {
    const double x = w[3 * i], y = w[3 * i + 1], z = w[3 * i + 2];
    const RodriguesCoeffs k = rodrigues_coeffs(x * x + y * y + z * z);
    double* R = &out[9 * i];
    // R = cos(t) I + A [w]x + B w w^T
    R[0] = k.c + k.B * x * x;
    R[1] = -k.A * z + k.B * x * y;
    R[2] = k.A * y + k.B * x * z;
    R[3] = k.A * z + k.B * y * x;
    R[4] = k.c + k.B * y * y;
    R[5] = -k.A * x + k.B * y * z;
    R[6] = -k.A * y + k.B * z * x;
    R[7] = k.A * x + k.B * z * y;
    R[8] = k.c + k.B * z * z;
  }
  Shape shape = axis_angle.shape();
  shape.back() = 3;
  shape.push_back(3);
  Tensor in = axis_angle;
  return make_result(shape, std::move(out), {axis_angle},
                     [in, count](std::span<const double> g, std::span<double* const> gin) {
                       if (!gin[0]) return;
                       const auto w2 = in.values();
                       for (int64_t i = 0; i < count; ++i) {
                         const double om[3] = {w2[3 * i], w2[3 * i + 1], w2[3 * i + 2]};
                         const RodriguesCoeffs k = rodrigues_coeffs(om[0] * om[0] + om[1] * om[1] + om[2] * om[2]);
                         const double* G = &g[9 * i];
                         // Skew matrix entries and their derivative d[w]x/dw_c.
                         const double Kx[9] = {0, -om[2], om[1], om[2], 0, -om[0], -om[1], om[0], 0};
                         double trace_g = G[0] + G[4] + G[8];
                         double gk = 0.0;  // <G, [w]x>
                         double gw = 0.0;  // <G, w w^T>
                         for (int r = 0; r < 3; ++r)
                           for (int c = 0; c < 3; ++c) {
                             gk += G[3 * r + c] * Kx[3 * r + c];
                             gw += G[3 * r + c] * om[r] * om[c];
                           }
                         // <G, d[w]x/dw_c>: vee of the antisymmetric part.
                         const double dK[3] = {G[7] - G[5], G[2] - G[6], G[3] - G[1]};
                         for (int c = 0; c < 3; ++c) {
                           // <G, d(w w^T)/dw_c> = sum_j (G[c][j] + G[j][c]) w_j
                           double dww = 0.0;
                           for (int j = 0; j < 3; ++j) dww += (G[3 * c + j] + G[3 * j + c]) * om[j];
                           gin[0][3 * i + c] += -k.A * om[c] * trace_g + k.A * dK[c] + k.a * om[c] * gk +
                                                k.b * om[c] * gw + k.B * dww;
                         }
                       }
                     });
}

int64_t state_size(const ArticulatedMesh& mesh) { return 3 * mesh.num_joints + mesh.num_shape + 3; }

BodyState split_state(const Tensor& theta, const ArticulatedMesh& mesh) {
  if (theta.rank() != 2 || theta.size(1) != state_size(mesh)) {
    throw DimensionError("state vector must be [B," + std::to_string(state_size(mesh)) + "], got " +
                         shape_str(theta.shape()));
  }
  const int64_t B = theta.size(0);
  const int64_t K = mesh.num_joints;
  BodyState s;
  s.pose = reshape(narrow(theta, 1, 0, 3 * K), {B, K, 3});
  s.shape = narrow(theta, 1, 3 * K, mesh.num_shape);
  s.cam = narrow(theta, 1, 3 * K + mesh.num_shape, 3);
  return s;
}

Tensor flatten_state(const BodyState& state) {
  const int64_t B = state.pose.size(0);
  return concat({reshape(state.pose, {B, -1}), state.shape, state.cam}, 1);
}

MeshOutput pose_shape_to_mesh(const ArticulatedMesh& mesh, const Tensor& pose, const Tensor& shape) {
  const int64_t K = mesh.num_joints;
  const int64_t N = mesh.num_vertices;
  if (pose.rank() != 3 || pose.size(1) != K || pose.size(2) != 3) {
    throw DimensionError("pose must be [B," + std::to_string(K) + ",3], got " + shape_str(pose.shape()));
  }
  const int64_t B = pose.size(0);
  if (shape.rank() != 2 || shape.size(0) != B || shape.size(1) != mesh.num_shape) {
    throw DimensionError("shape must be [B," + std::to_string(mesh.num_shape) + "], got " + shape_str(shape.shape()));
  }
  Tensor v_shaped = mesh.template_t + reshape(matmul(shape, mesh.basis_t), {B, N, 3});
  Tensor rest = matmul(mesh.regressor_t, v_shaped);  // [B,K,3]
  Tensor R = rodrigues(pose);                         // [B,K,3,3]

  std::vector<Tensor> global_r(K);
  std::vector<Tensor> local_t(K);
  std::vector<Tensor> blocks;
  for (int64_t j = 0; j < K; ++j) {
    Tensor Rj = reshape(narrow(R, 1, j, 1), {B, 3, 3});
    Tensor Jj = reshape(narrow(rest, 1, j, 1), {B, 3, 1});
    const int p = mesh.parents[j];
    if (p < 0) {
      global_r[j] = Rj;
      local_t[j] = Jj - matmul(Rj, Jj);
    } else {
      global_r[j] = matmul(global_r[p], Rj);
      local_t[j] = matmul(global_r[p] - global_r[j], Jj) + local_t[p];
    }
    blocks.push_back(reshape(concat({global_r[j], local_t[j]}, 2), {B, 1, 12}));
  }
  Tensor A = concat(blocks, 1);                                    // [B,K,12]
  Tensor T = reshape(matmul(mesh.weights_t, A), {B, N, 3, 4});     // blended transforms
  Tensor rot = narrow(T, 3, 0, 3);
  Tensor trans = reshape(narrow(T, 3, 3, 1), {B, N, 3});
  Tensor posed = sum(rot * reshape(v_shaped, {B, N, 1, 3}), -1) + trans;
  return {posed, matmul(mesh.regressor_t, posed), rest};
}

Tensor project_weak_perspective(const Tensor& points, const Tensor& cam) {
  if (points.rank() != 3 || points.size(2) != 3 || cam.rank() != 2 || cam.size(1) != 3 ||
      cam.size(0) != points.size(0)) {
    throw DimensionError("projection expects points [B,M,3] and cam [B,3], got " + shape_str(points.shape()) +
                         " and " + shape_str(cam.shape()));
  }
  const int64_t B = points.size(0);
  Tensor s = reshape(narrow(cam, 1, 0, 1), {B, 1, 1});
  Tensor t = reshape(narrow(cam, 1, 1, 2), {B, 1, 2});
  return s * narrow(points, 2, 0, 2) + t;
}

std::vector<int64_t> mesh_downsample(const ArticulatedMesh& mesh, int64_t count) {
  const int64_t N = mesh.num_vertices;
  if (count < 1 || count > N) {
    throw ContractError("cannot select " + std::to_string(count) + " of " + std::to_string(N) + " vertices");
  }
  const auto& v = mesh.template_vertices;
  std::vector<double> dist(N, std::numeric_limits<double>::infinity());
  std::vector<int64_t> chosen{0};
  std::vector<char> taken(N, 0);
  taken[0] = 1;
  auto update = [&](int64_t c) {
    for (int64_t i = 0; i < N; ++i) {
      const double dx = v[3 * i] - v[3 * c];
      const double dy = v[3 * i + 1] - v[3 * c + 1];
      const double dz = v[3 * i + 2] - v[3 * c + 2];
      dist[i] = std::min(dist[i], dx * dx + dy * dy + dz * dz);
    }
  };
  update(0);
  while (static_cast<int64_t>(chosen.size()) < count) {
    int64_t best = -1;
    for (int64_t i = 0; i < N; ++i)
      if (!taken[i] && (best < 0 || dist[i] > dist[best])) best = i;
    taken[best] = 1;
    chosen.push_back(best);
    update(best);
  }
  return chosen;
}

}  // namespace pycat
