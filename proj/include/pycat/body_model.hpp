#pragma once

#include <array>
#include <string>
#include <vector>

#include "pycat/tensor.hpp"

namespace pycat {

/// Articulated mesh constants. Dense arrays are row-major:
/// template [N,3], shape basis [N,3,B], joint regressor [K,N],
/// skinning weights [N,K].
struct ArticulatedMesh {
  int64_t num_vertices = 0;
  int64_t num_joints = 0;
  int64_t num_shape = 0;
  int64_t num_parts = 0;
  std::vector<double> template_vertices;
  std::vector<double> shape_basis;
  std::vector<double> joint_regressor;
  std::vector<double> skinning_weights;
  std::vector<int> parents;  // parents[0] == -1
  std::vector<std::array<int, 3>> faces;
  std::vector<int> vertex_part;  // body-part label per vertex, 0..P-1
  std::vector<double> vertex_uv;  // [N,2] part-local coordinates in [0,1]
  std::vector<std::string> joint_names;
  std::vector<std::string> part_names;

  // Constant tensors built from the arrays above by finalize().
  Tensor template_t;   // [N,3]
  Tensor basis_t;      // [B, N*3]
  Tensor regressor_t;  // [K,N]
  Tensor weights_t;    // [N,K]

  void finalize();
};

/// Procedural capsule body: 16 joints, 9 parts of 3 rings x 8 vertices
/// (216 vertices), 4 shape directions. Coordinates are metres, x right,
/// y down, pelvis at the origin.
ArticulatedMesh build_toy_mesh();

/// Throws ContractError unless regressor and skinning rows are convex
/// (within 1e-9) and the parent tree is acyclic with a single root.
void validate_mesh(const ArticulatedMesh& mesh);

/// Axis-angle [...,3] -> rotation matrices [...,3,3], with an analytic
/// Jacobian and a Taylor branch below |w| < 1e-8.
Tensor rodrigues(const Tensor& axis_angle);

/// Per-sample body parameters: pose [B,K,3], shape [B,Bs], camera [B,3] as (s, tx, ty).
struct BodyState {
  Tensor pose;
  Tensor shape;
  Tensor cam;
};

int64_t state_size(const ArticulatedMesh& mesh);  // 3K + Bs + 3
/// Splits a flat parameter vector [B, 3K+Bs+3] laid out as (pose | shape | cam).
BodyState split_state(const Tensor& theta, const ArticulatedMesh& mesh);
Tensor flatten_state(const BodyState& state);

struct MeshOutput {
  Tensor vertices;     // [B,N,3]
  Tensor joints;       // [B,K,3], regressed from posed vertices
  Tensor rest_joints;  // [B,K,3]
};

/// Shape blend, rest joints, forward kinematics along the parent tree and
/// linear blend skinning.
MeshOutput pose_shape_to_mesh(const ArticulatedMesh& mesh, const Tensor& pose, const Tensor& shape);

/// points [B,M,3], cam [B,3] -> s * (x, y) + t, [B,M,2].
Tensor project_weak_perspective(const Tensor& points, const Tensor& cam);

/// Farthest-point selection over the template, seeded by vertex 0; ties go
/// to the lowest index.
std::vector<int64_t> mesh_downsample(const ArticulatedMesh& mesh, int64_t count);

}  // namespace pycat
