#pragma once

#include <vector>

#include "pycat/nn.hpp"

namespace pycat {

/// Three spatial levels ordered coarse to fine, sharing one channel width,
/// plus a global vector [B, C_g].
struct FeaturePyramid {
  std::vector<Tensor> levels;
  Tensor global;
};

/// Throws DimensionError unless the pyramid has exactly the given level sizes
/// (coarse to fine) and a shared width.
void validate_pyramid(const FeaturePyramid& p, const std::vector<int64_t>& sizes);

/// Level sizes produced from four backbone stages: the sizes of stages 3, 2, 1.
std::vector<int64_t> pyramid_sizes(const std::vector<Tensor>& stages);

struct AsppParams {
  nn::Conv2d pointwise;             // 1x1 branch
  std::vector<nn::Conv2d> dilated;  // 3x3 branch per rate
  nn::Conv2d pooled;                // global-pool branch
  nn::Conv2d fuse;                  // concat -> C_f

  static AsppParams create(ParamStore& store, const std::string& name, int64_t in, int64_t out,
                           const std::vector<int>& rates, Rng& rng);
};

/// Parallel 1x1, dilated 3x3 and global-pool branches (each ReLU), concatenated
/// and fused by a 1x1 conv. Spatial size is preserved.
Tensor aspp(const Tensor& x, const AsppParams& p);

struct FpnParams {
  std::vector<nn::Conv2d> laterals;  // per stage, 1x1 to C_f
  std::vector<nn::Conv2d> smooth;    // per output level, 3x3

  static FpnParams create(ParamStore& store, const std::string& name, const std::vector<int64_t>& stage_widths,
                          int64_t channels, Rng& rng);
};

/// Top-down pathway over four stages. `replaced[i]`, when defined, stands in
/// for lateral i. Returns three smoothed maps, coarse to fine, at the sizes of
/// stages 3, 2, 1.
std::vector<Tensor> fpn(const std::vector<Tensor>& stages, const FpnParams& p,
                        const std::vector<Tensor>& replaced = {});

struct FusionConfig {
  int64_t channels = 64;
  std::vector<int> rates{1, 2, 4, 8};
  bool use_aspp = true;
  bool aspp_all_levels = false;  // ASPP in place of every lateral, not only the deepest
};

struct FusionParams {
  FusionConfig cfg;
  FpnParams fpn;
  std::vector<AsppParams> aspp;  // one for the deepest stage, or one per stage

  static FusionParams create(ParamStore& store, const std::string& name, const std::vector<int64_t>& stage_widths,
                             const FusionConfig& cfg, Rng& rng);
};

/// ASPP on the deepest stage (or every stage) ahead of the FPN pass; the
/// global vector is the average pool of the deepest stage.
FeaturePyramid fuse_pyramid(const std::vector<Tensor>& stages, const FusionParams& p);

struct DeconvPyramidParams {
  std::vector<nn::TransposedConv2d> deconv;  // k4 s2 p1, three layers
  std::vector<nn::LayerNorm> norms;

  static DeconvPyramidParams create(ParamStore& store, const std::string& name, int64_t in, int64_t channels,
                                    Rng& rng);
};

/// Three stacked deconvolutions from the deepest stage, each output a level.
/// Levels whose size differs from the target sizes are bilinearly resized.
FeaturePyramid deconv_pyramid(const std::vector<Tensor>& stages, const DeconvPyramidParams& p);

}  // namespace pycat
