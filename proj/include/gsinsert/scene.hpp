// Gaussian splat scenes: containers, PLY persistence, region extraction,
// rigid+isotropic-scale transforms, merging, and procedural primitives.
//
// PLY layout follows the common splatting convention: binary little-endian,
// float32 properties x,y,z, f_dc_0..2, f_rest_*, opacity, scale_0..2,
// rot_0..3, where scale_* holds log stddevs, opacity is stored as a logit,
// and rot_* is a (w,x,y,z) quaternion. In memory, opacity is linear in [0,1]
// and rotations are normalized with w >= 0.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gsinsert/geometry.hpp"

namespace gsinsert {

// 0.5 * sqrt(1/pi): degree-0 spherical-harmonics basis constant.
inline constexpr double kShC0 = 0.28209479177387814;

struct GaussianSplat {
    Vec3 mean;
    UnitQuat rotation;
    Vec3 log_scale{0, 0, 0};   // log of per-axis standard deviation
    double opacity = 1.0;      // linear, in [0, 1]
    std::vector<Vec3> sh;      // (degree+1)^2 coefficients, each one per RGB channel
};

struct GaussianScene {
    std::vector<GaussianSplat> splats;
    int sh_degree = 0;

    size_t size() const { return splats.size(); }
    bool empty() const { return splats.empty(); }
};

// 3D covariance of one splat: R * diag(exp(2 * log_scale)) * R^T.
Mat3 splat_covariance(const GaussianSplat& s);

// Base color from the degree-0 SH coefficient, clamped to [0, 1] per channel.
Vec3 splat_base_color(const GaussianSplat& s);
// Inverse of splat_base_color for synthesis: color -> dc coefficient.
Vec3 color_to_dc(const Vec3& rgb);

// Opacity-weighted mean of splat centers. Throws Degenerate when the scene is
// empty or has zero total opacity.
Vec3 scene_centroid(const GaussianScene& scene);

// Axis-aligned bounds of splat means. Throws Degenerate when empty.
std::pair<Vec3, Vec3> scene_bounds(const GaussianScene& scene);

double scene_diameter(const GaussianScene& scene);

GaussianScene load_ply(const std::string& path);
void save_ply(const GaussianScene& scene, const std::string& path);
// In-memory forms used by tests and digesting.
GaussianScene parse_ply(const std::string& bytes);
std::string serialize_ply(const GaussianScene& scene);

// Splits splats into (inside, outside) by box containment of the mean.
std::pair<GaussianScene, GaussianScene> extract_region(const GaussianScene& scene,
                                                       const Box3& box);

// Applies a DoF with isotropic scale to every splat. Anisotropic scale cannot
// be represented on an oriented Gaussian and throws AnisotropicObjectScale.
GaussianScene transform_scene(const GaussianScene& scene, const DoF& dof);

// Concatenates two scenes; lower-degree SH coefficient lists are zero-padded
// to the larger degree. Order: splats of a, then splats of b.
GaussianScene merge(const GaussianScene& a, const GaussianScene& b);

enum class PrimitiveKind { Sphere, Box, TwoLobe };
PrimitiveKind primitive_kind_from_string(const std::string& name);

// Deterministic procedural object with unit bounding diameter, centered at
// the origin, degree-0 SH colors.
GaussianScene synth_primitive(PrimitiveKind kind, int splat_count, std::uint64_t seed);

// Centers splat means at the bounding-box center and rescales so the mean
// bounding box has unit diagonal. No-op on empty or degenerate extents.
GaussianScene normalize_object(const GaussianScene& scene);

}  // namespace gsinsert
