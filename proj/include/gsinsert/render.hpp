// Pinhole projection of scenes and boxes.
//
// Camera convention: camera-frame point = rotation * world + translation,
// +z forward, +x right, +y down; pixel (u, v) = (cx + fx X/Z, cy + fy Y/Z).
// Pixel (x, y) samples the continuous image plane at (x + 0.5, y + 0.5).
#pragma once

#include <utility>
#include <vector>

#include "gsinsert/geometry.hpp"
#include "gsinsert/image.hpp"
#include "gsinsert/scene.hpp"

namespace gsinsert {

struct Camera {
    double fx = 100, fy = 100, cx = 32, cy = 32;
    int width = 64, height = 64;
    UnitQuat rotation;       // world-to-camera
    Vec3 translation{0, 0, 0};

    Vec3 to_camera(const Vec3& world) const { return rotation.rotate(world) + translation; }
    Vec3 center() const { return rotation.conjugate().rotate(-translation); }

    // Positions the camera at eye looking toward target; up fixes the roll.
    static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fx,
                          double fy, int width, int height);
};

nlohmann::ordered_json camera_to_json(const Camera& cam);
Camera camera_from_json(const nlohmann::json& j);

struct Projection {
    double u = 0, v = 0, depth = 0;
};

// Throws BehindCamera when the camera-frame depth is <= 1e-6.
Projection project_point(const Camera& cam, const Vec3& world);

// World-space unit direction of the ray through continuous pixel (u, v).
Vec3 camera_ray(const Camera& cam, double u, double v);

// Differentiable box silhouette: sigmoid(sharpness * signed_distance) of each
// pixel center to the convex hull of the projected box corners (positive
// inside). Corners behind the camera are dropped; throws FullyBehindCamera
// when none remain. sharpness is in units of 1/pixel.
MaskImage box_soft_mask(const Camera& cam, const Box3& box, double sharpness);

// Per-pixel soft coverage 1 - prod_i (1 - opacity_i * G_i(pixel)) over the 2D
// Gaussian footprints of all splats in front of the camera.
MaskImage splat_silhouette(const Camera& cam, const GaussianScene& scene);

// Opacity-weighted mean of projected splat centers; splats behind the camera
// are excluded. Throws NothingVisible when no splat contributes.
std::pair<double, double> projected_centroid(const Camera& cam, const GaussianScene& scene);

// Depth-ordered alpha compositing with degree-0 SH colors over a black
// background. Deterministic: depth ties broken by splat index.
RgbImage render_preview(const Camera& cam, const GaussianScene& scene);

// Forward render plus analytic gradients of sum_pixels <residual, image> with
// respect to each splat's clamped base color and linear opacity. Splats that
// never reach a pixel (behind the camera, off-screen, or fully occluded) get
// zero gradients. residual dimensions must match the camera; throws Degenerate
// otherwise.
struct AppearanceGrads {
    RgbImage image;
    std::vector<Vec3> color_grad;      // d/d base_color, one per splat
    std::vector<double> opacity_grad;  // d/d opacity, one per splat
};
AppearanceGrads render_appearance_grads(const Camera& cam, const GaussianScene& scene,
                                        const RgbImage& residual);

}  // namespace gsinsert
