#include "gsinsert/render.hpp"

#include <cmath>

#include "doctest.h"
#include "gsinsert/errors.hpp"
#include "gsinsert/rng.hpp"

using namespace gsinsert;

namespace {

Camera test_camera() {
    // Looks from world -y toward the origin, z-up; 64x64, fx = fy = 100.
    return Camera::look_at({0, -10, 0}, {0, 0, 0}, {0, 0, 1}, 100, 100, 64, 64);
}

GaussianSplat simple_splat(const Vec3& mean, double sigma, double opacity, const Vec3& color) {
    GaussianSplat s;
    s.mean = mean;
    s.log_scale = {std::log(sigma), std::log(sigma), std::log(sigma)};
    s.opacity = opacity;
    s.sh = {color_to_dc(color)};
    return s;
}

double mask_integral(const MaskImage& m) { return m.sum(); }

}  // namespace

TEST_CASE("project_point maps the optical axis to the principal point") {
    const Camera cam = test_camera();
    const Projection p = project_point(cam, {0, 0, 0});
    CHECK(p.u == doctest::Approx(32.0).epsilon(1e-12));
    CHECK(p.v == doctest::Approx(32.0).epsilon(1e-12));
    CHECK(p.depth == doctest::Approx(10.0).epsilon(1e-12));
}

TEST_CASE("project_point pinhole arithmetic") {
    Camera cam;  // identity pose: camera frame == world frame
    cam.fx = 100;
    cam.fy = 100;
    cam.cx = 64;
    cam.cy = 64;
    cam.width = 128;
    cam.height = 128;
    const Projection p = project_point(cam, {1.0, 0.0, 2.0});
    CHECK(p.u == doctest::Approx(64 + 100 * 0.5).epsilon(1e-12));
    CHECK(p.v == doctest::Approx(64.0).epsilon(1e-12));
}

TEST_CASE("project_point throws for points at or behind the camera") {
    Camera cam;
    CHECK_THROWS_AS(project_point(cam, {0, 0, 0}), BehindCamera);
    CHECK_THROWS_AS(project_point(cam, {0, 0, -1}), BehindCamera);
}

TEST_CASE("look_at orients the image with the up vector") {
    const Camera cam = test_camera();
    // World +z (up) must project above the center: v < cy.
    const Projection above = project_point(cam, {0, 0, 1});
    CHECK(above.v < 32.0);
    // World +x must project to the right: u > cx.
    const Projection right = project_point(cam, {1, 0, 0});
    CHECK(right.u > 32.0);
}

TEST_CASE("camera_ray inverts projection directions") {
    const Camera cam = test_camera();
    Rng rng(51);
    for (int i = 0; i < 30; ++i) {
        const Vec3 p{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
        const Projection proj = project_point(cam, p);
        const Vec3 dir = camera_ray(cam, proj.u, proj.v);
        const Vec3 want = (p - cam.center()).normalized();
        CHECK((dir - want).norm() <= 1e-9);
    }
}

TEST_CASE("camera JSON round-trip") {
    const Camera cam = test_camera();
    const Camera back = camera_from_json(camera_to_json(cam));
    CHECK(back.fx == cam.fx);
    CHECK(back.width == cam.width);
    CHECK(back.rotation.geodesic_angle(cam.rotation) <= 1e-12);
    CHECK((back.translation - cam.translation).norm() <= 1e-12);
}

TEST_CASE("box_soft_mask covers the frame for an enclosing box") {
    const Camera cam = test_camera();
    Box3 box;
    box.dof.scale = {50, 50, 50};
    const MaskImage m = box_soft_mask(cam, box, 4.0);
    for (double v : m.values) CHECK(v > 0.5);
}

TEST_CASE("box_soft_mask is 0.5 exactly on the hull edge") {
    // Box squashed flat along the view axis: every corner projects at depth
    // 10, so the right edge sits at u = 32 + 100 * (0.85 / 10) = 40.5, the
    // sample point of pixel x = 40.
    const Camera cam = test_camera();
    Box3 box;
    box.dof.scale = {1.7, 1e-9, 1.7};
    const MaskImage m = box_soft_mask(cam, box, 4.0);
    CHECK(m.at(40, 32) == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(m.at(32, 32) > 0.99);
    CHECK(m.at(50, 32) < 0.01);
}

TEST_CASE("box_soft_mask throws when every corner is behind the camera") {
    const Camera cam = test_camera();
    Box3 box;
    box.dof.translation = {0, -20, 0};  // behind the eye at y = -10
    CHECK_THROWS_AS(box_soft_mask(cam, box, 4.0), FullyBehindCamera);
}

TEST_CASE("box_soft_mask integral grows with box scale") {
    const Camera cam = test_camera();
    Box3 small, large;
    small.dof.scale = {1, 1, 1};
    large.dof.scale = {2, 2, 2};
    CHECK(mask_integral(box_soft_mask(cam, small, 4.0)) <
          mask_integral(box_soft_mask(cam, large, 4.0)));
}

TEST_CASE("box_soft_mask integral differences are finite-difference stable") {
    // Forward and central differences of the mask integral agree for every
    // box parameter: the mask is smooth enough to drive gradient descent.
    const Camera cam = test_camera();
    Rng rng(52);
    int checked = 0;
    for (int trial = 0; trial < 20; ++trial) {
        Box3 box;
        box.dof.scale = {rng.uniform(0.8, 2.5), rng.uniform(0.8, 2.5), rng.uniform(0.8, 2.5)};
        box.dof.rotation = UnitQuat(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        box.dof.translation = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        const double sharpness = rng.uniform(2.0, 8.0);

        auto eval = [&](const DoF& d) {
            Box3 b;
            b.dof = d;
            return mask_integral(box_soft_mask(cam, b, sharpness));
        };
        // Pack the 10 raw parameters.
        auto perturb = [&](int param, double h) {
            DoF d = box.dof;
            double q[4] = {d.rotation.w, d.rotation.x, d.rotation.y, d.rotation.z};
            switch (param) {
                case 0: d.scale.x += h; break;
                case 1: d.scale.y += h; break;
                case 2: d.scale.z += h; break;
                case 3: case 4: case 5: case 6: {
                    q[param - 3] += h;
                    d.rotation = UnitQuat(q[0], q[1], q[2], q[3]);
                    break;
                }
                case 7: d.translation.x += h; break;
                case 8: d.translation.y += h; break;
                default: d.translation.z += h; break;
            }
            return eval(d);
        };
        const double h = 1e-4;
        for (int p = 0; p < 10; ++p) {
            // Central-difference estimates at h and h/2 must agree: the mask
            // is smooth in every DoF parameter, so the estimator converges.
            const double g1 = (perturb(p, h) - perturb(p, -h)) / (2 * h);
            const double g2 = (perturb(p, h / 2) - perturb(p, -h / 2)) / h;
            if (std::abs(g2) < 0.5) continue;  // skip vanishing directions
            CHECK(std::abs(g1 - g2) <= 0.05 * std::abs(g2) + 1e-6);
            ++checked;
        }
    }
    CHECK(checked > 50);
}

TEST_CASE("splat_silhouette of zero-opacity splats is empty") {
    const Camera cam = test_camera();
    GaussianScene scene;
    scene.splats.push_back(simple_splat({0, 0, 0}, 0.3, 0.0, {1, 0, 0}));
    const MaskImage m = splat_silhouette(cam, scene);
    for (double v : m.values) CHECK(v == 0.0);
}

TEST_CASE("splat_silhouette peaks at the projected mean") {
    const Camera cam = test_camera();
    GaussianScene scene;
    scene.splats.push_back(simple_splat({0.123, 0, 0.271}, 0.4, 0.9, {1, 0, 0}));
    const MaskImage m = splat_silhouette(cam, scene);
    const Projection p = project_point(cam, scene.splats[0].mean);
    const int px = static_cast<int>(std::lround(p.u - 0.5));
    const int py = static_cast<int>(std::lround(p.v - 0.5));
    double best = -1;
    int bx = -1, by = -1;
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
            if (m.at(x, y) > best) {
                best = m.at(x, y);
                bx = x;
                by = y;
            }
    CHECK(bx == px);
    CHECK(by == py);
    CHECK(best <= 0.9 + 1e-12);
    CHECK(best > 0.85);
}

TEST_CASE("projected_centroid of a single splat is its projection") {
    const Camera cam = test_camera();
    GaussianScene scene;
    scene.splats.push_back(simple_splat({0.5, 0.2, -0.3}, 0.2, 0.7, {1, 1, 1}));
    const auto [u, v] = projected_centroid(cam, scene);
    const Projection p = project_point(cam, scene.splats[0].mean);
    CHECK(u == doctest::Approx(p.u).epsilon(1e-12));
    CHECK(v == doctest::Approx(p.v).epsilon(1e-12));
}

TEST_CASE("projected_centroid of two equal splats is the pixel midpoint") {
    const Camera cam = test_camera();
    GaussianScene scene;
    scene.splats.push_back(simple_splat({-1, 0, 0}, 0.2, 0.5, {1, 1, 1}));
    scene.splats.push_back(simple_splat({1, 0, 0}, 0.2, 0.5, {1, 1, 1}));
    const auto [u, v] = projected_centroid(cam, scene);
    const Projection a = project_point(cam, scene.splats[0].mean);
    const Projection b = project_point(cam, scene.splats[1].mean);
    CHECK(u == doctest::Approx(0.5 * (a.u + b.u)).epsilon(1e-12));
    CHECK(v == doctest::Approx(0.5 * (a.v + b.v)).epsilon(1e-12));
}

TEST_CASE("projected_centroid matches an explicit weighted mean") {
    const Camera cam = test_camera();
    Rng rng(53);
    GaussianScene scene;
    double su = 0, sv = 0, sw = 0;
    for (int i = 0; i < 40; ++i) {
        const Vec3 mean{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
        const double op = rng.uniform(0.1, 1.0);
        scene.splats.push_back(simple_splat(mean, 0.1, op, {1, 1, 1}));
        const Projection p = project_point(cam, mean);
        su += op * p.u;
        sv += op * p.v;
        sw += op;
    }
    const auto [u, v] = projected_centroid(cam, scene);
    CHECK(u == doctest::Approx(su / sw).epsilon(1e-12));
    CHECK(v == doctest::Approx(sv / sw).epsilon(1e-12));
}

TEST_CASE("projected_centroid ignores splat order") {
    const Camera cam = test_camera();
    Rng rng(54);
    GaussianScene scene;
    for (int i = 0; i < 10; ++i) {
        scene.splats.push_back(simple_splat(
            {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)}, 0.1,
            rng.uniform(0.2, 1.0), {1, 1, 1}));
    }
    GaussianScene reversed = scene;
    std::reverse(reversed.splats.begin(), reversed.splats.end());
    const auto [u1, v1] = projected_centroid(cam, scene);
    const auto [u2, v2] = projected_centroid(cam, reversed);
    CHECK(u1 == doctest::Approx(u2).epsilon(1e-12));
    CHECK(v1 == doctest::Approx(v2).epsilon(1e-12));
}

TEST_CASE("projected_centroid throws when nothing is visible") {
    const Camera cam = test_camera();
    GaussianScene scene;
    scene.splats.push_back(simple_splat({0, -20, 0}, 0.1, 1.0, {1, 1, 1}));
    CHECK_THROWS_AS(projected_centroid(cam, scene), NothingVisible);
}

TEST_CASE("render_preview paints a single splat with its base color") {
    const Camera cam = test_camera();
    GaussianScene scene;
    scene.splats.push_back(simple_splat({0, 0, 0}, 0.5, 1.0, {0.9, 0.1, 0.1}));
    const RgbImage img = render_preview(cam, scene);
    CHECK(img.at(32, 32, 0) > 0.7);
    CHECK(img.at(32, 32, 1) < 0.2);
    CHECK(img.at(0, 0, 0) == 0.0);  // black background
}

TEST_CASE("render_preview occludes far splats behind opaque near splats") {
    const Camera cam = test_camera();
    GaussianScene scene;
    scene.splats.push_back(simple_splat({0, 2, 0}, 0.4, 1.0, {0.9, 0.1, 0.1}));   // far, red
    scene.splats.push_back(simple_splat({0, -2, 0}, 0.4, 1.0, {0.1, 0.1, 0.9}));  // near, blue
    const RgbImage img = render_preview(cam, scene);
    CHECK(img.at(32, 32, 2) > 0.7);
    CHECK(img.at(32, 32, 0) < 0.2);
}

TEST_CASE("render_preview is deterministic, including depth ties") {
    const Camera cam = test_camera();
    Rng rng(55);
    GaussianScene scene;
    for (int i = 0; i < 30; ++i) {
        scene.splats.push_back(simple_splat(
            {rng.uniform(-1, 1), 0.0, rng.uniform(-1, 1)}, 0.2, rng.uniform(0.3, 1.0),
            {rng.uniform(), rng.uniform(), rng.uniform()}));
    }
    const RgbImage a = render_preview(cam, scene);
    const RgbImage b = render_preview(cam, scene);
    CHECK(png_encode_rgb(a) == png_encode_rgb(b));
}

TEST_CASE("silhouette IoU of a scene with itself is 1") {
    const Camera cam = test_camera();
    const GaussianScene obj = synth_primitive(PrimitiveKind::TwoLobe, 300, 9);
    const MaskImage m1 = splat_silhouette(cam, obj);
    const MaskImage m2 = splat_silhouette(cam, obj);
    CHECK(mask_iou(m1, m2) == 1.0);
}
