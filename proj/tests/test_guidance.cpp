#include <cmath>

#include "doctest.h"

#include "gsinsert/guidance.hpp"

using namespace gsinsert;

namespace {

Camera demo_camera() {
    return Camera::look_at({0, -3.0, 1.0}, {0, 0, 0}, {0, 0, 1}, 40, 40, 32, 32);
}

GaussianScene demo_scene() { return synth_primitive(PrimitiveKind::Box, 30, 4); }
GaussianScene demo_object() { return synth_primitive(PrimitiveKind::Sphere, 20, 6); }

DoF demo_target() {
    DoF dof;
    dof.scale = {0.4, 0.4, 0.4};
    dof.translation = {0.0, 0.0, 0.6};
    return dof;
}

GuidanceQuery query_for(const RgbImage& x, double t, Rng& rng, const Camera& cam) {
    GuidanceQuery q;
    q.noise = sample_noise(x.width, x.height, rng);
    q.noisy_image = vp_mix(x, q.noise, t);
    q.timestep = t;
    q.prompt = "a sphere on the crate";
    q.emphasized_tokens = {"on"};
    q.pose = cam;
    return q;
}

}  // namespace

TEST_CASE("noise schedule mixes and recovers exactly") {
    CHECK(vp_alpha_bar(0.3) == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(vp_alpha_bar(0.02) == doctest::Approx(0.98).epsilon(1e-15));
    CHECK_THROWS_AS(vp_alpha_bar(0.0), ConfigError);
    CHECK_THROWS_AS(vp_alpha_bar(1.0), ConfigError);
    CHECK_THROWS_AS(vp_alpha_bar(-0.1), ConfigError);

    Rng rng(99);
    RgbImage x(8, 8);
    for (double& v : x.values) v = rng.uniform();
    const NoiseImage noise = sample_noise(8, 8, rng);
    const RgbImage x_t = vp_mix(x, noise, 0.15);
    const RgbImage back = vp_recover(x_t, noise, 0.15);
    for (std::size_t i = 0; i < x.values.size(); ++i)
        CHECK(back.values[i] == doctest::Approx(x.values[i]).epsilon(1e-12));

    // Mixing weights: sqrt(alpha_bar) on signal, sqrt(1 - alpha_bar) on noise.
    CHECK(x_t.values[0] == doctest::Approx(std::sqrt(0.85) * x.values[0] +
                                           std::sqrt(0.15) * noise.values[0]));

    RgbImage wrong(4, 4);
    CHECK_THROWS_AS(vp_mix(wrong, noise, 0.15), Degenerate);
}

TEST_CASE("noise sampling is seeded and standard normal") {
    Rng a(7), b(7), c(8);
    const NoiseImage na = sample_noise(16, 16, a);
    const NoiseImage nb = sample_noise(16, 16, b);
    const NoiseImage nc = sample_noise(16, 16, c);
    CHECK(na.values == nb.values);
    CHECK(na.values != nc.values);

    double mean = 0, var = 0;
    for (const double v : na.values) mean += v;
    mean /= static_cast<double>(na.values.size());
    for (const double v : na.values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(na.values.size());
    CHECK(std::abs(mean) < 0.1);
    CHECK(var == doctest::Approx(1.0).epsilon(0.15));

    CHECK_THROWS_AS(sample_noise(0, 4, a), Degenerate);
}

TEST_CASE("zero-residual backend echoes the noise and serves attention") {
    Rng rng(3);
    RgbImage x(8, 8, 0.25);
    GuidanceQuery q = query_for(x, 0.1, rng, demo_camera());

    ZeroResidualBackend plain;
    const GuidanceResponse r = guide_validated(plain, q);
    CHECK(r.predicted_noise.values == q.noise.values);
    REQUIRE(r.attention_maps.count("on") == 1);
    CHECK(r.attention_maps.at("on").sum() == doctest::Approx(64.0));  // all ones

    MaskImage half(8, 8, 0.0);
    for (int y = 0; y < 4; ++y)
        for (int px = 0; px < 8; ++px) half.at(px, y) = 1.0;
    ZeroResidualBackend fixed(half);
    const GuidanceResponse rf = guide_validated(fixed, q);
    CHECK(rf.attention_maps.at("on").sum() == doctest::Approx(32.0));

    ZeroResidualBackend mismatched(MaskImage(4, 4, 1.0));
    CHECK_THROWS_AS(mismatched.guide(q), Degenerate);
}

TEST_CASE("guidance contract violations are rejected") {
    Rng rng(5);
    RgbImage x(8, 8, 0.5);
    const GuidanceQuery q = query_for(x, 0.1, rng, demo_camera());

    GuidanceResponse good;
    good.predicted_noise = q.noise;
    good.attention_maps["on"] = MaskImage(8, 8, 0.5);
    CHECK_NOTHROW(validate_guidance(q, good));

    GuidanceResponse wrong_shape = good;
    wrong_shape.predicted_noise = NoiseImage(4, 4);
    CHECK_THROWS_AS(validate_guidance(q, wrong_shape), SchemaViolation);

    GuidanceResponse nan_noise = good;
    nan_noise.predicted_noise.values[3] = std::nan("");
    CHECK_THROWS_AS(validate_guidance(q, nan_noise), SchemaViolation);

    GuidanceResponse missing = good;
    missing.attention_maps.clear();
    CHECK_THROWS_AS(validate_guidance(q, missing), SchemaViolation);

    GuidanceResponse bad_map_shape = good;
    bad_map_shape.attention_maps["on"] = MaskImage(4, 4, 0.5);
    CHECK_THROWS_AS(validate_guidance(q, bad_map_shape), SchemaViolation);

    GuidanceResponse negative = good;
    negative.attention_maps["on"].values[0] = -0.01;
    CHECK_THROWS_AS(validate_guidance(q, negative), SchemaViolation);

    GuidanceResponse too_big = good;
    too_big.attention_maps["on"].values[0] = 1.01;
    CHECK_THROWS_AS(validate_guidance(q, too_big), SchemaViolation);
}

TEST_CASE("quadratic backend predicts pure noise at the target placement") {
    const Camera cam = demo_camera();
    const GaussianScene scene = demo_scene();
    const GaussianScene object = demo_object();
    const DoF target = demo_target();
    SyntheticQuadraticBackend backend(scene, object, target, 1.0);

    const RgbImage x_target =
        render_preview(cam, merge(scene, transform_scene(object, target)));
    Rng rng(11);
    const GuidanceQuery q = query_for(x_target, 0.12, rng, cam);
    const GuidanceResponse r = guide_validated(backend, q);
    for (std::size_t i = 0; i < q.noise.values.size(); ++i)
        CHECK(r.predicted_noise.values[i] == doctest::Approx(q.noise.values[i]).epsilon(1e-9));
}

TEST_CASE("quadratic backend residual is linear in the image-space error") {
    const Camera cam = demo_camera();
    const GaussianScene scene = demo_scene();
    const GaussianScene object = demo_object();
    const DoF target = demo_target();
    const double gain = 2.5;
    SyntheticQuadraticBackend backend(scene, object, target, gain);

    const RgbImage x_target =
        render_preview(cam, merge(scene, transform_scene(object, target)));
    DoF offset = target;
    offset.translation.x += 0.3;
    const RgbImage x_off = render_preview(cam, merge(scene, transform_scene(object, offset)));

    Rng rng(13);
    const GuidanceQuery q = query_for(x_off, 0.1, rng, cam);
    const GuidanceResponse r = guide_validated(backend, q);
    for (std::size_t i = 0; i < q.noise.values.size(); ++i) {
        const double expected =
            q.noise.values[i] + gain * (x_off.values[i] - x_target.values[i]);
        CHECK(r.predicted_noise.values[i] == doctest::Approx(expected).epsilon(1e-9));
    }
}

TEST_CASE("quadratic backend attention tracks the object against the background") {
    const Camera cam = demo_camera();
    const GaussianScene scene = demo_scene();
    const GaussianScene object = demo_object();
    const DoF target = demo_target();
    const double attention_gain = 3.0, amplify = 2.0;
    SyntheticQuadraticBackend backend(scene, object, target, 1.0, attention_gain, amplify);

    const RgbImage x =
        render_preview(cam, merge(scene, transform_scene(object, target)));
    const RgbImage background = render_preview(cam, scene);

    Rng rng(17);
    const GuidanceQuery q = query_for(x, 0.1, rng, cam);
    const GuidanceResponse r = guide_validated(backend, q);
    const MaskImage& attn = r.attention_maps.at("on");

    double max_diff = 0.0;
    for (int y = 0; y < x.height; ++y) {
        for (int px = 0; px < x.width; ++px) {
            double diff = 0;
            for (int ch = 0; ch < 3; ++ch)
                diff += std::abs(x.at(px, y, ch) - background.at(px, y, ch));
            diff /= 3.0;
            max_diff = std::max(max_diff, diff);
            const double expected =
                std::min(1.0, amplify * std::min(1.0, attention_gain * diff));
            // Recovery of x from x_t leaves ~1e-12 noise in the diff.
            CHECK(attn.at(px, y) == doctest::Approx(expected).epsilon(1e-6));
        }
    }
    CHECK(max_diff > 0.05);  // the object is actually visible in this view
}

TEST_CASE("quadratic backend requires pose conditioning and is deterministic") {
    const GaussianScene scene = demo_scene();
    const GaussianScene object = demo_object();
    SyntheticQuadraticBackend backend(scene, object, demo_target());

    Rng rng(23);
    RgbImage x(32, 32, 0.3);
    GuidanceQuery q = query_for(x, 0.1, rng, demo_camera());
    q.pose.reset();
    CHECK_THROWS_AS(backend.guide(q), ConfigError);

    q.pose = demo_camera();
    const GuidanceResponse a = backend.guide(q);
    const GuidanceResponse b = backend.guide(q);  // served from the pose cache
    CHECK(a.predicted_noise.values == b.predicted_noise.values);
    CHECK(a.attention_maps.at("on").values == b.attention_maps.at("on").values);

    CHECK_THROWS_AS(SyntheticQuadraticBackend(scene, object, demo_target(), -1.0),
                    ConfigError);
}
