#include "gsinsert/guidance.hpp"

#include <algorithm>
#include <cmath>

namespace gsinsert {

double vp_alpha_bar(double t) {
    if (!(t > 0.0 && t < 1.0))
        throw ConfigError("noise schedule timestep must lie in (0, 1)");
    return 1.0 - t;
}

NoiseImage sample_noise(int width, int height, Rng& rng) {
    if (width <= 0 || height <= 0) throw Degenerate("noise field needs positive dimensions");
    NoiseImage noise(width, height);
    for (double& v : noise.values) v = rng.normal();
    return noise;
}

namespace {

void require_same_shape(const RgbImage& a, const RgbImage& b, const char* what) {
    if (a.width != b.width || a.height != b.height)
        throw Degenerate(std::string(what) + ": image dimensions differ");
}

}  // namespace

RgbImage vp_mix(const RgbImage& x, const NoiseImage& noise, double t) {
    require_same_shape(x, noise, "vp_mix");
    const double ab = vp_alpha_bar(t);
    const double ws = std::sqrt(ab), wn = std::sqrt(1.0 - ab);
    RgbImage out(x.width, x.height);
    for (std::size_t i = 0; i < x.values.size(); ++i)
        out.values[i] = ws * x.values[i] + wn * noise.values[i];
    return out;
}

RgbImage vp_recover(const RgbImage& x_t, const NoiseImage& noise, double t) {
    require_same_shape(x_t, noise, "vp_recover");
    const double ab = vp_alpha_bar(t);
    const double ws = std::sqrt(ab), wn = std::sqrt(1.0 - ab);
    RgbImage out(x_t.width, x_t.height);
    for (std::size_t i = 0; i < x_t.values.size(); ++i)
        out.values[i] = (x_t.values[i] - wn * noise.values[i]) / ws;
    return out;
}

void validate_guidance(const GuidanceQuery& query, const GuidanceResponse& response) {
    const auto bad = [](const std::string& why) { throw SchemaViolation(why); };
    if (response.predicted_noise.width != query.noisy_image.width ||
        response.predicted_noise.height != query.noisy_image.height)
        bad("guidance reply: predicted noise shape differs from the query image");
    for (const double v : response.predicted_noise.values)
        if (!std::isfinite(v)) bad("guidance reply: predicted noise is non-finite");
    for (const std::string& token : query.emphasized_tokens) {
        const auto it = response.attention_maps.find(token);
        if (it == response.attention_maps.end())
            bad("guidance reply: no attention map for emphasized token '" + token + "'");
        const MaskImage& map = it->second;
        if (map.width != query.noisy_image.width || map.height != query.noisy_image.height)
            bad("guidance reply: attention map shape differs from the query image");
        for (const double v : map.values) {
            if (!std::isfinite(v)) bad("guidance reply: attention is non-finite");
            if (v < 0.0) bad("guidance reply: attention must be >= 0");
            if (v > 1.0 + 1e-9) bad("guidance reply: attention must be <= 1");
        }
    }
}

GuidanceResponse guide_validated(GuidanceBackend& backend, const GuidanceQuery& query) {
    GuidanceResponse response = backend.guide(query);
    validate_guidance(query, response);
    return response;
}

// ---------------------------------------------------------------------------
// ZeroResidualBackend
// ---------------------------------------------------------------------------

GuidanceResponse ZeroResidualBackend::guide(const GuidanceQuery& query) {
    require_same_shape(query.noisy_image, query.noise, "zero-residual backend");
    GuidanceResponse r;
    r.predicted_noise = query.noise;
    MaskImage map = attention_ ? *attention_
                               : MaskImage(query.noisy_image.width, query.noisy_image.height, 1.0);
    if (map.width != query.noisy_image.width || map.height != query.noisy_image.height)
        throw Degenerate("configured attention map does not match the query image size");
    for (const std::string& token : query.emphasized_tokens) r.attention_maps[token] = map;
    return r;
}

// ---------------------------------------------------------------------------
// SyntheticQuadraticBackend
// ---------------------------------------------------------------------------

SyntheticQuadraticBackend::SyntheticQuadraticBackend(GaussianScene scene, GaussianScene object,
                                                     DoF target_dof, double gain,
                                                     double attention_gain, double token_amplify)
    : scene_(std::move(scene)),
      gain_(gain),
      attention_gain_(attention_gain),
      token_amplify_(token_amplify) {
    if (!std::isfinite(gain) || gain < 0.0)
        throw ConfigError("quadratic backend gain must be finite and >= 0");
    if (attention_gain <= 0.0 || token_amplify < 1.0)
        throw ConfigError("attention gain must be > 0 and token amplification >= 1");
    target_composite_ = merge(scene_, transform_scene(object, target_dof));
}

const SyntheticQuadraticBackend::PoseRenders& SyntheticQuadraticBackend::renders_for(
    const Camera& pose) {
    const std::string key = camera_to_json(pose).dump();
    const auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    PoseRenders renders;
    renders.target = render_preview(pose, target_composite_);
    renders.background = render_preview(pose, scene_);
    return cache_.emplace(key, std::move(renders)).first->second;
}

GuidanceResponse SyntheticQuadraticBackend::guide(const GuidanceQuery& query) {
    if (!query.pose)
        throw ConfigError("synthetic quadratic backend requires pose conditioning");
    require_same_shape(query.noisy_image, query.noise, "quadratic backend");
    const PoseRenders& renders = renders_for(*query.pose);
    if (renders.target.width != query.noisy_image.width ||
        renders.target.height != query.noisy_image.height)
        throw Degenerate("query image size does not match the conditioning pose");

    const RgbImage x = vp_recover(query.noisy_image, query.noise, query.timestep);
    GuidanceResponse r;
    r.predicted_noise = query.noise;
    for (std::size_t i = 0; i < x.values.size(); ++i)
        r.predicted_noise.values[i] += gain_ * (x.values[i] - renders.target.values[i]);

    MaskImage base(x.width, x.height, 0.0);
    for (int y = 0; y < x.height; ++y) {
        for (int px = 0; px < x.width; ++px) {
            double diff = 0.0;
            for (int c = 0; c < 3; ++c)
                diff += std::abs(x.at(px, y, c) - renders.background.at(px, y, c));
            base.at(px, y) = std::min(1.0, attention_gain_ * diff / 3.0);
        }
    }
    for (const std::string& token : query.emphasized_tokens) {
        MaskImage amplified = base;
        for (double& v : amplified.values) v = std::min(1.0, token_amplify_ * v);
        r.attention_maps[token] = std::move(amplified);
    }
    return r;
}

}  // namespace gsinsert
