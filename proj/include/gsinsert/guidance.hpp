// Guidance backend contract for placement refinement: callers hand a noised
// render plus prompt to the backend and receive a predicted noise field and
// per-token attention maps.  Two deterministic backends ship here: a
// zero-residual stub and a synthetic quadratic backend whose residual pulls
// the render toward a stored target placement.
#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gsinsert/errors.hpp"
#include "gsinsert/image.hpp"
#include "gsinsert/render.hpp"
#include "gsinsert/rng.hpp"
#include "gsinsert/scene.hpp"

namespace gsinsert {

// ---------------------------------------------------------------------------
// Variance-preserving noise schedule
// ---------------------------------------------------------------------------

// Signal retention at time t in (0, 1): alpha_bar(t) = 1 - t.  Throws
// ConfigError outside the open interval.
double vp_alpha_bar(double t);

// Standard-normal 3-channel field drawn row-major (r, g, b per pixel).
NoiseImage sample_noise(int width, int height, Rng& rng);

// x_t = sqrt(alpha_bar) * x + sqrt(1 - alpha_bar) * noise.
RgbImage vp_mix(const RgbImage& x, const NoiseImage& noise, double t);

// Inverse of vp_mix for a known noise field.
RgbImage vp_recover(const RgbImage& x_t, const NoiseImage& noise, double t);

// ---------------------------------------------------------------------------
// Contract
// ---------------------------------------------------------------------------

struct GuidanceQuery {
    RgbImage noisy_image;                        // x_t
    std::string prompt;
    std::vector<std::string> emphasized_tokens;  // tokens whose attention is amplified
    double timestep = 0.1;                       // in (0, 1)
    NoiseImage noise;                            // the epsilon used to build x_t
    std::optional<Camera> pose;                  // view conditioning, when known
};

struct GuidanceResponse {
    NoiseImage predicted_noise;
    // One map per emphasized token; values in [0, 1], same dims as the image.
    std::map<std::string, MaskImage> attention_maps;
};

class GuidanceBackend {
  public:
    virtual ~GuidanceBackend() = default;
    virtual GuidanceResponse guide(const GuidanceQuery& query) = 0;
};

// Contract checks on a reply: shapes match the query, noise prediction is
// finite, and every emphasized token has a map with values in [0, 1] (small
// numerical overshoot above 1 is rejected).  Throws SchemaViolation.
void validate_guidance(const GuidanceQuery& query, const GuidanceResponse& response);

// guide + validate_guidance in one call.
GuidanceResponse guide_validated(GuidanceBackend& backend, const GuidanceQuery& query);

// ---------------------------------------------------------------------------
// Deterministic backends
// ---------------------------------------------------------------------------

// Predicts exactly the noise that was mixed in (zero residual).  Attention for
// every emphasized token is the configured map, or all-ones when unset.
class ZeroResidualBackend final : public GuidanceBackend {
  public:
    ZeroResidualBackend() = default;
    explicit ZeroResidualBackend(MaskImage attention) : attention_(std::move(attention)) {}
    GuidanceResponse guide(const GuidanceQuery& query) override;

  private:
    std::optional<MaskImage> attention_;
};

// Recovers the clean render x from x_t, then predicts
//   predicted_noise = noise + gain * (x - target_render(pose)),
// so the surrogate residual is linear in the image-space placement error.
// Attention is a soft blob over pixels where the current render departs from
// the stored object-free background:
//   base = min(1, attention_gain * mean_channel |x - background|),
// amplified by token_amplify (then capped at 1) on emphasized tokens.
// Target and background renders are cached per pose.  Queries require pose
// conditioning (ConfigError otherwise).
class SyntheticQuadraticBackend final : public GuidanceBackend {
  public:
    SyntheticQuadraticBackend(GaussianScene scene, GaussianScene object, DoF target_dof,
                              double gain = 1.0, double attention_gain = 3.0,
                              double token_amplify = 2.0);
    GuidanceResponse guide(const GuidanceQuery& query) override;

  private:
    struct PoseRenders {
        RgbImage target;
        RgbImage background;
    };
    const PoseRenders& renders_for(const Camera& pose);

    GaussianScene scene_;
    GaussianScene target_composite_;
    double gain_;
    double attention_gain_;
    double token_amplify_;
    std::map<std::string, PoseRenders> cache_;  // keyed by serialized camera
};

}  // namespace gsinsert
