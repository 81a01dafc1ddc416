// Appearance refinement stage: pick the view that best matches a reference
// photo, assemble a reference-weighted multi-view dataset, and run a guided
// update loop that touches only splat colors and opacities (all geometry
// fields stay frozen).  The actual trainable image model lives behind the
// TrainableBackend contract; a deterministic analytic toy backend ships here
// for tests and synthetic pipelines.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gsinsert/guidance.hpp"
#include "gsinsert/image.hpp"
#include "gsinsert/oracle.hpp"
#include "gsinsert/render.hpp"
#include "gsinsert/scene.hpp"

namespace gsinsert {

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

struct RefEntry {
    RgbImage image;
    Camera pose;
    bool is_reference = false;  // true for repeated (reference photo, best view) pairs
};

// Rendered views first, repeated reference entries last.  All reference
// entries share the same pose and image, and n_reference > n_rendered.
struct RefDataset {
    std::vector<RefEntry> entries;
    int n_rendered = 0;
    int n_reference = 0;
};

// Content digest over entry images, poses, and flags; used by backends to
// make fitting idempotent.
std::string dataset_digest(const RefDataset& dataset);

struct AppearanceConfig {
    double ratio = 3.0;    // reference copies per rendered view
    int n_views = 12;      // rendered views on the azimuth ring
    double t_min = 0.02;   // lower bound for sampled timesteps
    double t_upper_start = 0.5;  // upper bound at the first step ...
    double t_upper_end = 0.25;   // ... annealed linearly down to this
    std::string subject_token = "<token>";
    std::string object_text = "object";  // noun phrase the token decorates
    int steps = 300;
    // Paired with the pixel-mean-normalized surrogate gradient, which keeps
    // per-splat gradients small and resolution-independent.
    double learning_rate = 50.0;
    std::uint64_t seed = 0;

    // Throws ConfigError on non-finite or out-of-range fields.
    void validate() const;
};

// ---------------------------------------------------------------------------
// Trainable backend contract
// ---------------------------------------------------------------------------

// A guidance backend that can first be specialized to a subject dataset.
// fit() must be idempotent per dataset digest; guide() must be deterministic
// given (query, fitted state).
class TrainableBackend : public GuidanceBackend {
  public:
    virtual void fit(const RefDataset& dataset, const std::string& subject_prompt) = 0;
};

// Analytic stand-in for a fine-tuned image model: after fit() it remembers
// the reference image and pose; guide() at that pose predicts
// noise + gain * (render - reference), and plain noise elsewhere, so updates
// pull the object's appearance toward the reference photo.  gain = 0 yields a
// zero-residual backend.  Attention maps are all-ones for emphasized tokens.
class ToyAppearanceBackend : public TrainableBackend {
  public:
    explicit ToyAppearanceBackend(double gain = 1.0);

    void fit(const RefDataset& dataset, const std::string& subject_prompt) override;
    GuidanceResponse guide(const GuidanceQuery& query) override;

    int fit_count() const { return fit_count_; }  // actual (non-skipped) fits

  private:
    double gain_;
    bool fitted_ = false;
    std::string digest_;
    RgbImage ref_image_;
    std::string ref_pose_key_;
    int fit_count_ = 0;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// Best-matching view for the reference image: renders the object from every
// view, embeds renders and the reference through the oracle backend, and
// returns the view with the highest cosine similarity (ties within 1e-12 go
// to the lower index).  Throws Degenerate with fewer than two views or on
// zero-norm embeddings; SchemaViolation on dimension mismatches.
Camera estimate_reference_pose(const GaussianScene& object, const RgbImage& i_o,
                               const std::vector<Camera>& views, OracleBackend& backend);

// n_views renders from an even azimuth ring around the object (at its
// equatorial elevation, image dimensions taken from i_o) followed by
// round(ratio * n_views) copies of (i_o, p_star).  Throws RatioTooLow when
// the reference copies would not outnumber the rendered views.
RefDataset build_ref_dataset(const GaussianScene& object, const RgbImage& i_o,
                             const Camera& p_star, const AppearanceConfig& cfg);

// Inserts the subject token before the final word ("a dog" -> "a <token>
// dog"); an empty token leaves the text unchanged.  Throws ConfigError when
// the text has no words.
std::string format_subject_prompt(const std::string& object_text, const std::string& token);

// Fits the backend to the dataset, then runs cfg.steps guided updates
// round-robin over dataset poses.  Each step renders the object, noises the
// render at a timestep drawn from [t_min, upper(step)] (upper annealed
// linearly from t_upper_start to t_upper_end), queries the backend, and
// applies the residual-weighted compositing gradient to degree-0 SH colors
// and opacities only.  Means, scales, rotations, and splat count are
// untouched.  Deterministic given (inputs, config, backend state).  Throws
// NonFinite when a gradient or update goes non-finite.
GaussianScene refine_appearance(const GaussianScene& object, const RefDataset& dataset,
                                TrainableBackend& backend, const AppearanceConfig& cfg);

}  // namespace gsinsert
