// Placement refinement: iterative surrogate-gradient descent on the object's
// pose (isotropic scale, rotation, translation) driven by a guidance backend.
// Each step noises the composited render, asks the backend for a predicted
// noise field under a global and a local prompt, blends the two residuals
// with an annealed weight, and adds an attention-localization term tied to
// the region the object occupied at initialization.
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "gsinsert/guidance.hpp"
#include "gsinsert/oracle.hpp"
#include "gsinsert/render.hpp"
#include "gsinsert/scene.hpp"

namespace gsinsert {

struct PromptSpec {
    std::string prompt;
    std::vector<std::string> emphasized_tokens;
};

// beta * global_term + (1 - beta) * local_term.  ConfigError outside [0, 1].
double spatial_loss(double global_term, double local_term, double beta);

// Linear 0 -> 1 over the run: step / (steps - 1); a single-step run uses 0.
double beta_schedule(int step, int steps);

// Attention localization: (1 - max attention inside the region) plus
// lambda * sum of squared attention outside it.  Region pixels are those at
// or above the 0.5 mask threshold; throws EmptyRegion when there are none.
double loc_loss(const MaskImage& attn, const MaskImage& region, double lambda);

// Per-view binary masks of the tight projected bounding box of the object as
// placed by dof_init; frozen for the whole refinement.  Throws EmptyRegion
// when a view sees none of the box.
std::vector<MaskImage> build_loc_regions(const GaussianScene& object, const DoF& dof_init,
                                         const std::vector<Camera>& views);

struct SsdsConfig {
    double learning_rate = 5e-4;
    double t_min = 0.02;   // timestep range, subset of (0, 1)
    double t_max = 0.2;
    int steps = 400;
    double lambda_loc = 0.1;   // weight on attention outside the region
    double loc_weight = 1.0;   // weight of the localization term in the update
    int views_per_step = 1;    // consecutive round-robin views per step
    double fd_step = 1e-3;     // relative finite-difference step per parameter scale
    std::uint64_t seed = 0;
    // The localization gradient needs fresh attention maps at perturbed poses
    // (extra backend queries per parameter).  When false the term still
    // contributes to the reported loss but not to the update.
    bool loc_grad_requery = true;
    std::function<double(double)> weight;  // w(t) on the residual; null = constant 1
    std::string diagnostics_path;          // CSV written when nonempty
    void validate() const;                 // ConfigError on violations
};

struct SsdsDiagnostics {
    int step = 0;
    double t = 0, beta = 0;
    double loss_global = 0, loss_local = 0, loss_loc = 0;
    std::array<double, 8> params{};  // updated state: s, qw, qx, qy, qz, tx, ty, tz
};

// Isotropic-scale pose packing: [scale, qw, qx, qy, qz, tx, ty, tz].
// Throws AnisotropicObjectScale when the DoF scale is not isotropic.
std::array<double, 8> pack_iso_dof(const DoF& dof);
DoF unpack_iso_dof(const std::array<double, 8>& params);  // renormalizes the quaternion

struct SsdsStepContext {
    const GaussianScene* scene = nullptr;   // static surroundings
    const GaussianScene* object = nullptr;  // canonical object (unit placement)
    std::vector<Camera> views;              // views used this step
    std::vector<MaskImage> regions;         // aligned localization regions
    PromptSpec global_prompt;
    PromptSpec local_prompt;
    double beta = 0.0;
    double translation_scale = 1.0;  // world-unit scale of translation FD steps
};

// One update: sample t and per-view noise from rng, query the backend under
// both prompts, and descend the blended surrogate gradient over the 8 pose
// parameters (central finite differences through the renderer; reported
// losses are 0.5 * mean squared residual per query).  Throws NonFinite when
// any loss or gradient is non-finite.
std::pair<DoF, SsdsDiagnostics> ssds_step(const SsdsStepContext& ctx, const DoF& state,
                                          GuidanceBackend& backend, const SsdsConfig& cfg,
                                          Rng& rng);

struct RefineResult {
    DoF dof;
    std::vector<SsdsDiagnostics> history;
};

// Full run: global prompt = parsed.global_target emphasizing the interaction
// word, local prompt = parsed.local_target emphasizing the spatial word;
// localization regions frozen from dof_init; views used round-robin.  The
// diagnostics CSV (when configured) is written even when a step aborts.
RefineResult refine_dof(const GaussianScene& scene, const GaussianScene& object,
                        const DoF& dof_init, const ParsedInsertion& parsed,
                        const std::vector<Camera>& views, GuidanceBackend& backend,
                        const SsdsConfig& cfg);

void write_diagnostics_csv(const std::vector<SsdsDiagnostics>& history,
                           const std::string& path);

}  // namespace gsinsert
