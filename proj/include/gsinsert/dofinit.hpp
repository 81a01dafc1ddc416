// Object pose initialization: scale from the oracle's size ratio with
// iterative render-and-ask feedback, rotation from a scored azimuth-elevation
// grid, and translation from multi-view centroid matching with an
// interpenetration penalty.
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gsinsert/oracle.hpp"
#include "gsinsert/render.hpp"
#include "gsinsert/scene.hpp"

namespace gsinsert {

// ---------------------------------------------------------------------------
// Rotation grid
// ---------------------------------------------------------------------------

// Azimuth in [0, 360), elevation in [0, 180), both sampled at fixed steps.
// Candidates are enumerated row-major over (elevation, azimuth): index 0 is
// (azimuth 0, elevation 0), index 1 is (azimuth step, elevation 0), ...
struct RotationGrid {
    double azimuth_step_deg = 10.0;
    double elevation_step_deg = 10.0;

    void validate() const;  // ConfigError unless the steps divide their ranges evenly
    int azimuth_count() const;
    int elevation_count() const;
    int count() const;
    std::pair<double, double> angles_deg(int index) const;  // (azimuth, elevation)
    UnitQuat rotation_at(int index) const;
    std::vector<std::pair<double, double>> all_angles_deg() const;
};

// ---------------------------------------------------------------------------
// Scale
// ---------------------------------------------------------------------------

// Object scale as an absolute bounding diameter: the attachment region's
// largest extent times the oracle's size ratio.  The object itself is
// expected to be pre-normalized to unit diameter.
double init_scale(const DoF& dof_ar, double lambda_rel);  // InvalidRatio on bad ratio

struct ScaleAdjustResult {
    DoF dof;
    int rounds_used = 0;             // oracle interactions performed
    std::vector<double> factors;     // clamped factor applied each non-accept round
};

// Render the composited scene from the primary view, ask the oracle whether
// the object size looks right, and multiply the scale by the (clamped)
// suggested factor until accepted or the round budget runs out.  Factors are
// clamped to [0.5, 2.0] per round.
ScaleAdjustResult iterative_scale_adjust(const GaussianScene& scene, const GaussianScene& object,
                                         const DoF& dof_o, const std::vector<Camera>& views,
                                         const std::string& global_target, OracleBackend& backend,
                                         int max_rounds = 3, int primary_view = 0);

// ---------------------------------------------------------------------------
// Rotation
// ---------------------------------------------------------------------------

// Renders every grid candidate of the object on a canonical object-centric
// camera (128x128) and returns the PNGs in grid order.
std::vector<std::string> render_rotation_candidates(const GaussianScene& object,
                                                    const RotationGrid& grid);

// Core scoring step over prerendered candidates.  `submission_order` (when
// given) permutes the candidate list sent to the oracle; the returned
// rotation is mapped back to grid indexing.
UnitQuat init_rotation(const std::string& scene_png,
                       const std::vector<std::string>& candidate_pngs, const RotationGrid& grid,
                       const std::string& t_gt, OracleBackend& backend,
                       const std::vector<int>* submission_order = nullptr);

// Convenience overload: renders the candidates itself.
UnitQuat init_rotation(const RgbImage& scene_image, const GaussianScene& object,
                       const RotationGrid& grid, const std::string& t_gt,
                       OracleBackend& backend);

// ---------------------------------------------------------------------------
// Translation
// ---------------------------------------------------------------------------

// Interpenetration penalty: sum over attachment splats of
// max(0, 1 + margin_norm - d_M)^2, where d_M is the Mahalanobis distance of
// o_c under the splat's covariance and margin_norm scales the margin by the
// splat's geometric-mean standard deviation.  Zero for an empty region.
double collision_loss(const Vec3& o_c, const GaussianScene& g_ar, double margin);

struct TranslationFitConfig {
    double learning_rate = 5e-3;
    int max_iters = 500;
    double collision_weight = 1.0;
    double collision_margin = -1.0;  // < 0: auto = 0.05 x attachment max extent
    int min_views = 2;
    double convergence_tol = 1e-10;  // on loss delta per accepted step
};

struct TranslationFitResult {
    Vec3 t;
    std::vector<double> per_view_residuals;  // final pixel distance per target view
    double collision_final = 0.0;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    int iters = 0;
    bool converged = false;
};

// Minimizes the squared distance between the object's projected centroid and
// the per-view target pixels, plus the weighted collision penalty at the
// object's 3D centroid.  Reprojection gradients are analytic (chained through
// the pinhole projection); collision gradients use central finite
// differences.  Targets map view index -> pixel; throws Underdetermined when
// fewer than cfg.min_views targets are given.
TranslationFitResult init_translation(const GaussianScene& object, double s_o,
                                      const UnitQuat& r_o,
                                      const std::map<int, std::pair<double, double>>& targets,
                                      const std::vector<Camera>& views,
                                      const GaussianScene& g_ar,
                                      const TranslationFitConfig& cfg);

}  // namespace gsinsert
