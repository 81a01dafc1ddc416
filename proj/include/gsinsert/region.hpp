// Attachment-region stage: detect per-view region masks through the
// detection oracle, fit the region box's degrees of freedom against those
// masks, and split the scene into the attachment region and the rest.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gsinsert/image.hpp"
#include "gsinsert/oracle.hpp"
#include "gsinsert/render.hpp"
#include "gsinsert/scene.hpp"

namespace gsinsert {

struct RegionFitConfig {
    double learning_rate = 5e-3;
    int max_iters = 500;
    double sharpness = 4.0;        // px^-1 slope of the soft box mask
    double convergence_tol = 1e-5; // on loss delta per accepted step
    std::optional<DoF> init;       // required; see default_region_init
};

// Default starting box: axis-aligned unit cube at the scene centroid scaled
// to half the scene bounding-box diagonal.
DoF default_region_init(const GaussianScene& scene);

// Rasterizes a closed pixel box (corners inclusive) into a binary mask.
MaskImage rasterize_box_mask(const DetectBox& box, int width, int height);

// One mask per view: the detection oracle's box filled as a binary
// rectangle; views where the oracle reports nothing yield all-zero masks.
// Throws DetectionMiss when the oracle misses in at least half the views.
std::vector<MaskImage> detect_attachment_masks(const std::vector<Camera>& views,
                                               const GaussianScene& scene,
                                               const std::string& t_ar,
                                               OracleBackend& backend);

// Total fit loss: sum over views of the per-pixel-mean binary cross entropy
// between the soft projected box mask and the binary detection mask.
double region_fit_loss(const std::vector<MaskImage>& masks, const std::vector<Camera>& views,
                       const DoF& dof, double sharpness);

struct RegionFitResult {
    DoF dof;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    int iters = 0;
    bool converged = false;            // false = iteration budget hit (reported, not fatal)
    std::vector<double> per_view_iou;  // binarized fit-vs-mask IoU per view
};

// Gradient descent over the 10 box parameters (3 scale, 4 quaternion with
// renormalization, 3 translation) with central finite differences and
// backtracking halving; the loss is monotone non-increasing.  Throws
// Degenerate when every mask is empty, ConfigError when cfg.init is unset.
RegionFitResult fit_region_dof(const std::vector<MaskImage>& masks,
                               const std::vector<Camera>& views, const RegionFitConfig& cfg);

struct AttachmentSplit {
    GaussianScene region;
    GaussianScene rest;
    bool empty_region = false;  // advisory: the fitted box selected no splats
};

// Splits the scene by containment in the fitted box.
AttachmentSplit extract_attachment(const GaussianScene& scene, const DoF& dof_ar);

}  // namespace gsinsert
