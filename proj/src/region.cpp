#include "gsinsert/region.hpp"

#include <algorithm>
#include <cmath>

#include "gsinsert/optim.hpp"

namespace gsinsert {

DoF default_region_init(const GaussianScene& scene) {
    const auto [lo, hi] = scene_bounds(scene);
    const double extent = 0.5 * (hi - lo).norm();
    DoF dof;
    dof.scale = {extent, extent, extent};
    dof.translation = scene_centroid(scene);
    return dof;
}

MaskImage rasterize_box_mask(const DetectBox& box, int width, int height) {
    if (!(0 <= box.x0 && box.x0 <= box.x1 && box.x1 < width && 0 <= box.y0 &&
          box.y0 <= box.y1 && box.y1 < height))
        throw Degenerate("detection box exceeds image bounds");
    MaskImage mask(width, height, 0.0);
    for (int y = box.y0; y <= box.y1; ++y)
        for (int x = box.x0; x <= box.x1; ++x) mask.at(x, y) = 1.0;
    return mask;
}

std::vector<MaskImage> detect_attachment_masks(const std::vector<Camera>& views,
                                               const GaussianScene& scene,
                                               const std::string& t_ar,
                                               OracleBackend& backend) {
    if (views.size() < 2) throw Degenerate("attachment detection needs at least 2 views");
    std::vector<MaskImage> masks;
    masks.reserve(views.size());
    std::size_t misses = 0;
    for (const Camera& cam : views) {
        const std::string png = png_encode_rgb(render_preview(cam, scene));
        const OracleRequest req = make_detect_request(t_ar, png, cam.width, cam.height);
        const auto box = decode_detect(query_validated(backend, req));
        if (box) {
            masks.push_back(rasterize_box_mask(*box, cam.width, cam.height));
        } else {
            ++misses;
            masks.emplace_back(cam.width, cam.height, 0.0);
        }
    }
    if (misses * 2 >= views.size())
        throw DetectionMiss("attachment region missing in " + std::to_string(misses) + " of " +
                            std::to_string(views.size()) + " views");
    return masks;
}

namespace {

double bce_mean(const MaskImage& soft, const MaskImage& target) {
    double total = 0.0;
    for (std::size_t i = 0; i < soft.values.size(); ++i) {
        const double p = std::clamp(soft.values[i], 1e-7, 1.0 - 1e-7);
        const double y = target.values[i];
        total += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    }
    return total / static_cast<double>(soft.values.size());
}

// Parameters may wander outside the valid DoF domain during finite-difference
// probes; clamp scales to a tiny positive floor before interpreting them.
DoF dof_from_params(std::vector<double> params) {
    for (int i = 0; i < 3; ++i) params[i] = std::max(params[i], 1e-6);
    return unpack_dof(params);
}

}  // namespace

double region_fit_loss(const std::vector<MaskImage>& masks, const std::vector<Camera>& views,
                       const DoF& dof, double sharpness) {
    double total = 0.0;
    for (std::size_t v = 0; v < views.size(); ++v)
        total += bce_mean(box_soft_mask(views[v], Box3{dof}, sharpness), masks[v]);
    return total;
}

RegionFitResult fit_region_dof(const std::vector<MaskImage>& masks,
                               const std::vector<Camera>& views, const RegionFitConfig& cfg) {
    if (masks.size() != views.size() || views.size() < 2)
        throw Degenerate("region fit needs >= 2 aligned masks and views");
    if (!cfg.init) throw ConfigError("region fit config has no initial box");
    double mask_total = 0.0;
    for (const auto& m : masks) mask_total += m.sum();
    if (mask_total == 0.0) throw Degenerate("all detection masks are empty");
    for (std::size_t v = 0; v < views.size(); ++v)
        if (masks[v].width != views[v].width || masks[v].height != views[v].height)
            throw Degenerate("mask and view dimensions differ");

    const LossFn loss = [&](const std::vector<double>& params) {
        return region_fit_loss(masks, views, dof_from_params(params), cfg.sharpness);
    };
    const ProjectFn project = [](std::vector<double>& params) {
        for (int i = 0; i < 3; ++i) params[i] = std::max(params[i], 1e-6);
        project_dof_params(params);
    };

    GdConfig gd;
    gd.learning_rate = cfg.learning_rate;
    gd.max_iters = cfg.max_iters;
    gd.convergence_tol = cfg.convergence_tol;
    gd.fd_rel_step = 1e-4;
    const GdResult r = gradient_descent(loss, pack_dof(*cfg.init), gd, project);

    RegionFitResult result;
    result.dof = dof_from_params(r.params);
    result.initial_loss = r.loss_history.front();
    result.final_loss = r.final_loss;
    result.iters = r.iters;
    result.converged = r.converged;
    for (std::size_t v = 0; v < views.size(); ++v)
        result.per_view_iou.push_back(
            mask_iou(box_soft_mask(views[v], Box3{result.dof}, cfg.sharpness), masks[v]));
    return result;
}

AttachmentSplit extract_attachment(const GaussianScene& scene, const DoF& dof_ar) {
    dof_ar.validate();
    auto [region, rest] = extract_region(scene, Box3{dof_ar});
    AttachmentSplit split;
    split.empty_region = region.empty();
    split.region = std::move(region);
    split.rest = std::move(rest);
    return split;
}

}  // namespace gsinsert
