#include "gsinsert/dofinit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gsinsert/image.hpp"
#include "gsinsert/optim.hpp"

namespace gsinsert {

// ---------------------------------------------------------------------------
// Rotation grid
// ---------------------------------------------------------------------------

void RotationGrid::validate() const {
    const auto divides = [](double range, double step) {
        if (step <= 0 || step > range) return false;
        const double ratio = range / step;
        return std::abs(ratio - std::round(ratio)) < 1e-9;
    };
    if (!divides(360.0, azimuth_step_deg))
        throw ConfigError("azimuth step must evenly divide 360 degrees");
    if (!divides(180.0, elevation_step_deg))
        throw ConfigError("elevation step must evenly divide 180 degrees");
}

int RotationGrid::azimuth_count() const {
    validate();
    return static_cast<int>(std::round(360.0 / azimuth_step_deg));
}

int RotationGrid::elevation_count() const {
    validate();
    return static_cast<int>(std::round(180.0 / elevation_step_deg));
}

int RotationGrid::count() const { return azimuth_count() * elevation_count(); }

std::pair<double, double> RotationGrid::angles_deg(int index) const {
    const int n_az = azimuth_count();
    if (index < 0 || index >= count())
        throw Degenerate("rotation grid index out of range: " + std::to_string(index));
    const int el_idx = index / n_az;
    const int az_idx = index % n_az;
    return {az_idx * azimuth_step_deg, el_idx * elevation_step_deg};
}

UnitQuat RotationGrid::rotation_at(int index) const {
    const auto [az, el] = angles_deg(index);
    return UnitQuat::from_azimuth_elevation(deg_to_rad(az), deg_to_rad(el));
}

std::vector<std::pair<double, double>> RotationGrid::all_angles_deg() const {
    std::vector<std::pair<double, double>> angles;
    angles.reserve(count());
    for (int i = 0; i < count(); ++i) angles.push_back(angles_deg(i));
    return angles;
}

// ---------------------------------------------------------------------------
// Scale
// ---------------------------------------------------------------------------

double init_scale(const DoF& dof_ar, double lambda_rel) {
    if (!std::isfinite(lambda_rel) || lambda_rel <= 0.0)
        throw InvalidRatio("relative scale ratio must be finite and > 0");
    return dof_ar.max_extent() * lambda_rel;
}

ScaleAdjustResult iterative_scale_adjust(const GaussianScene& scene, const GaussianScene& object,
                                         const DoF& dof_o, const std::vector<Camera>& views,
                                         const std::string& global_target, OracleBackend& backend,
                                         int max_rounds, int primary_view) {
    dof_o.validate();
    if (views.empty()) throw Degenerate("scale adjustment needs at least one view");
    if (primary_view < 0 || primary_view >= static_cast<int>(views.size()))
        throw ConfigError("primary view index out of range");

    ScaleAdjustResult result;
    result.dof = dof_o;
    const Camera& cam = views[primary_view];
    for (int round = 0; round < max_rounds; ++round) {
        const GaussianScene composite = merge(scene, transform_scene(object, result.dof));
        const std::string png = png_encode_rgb(render_preview(cam, composite));
        const OracleRequest req =
            make_scale_feedback_request(global_target, png, result.dof.max_extent());
        const ScaleFeedback fb = decode_scale_feedback(query_validated(backend, req));
        ++result.rounds_used;
        if (fb.verdict == ScaleVerdict::Accept) break;
        const double factor = std::clamp(fb.factor, 0.5, 2.0);
        result.factors.push_back(factor);
        result.dof.scale = result.dof.scale * factor;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Rotation
// ---------------------------------------------------------------------------

std::vector<std::string> render_rotation_candidates(const GaussianScene& object,
                                                    const RotationGrid& grid) {
    grid.validate();
    if (object.empty()) throw Degenerate("cannot render an empty object");
    const double d = scene_diameter(object);
    const Vec3 c = scene_centroid(object);
    const Camera cam = Camera::look_at(c + Vec3{0.0, -2.0 * std::max(d, 1e-6), 0.0}, c,
                                       {0.0, 0.0, 1.0}, 160.0, 160.0, 128, 128);
    std::vector<std::string> pngs;
    pngs.reserve(grid.count());
    for (int i = 0; i < grid.count(); ++i) {
        DoF dof;
        dof.rotation = grid.rotation_at(i);
        pngs.push_back(png_encode_rgb(render_preview(cam, transform_scene(object, dof))));
    }
    return pngs;
}

UnitQuat init_rotation(const std::string& scene_png,
                       const std::vector<std::string>& candidate_pngs, const RotationGrid& grid,
                       const std::string& t_gt, OracleBackend& backend,
                       const std::vector<int>* submission_order) {
    grid.validate();
    if (static_cast<int>(candidate_pngs.size()) != grid.count())
        throw Degenerate("candidate render count does not match the grid");

    std::vector<int> order(candidate_pngs.size());
    if (submission_order) {
        if (submission_order->size() != candidate_pngs.size())
            throw Degenerate("submission order must be a permutation of all candidates");
        order = *submission_order;
    } else {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    }

    std::vector<std::string> submitted;
    std::vector<std::pair<double, double>> angles;
    submitted.reserve(order.size());
    angles.reserve(order.size());
    for (const int grid_index : order) {
        if (grid_index < 0 || grid_index >= grid.count())
            throw Degenerate("submission order entry out of range");
        submitted.push_back(candidate_pngs[grid_index]);
        angles.push_back(grid.angles_deg(grid_index));
    }

    const OracleRequest req = make_score_rotation_request(t_gt, scene_png, submitted, angles);
    const int picked = decode_score_index(query_validated(backend, req));
    return grid.rotation_at(order[picked]);
}

UnitQuat init_rotation(const RgbImage& scene_image, const GaussianScene& object,
                       const RotationGrid& grid, const std::string& t_gt,
                       OracleBackend& backend) {
    return init_rotation(png_encode_rgb(scene_image), render_rotation_candidates(object, grid),
                         grid, t_gt, backend);
}

// ---------------------------------------------------------------------------
// Collision
// ---------------------------------------------------------------------------

double collision_loss(const Vec3& o_c, const GaussianScene& g_ar, double margin) {
    if (margin < 0) throw ConfigError("collision margin must be >= 0");
    double total = 0.0;
    for (const auto& s : g_ar.splats) {
        const Mat3 inv_cov = splat_covariance(s).inverse();
        const Vec3 d = o_c - s.mean;
        const Vec3 id = inv_cov * d;
        const double d_m = std::sqrt(std::max(0.0, d.dot(id)));
        const double geo_mean_std =
            std::exp((s.log_scale.x + s.log_scale.y + s.log_scale.z) / 3.0);
        const double margin_norm = margin / geo_mean_std;
        const double hinge = 1.0 + margin_norm - d_m;
        if (hinge > 0) total += hinge * hinge;
    }
    return total;
}

// ---------------------------------------------------------------------------
// Translation
// ---------------------------------------------------------------------------

namespace {

struct ReprojProblem {
    std::vector<Vec3> base;      // R * (s * mean_i): splat means before translation
    std::vector<double> weight;  // opacities
    double total_weight = 0.0;
    Vec3 base_centroid;          // weighted centroid of base points
};

ReprojProblem build_problem(const GaussianScene& object, double s_o, const UnitQuat& r_o) {
    if (object.empty()) throw Degenerate("cannot place an empty object");
    ReprojProblem pr;
    pr.base.reserve(object.size());
    pr.weight.reserve(object.size());
    Vec3 acc{0, 0, 0};
    for (const auto& s : object.splats) {
        const Vec3 b = r_o.rotate(s.mean * s_o);
        pr.base.push_back(b);
        pr.weight.push_back(s.opacity);
        pr.total_weight += s.opacity;
        acc = acc + b * s.opacity;
    }
    if (pr.total_weight <= 0) throw Degenerate("object has zero total opacity");
    pr.base_centroid = acc / pr.total_weight;
    return pr;
}

constexpr double kMinDepth = 1e-6;

// Weighted mean of per-splat projections and its Jacobian wrt translation.
// Returns false when nothing projects in front of the camera.
bool project_mean(const ReprojProblem& pr, const Camera& cam, const Vec3& t, double* u,
                  double* v, double jac[2][3]) {
    const Mat3 r = cam.rotation.to_matrix();
    double su = 0, sv = 0, sw = 0;
    double j[2][3] = {{0, 0, 0}, {0, 0, 0}};
    for (std::size_t i = 0; i < pr.base.size(); ++i) {
        const Vec3 pc = cam.to_camera(pr.base[i] + t);
        if (pc.z <= kMinDepth) continue;
        const double w = pr.weight[i];
        su += w * (cam.fx * pc.x / pc.z);
        sv += w * (cam.fy * pc.y / pc.z);
        sw += w;
        // d(u)/d(t) = fx * (r_row0 * z - x * r_row2) / z^2, and likewise for v.
        const double inv_z = 1.0 / pc.z;
        const double inv_z2 = inv_z * inv_z;
        for (int k = 0; k < 3; ++k) {
            const double r0k = r.m[0 * 3 + k], r1k = r.m[1 * 3 + k], r2k = r.m[2 * 3 + k];
            j[0][k] += w * cam.fx * (r0k * pc.z - pc.x * r2k) * inv_z2;
            j[1][k] += w * cam.fy * (r1k * pc.z - pc.y * r2k) * inv_z2;
        }
    }
    if (sw <= 0) return false;
    *u = cam.cx + su / sw;
    *v = cam.cy + sv / sw;
    for (int a = 0; a < 2; ++a)
        for (int k = 0; k < 3; ++k) jac[a][k] = j[a][k] / sw;
    return true;
}

}  // namespace

TranslationFitResult init_translation(const GaussianScene& object, double s_o,
                                      const UnitQuat& r_o,
                                      const std::map<int, std::pair<double, double>>& targets,
                                      const std::vector<Camera>& views,
                                      const GaussianScene& g_ar,
                                      const TranslationFitConfig& cfg) {
    if (cfg.min_views < 1) throw ConfigError("min_views must be >= 1");
    if (static_cast<int>(targets.size()) < cfg.min_views)
        throw Underdetermined("translation fit needs at least " + std::to_string(cfg.min_views) +
                              " view targets, got " + std::to_string(targets.size()));
    for (const auto& [view_index, px] : targets) {
        (void)px;
        if (view_index < 0 || view_index >= static_cast<int>(views.size()))
            throw Degenerate("target references view index out of range");
    }
    if (!std::isfinite(s_o) || s_o <= 0) throw InvalidRatio("object scale must be > 0");

    const ReprojProblem pr = build_problem(object, s_o, r_o);
    double margin = cfg.collision_margin;
    if (margin < 0) margin = g_ar.empty() ? 0.0 : 0.05 * [&] {
        const auto [lo, hi] = scene_bounds(g_ar);
        const Vec3 e = hi - lo;
        return std::max({e.x, e.y, e.z});
    }();

    const auto reproj_loss = [&](const Vec3& t, std::vector<double>* residuals) {
        double total = 0.0;
        if (residuals) residuals->clear();
        for (const auto& [view_index, px] : targets) {
            double u, v, jac[2][3];
            if (!project_mean(pr, views[view_index], t, &u, &v, jac))
                return std::numeric_limits<double>::infinity();
            const double du = u - px.first, dv = v - px.second;
            total += du * du + dv * dv;
            if (residuals) residuals->push_back(std::sqrt(du * du + dv * dv));
        }
        return total;
    };
    const auto total_loss = [&](const std::vector<double>& p) {
        const Vec3 t{p[0], p[1], p[2]};
        double loss = reproj_loss(t, nullptr);
        if (cfg.collision_weight > 0 && !g_ar.empty())
            loss += cfg.collision_weight * collision_loss(pr.base_centroid + t, g_ar, margin);
        return loss;
    };
    const auto gradient = [&](const std::vector<double>& p) {
        const Vec3 t{p[0], p[1], p[2]};
        std::vector<double> g(3, 0.0);
        for (const auto& [view_index, px] : targets) {
            double u, v, jac[2][3];
            if (!project_mean(pr, views[view_index], t, &u, &v, jac))
                throw NothingVisible("object centroid projects behind a target view");
            const double du = u - px.first, dv = v - px.second;
            for (int k = 0; k < 3; ++k) g[k] += 2.0 * (du * jac[0][k] + dv * jac[1][k]);
        }
        if (cfg.collision_weight > 0 && !g_ar.empty()) {
            const double h = 1e-5 * (1.0 + t.norm());
            for (int k = 0; k < 3; ++k) {
                Vec3 tp = t, tm = t;
                (k == 0 ? tp.x : k == 1 ? tp.y : tp.z) += h;
                (k == 0 ? tm.x : k == 1 ? tm.y : tm.z) -= h;
                const double cp = collision_loss(pr.base_centroid + tp, g_ar, margin);
                const double cm = collision_loss(pr.base_centroid + tm, g_ar, margin);
                g[k] += cfg.collision_weight * (cp - cm) / (2.0 * h);
            }
        }
        return g;
    };

    // Start with the object centroid on the attachment region (or the origin).
    const Vec3 anchor = g_ar.empty() ? Vec3{0, 0, 0} : scene_centroid(g_ar);
    const Vec3 t0 = anchor - pr.base_centroid;

    GdConfig gd;
    gd.learning_rate = cfg.learning_rate;
    gd.max_iters = cfg.max_iters;
    gd.convergence_tol = cfg.convergence_tol;
    const GdResult r =
        gradient_descent(total_loss, {t0.x, t0.y, t0.z}, gd, nullptr, gradient);

    TranslationFitResult result;
    result.t = {r.params[0], r.params[1], r.params[2]};
    result.initial_loss = r.loss_history.front();
    result.final_loss = r.final_loss;
    result.iters = r.iters;
    result.converged = r.converged;
    reproj_loss(result.t, &result.per_view_residuals);
    result.collision_final =
        g_ar.empty() ? 0.0 : collision_loss(pr.base_centroid + result.t, g_ar, margin);
    return result;
}

}  // namespace gsinsert
