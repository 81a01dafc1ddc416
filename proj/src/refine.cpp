#include "gsinsert/refine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "gsinsert/digest.hpp"
#include "gsinsert/region.hpp"

namespace gsinsert {

double spatial_loss(double global_term, double local_term, double beta) {
    if (!(beta >= 0.0 && beta <= 1.0))
        throw ConfigError("spatial loss blend weight must lie in [0, 1]");
    return beta * global_term + (1.0 - beta) * local_term;
}

double beta_schedule(int step, int steps) {
    if (steps < 1) throw ConfigError("schedule needs at least one step");
    if (step < 0 || step >= steps) throw ConfigError("schedule step out of range");
    if (steps == 1) return 0.0;
    return static_cast<double>(step) / static_cast<double>(steps - 1);
}

double loc_loss(const MaskImage& attn, const MaskImage& region, double lambda) {
    if (lambda < 0.0) throw ConfigError("localization lambda must be >= 0");
    if (attn.width != region.width || attn.height != region.height)
        throw Degenerate("attention and region dimensions differ");
    double max_inside = -1.0;
    double sum_outside_sq = 0.0;
    for (std::size_t i = 0; i < attn.values.size(); ++i) {
        if (mask_pixel_on(region.values[i]))
            max_inside = std::max(max_inside, attn.values[i]);
        else
            sum_outside_sq += attn.values[i] * attn.values[i];
    }
    if (max_inside < 0.0) throw EmptyRegion("localization region has no pixels");
    return (1.0 - max_inside) + lambda * sum_outside_sq;
}

std::vector<MaskImage> build_loc_regions(const GaussianScene& object, const DoF& dof_init,
                                         const std::vector<Camera>& views) {
    if (views.empty()) throw Degenerate("localization regions need at least one view");
    const GaussianScene placed = transform_scene(object, dof_init);
    const auto [lo, hi] = scene_bounds(placed);
    std::vector<Vec3> corners;
    for (int bits = 0; bits < 8; ++bits)
        corners.push_back({bits & 1 ? hi.x : lo.x, bits & 2 ? hi.y : lo.y,
                           bits & 4 ? hi.z : lo.z});

    std::vector<MaskImage> regions;
    regions.reserve(views.size());
    for (std::size_t v = 0; v < views.size(); ++v) {
        const Camera& cam = views[v];
        double u0 = std::numeric_limits<double>::infinity(), u1 = -u0;
        double v0 = u0, v1 = -u0;
        bool any = false;
        for (const Vec3& c : corners) {
            const Vec3 pc = cam.to_camera(c);
            if (pc.z <= 1e-6) continue;
            const double u = cam.cx + cam.fx * pc.x / pc.z;
            const double w = cam.cy + cam.fy * pc.y / pc.z;
            u0 = std::min(u0, u);
            u1 = std::max(u1, u);
            v0 = std::min(v0, w);
            v1 = std::max(v1, w);
            any = true;
        }
        const auto off_frame = [&] {
            return EmptyRegion("object box is invisible in view " + std::to_string(v));
        };
        if (!any) throw off_frame();
        const int x0 = std::max(0, static_cast<int>(std::floor(u0)));
        const int x1 = std::min(cam.width - 1, static_cast<int>(std::ceil(u1)));
        const int y0 = std::max(0, static_cast<int>(std::floor(v0)));
        const int y1 = std::min(cam.height - 1, static_cast<int>(std::ceil(v1)));
        if (x0 > x1 || y0 > y1) throw off_frame();
        regions.push_back(rasterize_box_mask({x0, y0, x1, y1}, cam.width, cam.height));
    }
    return regions;
}

void SsdsConfig::validate() const {
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
    if (!(t_min > 0 && t_min <= t_max && t_max < 1))
        throw ConfigError("timestep range must satisfy 0 < t_min <= t_max < 1");
    if (steps < 1) throw ConfigError("steps must be >= 1");
    if (lambda_loc < 0) throw ConfigError("lambda_loc must be >= 0");
    if (loc_weight < 0) throw ConfigError("loc_weight must be >= 0");
    if (views_per_step < 1) throw ConfigError("views_per_step must be >= 1");
    if (!(fd_step > 0)) throw ConfigError("fd_step must be > 0");
}

std::array<double, 8> pack_iso_dof(const DoF& dof) {
    dof.validate();
    if (!dof.is_isotropic(1e-9))
        throw AnisotropicObjectScale("pose refinement requires an isotropic object scale");
    return {dof.scale.x,      dof.rotation.w,    dof.rotation.x,    dof.rotation.y,
            dof.rotation.z,   dof.translation.x, dof.translation.y, dof.translation.z};
}

DoF unpack_iso_dof(const std::array<double, 8>& params) {
    DoF dof;
    const double s = std::max(params[0], 1e-9);
    dof.scale = {s, s, s};
    dof.rotation = UnitQuat(params[1], params[2], params[3], params[4]);
    dof.translation = {params[5], params[6], params[7]};
    dof.validate();
    return dof;
}

namespace {

// Mean of the response maps over the emphasized tokens.
MaskImage mean_attention(const GuidanceResponse& response,
                         const std::vector<std::string>& tokens) {
    if (tokens.empty()) throw ConfigError("prompt has no emphasized tokens");
    MaskImage mean;
    for (const std::string& token : tokens) {
        const MaskImage& map = response.attention_maps.at(token);
        if (mean.values.empty()) {
            mean = map;
        } else {
            for (std::size_t i = 0; i < mean.values.size(); ++i)
                mean.values[i] += map.values[i];
        }
    }
    const double inv = 1.0 / static_cast<double>(tokens.size());
    for (double& v : mean.values) v *= inv;
    return mean;
}

double half_mean_sq_residual(const NoiseImage& predicted, const NoiseImage& noise) {
    double total = 0.0;
    for (std::size_t i = 0; i < predicted.values.size(); ++i) {
        const double d = predicted.values[i] - noise.values[i];
        total += d * d;
    }
    return 0.5 * total / static_cast<double>(predicted.values.size());
}

void check_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw NonFinite(std::string(what) + " is non-finite");
}

}  // namespace

std::pair<DoF, SsdsDiagnostics> ssds_step(const SsdsStepContext& ctx, const DoF& state,
                                          GuidanceBackend& backend, const SsdsConfig& cfg,
                                          Rng& rng) {
    cfg.validate();
    if (!ctx.scene || !ctx.object) throw ConfigError("step context is missing scenes");
    if (ctx.views.empty() || ctx.views.size() != ctx.regions.size())
        throw Degenerate("step context needs aligned views and regions");
    if (!(ctx.translation_scale > 0))
        throw ConfigError("translation parameter scale must be > 0");
    if (!(ctx.beta >= 0.0 && ctx.beta <= 1.0))
        throw ConfigError("beta must lie in [0, 1]");

    const std::array<double, 8> params = pack_iso_dof(state);
    std::array<double, 8> fd_h{};
    fd_h[0] = cfg.fd_step * std::max(std::abs(params[0]), 1e-6);
    for (int i = 1; i < 5; ++i) fd_h[i] = cfg.fd_step;
    for (int i = 5; i < 8; ++i) fd_h[i] = cfg.fd_step * ctx.translation_scale;

    const double t = rng.uniform(cfg.t_min, cfg.t_max);
    const double w_t = cfg.weight ? cfg.weight(t) : 1.0;
    check_finite(w_t, "w(t)");

    const auto render_at = [&](const std::array<double, 8>& p, const Camera& cam) {
        return render_preview(cam, merge(*ctx.scene, transform_scene(*ctx.object,
                                                                     unpack_iso_dof(p))));
    };
    const bool loc_active = cfg.loc_weight > 0;
    const bool loc_grad = loc_active && cfg.loc_grad_requery;

    SsdsDiagnostics diag;
    diag.t = t;
    diag.beta = ctx.beta;
    std::array<double, 8> grad{};

    for (std::size_t v = 0; v < ctx.views.size(); ++v) {
        const Camera& cam = ctx.views[v];
        const NoiseImage noise = sample_noise(cam.width, cam.height, rng);
        const RgbImage x0 = render_at(params, cam);

        GuidanceQuery query;
        query.noisy_image = vp_mix(x0, noise, t);
        query.timestep = t;
        query.noise = noise;
        query.pose = cam;

        const auto ask = [&](const RgbImage& x_t, const PromptSpec& spec) {
            GuidanceQuery q = query;
            q.noisy_image = x_t;
            q.prompt = spec.prompt;
            q.emphasized_tokens = spec.emphasized_tokens;
            return guide_validated(backend, q);
        };
        const GuidanceResponse resp_g = ask(query.noisy_image, ctx.global_prompt);
        const GuidanceResponse resp_l = ask(query.noisy_image, ctx.local_prompt);

        diag.loss_global += half_mean_sq_residual(resp_g.predicted_noise, noise);
        diag.loss_local += half_mean_sq_residual(resp_l.predicted_noise, noise);

        // Blended, weighted residual held fixed while the render is perturbed.
        const double wg = w_t * ctx.beta, wl = w_t * (1.0 - ctx.beta);
        NoiseImage residual(cam.width, cam.height);
        for (std::size_t i = 0; i < residual.values.size(); ++i) {
            const double dg = resp_g.predicted_noise.values[i] - noise.values[i];
            const double dl = resp_l.predicted_noise.values[i] - noise.values[i];
            residual.values[i] = wg * dg + wl * dl;
        }

        const auto blended_loc = [&](const GuidanceResponse& rg, const GuidanceResponse& rl) {
            const double lg = loc_loss(mean_attention(rg, ctx.global_prompt.emphasized_tokens),
                                       ctx.regions[v], cfg.lambda_loc);
            const double ll = loc_loss(mean_attention(rl, ctx.local_prompt.emphasized_tokens),
                                       ctx.regions[v], cfg.lambda_loc);
            return spatial_loss(lg, ll, ctx.beta);
        };
        if (loc_active) diag.loss_loc += blended_loc(resp_g, resp_l);

        const double inv_n = 1.0 / static_cast<double>(residual.values.size());
        for (int i = 0; i < 8; ++i) {
            std::array<double, 8> plus = params, minus = params;
            plus[i] += fd_h[i];
            minus[i] -= fd_h[i];
            const RgbImage xp = render_at(plus, cam);
            const RgbImage xm = render_at(minus, cam);
            double inner = 0.0;
            for (std::size_t k = 0; k < residual.values.size(); ++k)
                inner += residual.values[k] * (xp.values[k] - xm.values[k]);
            double g = inner * inv_n / (2.0 * fd_h[i]);
            if (loc_grad) {
                const auto loc_at = [&](const RgbImage& x) {
                    const RgbImage x_t = vp_mix(x, noise, t);
                    return blended_loc(ask(x_t, ctx.global_prompt),
                                       ask(x_t, ctx.local_prompt));
                };
                g += cfg.loc_weight * (loc_at(xp) - loc_at(xm)) / (2.0 * fd_h[i]);
            }
            check_finite(g, "pose gradient");
            grad[i] += g;
        }
    }

    const double inv_views = 1.0 / static_cast<double>(ctx.views.size());
    diag.loss_global *= inv_views;
    diag.loss_local *= inv_views;
    diag.loss_loc *= inv_views;
    check_finite(diag.loss_global, "global loss");
    check_finite(diag.loss_local, "local loss");
    check_finite(diag.loss_loc, "localization loss");

    std::array<double, 8> updated = params;
    for (int i = 0; i < 8; ++i) updated[i] -= cfg.learning_rate * grad[i] * inv_views;
    const DoF next = unpack_iso_dof(updated);
    diag.params = pack_iso_dof(next);
    return {next, diag};
}

RefineResult refine_dof(const GaussianScene& scene, const GaussianScene& object,
                        const DoF& dof_init, const ParsedInsertion& parsed,
                        const std::vector<Camera>& views, GuidanceBackend& backend,
                        const SsdsConfig& cfg) {
    cfg.validate();
    parsed.validate();
    if (views.empty()) throw Degenerate("refinement needs at least one view");

    SsdsStepContext ctx;
    ctx.scene = &scene;
    ctx.object = &object;
    ctx.global_prompt = {parsed.global_target, {parsed.interaction_word}};
    ctx.local_prompt = {parsed.local_target, {parsed.spatial_word}};
    ctx.translation_scale = scene_diameter(scene);
    const std::vector<MaskImage> all_regions = build_loc_regions(object, dof_init, views);

    RefineResult result;
    result.dof = dof_init;
    Rng rng(cfg.seed);
    std::size_t cursor = 0;
    try {
        for (int step = 0; step < cfg.steps; ++step) {
            ctx.beta = beta_schedule(step, cfg.steps);
            ctx.views.clear();
            ctx.regions.clear();
            for (int k = 0; k < cfg.views_per_step; ++k) {
                const std::size_t idx = cursor % views.size();
                ++cursor;
                ctx.views.push_back(views[idx]);
                ctx.regions.push_back(all_regions[idx]);
            }
            auto [next, diag] = ssds_step(ctx, result.dof, backend, cfg, rng);
            diag.step = step;
            result.dof = next;
            result.history.push_back(diag);
        }
    } catch (...) {
        if (!cfg.diagnostics_path.empty())
            write_diagnostics_csv(result.history, cfg.diagnostics_path);
        throw;
    }
    if (!cfg.diagnostics_path.empty())
        write_diagnostics_csv(result.history, cfg.diagnostics_path);
    return result;
}

void write_diagnostics_csv(const std::vector<SsdsDiagnostics>& history,
                           const std::string& path) {
    std::ostringstream out;
    out.precision(17);
    out << "step,t,beta,loss_global,loss_local,loss_loc,scale,qw,qx,qy,qz,tx,ty,tz\n";
    for (const SsdsDiagnostics& d : history) {
        out << d.step << ',' << d.t << ',' << d.beta << ',' << d.loss_global << ','
            << d.loss_local << ',' << d.loss_loc;
        for (const double p : d.params) out << ',' << p;
        out << '\n';
    }
    write_file_bytes(path, out.str());
}

}  // namespace gsinsert
