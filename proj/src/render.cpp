#include "gsinsert/render.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gsinsert/errors.hpp"

namespace gsinsert {

namespace {

constexpr double kMinDepth = 1e-6;

struct P2 {
    double x = 0, y = 0;
};

double seg_distance(const P2& p, const P2& a, const P2& b) {
    const double abx = b.x - a.x, aby = b.y - a.y;
    const double apx = p.x - a.x, apy = p.y - a.y;
    const double len2 = abx * abx + aby * aby;
    double t = len2 > 0 ? (apx * abx + apy * aby) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = apx - t * abx, dy = apy - t * aby;
    return std::sqrt(dx * dx + dy * dy);
}

double cross2(const P2& o, const P2& a, const P2& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Andrew monotone chain; returns the hull in counter-clockwise order in a
// y-down pixel frame (i.e. clockwise on screen), collinear points dropped.
std::vector<P2> convex_hull(std::vector<P2> pts) {
    std::sort(pts.begin(), pts.end(), [](const P2& a, const P2& b) {
        return a.x < b.x || (a.x == b.x && a.y < b.y);
    });
    pts.erase(std::unique(pts.begin(), pts.end(),
                          [](const P2& a, const P2& b) { return a.x == b.x && a.y == b.y; }),
              pts.end());
    const int n = static_cast<int>(pts.size());
    if (n <= 2) return pts;
    std::vector<P2> hull(2 * n);
    int k = 0;
    for (int i = 0; i < n; ++i) {
        while (k >= 2 && cross2(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    const int lower = k + 1;
    for (int i = n - 2; i >= 0; --i) {
        while (k >= lower && cross2(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    return hull;
}

// Signed distance to the hull boundary: positive inside, negative outside.
double hull_signed_distance(const P2& p, const std::vector<P2>& hull) {
    const int n = static_cast<int>(hull.size());
    if (n == 0) return -1e9;
    if (n == 1) {
        const double dx = p.x - hull[0].x, dy = p.y - hull[0].y;
        return -std::sqrt(dx * dx + dy * dy);
    }
    if (n == 2) return -seg_distance(p, hull[0], hull[1]);
    bool inside = true;
    double min_d = 1e300;
    for (int i = 0; i < n; ++i) {
        const P2& a = hull[i];
        const P2& b = hull[(i + 1) % n];
        if (cross2(a, b, p) < 0) inside = false;
        min_d = std::min(min_d, seg_distance(p, a, b));
    }
    return inside ? min_d : -min_d;
}

double sigmoid(double x) {
    if (x > 36) return 1.0;
    if (x < -36) return 0.0;
    return 1.0 / (1.0 + std::exp(-x));
}

struct Footprint {
    double u = 0, v = 0, depth = 0;
    double inv_a = 0, inv_b = 0, inv_c = 0;  // inverse 2D covariance (symmetric)
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1;
    double opacity = 0;
};

// EWA-style 2D footprint of one splat: project the 3D covariance through the
// local affine approximation of the pinhole map.
bool splat_footprint(const Camera& cam, const GaussianSplat& s, Footprint* out) {
    const Vec3 pc = cam.to_camera(s.mean);
    if (pc.z <= kMinDepth) return false;
    const double inv_z = 1.0 / pc.z;
    const double u = cam.cx + cam.fx * pc.x * inv_z;
    const double v = cam.cy + cam.fy * pc.y * inv_z;

    const Mat3 rw = cam.rotation.to_matrix();
    const Mat3 cov_cam = rw * splat_covariance(s) * rw.transposed();
    // J = [fx/z, 0, -fx x/z^2; 0, fy/z, -fy y/z^2]
    const double j00 = cam.fx * inv_z, j02 = -cam.fx * pc.x * inv_z * inv_z;
    const double j11 = cam.fy * inv_z, j12 = -cam.fy * pc.y * inv_z * inv_z;
    const double c00 = cov_cam(0, 0), c01 = cov_cam(0, 1), c02 = cov_cam(0, 2);
    const double c11 = cov_cam(1, 1), c12 = cov_cam(1, 2), c22 = cov_cam(2, 2);
    // Sigma2d = J Sigma_cam J^T, expanded.
    double a = j00 * (j00 * c00 + j02 * c02) + j02 * (j00 * c02 + j02 * c22);
    double b = j00 * (j11 * c01 + j12 * c02) + j02 * (j11 * c12 + j12 * c22);
    double c = j11 * (j11 * c11 + j12 * c12) + j12 * (j11 * c12 + j12 * c22);
    a += 1e-8;
    c += 1e-8;
    const double det = a * c - b * b;
    if (det <= 0) return false;
    const double inv_det = 1.0 / det;

    const double mid = 0.5 * (a + c);
    const double lam_max = mid + std::sqrt(std::max(0.0, mid * mid - det));
    const double radius = 3.0 * std::sqrt(lam_max) + 0.5;

    out->u = u;
    out->v = v;
    out->depth = pc.z;
    out->inv_a = c * inv_det;
    out->inv_b = -b * inv_det;
    out->inv_c = a * inv_det;
    out->x0 = std::max(0, static_cast<int>(std::floor(u - radius)));
    out->x1 = std::min(cam.width - 1, static_cast<int>(std::ceil(u + radius)));
    out->y0 = std::max(0, static_cast<int>(std::floor(v - radius)));
    out->y1 = std::min(cam.height - 1, static_cast<int>(std::ceil(v + radius)));
    out->opacity = s.opacity;
    return out->x0 <= out->x1 && out->y0 <= out->y1;
}

// Gaussian kernel value (before the opacity factor), cut off at q > 50.
double footprint_gauss(const Footprint& f, double px, double py) {
    const double dx = px - f.u, dy = py - f.v;
    const double q = f.inv_a * dx * dx + 2.0 * f.inv_b * dx * dy + f.inv_c * dy * dy;
    if (q > 50.0) return 0.0;
    return std::exp(-0.5 * q);
}

double footprint_alpha(const Footprint& f, double px, double py) {
    return f.opacity * footprint_gauss(f, px, py);
}

}  // namespace

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fx,
                       double fy, int width, int height) {
    const Vec3 fwd = (target - eye).normalized();
    const Vec3 xc_raw = fwd.cross(up);
    if (xc_raw.norm() < 1e-9) throw Degenerate("look_at: view direction parallel to up");
    const Vec3 xc = xc_raw.normalized();
    const Vec3 yc = fwd.cross(xc);  // y down when up points opposite world-down
    Camera cam;
    cam.fx = fx;
    cam.fy = fy;
    cam.width = width;
    cam.height = height;
    cam.cx = width / 2.0;
    cam.cy = height / 2.0;
    cam.rotation = UnitQuat::from_matrix(Mat3::from_rows(xc, yc, fwd));
    cam.translation = -(cam.rotation.rotate(eye));
    return cam;
}

nlohmann::ordered_json camera_to_json(const Camera& cam) {
    nlohmann::ordered_json j;
    j["fx"] = cam.fx;
    j["fy"] = cam.fy;
    j["cx"] = cam.cx;
    j["cy"] = cam.cy;
    j["width"] = cam.width;
    j["height"] = cam.height;
    j["rotation"] = quat_to_json(cam.rotation);
    j["translation"] = vec3_to_json(cam.translation);
    return j;
}

Camera camera_from_json(const nlohmann::json& j) {
    Camera cam;
    try {
        cam.fx = j.at("fx").get<double>();
        cam.fy = j.at("fy").get<double>();
        cam.cx = j.at("cx").get<double>();
        cam.cy = j.at("cy").get<double>();
        cam.width = j.at("width").get<int>();
        cam.height = j.at("height").get<int>();
        cam.rotation = quat_from_json(j.at("rotation"));
        cam.translation = vec3_from_json(j.at("translation"));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid camera JSON: ") + e.what());
    }
    if (cam.width <= 0 || cam.height <= 0 || cam.fx <= 0 || cam.fy <= 0) {
        throw ConfigError("camera intrinsics must be positive");
    }
    return cam;
}

Projection project_point(const Camera& cam, const Vec3& world) {
    const Vec3 pc = cam.to_camera(world);
    if (pc.z <= kMinDepth) throw BehindCamera("point at or behind the camera plane");
    return {cam.cx + cam.fx * pc.x / pc.z, cam.cy + cam.fy * pc.y / pc.z, pc.z};
}

Vec3 camera_ray(const Camera& cam, double u, double v) {
    const Vec3 dir_cam{(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0};
    return cam.rotation.conjugate().rotate(dir_cam).normalized();
}

MaskImage box_soft_mask(const Camera& cam, const Box3& box, double sharpness) {
    std::vector<P2> pts;
    for (const Vec3& corner : box.corners()) {
        const Vec3 pc = cam.to_camera(corner);
        if (pc.z > kMinDepth) {
            pts.push_back({cam.cx + cam.fx * pc.x / pc.z, cam.cy + cam.fy * pc.y / pc.z});
        }
    }
    if (pts.empty()) throw FullyBehindCamera("all box corners behind the camera");
    const std::vector<P2> hull = convex_hull(std::move(pts));

    MaskImage mask(cam.width, cam.height);
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const double sd = hull_signed_distance({x + 0.5, y + 0.5}, hull);
            mask.at(x, y) = sigmoid(sharpness * sd);
        }
    }
    return mask;
}

MaskImage splat_silhouette(const Camera& cam, const GaussianScene& scene) {
    std::vector<double> transparent(static_cast<size_t>(cam.width) * cam.height, 1.0);
    Footprint f;
    for (const auto& s : scene.splats) {
        if (!splat_footprint(cam, s, &f)) continue;
        for (int y = f.y0; y <= f.y1; ++y) {
            for (int x = f.x0; x <= f.x1; ++x) {
                const double a = footprint_alpha(f, x + 0.5, y + 0.5);
                if (a > 0) transparent[static_cast<size_t>(y) * cam.width + x] *= (1.0 - a);
            }
        }
    }
    MaskImage mask(cam.width, cam.height);
    for (size_t i = 0; i < transparent.size(); ++i) mask.values[i] = 1.0 - transparent[i];
    return mask;
}

std::pair<double, double> projected_centroid(const Camera& cam, const GaussianScene& scene) {
    double su = 0, sv = 0, sw = 0;
    for (const auto& s : scene.splats) {
        const Vec3 pc = cam.to_camera(s.mean);
        if (pc.z <= kMinDepth) continue;
        const double u = cam.cx + cam.fx * pc.x / pc.z;
        const double v = cam.cy + cam.fy * pc.y / pc.z;
        su += s.opacity * u;
        sv += s.opacity * v;
        sw += s.opacity;
    }
    if (sw <= 0) throw NothingVisible("no splat projects in front of the camera");
    return {su / sw, sv / sw};
}

RgbImage render_preview(const Camera& cam, const GaussianScene& scene) {
    std::vector<Footprint> fps;
    std::vector<Vec3> colors;
    fps.reserve(scene.size());
    Footprint f;
    for (const auto& s : scene.splats) {
        if (!splat_footprint(cam, s, &f)) continue;
        fps.push_back(f);
        colors.push_back(splat_base_color(s));
    }
    std::vector<size_t> order(fps.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return fps[a].depth < fps[b].depth;  // near-to-far, stable on ties
    });

    RgbImage img(cam.width, cam.height, 0.0);
    std::vector<double> transmittance(static_cast<size_t>(cam.width) * cam.height, 1.0);
    for (const size_t idx : order) {
        const Footprint& fp = fps[idx];
        const Vec3& c = colors[idx];
        for (int y = fp.y0; y <= fp.y1; ++y) {
            for (int x = fp.x0; x <= fp.x1; ++x) {
                double& t = transmittance[static_cast<size_t>(y) * cam.width + x];
                if (t <= 1e-6) continue;
                const double a = footprint_alpha(fp, x + 0.5, y + 0.5);
                if (a <= 0) continue;
                const double w = t * a;
                img.at(x, y, 0) += w * c.x;
                img.at(x, y, 1) += w * c.y;
                img.at(x, y, 2) += w * c.z;
                t *= (1.0 - a);
            }
        }
    }
    return img;
}

AppearanceGrads render_appearance_grads(const Camera& cam, const GaussianScene& scene,
                                        const RgbImage& residual) {
    if (residual.width != cam.width || residual.height != cam.height) {
        throw Degenerate("render_appearance_grads: residual dimensions mismatch camera");
    }
    std::vector<Footprint> fps;
    std::vector<Vec3> colors;
    std::vector<size_t> splat_index;
    fps.reserve(scene.size());
    Footprint f;
    for (size_t i = 0; i < scene.splats.size(); ++i) {
        if (!splat_footprint(cam, scene.splats[i], &f)) continue;
        fps.push_back(f);
        colors.push_back(splat_base_color(scene.splats[i]));
        splat_index.push_back(i);
    }
    std::vector<size_t> order(fps.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return fps[a].depth < fps[b].depth;
    });

    AppearanceGrads out;
    out.image = RgbImage(cam.width, cam.height, 0.0);
    out.color_grad.assign(scene.size(), Vec3{0, 0, 0});
    out.opacity_grad.assign(scene.size(), 0.0);

    const size_t npix = static_cast<size_t>(cam.width) * cam.height;
    // Pass 1: plain forward composite, identical to render_preview.
    std::vector<double> transmittance(npix, 1.0);
    for (const size_t idx : order) {
        const Footprint& fp = fps[idx];
        const Vec3& c = colors[idx];
        for (int y = fp.y0; y <= fp.y1; ++y) {
            for (int x = fp.x0; x <= fp.x1; ++x) {
                double& t = transmittance[static_cast<size_t>(y) * cam.width + x];
                if (t <= 1e-6) continue;
                const double a = footprint_alpha(fp, x + 0.5, y + 0.5);
                if (a <= 0) continue;
                const double w = t * a;
                out.image.at(x, y, 0) += w * c.x;
                out.image.at(x, y, 1) += w * c.y;
                out.image.at(x, y, 2) += w * c.z;
                t *= (1.0 - a);
            }
        }
    }

    // Pass 2: replay the composite, accumulating gradients. For splat j with
    // weight w_j = T_j a_j and a_j = opacity_j * G_j,
    //   dC/dcolor_j  = w_j,
    //   dC/da_j      = T_j color_j - S_j / (1 - a_j),
    // where S_j = sum_{k > j} w_k color_k is the light contributed by splats
    // behind j (everything j attenuates). G_j <= exp(0) so a_j can reach 1
    // only at full opacity dead-center; there S_j = 0 and the quotient is
    // dropped. Skipped pixels (early transmittance cutoff) contribute exact
    // zero gradients because the forward output ignores them too.
    std::fill(transmittance.begin(), transmittance.end(), 1.0);
    std::vector<double> accum(npix * 3, 0.0);
    for (const size_t idx : order) {
        const Footprint& fp = fps[idx];
        const Vec3& c = colors[idx];
        const size_t orig = splat_index[idx];
        Vec3 cgrad{0, 0, 0};
        double ograd = 0;
        for (int y = fp.y0; y <= fp.y1; ++y) {
            for (int x = fp.x0; x <= fp.x1; ++x) {
                const size_t p = static_cast<size_t>(y) * cam.width + x;
                double& t = transmittance[p];
                if (t <= 1e-6) continue;
                const double g = footprint_gauss(fp, x + 0.5, y + 0.5);
                if (g <= 0) continue;
                const double a = fp.opacity * g;
                const double w = t * a;
                const double r0 = residual.at(x, y, 0);
                const double r1 = residual.at(x, y, 1);
                const double r2 = residual.at(x, y, 2);
                cgrad.x += w * r0;
                cgrad.y += w * r1;
                cgrad.z += w * r2;
                accum[p * 3 + 0] += w * c.x;
                accum[p * 3 + 1] += w * c.y;
                accum[p * 3 + 2] += w * c.z;
                double da = r0 * t * c.x + r1 * t * c.y + r2 * t * c.z;
                if (1.0 - a > 1e-9) {
                    const double inv = 1.0 / (1.0 - a);
                    da -= (r0 * (out.image.at(x, y, 0) - accum[p * 3 + 0]) +
                           r1 * (out.image.at(x, y, 1) - accum[p * 3 + 1]) +
                           r2 * (out.image.at(x, y, 2) - accum[p * 3 + 2])) *
                          inv;
                }
                ograd += da * g;
                t *= (1.0 - a);
            }
        }
        out.color_grad[orig] = cgrad;
        out.opacity_grad[orig] = ograd;
    }
    return out;
}

}  // namespace gsinsert
