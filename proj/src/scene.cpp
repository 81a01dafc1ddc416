#include "gsinsert/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <sstream>

#include "gsinsert/digest.hpp"
#include "gsinsert/errors.hpp"
#include "gsinsert/rng.hpp"

namespace gsinsert {

namespace {

constexpr double kOpacityClamp = 1e-7;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double logit(double p) {
    const double c = std::clamp(p, kOpacityClamp, 1.0 - kOpacityClamp);
    return std::log(c / (1.0 - c));
}

int rest_count_to_degree(size_t rest) {
    switch (rest) {
        case 0: return 0;
        case 9: return 1;
        case 24: return 2;
        case 45: return 3;
        default:
            throw UnsupportedShDegree("f_rest property count " + std::to_string(rest) +
                                      " does not correspond to SH degree 0..3");
    }
}

}  // namespace

Mat3 splat_covariance(const GaussianSplat& s) {
    const Mat3 r = s.rotation.to_matrix();
    const Vec3 var{std::exp(2.0 * s.log_scale.x), std::exp(2.0 * s.log_scale.y),
                   std::exp(2.0 * s.log_scale.z)};
    return r * Mat3::diagonal(var) * r.transposed();
}

Vec3 splat_base_color(const GaussianSplat& s) {
    if (s.sh.empty()) return {0.5, 0.5, 0.5};
    const Vec3 c = Vec3{0.5, 0.5, 0.5} + s.sh[0] * kShC0;
    return {std::clamp(c.x, 0.0, 1.0), std::clamp(c.y, 0.0, 1.0), std::clamp(c.z, 0.0, 1.0)};
}

Vec3 color_to_dc(const Vec3& rgb) { return (rgb - Vec3{0.5, 0.5, 0.5}) / kShC0; }

Vec3 scene_centroid(const GaussianScene& scene) {
    if (scene.empty()) throw Degenerate("centroid of empty scene");
    Vec3 acc{0, 0, 0};
    double total = 0;
    for (const auto& s : scene.splats) {
        acc += s.mean * s.opacity;
        total += s.opacity;
    }
    if (total <= 0) throw Degenerate("centroid with zero total opacity");
    return acc / total;
}

std::pair<Vec3, Vec3> scene_bounds(const GaussianScene& scene) {
    if (scene.empty()) throw Degenerate("bounds of empty scene");
    Vec3 lo = scene.splats[0].mean, hi = scene.splats[0].mean;
    for (const auto& s : scene.splats) {
        lo = Vec3::min(lo, s.mean);
        hi = Vec3::max(hi, s.mean);
    }
    return {lo, hi};
}

double scene_diameter(const GaussianScene& scene) {
    const auto [lo, hi] = scene_bounds(scene);
    return (hi - lo).norm();
}

std::string serialize_ply(const GaussianScene& scene) {
    const int coeffs = (scene.sh_degree + 1) * (scene.sh_degree + 1);
    const int rest = 3 * (coeffs - 1);
    std::ostringstream header;
    header << "ply\nformat binary_little_endian 1.0\nelement vertex " << scene.size() << "\n";
    for (const char* name : {"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"}) {
        header << "property float " << name << "\n";
    }
    for (int i = 0; i < rest; ++i) header << "property float f_rest_" << i << "\n";
    header << "property float opacity\n";
    for (int i = 0; i < 3; ++i) header << "property float scale_" << i << "\n";
    for (int i = 0; i < 4; ++i) header << "property float rot_" << i << "\n";
    header << "end_header\n";

    std::string out = header.str();
    const int stride = 3 + 3 + rest + 1 + 3 + 4;
    std::vector<float> row(stride);
    for (const auto& s : scene.splats) {
        if (static_cast<int>(s.sh.size()) != coeffs) {
            throw Degenerate("splat SH coefficient count does not match scene degree");
        }
        int k = 0;
        row[k++] = static_cast<float>(s.mean.x);
        row[k++] = static_cast<float>(s.mean.y);
        row[k++] = static_cast<float>(s.mean.z);
        row[k++] = static_cast<float>(s.sh[0].x);
        row[k++] = static_cast<float>(s.sh[0].y);
        row[k++] = static_cast<float>(s.sh[0].z);
        // f_rest is channel-major: all red coefficients, then green, then blue.
        for (int c = 0; c < 3; ++c) {
            for (int j = 1; j < coeffs; ++j) {
                const Vec3& v = s.sh[j];
                row[k++] = static_cast<float>(c == 0 ? v.x : (c == 1 ? v.y : v.z));
            }
        }
        row[k++] = static_cast<float>(logit(s.opacity));
        row[k++] = static_cast<float>(s.log_scale.x);
        row[k++] = static_cast<float>(s.log_scale.y);
        row[k++] = static_cast<float>(s.log_scale.z);
        row[k++] = static_cast<float>(s.rotation.w);
        row[k++] = static_cast<float>(s.rotation.x);
        row[k++] = static_cast<float>(s.rotation.y);
        row[k++] = static_cast<float>(s.rotation.z);
        out.append(reinterpret_cast<const char*>(row.data()), row.size() * sizeof(float));
    }
    return out;
}

GaussianScene parse_ply(const std::string& bytes) {
    const size_t header_end = bytes.find("end_header\n");
    if (header_end == std::string::npos) throw MalformedPly("missing end_header");
    const size_t data_start = header_end + std::strlen("end_header\n");

    std::istringstream header(bytes.substr(0, data_start));
    std::string line;
    if (!std::getline(header, line) || line != "ply") throw MalformedPly("missing ply magic");

    long vertex_count = -1;
    bool format_ok = false;
    std::vector<std::string> props;
    while (std::getline(header, line)) {
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "comment" || tok.empty()) continue;
        if (tok == "format") {
            std::string fmt, ver;
            ls >> fmt >> ver;
            if (fmt != "binary_little_endian") {
                throw MalformedPly("unsupported PLY format: " + fmt);
            }
            format_ok = true;
        } else if (tok == "element") {
            std::string name;
            long count = 0;
            ls >> name >> count;
            if (name != "vertex" || vertex_count >= 0) {
                throw MalformedPly("expected a single vertex element");
            }
            vertex_count = count;
        } else if (tok == "property") {
            std::string type, name;
            ls >> type >> name;
            if (type != "float") throw MalformedPly("unsupported property type: " + type);
            if (vertex_count < 0) throw MalformedPly("property before element");
            props.push_back(name);
        } else if (tok == "end_header") {
            break;
        } else {
            throw MalformedPly("unexpected header token: " + tok);
        }
    }
    if (!format_ok) throw MalformedPly("missing format line");
    if (vertex_count < 0) throw MalformedPly("missing vertex element");

    std::map<std::string, int> index;
    for (size_t i = 0; i < props.size(); ++i) index[props[i]] = static_cast<int>(i);
    const auto need = [&](const std::string& name) {
        auto it = index.find(name);
        if (it == index.end()) throw MalformedPly("missing property: " + name);
        return it->second;
    };

    const int ix = need("x"), iy = need("y"), iz = need("z");
    const int idc0 = need("f_dc_0"), idc1 = need("f_dc_1"), idc2 = need("f_dc_2");
    const int iop = need("opacity");
    const int is0 = need("scale_0"), is1 = need("scale_1"), is2 = need("scale_2");
    const int ir0 = need("rot_0"), ir1 = need("rot_1"), ir2 = need("rot_2"), ir3 = need("rot_3");

    size_t rest_count = 0;
    while (index.count("f_rest_" + std::to_string(rest_count)) > 0) ++rest_count;
    for (const auto& [name, _] : index) {
        if (name.rfind("f_rest_", 0) == 0) {
            const size_t suffix = std::stoul(name.substr(7));
            if (suffix >= rest_count) {
                throw MalformedPly("non-contiguous f_rest properties");
            }
        }
    }
    const int degree = rest_count_to_degree(rest_count);
    const int coeffs = (degree + 1) * (degree + 1);
    std::vector<int> irest(rest_count);
    for (size_t i = 0; i < rest_count; ++i) irest[i] = index["f_rest_" + std::to_string(i)];

    const size_t stride = props.size();
    const size_t expected = static_cast<size_t>(vertex_count) * stride * sizeof(float);
    if (bytes.size() - data_start != expected) {
        throw MalformedPly("payload size does not match declared vertex count");
    }

    GaussianScene scene;
    scene.sh_degree = degree;
    scene.splats.resize(vertex_count);
    std::vector<float> row(stride);
    const char* cursor = bytes.data() + data_start;
    for (long v = 0; v < vertex_count; ++v) {
        std::memcpy(row.data(), cursor, stride * sizeof(float));
        cursor += stride * sizeof(float);
        GaussianSplat& s = scene.splats[v];
        s.mean = {row[ix], row[iy], row[iz]};
        s.sh.resize(coeffs);
        s.sh[0] = {row[idc0], row[idc1], row[idc2]};
        for (int j = 1; j < coeffs; ++j) {
            s.sh[j] = {row[irest[j - 1]], row[irest[(coeffs - 1) + j - 1]],
                       row[irest[2 * (coeffs - 1) + j - 1]]};
        }
        s.opacity = sigmoid(row[iop]);
        s.log_scale = {row[is0], row[is1], row[is2]};
        try {
            s.rotation = UnitQuat(row[ir0], row[ir1], row[ir2], row[ir3]);
        } catch (const NonFinite&) {
            throw MalformedPly("invalid rotation quaternion at vertex " + std::to_string(v));
        }
    }
    return scene;
}

GaussianScene load_ply(const std::string& path) { return parse_ply(read_file_bytes(path)); }

void save_ply(const GaussianScene& scene, const std::string& path) {
    write_file_bytes(path, serialize_ply(scene));
}

std::pair<GaussianScene, GaussianScene> extract_region(const GaussianScene& scene,
                                                       const Box3& box) {
    GaussianScene inside, outside;
    inside.sh_degree = outside.sh_degree = scene.sh_degree;
    for (const auto& s : scene.splats) {
        (box.contains(s.mean) ? inside : outside).splats.push_back(s);
    }
    return {std::move(inside), std::move(outside)};
}

GaussianScene transform_scene(const GaussianScene& scene, const DoF& dof) {
    dof.validate();
    if (!dof.is_isotropic()) {
        throw AnisotropicObjectScale(
            "scene transform requires isotropic scale; per-axis scale cannot be applied to "
            "oriented Gaussians");
    }
    const double s = dof.scale.x;
    GaussianScene out = scene;
    for (auto& splat : out.splats) {
        splat.mean = affine_apply(dof, splat.mean);
        splat.rotation = dof.rotation * splat.rotation;
        splat.log_scale += Vec3{std::log(s), std::log(s), std::log(s)};
    }
    return out;
}

GaussianScene merge(const GaussianScene& a, const GaussianScene& b) {
    GaussianScene out;
    out.sh_degree = std::max(a.sh_degree, b.sh_degree);
    const int coeffs = (out.sh_degree + 1) * (out.sh_degree + 1);
    out.splats.reserve(a.size() + b.size());
    for (const auto* src : {&a, &b}) {
        for (const auto& s : src->splats) {
            out.splats.push_back(s);
            out.splats.back().sh.resize(coeffs, Vec3{0, 0, 0});
        }
    }
    return out;
}

PrimitiveKind primitive_kind_from_string(const std::string& name) {
    if (name == "sphere") return PrimitiveKind::Sphere;
    if (name == "box") return PrimitiveKind::Box;
    if (name == "two_lobe") return PrimitiveKind::TwoLobe;
    throw ConfigError("unknown primitive kind: " + name);
}

namespace {

Vec3 random_unit_vector(Rng& rng) {
    while (true) {
        const Vec3 v{rng.normal(), rng.normal(), rng.normal()};
        const double n = v.norm();
        if (n > 1e-6) return v / n;
    }
}

GaussianSplat make_surface_splat(const Vec3& pos, const Vec3& color, double sigma,
                                 double opacity) {
    GaussianSplat s;
    s.mean = pos;
    s.log_scale = {std::log(sigma), std::log(sigma), std::log(sigma)};
    s.opacity = opacity;
    s.sh = {color_to_dc(color)};
    return s;
}

}  // namespace

GaussianScene synth_primitive(PrimitiveKind kind, int splat_count, std::uint64_t seed) {
    if (splat_count <= 0) throw Degenerate("primitive needs a positive splat count");
    GaussianScene scene;
    scene.sh_degree = 0;
    Rng rng(seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(kind));

    if (splat_count == 1) {
        Vec3 color{0.8, 0.5, 0.3};
        if (kind == PrimitiveKind::Box) color = {0.3, 0.5, 0.8};
        if (kind == PrimitiveKind::TwoLobe) color = {0.75, 0.3, 0.3};
        scene.splats.push_back(make_surface_splat({0, 0, 0}, color, 0.15, 0.95));
        return scene;
    }

    const int n = splat_count;
    switch (kind) {
        case PrimitiveKind::Sphere: {
            const double r = 0.5;
            const double area = 4.0 * kPi * r * r;
            const double sigma = 1.6 * std::sqrt(area / (kPi * n));
            for (int i = 0; i < n; ++i) {
                const Vec3 p = random_unit_vector(rng) * r;
                const Vec3 color{0.85, 0.45 + 0.3 * (p.z / r), 0.2};
                scene.splats.push_back(
                    make_surface_splat(p, color, sigma, 0.8 + 0.15 * rng.uniform()));
            }
            break;
        }
        case PrimitiveKind::Box: {
            const double half = 0.5;
            const double area = 24.0 * half * half;
            const double sigma = 1.6 * std::sqrt(area / (kPi * n));
            for (int i = 0; i < n; ++i) {
                const int face = rng.uniform_int(0, 5);
                const double u = rng.uniform(-half, half);
                const double v = rng.uniform(-half, half);
                Vec3 p;
                switch (face) {
                    case 0: p = {half, u, v}; break;
                    case 1: p = {-half, u, v}; break;
                    case 2: p = {u, half, v}; break;
                    case 3: p = {u, -half, v}; break;
                    case 4: p = {u, v, half}; break;
                    default: p = {u, v, -half}; break;
                }
                const Vec3 color{0.25, 0.45 + 0.2 * (p.x + half), 0.8};
                scene.splats.push_back(
                    make_surface_splat(p, color, sigma, 0.8 + 0.15 * rng.uniform()));
            }
            break;
        }
        case PrimitiveKind::TwoLobe: {
            // Two offset spheres of different radii: no rotational symmetry
            // about any single axis, so orientation is observable.
            const Vec3 center_a{0, 0, -0.2}, center_b{0, 0.07, 0.22};
            const double ra = 0.30, rb = 0.17;
            const double area_a = 4.0 * kPi * ra * ra, area_b = 4.0 * kPi * rb * rb;
            const double p_a = area_a / (area_a + area_b);
            const double sigma = 1.6 * std::sqrt((area_a + area_b) / (kPi * n));
            for (int i = 0; i < n; ++i) {
                const bool in_a = rng.uniform() < p_a;
                const Vec3 dir = random_unit_vector(rng);
                const Vec3 p = in_a ? center_a + dir * ra : center_b + dir * rb;
                const Vec3 color = in_a ? Vec3{0.8, 0.25, 0.2} : Vec3{0.3, 0.75, 0.3};
                scene.splats.push_back(
                    make_surface_splat(p, color, sigma, 0.8 + 0.15 * rng.uniform()));
            }
            break;
        }
    }
    return normalize_object(scene);
}

GaussianScene normalize_object(const GaussianScene& scene) {
    if (scene.empty()) return scene;
    const auto [lo, hi] = scene_bounds(scene);
    const Vec3 center = (lo + hi) * 0.5;
    const double diag = (hi - lo).norm();
    DoF dof;
    if (diag > 1e-12) {
        const double s = 1.0 / diag;
        dof.scale = {s, s, s};
        dof.translation = center * -s;
    } else {
        dof.translation = -center;
    }
    return transform_scene(scene, dof);
}

}  // namespace gsinsert
