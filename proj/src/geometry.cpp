#include "gsinsert/geometry.hpp"

#include "gsinsert/errors.hpp"

namespace gsinsert {

Vec3 Vec3::normalized() const {
    const double n = norm();
    if (n < 1e-15) throw Degenerate("cannot normalize near-zero vector");
    return *this / n;
}

Mat3 Mat3::operator*(const Mat3& o) const {
    Mat3 r = Mat3::zero();
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k) {
            const double a = (*this)(i, k);
            for (int j = 0; j < 3; ++j) r(i, j) += a * o(k, j);
        }
    return r;
}

Mat3 Mat3::operator+(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 9; ++i) r.m[i] = m[i] + o.m[i];
    return r;
}

Mat3 Mat3::operator*(double s) const {
    Mat3 r;
    for (int i = 0; i < 9; ++i) r.m[i] = m[i] * s;
    return r;
}

Mat3 Mat3::transposed() const {
    return Mat3{{m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]}};
}

double Mat3::determinant() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Mat3 Mat3::inverse() const {
    const double det = determinant();
    if (std::abs(det) < 1e-300) throw Degenerate("singular 3x3 matrix");
    const double inv = 1.0 / det;
    Mat3 r;
    r.m[0] = (m[4] * m[8] - m[5] * m[7]) * inv;
    r.m[1] = (m[2] * m[7] - m[1] * m[8]) * inv;
    r.m[2] = (m[1] * m[5] - m[2] * m[4]) * inv;
    r.m[3] = (m[5] * m[6] - m[3] * m[8]) * inv;
    r.m[4] = (m[0] * m[8] - m[2] * m[6]) * inv;
    r.m[5] = (m[2] * m[3] - m[0] * m[5]) * inv;
    r.m[6] = (m[3] * m[7] - m[4] * m[6]) * inv;
    r.m[7] = (m[1] * m[6] - m[0] * m[7]) * inv;
    r.m[8] = (m[0] * m[4] - m[1] * m[3]) * inv;
    return r;
}

double Mat3::frobenius_norm() const {
    double s = 0;
    for (double v : m) s += v * v;
    return std::sqrt(s);
}

UnitQuat UnitQuat::raw(double w_, double x_, double y_, double z_) {
    UnitQuat q;
    q.w = w_;
    q.x = x_;
    q.y = y_;
    q.z = z_;
    if (q.w < 0.0) {
        q.w = -q.w;
        q.x = -q.x;
        q.y = -q.y;
        q.z = -q.z;
    }
    return q;
}

UnitQuat::UnitQuat(double w_, double x_, double y_, double z_) {
    const double n = std::sqrt(w_ * w_ + x_ * x_ + y_ * y_ + z_ * z_);
    if (!(n > 1e-12) || !std::isfinite(n)) {
        throw NonFinite("quaternion with near-zero or non-finite norm");
    }
    w = w_ / n;
    x = x_ / n;
    y = y_ / n;
    z = z_ / n;
    if (w < 0.0) {
        w = -w;
        x = -x;
        y = -y;
        z = -z;
    }
}

UnitQuat UnitQuat::from_axis_angle(const Vec3& axis, double radians) {
    const Vec3 a = axis.normalized();
    const double h = 0.5 * radians;
    const double s = std::sin(h);
    return UnitQuat(std::cos(h), a.x * s, a.y * s, a.z * s);
}

UnitQuat UnitQuat::from_azimuth_elevation(double azimuth, double elevation) {
    const UnitQuat az = from_axis_angle({0, 0, 1}, azimuth);
    const UnitQuat el = from_axis_angle({0, 1, 0}, elevation);
    return az * el;
}

UnitQuat UnitQuat::from_matrix(const Mat3& r) {
    // Shepperd's method: pick the largest diagonal combination for stability.
    const double t = r(0, 0) + r(1, 1) + r(2, 2);
    double w, x, y, z;
    if (t > 0.0) {
        const double s = std::sqrt(t + 1.0) * 2.0;
        w = 0.25 * s;
        x = (r(2, 1) - r(1, 2)) / s;
        y = (r(0, 2) - r(2, 0)) / s;
        z = (r(1, 0) - r(0, 1)) / s;
    } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
        const double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2.0;
        w = (r(2, 1) - r(1, 2)) / s;
        x = 0.25 * s;
        y = (r(0, 1) + r(1, 0)) / s;
        z = (r(0, 2) + r(2, 0)) / s;
    } else if (r(1, 1) > r(2, 2)) {
        const double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2.0;
        w = (r(0, 2) - r(2, 0)) / s;
        x = (r(0, 1) + r(1, 0)) / s;
        y = 0.25 * s;
        z = (r(1, 2) + r(2, 1)) / s;
    } else {
        const double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2.0;
        w = (r(1, 0) - r(0, 1)) / s;
        x = (r(0, 2) + r(2, 0)) / s;
        y = (r(1, 2) + r(2, 1)) / s;
        z = 0.25 * s;
    }
    return UnitQuat(w, x, y, z);
}

UnitQuat UnitQuat::operator*(const UnitQuat& o) const {
    return UnitQuat(w * o.w - x * o.x - y * o.y - z * o.z,
                    w * o.x + x * o.w + y * o.z - z * o.y,
                    w * o.y - x * o.z + y * o.w + z * o.x,
                    w * o.z + x * o.y - y * o.x + z * o.w);
}

Vec3 UnitQuat::rotate(const Vec3& v) const {
    // v' = v + 2 q_v × (q_v × v + w v)
    const Vec3 qv{x, y, z};
    const Vec3 t = qv.cross(v) * 2.0;
    return v + t * w + qv.cross(t);
}

Mat3 UnitQuat::to_matrix() const {
    Mat3 r;
    const double xx = x * x, yy = y * y, zz = z * z;
    const double xy = x * y, xz = x * z, yz = y * z;
    const double wx = w * x, wy = w * y, wz = w * z;
    r.m = {1 - 2 * (yy + zz), 2 * (xy - wz),     2 * (xz + wy),
           2 * (xy + wz),     1 - 2 * (xx + zz), 2 * (yz - wx),
           2 * (xz - wy),     2 * (yz + wx),     1 - 2 * (xx + yy)};
    return r;
}

double UnitQuat::geodesic_angle(const UnitQuat& o) const {
    // atan2 form of the relative-rotation angle; accurate near zero where the
    // acos form loses half the precision.
    const double dw = w * o.w + x * o.x + y * o.y + z * o.z;
    const Vec3 dv{w * o.x - x * o.w - y * o.z + z * o.y,
                  w * o.y + x * o.z - y * o.w - z * o.x,
                  w * o.z - x * o.y + y * o.x - z * o.w};
    return 2.0 * std::atan2(dv.norm(), std::abs(dw));
}

bool DoF::is_isotropic(double tol) const {
    return std::abs(scale.x - scale.y) <= tol && std::abs(scale.x - scale.z) <= tol;
}

void DoF::validate() const {
    if (!scale.finite() || scale.x <= 0 || scale.y <= 0 || scale.z <= 0) {
        throw NonFinite("DoF scale must be positive and finite");
    }
    if (!translation.finite()) throw NonFinite("DoF translation must be finite");
}

Vec3 affine_apply(const DoF& dof, const Vec3& p) {
    return dof.rotation.rotate(dof.scale.cwise_mul(p)) + dof.translation;
}

Vec3 affine_unapply(const DoF& dof, const Vec3& p) {
    const Vec3 local = dof.rotation.conjugate().rotate(p - dof.translation);
    return local.cwise_div(dof.scale);
}

DoF compose_dof(const DoF& outer, const DoF& inner) {
    const bool inner_rot_identity =
        inner.rotation.geodesic_angle(UnitQuat::identity()) <= 1e-12;
    if (!outer.is_isotropic() && !inner_rot_identity) {
        throw NonRepresentable(
            "compose_dof: anisotropic outer scale with rotated inner transform");
    }
    DoF out;
    out.translation = affine_apply(outer, inner.translation);
    if (inner_rot_identity && !outer.is_isotropic()) {
        // R_o S_o S_i p + R_o S_o t_i + t_o
        out.scale = outer.scale.cwise_mul(inner.scale);
        out.rotation = outer.rotation;
    } else {
        // Isotropic outer scale commutes with the inner rotation.
        out.scale = inner.scale * outer.scale.x;
        out.rotation = outer.rotation * inner.rotation;
    }
    return out;
}

std::array<Vec3, 8> Box3::corners() const {
    std::array<Vec3, 8> out;
    for (int i = 0; i < 8; ++i) {
        const Vec3 local{(i & 1) ? 0.5 : -0.5, (i & 2) ? 0.5 : -0.5, (i & 4) ? 0.5 : -0.5};
        out[i] = affine_apply(dof, local);
    }
    return out;
}

bool Box3::contains(const Vec3& p) const {
    const Vec3 local = affine_unapply(dof, p);
    return std::abs(local.x) <= 0.5 && std::abs(local.y) <= 0.5 && std::abs(local.z) <= 0.5;
}

nlohmann::ordered_json vec3_to_json(const Vec3& v) {
    return nlohmann::ordered_json::array({v.x, v.y, v.z});
}

Vec3 vec3_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 3) throw ConfigError("expected 3-element array");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

nlohmann::ordered_json quat_to_json(const UnitQuat& q) {
    return nlohmann::ordered_json::array({q.w, q.x, q.y, q.z});
}

UnitQuat quat_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 4) throw ConfigError("expected 4-element array");
    return UnitQuat(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
                    j[3].get<double>());
}

nlohmann::ordered_json dof_to_json(const DoF& dof) {
    nlohmann::ordered_json j;
    j["scale"] = vec3_to_json(dof.scale);
    j["rotation"] = quat_to_json(dof.rotation);
    j["translation"] = vec3_to_json(dof.translation);
    return j;
}

DoF dof_from_json(const nlohmann::json& j) {
    if (!j.contains("scale") || !j.contains("rotation") || !j.contains("translation")) {
        throw ConfigError("DoF JSON must contain scale, rotation, translation");
    }
    DoF dof;
    dof.scale = vec3_from_json(j.at("scale"));
    dof.rotation = quat_from_json(j.at("rotation"));
    dof.translation = vec3_from_json(j.at("translation"));
    dof.validate();
    return dof;
}

}  // namespace gsinsert
