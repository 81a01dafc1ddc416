// Core geometry: vectors, unit quaternions, 9-DoF similarity transforms, and
// oriented boxes. A DoF is the tuple (scale, rotation, translation) applied to
// a point as R * (S * p) + t, with S a per-axis positive scale.
#pragma once

#include <array>
#include <cmath>

#include "json.hpp"

namespace gsinsert {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator-() const { return {-x, -y, -z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3& operator+=(const Vec3& o) {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }
    Vec3 cwise_mul(const Vec3& o) const { return {x * o.x, y * o.y, z * o.z}; }
    Vec3 cwise_div(const Vec3& o) const { return {x / o.x, y / o.y, z / o.z}; }

    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double squared_norm() const { return dot(*this); }
    double norm() const { return std::sqrt(squared_norm()); }
    Vec3 normalized() const;

    double max_component() const { return std::max(x, std::max(y, z)); }
    double min_component() const { return std::min(x, std::min(y, z)); }
    bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }

    static Vec3 min(const Vec3& a, const Vec3& b) {
        return {std::min(a.x, b.x), std::min(a.y, b.y), std::min(a.z, b.z)};
    }
    static Vec3 max(const Vec3& a, const Vec3& b) {
        return {std::max(a.x, b.x), std::max(a.y, b.y), std::max(a.z, b.z)};
    }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

// Row-major 3x3 matrix; just enough linear algebra for covariances and frames.
struct Mat3 {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Mat3 identity() { return Mat3{}; }
    static Mat3 zero() { return Mat3{{0, 0, 0, 0, 0, 0, 0, 0, 0}}; }
    static Mat3 diagonal(const Vec3& d) { return Mat3{{d.x, 0, 0, 0, d.y, 0, 0, 0, d.z}}; }
    static Mat3 from_rows(const Vec3& r0, const Vec3& r1, const Vec3& r2) {
        return Mat3{{r0.x, r0.y, r0.z, r1.x, r1.y, r1.z, r2.x, r2.y, r2.z}};
    }

    double operator()(int r, int c) const { return m[3 * r + c]; }
    double& operator()(int r, int c) { return m[3 * r + c]; }

    Vec3 row(int r) const { return {m[3 * r], m[3 * r + 1], m[3 * r + 2]}; }

    Mat3 operator*(const Mat3& o) const;
    Vec3 operator*(const Vec3& v) const {
        return {row(0).dot(v), row(1).dot(v), row(2).dot(v)};
    }
    Mat3 operator+(const Mat3& o) const;
    Mat3 operator*(double s) const;
    Mat3 transposed() const;
    double determinant() const;
    Mat3 inverse() const;  // throws Degenerate when singular
    double frobenius_norm() const;
};

// Unit quaternion, canonicalized so w >= 0. Any constructed value is
// renormalized; norms below 1e-12 are rejected.
struct UnitQuat {
    double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

    UnitQuat() = default;
    UnitQuat(double w_, double x_, double y_, double z_);

    static UnitQuat identity() { return {}; }
    static UnitQuat from_axis_angle(const Vec3& axis, double radians);
    // Rz(azimuth) composed with Ry(elevation); both angles in radians.
    static UnitQuat from_azimuth_elevation(double azimuth, double elevation);
    static UnitQuat from_matrix(const Mat3& r);

    UnitQuat operator*(const UnitQuat& o) const;  // composition, this applied after o
    UnitQuat conjugate() const { return raw(w, -x, -y, -z); }
    Vec3 rotate(const Vec3& v) const;
    Mat3 to_matrix() const;
    // Smallest rotation angle taking one orientation to the other, radians.
    double geodesic_angle(const UnitQuat& o) const;
    double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

   private:
    // Bypasses normalization for internally-constructed exact values.
    static UnitQuat raw(double w_, double x_, double y_, double z_);
};

// Degrees of freedom of an inserted object or box: per-axis scale, rotation,
// translation. Maps local point p to R * (S * p) + t.
struct DoF {
    Vec3 scale{1, 1, 1};
    UnitQuat rotation;
    Vec3 translation{0, 0, 0};

    static DoF identity() { return {}; }
    bool is_isotropic(double tol = 1e-9) const;
    double max_extent() const { return scale.max_component(); }
    void validate() const;  // throws NonFinite on nonpositive/non-finite scale
};

Vec3 affine_apply(const DoF& dof, const Vec3& p);
// Preimage under the DoF map: S^-1 * (R^T * (p - t)).
Vec3 affine_unapply(const DoF& dof, const Vec3& p);

// Composition outer ∘ inner as a single DoF. Representable when the outer
// scale is isotropic or the inner rotation is identity; otherwise throws
// NonRepresentable.
DoF compose_dof(const DoF& outer, const DoF& inner);

// Oriented box: canonical cube with corners at ±0.5 carried by a DoF.
struct Box3 {
    DoF dof;

    // Corner order: index bit 0 -> +x, bit 1 -> +y, bit 2 -> +z.
    std::array<Vec3, 8> corners() const;
    bool contains(const Vec3& p) const;  // closed (boundary included)
    Vec3 center() const { return dof.translation; }
};

// JSON round-trip with fixed field order {"scale","rotation","translation"};
// rotation serialized as [w, x, y, z].
nlohmann::ordered_json dof_to_json(const DoF& dof);
DoF dof_from_json(const nlohmann::json& j);

nlohmann::ordered_json vec3_to_json(const Vec3& v);
Vec3 vec3_from_json(const nlohmann::json& j);
nlohmann::ordered_json quat_to_json(const UnitQuat& q);
UnitQuat quat_from_json(const nlohmann::json& j);

constexpr double kPi = 3.14159265358979323846;
inline double deg_to_rad(double d) { return d * kPi / 180.0; }
inline double rad_to_deg(double r) { return r * 180.0 / kPi; }

}  // namespace gsinsert
