#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "linobs/errors.hpp"
#include "linobs/numerics.hpp"

namespace linobs {

enum class ManifoldKind { Euclidean, Sphere2, LieGroup };
enum class GroupId { SO3, UT3 };

// Tangent vector: component vector attached to a base point. Components are
// global coordinates per manifold family: natural coordinates on R^n, ambient
// R^3 vectors orthogonal to the base point on S^2, and left-trivialized
// algebra coordinates on matrix groups.
struct Tangent {
    Vec base;
    Vec v;
};

namespace detail {

inline Mat3 mat_of(const Vec& p) {
    if (p.size() != 9) throw DimensionError("group point must have 9 coordinates");
    return Eigen::Map<const Mat3>(p.data());
}

inline Vec flat_of(const Mat3& m) {
    Vec p(9);
    Eigen::Map<Mat3>(p.data()) = m;
    return p;
}

inline Mat3 ut3_hat(const Vec3& a) {
    Mat3 n = Mat3::Zero();
    n(0, 1) = a(0);
    n(1, 2) = a(1);
    n(0, 2) = a(2);
    return n;
}

inline Vec3 ut3_vee(const Mat3& n) { return Vec3(n(0, 1), n(1, 2), n(0, 2)); }

}  // namespace detail

class Manifold {
  public:
    static Manifold euclidean(int n) {
        if (n < 1) throw ConfigError("euclidean dimension must be >= 1");
        Manifold m;
        m.kind_ = ManifoldKind::Euclidean;
        m.dim_ = n;
        return m;
    }

    static Manifold sphere2() {
        Manifold m;
        m.kind_ = ManifoldKind::Sphere2;
        m.dim_ = 2;
        return m;
    }

    static Manifold lie_group(GroupId id, double mu) {
        if (mu < 0.0 || mu > 1.0) throw ConfigError("connection parameter mu must lie in [0,1]");
        Manifold m;
        m.kind_ = ManifoldKind::LieGroup;
        m.group_ = id;
        m.mu_ = mu;
        m.dim_ = 3;
        return m;
    }

    ManifoldKind kind() const { return kind_; }
    GroupId group() const { return group_; }
    double mu() const { return mu_; }
    int dim() const { return dim_; }

    int point_size() const {
        switch (kind_) {
            case ManifoldKind::Euclidean: return dim_;
            case ManifoldKind::Sphere2: return 3;
            case ManifoldKind::LieGroup: return 9;
        }
        return 0;
    }

    int tangent_size() const {
        switch (kind_) {
            case ManifoldKind::Euclidean: return dim_;
            case ManifoldKind::Sphere2: return 3;
            case ManifoldKind::LieGroup: return 3;
        }
        return 0;
    }

    double guard_radius() const {
        switch (kind_) {
            case ManifoldKind::Euclidean: return std::numeric_limits<double>::infinity();
            case ManifoldKind::Sphere2: return M_PI - 1e-3;
            case ManifoldKind::LieGroup:
                return group_ == GroupId::SO3 ? M_PI - 1e-6
                                              : std::numeric_limits<double>::infinity();
        }
        return 0.0;
    }

    double point_residual(const Vec& p) const {
        check_point_size(p);
        switch (kind_) {
            case ManifoldKind::Euclidean:
                return 0.0;
            case ManifoldKind::Sphere2:
                return std::abs(p.norm() - 1.0);
            case ManifoldKind::LieGroup: {
                const Mat3 g = detail::mat_of(p);
                if (group_ == GroupId::SO3) {
                    return (g.transpose() * g - Mat3::Identity()).norm() +
                           std::abs(g.determinant() - 1.0);
                }
                Mat3 off = g - Mat3::Identity();
                off(0, 1) = 0.0;
                off(0, 2) = 0.0;
                off(1, 2) = 0.0;
                return off.norm();
            }
        }
        return 0.0;
    }

    void validate_point(const Vec& p, double tol = 1e-6) const {
        if (!p.allFinite()) throw NumericalError("point has non-finite coordinates");
        const double r = point_residual(p);
        if (r > tol) {
            throw NumericalError("point violates manifold membership, residual " +
                                 std::to_string(r));
        }
    }

    Vec project_point(const Vec& p) const {
        check_point_size(p);
        switch (kind_) {
            case ManifoldKind::Euclidean:
                return p;
            case ManifoldKind::Sphere2:
                return p / p.norm();
            case ManifoldKind::LieGroup: {
                Mat3 g = detail::mat_of(p);
                if (group_ == GroupId::SO3) return detail::flat_of(project_rotation(g));
                g(1, 0) = g(2, 0) = g(2, 1) = 0.0;
                g(0, 0) = g(1, 1) = g(2, 2) = 1.0;
                return detail::flat_of(g);
            }
        }
        return p;
    }

    Vec project_tangent(const Vec& p, const Vec& w) const {
        check_tangent_size(w);
        if (kind_ == ManifoldKind::Sphere2) {
            return w - p.dot(w) * p / p.squaredNorm();
        }
        return w;
    }

    double tangency_residual(const Tangent& t) const {
        if (kind_ == ManifoldKind::Sphere2) return std::abs(t.base.dot(t.v));
        return 0.0;
    }

    bool in_guard(const Vec& v) const { return v.norm() < guard_radius(); }

    // Geodesic exponential. Closed form on every supported family.
    Vec exp(const Vec& p, const Vec& v) const {
        check_tangent_size(v);
        switch (kind_) {
            case ManifoldKind::Euclidean:
                return p + v;
            case ManifoldKind::Sphere2: {
                if (!in_guard(v)) throw GuardRadiusError("sphere exp outside guard radius");
                const double th = v.norm();
                if (th < 1e-14) return p;
                Vec q = std::cos(th) * p + (std::sin(th) / th) * v;
                return q / q.norm();
            }
            case ManifoldKind::LieGroup: {
                if (group_ == GroupId::SO3 && !in_guard(v)) {
                    throw GuardRadiusError("group exp outside guard radius");
                }
                return detail::flat_of(detail::mat_of(p) * algebra_exp(v));
            }
        }
        return p;
    }

    // Inverse of exp within the guard radius.
    Vec log(const Vec& p, const Vec& q) const {
        switch (kind_) {
            case ManifoldKind::Euclidean:
                return q - p;
            case ManifoldKind::Sphere2: {
                const double c = std::clamp(p.dot(q) / (p.norm() * q.norm()), -1.0, 1.0);
                const Vec w = q - p.dot(q) * p / p.squaredNorm();
                const double n = w.norm();
                const double th = std::atan2(n, c);
                if (th >= guard_radius()) {
                    throw GuardRadiusError("sphere log outside guard radius");
                }
                if (n < 1e-14) return Vec::Zero(3);
                return (th / n) * w;
            }
            case ManifoldKind::LieGroup: {
                const Mat3 g = detail::mat_of(p);
                const Mat3 h = detail::mat_of(q);
                const Mat3 rel = group_ == GroupId::SO3
                                     ? Mat3(g.transpose() * h)
                                     : Mat3(g.inverse() * h);
                return algebra_log_mat(rel);
            }
        }
        return q;
    }

    double distance(const Vec& p, const Vec& q) const { return log(p, q).norm(); }

    // Parallel transport of w from p along the geodesic with initial velocity
    // dir, up to parameter s. Closed form on every family: identity on R^n, an
    // in-plane rotation on S^2, and exp(-s (1-mu) ad_xi) on group components.
    Vec transport_geodesic(const Vec& p, const Vec& dir, const Vec& w, double s = 1.0) const {
        check_tangent_size(dir);
        check_tangent_size(w);
        switch (kind_) {
            case ManifoldKind::Euclidean:
                return w;
            case ManifoldKind::Sphere2: {
                const double speed = dir.norm();
                if (speed < 1e-14) return w;
                const double arc = s * speed;
                const Vec3 u = dir / speed;
                const Vec3 q(p);
                const Vec3 n = q.cross(u);
                const double a = u.dot(w);
                const double b = n.dot(w);
                const Vec3 u_moved = -std::sin(arc) * q + std::cos(arc) * u;
                return a * u_moved + b * n;
            }
            case ManifoldKind::LieGroup: {
                const double t = -s * (1.0 - mu_);
                if (group_ == GroupId::SO3) {
                    return rodrigues_exp(t * Vec3(dir)) * w;
                }
                return w + t * bracket(dir, w);
            }
        }
        return w;
    }

    // Transport along a sampled path by composing per-segment geodesic
    // transports (Schild-style; second order in the sample spacing).
    Vec transport_curve(const std::vector<Vec>& path, const Vec& w) const {
        if (path.size() < 2) return w;
        Vec cur = w;
        for (std::size_t i = 0; i + 1 < path.size(); ++i) {
            const Vec seg = log(path[i], path[i + 1]);
            cur = transport_geodesic(path[i], seg, cur);
        }
        return cur;
    }

    // Curvature operator R(X,Y)Z with the sign convention
    // R(X,Y)Z = del_X del_Y Z - del_Y del_X Z - del_[X,Y] Z.
    Vec curvature(const Vec& p, const Vec& x, const Vec& y, const Vec& z) const {
        switch (kind_) {
            case ManifoldKind::Euclidean:
                return Vec::Zero(dim_);
            case ManifoldKind::Sphere2: {
                const Vec xt = project_tangent(p, x);
                const Vec yt = project_tangent(p, y);
                const Vec zt = project_tangent(p, z);
                return yt.dot(zt) * xt - xt.dot(zt) * yt;
            }
            case ManifoldKind::LieGroup:
                return mu_ * (mu_ - 1.0) * bracket(bracket(x, y), z);
        }
        return Vec::Zero(tangent_size());
    }

    Vec torsion(const Vec& p, const Vec& x, const Vec& y) const {
        (void)p;
        if (kind_ == ManifoldKind::LieGroup) {
            return (1.0 - 2.0 * mu_) * bracket(x, y);
        }
        return Vec::Zero(tangent_size());
    }

    // m-th covariant derivative of the curvature tensor, evaluated by
    // transported central differences of the closed-form operator along
    // geodesics in the given directions. Supported orders: 1 and 2.
    Vec curvature_derivative(const Vec& p, const std::vector<Vec>& directions, const Vec& x,
                             const Vec& y, const Vec& z) const {
        if (directions.empty()) return curvature(p, x, y, z);
        if (directions.size() > 2) {
            throw ConfigError("curvature_derivative supports orders 1 and 2 only");
        }
        const double h = directions.size() == 2 ? 1e-3 : 1e-4;
        const Vec d = directions.front();
        const std::vector<Vec> rest(directions.begin() + 1, directions.end());

        auto shifted = [&](double s) {
            const Vec dp = project_tangent(p, d);
            const Vec q = exp(p, s * dp);
            std::vector<Vec> rest_t;
            rest_t.reserve(rest.size());
            for (const Vec& r : rest) rest_t.push_back(transport_geodesic(p, s * dp, r));
            const Vec val = curvature_derivative(q, rest_t,
                                                 transport_geodesic(p, s * dp, x),
                                                 transport_geodesic(p, s * dp, y),
                                                 transport_geodesic(p, s * dp, z));
            // pull the value back to p along the same geodesic
            return transport_geodesic(q, log(q, p), val);
        };
        return (shifted(h) - shifted(-h)) / (2.0 * h);
    }

    // Deterministic orthonormal tangent basis, tangent_size x dim.
    Mat frame(const Vec& p) const {
        switch (kind_) {
            case ManifoldKind::Euclidean:
                return Mat::Identity(dim_, dim_);
            case ManifoldKind::Sphere2: {
                const Vec3 q(p);
                int least = 0;
                for (int i = 1; i < 3; ++i) {
                    if (std::abs(q(i)) < std::abs(q(least))) least = i;
                }
                Vec3 f1 = Vec3::Unit(least) - q(least) * q / q.squaredNorm();
                f1.normalize();
                const Vec3 f2 = q.cross(f1) / q.norm();
                Mat f(3, 2);
                f.col(0) = f1;
                f.col(1) = f2;
                return f;
            }
            case ManifoldKind::LieGroup:
                return Mat::Identity(3, 3);
        }
        return Mat();
    }

    // Frame at p obtained by parallel transport of a reference frame along
    // the connecting geodesic; the normal-coordinate frame of ref at p.
    Mat normal_frame(const Vec& p_ref, const Mat& f_ref, const Vec& p) const {
        const Vec dir = log(p_ref, p);
        Mat f(f_ref.rows(), f_ref.cols());
        for (int j = 0; j < f_ref.cols(); ++j) {
            f.col(j) = transport_geodesic(p_ref, dir, f_ref.col(j));
        }
        return f;
    }

    Vec to_frame(const Mat& f, const Vec& w) const { return f.transpose() * w; }
    Vec from_frame(const Mat& f, const Vec& c) const { return f * c; }

    // --- group-specific helpers ---

    Vec identity() const {
        require_group();
        return detail::flat_of(Mat3::Identity());
    }

    Vec compose(const Vec& g, const Vec& h) const {
        require_group();
        return detail::flat_of(detail::mat_of(g) * detail::mat_of(h));
    }

    Vec inverse(const Vec& g) const {
        require_group();
        const Mat3 m = detail::mat_of(g);
        return detail::flat_of(group_ == GroupId::SO3 ? Mat3(m.transpose())
                                                      : Mat3(m.inverse()));
    }

    Vec bracket(const Vec& a, const Vec& b) const {
        require_group();
        if (group_ == GroupId::SO3) return Vec3(a).cross(Vec3(b));
        // strict upper-triangular commutator: only the corner entry survives
        Vec3 out = Vec3::Zero();
        out(2) = a(0) * b(1) - a(1) * b(0);
        return out;
    }

    Mat3 algebra_exp(const Vec& xi) const {
        require_group();
        if (group_ == GroupId::SO3) return rodrigues_exp(Vec3(xi));
        const Mat3 n = detail::ut3_hat(Vec3(xi));
        return Mat3::Identity() + n + 0.5 * n * n;
    }

    Vec algebra_log_mat(const Mat3& g) const {
        require_group();
        if (group_ == GroupId::SO3) return rotation_log(g);
        const Mat3 n = g - Mat3::Identity();
        return detail::ut3_vee(n - 0.5 * n * n);
    }

    Mat3 hat(const Vec& xi) const {
        require_group();
        return group_ == GroupId::SO3 ? skew(Vec3(xi)) : detail::ut3_hat(Vec3(xi));
    }

    Vec vee(const Mat3& m) const {
        require_group();
        return group_ == GroupId::SO3 ? Vec(unskew(m)) : Vec(detail::ut3_vee(m));
    }

    // Left-trivialized components of an ambient matrix velocity at g,
    // projected onto the algebra.
    Vec left_trivialize(const Vec& g, const Vec& gdot_flat) const {
        require_group();
        const Mat3 gm = detail::mat_of(g);
        const Mat3 v = detail::mat_of(gdot_flat);
        Mat3 om = group_ == GroupId::SO3 ? Mat3(gm.transpose() * v) : Mat3(gm.inverse() * v);
        if (group_ == GroupId::SO3) om = 0.5 * (om - om.transpose().eval());
        return vee(om);
    }

  private:
    void check_point_size(const Vec& p) const {
        if (p.size() != point_size()) throw DimensionError("point size mismatch");
    }
    void check_tangent_size(const Vec& v) const {
        if (v.size() != tangent_size()) throw DimensionError("tangent size mismatch");
    }
    void require_group() const {
        if (kind_ != ManifoldKind::LieGroup) {
            throw DimensionError("operation requires a Lie group manifold");
        }
    }

    ManifoldKind kind_ = ManifoldKind::Euclidean;
    GroupId group_ = GroupId::SO3;
    double mu_ = 1.0;
    int dim_ = 1;
};

struct AffineCheckResult {
    double max_deviation = 0.0;
    double tolerance = 0.0;
    bool pass = false;
    int sample_count = 0;
};

// Tests whether a sampled map f preserves geodesics with matched initial
// conditions on a neighborhood of `base`: for several directions d the image
// of s -> exp_base(s rho d) is compared against the geodesic from f(base)
// with the measured initial velocity.
inline AffineCheckResult is_affine_transformation(
    const Manifold& m, const std::function<Vec(const Vec&)>& f, const Vec& base,
    double radius, double tolerance, int direction_count = 6, int samples_per_geodesic = 20) {
    const Mat fr = m.frame(base);
    std::mt19937 rng(12345);
    std::normal_distribution<double> gauss(0.0, 1.0);

    AffineCheckResult out;
    out.tolerance = tolerance;

    const Vec y0 = f(base);
    for (int k = 0; k < direction_count; ++k) {
        Vec c(m.dim());
        for (int i = 0; i < m.dim(); ++i) c(i) = gauss(rng);
        c.normalize();
        const Vec d = m.from_frame(fr, c);

        // measured image velocity at s = 0
        const double delta = 1e-4;
        const Vec fwd = m.log(y0, f(m.exp(base, delta * radius * d)));
        const Vec bwd = m.log(y0, f(m.exp(base, -delta * radius * d)));
        const Vec v0 = (fwd - bwd) / (2.0 * delta);

        for (int j = 1; j <= samples_per_geodesic; ++j) {
            const double s = static_cast<double>(j) / samples_per_geodesic;
            const Vec image = f(m.exp(base, s * radius * d));
            const Vec matched = m.exp(y0, s * v0);
            out.max_deviation = std::max(out.max_deviation, m.distance(matched, image));
            ++out.sample_count;
        }
    }
    out.pass = out.max_deviation < tolerance;
    return out;
}

}  // namespace linobs
