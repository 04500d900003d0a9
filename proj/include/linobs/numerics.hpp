#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

#include "linobs/errors.hpp"

namespace linobs {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline bool all_finite(const Vec& x) { return x.allFinite(); }

inline Mat3 skew(const Vec3& w) {
    Mat3 s;
    s <<    0, -w.z(),  w.y(),
        w.z(),      0, -w.x(),
       -w.y(),  w.x(),      0;
    return s;
}

inline Vec3 unskew(const Mat3& s) {
    return Vec3(s(2, 1), s(0, 2), s(1, 0));
}

// Rodrigues formula, exact for all magnitudes; series branch below 1e-8.
inline Mat3 rodrigues_exp(const Vec3& w) {
    const double th = w.norm();
    const Mat3 k = skew(w);
    if (th < 1e-8) {
        return Mat3::Identity() + k + 0.5 * k * k;
    }
    const double a = std::sin(th) / th;
    const double b = (1.0 - std::cos(th)) / (th * th);
    return Mat3::Identity() + a * k + b * k * k;
}

// Inverse of rodrigues_exp on the guarded ball ||w|| <= pi - 1e-6.
inline Vec3 rotation_log(const Mat3& r) {
    const double c = std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0);
    const double th = std::acos(c);
    if (th > M_PI - 1e-6) {
        throw GuardRadiusError("rotation_log: angle " + std::to_string(th) +
                               " exceeds guard radius pi - 1e-6");
    }
    const Vec3 axis_term = unskew(r - r.transpose());  // = 2 sin(th) * axis
    if (th < 1e-8) {
        return 0.5 * axis_term;
    }
    return (th / (2.0 * std::sin(th))) * axis_term;
}

// Nearest rotation via SVD polar factor; det corrected to +1.
inline Mat3 project_rotation(const Mat3& m) {
    Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 u = svd.matrixU();
    Mat3 v = svd.matrixV();
    if ((u * v.transpose()).determinant() < 0) {
        u.col(2) *= -1.0;
    }
    return u * v.transpose();
}

using OdeRhs = std::function<Vec(double, const Vec&)>;

struct OdeSolution {
    std::vector<double> t;
    std::vector<Vec> x;

    const Vec& back() const { return x.back(); }
};

// Classic fixed-step RK4. A shorter final step covers any remainder of the
// interval. States are checked for finiteness after every step.
inline OdeSolution integrate_ode(const OdeRhs& f, const Vec& x0, double t0, double t1,
                                 double h) {
    if (!(h > 0.0)) throw ConfigError("integrate_ode: step size must be positive");
    if (!(t1 >= t0)) throw ConfigError("integrate_ode: t1 must be >= t0");
    if (!all_finite(x0)) throw DivergedError(t0);

    OdeSolution sol;
    sol.t.push_back(t0);
    sol.x.push_back(x0);

    double t = t0;
    Vec x = x0;
    const double tiny = 1e-12 * std::max(1.0, std::abs(t1));
    while (t < t1 - tiny) {
        const double step = std::min(h, t1 - t);
        const Vec k1 = f(t, x);
        const Vec k2 = f(t + 0.5 * step, x + 0.5 * step * k1);
        const Vec k3 = f(t + 0.5 * step, x + 0.5 * step * k2);
        const Vec k4 = f(t + step, x + step * k3);
        x = x + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        t += step;
        if (!all_finite(x)) throw DivergedError(sol.t.back());
        sol.t.push_back(t);
        sol.x.push_back(x);
    }
    return sol;
}

// Symmetric difference quotient of a vector-valued map along a direction.
inline Vec central_difference(const std::function<Vec(const Vec&)>& f, const Vec& x,
                              const Vec& direction, double h = 1e-5) {
    if (!(h > 0.0)) throw ConfigError("central_difference: h must be positive");
    return (f(x + h * direction) - f(x - h * direction)) / (2.0 * h);
}

// Five-point interior stencils, O(h^4). `values` holds f on a uniform grid.
inline Vec stencil_d1(const std::vector<Vec>& values, std::size_t i, double h) {
    return (values[i - 2] - 8.0 * values[i - 1] + 8.0 * values[i + 1] - values[i + 2]) /
           (12.0 * h);
}

// One-sided five-point first derivative at the left edge, O(h^4).
inline Vec stencil_d1_left(const std::vector<Vec>& values, double h) {
    return (-25.0 * values[0] + 48.0 * values[1] - 36.0 * values[2] + 16.0 * values[3] -
            3.0 * values[4]) /
           (12.0 * h);
}

// First derivative at index i from the five samples starting at `start`; the
// evaluation point must be the window's first, middle, or last entry.
inline Vec stencil_d1_window(const std::vector<Vec>& values, std::size_t start, std::size_t i,
                             double h) {
    if (i == start + 2) return stencil_d1(values, i, h);
    std::vector<Vec> window(values.begin() + start, values.begin() + start + 5);
    if (i == start) return stencil_d1_left(window, h);
    if (i == start + 4) {
        std::reverse(window.begin(), window.end());
        return -stencil_d1_left(window, h);
    }
    throw ConfigError("stencil_d1_window: unsupported evaluation offset");
}

struct LeastSquaresResult {
    Vec solution;
    double residual_norm = 0.0;
};

// Minimum-residual solve via column-pivoted QR. Rank deficiency below the
// relative threshold is reported as an error rather than silently truncated.
inline LeastSquaresResult least_squares(const Mat& a, const Vec& b,
                                        double rank_tol = 1e-12) {
    if (a.rows() != b.size()) throw DimensionError("least_squares: row count mismatch");
    Eigen::ColPivHouseholderQR<Mat> qr(a);
    qr.setThreshold(rank_tol);
    if (qr.rank() < a.cols()) throw RankError(qr.rank(), a.cols());
    LeastSquaresResult out;
    out.solution = qr.solve(b);
    out.residual_norm = (a * out.solution - b).norm();
    return out;
}

}  // namespace linobs
