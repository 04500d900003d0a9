#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "linobs/errors.hpp"
#include "linobs/manifold.hpp"
#include "linobs/numerics.hpp"

namespace linobs {

class InputSignal {
  public:
    static InputSignal constant(Vec value) {
        InputSignal s;
        s.dim_ = static_cast<int>(value.size());
        s.eval_ = [value = std::move(value)](double) { return value; };
        return s;
    }

    static InputSignal sinusoid(Vec amplitude, Vec frequency_hz, Vec phase, Vec offset) {
        const auto n = amplitude.size();
        if (frequency_hz.size() != n || phase.size() != n || offset.size() != n) {
            throw ConfigError("sinusoid input: component count mismatch");
        }
        InputSignal s;
        s.dim_ = static_cast<int>(n);
        s.eval_ = [=](double t) {
            Vec u(n);
            for (Eigen::Index i = 0; i < n; ++i) {
                u(i) = amplitude(i) * std::sin(2.0 * M_PI * frequency_hz(i) * t + phase(i)) +
                       offset(i);
            }
            return u;
        };
        return s;
    }

    // values[i] is active for t >= times[i]; values[0] also covers t < times[0].
    static InputSignal piecewise_constant(std::vector<double> times, std::vector<Vec> values) {
        if (times.size() != values.size() || values.empty()) {
            throw ConfigError("piecewise input: need one value per breakpoint");
        }
        for (std::size_t i = 1; i < times.size(); ++i) {
            if (times[i] <= times[i - 1]) {
                throw ConfigError("piecewise input: breakpoints must be increasing");
            }
        }
        InputSignal s;
        s.dim_ = static_cast<int>(values.front().size());
        s.breaks_ = times;
        s.eval_ = [times = std::move(times), values = std::move(values)](double t) {
            std::size_t i = 0;
            while (i + 1 < times.size() && t >= times[i + 1]) ++i;
            return values[i];
        };
        return s;
    }

    Vec eval(double t) const { return eval_(t); }
    int dim() const { return dim_; }
    // times where the signal jumps; trajectory data is only C^0 across these
    const std::vector<double>& breakpoints() const { return breaks_; }

  private:
    int dim_ = 0;
    std::vector<double> breaks_;
    std::function<Vec(double)> eval_;
};

// Input-parameterized dynamics W^u assigning a tangent vector to each point.
// The ambient right-hand side extends smoothly off the manifold so that RK4
// stages remain well defined between reprojections.
class FlowField {
  public:
    enum class Kind { SigmaCross, LeftInvariant, GradientLike, Linear, Custom };

    // S^2: W(q) = sigma(u) x q with sigma(u) = S u + c.
    static FlowField sigma_cross(Mat s, Vec c) {
        if (s.rows() != 3 || c.size() != 3) throw ConfigError("sigma_cross: sigma must be 3d");
        FlowField f;
        f.kind_ = Kind::SigmaCross;
        f.input_dim_ = static_cast<int>(s.cols());
        f.mat_ = std::move(s);
        f.vec_ = std::move(c);
        return f;
    }

    // Matrix group: W(g) = g * hat(lambda(u)) with lambda(u) = L u + d.
    static FlowField left_invariant(Mat l, Vec d) {
        if (l.rows() != 3 || d.size() != 3) throw ConfigError("left_invariant: lambda must be 3d");
        FlowField f;
        f.kind_ = Kind::LeftInvariant;
        f.input_dim_ = static_cast<int>(l.cols());
        f.mat_ = std::move(l);
        f.vec_ = std::move(d);
        return f;
    }

    // Left-invariant dynamics plus a state-dependent tangent perturbation
    // eps * Pi_{T_g}(B); breaks the group-affine property for eps != 0.
    static FlowField left_invariant_perturbed(Mat l, Vec d, Mat3 b, double eps) {
        FlowField f = left_invariant(std::move(l), std::move(d));
        f.pert_ = b;
        f.eps_ = eps;
        return f;
    }

    // S^2: W(q) = gain * (target - <q,target> q / |q|^2); contracts toward the
    // normalized target direction. Ignores the input.
    static FlowField gradient_like(Vec3 target, double gain) {
        FlowField f;
        f.kind_ = Kind::GradientLike;
        f.input_dim_ = 1;
        f.vec_ = target;
        f.scale_ = gain;
        return f;
    }

    // R^n: W(x) = A x.
    static FlowField linear(Mat a) {
        if (a.rows() != a.cols()) throw ConfigError("linear field: matrix must be square");
        FlowField f;
        f.kind_ = Kind::Linear;
        f.input_dim_ = 1;
        f.mat_ = std::move(a);
        return f;
    }

    // Arbitrary ambient right-hand side on point coordinates.
    static FlowField custom(int input_dim, std::function<Vec(const Vec&, const Vec&)> rhs) {
        FlowField f;
        f.kind_ = Kind::Custom;
        f.input_dim_ = input_dim;
        f.custom_ = std::move(rhs);
        return f;
    }

    Kind kind() const { return kind_; }
    int input_dim() const { return input_dim_; }

    Vec sigma(const Vec& u) const {
        if (kind_ != Kind::SigmaCross) throw ConfigError("sigma is defined for sigma_cross fields");
        return mat_ * u + vec_;
    }

    Vec lambda(const Vec& u) const {
        if (kind_ != Kind::LeftInvariant) {
            throw ConfigError("lambda is defined for left-invariant fields");
        }
        return mat_ * u + vec_;
    }

    // Velocity in point coordinates (ambient), defined near the manifold.
    Vec ambient_rhs(const Manifold& m, const Vec& u, const Vec& p) const {
        switch (kind_) {
            case Kind::SigmaCross: {
                const Vec3 s = mat_ * u + vec_;
                return s.cross(Vec3(p));
            }
            case Kind::LeftInvariant: {
                const Mat3 g = detail::mat_of(p);
                Mat3 vel = g * m.hat(mat_ * u + vec_);
                if (eps_ != 0.0) vel += eps_ * tangent_part(m, g, pert_);
                return detail::flat_of(vel);
            }
            case Kind::GradientLike: {
                const Vec3 q(p);
                const Vec3 b(vec_);
                return scale_ * (b - q.dot(b) * q / q.squaredNorm());
            }
            case Kind::Linear:
                return mat_ * p;
            case Kind::Custom:
                return custom_(u, p);
        }
        return Vec::Zero(p.size());
    }

    // Tangent components of the field at a manifold point.
    Vec eval(const Manifold& m, const Vec& u, const Vec& p) const {
        const Vec rhs = ambient_rhs(m, u, p);
        if (m.kind() == ManifoldKind::LieGroup) return m.left_trivialize(p, rhs);
        return m.project_tangent(p, rhs);
    }

  private:
    static Mat3 tangent_part(const Manifold& m, const Mat3& g, const Mat3& b) {
        if (m.group() == GroupId::SO3) {
            const Mat3 w = g.transpose() * b;
            return g * Mat3(0.5 * (w - w.transpose()));
        }
        Mat3 w = g.inverse() * b;
        w(1, 0) = w(2, 0) = w(2, 1) = 0.0;
        w(0, 0) = w(1, 1) = w(2, 2) = 0.0;
        return g * w;
    }

    Kind kind_ = Kind::Custom;
    int input_dim_ = 0;
    Mat mat_;
    Vec vec_;
    Mat3 pert_ = Mat3::Zero();
    double eps_ = 0.0;
    double scale_ = 1.0;
    std::function<Vec(const Vec&, const Vec&)> custom_;
};

struct Trajectory {
    std::vector<double> times;
    std::vector<Vec> points;
    double max_reprojection = 0.0;

    std::size_t size() const { return points.size(); }
    const Vec& front() const { return points.front(); }
    const Vec& back() const { return points.back(); }
};

// Fixed-step RK4 on point coordinates with a reprojection to the manifold
// after every step. The largest per-step reprojection displacement is
// recorded as a health indicator.
inline Trajectory flow(const Manifold& m, const FlowField& field, const InputSignal& input,
                       const Vec& p0, double horizon, double dt) {
    if (!(dt > 0.0) || !(horizon >= 0.0)) throw ConfigError("flow: need dt > 0, horizon >= 0");
    m.validate_point(p0);

    Trajectory traj;
    const auto steps = static_cast<std::size_t>(std::llround(horizon / dt));
    if (std::abs(steps * dt - horizon) > 1e-9 * std::max(1.0, horizon)) {
        throw ConfigError("flow: horizon must be an integer multiple of dt");
    }
    traj.times.reserve(steps + 1);
    traj.points.reserve(steps + 1);
    traj.times.push_back(0.0);
    traj.points.push_back(p0);

    const double teps = 1e-9 * std::max(1.0, horizon);
    for (double b : input.breakpoints()) {
        if (b > teps && b < horizon - teps &&
            std::abs(b - std::llround(b / dt) * dt) > teps) {
            throw ConfigError("flow: input breakpoints must lie on the step grid");
        }
    }
    // a step whose end lands on an input breakpoint must close with the
    // left-side value (the input is right-continuous there)
    auto ends_on_break = [&](double t_end) {
        for (double b : input.breakpoints()) {
            if (std::abs(b - t_end) < teps) return true;
        }
        return false;
    };

    Vec x = p0;
    for (std::size_t k = 0; k < steps; ++k) {
        const double t = k * dt;
        const Vec u_mid = input.eval(t + 0.5 * dt);
        const Vec u_end = ends_on_break(t + dt) ? u_mid : input.eval(t + dt);
        const Vec k1 = field.ambient_rhs(m, input.eval(t), x);
        const Vec k2 = field.ambient_rhs(m, u_mid, x + 0.5 * dt * k1);
        const Vec k3 = field.ambient_rhs(m, u_mid, x + 0.5 * dt * k2);
        const Vec k4 = field.ambient_rhs(m, u_end, x + dt * k3);
        Vec raw = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!raw.allFinite()) throw DivergedError(t);
        x = m.project_point(raw);
        traj.max_reprojection = std::max(traj.max_reprojection, (x - raw).norm());
        traj.times.push_back((k + 1) * dt);
        traj.points.push_back(x);
    }
    return traj;
}

struct ErrorTrace {
    std::vector<double> times;
    std::vector<Vec> errors;  // components at the reference trajectory point
    Trajectory reference;     // flow of p_ref
    Trajectory other;         // flow of p
};

// Error-vector representation of Phi^t(p) relative to Phi^t(p_ref):
// exp_{Phi^t(p_ref)}(E_t) = Phi^t(p).
inline ErrorTrace error_trace(const Manifold& m, const FlowField& field,
                              const InputSignal& input, const Vec& p_ref, const Vec& p,
                              double horizon, double dt, std::size_t stride = 1) {
    ErrorTrace out;
    out.reference = flow(m, field, input, p_ref, horizon, dt);
    out.other = flow(m, field, input, p, horizon, dt);
    for (std::size_t k = 0; k < out.reference.size(); k += stride) {
        out.times.push_back(out.reference.times[k]);
        out.errors.push_back(m.log(out.reference.points[k], out.other.points[k]));
    }
    return out;
}

// Worst deviation between the sampled trajectory's finite-difference velocity
// and the field, in tangent components. Five-point interior stencils.
inline double velocity_residual(const Manifold& m, const FlowField& field,
                                const InputSignal& input, const Trajectory& traj) {
    if (traj.size() < 5) throw ConfigError("velocity_residual: need at least 5 samples");
    const double h = traj.times[1] - traj.times[0];
    double worst = 0.0;
    for (std::size_t k = 2; k + 2 < traj.size(); ++k) {
        const Vec dot = stencil_d1(traj.points, k, h);
        const Vec& p = traj.points[k];
        Vec fd_comp;
        if (m.kind() == ManifoldKind::LieGroup) {
            fd_comp = m.left_trivialize(p, dot);
        } else {
            fd_comp = m.project_tangent(p, dot);
        }
        const Vec w = field.eval(m, input.eval(traj.times[k]), p);
        worst = std::max(worst, (fd_comp - w).norm());
    }
    return worst;
}

}  // namespace linobs
