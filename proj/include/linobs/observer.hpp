#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "linobs/errors.hpp"
#include "linobs/manifold.hpp"
#include "linobs/numerics.hpp"

namespace linobs {

// Reduced attitude: the body-frame gravity direction q = R^T e3. Rotating R
// about gravity leaves q unchanged, so q lives on the sphere quotient.
inline Vec3 quotient_project(const Mat3& r) { return r.transpose() * Vec3::UnitZ(); }

enum class Retraction { Geodesic, Chordal };

inline Retraction retraction_from_string(const std::string& s) {
    if (s == "geodesic") return Retraction::Geodesic;
    if (s == "chordal") return Retraction::Chordal;
    throw ConfigError("unknown retraction '" + s + "' (expected geodesic or chordal)");
}

struct ObserverConfig {
    Vec3 omega{0.3, -0.2, 0.5};     // true body rate, rad/s
    double duration = 20.0;         // s
    double gyro_rate_hz = 100.0;
    double accel_rate_hz = 10.0;
    double gyro_std = 0.01;         // rad/s/sqrt(Hz), filter design value
    double accel_angle_std = 0.02;  // rad, filter design value
    double noise_scale = 1.0;       // scales the injected measurement noise
    double initial_error_rad = M_PI / 3.0;
    Vec3 initial_error_axis{1.0, 0.0, 0.0};
    double initial_variance = 1.2;  // rad^2 per tangent axis
    Retraction retraction = Retraction::Geodesic;
    std::uint64_t seed = 42;
};

struct UpdateDiagnostic {
    double t = 0.0;
    double correction_norm = 0.0;  // |delta q| applied at this update
    double retraction_gap = 0.0;   // distance between the two retraction results
};

// Kalman-style observer for the reduced attitude. The estimate is a unit
// vector; the covariance is kept as a 3x3 ambient matrix with q in its null
// space and all arithmetic happens in a 2D tangent frame.
class AttitudeObserver {
  public:
    AttitudeObserver(const Vec3& q0, double initial_variance,
                     Retraction retraction = Retraction::Geodesic)
        : sphere_(Manifold::sphere2()),
          q_(q0.normalized()),
          p_(initial_variance * tangent_projector()),
          retraction_(retraction) {}

    const Vec3& estimate() const { return q_; }
    const Mat3& covariance() const { return p_; }

    // q' = -omega x q, integrated exactly over the step; process noise enters
    // through the gyro as an isotropic tangent diffusion.
    void propagate(const Vec3& omega_meas, double dt, double gyro_std) {
        const Mat3 f = rodrigues_exp(-dt * omega_meas);
        q_ = (f * q_).normalized();
        p_ = f * p_ * f.transpose() + dt * gyro_std * gyro_std * tangent_projector();
        reproject();
    }

    // Measurement: a noisy copy of q from the accelerometer direction.
    UpdateDiagnostic update(const Vec3& accel_dir, double accel_angle_std, double t = 0.0) {
        const Vec q_meas = accel_dir.normalized();
        const Mat b = sphere_.frame(q_);
        const Eigen::Vector2d innov = b.transpose() * sphere_.log(q_, q_meas);
        const Eigen::Matrix2d p2 = b.transpose() * p_ * b;
        const double r = accel_angle_std * accel_angle_std;
        const Eigen::Matrix2d s = p2 + r * Eigen::Matrix2d::Identity();
        const Eigen::Matrix2d k = p2 * s.inverse();
        const Eigen::Vector2d dq = k * innov;
        const Eigen::Matrix2d ik = Eigen::Matrix2d::Identity() - k;
        const Eigen::Matrix2d p2_post = ik * p2 * ik.transpose() + r * k * k.transpose();

        const Vec3 corr = b * dq;
        const Vec3 q_geo = sphere_.exp(q_, corr);
        const Vec3 q_chord = (q_ + corr).normalized();

        UpdateDiagnostic diag;
        diag.t = t;
        diag.correction_norm = corr.norm();
        diag.retraction_gap = sphere_.distance(q_geo, q_chord);

        const Vec3 q_new = retraction_ == Retraction::Geodesic ? q_geo : q_chord;
        Mat b_new(3, 2);
        const Vec step = sphere_.log(q_, q_new);
        for (int j = 0; j < 2; ++j) {
            b_new.col(j) = sphere_.transport_geodesic(q_, step, b.col(j));
        }
        q_ = q_new;
        p_ = b_new * p2_post * b_new.transpose();
        reproject();
        return diag;
    }

  private:
    Mat3 tangent_projector() const { return Mat3::Identity() - q_ * q_.transpose(); }
    void reproject() {
        const Mat3 pi = tangent_projector();
        p_ = pi * p_ * pi;
        p_ = 0.5 * (p_ + p_.transpose()).eval();
    }

    Manifold sphere_;
    Vec3 q_;
    Mat3 p_;
    Retraction retraction_;
};

struct ObserverRun {
    std::vector<double> times;
    std::vector<Vec3> q_true, q_est, omega_meas;
    std::vector<double> err_angle, p_trace;
    std::vector<UpdateDiagnostic> updates;

    double final_error() const { return err_angle.back(); }

    double rms_error(double from_t) const {
        double acc = 0.0;
        int n = 0;
        for (std::size_t i = 0; i < times.size(); ++i) {
            if (times[i] < from_t) continue;
            acc += err_angle[i] * err_angle[i];
            ++n;
        }
        return n > 0 ? std::sqrt(acc / n) : 0.0;
    }
};

inline double angle_between(const Vec3& a, const Vec3& b) {
    return std::atan2(a.cross(b).norm(), a.dot(b));
}

// Simulates the true reduced attitude under a constant body rate, feeds the
// observer noisy gyro and accelerometer-direction measurements, and records
// the full history. All randomness comes from the seeded generator, so runs
// are reproducible bit for bit.
inline ObserverRun run_observer(const ObserverConfig& cfg) {
    if (cfg.gyro_rate_hz <= 0.0 || cfg.accel_rate_hz <= 0.0) {
        throw ConfigError("observer rates must be positive");
    }
    const double ratio = cfg.gyro_rate_hz / cfg.accel_rate_hz;
    const auto update_every = static_cast<long>(std::llround(ratio));
    if (std::abs(ratio - update_every) > 1e-9 || update_every < 1) {
        throw ConfigError("gyro rate must be an integer multiple of the accel rate");
    }
    const double dt = 1.0 / cfg.gyro_rate_hz;
    const auto steps = static_cast<long>(std::llround(cfg.duration * cfg.gyro_rate_hz));
    if (std::abs(steps * dt - cfg.duration) > 1e-9 || steps < 1) {
        throw ConfigError("duration must be an integer multiple of the gyro period");
    }

    const Manifold sphere = Manifold::sphere2();
    Vec3 q_true = Vec3::UnitZ();
    Vec3 axis = cfg.initial_error_axis - cfg.initial_error_axis.dot(q_true) * q_true;
    if (axis.norm() < 1e-12) throw ConfigError("initial error axis parallel to gravity");
    axis.normalize();
    const Vec3 q0_est = rodrigues_exp(cfg.initial_error_rad * axis) * q_true;

    AttitudeObserver obs(q0_est, cfg.initial_variance, cfg.retraction);
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    // injected per-sample gyro noise std for a density gyro_std
    const double gyro_sample_std = cfg.noise_scale * cfg.gyro_std / std::sqrt(dt);
    const double accel_sample_std = cfg.noise_scale * cfg.accel_angle_std;

    ObserverRun run;
    auto record = [&](double t, const Vec3& w) {
        run.times.push_back(t);
        run.q_true.push_back(q_true);
        run.q_est.push_back(obs.estimate());
        run.omega_meas.push_back(w);
        run.err_angle.push_back(angle_between(q_true, obs.estimate()));
        run.p_trace.push_back(obs.covariance().trace());
    };
    record(0.0, cfg.omega);

    for (long k = 1; k <= steps; ++k) {
        const double t = k * dt;
        q_true = (rodrigues_exp(-dt * cfg.omega) * q_true).normalized();
        Vec3 w = cfg.omega;
        for (int i = 0; i < 3; ++i) w(i) += gyro_sample_std * gauss(rng);
        obs.propagate(w, dt, cfg.gyro_std);
        if (k % update_every == 0) {
            const Mat b = sphere.frame(Vec(q_true));
            const Vec phi = accel_sample_std * (gauss(rng) * b.col(0) + gauss(rng) * b.col(1));
            const Vec3 a = sphere.exp(Vec(q_true), phi);
            run.updates.push_back(obs.update(a, cfg.accel_angle_std, t));
        }
        record(t, w);
    }
    return run;
}

// One row per gyro sample: time, true and estimated gravity direction,
// angular error, covariance trace, measured rate.
inline void write_observer_csv(const ObserverRun& run, std::ostream& out) {
    out << "t,qx_true,qy_true,qz_true,qx_est,qy_est,qz_est,err_angle_rad,p_trace,wx,wy,wz\n";
    char buf[64];
    auto put = [&](double v, char sep) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        out << buf << sep;
    };
    for (std::size_t i = 0; i < run.times.size(); ++i) {
        put(run.times[i], ',');
        for (int j = 0; j < 3; ++j) put(run.q_true[i](j), ',');
        for (int j = 0; j < 3; ++j) put(run.q_est[i](j), ',');
        put(run.err_angle[i], ',');
        put(run.p_trace[i], ',');
        put(run.omega_meas[i](0), ',');
        put(run.omega_meas[i](1), ',');
        put(run.omega_meas[i](2), '\n');
    }
}

}  // namespace linobs
