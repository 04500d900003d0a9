#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "linobs/errors.hpp"
#include "linobs/flow.hpp"
#include "linobs/manifold.hpp"
#include "linobs/observer.hpp"
#include "linobs/verifier.hpp"

namespace linobs {

using Json = nlohmann::json;

inline const std::vector<std::string>& all_check_names() {
    static const std::vector<std::string> names = {
        "exact-linearization", "state-independence", "self-similarity",
        "commutator",          "jacobi",             "preintegration",
        "equivalence",         "curvature-condition", "group-affine",
        "induced-multiplication", "classification",  "observer",
    };
    return names;
}

namespace detail {

inline void require_keys(const Json& j, const std::string& path,
                         std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(path + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : allowed) known = known || it.key() == k;
        if (!known) throw ConfigError(path + ": unknown key '" + it.key() + "'");
    }
}

inline const Json& member(const Json& j, const std::string& path, const char* key) {
    auto it = j.find(key);
    if (it == j.end()) throw ConfigError(path + ": missing required key '" + key + "'");
    return *it;
}

inline double parse_number(const Json& j, const std::string& path) {
    if (!j.is_number()) throw ConfigError(path + ": expected a number");
    return j.get<double>();
}

inline int parse_int(const Json& j, const std::string& path) {
    if (!j.is_number_integer()) throw ConfigError(path + ": expected an integer");
    return j.get<int>();
}

inline std::string parse_string(const Json& j, const std::string& path) {
    if (!j.is_string()) throw ConfigError(path + ": expected a string");
    return j.get<std::string>();
}

inline Vec parse_vec(const Json& j, const std::string& path) {
    if (!j.is_array()) throw ConfigError(path + ": expected an array of numbers");
    Vec v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) {
        v(static_cast<Eigen::Index>(i)) = parse_number(j[i], path + "[" + std::to_string(i) + "]");
    }
    return v;
}

inline Mat parse_mat(const Json& j, const std::string& path) {
    if (!j.is_array() || j.empty()) throw ConfigError(path + ": expected an array of rows");
    const Vec first = parse_vec(j[0], path + "[0]");
    Mat m(j.size(), first.size());
    m.row(0) = first.transpose();
    for (std::size_t i = 1; i < j.size(); ++i) {
        const Vec row = parse_vec(j[i], path + "[" + std::to_string(i) + "]");
        if (row.size() != m.cols()) throw ConfigError(path + ": ragged rows");
        m.row(static_cast<Eigen::Index>(i)) = row.transpose();
    }
    return m;
}

template <typename T>
T value_or(const Json& j, const char* key, T fallback) {
    auto it = j.find(key);
    return it == j.end() ? fallback : it->get<T>();
}

}  // namespace detail

struct ScenarioTolerances {
    double linearization = 1e-5;
    double state_independence = 1e-5;
    double magnitude_ratio = 10.0;
    double self_similarity = 1e-4;
    double commutator = 1e-4;
    double jacobi = 1e-4;
    double preintegration = 1e-4;
    double curvature = 1e-4;
    double curvature_exact = 1e-8;
    double group_affine = 1e-9;
    double automorphism = 1e-8;
    double multiplication = 1e-7;
    double associativity = 1e-6;
    double classification = 1e-6;
    double observer_final_error = 1e-5;
};

struct ScenarioSampling {
    int record_times = 41;
    int error_directions = 4;
    std::vector<double> error_magnitudes = {0.05, 0.1, 0.2, 0.5, 1.0};
    int patch_grid_t = 41;
    int patch_grid_s = 21;
    std::vector<double> t_fit = {0.0, 0.25, 0.5, 0.75};
    int m_max = 1;
    double neighborhood_radius = 0.3;
    int pair_count = 100;
    int triple_count = 50;
};

struct Scenario {
    std::string name;
    std::string description;
    unsigned seed = 1;
    std::optional<Manifold> manifold;
    std::optional<FlowField> system;
    std::vector<InputSignal> inputs;
    double dt = 1e-3;
    double horizon = 1.0;
    std::vector<Vec> base_points;
    ScenarioSampling sampling;
    ScenarioTolerances tol;
    std::map<std::string, bool> expect;  // check name -> expected verdict
    std::optional<ObserverConfig> observer;
    Json raw;

    bool expected_pass(const std::string& check) const {
        auto it = expect.find(check);
        return it == expect.end() ? true : it->second;
    }
};

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// Digest of the canonical (key-sorted) serialization; identical configs hash
// identically regardless of formatting.
inline std::uint64_t scenario_digest(const Scenario& sc) { return fnv1a64(sc.raw.dump()); }

namespace detail {

inline Manifold parse_manifold(const Json& j) {
    require_keys(j, "manifold", {"kind", "dim", "group", "mu"});
    const std::string kind = parse_string(member(j, "manifold", "kind"), "manifold.kind");
    if (kind == "euclidean") {
        return Manifold::euclidean(parse_int(member(j, "manifold", "dim"), "manifold.dim"));
    }
    if (kind == "sphere2") return Manifold::sphere2();
    if (kind == "lie-group") {
        const std::string group = parse_string(member(j, "manifold", "group"), "manifold.group");
        const double mu = value_or(j, "mu", 1.0);
        if (group == "so3") return Manifold::lie_group(GroupId::SO3, mu);
        if (group == "ut3") return Manifold::lie_group(GroupId::UT3, mu);
        throw ConfigError("manifold.group: unknown group '" + group + "'");
    }
    throw ConfigError("manifold.kind: unknown kind '" + kind + "'");
}

inline FlowField parse_system(const Json& j, const Manifold& m) {
    require_keys(j, "system",
                 {"kind", "matrix", "offset", "perturbation", "epsilon", "target", "gain"});
    const std::string kind = parse_string(member(j, "system", "kind"), "system.kind");
    if (kind == "sigma-cross") {
        if (m.kind() != ManifoldKind::Sphere2) throw ConfigError("sigma-cross needs sphere2");
        const Mat s = parse_mat(member(j, "system", "matrix"), "system.matrix");
        const Vec c = j.contains("offset") ? parse_vec(j["offset"], "system.offset")
                                           : Vec(Vec::Zero(3));
        return FlowField::sigma_cross(s, c);
    }
    if (kind == "left-invariant" || kind == "left-invariant-perturbed") {
        if (m.kind() != ManifoldKind::LieGroup) throw ConfigError(kind + " needs a lie-group");
        const Mat l = parse_mat(member(j, "system", "matrix"), "system.matrix");
        const Vec d = j.contains("offset") ? parse_vec(j["offset"], "system.offset")
                                           : Vec(Vec::Zero(3));
        if (kind == "left-invariant") return FlowField::left_invariant(l, d);
        const Mat b = parse_mat(member(j, "system", "perturbation"), "system.perturbation");
        if (b.rows() != 3 || b.cols() != 3) throw ConfigError("system.perturbation: must be 3x3");
        const double eps = parse_number(member(j, "system", "epsilon"), "system.epsilon");
        return FlowField::left_invariant_perturbed(l, d, Mat3(b), eps);
    }
    if (kind == "gradient-like") {
        if (m.kind() != ManifoldKind::Sphere2) throw ConfigError("gradient-like needs sphere2");
        const Vec t = parse_vec(member(j, "system", "target"), "system.target");
        if (t.size() != 3) throw ConfigError("system.target: must be a 3-vector");
        return FlowField::gradient_like(Vec3(t), value_or(j, "gain", 1.0));
    }
    if (kind == "linear") {
        if (m.kind() != ManifoldKind::Euclidean) throw ConfigError("linear needs euclidean");
        return FlowField::linear(parse_mat(member(j, "system", "matrix"), "system.matrix"));
    }
    throw ConfigError("system.kind: unknown kind '" + kind + "'");
}

inline InputSignal parse_input(const Json& j, const std::string& path) {
    require_keys(j, path, {"kind", "value", "amplitude", "frequency_hz", "phase", "offset",
                           "times", "values"});
    const std::string kind = parse_string(member(j, path, "kind"), path + ".kind");
    if (kind == "constant") {
        return InputSignal::constant(parse_vec(member(j, path, "value"), path + ".value"));
    }
    if (kind == "sinusoid") {
        const Vec amp = parse_vec(member(j, path, "amplitude"), path + ".amplitude");
        const Vec freq = parse_vec(member(j, path, "frequency_hz"), path + ".frequency_hz");
        const Vec phase = j.contains("phase") ? parse_vec(j["phase"], path + ".phase")
                                              : Vec(Vec::Zero(amp.size()));
        const Vec offset = j.contains("offset") ? parse_vec(j["offset"], path + ".offset")
                                                : Vec(Vec::Zero(amp.size()));
        return InputSignal::sinusoid(amp, freq, phase, offset);
    }
    if (kind == "piecewise-constant") {
        const Json& jt = member(j, path, "times");
        const Json& jv = member(j, path, "values");
        if (!jt.is_array() || !jv.is_array() || jt.size() != jv.size()) {
            throw ConfigError(path + ": times and values must be arrays of equal length");
        }
        std::vector<double> times;
        std::vector<Vec> values;
        for (std::size_t i = 0; i < jt.size(); ++i) {
            times.push_back(parse_number(jt[i], path + ".times"));
            values.push_back(parse_vec(jv[i], path + ".values"));
        }
        return InputSignal::piecewise_constant(times, values);
    }
    throw ConfigError(path + ".kind: unknown kind '" + kind + "'");
}

inline ObserverConfig parse_observer(const Json& j) {
    require_keys(j, "observer",
                 {"omega", "duration", "gyro_rate_hz", "accel_rate_hz", "gyro_std",
                  "accel_angle_std", "noise_scale", "initial_error_rad", "initial_error_axis",
                  "initial_variance", "retraction", "seed"});
    ObserverConfig cfg;
    if (j.contains("omega")) {
        const Vec w = parse_vec(j["omega"], "observer.omega");
        if (w.size() != 3) throw ConfigError("observer.omega: must be a 3-vector");
        cfg.omega = Vec3(w);
    }
    cfg.duration = value_or(j, "duration", cfg.duration);
    cfg.gyro_rate_hz = value_or(j, "gyro_rate_hz", cfg.gyro_rate_hz);
    cfg.accel_rate_hz = value_or(j, "accel_rate_hz", cfg.accel_rate_hz);
    cfg.gyro_std = value_or(j, "gyro_std", cfg.gyro_std);
    cfg.accel_angle_std = value_or(j, "accel_angle_std", cfg.accel_angle_std);
    cfg.noise_scale = value_or(j, "noise_scale", cfg.noise_scale);
    cfg.initial_error_rad = value_or(j, "initial_error_rad", cfg.initial_error_rad);
    if (j.contains("initial_error_axis")) {
        const Vec a = parse_vec(j["initial_error_axis"], "observer.initial_error_axis");
        if (a.size() != 3) throw ConfigError("observer.initial_error_axis: must be a 3-vector");
        cfg.initial_error_axis = Vec3(a);
    }
    cfg.initial_variance = value_or(j, "initial_variance", cfg.initial_variance);
    if (j.contains("retraction")) {
        cfg.retraction =
            retraction_from_string(parse_string(j["retraction"], "observer.retraction"));
    }
    cfg.seed = value_or<std::uint64_t>(j, "seed", cfg.seed);
    return cfg;
}

inline ScenarioTolerances parse_tolerances(const Json& j) {
    require_keys(j, "tolerances",
                 {"linearization", "state_independence", "magnitude_ratio", "self_similarity",
                  "commutator", "jacobi", "preintegration", "curvature", "curvature_exact",
                  "group_affine", "automorphism", "multiplication", "associativity",
                  "classification", "observer_final_error"});
    ScenarioTolerances t;
    t.linearization = value_or(j, "linearization", t.linearization);
    t.state_independence = value_or(j, "state_independence", t.state_independence);
    t.magnitude_ratio = value_or(j, "magnitude_ratio", t.magnitude_ratio);
    t.self_similarity = value_or(j, "self_similarity", t.self_similarity);
    t.commutator = value_or(j, "commutator", t.commutator);
    t.jacobi = value_or(j, "jacobi", t.jacobi);
    t.preintegration = value_or(j, "preintegration", t.preintegration);
    t.curvature = value_or(j, "curvature", t.curvature);
    t.curvature_exact = value_or(j, "curvature_exact", t.curvature_exact);
    t.group_affine = value_or(j, "group_affine", t.group_affine);
    t.automorphism = value_or(j, "automorphism", t.automorphism);
    t.multiplication = value_or(j, "multiplication", t.multiplication);
    t.associativity = value_or(j, "associativity", t.associativity);
    t.classification = value_or(j, "classification", t.classification);
    t.observer_final_error = value_or(j, "observer_final_error", t.observer_final_error);
    return t;
}

inline ScenarioSampling parse_sampling(const Json& j) {
    require_keys(j, "sampling",
                 {"record_times", "error_directions", "error_magnitudes", "patch_grid_t",
                  "patch_grid_s", "t_fit", "m_max", "neighborhood_radius", "pair_count",
                  "triple_count"});
    ScenarioSampling s;
    s.record_times = value_or(j, "record_times", s.record_times);
    s.error_directions = value_or(j, "error_directions", s.error_directions);
    if (j.contains("error_magnitudes")) {
        const Vec m = parse_vec(j["error_magnitudes"], "sampling.error_magnitudes");
        s.error_magnitudes.assign(m.data(), m.data() + m.size());
    }
    s.patch_grid_t = value_or(j, "patch_grid_t", s.patch_grid_t);
    s.patch_grid_s = value_or(j, "patch_grid_s", s.patch_grid_s);
    if (j.contains("t_fit")) {
        const Vec t = parse_vec(j["t_fit"], "sampling.t_fit");
        s.t_fit.assign(t.data(), t.data() + t.size());
    }
    s.m_max = value_or(j, "m_max", s.m_max);
    s.neighborhood_radius = value_or(j, "neighborhood_radius", s.neighborhood_radius);
    s.pair_count = value_or(j, "pair_count", s.pair_count);
    s.triple_count = value_or(j, "triple_count", s.triple_count);
    return s;
}

inline std::vector<Vec> default_base_points(const Manifold& m, int count, unsigned seed) {
    std::mt19937 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<Vec> pts;
    while (static_cast<int>(pts.size()) < count) {
        Vec p;
        if (m.kind() == ManifoldKind::Sphere2) {
            Vec3 q(gauss(rng), gauss(rng), gauss(rng));
            p = q.normalized();
        } else if (m.kind() == ManifoldKind::Euclidean) {
            p = Vec(m.point_size());
            for (int i = 0; i < p.size(); ++i) p(i) = gauss(rng);
        } else {
            p = random_group_point(m, rng, 1.2);
        }
        // keep every pair comfortably inside the guard radius of its peers
        bool ok = true;
        for (const Vec& q : pts) {
            const double d = m.kind() == ManifoldKind::Euclidean ? 0.5 : m.distance(q, p);
            ok = ok && d > 0.2 && d < 0.6 * m.guard_radius();
        }
        if (ok) pts.push_back(p);
    }
    return pts;
}

}  // namespace detail

inline Scenario parse_scenario(const Json& j) {
    detail::require_keys(j, "scenario",
                         {"name", "description", "seed", "manifold", "system", "inputs",
                          "integration", "sampling", "tolerances", "expect", "observer",
                          "base_points", "base_point_count"});
    Scenario sc;
    sc.raw = j;
    sc.name = detail::parse_string(detail::member(j, "scenario", "name"), "name");
    sc.description = detail::value_or<std::string>(j, "description", "");
    sc.seed = detail::value_or<unsigned>(j, "seed", 1u);

    if (j.contains("manifold")) sc.manifold = detail::parse_manifold(j["manifold"]);

    if (j.contains("system")) {
        if (!sc.manifold) throw ConfigError("scenario: 'system' requires a 'manifold'");
        sc.system = detail::parse_system(j["system"], *sc.manifold);
    }

    if (j.contains("inputs")) {
        const Json& ji = j["inputs"];
        if (!ji.is_array() || ji.empty()) throw ConfigError("inputs: expected a non-empty array");
        for (std::size_t i = 0; i < ji.size(); ++i) {
            sc.inputs.push_back(detail::parse_input(ji[i], "inputs[" + std::to_string(i) + "]"));
        }
    } else if (sc.system) {
        sc.inputs.push_back(InputSignal::constant(Vec::Zero(sc.system->input_dim())));
    }
    for (const InputSignal& u : sc.inputs) {
        if (sc.system && u.dim() != sc.system->input_dim()) {
            throw ConfigError("inputs: dimension does not match the system input dimension");
        }
    }

    if (j.contains("integration")) {
        const Json& ji = j["integration"];
        detail::require_keys(ji, "integration", {"dt", "horizon"});
        sc.dt = detail::value_or(ji, "dt", sc.dt);
        sc.horizon = detail::value_or(ji, "horizon", sc.horizon);
    }
    if (sc.dt <= 0.0 || sc.horizon <= 0.0) throw ConfigError("integration: dt and horizon must be positive");

    if (j.contains("sampling")) sc.sampling = detail::parse_sampling(j["sampling"]);
    if (j.contains("tolerances")) sc.tol = detail::parse_tolerances(j["tolerances"]);

    if (j.contains("base_points")) {
        if (!sc.manifold) throw ConfigError("scenario: 'base_points' requires a 'manifold'");
        const Manifold& m = *sc.manifold;
        const Json& jb = j["base_points"];
        if (!jb.is_array()) throw ConfigError("base_points: expected an array");
        for (std::size_t i = 0; i < jb.size(); ++i) {
            const std::string path = "base_points[" + std::to_string(i) + "]";
            Vec p = detail::parse_vec(jb[i], path);
            if (m.kind() == ManifoldKind::LieGroup && p.size() == m.dim()) {
                p = m.exp(m.identity(), p);  // algebra coordinates
            } else {
                p = m.project_point(p);
            }
            m.validate_point(p);
            sc.base_points.push_back(p);
        }
    } else if (sc.system) {
        const int count = detail::value_or(j, "base_point_count", 5);
        sc.base_points = detail::default_base_points(*sc.manifold, count, sc.seed);
    }

    if (j.contains("expect")) {
        const Json& je = j["expect"];
        if (!je.is_object()) throw ConfigError("expect: expected an object");
        for (auto it = je.begin(); it != je.end(); ++it) {
            const auto& names = all_check_names();
            if (std::find(names.begin(), names.end(), it.key()) == names.end()) {
                throw ConfigError("expect: unknown check '" + it.key() + "'");
            }
            const std::string v = detail::parse_string(*it, "expect." + it.key());
            if (v != "pass" && v != "fail") {
                throw ConfigError("expect." + it.key() + ": expected \"pass\" or \"fail\"");
            }
            sc.expect[it.key()] = v == "pass";
        }
    }

    if (j.contains("observer")) sc.observer = detail::parse_observer(j["observer"]);
    if (!sc.system && !sc.observer) {
        throw ConfigError("scenario: needs a system, an observer section, or both");
    }
    return sc;
}

inline Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open scenario file '" + path + "'");
    Json j;
    try {
        in >> j;
    } catch (const Json::parse_error& e) {
        throw ConfigError("scenario '" + path + "': " + e.what());
    }
    try {
        return parse_scenario(j);
    } catch (ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

}  // namespace linobs
