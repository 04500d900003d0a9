#pragma once

#include <chrono>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "linobs/scenario.hpp"
#include "linobs/version.hpp"

namespace linobs {

struct SuiteResult {
    std::string scenario_name;
    std::uint64_t digest = 0;
    std::vector<CheckReport> checks;
    std::map<std::string, bool> expected;
    double wall_time_s = 0.0;

    const CheckReport* find(const std::string& name) const {
        for (const auto& c : checks) {
            if (c.name == name) return &c;
        }
        return nullptr;
    }

    bool meets_expectations() const {
        for (const auto& c : checks) {
            const auto it = expected.find(c.name);
            const bool want = it == expected.end() ? true : it->second;
            if (c.pass != want) return false;
        }
        return true;
    }
};

namespace detail {

inline void merge_detail(std::vector<CheckDetail>& details, const std::string& label,
                         double value) {
    for (auto& d : details) {
        if (d.label == label) {
            d.value = std::max(d.value, value);
            return;
        }
    }
    details.push_back({label, value});
}

inline bool flat_connection(const Manifold& m) {
    if (m.kind() == ManifoldKind::Euclidean) return true;
    if (m.kind() != ManifoldKind::LieGroup) return false;
    const Vec id = m.identity();
    double worst = 0.0;
    for (int i = 0; i < 3; ++i) {
        // repeat an argument so the probe cannot sit in the kernel of R
        const Vec x = Vec::Unit(3, i), y = Vec::Unit(3, (i + 1) % 3);
        worst = std::max(worst, m.curvature(id, x, y, x).norm());
    }
    return worst < 1e-12;
}

// Runs checks for one scenario with memoized intermediates, so dependent
// checks (equivalence, classification) reuse the expensive fits.
class SuiteRunner {
  public:
    SuiteRunner(const Scenario& sc, double tol_scale) : sc_(sc), scale_(tol_scale) {}

    bool applicable(const std::string& name) const {
        if (name == "observer") return sc_.observer.has_value();
        if (!sc_.manifold) return false;
        const Manifold& m = *sc_.manifold;
        const bool sys = sc_.system.has_value();
        const bool multi_base = sc_.base_points.size() >= 2;
        if (name == "exact-linearization" || name == "curvature-condition") return sys;
        if (name == "state-independence" || name == "self-similarity" ||
            name == "commutator" || name == "jacobi" || name == "preintegration" ||
            name == "equivalence") {
            return sys && multi_base;
        }
        if (name == "group-affine") return sys && m.kind() == ManifoldKind::LieGroup;
        if (name == "induced-multiplication") {
            return m.kind() == ManifoldKind::LieGroup && flat_connection(m);
        }
        if (name == "classification") return sys && m.kind() == ManifoldKind::Sphere2;
        throw ConfigError("unknown check '" + name + "'");
    }

    CheckReport run(const std::string& name) {
        auto it = memo_.find(name);
        if (it != memo_.end()) return it->second;
        CheckReport rep;
        if (name == "exact-linearization") rep = exact_linearization();
        else if (name == "state-independence") rep = state_independence();
        else if (name == "self-similarity") rep = self_similarity();
        else if (name == "commutator") rep = commutator();
        else if (name == "jacobi") rep = jacobi();
        else if (name == "preintegration") rep = preintegration();
        else if (name == "equivalence") rep = equivalence();
        else if (name == "curvature-condition") rep = curvature_condition();
        else if (name == "group-affine") rep = group_affine();
        else if (name == "induced-multiplication") rep = multiplication();
        else if (name == "classification") rep = classification();
        else if (name == "observer") rep = observer();
        else throw ConfigError("unknown check '" + name + "'");
        memo_.emplace(name, rep);
        return rep;
    }

  private:
    const std::vector<std::vector<LinearizationRecord>>& records() {
        if (!records_) {
            records_.emplace();
            const Manifold& m = *sc_.manifold;
            for (std::size_t i = 0; i < sc_.inputs.size(); ++i) {
                std::vector<LinearizationRecord> per_base;
                for (std::size_t b = 0; b < sc_.base_points.size(); ++b) {
                    const auto samples = sample_error_vectors(
                        m, sc_.base_points[b], sc_.sampling.error_directions,
                        sc_.sampling.error_magnitudes,
                        sc_.seed + 100 * static_cast<unsigned>(i) + static_cast<unsigned>(b));
                    per_base.push_back(fit_linearization(m, *sc_.system, sc_.inputs[i],
                                                         sc_.base_points[b], samples,
                                                         sc_.horizon, sc_.dt,
                                                         sc_.sampling.record_times));
                }
                records_->push_back(std::move(per_base));
            }
        }
        return *records_;
    }

    const std::vector<PatchGrid>& patches() {
        if (!patches_) {
            patches_.emplace();
            for (const InputSignal& u : sc_.inputs) {
                patches_->push_back(build_patch(*sc_.manifold, *sc_.system, u,
                                                sc_.base_points[0], sc_.base_points[1],
                                                sc_.horizon, sc_.dt, sc_.sampling.patch_grid_t,
                                                sc_.sampling.patch_grid_s));
            }
        }
        return *patches_;
    }

    CheckReport exact_linearization() {
        CheckReport rep;
        rep.name = "exact-linearization";
        rep.tolerance = sc_.tol.linearization * scale_;
        std::map<double, double> by_mag;
        for (const auto& per_base : records()) {
            for (const auto& rec : per_base) {
                rep.max_residual = std::max(rep.max_residual, rec.max_residual);
                rep.sample_count +=
                    static_cast<int>(rec.sample_vectors.size() * rec.times.size());
                for (const auto& [mag, res] : rec.residual_by_magnitude) {
                    auto [it, fresh] = by_mag.try_emplace(mag, res);
                    if (!fresh) it->second = std::max(it->second, res);
                }
            }
        }
        char label[48];
        for (const auto& [mag, res] : by_mag) {
            std::snprintf(label, sizeof(label), "residual-mag-%g", mag);
            rep.details.push_back({label, res});
        }
        if (by_mag.size() >= 2) {
            // compare the largest magnitude against 0.1 (or the smallest present);
            // the floor keeps the ratio meaningful when both sit at solver noise
            const double floor = rep.tolerance / 100.0;
            const double large = by_mag.rbegin()->second;
            auto small_it = by_mag.find(0.1);
            const double small = small_it != by_mag.end() ? small_it->second
                                                          : by_mag.begin()->second;
            rep.details.push_back({"magnitude-ratio",
                                   std::max(large, floor) / std::max(small, floor)});
        }
        rep.pass = rep.max_residual < rep.tolerance;
        return rep;
    }

    CheckReport state_independence() {
        CheckReport rep;
        rep.name = "state-independence";
        rep.tolerance = sc_.tol.state_independence * scale_;
        rep.pass = true;
        for (const auto& per_base : records()) {
            const CheckReport r =
                check_state_independence(*sc_.manifold, per_base, rep.tolerance);
            rep.max_residual = std::max(rep.max_residual, r.max_residual);
            rep.sample_count += r.sample_count;
            rep.pass = rep.pass && r.pass;
        }
        return rep;
    }

    CheckReport self_similarity() {
        CheckReport rep;
        rep.name = "self-similarity";
        rep.tolerance = sc_.tol.self_similarity * scale_;
        rep.pass = true;
        for (std::size_t i = 0; i < sc_.inputs.size(); ++i) {
            const CheckReport r = check_self_similarity(*sc_.manifold, *sc_.system,
                                                        sc_.inputs[i], patches()[i],
                                                        rep.tolerance);
            rep.max_residual = std::max(rep.max_residual, r.max_residual);
            rep.sample_count += r.sample_count;
            rep.pass = rep.pass && r.pass;
        }
        return rep;
    }

    CheckReport commutator() {
        CheckReport rep;
        rep.name = "commutator";
        rep.tolerance = sc_.tol.commutator * scale_;
        for (const PatchGrid& patch : patches()) {
            rep.max_residual =
                std::max(rep.max_residual, patch_commutator_residual(*sc_.manifold, patch));
            rep.sample_count += static_cast<int>((patch.ts.size() - 4) * (patch.ss.size() - 4));
            merge_detail(rep.details, "boundary-residual", patch.boundary_residual);
        }
        rep.pass = rep.max_residual < rep.tolerance;
        return rep;
    }

    CheckReport jacobi() {
        CheckReport rep;
        rep.name = "jacobi";
        rep.tolerance = sc_.tol.jacobi * scale_;
        rep.pass = true;
        for (const PatchGrid& patch : patches()) {
            const CheckReport r = check_jacobi_agreement(*sc_.manifold, patch, rep.tolerance);
            rep.max_residual = std::max(rep.max_residual, r.max_residual);
            rep.sample_count += r.sample_count;
            rep.pass = rep.pass && r.pass;
        }
        return rep;
    }

    CheckReport preintegration() {
        CheckReport rep;
        rep.name = "preintegration";
        rep.tolerance = sc_.tol.preintegration * scale_;
        rep.pass = true;
        for (std::size_t i = 0; i < sc_.inputs.size(); ++i) {
            const PatchGrid& patch = patches()[i];
            PreintegrabilityConfig cfg;
            cfg.affine_radius = sc_.sampling.neighborhood_radius;
            cfg.dt = sc_.dt;
            for (double t : sc_.sampling.t_fit) {
                bool found = false;
                for (std::size_t k = 0; k < patch.ts.size(); ++k) {
                    if (std::abs(patch.ts[k] - t) < 1e-9) {
                        cfg.t_indices.push_back(static_cast<int>(k));
                        found = true;
                        break;
                    }
                }
                if (!found) throw ConfigError("sampling.t_fit: times must lie on the patch grid");
            }
            const CheckReport r = check_preintegrability(*sc_.manifold, *sc_.system,
                                                         sc_.inputs[i], patch, cfg,
                                                         rep.tolerance);
            rep.max_residual = std::max(rep.max_residual, r.max_residual);
            rep.sample_count += r.sample_count;
            rep.pass = rep.pass && r.pass;
            for (const auto& d : r.details) merge_detail(rep.details, d.label, d.value);
        }
        return rep;
    }

    CheckReport equivalence() {
        const bool lin = run("exact-linearization").pass && run("state-independence").pass;
        const bool pre = run("preintegration").pass;
        CheckReport rep = check_equivalence(lin, pre);
        rep.tolerance = 0.5;  // verdicts are 0/1
        return rep;
    }

    CheckReport curvature_condition() {
        const Manifold& m = *sc_.manifold;
        const bool exact = flat_connection(m) ||
                           (m.kind() == ManifoldKind::LieGroup && m.mu() == 1.0);
        const double tol = (exact ? sc_.tol.curvature_exact : sc_.tol.curvature) * scale_;
        CheckReport rep = check_curvature_condition(m, records()[0][0], sc_.sampling.m_max,
                                                    sc_.sampling.triple_count, tol,
                                                    sc_.seed + 7);
        return rep;
    }

    CheckReport group_affine() {
        CheckReport rep;
        rep.name = "group-affine";
        rep.tolerance = sc_.tol.group_affine * scale_;
        rep.pass = true;
        for (const InputSignal& u : sc_.inputs) {
            const CheckReport r = check_group_affine(
                *sc_.manifold, *sc_.system, u, sc_.horizon, sc_.dt, sc_.sampling.pair_count,
                rep.tolerance, sc_.tol.automorphism * scale_, sc_.seed + 11);
            rep.max_residual = std::max(rep.max_residual, r.max_residual);
            rep.sample_count += r.sample_count;
            rep.pass = rep.pass && r.pass;
            for (const auto& d : r.details) merge_detail(rep.details, d.label, d.value);
        }
        return rep;
    }

    CheckReport multiplication() {
        const Manifold& m = *sc_.manifold;
        CheckReport rep;
        rep.name = "induced-multiplication";
        rep.tolerance = sc_.tol.multiplication * scale_;
        std::mt19937 rng(sc_.seed + 17);
        for (int i = 0; i < sc_.sampling.pair_count; ++i) {
            const Vec g = random_group_point(m, rng, 1.5);
            const Vec h = random_group_point(m, rng, 1.5);
            const double r = (induced_multiplication(m, g, h) - m.compose(g, h)).norm();
            rep.max_residual = std::max(rep.max_residual, r);
            ++rep.sample_count;
        }
        double assoc = 0.0;
        for (int i = 0; i < sc_.sampling.triple_count; ++i) {
            const Vec g = random_group_point(m, rng, 1.0);
            const Vec h = random_group_point(m, rng, 1.0);
            const Vec k = random_group_point(m, rng, 1.0);
            const Vec left = induced_multiplication(m, induced_multiplication(m, g, h), k);
            const Vec right = induced_multiplication(m, g, induced_multiplication(m, h, k));
            assoc = std::max(assoc, (left - right).norm());
            ++rep.sample_count;
        }
        rep.details.push_back({"associativity", assoc});
        rep.pass = rep.max_residual < rep.tolerance && assoc < sc_.tol.associativity * scale_;
        return rep;
    }

    CheckReport classification() {
        CheckReport rep;
        rep.name = "classification";
        rep.tolerance = sc_.tol.classification * scale_;
        std::vector<Vec> u_samples;
        for (const InputSignal& u : sc_.inputs) {
            for (int k = 0; k <= 4; ++k) u_samples.push_back(u.eval(k * sc_.horizon / 4.0));
        }
        const SigmaCrossFit fit =
            fit_sigma_cross(*sc_.manifold, *sc_.system, u_samples, 24, sc_.seed + 5);
        const bool good_fit = fit.max_residual < rep.tolerance;
        const bool core = run("exact-linearization").pass && run("state-independence").pass &&
                          run("self-similarity").pass && run("preintegration").pass;
        rep.max_residual = fit.max_residual;
        rep.sample_count = static_cast<int>(u_samples.size());
        rep.details.push_back({"fit-verdict", good_fit ? 1.0 : 0.0});
        rep.details.push_back({"core-verdict", core ? 1.0 : 0.0});
        rep.pass = good_fit == core;
        return rep;
    }

    CheckReport observer() {
        CheckReport rep;
        rep.name = "observer";
        rep.tolerance = sc_.tol.observer_final_error * scale_;
        const ObserverRun run = run_observer(*sc_.observer);
        double gap_ratio = 0.0;
        for (const UpdateDiagnostic& d : run.updates) {
            const double bound = std::max(d.correction_norm * d.correction_norm, 1e-13);
            gap_ratio = std::max(gap_ratio, d.retraction_gap / bound);
        }
        rep.max_residual = run.final_error();
        rep.sample_count = static_cast<int>(run.times.size());
        rep.details.push_back({"final-error", run.final_error()});
        rep.details.push_back({"rms-steady-state", run.rms_error(sc_.observer->duration / 2.0)});
        rep.details.push_back({"retraction-gap-ratio", gap_ratio});
        rep.pass = run.final_error() < rep.tolerance && gap_ratio < 1.0;
        return rep;
    }

    const Scenario& sc_;
    double scale_;
    std::optional<std::vector<std::vector<LinearizationRecord>>> records_;
    std::optional<std::vector<PatchGrid>> patches_;
    std::map<std::string, CheckReport> memo_;
};

}  // namespace detail

// Runs the requested checks (all applicable ones when `which` is empty) and
// collects one report per check.
inline SuiteResult run_suite(const Scenario& sc, const std::vector<std::string>& which = {},
                             double tol_scale = 1.0) {
    const auto start = std::chrono::steady_clock::now();
    detail::SuiteRunner runner(sc, tol_scale);

    std::vector<std::string> selected;
    if (which.empty()) {
        for (const std::string& name : all_check_names()) {
            if (runner.applicable(name)) selected.push_back(name);
        }
    } else {
        for (const std::string& name : which) {
            const auto& names = all_check_names();
            if (std::find(names.begin(), names.end(), name) == names.end()) {
                throw ConfigError("unknown check '" + name + "'");
            }
            if (!runner.applicable(name)) {
                throw ConfigError("check '" + name + "' does not apply to scenario '" +
                                  sc.name + "'");
            }
            selected.push_back(name);
        }
    }

    SuiteResult result;
    result.scenario_name = sc.name;
    result.digest = scenario_digest(sc);
    result.expected = sc.expect;
    for (const std::string& name : selected) result.checks.push_back(runner.run(name));
    result.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

inline Json suite_to_json(const SuiteResult& r) {
    Json checks = Json::array();
    for (const CheckReport& c : r.checks) {
        const auto it = r.expected.find(c.name);
        const bool want = it == r.expected.end() ? true : it->second;
        Json jc{{"name", c.name},
                {"status", c.pass ? "pass" : "fail"},
                {"expected", want ? "pass" : "fail"},
                {"max_residual", c.max_residual},
                {"tolerance", c.tolerance},
                {"sample_count", c.sample_count}};
        if (c.truncation_order) jc["truncation_order"] = *c.truncation_order;
        Json details = Json::object();
        for (const CheckDetail& d : c.details) details[d.label] = d.value;
        jc["details"] = details;
        checks.push_back(jc);
    }
    char digest[32];
    std::snprintf(digest, sizeof(digest), "%016llx",
                  static_cast<unsigned long long>(r.digest));
    return Json{{"version", kVersion},
                {"scenario", r.scenario_name},
                {"scenario_digest", digest},
                {"checks", checks},
                {"wall_time_s", r.wall_time_s},
                {"meets_expectations", r.meets_expectations()}};
}

}  // namespace linobs
