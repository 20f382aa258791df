#include "manip/kopt.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace manip::kopt {
namespace {

// Tracking weights for (x, y, theta); rotation tracked more loosely than
// translation.
const Vec3 kTrackWeight(1.0, 1.0, 0.3);

std::string describe(const nlp::NlpResult& r) {
    std::string out = r.status == nlp::NlpStatus::Diverged ? "diverged" : "iteration limit";
    if (!r.message.empty()) out += ": " + r.message;
    out += " (eq " + std::to_string(r.max_eq_violation) + ", ineq " +
           std::to_string(r.max_ineq_violation) + ")";
    return out;
}

int pose_offset(int t) { return 3 * t; }
int rate_offset(const Scenario& s, int t) { return 3 * (s.horizon + 1) + 3 * t; }

Pose2 pose_at(const nlp::Vector& x, int t) {
    return Pose2{x[pose_offset(t)], x[pose_offset(t) + 1], x[pose_offset(t) + 2]};
}

}  // namespace

KoptError::KoptError(nlp::NlpResult r)
    : std::runtime_error("kinematic trajectory optimization failed, " + describe(r)),
      result(std::move(r)) {}

std::vector<Pose2> reference_trajectory(const Scenario& scenario) {
    const int T = scenario.horizon;
    const Vec3 a = scenario.q_start.vec(), b = scenario.q_goal.vec();
    std::vector<Pose2> ref;
    ref.reserve(static_cast<size_t>(T) + 1);
    for (int t = 0; t <= T; ++t) {
        ref.push_back(Pose2::from_vec(a + (b - a) * (static_cast<double>(t) / T)));
    }
    return ref;
}

nlp::NlpProblem build_kopt(const Scenario& scenario) {
    const int T = scenario.horizon;
    const int V = static_cast<int>(scenario.object.vertices.size());
    const double h = scenario.step;
    const int n = 3 * (T + 1) + 3 * T;
    const std::vector<Pose2> ref = reference_trajectory(scenario);

    nlp::NlpProblem p;
    p.n = n;
    p.lower.resize(n);
    p.upper.resize(n);
    p.x0.resize(n);
    for (int t = 0; t <= T; ++t) {
        const PoseBounds& b = scenario.bounds_at(t);
        p.lower.segment<3>(pose_offset(t)) = b.lower;
        p.upper.segment<3>(pose_offset(t)) = b.upper;
        p.x0.segment<3>(pose_offset(t)) = ref[static_cast<size_t>(t)].vec();
    }
    for (int t = 0; t < T; ++t) {
        const PoseBounds& b = scenario.bounds_at(t);
        p.lower.segment<3>(rate_offset(scenario, t)) = b.rate_lower;
        p.upper.segment<3>(rate_offset(scenario, t)) = b.rate_upper;
        p.x0.segment<3>(rate_offset(scenario, t)) =
            (ref[static_cast<size_t>(t) + 1].vec() - ref[static_cast<size_t>(t)].vec()) / h;
    }

    p.objective = [T, ref](const nlp::Vector& x) {
        double acc = 0.0;
        for (int t = 0; t <= T; ++t) {
            const Vec3 d = x.segment<3>(pose_offset(t)) - ref[static_cast<size_t>(t)].vec();
            acc += d.cwiseProduct(kTrackWeight).dot(d);
        }
        return acc;
    };
    p.objective_grad = [n, T, ref](const nlp::Vector& x) {
        nlp::Vector g = nlp::Vector::Zero(n);
        for (int t = 0; t <= T; ++t) {
            const Vec3 d = x.segment<3>(pose_offset(t)) - ref[static_cast<size_t>(t)].vec();
            g.segment<3>(pose_offset(t)) = 2.0 * d.cwiseProduct(kTrackWeight);
        }
        return g;
    };

    // Forward-Euler dynamics: q_{t+1} - q_t - h qdot_t = 0.
    const int ro = 3 * (T + 1);
    p.eq_residuals = [T, h, ro](const nlp::Vector& x) {
        nlp::Vector r(3 * T);
        for (int t = 0; t < T; ++t) {
            r.segment<3>(3 * t) = x.segment<3>(pose_offset(t + 1)) - x.segment<3>(pose_offset(t)) -
                                  h * x.segment<3>(ro + 3 * t);
        }
        return r;
    };
    p.eq_jacobian = [n, T, h, ro](const nlp::Vector&) {
        nlp::Matrix j = nlp::Matrix::Zero(3 * T, n);
        for (int t = 0; t < T; ++t) {
            for (int k = 0; k < 3; ++k) {
                j(3 * t + k, pose_offset(t + 1) + k) = 1.0;
                j(3 * t + k, pose_offset(t) + k) = -1.0;
                j(3 * t + k, ro + 3 * t + k) = -h;
            }
        }
        return j;
    };

    // Collision avoidance, one row per vertex per step. The per-halfspace
    // minimum is kept raw; its subgradient kinks are left to the solver's
    // finite differences.
    p.ineq_residuals = [&scenario, T, V](const nlp::Vector& x) {
        nlp::Vector g(static_cast<Eigen::Index>(V) * (T + 1));
        for (int t = 0; t <= T; ++t) {
            const std::vector<double> d = sdf(scenario, pose_at(x, t));
            for (int v = 0; v < V; ++v) g[static_cast<Eigen::Index>(t) * V + v] = d[static_cast<size_t>(v)];
        }
        return g;
    };
    return p;
}

std::vector<Pose2> poses_from_vector(const Scenario& scenario, const nlp::Vector& x) {
    std::vector<Pose2> poses;
    poses.reserve(static_cast<size_t>(scenario.horizon) + 1);
    for (int t = 0; t <= scenario.horizon; ++t) poses.push_back(pose_at(x, t));
    return poses;
}

void extract_contact_maps(const Scenario& scenario, const std::vector<Pose2>& poses,
                          std::vector<std::vector<bool>>& contact_map,
                          std::vector<std::vector<bool>>& slip_map) {
    const int T = static_cast<int>(poses.size()) - 1;
    const int V = static_cast<int>(scenario.object.vertices.size());
    contact_map.assign(static_cast<size_t>(V), std::vector<bool>(static_cast<size_t>(T) + 1, false));
    slip_map.assign(static_cast<size_t>(V), std::vector<bool>(static_cast<size_t>(T) + 1, false));
    for (int t = 0; t <= T; ++t) {
        const std::vector<double> d = sdf(scenario, poses[static_cast<size_t>(t)]);
        for (int v = 0; v < V; ++v) {
            if (std::abs(d[static_cast<size_t>(v)]) > kContactTol) continue;
            contact_map[static_cast<size_t>(v)][static_cast<size_t>(t)] = true;
            // Finite-difference tangential speed along the touched halfspace;
            // backward difference at the final step.
            const int ta = t < T ? t : t - 1;
            const Vec2 before = vertex_world(scenario.object, v, poses[static_cast<size_t>(ta)]);
            const Vec2 after = vertex_world(scenario.object, v, poses[static_cast<size_t>(ta) + 1]);
            const int j = closest_halfspace(scenario, poses[static_cast<size_t>(t)], v);
            const Vec2 tangent = scenario.env.halfspaces[static_cast<size_t>(j)].tangent();
            const double speed = std::abs(tangent.dot(after - before)) / scenario.step;
            slip_map[static_cast<size_t>(v)][static_cast<size_t>(t)] = speed > kSlipTol;
        }
    }
}

KinematicsSolution solve_kopt(const Scenario& scenario) {
    nlp::NlpConfig cfg;
    cfg.feas_tol = 1e-8;
    cfg.opt_tol = 2e-8;
    cfg.max_outer = 60;
    const nlp::NlpResult r = nlp::solve(build_kopt(scenario), cfg);
    if (r.status != nlp::NlpStatus::Converged) throw KoptError(r);

    KinematicsSolution sol;
    sol.poses = poses_from_vector(scenario, r.x);
    for (int t = 0; t < scenario.horizon; ++t) {
        sol.rates.push_back(r.x.segment<3>(rate_offset(scenario, t)));
    }
    extract_contact_maps(scenario, sol.poses, sol.contact_map, sol.slip_map);
    return sol;
}

}  // namespace manip::kopt
