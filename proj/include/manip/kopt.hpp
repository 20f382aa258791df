#pragma once

#include <stdexcept>
#include <vector>

#include "manip/nlp.hpp"
#include "manip/pose.hpp"
#include "manip/scene.hpp"

namespace manip::kopt {

/// |sdf| below this marks a vertex as an extrinsic contact (meters).
inline constexpr double kContactTol = 1e-4;
/// Tangential vertex speed above this marks a contact as slipping (m/s).
inline constexpr double kSlipTol = 1e-4;

struct KinematicsSolution {
    std::vector<Pose2> poses;                     // t = 0..T
    std::vector<Vec3> rates;                      // t = 0..T-1
    std::vector<std::vector<bool>> contact_map;   // A[v][t]: vertex touches env
    std::vector<std::vector<bool>> slip_map;      // B[v][t]: touching and sliding
};

struct KoptError : std::runtime_error {
    nlp::NlpResult result;
    explicit KoptError(nlp::NlpResult r);
};

/// Linear interpolation q_start -> q_goal over the horizon, the tracking
/// reference for the objective and the initial guess.
std::vector<Pose2> reference_trajectory(const Scenario& scenario);

/// Pose-trajectory NLP: decision vector [q_0..q_T, qdot_0..qdot_{T-1}];
/// quadratic tracking of the reference, forward-Euler dynamics equalities,
/// per-step pose and rate boxes, and per-vertex sdf >= 0 inequalities.
/// The sdf rows borrow the scenario; it must outlive the problem.
nlp::NlpProblem build_kopt(const Scenario& scenario);

std::vector<Pose2> poses_from_vector(const Scenario& scenario, const nlp::Vector& x);

/// A[v][t] flags vertices within kContactTol of the environment; B[v][t]
/// additionally requires tangential speed above kSlipTol, measured by finite
/// differences of the vertex world position along the touched halfspace.
void extract_contact_maps(const Scenario& scenario, const std::vector<Pose2>& poses,
                          std::vector<std::vector<bool>>& contact_map,
                          std::vector<std::vector<bool>>& slip_map);

/// Runs the NLP and extracts the contact and slip maps. Throws KoptError
/// (carrying the NlpResult) when the NLP does not converge.
KinematicsSolution solve_kopt(const Scenario& scenario);

}  // namespace manip::kopt
