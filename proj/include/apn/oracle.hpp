#pragma once

#include "apn/aperture.hpp"
#include "apn/common.hpp"
#include "apn/mesh.hpp"

#include <Eigen/SparseCore>

#include <optional>
#include <span>
#include <string>

namespace apn {

// normal: one signed magnitude per vertex along its normal (alpha = 0).
// general: one translation vector per vertex.
enum class ActionMode { normal, general };

inline int action_width(ActionMode mode) { return mode == ActionMode::normal ? 1 : 3; }
inline ActionMode action_mode_for(const ApertureConfig& cfg) { return cfg.alpha == 0.0 ? ActionMode::normal : ActionMode::general; }
std::string to_string(ActionMode mode);
ActionMode parse_action_mode(const std::string& name);

// Axis-aligned scaling, then rotation, then translation, all about a center:
// x' = center + translation + R(rotation) * diag(exp(log_scale)) * (x - center)
struct GlobalTransform {
    Vec3 translation = Vec3::Zero();  // mm
    Vec3 rotation = Vec3::Zero();     // axis-angle, radians
    Vec3 log_scale = Vec3::Zero();

    Mat3 linear() const;
    Vec3 apply(const Vec3& x, const Vec3& center) const { return center + translation + linear() * (x - center); }
    std::vector<Vec3> apply(std::span<const Vec3> xs, const Vec3& center) const;
    GlobalTransform translation_only() const { return {translation, Vec3::Zero(), Vec3::Zero()}; }
};

Mat3 rotation_from_axis_angle(const Vec3& axis_angle);
Vec3 axis_angle_from_rotation(const Mat3& rotation);

// Least-squares fit of a GlobalTransform (about the centroid of src) mapping
// corresponded points src onto dst. Alternates rotation (Kabsch) and per-axis
// scale updates.
GlobalTransform fit_global_transform(std::span<const Vec3> src, std::span<const Vec3> dst, int iterations = 50);

// Per-vertex action A = [A_1 .. A_N] with an optional global part.
struct ActionField {
    ActionMode mode = ActionMode::normal;
    RowMatrix values;  // N x action_width(mode)
    std::optional<GlobalTransform> global;

    std::size_t size() const { return static_cast<std::size_t>(values.rows()); }
    static ActionField zeros(ActionMode mode, std::size_t n);
    // Largest per-vertex magnitude (|a_i| or ||a_i||).
    double max_magnitude() const;
    double mean_magnitude() const;
};

// Moves each vertex by its action (along its normal in normal mode).
std::vector<Vec3> apply_action(std::span<const Vec3> vertices, std::span<const Vec3> normals, const ActionField& field);

// Weighted graph Laplacian L with edge weights 1/|nbr(i)| + 1/|nbr(j)|, so
// that a^T L a equals the smoothness penalty of a scalar field a.
Eigen::SparseMatrix<double> smoothness_laplacian(const Mesh& mesh);

// sum_i sum_{j in nbr(i)} ||a_i - a_j||^2 / |nbr(i)|
double smoothness_penalty(const ActionField& field, const Mesh& mesh);
double smoothness_penalty(const ActionField& field, const std::vector<std::vector<int>>& neighbors);

struct OracleOptions {
    double lambda = 1.0;
    int refreezes = 0;  // extra closest-point refreeze + solve passes
    std::optional<ActionMode> mode;  // defaults to action_mode_for(cfg)
};

// Ideal action A* moving `estimate` onto the surface of `truth`: closest
// points are frozen, the damped system (I + lambda L) a = d is solved, the
// closest points are refrozen at the moved positions, and the result is
// clamped to the aperture range beta.
ActionField ideal_action(const Mesh& estimate, const Mesh& truth, double lambda, const ApertureConfig& cfg);
ActionField ideal_action(const Mesh& estimate, std::span<const Vec3> normals, const SurfaceQuery& truth, const ApertureConfig& cfg,
                         const OracleOptions& options);

// r = -||A* - A~||_F^2 - lambda_h * H(deformed, truth)
double reward(const ActionField& a_star, const ActionField& a_tilde, std::span<const Vec3> deformed_vertices,
              std::span<const Vec3> truth_vertices, double lambda_h);

// Q = r + gamma * future_max. Training uses future_max = 0 because an ideal
// action always exists, which makes Q = r.
double q_value(double r, double gamma, double future_max = 0.0);

}  // namespace apn
