#include "apn/oracle.hpp"

#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <Eigen/SparseCholesky>

#include <cmath>

namespace apn {

std::string to_string(ActionMode mode) { return mode == ActionMode::normal ? "normal" : "general"; }

ActionMode parse_action_mode(const std::string& name) {
    if (name == "normal") return ActionMode::normal;
    if (name == "general") return ActionMode::general;
    throw Error("unknown action mode: " + name);
}

Mat3 rotation_from_axis_angle(const Vec3& axis_angle) {
    const double angle = axis_angle.norm();
    if (angle < 1e-300) return Mat3::Identity();
    return Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix();
}

Vec3 axis_angle_from_rotation(const Mat3& rotation) {
    const Eigen::AngleAxisd aa(rotation);
    return aa.angle() * aa.axis();
}

Mat3 GlobalTransform::linear() const {
    return rotation_from_axis_angle(rotation) * log_scale.array().exp().matrix().asDiagonal();
}

std::vector<Vec3> GlobalTransform::apply(std::span<const Vec3> xs, const Vec3& center) const {
    const Mat3 lin = linear();
    std::vector<Vec3> out;
    out.reserve(xs.size());
    for (const auto& x : xs) out.push_back(center + translation + lin * (x - center));
    return out;
}

GlobalTransform fit_global_transform(std::span<const Vec3> src, std::span<const Vec3> dst, int iterations) {
    if (src.size() != dst.size() || src.size() < 3) throw Error("fit_global_transform: need >= 3 corresponded points");
    const auto n = src.size();
    Vec3 cs = Vec3::Zero();
    Vec3 cd = Vec3::Zero();
    for (std::size_t i = 0; i < n; ++i) {
        cs += src[i];
        cd += dst[i];
    }
    cs /= static_cast<double>(n);
    cd /= static_cast<double>(n);
    Eigen::Matrix3Xd x(3, static_cast<Eigen::Index>(n));
    Eigen::Matrix3Xd y(3, static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        x.col(static_cast<Eigen::Index>(i)) = src[i] - cs;
        y.col(static_cast<Eigen::Index>(i)) = dst[i] - cd;
    }
    const Vec3 xx = x.rowwise().squaredNorm();
    Vec3 scale = Vec3::Ones();
    Mat3 rot = Mat3::Identity();
    for (int it = 0; it < iterations; ++it) {
        // Rotation for fixed scale: Kabsch on (S x) -> y.
        const Mat3 cov = y * (scale.asDiagonal() * x).transpose();
        Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
        Mat3 d = Mat3::Identity();
        if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
        rot = svd.matrixU() * d * svd.matrixV().transpose();
        // Per-axis scale for fixed rotation.
        const Eigen::Matrix3Xd ry = rot.transpose() * y;
        Vec3 next;
        for (int k = 0; k < 3; ++k) {
            const double num = ry.row(k).dot(x.row(k));
            next[k] = xx[k] > 1e-300 ? std::max(num / xx[k], 1e-6) : 1.0;
        }
        const bool converged = (next - scale).cwiseAbs().maxCoeff() < 1e-13;
        scale = next;
        if (converged) break;
    }
    GlobalTransform t;
    t.translation = cd - cs;
    t.rotation = axis_angle_from_rotation(rot);
    t.log_scale = scale.array().log().matrix();
    return t;
}

ActionField ActionField::zeros(ActionMode mode, std::size_t n) {
    ActionField f;
    f.mode = mode;
    f.values = RowMatrix::Zero(static_cast<Eigen::Index>(n), action_width(mode));
    return f;
}

double ActionField::max_magnitude() const {
    return values.rows() == 0 ? 0.0 : values.rowwise().norm().maxCoeff();
}

double ActionField::mean_magnitude() const {
    return values.rows() == 0 ? 0.0 : values.rowwise().norm().mean();
}

std::vector<Vec3> apply_action(std::span<const Vec3> vertices, std::span<const Vec3> normals, const ActionField& field) {
    if (field.size() != vertices.size()) throw Error("apply_action: field size does not match vertex count");
    std::vector<Vec3> out(vertices.begin(), vertices.end());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        if (field.mode == ActionMode::normal) {
            if (normals.size() != vertices.size()) throw Error("apply_action: normals required in normal mode");
            out[i] += field.values(row, 0) * normals[i];
        } else {
            out[i] += field.values.row(row).transpose();
        }
    }
    return out;
}

Eigen::SparseMatrix<double> smoothness_laplacian(const Mesh& mesh) {
    const auto nbrs = vertex_neighbors(mesh);
    const auto n = static_cast<Eigen::Index>(mesh.vertices.size());
    std::vector<Eigen::Triplet<double>> triplets;
    std::vector<double> diag(mesh.vertices.size(), 0.0);
    for (const auto& e : mesh_edges(mesh)) {
        const double w = 1.0 / static_cast<double>(nbrs[e.a].size()) + 1.0 / static_cast<double>(nbrs[e.b].size());
        triplets.emplace_back(e.a, e.b, -w);
        triplets.emplace_back(e.b, e.a, -w);
        diag[e.a] += w;
        diag[e.b] += w;
    }
    for (Eigen::Index i = 0; i < n; ++i) triplets.emplace_back(i, i, diag[static_cast<std::size_t>(i)]);
    Eigen::SparseMatrix<double> lap(n, n);
    lap.setFromTriplets(triplets.begin(), triplets.end());
    return lap;
}

double smoothness_penalty(const ActionField& field, const std::vector<std::vector<int>>& neighbors) {
    if (neighbors.size() != field.size()) throw Error("smoothness_penalty: field does not match mesh vertex count");
    double total = 0.0;
    for (std::size_t i = 0; i < neighbors.size(); ++i) {
        if (neighbors[i].empty()) continue;
        double local = 0.0;
        for (int j : neighbors[i]) local += (field.values.row(static_cast<Eigen::Index>(i)) - field.values.row(j)).squaredNorm();
        total += local / static_cast<double>(neighbors[i].size());
    }
    return total;
}

double smoothness_penalty(const ActionField& field, const Mesh& mesh) { return smoothness_penalty(field, vertex_neighbors(mesh)); }

ActionField ideal_action(const Mesh& estimate, const Mesh& truth, double lambda, const ApertureConfig& cfg) {
    const auto normals = vertex_normals(estimate);
    const SurfaceQuery query(truth);
    OracleOptions options;
    options.lambda = lambda;
    return ideal_action(estimate, normals, query, cfg, options);
}

ActionField ideal_action(const Mesh& estimate, std::span<const Vec3> normals, const SurfaceQuery& truth, const ApertureConfig& cfg,
                         const OracleOptions& options) {
    if (options.lambda < 0.0) throw Error("ideal_action: lambda must be >= 0");
    if (normals.size() != estimate.vertices.size()) throw Error("ideal_action: normal count mismatch");
    const ActionMode mode = options.mode.value_or(action_mode_for(cfg));
    const auto n = estimate.vertices.size();
    ActionField field = ActionField::zeros(mode, n);

    std::optional<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>> solver;
    if (options.lambda > 0.0) {
        Eigen::SparseMatrix<double> system = smoothness_laplacian(estimate) * options.lambda;
        for (Eigen::Index i = 0; i < system.rows(); ++i) system.coeffRef(i, i) += 1.0;
        solver.emplace(system);
        if (solver->info() != Eigen::Success) throw Error("ideal_action: factorization failed");
    }

    RowMatrix data(static_cast<Eigen::Index>(n), action_width(mode));
    for (int pass = 0; pass <= options.refreezes; ++pass) {
        const auto moved = apply_action(estimate.vertices, normals, field);
        for (std::size_t i = 0; i < n; ++i) {
            const Vec3 target = truth.closest(moved[i]).point;
            const Vec3 d = target - estimate.vertices[i];
            const auto row = static_cast<Eigen::Index>(i);
            if (mode == ActionMode::normal) {
                data(row, 0) = d.dot(normals[i]);
            } else {
                data.row(row) = d.transpose();
            }
        }
        if (solver) {
            for (Eigen::Index c = 0; c < data.cols(); ++c) {
                const Eigen::VectorXd rhs = data.col(c);
                field.values.col(c) = solver->solve(rhs);
            }
        } else {
            field.values = data;
        }
    }

    for (Eigen::Index i = 0; i < field.values.rows(); ++i) {
        const double mag = field.values.row(i).norm();
        if (mag > cfg.beta) field.values.row(i) *= cfg.beta / mag;
    }
    return field;
}

double reward(const ActionField& a_star, const ActionField& a_tilde, std::span<const Vec3> deformed_vertices,
              std::span<const Vec3> truth_vertices, double lambda_h) {
    if (a_star.mode != a_tilde.mode) throw Error("reward: action modes differ");
    if (a_star.values.rows() != a_tilde.values.rows() || a_star.values.cols() != a_tilde.values.cols()) {
        throw Error("reward: action fields differ in size");
    }
    if (lambda_h < 0.0) throw Error("reward: lambda_h must be >= 0");
    const double action_term = (a_star.values - a_tilde.values).squaredNorm();
    const double h = lambda_h > 0.0 ? hausdorff(deformed_vertices, truth_vertices) : 0.0;
    return -action_term - lambda_h * h;
}

double q_value(double r, double gamma, double future_max) { return r + gamma * future_max; }

}  // namespace apn
