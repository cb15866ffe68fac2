#pragma once

#include "apn/common.hpp"
#include "apn/mesh.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace apn {

// y = scale * rotation * x + translation
struct Similarity {
    double scale = 1.0;
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 apply(const Vec3& x) const { return scale * (rotation * x) + translation; }
    std::vector<Vec3> apply(std::span<const Vec3> xs) const;
    Similarity inverse() const;
};

// Least-squares similarity mapping src onto dst (Umeyama). Proper rotation.
Similarity procrustes_align(std::span<const Vec3> src, std::span<const Vec3> dst);
Similarity procrustes_align(const Mesh& src, const Mesh& dst);

// Point distribution model over corresponded meshes. Modes are unit-norm
// 3N-vectors (x, y, z interleaved per vertex); sigmas are per-mode standard
// deviations in mm, descending.
struct ShapeModel {
    std::string topology;
    int level = 0;
    std::vector<Face> faces;
    Eigen::VectorXd mean;
    Eigen::MatrixXd modes;
    Eigen::VectorXd sigmas;

    std::size_t vertex_count() const { return static_cast<std::size_t>(mean.size() / 3); }
    std::size_t mode_count() const { return static_cast<std::size_t>(modes.cols()); }
    Mesh mean_mesh() const;

    // Displacement field sum_k coeffs_k * sigma_k * mode_k in the model frame.
    std::vector<Vec3> displacement(std::span<const double> coeffs) const;

    // Coefficients (sigma units) of a residual from the mean; zero-sigma
    // modes get coefficient 0.
    Eigen::VectorXd project(const Eigen::VectorXd& residual) const;
};

ShapeModel fit_ssm(std::span<const Mesh> meshes);

Mesh sample_shape(const ShapeModel& model, std::span<const double> coeffs);

Eigen::VectorXd flatten(std::span<const Vec3> points);
std::vector<Vec3> unflatten(const Eigen::VectorXd& flat);

// `<stem>.ssm.json` header + `<stem>.ssm.raw` float64 payload (mean, then
// each mode in order).
void write_shape_model(const ShapeModel& model, const std::filesystem::path& stem);
ShapeModel read_shape_model(const std::filesystem::path& header_or_stem);

}  // namespace apn
