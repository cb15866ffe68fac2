#include "apn/ssm.hpp"

#include <doctest.h>

#include <Eigen/Geometry>

#include <filesystem>

using namespace apn;

namespace {

Mat3 random_rotation(Rng& rng) {
    const Vec3 axis = rng.unit_vector();
    return Eigen::AngleAxisd(rng.uniform(-3.0, 3.0), axis).toRotationMatrix();
}

Mesh stretched_sphere(const Vec3& axes) {
    Mesh m = icosphere(2);
    for (auto& v : m.vertices) v = v.cwiseProduct(axes);
    return m;
}

std::vector<Mesh> training_set() {
    std::vector<Mesh> meshes;
    const double stretch[] = {0.0, 4.0, -3.0, 7.0, -6.0, 2.0};
    const double bump[] = {0.5, -1.0, 0.8, 0.2, -0.4, 1.2};
    for (int k = 0; k < 6; ++k) meshes.push_back(stretched_sphere(Vec3(40.0 + stretch[k], 30.0 + bump[k], 25.0)));
    return meshes;
}

}  // namespace

TEST_SUITE("ssm") {

TEST_CASE("procrustes recovers a known similarity") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Vec3> src(30);
        for (auto& p : src) p = Vec3(rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10));
        Similarity t;
        t.scale = rng.uniform(0.5, 2.0);
        t.rotation = random_rotation(rng);
        t.translation = Vec3(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-50, 50));
        const auto dst = t.apply(src);
        const auto fit = procrustes_align(src, dst);
        CHECK(fit.scale == doctest::Approx(t.scale).epsilon(1e-10));
        CHECK((fit.rotation - t.rotation).norm() < 1e-9);
        CHECK((fit.translation - t.translation).norm() < 1e-8);
        CHECK(fit.rotation.determinant() == doctest::Approx(1.0));
        const auto inv = fit.inverse();
        for (std::size_t i = 0; i < src.size(); ++i) CHECK((inv.apply(dst[i]) - src[i]).norm() < 1e-9);
    }
}

TEST_CASE("procrustes returns a proper rotation for mirrored data") {
    std::vector<Vec3> src = {Vec3(1, 0, 0), Vec3(0, 2, 0), Vec3(0, 0, 3), Vec3(1, 1, 1), Vec3(-1, 2, 0.5)};
    std::vector<Vec3> dst = src;
    for (auto& p : dst) p.x() = -p.x();
    CHECK(procrustes_align(src, dst).rotation.determinant() == doctest::Approx(1.0));
}

TEST_CASE("procrustes rejects degenerate inputs") {
    std::vector<Vec3> line = {Vec3(0, 0, 0), Vec3(1, 1, 1), Vec3(2, 2, 2), Vec3(3, 3, 3)};
    CHECK_THROWS_AS(procrustes_align(line, line), Error);
    std::vector<Vec3> few = {Vec3(0, 0, 0)};
    CHECK_THROWS_AS(procrustes_align(few, line), Error);
    Mesh a = icosphere(1), b = icosphere(2);
    CHECK_THROWS_AS(procrustes_align(a, b), Error);
}

TEST_CASE("flatten and unflatten interleave coordinates") {
    const std::vector<Vec3> pts = {Vec3(1, 2, 3), Vec3(4, 5, 6)};
    const auto flat = flatten(pts);
    CHECK(flat.size() == 6);
    CHECK(flat[3] == 4.0);
    CHECK(unflatten(flat) == pts);
    CHECK_THROWS_AS(unflatten(Eigen::VectorXd::Zero(4)), Error);
}

TEST_CASE("shape model spans the training set") {
    const auto meshes = training_set();
    const auto model = fit_ssm(meshes);
    CHECK(model.vertex_count() == meshes[0].size());
    CHECK(model.mode_count() >= 1);
    CHECK(model.mode_count() <= meshes.size() - 1);
    const Eigen::MatrixXd gram = model.modes.transpose() * model.modes;
    CHECK((gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).norm() < 1e-10);
    for (Eigen::Index k = 1; k < model.sigmas.size(); ++k) CHECK(model.sigmas[k] <= model.sigmas[k - 1]);
    // Each aligned training shape is reproduced by projecting onto the modes.
    for (const auto& m : meshes) {
        const auto t = procrustes_align(m, meshes[0]);
        const auto x = flatten(t.apply(std::span<const Vec3>(m.vertices)));
        const Eigen::VectorXd coeffs = model.project(x - model.mean);
        const std::vector<double> c(coeffs.data(), coeffs.data() + coeffs.size());
        const auto rec = sample_shape(model, c);
        CHECK((flatten(rec.vertices) - x).norm() < 1e-8);
    }
    CHECK_THROWS_AS(model.displacement(std::vector<double>(model.mode_count() + 1, 0.0)), Error);
}

TEST_CASE("a single varying axis yields one dominant mode") {
    std::vector<Mesh> meshes;
    for (double s : {-6.0, -2.0, 1.0, 3.0, 5.0}) meshes.push_back(stretched_sphere(Vec3(40.0 + s, 30.0 - 0.5 * s, 25.0)));
    const auto model = fit_ssm(meshes);
    REQUIRE(model.mode_count() >= 1);
    const double total = model.sigmas.squaredNorm();
    CHECK(model.sigmas[0] * model.sigmas[0] / total > 0.99);
}

TEST_CASE("shape model ignores rigid motion of the training meshes") {
    auto meshes = training_set();
    const auto base = fit_ssm(meshes);
    Rng rng(8);
    for (std::size_t k = 1; k < meshes.size(); ++k) {
        Similarity t;
        t.rotation = random_rotation(rng);
        t.translation = Vec3(rng.uniform(-30, 30), rng.uniform(-30, 30), rng.uniform(-30, 30));
        meshes[k].vertices = t.apply(std::span<const Vec3>(meshes[k].vertices));
    }
    const auto moved = fit_ssm(meshes);
    CHECK((moved.mean - base.mean).norm() < 1e-8);
    REQUIRE(moved.mode_count() == base.mode_count());
    CHECK((moved.sigmas - base.sigmas).norm() < 1e-8);
    CHECK((moved.modes - base.modes).norm() < 1e-6);

    // Moving the reference as well moves the mean rigidly.
    Similarity g;
    g.rotation = random_rotation(rng);
    g.translation = Vec3(5, -7, 11);
    for (auto& m : meshes) m.vertices = g.apply(std::span<const Vec3>(m.vertices));
    const auto all = fit_ssm(meshes);
    const auto expect = g.apply(std::span<const Vec3>(base.mean_mesh().vertices));
    CHECK((flatten(expect) - all.mean).norm() < 1e-8);
    CHECK((all.sigmas - base.sigmas).norm() < 1e-8);
}

TEST_CASE("fit_ssm input validation") {
    const auto meshes = training_set();
    CHECK_THROWS_AS(fit_ssm(std::span<const Mesh>(meshes.data(), 1)), Error);
    auto mixed = meshes;
    mixed[2] = icosphere(1);
    CHECK_THROWS_AS(fit_ssm(mixed), Error);
}

TEST_CASE("shape model files round trip") {
    const auto model = fit_ssm(training_set());
    const auto dir = std::filesystem::temp_directory_path() / "apn_test_ssm";
    std::filesystem::create_directories(dir);
    write_shape_model(model, dir / "m");
    const auto back = read_shape_model(dir / "m.ssm.json");
    CHECK(back.topology == model.topology);
    CHECK(back.faces == model.faces);
    CHECK(back.mean == model.mean);
    CHECK(back.modes == model.modes);
    CHECK(back.sigmas == model.sigmas);
    const auto again = read_shape_model(dir / "m");
    CHECK(again.mean == model.mean);
    std::filesystem::remove_all(dir);
}

}
