#include "apn/aperture.hpp"
#include "apn/io.hpp"

#include <doctest.h>

#include <Eigen/Geometry>

#include <cmath>
#include <filesystem>

using namespace apn;

namespace {

// Affine intensity field sampled on a grid; trilinear reads it back exactly
// up to float rounding.
Volume linear_volume(const Vec3& grad, double offset, double spacing = 2.0) {
    Volume vol(Grid::centered({64, 64, 64}, Vec3::Constant(spacing)));
    for (int k = 0; k < 64; ++k) {
        for (int j = 0; j < 64; ++j) {
            for (int i = 0; i < 64; ++i) vol.at(i, j, k) = static_cast<float>(offset + grad.dot(vol.grid.to_world(Vec3(i, j, k))));
        }
    }
    return vol;
}

// Sample positions built by rotating the axis instead of mixing the frame.
std::vector<Vec3> reference_offsets(const LocalFrame& f, const ApertureConfig& cfg) {
    std::vector<Vec3> out;
    for (int side = 0; side < (cfg.two_sided ? 2 : 1); ++side) {
        const Vec3 axis = side == 0 ? f.e1 : Vec3(-f.e1);
        for (int k = 1; k <= cfg.n_depth; ++k) {
            const double t = cfg.beta * k / cfg.n_depth;
            out.push_back(t * axis);
            for (int r = 1; r <= cfg.n_ring; ++r) {
                for (int j = 0; j < cfg.n_azimuth; ++j) {
                    const double phi = 2.0 * std::numbers::pi * j / cfg.n_azimuth;
                    const Vec3 radial = std::cos(phi) * f.e2 + std::sin(phi) * f.e3;
                    const Vec3 hinge = axis.cross(radial).normalized();
                    const double theta = cfg.alpha * r / cfg.n_ring;
                    out.push_back(t * (Eigen::AngleAxisd(theta, hinge) * axis));
                }
            }
        }
    }
    return out;
}

Mesh ellipsoid_mesh() {
    Mesh m = icosphere(2);
    for (auto& v : m.vertices) v = v.cwiseProduct(Vec3(30.0, 22.0, 26.0)) + Vec3(3.0, -2.0, 1.0);
    return m;
}

}  // namespace

TEST_SUITE("aperture") {

TEST_CASE("config validation and sizes") {
    ApertureConfig cfg;
    CHECK(cfg.samples_per_side() == 8 * 9);
    CHECK(cfg.state_width() == 18 + 72);
    cfg.two_sided = true;
    CHECK(cfg.sample_count() == 144);
    cfg.alpha = std::numbers::pi / 2.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = ApertureConfig{};
    cfg.alpha = 0.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = ApertureConfig::degenerate(10.0, 5);
    cfg.validate();
    CHECK(cfg.sample_count() == 5);
    cfg.beta = 0.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("cone boundary vectors have length beta and angle alpha") {
    Rng rng(4);
    for (int n = 0; n < 50; ++n) {
        ApertureConfig cfg;
        cfg.alpha = rng.uniform(0.0, 1.5);
        cfg.beta = rng.uniform(1.0, 50.0);
        const auto frame = local_frame(rng.unit_vector());
        const auto psi = cone_boundary(Vec3::Zero(), frame, cfg);
        for (int j = 0; j < 4; ++j) {
            CHECK(psi[j].norm() == doctest::Approx(cfg.beta));
            CHECK(std::acos(std::clamp(psi[j].normalized().dot(frame.e1), -1.0, 1.0)) == doctest::Approx(cfg.alpha).epsilon(1e-9));
        }
        // Azimuths are 90 degrees apart: opposite pairs are mirror images about e1.
        CHECK((psi[0] + psi[2] - 2.0 * cfg.beta * std::cos(cfg.alpha) * frame.e1).norm() < 1e-9);
        CHECK(psi[0].dot(frame.e2) >= 0.0);
        CHECK(psi[1].dot(frame.e3) >= 0.0);
    }
}

TEST_CASE("sample offsets match the rotated-axis construction") {
    Rng rng(6);
    for (bool two : {false, true}) {
        ApertureConfig cfg;
        cfg.alpha = 0.4;
        cfg.beta = 15.0;
        cfg.n_depth = 5;
        cfg.n_ring = 3;
        cfg.n_azimuth = 6;
        cfg.two_sided = two;
        const auto frame = local_frame(rng.unit_vector());
        const auto got = aperture_offsets(frame, cfg);
        const auto ref = reference_offsets(frame, cfg);
        REQUIRE(got.size() == static_cast<std::size_t>(cfg.sample_count()));
        REQUIRE(ref.size() == got.size());
        for (std::size_t i = 0; i < got.size(); ++i) CHECK((got[i] - ref[i]).norm() < 1e-9);
    }
}

TEST_CASE("alpha zero samples only along the normal") {
    const auto mesh = ellipsoid_mesh();
    const auto vol = linear_volume(Vec3(0.3, -0.2, 0.5), 10.0);
    auto cfg = ApertureConfig::degenerate(12.0, 6);
    const auto feats = sample_aperture(vol, mesh, cfg);
    REQUIRE(feats.theta.cols() == 6);
    const auto normals = vertex_normals(mesh);
    for (std::size_t i = 0; i < mesh.size(); ++i) {
        for (int k = 1; k <= 6; ++k) {
            const Vec3 p = mesh.vertices[i] + 2.0 * k * normals[i];
            CHECK(feats.theta(static_cast<Eigen::Index>(i), k - 1) == doctest::Approx(10.0 + Vec3(0.3, -0.2, 0.5).dot(p)).epsilon(1e-5));
        }
        for (int j = 0; j < 4; ++j) CHECK((feats.boundary.block<1, 3>(static_cast<Eigen::Index>(i), 3 * j).transpose() - 12.0 * normals[i]).norm() < 1e-12);
    }
}

TEST_CASE("gray values agree with direct trilinear reads") {
    const auto mesh = ellipsoid_mesh();
    Volume vol(Grid::centered({48, 48, 48}, Vec3::Constant(2.0)));
    Rng rng(1);
    for (auto& x : vol.data) x = static_cast<float>(rng.uniform(0.0, 100.0));
    ApertureConfig cfg;
    cfg.two_sided = true;
    const auto feats = sample_aperture(vol, mesh, cfg, 3);
    const auto normals = vertex_normals(mesh);
    for (std::size_t i = 0; i < mesh.size(); i += 7) {
        const auto ref = reference_offsets(local_frame(normals[i]), cfg);
        for (std::size_t s = 0; s < ref.size(); ++s) {
            CHECK(feats.theta(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(s)) ==
                  doctest::Approx(sample_trilinear(vol, mesh.vertices[i] + ref[s])).epsilon(1e-9));
        }
    }
    CHECK_THROWS_AS(sample_aperture(vol, mesh, std::vector<Vec3>(3, Vec3::UnitX()), cfg), Error);
}

TEST_CASE("sampling does not depend on the thread count") {
    const auto mesh = ellipsoid_mesh();
    const auto vol = linear_volume(Vec3(1.0, 0.5, -0.25), 0.0);
    ApertureConfig cfg;
    const auto a = sample_aperture(vol, mesh, cfg, 1);
    const auto b = sample_aperture(vol, mesh, cfg, 4);
    CHECK(a.theta == b.theta);
    CHECK(a.boundary == b.boundary);
}

TEST_CASE("state normalization removes translation and scale") {
    const auto mesh = ellipsoid_mesh();
    const Vec3 grad(0.3, -0.2, 0.5);
    ApertureConfig cfg;
    cfg.intensity_center = 20.0;
    cfg.intensity_scale = 4.0;
    const auto state = assemble_state(mesh, sample_aperture(linear_volume(grad, 10.0), mesh, cfg));
    CHECK(state.radius > 0.0);
    double max_r = 0.0;
    for (Eigen::Index i = 0; i < state.rows.rows(); ++i) max_r = std::max(max_r, state.rows.block<1, 3>(i, 0).norm());
    CHECK(max_r == doctest::Approx(1.0));
    CHECK(state.rows.leftCols<3>().colwise().sum().norm() < 1e-10);

    // Scaling the mesh, the aperture length and the image coordinates by s
    // leaves positions and boundary rows unchanged. A power of two keeps the
    // normals bitwise equal, so the frame axis choice cannot flip.
    const double s = 2.0;
    Mesh big = mesh;
    for (auto& v : big.vertices) v *= s;
    ApertureConfig big_cfg = cfg;
    big_cfg.beta *= s;
    Volume big_vol = linear_volume(grad / s, 10.0, 2.0 * s);
    const auto big_state = assemble_state(big, sample_aperture(big_vol, big, big_cfg));
    CHECK(big_state.radius == doctest::Approx(s * state.radius));
    CHECK((big_state.rows.leftCols<3>() - state.rows.leftCols<3>()).norm() < 1e-9);
    CHECK((big_state.rows.middleCols<3>(3) - state.rows.middleCols<3>(3)).norm() < 1e-9);
    CHECK((big_state.rows.middleCols<12>(6) - state.rows.middleCols<12>(6)).norm() < 1e-9);
    CHECK((big_state.rows.rightCols(cfg.sample_count()) - state.rows.rightCols(cfg.sample_count())).cwiseAbs().maxCoeff() < 1e-3);

    // Gray values enter as (value - center) / scale.
    const auto raw = sample_aperture(linear_volume(grad, 10.0), mesh, cfg);
    CHECK((state.rows.rightCols(cfg.sample_count()) - (raw.theta.array() - 20.0).matrix() / 4.0).norm() < 1e-12);
}

TEST_CASE("state row selection") {
    const auto mesh = ellipsoid_mesh();
    const auto state = assemble_state(mesh, sample_aperture(linear_volume(Vec3::UnitX(), 0.0), mesh, ApertureConfig{}));
    const std::vector<int> ids = {5, 0, 5};
    const auto sub = state.select(ids);
    CHECK(sub.size() == 3);
    CHECK(sub.rows.row(0) == state.rows.row(5));
    CHECK(sub.rows.row(1) == state.rows.row(0));
    CHECK(sub.radius == state.radius);
    Mesh other = icosphere(1);
    CHECK_THROWS_AS(assemble_state(other, sample_aperture(linear_volume(Vec3::UnitX(), 0.0), mesh, ApertureConfig{})), Error);
}

TEST_CASE("state dump round trip") {
    const auto mesh = ellipsoid_mesh();
    ApertureConfig cfg;
    const auto state = assemble_state(mesh, sample_aperture(linear_volume(Vec3::UnitY(), 5.0), mesh, cfg));
    const auto dir = std::filesystem::temp_directory_path() / "apn_test_state";
    std::filesystem::create_directories(dir);
    write_state(state, cfg, dir / "s");
    const auto header = io::read_json(dir / "s.omega.json");
    CHECK(header.at("rows").get<int>() == state.rows.rows());
    CHECK(header.at("cols").get<int>() == cfg.state_width());
    const auto raw = io::read_raw_le<double>(dir / "s.omega.raw", static_cast<std::size_t>(state.rows.size()));
    CHECK(std::equal(raw.begin(), raw.end(), state.rows.data()));
    std::filesystem::remove_all(dir);
}

}
