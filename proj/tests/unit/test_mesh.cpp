#include "apn/mesh.hpp"

#include <doctest.h>

#include <filesystem>
#include <limits>
#include <set>

using namespace apn;

namespace {

Vec3 closest_on_segment(const Vec3& p, const Vec3& a, const Vec3& b) {
    const Vec3 d = b - a;
    const double t = std::clamp((p - a).dot(d) / d.squaredNorm(), 0.0, 1.0);
    return a + t * d;
}

// Plane projection when it lands inside, otherwise the best of the edges.
Vec3 reference_closest(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
    const Vec3 n = (b - a).cross(c - a);
    const Vec3 q = p - n * (p - a).dot(n) / n.squaredNorm();
    const double area = n.squaredNorm();
    const double u = (c - b).cross(q - b).dot(n) / area;
    const double v = (a - c).cross(q - c).dot(n) / area;
    const double w = (b - a).cross(q - a).dot(n) / area;
    if (u >= 0.0 && v >= 0.0 && w >= 0.0) return q;
    Vec3 best = closest_on_segment(p, a, b);
    for (const Vec3& cand : {closest_on_segment(p, b, c), closest_on_segment(p, c, a)}) {
        if ((cand - p).squaredNorm() < (best - p).squaredNorm()) best = cand;
    }
    return best;
}

double naive_hausdorff(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    auto directed = [](const std::vector<Vec3>& x, const std::vector<Vec3>& y) {
        double worst = 0.0;
        for (const auto& p : x) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& q : y) best = std::min(best, (p - q).norm());
            worst = std::max(worst, best);
        }
        return worst;
    };
    return std::max(directed(a, b), directed(b, a));
}

std::vector<Vec3> random_points(Rng& rng, int n, double r) {
    std::vector<Vec3> pts(n);
    for (auto& p : pts) p = Vec3(rng.uniform(-r, r), rng.uniform(-r, r), rng.uniform(-r, r));
    return pts;
}

}  // namespace

TEST_SUITE("mesh") {

TEST_CASE("icosphere vertex counts and nesting") {
    const std::size_t expect[] = {12, 42, 162, 642, 2562};
    for (int l = 0; l <= 4; ++l) {
        const auto m = icosphere(l);
        CHECK(m.size() == expect[l]);
        CHECK(m.faces.size() == 20u << (2 * l));
        CHECK(m.topology == "ico" + std::to_string(l));
        require_watertight(m);
        for (const auto& v : m.vertices) CHECK(v.norm() == doctest::Approx(1.0));
        CHECK(signed_volume(m) > 0.0);
    }
    const auto coarse = icosphere(2);
    const auto fine = icosphere(3);
    for (std::size_t i = 0; i < coarse.size(); ++i) CHECK(coarse.vertices[i] == fine.vertices[i]);
    CHECK_THROWS_AS(icosphere(-1), Error);
}

TEST_CASE("subdivision numbering matches the finer icosphere") {
    const auto coarse = icosphere(1);
    const auto fine = icosphere(2);
    const auto sub = subdivide(coarse);
    const auto edges = mesh_edges(coarse);
    REQUIRE(sub.size() == fine.size());
    CHECK(sub.faces == fine.faces);
    for (std::size_t k = 0; k < edges.size(); ++k) {
        const Vec3 mid = 0.5 * (coarse.vertices[edges[k].a] + coarse.vertices[edges[k].b]);
        CHECK((sub.vertices[coarse.size() + k] - mid).norm() < 1e-15);
        CHECK((fine.vertices[coarse.size() + k] - mid.normalized()).norm() < 1e-12);
    }
    require_watertight(sub);
}

TEST_CASE("upsampled fields follow the midpoint rule") {
    const auto coarse = icosphere(1);
    RowMatrix field(coarse.size(), 3);
    for (std::size_t i = 0; i < coarse.size(); ++i) field.row(i) = coarse.vertices[i].transpose() * 2.0 + Eigen::RowVector3d(1, 2, 3);
    const auto up = upsample_field(coarse, field);
    const auto sub = subdivide(coarse);
    for (std::size_t i = 0; i < sub.size(); ++i) {
        const Eigen::RowVector3d expect = sub.vertices[i].transpose() * 2.0 + Eigen::RowVector3d(1, 2, 3);
        CHECK((up.row(i) - expect).norm() < 1e-12);
    }
    CHECK_THROWS_AS(upsample_field(coarse, RowMatrix(3, 3)), Error);
}

TEST_CASE("edges and neighbours") {
    const auto m = icosphere(0);
    const auto edges = mesh_edges(m);
    CHECK(edges.size() == 30);
    for (const auto& e : edges) CHECK(e.a < e.b);
    const auto nb = vertex_neighbors(m);
    for (const auto& n : nb) {
        CHECK(n.size() == 5);
        CHECK(std::is_sorted(n.begin(), n.end()));
    }
}

TEST_CASE("normals of a sphere point outward") {
    const auto m = icosphere(3);
    const auto n = vertex_normals(m);
    for (std::size_t i = 0; i < m.size(); ++i) {
        CHECK(n[i].norm() == doctest::Approx(1.0));
        CHECK(n[i].dot(m.vertices[i]) > 0.999);
    }
}

TEST_CASE("local frames are right-handed and orthonormal") {
    Rng rng(2);
    std::vector<Vec3> normals = {Vec3::UnitX(), Vec3::UnitY(), -Vec3::UnitZ(), Vec3(1, 1, 1).normalized()};
    for (int i = 0; i < 100; ++i) normals.push_back(rng.unit_vector());
    for (const auto& n : normals) {
        const auto f = local_frame(n);
        CHECK((f.e1 - n).norm() < 1e-12);
        CHECK(std::abs(f.e1.dot(f.e2)) < 1e-12);
        CHECK(f.e2.norm() == doctest::Approx(1.0));
        CHECK((f.e1.cross(f.e2) - f.e3).norm() < 1e-12);
    }
    // The least aligned axis is chosen before projection.
    const auto f = local_frame(Vec3::UnitZ());
    CHECK((f.e2 - Vec3::UnitX()).norm() < 1e-12);
}

TEST_CASE("validation catches bad meshes") {
    Mesh m = icosphere(0);
    m.faces[0][1] = 99;
    CHECK_THROWS_AS(validate_mesh(m), Error);
    m = icosphere(0);
    m.vertices.push_back(Vec3::Zero());
    CHECK_THROWS_AS(validate_mesh(m), Error);
    m = icosphere(0);
    std::swap(m.faces[0][0], m.faces[0][1]);
    CHECK_THROWS_AS(require_watertight(m), Error);
}

TEST_CASE("closest point on triangle matches the reference construction") {
    Rng rng(11);
    for (int n = 0; n < 5000; ++n) {
        const auto pts = random_points(rng, 4, 2.0);
        const Vec3 got = closest_point_on_triangle(pts[3], pts[0], pts[1], pts[2]);
        const Vec3 ref = reference_closest(pts[3], pts[0], pts[1], pts[2]);
        CHECK((got - pts[3]).norm() == doctest::Approx((ref - pts[3]).norm()).epsilon(1e-9));
    }
}

TEST_CASE("surface query agrees with a brute-force scan") {
    Mesh m = icosphere(3);
    for (auto& v : m.vertices) v = v.cwiseProduct(Vec3(30.0, 20.0, 25.0));
    const SurfaceQuery query(m);
    Rng rng(5);
    for (const auto& p : random_points(rng, 300, 40.0)) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& f : m.faces) best = std::min(best, (reference_closest(p, m.vertices[f[0]], m.vertices[f[1]], m.vertices[f[2]]) - p).norm());
        const auto cp = query.closest(p);
        CHECK(cp.distance == doctest::Approx(best).epsilon(1e-9));
        CHECK((cp.point - p).norm() == doctest::Approx(cp.distance));
        CHECK(point_to_surface_distance(p, m).distance == doctest::Approx(best).epsilon(1e-9));
    }
    for (const auto& v : m.vertices) CHECK(query.distance(v) < 1e-12);
}

TEST_CASE("point index nearest neighbour and ties") {
    Rng rng(9);
    const auto pts = random_points(rng, 500, 10.0);
    const PointIndex index(pts);
    for (const auto& q : random_points(rng, 200, 12.0)) {
        int best = -1;
        double bd = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const double d = (pts[i] - q).norm();
            if (d < bd) {
                bd = d;
                best = static_cast<int>(i);
            }
        }
        const auto [id, dist] = index.nearest(q);
        CHECK(id == best);
        CHECK(dist == doctest::Approx(bd));
    }
    const std::vector<Vec3> dup = {Vec3(1, 0, 0), Vec3(-1, 0, 0), Vec3(1, 0, 0)};
    CHECK(PointIndex(dup).nearest(Vec3(0.9, 0, 0)).first == 0);
    CHECK(PointIndex(dup).nearest(Vec3::Zero()).first == 0);
}

TEST_CASE("hausdorff matches the naive computation") {
    Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        const auto a = random_points(rng, 50 + trial, 5.0);
        const auto b = random_points(rng, 70 - trial, 6.0);
        const auto h = hausdorff_pair(a, b);
        CHECK(h.distance == doctest::Approx(naive_hausdorff(a, b)).epsilon(1e-12));
        CHECK((a[h.a_index] - b[h.b_index]).norm() == doctest::Approx(h.distance));
        CHECK(hausdorff(a, b) == hausdorff(b, a));
    }
    const auto a = random_points(rng, 30, 1.0);
    CHECK(hausdorff(a, a) == 0.0);
}

TEST_CASE("obj files round trip with topology tags") {
    Mesh m = icosphere(2);
    m.topology = "ico2";
    m.level = 1;
    for (auto& v : m.vertices) v *= 17.123456789012345;
    const auto path = std::filesystem::temp_directory_path() / "apn_test_mesh.obj";
    write_obj(m, path);
    const auto back = read_obj(path);
    CHECK(back.topology == "ico2");
    CHECK(back.level == 1);
    CHECK(back.faces == m.faces);
    CHECK(back.vertices == m.vertices);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(read_obj(path), Error);
}

TEST_CASE("vertex permutation preserves the surface") {
    const auto m = icosphere(2);
    Rng rng(1);
    const auto perm = rng.permutation(m.size());
    const auto p = permute_vertices(m, perm);
    for (std::size_t i = 0; i < m.size(); ++i) CHECK(p.vertices[i] == m.vertices[perm[i]]);
    require_watertight(p);
    CHECK(signed_volume(p) == doctest::Approx(signed_volume(m)));
    std::set<std::array<int, 3>> fa, fb;
    for (auto f : m.faces) {
        std::rotate(f.begin(), std::min_element(f.begin(), f.end()), f.end());
        fa.insert(f);
    }
    std::vector<std::size_t> inv(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
    for (const auto& f : p.faces) {
        std::array<int, 3> g = {static_cast<int>(perm[f[0]]), static_cast<int>(perm[f[1]]), static_cast<int>(perm[f[2]])};
        std::rotate(g.begin(), std::min_element(g.begin(), g.end()), g.end());
        fb.insert(g);
    }
    CHECK(fa == fb);
}

}
