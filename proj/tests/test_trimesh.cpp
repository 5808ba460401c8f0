#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "shapefuse/trimesh.hpp"
#include "test_helpers.hpp"

using namespace shapefuse;
using testing::shared_edge_pair;
using testing::single_triangle;

TEST_CASE("TriMesh validates faces and landmarks") {
    Eigen::Matrix3Xd v(3, 3);
    v << 0, 1, 0, 0, 0, 1, 0, 0, 0;
    CHECK_THROWS_AS(TriMesh(v, {{0, 1, 3}}), std::invalid_argument);
    CHECK_THROWS_AS(TriMesh(v, {{0, 1, 1}}), std::invalid_argument);
    CHECK_THROWS_AS(TriMesh(v, {{0, 1, 2}}, {{"nose", 9}}), std::invalid_argument);
    const TriMesh ok(v, {{0, 1, 2}}, {{"nose", 1}});
    CHECK(ok.landmark_index("nose") == 1);
    CHECK_THROWS_AS(ok.landmark_index("chin"), std::invalid_argument);
}

TEST_CASE("flatten uses the interleaved x1,y1,z1,... ordering") {
    Eigen::Matrix3Xd v(3, 2);
    v.col(0) = Vec3(1, 2, 3);
    v.col(1) = Vec3(4, 5, 6);
    const TriMesh mesh = single_triangle(Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0));
    const Eigen::VectorXd flat = TriMesh(v, {}).flatten();
    for (int i = 0; i < 6; ++i) CHECK(flat[i] == i + 1.0);
    const TriMesh back = TriMesh::from_flat(flat, {});
    CHECK((back.vertices() - v).norm() == 0.0);
    (void)mesh;
}

TEST_CASE("closest_point at a mesh vertex is exact") {
    const TriMesh mesh = testing::small_world().head_template;
    const Vec3 q = mesh.vertex(17);
    const auto [sp, dist] = closest_point(mesh, q);
    CHECK(dist == doctest::Approx(0.0).epsilon(1e-12));
    const Face& f = mesh.faces()[sp.face];
    bool contains = f[0] == 17 || f[1] == 17 || f[2] == 17;
    CHECK(contains);
    CHECK(sp.barycentric.maxCoeff() == doctest::Approx(1.0));
    CHECK((mesh.position(sp) - q).norm() < 1e-12);
}

TEST_CASE("closest_point on the unit right triangle matches the closed form") {
    const TriMesh tri = single_triangle(Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0));
    const auto [sp, dist] = closest_point(tri, Vec3(0.25, 0.25, 1.0));
    CHECK(dist == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(sp.barycentric[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(sp.barycentric[1] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(sp.barycentric[2] == doctest::Approx(0.25).epsilon(1e-12));
}

// brute-force oracle: dense barycentric grid over one triangle
static double grid_min_distance(const TriMesh& tri, const Vec3& q, int steps = 1000) {
    const Vec3 a = tri.vertex(0), b = tri.vertex(1), c = tri.vertex(2);
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= steps; ++i) {
        for (int j = 0; j <= steps - i; ++j) {
            const double u = double(i) / steps, v = double(j) / steps;
            const Vec3 p = (1.0 - u - v) * a + u * b + v * c;
            best = std::min(best, (p - q).norm());
        }
    }
    return best;
}

TEST_CASE("closest_point clamps to edges, verified by barycentric grid search") {
    const TriMesh tri = single_triangle(Vec3(0, 0, 0), Vec3(2, 0, 0), Vec3(0, 2, 0));
    // displaced past the hypotenuse along the normal direction
    const Vec3 q(1.5, 1.5, 0.7);
    const auto [sp, dist] = closest_point(tri, q);
    CHECK(sp.barycentric.minCoeff() == doctest::Approx(0.0)); // clamped to the edge
    CHECK(dist == doctest::Approx(grid_min_distance(tri, q)).epsilon(1e-5));
}

TEST_CASE("closest_point distance never exceeds any vertex distance") {
    const TriMesh mesh = testing::small_world().head_template;
    const ClosestPointQuery cp(mesh);
    std::mt19937_64 engine(3);
    std::uniform_real_distribution<double> coord(-120.0, 120.0);
    for (int t = 0; t < 200; ++t) {
        const Vec3 q(coord(engine), coord(engine), coord(engine));
        const double d = cp.closest(q).second;
        for (int i = 0; i < mesh.n_vertices(); ++i) CHECK(d <= (mesh.vertex(i) - q).norm() + 1e-9);
    }
}

TEST_CASE("BVH query agrees with brute force over all faces") {
    const TriMesh mesh = testing::small_world().head_template;
    const ClosestPointQuery cp(mesh);
    std::mt19937_64 engine(11);
    std::uniform_real_distribution<double> coord(-150.0, 150.0);
    for (int t = 0; t < 300; ++t) {
        const Vec3 q(coord(engine), coord(engine), coord(engine));
        double brute = std::numeric_limits<double>::infinity();
        for (const Face& f : mesh.faces()) {
            const Vec3 bary =
                closest_point_on_triangle(q, mesh.vertex(f[0]), mesh.vertex(f[1]), mesh.vertex(f[2]));
            const Vec3 p =
                bary[0] * mesh.vertex(f[0]) + bary[1] * mesh.vertex(f[1]) + bary[2] * mesh.vertex(f[2]);
            brute = std::min(brute, (p - q).norm());
        }
        CHECK(cp.closest(q).second == doctest::Approx(brute).epsilon(1e-12));
    }
}

TEST_CASE("empty mesh is rejected") {
    Eigen::Matrix3Xd v(3, 0);
    const TriMesh empty(v, {});
    CHECK_THROWS_AS(closest_point(empty, Vec3(0, 0, 0)), std::invalid_argument);
}

TEST_CASE("barycentric_embed: vertices, centroids, cap") {
    const TriMesh mesh = testing::small_world().head_template;
    const ClosestPointQuery cp(mesh);

    const SurfacePoint at_vertex = barycentric_embed(cp, mesh.vertex(5));
    CHECK(at_vertex.barycentric.maxCoeff() == doctest::Approx(1.0).epsilon(1e-12));

    const int k = 40;
    const Face& f = mesh.faces()[k];
    const Vec3 centroid = (mesh.vertex(f[0]) + mesh.vertex(f[1]) + mesh.vertex(f[2])) / 3.0;
    const SurfacePoint at_centroid = barycentric_embed(cp, centroid);
    CHECK(at_centroid.face == k);
    for (int i = 0; i < 3; ++i)
        CHECK(at_centroid.barycentric[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-9));

    const Vec3 far = mesh.vertex(0) + Vec3(0, 0, 0.2 * mesh.bbox_diagonal());
    CHECK_THROWS_AS(barycentric_embed(cp, far), numerical_error);
}

TEST_CASE("equidistant faces resolve to the lowest face index") {
    for (bool low_first : {true, false}) {
        const TriMesh mesh = shared_edge_pair(low_first);
        const SurfacePoint sp = barycentric_embed(mesh, Vec3(0.5, 0.0, 0.8), 1.0);
        CHECK(sp.face == 0); // both faces are at distance 0.8; index 0 wins
    }
}

TEST_CASE("barycentric_embed is idempotent") {
    const TriMesh mesh = testing::small_world().head_template;
    const ClosestPointQuery cp(mesh);
    std::mt19937_64 engine(23);
    std::uniform_real_distribution<double> coord(-100.0, 100.0);
    int tested = 0;
    for (int t = 0; t < 200 && tested < 120; ++t) {
        const Vec3 q(coord(engine), coord(engine), coord(engine));
        SurfacePoint sp;
        try {
            sp = barycentric_embed(cp, q, 0.5);
        } catch (const numerical_error&) {
            continue;
        }
        ++tested;
        const SurfacePoint again = barycentric_embed(cp, mesh.position(sp), 0.5);
        CHECK(again.face == sp.face);
        CHECK((again.barycentric - sp.barycentric).cwiseAbs().maxCoeff() < 1e-9);
    }
    CHECK(tested > 50);
}

TEST_CASE("procrustes recovers identity and known similarity transforms") {
    std::mt19937_64 engine(5);
    std::uniform_real_distribution<double> coord(-10.0, 10.0);
    Eigen::Matrix3Xd src(3, 12);
    for (int i = 0; i < src.cols(); ++i) src.col(i) = Vec3(coord(engine), coord(engine), coord(engine));

    const SimilarityTransform id = procrustes_align(src, src);
    CHECK(id.scale() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK((id.rotation() - Mat3::Identity()).norm() < 1e-9);
    CHECK(id.translation().norm() < 1e-9);

    const Mat3 rot = testing::random_rotation(engine);
    const Vec3 t(3.0, -1.0, 2.5);
    const Eigen::Matrix3Xd dst = (2.0 * (rot * src)).colwise() + t;
    const SimilarityTransform got = procrustes_align(src, dst);
    CHECK(got.scale() == doctest::Approx(2.0).epsilon(1e-9));
    CHECK((got.rotation() - rot).norm() < 1e-9);
    CHECK((got.translation() - t).norm() < 1e-9);
    CHECK((got.apply(src) - dst).norm() < 1e-9);

    const SimilarityTransform rigid = procrustes_align(src, dst, false);
    CHECK(rigid.scale() == 1.0);
}

TEST_CASE("procrustes on a reflection returns the best proper rotation") {
    std::mt19937_64 engine(9);
    std::uniform_real_distribution<double> coord(-5.0, 5.0);
    Eigen::Matrix3Xd src(3, 10);
    for (int i = 0; i < src.cols(); ++i) src.col(i) = Vec3(coord(engine), coord(engine), coord(engine));
    Eigen::Matrix3Xd dst = src;
    dst.row(2) = -dst.row(2); // mirror across z

    const SimilarityTransform got = procrustes_align(src, dst);
    CHECK(got.rotation().determinant() == doctest::Approx(1.0).epsilon(1e-9));
    const double residual = (got.apply(src) - dst).norm();
    CHECK(residual > 1e-3);

    // SVD-sign oracle: flipping the smallest singular direction is optimal,
    // so no proper rotation with positive scale may do better
    const Eigen::Matrix3Xd cs = src.colwise() - Vec3(src.rowwise().mean());
    const Eigen::Matrix3Xd cd = dst.colwise() - Vec3(dst.rowwise().mean());
    const double centered_residual = (got.scale() * (got.rotation() * cs) - cd).norm();
    for (int probe = 0; probe < 500; ++probe) {
        const Mat3 r = testing::random_rotation(engine);
        const double best_scale = (cd.cwiseProduct(r * cs)).sum() / cs.squaredNorm();
        if (best_scale <= 1e-9) continue; // negative scale = improper transform
        const double res = (best_scale * (r * cs) - cd).norm();
        CHECK(res + 1e-9 >= centered_residual);
    }
}

TEST_CASE("procrustes residual is invariant to pre-transforming the source") {
    std::mt19937_64 engine(13);
    std::uniform_real_distribution<double> coord(-8.0, 8.0);
    Eigen::Matrix3Xd src(3, 15), dst(3, 15);
    for (int i = 0; i < 15; ++i) {
        src.col(i) = Vec3(coord(engine), coord(engine), coord(engine));
        dst.col(i) = Vec3(coord(engine), coord(engine), coord(engine));
    }
    const double res0 = (procrustes_align(src, dst).apply(src) - dst).norm();
    const SimilarityTransform pre(1.7, testing::random_rotation(engine), Vec3(1, 2, 3));
    const Eigen::Matrix3Xd src2 = pre.apply(src);
    const double res1 = (procrustes_align(src2, dst).apply(src2) - dst).norm();
    CHECK(res0 == doctest::Approx(res1).epsilon(1e-9));
}

TEST_CASE("procrustes rejects degenerate input") {
    Eigen::Matrix3Xd two(3, 2);
    two << 0, 1, 0, 0, 0, 0;
    CHECK_THROWS_AS(procrustes_align(two, two), std::invalid_argument);

    Eigen::Matrix3Xd line(3, 5), target(3, 5);
    for (int i = 0; i < 5; ++i) {
        line.col(i) = Vec3(i, 0, 0);
        target.col(i) = Vec3(0, i, i);
    }
    CHECK_THROWS_AS(procrustes_align(line, target), numerical_error);

    const Eigen::Matrix3Xd coincident = Eigen::Matrix3Xd::Ones(3, 4);
    CHECK_THROWS_AS(procrustes_align(coincident, target.leftCols(4)), numerical_error);
}

TEST_CASE("distance_weights schemes") {
    // regular tetrahedron: all vertices equidistant from the centroid
    Eigen::Matrix3Xd v(3, 4);
    v.col(0) = Vec3(1, 1, 1);
    v.col(1) = Vec3(1, -1, -1);
    v.col(2) = Vec3(-1, 1, -1);
    v.col(3) = Vec3(-1, -1, 1);
    const TriMesh tet(v, {{0, 1, 2}, {0, 3, 1}, {0, 2, 3}, {1, 3, 2}});

    const Eigen::VectorXd eq = distance_weights(tet, Vec3(0, 0, 0), WeightScheme::Gaussian, 2.0);
    for (int i = 1; i < 4; ++i) CHECK(eq[i] == doctest::Approx(eq[0]).epsilon(1e-12));

    // gaussian at distance == scale gives exp(-1/2)
    const double d = std::sqrt(3.0);
    const Eigen::VectorXd g = distance_weights(tet, Vec3(0, 0, 0), WeightScheme::Gaussian, d);
    CHECK(g[0] == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));

    // inverse-linear clamps to zero at and beyond the scale distance
    const Eigen::VectorXd lin = distance_weights(tet, Vec3(0, 0, 0), WeightScheme::InverseLinear, d);
    for (int i = 0; i < 4; ++i) CHECK(lin[i] == 0.0);
    const Eigen::VectorXd lin2 = distance_weights(tet, tet.vertex(0), WeightScheme::InverseLinear, 1.0);
    CHECK(lin2[0] == 1.0);

    CHECK_THROWS_AS(distance_weights(tet, Vec3(0, 0, 0), WeightScheme::Gaussian, 0.0),
                    std::invalid_argument);

    // deterministic
    const Eigen::VectorXd again = distance_weights(tet, Vec3(0, 0, 0), WeightScheme::Gaussian, 2.0);
    CHECK((again - eq).norm() == 0.0);
}

TEST_CASE("weights are monotone in distance and maximal at the anchor") {
    const TriMesh mesh = testing::small_world().head_template;
    const Vec3 anchor = mesh.landmark_position("nose_tip");
    for (WeightScheme scheme : {WeightScheme::Gaussian, WeightScheme::InverseLinear}) {
        const Eigen::VectorXd w = distance_weights(mesh, anchor, scheme, 40.0);
        CHECK(w.minCoeff() >= 0.0);
        CHECK(w.maxCoeff() <= 1.0);
        std::vector<std::pair<double, double>> dist_weight;
        for (int i = 0; i < mesh.n_vertices(); ++i)
            dist_weight.push_back({(mesh.vertex(i) - anchor).norm(), w[i]});
        std::sort(dist_weight.begin(), dist_weight.end());
        for (size_t i = 1; i < dist_weight.size(); ++i)
            CHECK(dist_weight[i].second <= dist_weight[i - 1].second + 1e-12);
        CHECK(w[mesh.landmark_index("nose_tip")] == doctest::Approx(w.maxCoeff()));
    }
}

TEST_CASE("boundary detection on an open strip") {
    Eigen::Matrix3Xd v(3, 4);
    v.col(0) = Vec3(0, 0, 0);
    v.col(1) = Vec3(1, 0, 0);
    v.col(2) = Vec3(1, 1, 0);
    v.col(3) = Vec3(0, 1, 0);
    const TriMesh quad(v, {{0, 1, 2}, {0, 2, 3}});
    const auto& boundary = quad.boundary_vertices();
    for (int i = 0; i < 4; ++i) CHECK(boundary[i] == 1); // every vertex touches an open edge

    const TriMesh closed = testing::small_world().head_template;
    const auto& closed_boundary = closed.boundary_vertices();
    for (int i = 0; i < closed.n_vertices(); ++i) CHECK(closed_boundary[i] == 0);
}
