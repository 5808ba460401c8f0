#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "shapefuse/evaluation.hpp"
#include "shapefuse/regression.hpp"
#include "shapefuse/rng.hpp"
#include "test_helpers.hpp"

using namespace shapefuse;

namespace {

NicpConfig crop_config() {
    NicpConfig cfg;
    cfg.stiffness_schedule = {20.0, 5.0, 1.0};
    cfg.landmark_weight_schedule = {2.0, 0.5, 0.1};
    cfg.max_inner_iterations = 4;
    return cfg;
}

ParamPairSet exact_pairs(const SyntheticWorld& world, const ShapeModel& head_model,
                         const ShapeModel& face_model, int n, std::uint64_t seed) {
    const Population pop = sample_population(world, n, seed);
    ParamPairSet pairs;
    pairs.head_params.resize(head_model.n_components(), n);
    pairs.face_params.resize(face_model.n_components(), n);
    for (int s = 0; s < n; ++s) {
        pairs.head_params.col(s) = project_shape(head_model, pop.heads[s]);
        pairs.face_params.col(s) = project_shape(face_model, pop.faces[s]);
    }
    return pairs;
}

} // namespace

TEST_CASE("synthesize_param_pairs rejects ill-posed sample counts") {
    const SyntheticWorld world = testing::small_world();
    CHECK_THROWS_AS(synthesize_param_pairs(world.head_model(), world.face_model(), crop_config(),
                                           world.face_model().n_components(), 1),
                    std::invalid_argument);
}

TEST_CASE("synthesized pairs follow the known head-to-face map") {
    const SyntheticWorld world = testing::small_world();
    const ShapeModel head = world.head_model();
    const ShapeModel face = world.face_model();
    const int n_r = face.n_components() + 6;
    const ParamPairSet pairs = synthesize_param_pairs(head, face, crop_config(), n_r, 71);
    REQUIRE(pairs.n_r() == n_r);
    // C_f = A C_h up to the non-rigid registration tolerance
    const Eigen::MatrixXd expected = world.head_to_face_map * pairs.head_params;
    const double scale = pairs.face_params.cwiseAbs().maxCoeff();
    CHECK((pairs.face_params - expected).cwiseAbs().maxCoeff() < 0.03 * scale);
}

TEST_CASE("synthesize_param_pairs is deterministic under a fixed seed") {
    const SyntheticWorld world = testing::small_world();
    const ShapeModel head = world.head_model();
    const ShapeModel face = world.face_model();
    const int n_r = face.n_components() + 2;
    const ParamPairSet a = synthesize_param_pairs(head, face, crop_config(), n_r, 5);
    const ParamPairSet b = synthesize_param_pairs(head, face, crop_config(), n_r, 5);
    CHECK((a.head_params - b.head_params).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.face_params - b.face_params).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("solve_regression: identity, planted map, rank deficiency") {
    std::mt19937_64 engine(17);
    std::normal_distribution<double> unit(0.0, 1.0);

    ParamPairSet same;
    same.face_params.resize(5, 40);
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 40; ++c) same.face_params(r, c) = unit(engine);
    same.head_params = same.face_params;
    const RegressionMap identity = solve_regression(same);
    CHECK((identity.matrix - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(identity.n_r_used == 40);

    Eigen::MatrixXd planted(7, 5);
    for (int r = 0; r < 7; ++r)
        for (int c = 0; c < 5; ++c) planted(r, c) = unit(engine);
    ParamPairSet mapped;
    mapped.face_params = same.face_params;
    mapped.head_params = planted * same.face_params;
    CHECK((solve_regression(mapped).matrix - planted).cwiseAbs().maxCoeff() < 1e-6);

    // rank-deficient face parameters: plain solve fails naming the rank,
    // a ridge keeps it finite with a residual at the planted noise floor
    ParamPairSet deficient = mapped;
    deficient.face_params.row(4) = deficient.face_params.row(3);
    deficient.head_params = planted * deficient.face_params;
    for (int r = 0; r < 7; ++r)
        for (int c = 0; c < 40; ++c) deficient.head_params(r, c) += 0.01 * unit(engine);
    try {
        solve_regression(deficient);
        FAIL("expected numerical_error");
    } catch (const numerical_error& e) {
        CHECK(std::string(e.what()).find("rank 4") != std::string::npos);
    }
    const RegressionMap ridged = solve_regression(deficient, 1e-6);
    CHECK(ridged.matrix.allFinite());
    const double residual = (deficient.head_params - ridged.matrix * deficient.face_params).norm();
    CHECK(residual > 0.01); // cannot fall below the injected noise
}

TEST_CASE("regression residual is first-order optimal") {
    const SyntheticWorld world = testing::small_world();
    const ParamPairSet pairs = exact_pairs(world, world.head_model(), world.face_model(), 50, 3);
    const RegressionMap map = solve_regression(pairs);
    const double base = (pairs.head_params - map.matrix * pairs.face_params).norm();
    std::mt19937_64 engine(29);
    std::normal_distribution<double> unit(0.0, 1.0);
    for (int probe = 0; probe < 20; ++probe) {
        Eigen::MatrixXd delta(map.matrix.rows(), map.matrix.cols());
        for (int r = 0; r < delta.rows(); ++r)
            for (int c = 0; c < delta.cols(); ++c) delta(r, c) = unit(engine);
        delta *= 1e-3 / delta.norm();
        const double perturbed =
            (pairs.head_params - (map.matrix + delta) * pairs.face_params).norm();
        CHECK(perturbed >= base - 1e-12);
    }
}

TEST_CASE("predict_full_shape maps the face mean to the head mean") {
    const SyntheticWorld world = testing::small_world();
    const ShapeModel head = world.head_model();
    const ShapeModel face = world.face_model();
    const RegressionMap map = solve_regression(exact_pairs(world, head, face, 50, 9));
    const TriMesh predicted = predict_full_shape(head, face, map, face.mean_mesh());
    CHECK((predicted.flatten() - head.mean()).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("predict_full_shape recovers planted heads and is affine") {
    const SyntheticWorld world = testing::small_world();
    const ShapeModel head = world.head_model();
    const ShapeModel face = world.face_model();
    const RegressionMap map =
        solve_regression(exact_pairs(world, head, face, 10 * face.n_components(), 13));

    const Population held_out = sample_population(world, 20, 999);
    const double bbox = world.head_template.bbox_diagonal();
    for (int s = 0; s < 20; ++s) {
        const TriMesh predicted = predict_full_shape(head, face, map, held_out.faces[s]);
        const double rms = std::sqrt((predicted.flatten() - held_out.heads[s].flatten()).squaredNorm() /
                                     world.head_template.n_vertices());
        CHECK(rms < 1e-4 * bbox);

        // prediction stays in the affine span of the head model
        const Eigen::VectorXd centered = predicted.flatten() - head.mean();
        const Eigen::VectorXd residual = centered - head.basis() * (head.basis().transpose() * centered);
        CHECK(residual.cwiseAbs().maxCoeff() < 1e-8);
    }

    std::mt19937_64 engine(31);
    std::uniform_real_distribution<double> mix(0.0, 1.0);
    for (int t = 0; t < 20; ++t) {
        const double alpha = mix(engine);
        const TriMesh s1 = held_out.faces[t % 20];
        const TriMesh s2 = held_out.faces[(t + 7) % 20];
        const TriMesh blend =
            s1.with_vertices(alpha * s1.vertices() + (1.0 - alpha) * s2.vertices());
        const Eigen::VectorXd lhs = predict_full_shape(head, face, map, blend).flatten();
        const Eigen::VectorXd rhs = alpha * predict_full_shape(head, face, map, s1).flatten() +
                                    (1.0 - alpha) * predict_full_shape(head, face, map, s2).flatten();
        CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("fused model beats a weak head model on held-out heads") {
    const SyntheticWorld world = testing::small_world(51);
    const ShapeModel face = world.face_model();
    // weak head model: fit on very few samples
    const ShapeModel weak = fit_pdm(sample_population(world, 6, 100).heads);
    const RegressionMap map = solve_regression(exact_pairs(world, weak, face, 40, 101), 1e-10);

    FusionConfig config;
    config.merge.nicp = crop_config();
    config.reregister = crop_config();
    const Population corpus = sample_population(world, 30, 102);
    const ShapeModel fused = build_regression_fused_model(weak, face, map, corpus.faces, config,
                                                          world.head_template);

    const Population held_out = sample_population(world, 10, 103);
    const int m = std::min(weak.n_components(), fused.n_components());
    const std::vector<int> grid = {m};
    const double weak_err = generalization(weak, held_out.heads, grid).y[0];
    const double fused_err = generalization(fused, held_out.heads, grid).y[0];
    CHECK(fused_err < weak_err);
}

TEST_CASE("fused model construction propagates degenerate corpora and is deterministic") {
    const SyntheticWorld world = testing::small_world();
    const ShapeModel face = world.face_model();
    const ShapeModel head = world.head_model();
    const RegressionMap map = solve_regression(exact_pairs(world, head, face, 40, 1));
    FusionConfig config;
    config.merge.nicp = crop_config();
    config.reregister = crop_config();

    const Population one = sample_population(world, 1, 2);
    CHECK_THROWS_AS(build_regression_fused_model(head, face, map, one.faces, config,
                                                 world.head_template),
                    std::invalid_argument);

    const Population corpus = sample_population(world, 8, 3);
    const ShapeModel a = build_regression_fused_model(head, face, map, corpus.faces, config,
                                                      world.head_template);
    const ShapeModel b = build_regression_fused_model(head, face, map, corpus.faces, config,
                                                      world.head_template);
    CHECK((a.mean() - b.mean()).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.basis() - b.basis()).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.eigenvalues() - b.eigenvalues()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("latent_to_latent_regression identities and guards") {
    const SyntheticWorld world = testing::small_world();
    const ShapeModel head = world.head_model();
    const ShapeModel face = world.face_model();
    const Population pop = sample_population(world, 40, 77);

    std::vector<std::pair<TriMesh, TriMesh>> same_pairs;
    for (int s = 0; s < 20; ++s) same_pairs.emplace_back(pop.heads[s], pop.heads[s]);
    const RegressionMap identity = latent_to_latent_regression(head, head, same_pairs, 1e-10);
    CHECK((identity.matrix - Eigen::MatrixXd::Identity(head.n_components(), head.n_components()))
              .cwiseAbs()
              .maxCoeff() < 1e-6);

    std::vector<std::pair<TriMesh, TriMesh>> face_to_head;
    for (int s = 0; s < 40; ++s) face_to_head.emplace_back(pop.faces[s], pop.heads[s]);
    const RegressionMap map = latent_to_latent_regression(face, head, face_to_head);
    CHECK((map.matrix - world.coupling_map).cwiseAbs().maxCoeff() < 1e-6);

    std::vector<std::pair<TriMesh, TriMesh>> few(face_to_head.begin(),
                                                 face_to_head.begin() + face.n_components());
    CHECK_THROWS_AS(latent_to_latent_regression(face, head, few), std::invalid_argument);
}
