#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <sstream>

#include "shapefuse/evaluation.hpp"
#include "shapefuse/rng.hpp"
#include "test_helpers.hpp"

using namespace shapefuse;

namespace {

ShapeModel equal_spectrum_model(const SyntheticWorld& world, int n, double lambda) {
    return ShapeModel(world.head_template.flatten(), world.head_modes.leftCols(n),
                      Eigen::VectorXd::Constant(n, lambda), MeshTopology::of(world.head_template));
}

} // namespace

TEST_CASE("compactness of a uniform spectrum is linear and ends at 1") {
    const SyntheticWorld world = testing::small_world();
    const ShapeModel model = equal_spectrum_model(world, 4, 2.5);
    const MetricCurve curve = compactness(model);
    REQUIRE(curve.y.size() == 4);
    for (int m = 1; m <= 4; ++m) CHECK(curve.y[m - 1] == doctest::Approx(0.25 * m).epsilon(1e-12));
}

TEST_CASE("compactness is non-decreasing with terminal value 1 and matches a data-space oracle") {
    const SyntheticWorld world = testing::small_world();
    const Population pop = sample_population(world, 30, 17);
    const ShapeModel model = fit_pdm(pop.heads);
    const MetricCurve curve = compactness(model);
    for (size_t i = 1; i < curve.y.size(); ++i) CHECK(curve.y[i] >= curve.y[i - 1]);
    CHECK(std::abs(curve.y.back() - 1.0) <= 1e-12);

    // oracle: explained variance of reconstructed training data at each m
    Eigen::MatrixXd data(model.mean().size(), pop.heads.size());
    for (size_t s = 0; s < pop.heads.size(); ++s) data.col(s) = pop.heads[s].flatten() - model.mean();
    const double total = data.squaredNorm();
    for (size_t i = 0; i < curve.x.size(); ++i) {
        const int m = static_cast<int>(curve.x[i]);
        const Eigen::MatrixXd coeff = model.basis().leftCols(m).transpose() * data;
        CHECK(curve.y[i] == doctest::Approx(coeff.squaredNorm() / total).epsilon(1e-9));
    }
}

TEST_CASE("generalization identities") {
    const SyntheticWorld world = testing::small_world();
    const Population pop = sample_population(world, 20, 3);
    const ShapeModel model = fit_pdm(pop.heads);

    // a training member at full rank reconstructs to numerical precision
    const double full_err =
        generalization(model, {pop.heads[4]}, {model.n_components()}).y[0];
    CHECK(full_err <= 1e-6 * pop.heads[4].bbox_diagonal());

    // a shape one component away needs only that component
    const Eigen::VectorXd shifted =
        model.mean() + 3.0 * std::sqrt(model.eigenvalues()[0]) * model.basis().col(0);
    const TriMesh single = TriMesh::from_flat(shifted, world.head_template.faces());
    CHECK(generalization(model, {single}, {1}).y[0] < 1e-9);

    // nested truncations reconstruct no worse with more components
    const Population held_out = sample_population(world, 10, 4);
    std::vector<int> grid;
    for (int m = 1; m <= model.n_components(); ++m) grid.push_back(m);
    const MetricCurve curve = generalization(model, held_out.heads, grid);
    for (size_t i = 1; i < curve.y.size(); ++i) CHECK(curve.y[i] <= curve.y[i - 1] + 1e-12);

    CHECK_THROWS_AS(generalization(model, {world.face_template}, {1}), std::invalid_argument);
}

TEST_CASE("bespoke generalization projects each cohort on its own sub-model") {
    const SyntheticWorld world = testing::small_world();
    const Population pop = sample_population(world, 40, 9);
    std::map<std::string, std::vector<TriMesh>> by_cohort;
    for (size_t s = 0; s < pop.heads.size(); ++s) by_cohort[pop.cohorts[s]].push_back(pop.heads[s]);
    std::map<std::string, ShapeModel> models;
    for (const auto& [cohort, shapes] : by_cohort) models.emplace(cohort, fit_pdm(shapes, 3));

    const Population test = sample_population(world, 10, 10);
    std::vector<std::pair<TriMesh, std::string>> labeled;
    for (size_t s = 0; s < test.heads.size(); ++s) labeled.emplace_back(test.heads[s], test.cohorts[s]);

    const MetricCurve curve = generalization_bespoke(models, labeled, {1, 2, 3});
    CHECK(curve.y.size() == 3);
    for (double y : curve.y) CHECK(y >= 0.0);
    CHECK(curve.y[2] <= curve.y[0] + 1e-12);

    CHECK_THROWS_AS(generalization_bespoke(models, {{test.heads[0], "unknown"}}, {1}),
                    std::invalid_argument);
}

TEST_CASE("specificity is deterministic, non-negative, and shrinks with denser references") {
    const SyntheticWorld world = testing::small_world();
    const ShapeModel model = truncate_model(world.head_model(), 4);

    const Population few = sample_population(world, 10, 21);
    const Population many = sample_population(world, 200, 21);

    const MetricCurve a = specificity(model, few.heads, {2, 4}, 60, 5);
    const MetricCurve b = specificity(model, few.heads, {2, 4}, 60, 5);
    CHECK(a.y == b.y); // fixed seed, identical values
    for (double y : a.y) CHECK(y >= 0.0);

    const MetricCurve dense = specificity(model, many.heads, {2, 4}, 60, 5);
    for (size_t i = 0; i < a.y.size(); ++i) CHECK(dense.y[i] <= a.y[i] + 1e-12);
}

TEST_CASE("specificity of a near-degenerate model against its mean") {
    const SyntheticWorld world = testing::small_world();
    const int n = 4;
    const double lambda = 1e-4; // tiny eigenvalues: samples hug the mean
    const ShapeModel model = equal_spectrum_model(world, n, lambda);
    const std::vector<TriMesh> refs = {model.mean_mesh()};
    const int n_samples = 500;
    const MetricCurve curve = specificity(model, refs, {n}, n_samples, 11);
    // Monte Carlo value is bounded by the total deformation scale
    const double bound = std::sqrt(n * lambda);
    CHECK(curve.y[0] > 0.0);
    CHECK(curve.y[0] <= bound);
}

TEST_CASE("specificity uses 5000 samples by default") {
    const SyntheticWorld world = testing::small_world();
    const ShapeModel model = truncate_model(world.head_model(), 2);
    const Population refs = sample_population(world, 3, 31);
    const MetricCurve curve = specificity(model, refs.heads, {1});
    CHECK(curve.sample_count == 5000);
}

TEST_CASE("ced_auc trivial and analytic cases") {
    // all errors zero
    const CedResult perfect = ced_auc({0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}, 0.1);
    CHECK(perfect.auc == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(perfect.failure_rate == 0.0);
    for (double y : perfect.curve.y) CHECK(y == 1.0);

    // errors uniformly spread over [0, threshold]: AUC about one half
    std::vector<double> uniform, ones;
    const int n = 2000;
    for (int i = 0; i < n; ++i) {
        uniform.push_back(0.1 * (i + 0.5) / n);
        ones.push_back(1.0);
    }
    const CedResult half = ced_auc(uniform, ones, 0.1);
    CHECK(half.auc == doctest::Approx(0.5).epsilon(0.01));
    CHECK(half.failure_rate == 0.0);

    // normalization divides per item
    const CedResult normalized = ced_auc({1.0, 4.0}, {10.0, 40.0}, 0.2);
    CHECK(normalized.curve.y.front() == 0.0);
    CHECK(normalized.failure_rate == 0.0);

    CHECK_THROWS_AS(ced_auc({1.0}, {0.0}, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(ced_auc({1.0}, {1.0, 2.0}, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(ced_auc({1.0}, {1.0}, 0.0), std::invalid_argument);
}

TEST_CASE("ced_auc on a hand-computed 10-item fixture") {
    // normalized errors: {0.01,0.02,0.03,0.04,0.05,0.06,0.07,0.08,0.09,0.15}
    const std::vector<double> errors = {1, 2, 3, 4, 5, 6, 7, 8, 9, 15};
    const std::vector<double> normalizers(10, 100.0);
    const double threshold = 0.10;
    const int grid = 11; // thresholds 0.00, 0.01, ..., 0.10
    const CedResult r = ced_auc(errors, normalizers, threshold, grid);

    // CED at the grid points, counted by hand
    const std::vector<double> expected_ced = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.9};
    REQUIRE(r.curve.y.size() == expected_ced.size());
    for (size_t i = 0; i < expected_ced.size(); ++i)
        CHECK(r.curve.y[i] == doctest::Approx(expected_ced[i]).epsilon(1e-12));

    // trapezoidal mean of that staircase: ((0+0.1)/2 + ... + (0.9+0.9)/2) / 10
    double hand_auc = 0.0;
    for (size_t i = 0; i + 1 < expected_ced.size(); ++i)
        hand_auc += 0.5 * (expected_ced[i] + expected_ced[i + 1]) * 0.01;
    hand_auc /= threshold;
    CHECK(r.auc == doctest::Approx(hand_auc).epsilon(1e-12));
    CHECK(r.failure_rate == doctest::Approx(0.1).epsilon(1e-12));

    // CED is non-decreasing and failure = 1 - CED(threshold)
    for (size_t i = 1; i < r.curve.y.size(); ++i) CHECK(r.curve.y[i] >= r.curve.y[i - 1]);
    CHECK(r.failure_rate == doctest::Approx(1.0 - r.curve.y.back()).epsilon(1e-12));
}

TEST_CASE("csv output carries header metadata and rows") {
    MetricCurve curve;
    curve.metric = "compactness";
    curve.model_id = "demo";
    curve.sample_count = 3;
    curve.x = {1, 2};
    curve.y = {0.5, 1.0};
    std::ostringstream out;
    write_csv(out, curve);
    const std::string text = out.str();
    CHECK(text.find("# metric=compactness model=demo samples=3") != std::string::npos);
    CHECK(text.find("x,y") != std::string::npos);
    CHECK(text.find("1,0.5") != std::string::npos);
    CHECK(text.find("2,1") != std::string::npos);
}
