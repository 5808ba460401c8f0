#include "shapefuse/evaluation.hpp"

#include <cmath>
#include <limits>
#include <ostream>

#include "shapefuse/rng.hpp"

namespace shapefuse {

double mean_vertex_distance(const TriMesh& a, const TriMesh& b) {
    if (a.n_vertices() != b.n_vertices())
        throw std::invalid_argument("mean_vertex_distance: vertex counts differ");
    double sum = 0.0;
    for (int i = 0; i < a.n_vertices(); ++i) sum += (a.vertex(i) - b.vertex(i)).norm();
    return sum / a.n_vertices();
}

MetricCurve compactness(const ShapeModel& model, int max_components) {
    if (max_components == 0) max_components = model.n_components();
    if (max_components < 1 || max_components > model.n_components())
        throw std::invalid_argument("compactness: max_components out of range");
    MetricCurve curve;
    curve.metric = "compactness";
    const double total = model.eigenvalues().sum();
    double partial = 0.0;
    for (int m = 1; m <= max_components; ++m) {
        partial += model.eigenvalues()[m - 1];
        curve.x.push_back(m);
        curve.y.push_back(partial / total);
    }
    return curve;
}

namespace {

void check_grid(const std::vector<int>& grid, int n_components) {
    if (grid.empty()) throw std::invalid_argument("component grid is empty");
    for (size_t k = 0; k < grid.size(); ++k) {
        if (grid[k] < 1 || grid[k] > n_components)
            throw std::invalid_argument("component grid entry out of range");
        if (k > 0 && grid[k] <= grid[k - 1])
            throw std::invalid_argument("component grid must be strictly increasing");
    }
}

double projection_error(const ShapeModel& truncated, const TriMesh& shape) {
    return mean_vertex_distance(sample_shape(truncated, project_shape(truncated, shape)), shape);
}

} // namespace

MetricCurve generalization(const ShapeModel& model, const std::vector<TriMesh>& test_shapes,
                           const std::vector<int>& component_grid) {
    check_grid(component_grid, model.n_components());
    if (test_shapes.empty()) throw std::invalid_argument("generalization: no test shapes");
    MetricCurve curve;
    curve.metric = "generalization";
    curve.sample_count = static_cast<int>(test_shapes.size());
    for (int m : component_grid) {
        const ShapeModel truncated = truncate_model(model, m);
        double err = 0.0;
        for (const TriMesh& shape : test_shapes) err += projection_error(truncated, shape);
        curve.x.push_back(m);
        curve.y.push_back(err / test_shapes.size());
    }
    return curve;
}

MetricCurve generalization_bespoke(const std::map<std::string, ShapeModel>& models,
                                   const std::vector<std::pair<TriMesh, std::string>>& labeled_shapes,
                                   const std::vector<int>& component_grid) {
    if (models.empty()) throw std::invalid_argument("generalization_bespoke: no models");
    if (labeled_shapes.empty()) throw std::invalid_argument("generalization_bespoke: no test shapes");
    int min_components = std::numeric_limits<int>::max();
    for (const auto& [label, model] : models) min_components = std::min(min_components, model.n_components());
    check_grid(component_grid, min_components);
    for (const auto& [shape, cohort] : labeled_shapes)
        if (models.find(cohort) == models.end())
            throw std::invalid_argument("generalization_bespoke: no model for cohort '" + cohort + "'");

    MetricCurve curve;
    curve.metric = "generalization-bespoke";
    curve.sample_count = static_cast<int>(labeled_shapes.size());
    for (int m : component_grid) {
        std::map<std::string, ShapeModel> truncated;
        for (const auto& [label, model] : models) truncated.emplace(label, truncate_model(model, m));
        double err = 0.0;
        for (const auto& [shape, cohort] : labeled_shapes)
            err += projection_error(truncated.at(cohort), shape);
        curve.x.push_back(m);
        curve.y.push_back(err / labeled_shapes.size());
    }
    return curve;
}

MetricCurve specificity(const ShapeModel& model, const std::vector<TriMesh>& reference_shapes,
                        const std::vector<int>& component_grid, int n_samples, std::uint64_t rng_seed) {
    check_grid(component_grid, model.n_components());
    if (reference_shapes.empty()) throw std::invalid_argument("specificity: reference set is empty");
    if (n_samples < 1) throw std::invalid_argument("specificity: n_samples must be >= 1");
    for (const TriMesh& ref : reference_shapes)
        if (!model.topology().matches(ref))
            throw std::invalid_argument("specificity: reference shape topology mismatch");

    MetricCurve curve;
    curve.metric = "specificity";
    curve.sample_count = n_samples;
    for (size_t g = 0; g < component_grid.size(); ++g) {
        const ShapeModel truncated = truncate_model(model, component_grid[g]);
        double total = 0.0;
        for (int s = 0; s < n_samples; ++s) {
            const TriMesh sample =
                sample_shape(truncated, random_params(truncated, derive_seed(rng_seed, s, g)));
            double nearest = std::numeric_limits<double>::infinity();
            for (const TriMesh& ref : reference_shapes)
                nearest = std::min(nearest, mean_vertex_distance(sample, ref));
            total += nearest;
        }
        curve.x.push_back(component_grid[g]);
        curve.y.push_back(total / n_samples);
    }
    return curve;
}

CedResult ced_auc(const std::vector<double>& per_item_errors, const std::vector<double>& normalizers,
                  double threshold, int grid_points) {
    if (per_item_errors.size() != normalizers.size())
        throw std::invalid_argument("ced_auc: error/normalizer count mismatch");
    if (per_item_errors.empty()) throw std::invalid_argument("ced_auc: no items");
    if (!(threshold > 0.0)) throw std::invalid_argument("ced_auc: threshold must be positive");
    if (grid_points < 2) throw std::invalid_argument("ced_auc: need at least 2 grid points");

    std::vector<double> normalized(per_item_errors.size());
    for (size_t i = 0; i < per_item_errors.size(); ++i) {
        if (!(normalizers[i] > 0.0))
            throw std::invalid_argument("ced_auc: normalizers must be positive");
        normalized[i] = per_item_errors[i] / normalizers[i];
    }

    CedResult result;
    result.curve.metric = "ced";
    result.curve.sample_count = static_cast<int>(normalized.size());
    const double n = static_cast<double>(normalized.size());
    for (int g = 0; g < grid_points; ++g) {
        const double t = threshold * g / (grid_points - 1);
        int below = 0;
        for (double e : normalized)
            if (e <= t) ++below;
        result.curve.x.push_back(t);
        result.curve.y.push_back(below / n);
    }
    // trapezoidal mean of the CED over [0, threshold]
    double area = 0.0;
    for (int g = 0; g + 1 < grid_points; ++g)
        area += 0.5 * (result.curve.y[g] + result.curve.y[g + 1]) * (result.curve.x[g + 1] - result.curve.x[g]);
    result.auc = area / threshold;
    int failures = 0;
    for (double e : normalized)
        if (e > threshold) ++failures;
    result.failure_rate = failures / n;
    return result;
}

void write_csv(std::ostream& out, const MetricCurve& curve) {
    out << "# metric=" << curve.metric << " model=" << curve.model_id
        << " samples=" << curve.sample_count << '\n';
    out << "x,y\n";
    out.precision(17);
    for (size_t i = 0; i < curve.x.size(); ++i) out << curve.x[i] << ',' << curve.y[i] << '\n';
}

} // namespace shapefuse
