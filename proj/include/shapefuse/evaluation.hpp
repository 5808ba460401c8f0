// Intrinsic model metrics (compactness, generalization, specificity) and
// cumulative-error-distribution reporting (AUC, failure rate).

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "shapefuse/pdm.hpp"

namespace shapefuse {

struct MetricCurve {
    std::vector<double> x; // component counts or error thresholds, strictly increasing
    std::vector<double> y;
    std::string model_id;
    std::string metric;
    int sample_count = 0;
};

/// Cumulative explained-variance ratio per retained component count.
MetricCurve compactness(const ShapeModel& model, int max_components = 0);

/// Mean per-vertex distance between held-out shapes and their projections,
/// per component count.
MetricCurve generalization(const ShapeModel& model, const std::vector<TriMesh>& test_shapes,
                           const std::vector<int>& component_grid);

/// Bespoke variant: each test shape is projected on the sub-model matching
/// its cohort label; errors are averaged over all shapes.
MetricCurve generalization_bespoke(const std::map<std::string, ShapeModel>& models,
                                   const std::vector<std::pair<TriMesh, std::string>>& labeled_shapes,
                                   const std::vector<int>& component_grid);

/// Mean distance from randomly synthesized shapes to their nearest reference
/// shape, per component count. Nearest-reference search is brute force.
MetricCurve specificity(const ShapeModel& model, const std::vector<TriMesh>& reference_shapes,
                        const std::vector<int>& component_grid, int n_samples = 5000,
                        std::uint64_t rng_seed = 0);

struct CedResult {
    MetricCurve curve;        // CED over a uniform threshold grid on [0, threshold]
    double auc = 0.0;         // trapezoidal mean of the CED, in [0,1]
    double failure_rate = 0.0; // fraction of normalized errors above the threshold
};

/// Errors are divided by their per-item normalizers (e.g. inter-ocular
/// distances) before thresholding.
CedResult ced_auc(const std::vector<double>& per_item_errors, const std::vector<double>& normalizers,
                  double threshold, int grid_points = 1000);

/// Mean per-vertex Euclidean distance between two meshes in correspondence.
double mean_vertex_distance(const TriMesh& a, const TriMesh& b);

void write_csv(std::ostream& out, const MetricCurve& curve);

} // namespace shapefuse
