// PCA point-distribution models over meshes in dense correspondence:
// fitting, sampling, projection, dense covariance, truncation.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "shapefuse/trimesh.hpp"

namespace shapefuse {

using ShapeParams = Eigen::VectorXd;

/// Faces and landmark labels shared by every instance of a model.
struct MeshTopology {
    int n_vertices = 0;
    std::vector<Face> faces;
    LandmarkMap landmarks;

    static MeshTopology of(const TriMesh& mesh) {
        return {mesh.n_vertices(), mesh.faces(), mesh.landmarks()};
    }
    bool matches(const TriMesh& mesh) const {
        return mesh.n_vertices() == n_vertices && mesh.faces() == faces;
    }
};

/// Linear shape model: mean (3N), orthonormal basis (3N x n) and per-component
/// variances, non-increasing. Instances are mean + basis * params with the
/// interleaved coordinate ordering.
class ShapeModel {
public:
    ShapeModel() = default;
    ShapeModel(Eigen::VectorXd mean, Eigen::MatrixXd basis, Eigen::VectorXd eigenvalues,
               MeshTopology topology);

    int n_vertices() const { return topology_.n_vertices; }
    int n_components() const { return static_cast<int>(basis_.cols()); }
    const Eigen::VectorXd& mean() const { return mean_; }
    const Eigen::MatrixXd& basis() const { return basis_; }
    const Eigen::VectorXd& eigenvalues() const { return eigenvalues_; }
    const MeshTopology& topology() const { return topology_; }

    TriMesh mean_mesh() const { return TriMesh::from_flat(mean_, topology_.faces, topology_.landmarks); }

private:
    Eigen::VectorXd mean_;
    Eigen::MatrixXd basis_;
    Eigen::VectorXd eigenvalues_;
    MeshTopology topology_;
};

/// Denominator of the sample-covariance estimator. The unbiased 1/(n-1)
/// normalisation is used everywhere a covariance is estimated from data.
inline double sample_covariance_denominator(int n_samples) { return n_samples - 1.0; }

/// PCA via thin SVD of the centered data matrix. n_components = 0 keeps every
/// component above the numerical-rank floor (1e-12 * largest eigenvalue);
/// requesting more than the numerical rank is an error.
ShapeModel fit_pdm(const std::vector<TriMesh>& shapes, int n_components = 0);

TriMesh sample_shape(const ShapeModel& model, const ShapeParams& params);
ShapeParams project_shape(const ShapeModel& model, const TriMesh& shape);

/// Component k ~ Normal(0, eigenvalue_k). clamp_sigma > 0 truncates each
/// component at +-clamp_sigma standard deviations.
ShapeParams random_params(const ShapeModel& model, std::uint64_t rng_seed, double clamp_sigma = 0.0);

/// Dense 3N x 3N covariance, basis * diag(eigenvalues) * basis^T. Refuses
/// above dense_cap_rows (callers should stay on low-rank paths instead).
Eigen::MatrixXd model_covariance(const ShapeModel& model, int dense_cap_rows = 6000);

ShapeModel truncate_model(const ShapeModel& model, int k);

} // namespace shapefuse
