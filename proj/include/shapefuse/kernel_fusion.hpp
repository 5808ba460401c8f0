// Blending two model covariances into a single dense covariance over a
// template mesh. Per vertex pair, 3x3 blocks of the head and face covariances
// are looked up through barycentric embeddings on the respective mean meshes
// and mixed by a nose-tip-distance weight; pairs with at least one vertex
// outside the face region use the head covariance alone.

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "shapefuse/pdm.hpp"
#include "shapefuse/trimesh.hpp"

namespace shapefuse {

enum class Region : std::uint8_t { Face, HeadOnly };

struct RegionLabels {
    std::vector<Region> region;       // per template vertex
    Eigen::VectorXd nose_tip_distance;
    Eigen::VectorXd rho; // normalized blend weight: 0 at the nose tip, 1 at the face boundary
};

/// Label template vertices FACE iff their distance to the registered face
/// mean is <= cap. rho is the nose-tip distance divided by the largest
/// nose-tip distance among FACE vertices, clamped to [0,1].
RegionLabels classify_vertices(const TriMesh& template_mesh, const TriMesh& registered_face_mean,
                               double cap);

/// Barycentric blend of the nine 3x3 covariance blocks between the two
/// embedded triangles; weights (c_v^i + c_k^j)/2 sum to 3.
Mat3 blended_block(const Eigen::MatrixXd& model_cov, const TriMesh& mean_mesh, const SurfacePoint& emb_i,
                   const SurfacePoint& emb_j);

struct PsdRepairReport {
    double clipped_mass_ratio = 0.0; // |negative eigenvalue mass| / total absolute mass
    double min_eigenvalue_before = 0.0;
    double max_eigenvalue = 0.0;
};

/// Nearest PSD matrix in Frobenius norm: eigenvalues clipped at zero.
Eigen::MatrixXd psd_repair(const Eigen::MatrixXd& symmetric, PsdRepairReport* report = nullptr);

struct BlendProvenance {
    std::string head_model_id;
    std::string face_model_id;
    std::string blend_config;
};

/// Dense blended covariance over a template, symmetric and PSD (repaired).
class UniversalCovariance {
public:
    UniversalCovariance() = default;
    UniversalCovariance(Eigen::MatrixXd matrix, std::string template_id, BlendProvenance provenance,
                        double clipped_mass_ratio = 0.0);

    const Eigen::MatrixXd& matrix() const { return matrix_; }
    const std::string& template_id() const { return template_id_; }
    const BlendProvenance& provenance() const { return provenance_; }
    double clipped_mass_ratio() const { return clipped_mass_ratio_; }
    int n_vertices() const { return static_cast<int>(matrix_.rows() / 3); }

    /// Cached symmetric eigendecomposition, eigenvalues descending.
    const Eigen::VectorXd& eigenvalues() const;
    const Eigen::MatrixXd& eigenvectors() const;
    int numerical_rank(double rel_tol = 1e-12) const;

private:
    void ensure_eigensystem() const;

    Eigen::MatrixXd matrix_;
    std::string template_id_;
    BlendProvenance provenance_;
    double clipped_mass_ratio_ = 0.0;
    struct Eigensystem {
        Eigen::VectorXd values;
        Eigen::MatrixXd vectors;
    };
    mutable std::shared_ptr<const Eigensystem> eig_;
};

struct BlendOptions {
    int dense_cap_vertices = 2000;
    double embed_cap_fraction = 0.05; // of the mean-mesh bbox diagonal
    int jobs = 1;
    // per-block blending can break positive semidefiniteness; the repair is
    // applied by default but can be disabled to inspect the raw assembly
    bool apply_psd_repair = true;
};

UniversalCovariance build_universal_covariance(const ShapeModel& head_model, const TriMesh& head_mean_mesh,
                                               const ShapeModel& face_model,
                                               const TriMesh& face_mean_registered,
                                               const TriMesh& template_mesh, const RegionLabels& labels,
                                               const BlendOptions& options = {});

/// Draw a shape from the zero-mean GP: template plus sum of sqrt(mu_k) z_k
/// phi_k over the top-rank eigenpairs.
TriMesh sample_gpmm(const TriMesh& template_mesh, const UniversalCovariance& cov, int rank,
                    std::uint64_t rng_seed);

/// PCA-style shape model from a covariance: mean = template, basis/eigenvalues
/// from the top n_components eigenpairs (0 = numerical rank).
ShapeModel model_from_covariance(const TriMesh& template_mesh, const UniversalCovariance& cov,
                                 int n_components = 0);

} // namespace shapefuse
