// Gaussian-process shape refinement: a piecewise-constant matrix-valued
// kernel backed by a dense covariance over a template mesh, posterior
// conditioning on observed deformations, ICP-style posterior refinement
// against raw scans, and rebuilding a PCA model from the reconstructions.
//
// Observations are deformation-field values at anchor points (anchors snap to
// the nearest template vertex). Conditioning subtracts the current mean at
// the anchors, so posteriors can be conditioned again consistently.

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "shapefuse/kernel_fusion.hpp"
#include "shapefuse/nicp.hpp"
#include "shapefuse/pdm.hpp"
#include "shapefuse/trimesh.hpp"

namespace shapefuse {

struct ObservationSet {
    Eigen::Matrix3Xd anchor_points; // on or near the template surface
    Eigen::Matrix3Xd deformations;  // observed deformation values at the anchors
    double noise_sigma2 = 0.0;
};

class GpSolverCache;

/// GP over deformations of a template: mean deformation at every template
/// vertex plus a dense covariance (lazily materialized for posteriors).
class GpModel {
public:
    GpModel() = default;
    GpModel(TriMesh template_mesh, std::shared_ptr<const Eigen::MatrixXd> covariance,
            Eigen::VectorXd mean_deformation = {});
    GpModel(TriMesh template_mesh, const UniversalCovariance& covariance);

    const TriMesh& template_mesh() const { return *template_; }
    const Eigen::VectorXd& mean_deformation() const { return mean_; }
    const Eigen::MatrixXd& covariance() const;
    std::shared_ptr<const Eigen::MatrixXd> covariance_ptr() const;
    int n_vertices() const { return template_->n_vertices(); }

    /// Template warped by the current mean deformation.
    TriMesh mean_shape() const;

    /// Closest-point vertex snap used by the kernel (lowest index on ties).
    int snap_to_vertex(const Vec3& x, double cap_fraction = 0.05) const;

private:
    friend GpModel gp_posterior(const GpModel&, const ObservationSet&, GpSolverCache*);

    struct Pending { // deferred posterior-covariance correction
        std::shared_ptr<const Eigen::MatrixXd> prior_cov;
        std::vector<int> anchors;
        double sigma2 = 0.0;
    };

    std::shared_ptr<const TriMesh> template_;
    std::shared_ptr<const ClosestPointQuery> cp_;
    Eigen::VectorXd mean_;
    mutable std::shared_ptr<const Eigen::MatrixXd> cov_;
    mutable std::optional<Pending> pending_;
};

/// Reusable factorizations of anchor systems (K[A,A] + sigma^2 I), keyed by
/// covariance identity, anchor set and noise. Safe for concurrent use.
class GpSolverCache {
public:
    struct System {
        std::vector<int> anchors;
        double sigma2 = 0.0;
        Eigen::MatrixXd eigvectors;
        Eigen::VectorXd eigvalues;
        Eigen::VectorXd filtered_inverse; // 1/lambda above the rank floor, else 0
        std::shared_ptr<const Eigen::MatrixXd> posterior_cov; // optional, filled on demand
    };

    std::shared_ptr<System> get(const Eigen::MatrixXd& cov, const std::vector<int>& anchors,
                                double sigma2);

private:
    using Key = std::tuple<const void*, std::vector<int>, double>;
    std::map<Key, std::shared_ptr<System>> systems_;
    std::mutex mutex_;
};

/// 3x3 kernel block at the closest-template-vertex pair of (x, y).
Mat3 kernel_eval(const GpModel& gp, const Vec3& x, const Vec3& y, double cap_fraction = 0.05);

/// Posterior after conditioning on the observation set. The posterior mean is
/// materialized at every template vertex; the posterior covariance stays lazy
/// until it is needed. With sigma2 = 0 a rank-revealing pseudo-solve is used;
/// inconsistent singular systems (e.g. conflicting duplicate anchors) fail.
GpModel gp_posterior(const GpModel& gp, const ObservationSet& observations,
                     GpSolverCache* cache = nullptr);

/// Observation set from matching landmark labels: anchors at template
/// landmark vertices, deformations scan_position - template_position.
GpModel landmark_posterior(const GpModel& gp, const LandmarkMap& template_landmarks,
                           const std::map<std::string, Vec3>& scan_landmarks, double sigma2,
                           GpSolverCache* cache = nullptr);

/// Default observation noise: 1e-4 times the mean per-coordinate prior variance.
double default_noise_sigma2(const GpModel& gp);

struct IcpOptions {
    int iterations = 10;
    double sigma2 = -1.0; // < 0: default_noise_sigma2 of the starting posterior
    CorrespondencePrune prune;
    double convergence_epsilon = 1e-5; // mean-motion stop, relative to scan bbox diagonal
};

struct IcpIterationStats {
    int iteration = 0;
    int retained = 0;
    double mean_residual = 0.0; // mean |closest point - current surface| over retained vertices
    double mean_move = 0.0;
    std::vector<int> anchors;         // retained template vertex ids
    std::vector<int> target_vertices; // nearest scan vertex per retained anchor
    Eigen::Matrix3Xd observations;    // deformations (closest scan point - template vertex)
};

struct IcpResult {
    TriMesh registered; // template + final posterior mean
    GpModel posterior;
    std::vector<IcpIterationStats> stats;
};

/// Posterior refinement against a scan: each iteration finds closest scan
/// points from the current mean shape, prunes, and reconditions the *initial*
/// posterior gp0 on the surviving deformations (never chained).
IcpResult icp_refine(const GpModel& gp0, const TriMesh& scan, const IcpOptions& options = {},
                     GpSolverCache* cache = nullptr);

struct RefineConfig {
    double landmark_sigma2 = -1.0; // < 0: default_noise_sigma2 of the prior
    IcpOptions icp;
    bool face_align = true; // non-rigidly align the face region to each scan
    NicpConfig face_align_nicp{.stiffness_schedule = {20.0, 5.0, 1.0},
                               .landmark_weight_schedule = {1.0, 0.3, 0.1},
                               .max_inner_iterations = 4};
    WeightScheme face_weight_scheme = WeightScheme::Gaussian;
    double face_weight_scale_fraction = 0.35;
    std::string nose_tip_label = "nose_tip";
    int refinement_rounds = 1; // sample-covariance re-estimation passes
    int n_components = 0;
    double max_skip_fraction = 0.1;
    int jobs = 1;
};

/// Truncate the covariance, reconstruct every scan with landmark + ICP GP
/// regression, re-estimate the sample covariance from the reconstructions,
/// rerun the regression pass, and fit a PCA model on the final results.
ShapeModel refine_model(const UniversalCovariance& cov, const TriMesh& template_mesh, int truncation_k,
                        const std::vector<TriMesh>& scans, const RefineConfig& config = {});

} // namespace shapefuse
