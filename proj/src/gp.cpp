#include "shapefuse/gp.hpp"

#include <cmath>
#include <iostream>
#include <thread>

namespace shapefuse {

namespace {

// columns of K at the anchor vertices (3N x 3m)
Eigen::MatrixXd anchor_columns(const Eigen::MatrixXd& cov, const std::vector<int>& anchors) {
    Eigen::MatrixXd cols(cov.rows(), 3 * anchors.size());
    for (size_t k = 0; k < anchors.size(); ++k)
        cols.middleCols<3>(3 * k) = cov.middleCols<3>(3 * anchors[k]);
    return cols;
}

Eigen::MatrixXd anchor_system_matrix(const Eigen::MatrixXd& cov, const std::vector<int>& anchors,
                                     double sigma2) {
    const auto m = anchors.size();
    Eigen::MatrixXd sys(3 * m, 3 * m);
    for (size_t r = 0; r < m; ++r)
        for (size_t c = 0; c < m; ++c)
            sys.block<3, 3>(3 * r, 3 * c) = cov.block<3, 3>(3 * anchors[r], 3 * anchors[c]);
    sys.diagonal().array() += sigma2;
    return sys;
}

std::shared_ptr<GpSolverCache::System> make_system(const Eigen::MatrixXd& cov,
                                                   const std::vector<int>& anchors, double sigma2) {
    auto sys = std::make_shared<GpSolverCache::System>();
    sys->anchors = anchors;
    sys->sigma2 = sigma2;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(anchor_system_matrix(cov, anchors, sigma2));
    sys->eigvectors = eig.eigenvectors();
    sys->eigvalues = eig.eigenvalues();
    const double tol = 1e-12 * std::max(sys->eigvalues.maxCoeff(), 0.0);
    sys->filtered_inverse.resize(sys->eigvalues.size());
    for (int k = 0; k < sys->eigvalues.size(); ++k)
        sys->filtered_inverse[k] = sys->eigvalues[k] > tol ? 1.0 / sys->eigvalues[k] : 0.0;
    return sys;
}

// minimum-norm solve through the filtered eigensystem
Eigen::VectorXd system_solve(const GpSolverCache::System& sys, const Eigen::VectorXd& rhs) {
    return sys.eigvectors * (sys.filtered_inverse.asDiagonal() * (sys.eigvectors.transpose() * rhs));
}

bool system_rank_deficient(const GpSolverCache::System& sys) {
    return (sys.filtered_inverse.array() == 0.0).any();
}

} // namespace

GpModel::GpModel(TriMesh template_mesh, std::shared_ptr<const Eigen::MatrixXd> covariance,
                 Eigen::VectorXd mean_deformation)
    : template_(std::make_shared<TriMesh>(std::move(template_mesh))),
      cp_(std::make_shared<ClosestPointQuery>(*template_)), mean_(std::move(mean_deformation)),
      cov_(std::move(covariance)) {
    if (!cov_) throw std::invalid_argument("GpModel: null covariance");
    if (cov_->rows() != cov_->cols() || cov_->rows() != 3L * template_->n_vertices())
        throw std::invalid_argument("GpModel: covariance dimensions do not match the template");
    if (mean_.size() == 0) mean_ = Eigen::VectorXd::Zero(cov_->rows());
    if (mean_.size() != cov_->rows())
        throw std::invalid_argument("GpModel: mean deformation length does not match the template");
}

GpModel::GpModel(TriMesh template_mesh, const UniversalCovariance& covariance)
    : GpModel(std::move(template_mesh), std::make_shared<Eigen::MatrixXd>(covariance.matrix())) {}

const Eigen::MatrixXd& GpModel::covariance() const { return *covariance_ptr(); }

std::shared_ptr<const Eigen::MatrixXd> GpModel::covariance_ptr() const {
    if (!cov_) {
        const Pending& p = *pending_;
        auto sys = make_system(*p.prior_cov, p.anchors, p.sigma2);
        // correction = (C_A V f^1/2)(C_A V f^1/2)^T, symmetric by construction
        const Eigen::MatrixXd half = anchor_columns(*p.prior_cov, p.anchors) * sys->eigvectors *
                                     sys->filtered_inverse.cwiseSqrt().asDiagonal();
        cov_ = std::make_shared<Eigen::MatrixXd>(*p.prior_cov - half * half.transpose());
        pending_.reset();
    }
    return cov_;
}

TriMesh GpModel::mean_shape() const {
    return TriMesh::from_flat(template_->flatten() + mean_, template_->faces(), template_->landmarks());
}

int GpModel::snap_to_vertex(const Vec3& x, double cap_fraction) const {
    const auto [sp, dist] = cp_->closest(x);
    if (dist > cap_fraction * template_->bbox_diagonal())
        throw numerical_error("GpModel: point is too far from the template surface (distance " +
                              std::to_string(dist) + ")");
    return nearest_vertex(*template_, sp);
}

std::shared_ptr<GpSolverCache::System> GpSolverCache::get(const Eigen::MatrixXd& cov,
                                                          const std::vector<int>& anchors,
                                                          double sigma2) {
    const Key key{static_cast<const void*>(cov.data()), anchors, sigma2};
    {
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = systems_.find(key);
        if (it != systems_.end()) return it->second;
    }
    auto sys = make_system(cov, anchors, sigma2);
    std::lock_guard<std::mutex> lock(mutex_);
    auto [it, inserted] = systems_.emplace(key, std::move(sys));
    return it->second;
}

Mat3 kernel_eval(const GpModel& gp, const Vec3& x, const Vec3& y, double cap_fraction) {
    const int i = gp.snap_to_vertex(x, cap_fraction);
    const int j = gp.snap_to_vertex(y, cap_fraction);
    return gp.covariance().block<3, 3>(3 * i, 3 * j);
}

GpModel gp_posterior(const GpModel& gp, const ObservationSet& observations, GpSolverCache* cache) {
    const auto m = observations.anchor_points.cols();
    if (m == 0) throw std::invalid_argument("gp_posterior: empty observation set");
    if (observations.deformations.cols() != m)
        throw std::invalid_argument("gp_posterior: anchor/deformation count mismatch");
    if (observations.noise_sigma2 < 0.0)
        throw std::invalid_argument("gp_posterior: noise variance must be non-negative");

    std::vector<int> anchors(m);
    for (long k = 0; k < m; ++k) anchors[k] = gp.snap_to_vertex(observations.anchor_points.col(k));

    const std::shared_ptr<const Eigen::MatrixXd> prior = gp.covariance_ptr();
    const std::shared_ptr<GpSolverCache::System> system =
        cache ? cache->get(*prior, anchors, observations.noise_sigma2)
              : make_system(*prior, anchors, observations.noise_sigma2);

    // residual of the observed values against the current mean at the anchors
    Eigen::VectorXd rhs(3 * m);
    for (long k = 0; k < m; ++k)
        rhs.segment<3>(3 * k) =
            observations.deformations.col(k) - gp.mean_deformation().segment<3>(3 * anchors[k]);

    const Eigen::VectorXd alpha = system_solve(*system, rhs);
    if (system_rank_deficient(*system)) {
        const double scale = std::max({1.0, rhs.cwiseAbs().maxCoeff(),
                                       observations.deformations.cwiseAbs().maxCoeff()});
        const Eigen::VectorXd residual =
            anchor_system_matrix(*prior, anchors, observations.noise_sigma2) * alpha - rhs;
        if (residual.cwiseAbs().maxCoeff() > 1e-8 * scale)
            throw numerical_error("gp_posterior: singular observation system with inconsistent values "
                                  "(conflicting duplicate anchors?)");
    }

    GpModel result = gp;
    result.mean_ = gp.mean_deformation() + anchor_columns(*prior, anchors) * alpha;
    result.cov_ = nullptr;
    result.pending_ = GpModel::Pending{prior, std::move(anchors), observations.noise_sigma2};
    return result;
}

GpModel landmark_posterior(const GpModel& gp, const LandmarkMap& template_landmarks,
                           const std::map<std::string, Vec3>& scan_landmarks, double sigma2,
                           GpSolverCache* cache) {
    if (template_landmarks.empty())
        throw std::invalid_argument("landmark_posterior: no template landmarks given");
    ObservationSet obs;
    obs.noise_sigma2 = sigma2;
    obs.anchor_points.resize(3, template_landmarks.size());
    obs.deformations.resize(3, template_landmarks.size());
    long k = 0;
    for (const auto& [label, idx] : template_landmarks) {
        auto it = scan_landmarks.find(label);
        if (it == scan_landmarks.end())
            throw std::invalid_argument("landmark_posterior: scan lacks the landmark '" + label + "'");
        const Vec3 tpos = gp.template_mesh().vertex(idx);
        obs.anchor_points.col(k) = tpos;
        obs.deformations.col(k) = it->second - tpos;
        ++k;
    }
    return gp_posterior(gp, obs, cache);
}

double default_noise_sigma2(const GpModel& gp) {
    return 1e-4 * gp.covariance().trace() / static_cast<double>(gp.covariance().rows());
}

IcpResult icp_refine(const GpModel& gp0, const TriMesh& scan, const IcpOptions& options,
                     GpSolverCache* cache) {
    if (options.iterations < 1) throw std::invalid_argument("icp_refine: iterations must be >= 1");
    if (scan.n_faces() == 0) throw std::invalid_argument("icp_refine: empty scan");

    const ClosestPointQuery scan_cp(scan);
    const std::vector<char>& boundary = scan.boundary_vertices();
    const double bbox = scan.bbox_diagonal();
    const double max_distance =
        options.prune.max_distance >= 0.0 ? options.prune.max_distance : 0.05 * bbox;
    const double sigma2 = options.sigma2 >= 0.0 ? options.sigma2 : default_noise_sigma2(gp0);

    const TriMesh& tmesh = gp0.template_mesh();
    const int n = tmesh.n_vertices();

    IcpResult result;
    result.posterior = gp0;
    for (int it = 1; it <= options.iterations; ++it) {
        const Eigen::VectorXd& mean = result.posterior.mean_deformation();
        IcpIterationStats stats;
        stats.iteration = it;
        std::vector<Vec3> targets;
        for (int v = 0; v < n; ++v) {
            const Vec3 warped = tmesh.vertex(v) + mean.segment<3>(3 * v);
            const auto [sp, dist] = scan_cp.closest(warped);
            if (dist > max_distance) continue;
            const int tv = nearest_vertex(scan, sp);
            if (options.prune.drop_target_boundary && boundary[tv]) continue;
            stats.anchors.push_back(v);
            stats.target_vertices.push_back(tv);
            targets.push_back(scan.position(sp));
            stats.mean_residual += dist;
        }
        if (stats.anchors.empty())
            throw numerical_error("icp_refine: every correspondence was pruned at iteration " +
                                  std::to_string(it));
        stats.retained = static_cast<int>(stats.anchors.size());
        stats.mean_residual /= stats.retained;

        ObservationSet obs;
        obs.noise_sigma2 = sigma2;
        obs.anchor_points.resize(3, stats.retained);
        obs.deformations.resize(3, stats.retained);
        for (int k = 0; k < stats.retained; ++k) {
            obs.anchor_points.col(k) = tmesh.vertex(stats.anchors[k]);
            obs.deformations.col(k) = targets[k] - tmesh.vertex(stats.anchors[k]);
        }
        stats.observations = obs.deformations;

        // always reconditioned from gp0, never chained
        GpModel next = gp_posterior(gp0, obs, cache);
        for (int v = 0; v < n; ++v)
            stats.mean_move +=
                (next.mean_deformation().segment<3>(3 * v) - mean.segment<3>(3 * v)).norm();
        stats.mean_move /= n;
        result.posterior = std::move(next);
        result.stats.push_back(std::move(stats));
        if (result.stats.back().mean_move < options.convergence_epsilon * bbox) break;
    }
    result.registered = result.posterior.mean_shape();
    return result;
}

namespace {

// landmark labels present on both meshes, as (template map, scan positions)
std::pair<LandmarkMap, std::map<std::string, Vec3>> shared_landmarks(const TriMesh& tmesh,
                                                                     const TriMesh& scan) {
    LandmarkMap tlm;
    std::map<std::string, Vec3> slm;
    for (const auto& [label, idx] : tmesh.landmarks()) {
        if (scan.has_landmark(label)) {
            tlm[label] = idx;
            slm[label] = scan.landmark_position(label);
        }
    }
    return {tlm, slm};
}

} // namespace

ShapeModel refine_model(const UniversalCovariance& cov, const TriMesh& template_mesh, int truncation_k,
                        const std::vector<TriMesh>& scans, const RefineConfig& config) {
    if (scans.size() < 2) throw std::invalid_argument("refine_model: need at least 2 scans");
    if (truncation_k < 1 || truncation_k > cov.numerical_rank())
        throw std::invalid_argument("refine_model: truncation_k out of range (rank " +
                                    std::to_string(cov.numerical_rank()) + ")");
    if (3 * template_mesh.n_vertices() != cov.matrix().rows())
        throw std::invalid_argument("refine_model: template does not match the covariance");

    // (1) rebuild the covariance from the leading eigenpairs
    auto k_trunc = std::make_shared<Eigen::MatrixXd>(
        cov.eigenvectors().leftCols(truncation_k) *
        cov.eigenvalues().head(truncation_k).asDiagonal() *
        cov.eigenvectors().leftCols(truncation_k).transpose());

    GpSolverCache cache;
    const Eigen::VectorXd flat_template = template_mesh.flatten();

    auto reconstruct_all = [&](const GpModel& prior) {
        const double lm_sigma2 =
            config.landmark_sigma2 >= 0.0 ? config.landmark_sigma2 : default_noise_sigma2(prior);

        // landmark-posterior covariance is scan-independent: materialize once
        // by conditioning on zero deformations, then share it per scan
        std::shared_ptr<const Eigen::MatrixXd> gp0_cov;
        {
            auto [tlm, slm_dummy] = shared_landmarks(template_mesh, scans.front());
            if (tlm.size() < 3)
                throw std::invalid_argument("refine_model: scans share fewer than 3 landmark labels "
                                            "with the template");
            std::map<std::string, Vec3> zero;
            for (const auto& [label, idx] : tlm) zero[label] = template_mesh.vertex(idx);
            gp0_cov = landmark_posterior(prior, tlm, zero, lm_sigma2, &cache).covariance_ptr();
        }

        std::vector<TriMesh> recons(scans.size());
        std::vector<char> ok(scans.size(), 0);
        auto process = [&](size_t begin, size_t end) {
            for (size_t s = begin; s < end; ++s) {
                try {
                    auto [tlm, slm] = shared_landmarks(template_mesh, scans[s]);
                    if (tlm.size() < 3)
                        throw numerical_error("scan shares fewer than 3 landmarks with the template");
                    const Eigen::VectorXd mean0 =
                        landmark_posterior(prior, tlm, slm, lm_sigma2, &cache).mean_deformation();
                    const GpModel gp0(template_mesh, gp0_cov, mean0);
                    TriMesh recon = icp_refine(gp0, scans[s], config.icp, &cache).registered;
                    if (config.face_align) {
                        NicpConfig fa = config.face_align_nicp;
                        fa.per_vertex_weights = distance_weights(
                            recon, recon.landmark_position(config.nose_tip_label),
                            config.face_weight_scheme,
                            config.face_weight_scale_fraction * recon.bbox_diagonal());
                        // keep the cranium anchored to the GP reconstruction
                        fa.anchor_points = recon.vertices();
                        fa.anchor_weights = (1.0 - fa.per_vertex_weights.array()).max(0.0);
                        fa.landmark_pairs.clear();
                        for (const auto& [label, idx] : tlm)
                            fa.landmark_pairs.emplace_back(idx, scans[s].landmark_position(label));
                        fa.initial_procrustes = false;
                        recon = nicp_register(recon, scans[s], fa).deformed;
                    }
                    recons[s] = std::move(recon);
                    ok[s] = 1;
                } catch (const numerical_error& e) {
                    std::clog << "refine_model: scan " << s << " skipped (" << e.what() << ")\n";
                }
            }
        };
        const int jobs = std::max(1, config.jobs);
        if (jobs == 1) {
            process(0, scans.size());
        } else {
            std::vector<std::thread> workers;
            const size_t chunk = (scans.size() + jobs - 1) / jobs;
            for (int t = 0; t < jobs; ++t) {
                const size_t begin = t * chunk, end = std::min(scans.size(), begin + chunk);
                if (begin < end) workers.emplace_back(process, begin, end);
            }
            for (auto& w : workers) w.join();
        }

        std::vector<TriMesh> kept;
        for (size_t s = 0; s < scans.size(); ++s)
            if (ok[s]) kept.push_back(std::move(recons[s]));
        const size_t skipped = scans.size() - kept.size();
        if (static_cast<double>(skipped) > config.max_skip_fraction * static_cast<double>(scans.size()))
            throw numerical_error("refine_model: " + std::to_string(skipped) + " of " +
                                  std::to_string(scans.size()) + " scans failed");
        return kept;
    };

    // (2) reconstruct every scan with the truncated prior
    std::vector<TriMesh> recons = reconstruct_all(GpModel(template_mesh, k_trunc));

    // (3)+(4) re-estimate the sample covariance and rerun the regression pass
    for (int round = 0; round < config.refinement_rounds; ++round) {
        const int m = static_cast<int>(recons.size());
        Eigen::MatrixXd deforms(flat_template.size(), m);
        for (int s = 0; s < m; ++s) deforms.col(s) = recons[s].flatten() - flat_template;
        const Eigen::VectorXd mean_deform = deforms.rowwise().mean();
        deforms.colwise() -= mean_deform;
        auto k_new = std::make_shared<Eigen::MatrixXd>(deforms * deforms.transpose() /
                                                       sample_covariance_denominator(m));
        recons = reconstruct_all(GpModel(template_mesh, k_new, mean_deform));
    }

    // (5) PCA over the final reconstructions
    return fit_pdm(recons, config.n_components);
}

} // namespace shapefuse
