#include "shapefuse/kernel_fusion.hpp"

#include <cmath>
#include <thread>

#include "shapefuse/rng.hpp"

namespace shapefuse {

RegionLabels classify_vertices(const TriMesh& template_mesh, const TriMesh& registered_face_mean,
                               double cap) {
    if (!template_mesh.has_landmark("nose_tip"))
        throw std::invalid_argument("classify_vertices: template lacks the nose_tip landmark");
    if (cap < 0.0) throw std::invalid_argument("classify_vertices: cap must be non-negative");

    const int n = template_mesh.n_vertices();
    const ClosestPointQuery face_cp(registered_face_mean);
    const Vec3 nose = template_mesh.landmark_position("nose_tip");

    RegionLabels labels;
    labels.region.resize(n);
    labels.nose_tip_distance.resize(n);
    labels.rho.resize(n);

    double max_face_dist = 0.0;
    for (int i = 0; i < n; ++i) {
        const double d_face = face_cp.closest(template_mesh.vertex(i)).second;
        labels.region[i] = d_face <= cap ? Region::Face : Region::HeadOnly;
        labels.nose_tip_distance[i] = (template_mesh.vertex(i) - nose).norm();
        if (labels.region[i] == Region::Face)
            max_face_dist = std::max(max_face_dist, labels.nose_tip_distance[i]);
    }
    const double denom = max_face_dist > 0.0 ? max_face_dist : 1.0;
    for (int i = 0; i < n; ++i)
        labels.rho[i] = std::min(1.0, labels.nose_tip_distance[i] / denom);
    return labels;
}

Mat3 blended_block(const Eigen::MatrixXd& model_cov, const TriMesh& mean_mesh, const SurfacePoint& emb_i,
                   const SurfacePoint& emb_j) {
    if (emb_i.face < 0 || emb_i.face >= mean_mesh.n_faces() || emb_j.face < 0 ||
        emb_j.face >= mean_mesh.n_faces())
        throw std::invalid_argument("blended_block: embedding references an invalid face");
    const Face& ti = mean_mesh.faces()[emb_i.face];
    const Face& tj = mean_mesh.faces()[emb_j.face];
    Mat3 acc = Mat3::Zero();
    double wsum = 0.0;
    for (int v = 0; v < 3; ++v) {
        for (int k = 0; k < 3; ++k) {
            const double w = 0.5 * (emb_i.barycentric[v] + emb_j.barycentric[k]);
            acc += w * model_cov.block<3, 3>(3 * ti[v], 3 * tj[k]);
            wsum += w;
        }
    }
    return acc / wsum;
}

Eigen::MatrixXd psd_repair(const Eigen::MatrixXd& symmetric, PsdRepairReport* report) {
    const double scale = symmetric.cwiseAbs().maxCoeff();
    if ((symmetric - symmetric.transpose()).cwiseAbs().maxCoeff() > 1e-8 * std::max(scale, 1.0))
        throw std::invalid_argument("psd_repair: input is not symmetric");
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(symmetric);
    const Eigen::VectorXd& values = eig.eigenvalues();
    double negative_mass = 0.0, total_mass = 0.0;
    for (int k = 0; k < values.size(); ++k) {
        total_mass += std::abs(values[k]);
        if (values[k] < 0.0) negative_mass += -values[k];
    }
    if (report) {
        report->clipped_mass_ratio = total_mass > 0.0 ? negative_mass / total_mass : 0.0;
        report->min_eigenvalue_before = values.minCoeff();
        report->max_eigenvalue = values.maxCoeff();
    }
    if (negative_mass == 0.0) return symmetric;
    const Eigen::VectorXd clipped = values.cwiseMax(0.0);
    Eigen::MatrixXd repaired = eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
    repaired = 0.5 * (repaired + repaired.transpose()).eval(); // exactly symmetric
    return repaired;
}

UniversalCovariance::UniversalCovariance(Eigen::MatrixXd matrix, std::string template_id,
                                         BlendProvenance provenance, double clipped_mass_ratio)
    : matrix_(std::move(matrix)), template_id_(std::move(template_id)),
      provenance_(std::move(provenance)), clipped_mass_ratio_(clipped_mass_ratio) {
    if (matrix_.rows() != matrix_.cols() || matrix_.rows() % 3 != 0)
        throw std::invalid_argument("UniversalCovariance: matrix must be square with 3N rows");
    const double scale = std::max(matrix_.cwiseAbs().maxCoeff(), 1.0);
    if ((matrix_ - matrix_.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale)
        throw std::invalid_argument("UniversalCovariance: matrix is not symmetric");
}

void UniversalCovariance::ensure_eigensystem() const {
    if (eig_) return;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(matrix_);
    auto sys = std::make_shared<Eigensystem>();
    // descending order, sign convention: largest-magnitude entry positive
    const auto n = solver.eigenvalues().size();
    sys->values.resize(n);
    sys->vectors.resize(n, n);
    for (long k = 0; k < n; ++k) {
        sys->values[k] = solver.eigenvalues()[n - 1 - k];
        Eigen::VectorXd v = solver.eigenvectors().col(n - 1 - k);
        int idx;
        v.cwiseAbs().maxCoeff(&idx);
        if (v[idx] < 0.0) v = -v;
        sys->vectors.col(k) = v;
    }
    eig_ = std::move(sys);
}

const Eigen::VectorXd& UniversalCovariance::eigenvalues() const {
    ensure_eigensystem();
    return eig_->values;
}

const Eigen::MatrixXd& UniversalCovariance::eigenvectors() const {
    ensure_eigensystem();
    return eig_->vectors;
}

int UniversalCovariance::numerical_rank(double rel_tol) const {
    const Eigen::VectorXd& values = eigenvalues();
    if (values.size() == 0 || values[0] <= 0.0) return 0;
    return static_cast<int>((values.array() > rel_tol * values[0]).count());
}

UniversalCovariance build_universal_covariance(const ShapeModel& head_model, const TriMesh& head_mean_mesh,
                                               const ShapeModel& face_model,
                                               const TriMesh& face_mean_registered,
                                               const TriMesh& template_mesh, const RegionLabels& labels,
                                               const BlendOptions& options) {
    const int n = template_mesh.n_vertices();
    if (n > options.dense_cap_vertices)
        throw std::invalid_argument("build_universal_covariance: template has " + std::to_string(n) +
                                    " vertices, above the dense cap of " +
                                    std::to_string(options.dense_cap_vertices));
    if (static_cast<int>(labels.region.size()) != n)
        throw std::invalid_argument("build_universal_covariance: labels do not match the template");
    if (!head_model.topology().matches(head_mean_mesh))
        throw std::invalid_argument("build_universal_covariance: head mean mesh topology mismatch");
    if (!face_model.topology().matches(face_mean_registered))
        throw std::invalid_argument("build_universal_covariance: face mean mesh topology mismatch");

    const Eigen::MatrixXd k_head = model_covariance(head_model);
    const Eigen::MatrixXd k_face = model_covariance(face_model);

    const ClosestPointQuery head_cp(head_mean_mesh);
    const ClosestPointQuery face_cp(face_mean_registered);
    std::vector<SurfacePoint> emb_head(n), emb_face(n);
    for (int i = 0; i < n; ++i) {
        emb_head[i] = barycentric_embed(head_cp, template_mesh.vertex(i), options.embed_cap_fraction);
        if (labels.region[i] == Region::Face)
            emb_face[i] = barycentric_embed(face_cp, template_mesh.vertex(i), options.embed_cap_fraction);
    }

    Eigen::MatrixXd k_u(3 * n, 3 * n);
    auto fill_rows = [&](int begin, int end) {
        for (int i = begin; i < end; ++i) {
            for (int j = i; j < n; ++j) {
                Mat3 block;
                if (labels.region[i] == Region::Face && labels.region[j] == Region::Face) {
                    const double rho = 0.5 * (labels.rho[i] + labels.rho[j]);
                    block = rho * blended_block(k_head, head_mean_mesh, emb_head[i], emb_head[j]) +
                            (1.0 - rho) * blended_block(k_face, face_mean_registered, emb_face[i], emb_face[j]);
                } else {
                    block = blended_block(k_head, head_mean_mesh, emb_head[i], emb_head[j]);
                }
                k_u.block<3, 3>(3 * i, 3 * j) = block;
                if (j != i) k_u.block<3, 3>(3 * j, 3 * i) = block.transpose();
            }
        }
    };
    const int jobs = std::max(1, options.jobs);
    if (jobs == 1) {
        fill_rows(0, n);
    } else {
        std::vector<std::thread> workers;
        const int chunk = (n + jobs - 1) / jobs;
        for (int t = 0; t < jobs; ++t) {
            const int begin = t * chunk, end = std::min(n, begin + chunk);
            if (begin < end) workers.emplace_back(fill_rows, begin, end);
        }
        for (auto& w : workers) w.join();
    }

    k_u = 0.5 * (k_u + k_u.transpose()).eval();
    PsdRepairReport report;
    if (options.apply_psd_repair) k_u = psd_repair(k_u, &report);

    BlendProvenance prov;
    prov.head_model_id = "head";
    prov.face_model_id = "face";
    return UniversalCovariance(std::move(k_u), "template", std::move(prov),
                               report.clipped_mass_ratio);
}

TriMesh sample_gpmm(const TriMesh& template_mesh, const UniversalCovariance& cov, int rank,
                    std::uint64_t rng_seed) {
    if (3 * template_mesh.n_vertices() != cov.matrix().rows())
        throw std::invalid_argument("sample_gpmm: template does not match the covariance dimensions");
    if (rank < 1 || rank > cov.numerical_rank())
        throw std::invalid_argument("sample_gpmm: rank " + std::to_string(rank) +
                                    " exceeds the numerical rank " +
                                    std::to_string(cov.numerical_rank()));
    std::mt19937_64 engine = make_engine(rng_seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    Eigen::VectorXd deformation = Eigen::VectorXd::Zero(cov.matrix().rows());
    for (int k = 0; k < rank; ++k)
        deformation += std::sqrt(cov.eigenvalues()[k]) * unit(engine) * cov.eigenvectors().col(k);
    return TriMesh::from_flat(template_mesh.flatten() + deformation, template_mesh.faces(),
                              template_mesh.landmarks());
}

ShapeModel model_from_covariance(const TriMesh& template_mesh, const UniversalCovariance& cov,
                                 int n_components) {
    const int rank = cov.numerical_rank();
    if (n_components == 0) n_components = rank;
    if (n_components < 1 || n_components > rank)
        throw std::invalid_argument("model_from_covariance: n_components exceeds the numerical rank " +
                                    std::to_string(rank));
    return ShapeModel(template_mesh.flatten(), cov.eigenvectors().leftCols(n_components),
                      cov.eigenvalues().head(n_components), MeshTopology::of(template_mesh));
}

} // namespace shapefuse
