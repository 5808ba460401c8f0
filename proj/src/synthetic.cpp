#include "shapefuse/synthetic.hpp"

#include <cmath>
#include <numbers>

#include "shapefuse/rng.hpp"

namespace shapefuse {

namespace {

TriMesh make_ellipsoid(const WorldConfig& cfg) {
    const int rings = cfg.rings, segs = cfg.segments;
    if (rings < 3 || segs < 3) throw std::invalid_argument("generate_world: rings/segments too small");
    const int n = rings * segs + 2;
    Eigen::Matrix3Xd v(3, n);
    v.col(0) = Vec3(0, 0, cfg.radii.z()); // north pole = nose tip
    auto idx = [&](int i, int j) { return 1 + i * segs + (j % segs); };
    for (int i = 0; i < rings; ++i) {
        const double theta = std::numbers::pi * (i + 1) / (rings + 1);
        for (int j = 0; j < segs; ++j) {
            const double phi = 2.0 * std::numbers::pi * j / segs;
            v.col(idx(i, j)) = Vec3(cfg.radii.x() * std::sin(theta) * std::cos(phi),
                                    cfg.radii.y() * std::sin(theta) * std::sin(phi),
                                    cfg.radii.z() * std::cos(theta));
        }
    }
    v.col(n - 1) = Vec3(0, 0, -cfg.radii.z());

    std::vector<Face> faces;
    for (int j = 0; j < segs; ++j) faces.push_back({0, idx(0, j), idx(0, j + 1)});
    for (int i = 0; i + 1 < rings; ++i) {
        for (int j = 0; j < segs; ++j) {
            faces.push_back({idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)});
            faces.push_back({idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)});
        }
    }
    for (int j = 0; j < segs; ++j) faces.push_back({n - 1, idx(rings - 1, j + 1), idx(rings - 1, j)});

    auto nearest = [&](const Vec3& dir) {
        const Vec3 target = cfg.radii.asDiagonal() * dir.normalized();
        int best = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (int i = 0; i < n; ++i) {
            const double d = (v.col(i) - target).squaredNorm();
            if (d < bd) { bd = d; best = i; }
        }
        return best;
    };
    LandmarkMap lm;
    lm["nose_tip"] = 0;
    lm["back"] = n - 1;
    lm["left_eye"] = nearest(Vec3(-0.35, 0.25, 0.9));
    lm["right_eye"] = nearest(Vec3(0.35, 0.25, 0.9));
    lm["left_ear"] = nearest(Vec3(-1.0, 0.0, 0.05));
    lm["right_ear"] = nearest(Vec3(1.0, 0.0, 0.05));
    lm["chin"] = nearest(Vec3(0.0, -0.6, 0.75));
    lm["crown"] = nearest(Vec3(0.0, 1.0, 0.1));
    return TriMesh(std::move(v), std::move(faces), std::move(lm));
}

// Smooth radial displacement fields (spherical-harmonic-like polynomials of
// the normalized position, applied along the outward direction), mixed by a
// seeded matrix so different seeds produce different mode bases. Radial
// fields keep the population friendly to closest-point registration.
Eigen::MatrixXd raw_smooth_fields(const TriMesh& mesh, const Vec3& radii, int count,
                                  std::mt19937_64& engine) {
    const int n = mesh.n_vertices();
    constexpr int kPoolSize = 16;
    std::vector<Eigen::VectorXd> pool;
    for (int p = 0; p < kPoolSize; ++p) {
        Eigen::VectorXd field = Eigen::VectorXd::Zero(3 * n);
        for (int i = 0; i < n; ++i) {
            const Vec3 u = radii.asDiagonal().inverse() * mesh.vertex(i);
            const double x = u.x(), y = u.y(), z = u.z();
            const double polys[kPoolSize] = {1.0,         x,           y,          z,
                                             x * y,       y * z,       x * z,      x * x - y * y,
                                             3 * z * z - 1, x * y * z,  x * x * x,  y * y * y,
                                             z * z * z,   x * x * y,   y * y * z,  z * z * x};
            field.segment<3>(3 * i) = polys[p] * u.normalized();
        }
        pool.push_back(std::move(field));
    }
    if (count > kPoolSize)
        throw std::invalid_argument("generate_world: at most " + std::to_string(kPoolSize) +
                                    " modes per group");
    std::normal_distribution<double> unit(0.0, 1.0);
    Eigen::MatrixXd mix(pool.size(), count);
    for (int c = 0; c < count; ++c)
        for (size_t r = 0; r < pool.size(); ++r) mix(static_cast<int>(r), c) = unit(engine);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(3 * n, count);
    for (int c = 0; c < count; ++c)
        for (size_t r = 0; r < pool.size(); ++r) out.col(c) += mix(static_cast<int>(r), c) * pool[r];
    return out;
}

// Gram-Schmidt with re-orthogonalization against fixed columns and within
// the new block. Throws if a column is linearly dependent.
void orthonormalize_against(Eigen::MatrixXd& block, const std::vector<const Eigen::MatrixXd*>& fixed) {
    for (int c = 0; c < block.cols(); ++c) {
        const double initial = block.col(c).norm();
        for (int pass = 0; pass < 2; ++pass) {
            for (const Eigen::MatrixXd* f : fixed)
                block.col(c) -= *f * (f->transpose() * block.col(c));
            for (int p = 0; p < c; ++p)
                block.col(c) -= block.col(p) * block.col(p).dot(block.col(c));
        }
        const double norm = block.col(c).norm();
        if (norm < 1e-8 * std::max(initial, 1.0))
            throw numerical_error("generate_world: dependent mode field; vary the seed or mode counts");
        block.col(c) /= norm;
    }
}

} // namespace

SyntheticWorld generate_world(const WorldConfig& config, std::uint64_t rng_seed) {
    SyntheticWorld w;
    w.config = config;
    w.seed = rng_seed;
    w.head_template = make_ellipsoid(config);
    const int n = w.head_template.n_vertices();

    for (int i = 0; i < n; ++i)
        if (w.head_template.vertex(i).z() > config.face_z_fraction * config.radii.z())
            w.face_mask.push_back(i);
    if (w.face_mask.empty() || static_cast<int>(w.face_mask.size()) == n)
        throw std::invalid_argument("generate_world: face region must be a proper subset");

    // face template: restriction of the head template to the masked vertices
    std::vector<int> head_to_face(n, -1);
    for (size_t k = 0; k < w.face_mask.size(); ++k) head_to_face[w.face_mask[k]] = static_cast<int>(k);
    Eigen::Matrix3Xd fv(3, w.face_mask.size());
    for (size_t k = 0; k < w.face_mask.size(); ++k)
        fv.col(k) = w.head_template.vertex(w.face_mask[k]);
    std::vector<Face> ffaces;
    for (const Face& f : w.head_template.faces()) {
        if (head_to_face[f[0]] >= 0 && head_to_face[f[1]] >= 0 && head_to_face[f[2]] >= 0)
            ffaces.push_back({head_to_face[f[0]], head_to_face[f[1]], head_to_face[f[2]]});
    }
    LandmarkMap flm;
    for (const auto& [label, idx] : w.head_template.landmarks())
        if (head_to_face[idx] >= 0) flm[label] = head_to_face[idx];
    w.face_template = TriMesh(std::move(fv), std::move(ffaces), std::move(flm));

    const int nf = config.n_face_modes, nx = config.n_coupled_modes, nc = config.n_cranium_modes;
    const int nh = nf + nx + nc;
    const auto nf3 = 3L * static_cast<long>(w.face_mask.size());
    std::mt19937_64 engine = make_engine(derive_seed(rng_seed, 0xfacade));

    // restriction operator as an index list: head row -> face row
    std::vector<long> face_rows(nf3);
    for (size_t k = 0; k < w.face_mask.size(); ++k)
        for (int d = 0; d < 3; ++d) face_rows[3 * k + d] = 3L * w.face_mask[k] + d;

    // face modes: orthonormal smooth fields on the face vertices
    Eigen::MatrixXd face_raw = raw_smooth_fields(w.face_template, config.radii, nf, engine);
    orthonormalize_against(face_raw, {});
    w.face_modes = face_raw;

    // head modes: [face lifts | coupled | cranium-only], orthonormalized
    Eigen::MatrixXd lifts = Eigen::MatrixXd::Zero(3 * n, nf);
    for (long r = 0; r < nf3; ++r) lifts.row(face_rows[r]) = w.face_modes.row(r);

    Eigen::MatrixXd coupled = raw_smooth_fields(w.head_template, config.radii, nx, engine);
    orthonormalize_against(coupled, {&lifts});

    Eigen::MatrixXd cranium = raw_smooth_fields(w.head_template, config.radii, nc, engine);
    for (long r = 0; r < nf3; ++r) cranium.row(face_rows[r]).setZero(); // support off the face
    orthonormalize_against(cranium, {&coupled});

    w.head_modes.resize(3 * n, nh);
    w.head_modes << lifts, coupled, cranium;

    // coupling: solve (R H) W = F exactly, then add null-space components so
    // the cranium responds to the face latent too
    Eigen::MatrixXd rh(nf3, nh);
    for (long r = 0; r < nf3; ++r) rh.row(r) = w.head_modes.row(face_rows[r]);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(rh, Eigen::ComputeThinU | Eigen::ComputeFullV);
    const double tol = 1e-10 * svd.singularValues()[0];
    const int rank = static_cast<int>((svd.singularValues().array() > tol).count());
    Eigen::MatrixXd pinv_sv = Eigen::MatrixXd::Zero(nh, nh);
    for (int k = 0; k < rank; ++k) pinv_sv(k, k) = 1.0 / svd.singularValues()[k];
    const Eigen::MatrixXd particular =
        svd.matrixV() * pinv_sv.topLeftCorner(nh, rank) * svd.matrixU().leftCols(rank).transpose() *
        w.face_modes;
    const Eigen::MatrixXd null_basis = svd.matrixV().rightCols(nh - rank);

    std::normal_distribution<double> unit(0.0, 1.0);
    Eigen::MatrixXd psi(nh - rank, nf);
    for (int r = 0; r < psi.rows(); ++r)
        for (int c = 0; c < nf; ++c) psi(r, c) = config.coupling_strength * unit(engine);
    w.coupling_map = particular + null_basis * psi;

    w.head_to_face_map = w.face_modes.transpose() * rh;

    w.face_eigenvalues.resize(nf);
    for (int k = 0; k < nf; ++k)
        w.face_eigenvalues[k] = config.latent_sigma * config.latent_sigma * std::pow(config.latent_decay, k);
    w.head_eigenvalues.resize(nh);
    for (int k = 0; k < nh; ++k)
        w.head_eigenvalues[k] = 1.3 * config.latent_sigma * config.latent_sigma * std::pow(0.75, k);
    return w;
}

ShapeModel SyntheticWorld::head_model() const {
    return ShapeModel(head_template.flatten(), head_modes, head_eigenvalues,
                      MeshTopology::of(head_template));
}

ShapeModel SyntheticWorld::face_model() const {
    return ShapeModel(face_template.flatten(), face_modes, face_eigenvalues,
                      MeshTopology::of(face_template));
}

Eigen::MatrixXd SyntheticWorld::population_head_subspace() const {
    Eigen::MatrixXd span = head_modes * coupling_map;
    orthonormalize_against(span, {});
    return span;
}

TriMesh SyntheticWorld::crop_face_exact(const TriMesh& head) const {
    if (!MeshTopology::of(head_template).matches(head))
        throw std::invalid_argument("crop_face_exact: head is not in the world's head topology");
    Eigen::Matrix3Xd fv(3, face_mask.size());
    for (size_t k = 0; k < face_mask.size(); ++k) fv.col(k) = head.vertex(face_mask[k]);
    return face_template.with_vertices(std::move(fv));
}

Population sample_population(const SyntheticWorld& world, int n, std::uint64_t rng_seed) {
    if (n < 1) throw std::invalid_argument("sample_population: n must be >= 1");
    Population pop;
    const int nf = static_cast<int>(world.face_eigenvalues.size());
    pop.face_coeffs.resize(nf, n);
    pop.head_coeffs.resize(world.coupling_map.rows(), n);
    const Eigen::VectorXd flat_template = world.head_template.flatten();
    for (int s = 0; s < n; ++s) {
        std::mt19937_64 engine = make_engine(derive_seed(rng_seed, s));
        std::normal_distribution<double> unit(0.0, 1.0);
        Eigen::VectorXd pf(nf);
        for (int k = 0; k < nf; ++k) pf[k] = unit(engine) * std::sqrt(world.face_eigenvalues[k]);
        const Eigen::VectorXd ph = world.coupling_map * pf;
        pop.face_coeffs.col(s) = pf;
        pop.head_coeffs.col(s) = ph;
        TriMesh head = TriMesh::from_flat(flat_template + world.head_modes * ph,
                                          world.head_template.faces(), world.head_template.landmarks());
        pop.faces.push_back(world.crop_face_exact(head));
        pop.heads.push_back(std::move(head));
        pop.cohorts.push_back(pf[0] >= 0.0 ? "wide" : "narrow");
    }
    return pop;
}

} // namespace shapefuse
