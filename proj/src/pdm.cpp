#include "shapefuse/pdm.hpp"

#include <cmath>

#include "shapefuse/rng.hpp"

namespace shapefuse {

ShapeModel::ShapeModel(Eigen::VectorXd mean, Eigen::MatrixXd basis, Eigen::VectorXd eigenvalues,
                       MeshTopology topology)
    : mean_(std::move(mean)), basis_(std::move(basis)), eigenvalues_(std::move(eigenvalues)),
      topology_(std::move(topology)) {
    const auto rows = 3L * topology_.n_vertices;
    if (mean_.size() != rows || basis_.rows() != rows)
        throw std::invalid_argument("ShapeModel: mean/basis rows do not match topology vertex count");
    if (basis_.cols() != eigenvalues_.size())
        throw std::invalid_argument("ShapeModel: eigenvalue count does not match basis columns");
    for (int k = 0; k < eigenvalues_.size(); ++k) {
        if (!(eigenvalues_[k] > 0.0))
            throw std::invalid_argument("ShapeModel: eigenvalues must be strictly positive");
        if (k > 0 && eigenvalues_[k] > eigenvalues_[k - 1] * (1.0 + 1e-12))
            throw std::invalid_argument("ShapeModel: eigenvalues must be non-increasing");
    }
    const Eigen::MatrixXd gram = basis_.transpose() * basis_;
    if ((gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff() > 1e-8)
        throw std::invalid_argument("ShapeModel: basis columns are not orthonormal");
}

ShapeModel fit_pdm(const std::vector<TriMesh>& shapes, int n_components) {
    const int n_samples = static_cast<int>(shapes.size());
    if (n_samples < 2) throw std::invalid_argument("fit_pdm: need at least 2 shapes");
    const MeshTopology topology = MeshTopology::of(shapes.front());
    for (const TriMesh& s : shapes)
        if (!topology.matches(s)) throw std::invalid_argument("fit_pdm: topology mismatch across shapes");

    const auto rows = 3L * topology.n_vertices;
    const int max_components = static_cast<int>(std::min<long>(n_samples - 1, rows));
    if (n_components < 0 || n_components > max_components)
        throw std::invalid_argument("fit_pdm: n_components out of range (max " +
                                    std::to_string(max_components) + ")");

    Eigen::MatrixXd data(rows, n_samples);
    double input_scale = 1.0;
    for (int i = 0; i < n_samples; ++i) {
        data.col(i) = shapes[i].flatten();
        input_scale = std::max(input_scale, data.col(i).norm());
    }
    const Eigen::VectorXd mean = data.rowwise().mean();
    data.colwise() -= mean;

    Eigen::BDCSVD<Eigen::MatrixXd> svd(data, Eigen::ComputeThinU);
    const Eigen::VectorXd sigma = svd.singularValues();
    Eigen::VectorXd lambda = sigma.array().square() / sample_covariance_denominator(n_samples);

    if (lambda.size() == 0 || lambda[0] <= 1e-24 * input_scale * input_scale)
        throw numerical_error("fit_pdm: degenerate data (all eigenvalues vanish; identical shapes?)");

    // numerical-rank floor
    const double floor = 1e-12 * lambda[0];
    int rank = 0;
    while (rank < lambda.size() && rank < max_components && lambda[rank] > floor && lambda[rank] > 0.0)
        ++rank;
    if (rank == 0)
        throw numerical_error("fit_pdm: degenerate data (all eigenvalues vanish; identical shapes?)");
    if (n_components > rank)
        throw numerical_error("fit_pdm: requested " + std::to_string(n_components) +
                              " components but numerical rank is " + std::to_string(rank));
    const int keep = n_components == 0 ? rank : n_components;

    Eigen::MatrixXd basis = svd.matrixU().leftCols(keep);
    // sign convention: the entry of largest magnitude in each column is positive
    for (int k = 0; k < keep; ++k) {
        int idx;
        basis.col(k).cwiseAbs().maxCoeff(&idx);
        if (basis(idx, k) < 0.0) basis.col(k) = -basis.col(k);
    }
    return ShapeModel(mean, std::move(basis), lambda.head(keep), topology);
}

TriMesh sample_shape(const ShapeModel& model, const ShapeParams& params) {
    if (params.size() != model.n_components())
        throw std::invalid_argument("sample_shape: parameter length mismatch");
    const Eigen::VectorXd flat = model.mean() + model.basis() * params;
    return TriMesh::from_flat(flat, model.topology().faces, model.topology().landmarks);
}

ShapeParams project_shape(const ShapeModel& model, const TriMesh& shape) {
    if (!model.topology().matches(shape))
        throw std::invalid_argument("project_shape: topology mismatch");
    return model.basis().transpose() * (shape.flatten() - model.mean());
}

ShapeParams random_params(const ShapeModel& model, std::uint64_t rng_seed, double clamp_sigma) {
    std::mt19937_64 engine = make_engine(rng_seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    ShapeParams p(model.n_components());
    for (int k = 0; k < p.size(); ++k) {
        double z = unit(engine);
        if (clamp_sigma > 0.0) z = std::clamp(z, -clamp_sigma, clamp_sigma);
        p[k] = z * std::sqrt(model.eigenvalues()[k]);
    }
    return p;
}

Eigen::MatrixXd model_covariance(const ShapeModel& model, int dense_cap_rows) {
    const auto rows = model.basis().rows();
    if (rows > dense_cap_rows)
        throw std::invalid_argument("model_covariance: " + std::to_string(rows) +
                                    " rows exceed the dense cap of " + std::to_string(dense_cap_rows) +
                                    "; use the low-rank basis/eigenvalue form instead");
    return model.basis() * model.eigenvalues().asDiagonal() * model.basis().transpose();
}

ShapeModel truncate_model(const ShapeModel& model, int k) {
    if (k < 1 || k > model.n_components())
        throw std::invalid_argument("truncate_model: k out of range");
    return ShapeModel(model.mean(), model.basis().leftCols(k), model.eigenvalues().head(k),
                      model.topology());
}

} // namespace shapefuse
