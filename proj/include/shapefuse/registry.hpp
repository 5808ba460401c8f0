// On-disk artifact registry. Each entry is a directory with a manifest.json
// (kind, dimensions, per-file content hashes, format version) plus raw
// little-endian float64 blobs, so artifacts round-trip bit-exactly. Hashes
// are verified on load (FNV-1a 64, integrity only).

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "shapefuse/kernel_fusion.hpp"
#include "shapefuse/pdm.hpp"
#include "shapefuse/regression.hpp"

namespace shapefuse {

std::string fnv1a64_bytes(const void* data, std::size_t size);
std::string fnv1a64_file(const std::filesystem::path& path);

void write_f64_blob(const std::filesystem::path& path, const double* data, std::size_t count);
Eigen::MatrixXd read_f64_matrix(const std::filesystem::path& path, long rows, long cols);
Eigen::VectorXd read_f64_vector(const std::filesystem::path& path, long size);

class ModelRegistry {
public:
    explicit ModelRegistry(std::filesystem::path root);

    const std::filesystem::path& root() const { return root_; }
    std::vector<std::string> ids() const;
    bool contains(const std::string& id) const;
    std::string kind(const std::string& id) const;
    std::filesystem::path entry_dir(const std::string& id) const;

    void save_model(const std::string& id, const ShapeModel& model);
    ShapeModel load_model(const std::string& id) const;

    void save_covariance(const std::string& id, const UniversalCovariance& cov,
                         const TriMesh& template_mesh);
    std::pair<UniversalCovariance, TriMesh> load_covariance(const std::string& id) const;

    void save_regression_map(const std::string& id, const RegressionMap& map);
    RegressionMap load_regression_map(const std::string& id) const;

    /// Manifest with all file hashes verified against the blobs on disk.
    nlohmann::json manifest(const std::string& id) const;

    /// Order-stable digest over the entry's file hashes; suitable for
    /// reproducibility comparisons in run reports.
    std::string entry_hash(const std::string& id) const;

private:
    nlohmann::json start_manifest(const std::string& id, const std::string& kind) const;
    void add_file(nlohmann::json& manifest, const std::string& id, const std::string& name,
                  const std::filesystem::path& relative) const;
    void finish_manifest(const std::string& id, const nlohmann::json& manifest) const;

    std::filesystem::path root_;
};

} // namespace shapefuse
