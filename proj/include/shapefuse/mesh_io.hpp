// OBJ and PLY readers/writers plus the landmark JSON sidecar format
// ({"label": vertex_index}).
//
// OBJ: ASCII v/f records, 1-based indices, polygons fan-triangulated.
// PLY: ascii or binary_little_endian, vertex element with x/y/z and a face
// element with a vertex_indices list. Writers emit double-precision
// coordinates so geometry round-trips exactly.

#pragma once

#include <filesystem>
#include <string>

#include "shapefuse/trimesh.hpp"

namespace shapefuse {

enum class PlyFormat { Ascii, BinaryLittleEndian };

TriMesh read_obj(const std::filesystem::path& path);
void write_obj(const std::filesystem::path& path, const TriMesh& mesh);

TriMesh read_ply(const std::filesystem::path& path);
void write_ply(const std::filesystem::path& path, const TriMesh& mesh,
               PlyFormat format = PlyFormat::BinaryLittleEndian);

/// Dispatch on extension (.obj/.ply). Attaches landmarks from a sidecar
/// "<stem>.landmarks.json" when one exists next to the mesh.
TriMesh load_mesh(const std::filesystem::path& path);
void save_mesh(const std::filesystem::path& path, const TriMesh& mesh);

LandmarkMap read_landmarks(const std::filesystem::path& path);
void write_landmarks(const std::filesystem::path& path, const LandmarkMap& landmarks);

std::filesystem::path landmark_sidecar_path(const std::filesystem::path& mesh_path);

} // namespace shapefuse
