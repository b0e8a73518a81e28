#pragma once

#include "dalign/localization.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dalign {

struct ManifestRecord {
    std::size_t class_index = 0;
    /// As written in the manifest, relative to the manifest's directory.
    std::string feature_path;
    std::optional<BBox> bbox;
    std::optional<std::string> image_path;
    std::size_t line = 0;
};

// Text format, one production per line:
//   # comment                         (anywhere; blank lines ignored)
//   classes: N                        (first non-comment line)
//   split: train|val|test             (optional, before any record)
//   <class> <feature-path> [bbox x_min y_min x_max y_max] [image-path]
struct DatasetManifest {
    std::vector<std::string> classes;
    /// Record indices per class, in file order.
    std::vector<std::vector<std::size_t>> class_records;
    std::vector<ManifestRecord> records;
    std::string split;
    std::filesystem::path root;

    std::filesystem::path resolve(const ManifestRecord& record) const
    {
        return root / record.feature_path;
    }
    std::size_t add_class(const std::string& name);
    void add_record(ManifestRecord record);
};

/// Throws FormatError with the 1-based line number. When `check_files` is set
/// every feature path must exist under `root`.
DatasetManifest parse_manifest(std::string_view text, const std::filesystem::path& root,
                               bool check_files = true);

DatasetManifest load_manifest(const std::filesystem::path& path);

std::string format_manifest(const DatasetManifest& manifest);

/// Throws DomainError naming the first class present in both manifests.
void check_disjoint_splits(const DatasetManifest& a, const DatasetManifest& b);

} // namespace dalign
