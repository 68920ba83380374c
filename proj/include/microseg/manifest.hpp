#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "microseg/image.hpp"

namespace microseg {

// One dataset record: image/label pair plus metadata.
struct ManifestEntry {
    std::string image_path;
    std::string label_path;
    std::optional<double> um_per_px;
    std::vector<std::string> split_tags;
};

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);
void save_manifest(const std::vector<ManifestEntry>& entries,
                   const std::filesystem::path& path);

// In-memory image/label pair, scale already applied.
struct DatasetItem {
    Micrograph image;
    LabelMap labels;
    std::vector<std::string> split_tags;
};

// Loads every manifest entry; relative paths resolve against the manifest
// directory. Optionally applies local histogram equalization.
std::vector<DatasetItem> load_dataset(const std::filesystem::path& manifest_path,
                                      const ClassTaxonomy& taxonomy,
                                      bool equalize = true,
                                      int equalize_tile = 64,
                                      double equalize_clip = 0.01);

}  // namespace microseg
