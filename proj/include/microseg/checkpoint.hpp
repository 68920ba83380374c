#pragma once

#include <filesystem>

#include "microseg/model.hpp"

namespace microseg {

// Checkpoint container: 8-byte magic "MSEGCKPT", little-endian uint32 format
// version, uint32 JSON header length, the JSON header (config, class
// taxonomy, ordered tensor directory with names and shapes), then the tensor
// payloads in directory order as little-endian float32.
void save_checkpoint(const Model& model, const ClassTaxonomy& taxonomy,
                     const std::filesystem::path& path);

struct Checkpoint {
    Model model;
    ClassTaxonomy taxonomy;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

// NetConfig <-> JSON used by the header and by training configs.
std::string net_config_to_json(const NetConfig& config);
NetConfig net_config_from_json(const std::string& json_text);

}  // namespace microseg
