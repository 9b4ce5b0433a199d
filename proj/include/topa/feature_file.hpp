#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace topa {

/// Dense float32 feature container: header {dimension, encoder descriptor,
/// metadata, count} followed by count rows. An optional sidecar index maps
/// content hashes to row numbers.
struct FeatureFile {
    std::uint32_t dimension = 0;
    std::string descriptor;
    std::string metadata_json;  // free-form key/value header extension
    std::vector<std::vector<float>> rows;
};

void write_feature_file(const std::string& path, const FeatureFile& file);
FeatureFile read_feature_file(const std::string& path);

void write_feature_index(const std::string& path,
                         const std::unordered_map<std::string, std::uint64_t>& index);
std::unordered_map<std::string, std::uint64_t> read_feature_index(const std::string& path);

/// Bytes delivered by read_feature_file since the last reset. Used to assert
/// that blind evaluation never touches the feature cache.
std::uint64_t feature_io_bytes_read();
void reset_feature_io_bytes();

}  // namespace topa
