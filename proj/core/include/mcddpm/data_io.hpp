#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mcddpm/volume.hpp"

namespace mcddpm {

enum class Split { kTrain, kVal, kTest };

std::string to_string(Split s);
Split parse_split(const std::string& s);

/// One dataset entry. Training records never carry ground truth.
struct VolumeRecord {
    std::string subject_id;
    Split split = Split::kTrain;
    Volume volume;
    std::optional<BinaryMap> ground_truth;

    bool healthy() const { return !ground_truth.has_value(); }
};

/// Raw + sidecar interchange format. `<base>.raw` holds the payload
/// (32-bit little-endian floats, or uint8 {0,1} for masks) and `<base>.hdr`
/// is a plain-text sidecar:
///
///   dims: <h> <w> <d>
///   dtype: float32|uint8
///   spacing: <sx> <sy> <sz>
void write_volume(const std::filesystem::path& base, const Volume& v);
void write_mask(const std::filesystem::path& base, const BinaryMap& m);
Volume read_volume(const std::filesystem::path& base);
BinaryMap read_mask(const std::filesystem::path& base);

/// Dataset manifest: one comma-separated row per volume,
/// `subject_id,split,volume,ground_truth` with paths relative to the
/// manifest location (ground_truth may be empty).
struct ManifestEntry {
    std::string subject_id;
    Split split;
    std::string volume_path;
    std::string ground_truth_path;  // empty when absent
};

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& rows);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

/// Loads every manifest row eagerly. Throws data_error if a train row carries
/// ground truth or a referenced file is missing/malformed.
std::vector<VolumeRecord> load_dataset(const std::filesystem::path& manifest_path);

std::vector<const VolumeRecord*> select_split(const std::vector<VolumeRecord>& records, Split s);

}  // namespace mcddpm
