#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "armp/phantom.hpp"

namespace armp::phantom {

/// P4DC scan container (little-endian):
///   magic "P4DC", u16 version=1, u16 T, u16 H, u16 W,
///   f32 spacing_row_mm, f32 spacing_col_mm,
///   then per phase: H*W f32 intensities, H*W u8 labels.
/// Patient id travels in the filename / manifest, not in the payload.
void write_scan(const ScanSequence& scan, const std::filesystem::path& path);
ScanSequence read_scan(const std::filesystem::path& path);

struct ManifestEntry {
  std::string patient_id;
  std::string split;  // "train" | "test"
};

/// Plain-text manifest: one "<patient_id>\t<split>" line per scan; the scan
/// file is <patient_id>.p4dc next to the manifest.
void write_manifest(const std::vector<ManifestEntry>& entries,
                    const std::filesystem::path& path);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

/// Atomic write helper shared by every producer: write <path>.tmp, rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace armp::phantom
