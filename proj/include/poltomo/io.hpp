#pragma once

// File formats.
//
// Tomogram sets live in a directory holding manifest.txt (key = value lines)
// and records.txt (one tab-separated record per grid direction). Density
// blocks and sphere functions are plain text too. Volumes use a little-endian
// binary layout:
//
//   offset  size  field
//   0       8     magic "PTVOLUME"
//   8       4     u32 format version (1)
//   12      12    3 x i32 dims (x, y, z)
//   24      24    3 x f64 origin
//   48      24    3 x f64 spacing
//   72      24    3 x f64 classical mean (Stokes units)
//   96      8     f64 photon scale
//   104     4     u32 metadata length L
//   108     L     metadata text, "key=value\n" lines sorted by key
//   108+L         dims product x f64 values, z fastest
//
// Doubles in text files are printed in the shortest form that parses back to
// the same bits, so write -> read -> write is byte-identical.

#include "poltomo/states.hpp"
#include "poltomo/tomography_exact.hpp"
#include "poltomo/tomography_radon.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace poltomo {

inline constexpr int kFormatVersion = 1;
inline constexpr char kVolumeMagic[8] = {'P', 'T', 'V', 'O', 'L', 'U', 'M', 'E'};

using Metadata = std::map<std::string, std::string>;

std::string format_double(double x);
// Whole-token parse; FormatError naming `what` on failure.
double parse_double(std::string_view s, std::string_view what);
std::int64_t parse_int(std::string_view s, std::string_view what);
std::uint64_t parse_uint(std::string_view s, std::string_view what);

// Writes to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

enum class TomogramKind { discrete, histogram };
std::string to_string(TomogramKind k);

// Reads only the manifest to find out what a tomogram directory holds.
TomogramKind peek_tomogram_kind(const std::filesystem::path& dir);

void write_tomogram_set(const std::filesystem::path& dir, const DiscreteTomogramSet& set);
void write_tomogram_set(const std::filesystem::path& dir, const HistogramTomogramSet& set);
DiscreteTomogramSet read_discrete_set(const std::filesystem::path& dir);
HistogramTomogramSet read_histogram_set(const std::filesystem::path& dir);

// In-memory encoders used by the writers (and by tests).
std::string encode_manifest(const DiscreteTomogramSet& set);
std::string encode_manifest(const HistogramTomogramSet& set);
std::string encode_records(const DiscreteTomogramSet& set);
std::string encode_records(const HistogramTomogramSet& set);

std::string encode_blocks(const PolarizationState& state, const Metadata& meta);
void write_blocks(const std::filesystem::path& path, const PolarizationState& state,
                  const Metadata& meta);
PolarizationState read_blocks(const std::filesystem::path& path, Metadata* meta = nullptr);

std::string encode_sphere_function(const SphereFunction& q, const Metadata& meta);
void write_sphere_function(const std::filesystem::path& path, const SphereFunction& q,
                           const Metadata& meta);
SphereFunction read_sphere_function(const std::filesystem::path& path, Metadata* meta = nullptr);

std::string encode_volume(const VolumeGrid& grid);
VolumeGrid decode_volume(std::string_view bytes);
void write_volume(const std::filesystem::path& path, const VolumeGrid& grid);
VolumeGrid read_volume(const std::filesystem::path& path);

}  // namespace poltomo
