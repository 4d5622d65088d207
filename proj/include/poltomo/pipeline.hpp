#pragma once

// Pipeline configuration and the simulate / symmetrize / reconstruct /
// analyze steps. Each step reads and writes files so it can run on its own.

#include "poltomo/io.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace poltomo {

struct StateConfig {
    // False when the config had no state block and the defaults below apply.
    bool specified = false;
    // coherent_two_mode | su2_coherent | kerr_squeezed_gaussian | explicit_blocks
    std::string model = "su2_coherent";
    cplx alpha_h{1.0, 0.0};
    cplx alpha_v{0.0, 0.0};
    int two_j_cutoff = 400;
    int two_j = 4;
    Direction direction{0.0, 0.0};
    KerrSqueezingParams kerr;
    std::vector<DensityBlock> blocks;

    bool gaussian() const { return model == "kerr_squeezed_gaussian"; }
};

struct ScanConfig {
    // auto | quarter | full | gauss_legendre. auto picks the exact quadrature
    // grid for discrete states and a 65x64 quarter scan for Gaussian ones.
    std::string grid = "auto";
    int n_theta = 0;
    int n_phi = 0;
    std::uint64_t samples = 0;  // 0: noise-free probabilities (discrete states only)
    std::uint64_t seed = 1;
    SidebandOptions sideband;
    ReflectionRule reflection = ReflectionRule::mirror_y;
    bool totals = false;
};

struct ReconstructionConfig {
    std::string path = "exact";  // exact | radon
    int n_omega = 0;             // 0: 2 (2 Jmax + 1)
    bool clip_negative = false;
    double smoothing = 0.2;  // shot-noise units
    std::array<int, 3> dims{101, 101, 101};
    // Grid half-extent per axis; empty: extent_sigmas x the fitted spread.
    std::optional<Vec3> half_extent;
    double extent_sigmas = 5.0;
    double scale = 1.0;
};

struct AnalysisConfig {
    double level = 0.5;
    TangentGridSpec sphere;
    int q_theta = 33;
    int q_phi = 64;
};

struct PipelineConfig {
    StateConfig state;
    ScanConfig scan;
    ReconstructionConfig reconstruction;
    AnalysisConfig analysis;

    // Effective configuration with every default filled in; hashed.
    nlohmann::json to_json() const;
    std::string hash() const;
};

// Unknown keys and wrong types are ConfigErrors.
PipelineConfig parse_config(const nlohmann::json& j);
// "a.b.c=value"; value is read as JSON when it parses, else as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);
PipelineConfig load_config(const std::optional<std::filesystem::path>& file,
                           const std::vector<std::string>& overrides);

// 64-bit FNV-1a, hex.
std::string fnv1a_hex(std::string_view bytes);

// Thread count from the request, else POLTOMO_THREADS, else the runtime default.
int configure_threads(std::optional<int> requested);

PolarizationState build_state(const StateConfig& cfg);
GaussianStokesModel build_gaussian(const StateConfig& cfg);
AngleGrid build_scan_grid(const PipelineConfig& cfg);

// Each returns the files it wrote.
std::vector<std::filesystem::path> cmd_simulate(const PipelineConfig& cfg,
                                                const std::filesystem::path& out_dir);
std::vector<std::filesystem::path> cmd_symmetrize(const PipelineConfig& cfg,
                                                  const std::filesystem::path& in_dir,
                                                  const std::filesystem::path& out_dir);
// Writes blocks.txt (exact) or volume.ptv (radon), plus report.txt and
// timing.txt. report.txt is deterministic; timing.txt is not.
std::vector<std::filesystem::path> cmd_reconstruct(const PipelineConfig& cfg,
                                                   const std::filesystem::path& in_dir,
                                                   const std::filesystem::path& out_dir);
// Input is a reconstruction directory or a single blocks / volume file.
std::vector<std::filesystem::path> cmd_analyze(const PipelineConfig& cfg,
                                               const std::filesystem::path& input,
                                               const std::filesystem::path& out_dir);

}  // namespace poltomo
