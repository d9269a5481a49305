#pragma once

#include "jsa/cli/run_config.hpp"
#include "jsa/models.hpp"
#include "jsa/sa_mis.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace jsa::cli {

/// One entry of the flat parameter file.
struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> data;

  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

/// Layout: "JSAPARAM", u32 version, u64 count, then per entry u32 name
/// length, name bytes, u32 rank, u64 dims, f64 payload. All little-endian.
void write_param_file(const std::filesystem::path& path, const std::vector<NamedArray>& entries);
/// Throws IoError on a bad header, truncation or trailing bytes.
std::vector<NamedArray> read_param_file(const std::filesystem::path& path);

/// "key: value" lines, keys in sorted order.
void write_manifest(const std::filesystem::path& path, const std::map<std::string, std::string>& entries);
std::map<std::string, std::string> read_manifest(const std::filesystem::path& path);

/// Everything a training run needs to continue bit-exactly. Null members
/// are absent from the checkpoint.
struct CheckpointRefs {
  std::uint64_t iteration = 0;
  GenerativeModel* gen = nullptr;
  InferenceModel* inf = nullptr;
  ParamStore* extra = nullptr;  // models without the gen/inf pair (toy-sa)
  ChainStore* unlabeled_chains = nullptr;
  ChainStore* labeled_chains = nullptr;
  LatentSpec chain_spec;
  Rng* rng = nullptr;
  Rng* eval_rng = nullptr;
  /// Run identity written to the manifest and compared on load.
  std::map<std::string, std::string> identity;
};

/// Writes params.bin and manifest.txt into dir (created if needed).
void save_checkpoint(const std::filesystem::path& dir, const CheckpointRefs& refs);

/// Restores into refs and returns the checkpoint iteration. Throws
/// ConfigError when the checkpoint belongs to a different model or run
/// (latent spec, architecture, identity) and IoError on corrupt files.
std::uint64_t load_checkpoint(const std::filesystem::path& dir, CheckpointRefs& refs);

}  // namespace jsa::cli
