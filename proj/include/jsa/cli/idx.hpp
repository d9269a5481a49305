#pragma once

#include "jsa/cli/run_config.hpp"
#include "jsa/distributions.hpp"
#include "jsa/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace jsa::cli {

/// Raw contents of an IDX file with unsigned-byte payload.
struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> bytes;
};

/// Reads an IDX file of type 0x08 (unsigned byte), rank 1 or 3. Throws
/// IoError on a missing file, bad magic, unsupported type or truncation.
IdxArray read_idx(const std::filesystem::path& path);

void write_idx(const std::filesystem::path& path, const IdxArray& array);

enum class Binarize { none, threshold, stochastic };
Binarize parse_binarize(const std::string& s);

/// Images scaled by 1/255 into an [n, rows*cols] tensor, then binarized:
/// threshold keeps pixels >= 0.5, stochastic draws Bernoulli(pixel).
Tensor images_to_tensor(const IdxArray& images, Binarize mode, Rng& rng);

struct DigitSet {
  Tensor images;
  std::vector<std::size_t> labels;
};

/// Loads an image/label file pair and checks they agree in count.
DigitSet load_digits(const std::filesystem::path& images, const std::filesystem::path& labels, Binarize mode,
                     Rng& rng);

}  // namespace jsa::cli
