#include "jsa/cli/idx.hpp"

#include <fstream>
#include <iterator>

namespace jsa::cli {

namespace {

std::uint32_t be32(const std::vector<std::uint8_t>& raw, std::size_t at) {
  return (std::uint32_t{raw[at]} << 24) | (std::uint32_t{raw[at + 1]} << 16) | (std::uint32_t{raw[at + 2]} << 8) |
         std::uint32_t{raw[at + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

}  // namespace

IdxArray read_idx(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open IDX file " + path.string());
  const std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string() + ": ";
  if (raw.size() < 4) throw IoError(where + "truncated header");
  if (raw[0] != 0 || raw[1] != 0) throw IoError(where + "bad magic");
  if (raw[2] != 0x08) throw IoError(where + "unsupported element type (only unsigned byte)");
  const std::size_t rank = raw[3];
  if (rank != 1 && rank != 3) throw IoError(where + "unsupported rank " + std::to_string(rank));
  const std::size_t header = 4 + 4 * rank;
  if (raw.size() < header) throw IoError(where + "truncated header");

  IdxArray a;
  std::uint64_t count = 1;
  for (std::size_t d = 0; d < rank; ++d) {
    a.dims.push_back(be32(raw, 4 + 4 * d));
    count *= a.dims.back();
  }
  if (raw.size() - header < count) throw IoError(where + "truncated payload");
  if (raw.size() - header > count) throw IoError(where + "trailing bytes after payload");
  a.bytes.assign(raw.begin() + static_cast<std::ptrdiff_t>(header), raw.end());
  return a;
}

void write_idx(const std::filesystem::path& path, const IdxArray& array) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const char magic[4] = {0, 0, 0x08, static_cast<char>(array.dims.size())};
  out.write(magic, 4);
  for (std::uint32_t d : array.dims) put_be32(out, d);
  out.write(reinterpret_cast<const char*>(array.bytes.data()), static_cast<std::streamsize>(array.bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Binarize parse_binarize(const std::string& s) {
  if (s == "none") return Binarize::none;
  if (s == "threshold") return Binarize::threshold;
  if (s == "stochastic") return Binarize::stochastic;
  throw ConfigError("data.binarize: unknown mode '" + s + "'");
}

Tensor images_to_tensor(const IdxArray& images, Binarize mode, Rng& rng) {
  if (images.dims.size() != 3) throw IoError("image file must have rank 3");
  const std::size_t n = images.dims[0], d = std::size_t{images.dims[1]} * images.dims[2];
  Tensor x = Tensor::zeros({n, d});
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t i = 0; i < n * d; ++i) {
    const double v = images.bytes[i] / 255.0;
    switch (mode) {
      case Binarize::none: x[i] = v; break;
      case Binarize::threshold: x[i] = v >= 0.5 ? 1.0 : 0.0; break;
      case Binarize::stochastic: x[i] = unif(rng) < v ? 1.0 : 0.0; break;
    }
  }
  return x;
}

DigitSet load_digits(const std::filesystem::path& images, const std::filesystem::path& labels, Binarize mode,
                     Rng& rng) {
  const IdxArray img = read_idx(images);
  const IdxArray lab = read_idx(labels);
  if (img.dims.size() != 3) throw IoError(images.string() + ": expected rank 3");
  if (lab.dims.size() != 1) throw IoError(labels.string() + ": expected rank 1");
  if (img.dims[0] != lab.dims[0]) {
    throw IoError(images.string() + ": " + std::to_string(img.dims[0]) + " images but " +
                  std::to_string(lab.dims[0]) + " labels");
  }
  DigitSet s;
  s.images = images_to_tensor(img, mode, rng);
  s.labels.assign(lab.bytes.begin(), lab.bytes.end());
  return s;
}

}  // namespace jsa::cli
