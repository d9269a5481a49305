#include "jsa/cli/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace jsa::cli {

namespace {

constexpr char kMagic[8] = {'J', 'S', 'A', 'P', 'A', 'R', 'A', 'M'};
constexpr std::uint32_t kVersion = 1;
constexpr const char* kFormat = "jsa-checkpoint-1";

template <typename T>
void put(std::string& out, T v) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  const U bits = std::bit_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::vector<char>& raw, std::string where) : raw_(raw), where_(std::move(where)) {}

  template <typename T>
  T get() {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    need(sizeof(U));
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      bits |= static_cast<U>(static_cast<unsigned char>(raw_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return std::bit_cast<T>(bits);
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(raw_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == raw_.size(); }
  std::size_t remaining() const { return raw_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (raw_.size() - pos_ < n) throw IoError(where_ + ": truncated");
  }
  const std::vector<char>& raw_;
  std::string where_;
  std::size_t pos_ = 0;
};

std::vector<char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void dump(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

NamedArray from_tensor(std::string name, const Tensor& t) {
  return {std::move(name), t.shape(), t.values()};
}

void add_store(std::vector<NamedArray>& out, const std::string& prefix, const ParamStore& store) {
  for (const auto& [name, p] : store) {
    out.push_back(from_tensor(prefix + name, p.value));
    out.push_back(from_tensor(prefix + name + "/m1", p.moment1));
    out.push_back(from_tensor(prefix + name + "/m2", p.moment2));
  }
}

void add_chains(std::vector<NamedArray>& out, const std::string& prefix, const ChainStore& chains) {
  const LatentBatch& s = chains.samples();
  out.push_back(from_tensor(prefix + "/bits", s.bits));
  out.push_back(from_tensor(prefix + "/reals", s.reals));
  out.push_back({prefix + "/labels", {s.labels.size()}, {s.labels.begin(), s.labels.end()}});
  const auto& flags = chains.initialized_flags();
  out.push_back({prefix + "/init", {flags.size()}, {flags.begin(), flags.end()}});
}

std::string rng_text(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Rng rng_from_text(const std::string& text) {
  std::istringstream is(text);
  Rng rng;
  is >> rng;
  if (is.fail()) throw IoError("checkpoint: unreadable rng state");
  return rng;
}

std::uint64_t to_u64(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const std::uint64_t v = std::stoull(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw IoError("checkpoint manifest: bad value for " + key + ": '" + text + "'");
}

class Lookup {
 public:
  explicit Lookup(std::vector<NamedArray> entries) {
    for (auto& e : entries) {
      const std::string n = e.name;
      if (!map_.emplace(n, std::move(e)).second) throw IoError("checkpoint: duplicate entry " + n);
    }
  }
  const NamedArray& take(const std::string& name, const Shape* expected = nullptr) {
    auto it = map_.find(name);
    if (it == map_.end()) throw ConfigError("checkpoint: missing entry " + name);
    if (expected && it->second.shape != *expected) throw ConfigError("checkpoint: shape mismatch for " + name);
    used_.push_back(name);
    return it->second;
  }
  void check_all_used() const {
    if (used_.size() != map_.size()) throw ConfigError("checkpoint: contains entries this model does not have");
  }

 private:
  std::map<std::string, NamedArray> map_;
  std::vector<std::string> used_;
};

ParamStore restore_store(Lookup& lookup, const std::string& prefix, const ParamStore& current, std::uint64_t steps) {
  ParamStore next = current;
  for (auto& [name, p] : next) {
    p.value = Tensor(p.value.shape(), lookup.take(prefix + name, &p.value.shape()).data);
    p.moment1 = Tensor(p.value.shape(), lookup.take(prefix + name + "/m1", &p.value.shape()).data);
    p.moment2 = Tensor(p.value.shape(), lookup.take(prefix + name + "/m2", &p.value.shape()).data);
    p.grad = Tensor::zeros(p.value.shape());
  }
  next.step_count = steps;
  return next;
}

std::pair<LatentBatch, std::vector<char>> restore_chains(Lookup& lookup, const std::string& prefix,
                                                         const ChainStore& current) {
  LatentBatch s = current.samples();
  s.bits = Tensor(s.bits.shape(), lookup.take(prefix + "/bits", &s.bits.shape()).data);
  s.reals = Tensor(s.reals.shape(), lookup.take(prefix + "/reals", &s.reals.shape()).data);
  const Shape label_shape{s.labels.size()};
  const auto& labels = lookup.take(prefix + "/labels", &label_shape).data;
  s.labels.assign(labels.begin(), labels.end());
  const Shape flag_shape{current.size()};
  const auto& flags = lookup.take(prefix + "/init", &flag_shape).data;
  return {std::move(s), std::vector<char>(flags.begin(), flags.end())};
}

}  // namespace

void write_param_file(const std::filesystem::path& path, const std::vector<NamedArray>& entries) {
  std::string out(kMagic, sizeof kMagic);
  put(out, kVersion);
  put(out, static_cast<std::uint64_t>(entries.size()));
  for (const auto& e : entries) {
    std::size_t count = 1;
    for (auto d : e.shape) count *= d;
    if (count != e.data.size()) throw std::invalid_argument("write_param_file: shape/data mismatch for " + e.name);
    put(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) put(out, static_cast<std::uint64_t>(d));
    for (double v : e.data) put(out, v);
  }
  dump(path, out);
}

std::vector<NamedArray> read_param_file(const std::filesystem::path& path) {
  const std::vector<char> raw = slurp(path);
  Reader r(raw, path.string());
  if (r.bytes(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) throw IoError(path.string() + ": bad magic");
  if (r.get<std::uint32_t>() != kVersion) throw IoError(path.string() + ": unsupported version");
  const auto count = r.get<std::uint64_t>();
  std::vector<NamedArray> entries;
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedArray e;
    e.name = r.bytes(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      e.shape.push_back(r.get<std::uint64_t>());
      n *= e.shape.back();
    }
    if (n > r.remaining() / 8) throw IoError(path.string() + ": truncated");
    e.data.resize(n);
    for (auto& v : e.data) v = r.get<double>();
    entries.push_back(std::move(e));
  }
  if (!r.done()) throw IoError(path.string() + ": trailing bytes");
  return entries;
}

void write_manifest(const std::filesystem::path& path, const std::map<std::string, std::string>& entries) {
  std::string out;
  for (const auto& [k, v] : entries) {
    if (k.find(':') != std::string::npos || k.find('\n') != std::string::npos || v.find('\n') != std::string::npos) {
      throw std::invalid_argument("manifest entry not representable: " + k);
    }
    out += k + ": " + v + "\n";
  }
  dump(path, out);
}

std::map<std::string, std::string> read_manifest(const std::filesystem::path& path) {
  const std::vector<char> raw = slurp(path);
  std::istringstream is(std::string(raw.begin(), raw.end()));
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto sep = line.find(": ");
    if (sep == std::string::npos) throw IoError(path.string() + ": malformed line '" + line + "'");
    out[line.substr(0, sep)] = line.substr(sep + 2);
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& dir, const CheckpointRefs& refs) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  std::map<std::string, std::string> manifest;
  for (const auto& [k, v] : refs.identity) manifest["run." + k] = v;
  manifest["format"] = kFormat;
  manifest["iteration"] = std::to_string(refs.iteration);

  std::vector<NamedArray> entries;
  if (refs.gen) {
    manifest["latent_spec"] = refs.gen->latent_spec().to_string();
    manifest["generator"] = refs.gen->architecture();
    manifest["gen_steps"] = std::to_string(refs.gen->params().step_count);
    add_store(entries, "gen/", refs.gen->params());
  }
  if (refs.inf) {
    manifest["encoder"] = refs.inf->architecture();
    manifest["inf_steps"] = std::to_string(refs.inf->params().step_count);
    add_store(entries, "inf/", refs.inf->params());
  }
  if (refs.extra) {
    manifest["extra_steps"] = std::to_string(refs.extra->step_count);
    add_store(entries, "extra/", *refs.extra);
  }
  if (refs.unlabeled_chains) add_chains(entries, "chains.unlabeled", *refs.unlabeled_chains);
  if (refs.labeled_chains) add_chains(entries, "chains.labeled", *refs.labeled_chains);
  if (refs.unlabeled_chains || refs.labeled_chains) manifest["chain_spec"] = refs.chain_spec.to_string();
  if (refs.rng) manifest["rng"] = rng_text(*refs.rng);
  if (refs.eval_rng) manifest["eval_rng"] = rng_text(*refs.eval_rng);

  write_param_file(dir / "params.bin", entries);
  write_manifest(dir / "manifest.txt", manifest);
}

std::uint64_t load_checkpoint(const std::filesystem::path& dir, CheckpointRefs& refs) {
  const auto manifest = read_manifest(dir / "manifest.txt");
  auto field = [&](const std::string& key) -> const std::string& {
    auto it = manifest.find(key);
    if (it == manifest.end()) throw ConfigError("checkpoint: manifest has no " + key);
    return it->second;
  };
  auto expect = [&](const std::string& key, const std::string& want) {
    const std::string& have = field(key);
    if (have != want) throw ConfigError("checkpoint: " + key + " is '" + have + "', this run has '" + want + "'");
  };
  if (field("format") != kFormat) throw IoError("checkpoint: unknown format '" + field("format") + "'");
  for (const auto& [k, v] : refs.identity) expect("run." + k, v);
  if (refs.gen) {
    expect("latent_spec", refs.gen->latent_spec().to_string());
    expect("generator", refs.gen->architecture());
  }
  if (refs.inf) expect("encoder", refs.inf->architecture());
  if (refs.unlabeled_chains || refs.labeled_chains) expect("chain_spec", refs.chain_spec.to_string());

  Lookup lookup(read_param_file(dir / "params.bin"));
  std::optional<ParamStore> gen, inf, extra;
  if (refs.gen) gen = restore_store(lookup, "gen/", refs.gen->params(), to_u64("gen_steps", field("gen_steps")));
  if (refs.inf) inf = restore_store(lookup, "inf/", refs.inf->params(), to_u64("inf_steps", field("inf_steps")));
  if (refs.extra) extra = restore_store(lookup, "extra/", *refs.extra, to_u64("extra_steps", field("extra_steps")));
  std::optional<std::pair<LatentBatch, std::vector<char>>> uc, lc;
  if (refs.unlabeled_chains) uc = restore_chains(lookup, "chains.unlabeled", *refs.unlabeled_chains);
  if (refs.labeled_chains) lc = restore_chains(lookup, "chains.labeled", *refs.labeled_chains);
  lookup.check_all_used();
  std::optional<Rng> rng, eval_rng;
  if (refs.rng) rng = rng_from_text(field("rng"));
  if (refs.eval_rng) eval_rng = rng_from_text(field("eval_rng"));
  const std::uint64_t iteration = to_u64("iteration", field("iteration"));

  if (gen) refs.gen->params() = std::move(*gen);
  if (inf) refs.inf->params() = std::move(*inf);
  if (extra) *refs.extra = std::move(*extra);
  if (uc) refs.unlabeled_chains->restore(std::move(uc->first), std::move(uc->second));
  if (lc) refs.labeled_chains->restore(std::move(lc->first), std::move(lc->second));
  if (rng) *refs.rng = *rng;
  if (eval_rng) *refs.eval_rng = *eval_rng;
  refs.iteration = iteration;
  return iteration;
}

}  // namespace jsa::cli
