#pragma once

#include "jsa/jsa_trainer.hpp"
#include "jsa/sa_mis.hpp"
#include "jsa/vae_baseline.hpp"

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace jsa::cli {

/// Bad configuration; the message starts with the offending key.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Filesystem or format failure while reading or writing run artifacts.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ValueKind { unsigned_int, real, boolean, text };

using Value = std::variant<std::uint64_t, double, bool, std::string>;

struct FieldSpec {
  std::string key;  // "section.name" or a top-level "name"
  ValueKind kind;
  Value fallback;
  std::string help;
};

/// Every accepted key with its type and global default.
const std::vector<FieldSpec>& config_schema();

/// Experiments with a preset: fa, gmm, cfg, semi-digits, toy-sa.
const std::vector<std::string>& experiment_ids();

/// Validated run configuration. Values not set by the document come from the
/// experiment preset, then from the schema default.
class RunConfig {
 public:
  const std::string& experiment() const { return experiment_; }
  std::uint64_t seed() const { return get_uint("seed"); }

  std::uint64_t get_uint(const std::string& key) const;
  double get_real(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  const std::string& get_text(const std::string& key) const;
  const std::map<std::string, Value>& values() const { return values_; }

  /// Sets a key from its text form (as in --override key=value) and
  /// revalidates.
  void set(const std::string& key, const std::string& text);

  SAConfig sa() const;
  NoiseSchedule proposal_noise() const;
  SemiConfig semi() const;
  JsaConfig jsa() const;
  VaeConfig vae() const;
  std::vector<std::size_t> widths(const std::string& key) const;

  void validate() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;

 private:
  friend RunConfig parse_config(const std::string&, const std::vector<std::string>&,
                                const std::map<std::string, std::string>&);
  std::string experiment_;
  std::map<std::string, Value> values_;
};

/// Parses a JSON document whose values are scalars, optionally grouped one
/// level deep in sections ({"sa": {"rate": 0.01}} or {"sa.rate": 0.01}).
/// `overrides` are "key=value" strings applied afterwards; `forced` values
/// (e.g. from --seed) are applied last. Throws ConfigError.
RunConfig parse_config(const std::string& text, const std::vector<std::string>& overrides = {},
                       const std::map<std::string, std::string>& forced = {});

/// Canonical JSON with every key, grouped by section.
std::string serialize(const RunConfig& config);

std::string value_text(const Value& v);

}  // namespace jsa::cli
