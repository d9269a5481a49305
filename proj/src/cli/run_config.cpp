#include "jsa/cli/run_config.hpp"

#include "jsa/experiments.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

namespace jsa::cli {

using json = nlohmann::json;

namespace {

using K = ValueKind;

FieldSpec U(std::string key, std::uint64_t v, std::string help) { return {std::move(key), K::unsigned_int, v, std::move(help)}; }
FieldSpec R(std::string key, double v, std::string help) { return {std::move(key), K::real, v, std::move(help)}; }
FieldSpec B(std::string key, bool v, std::string help) { return {std::move(key), K::boolean, v, std::move(help)}; }
FieldSpec T(std::string key, std::string v, std::string help) { return {std::move(key), K::text, std::move(v), std::move(help)}; }

using Preset = std::map<std::string, Value>;

const std::map<std::string, Preset>& presets() {
  static const std::map<std::string, Preset> p = {
      {"fa",
       {{"iterations", std::uint64_t{10000}},
        {"data.n", std::uint64_t{100}},
        {"model.latent", std::string("gaussian:2")},
        {"model.decoder", std::string("linear_gaussian")},
        {"model.encoder_hidden", std::string("50")},
        {"sa.optimizer", std::string("adam")},
        {"sa.rate", 1e-2},
        {"sa.batch_size", std::uint64_t{0}}}},
      {"gmm",
       {{"iterations", std::uint64_t{25000}},
        {"metric_interval", std::uint64_t{2500}},
        {"data.n", std::uint64_t{1600}},
        {"model.latent", std::string("bernoulli:4:0.5,gaussian:1")},
        {"model.decoder", std::string("mlp_gaussian")},
        {"model.decoder_hidden", std::string("200,200")},
        {"model.encoder_hidden", std::string("400,400")},
        {"sa.optimizer", std::string("adam")},
        {"sa.rate", 5e-3},
        {"sa.schedule", std::string("constant_then_inverse_t")},
        {"sa.switch", std::uint64_t{5000}},
        {"sa.batch_size", std::uint64_t{100}},
        {"sa.noise_early_var", 0.05},
        {"sa.noise_late_var", 0.01},
        {"sa.noise_switch", std::uint64_t{1000}},
        {"eval.samples", std::uint64_t{10000}}}},
      {"cfg",
       {{"iterations", std::uint64_t{3000}},
        {"metric_interval", std::uint64_t{500}},
        {"data.n", std::uint64_t{5000}},
        {"model.latent", std::string("bernoulli:20:0.5")},
        {"model.decoder", std::string("lstm")},
        {"model.encoder", std::string("lstm")},
        {"model.decoder_hidden", std::string("50,6")},
        {"model.encoder_hidden", std::string("50,50")},
        {"sa.optimizer", std::string("adam")},
        {"sa.rate", 3e-3},
        {"sa.batch_size", std::uint64_t{100}},
        {"eval.samples", std::uint64_t{1000}}}},
      {"semi-digits",
       {{"iterations", std::uint64_t{2000}},
        {"metric_interval", std::uint64_t{200}},
        {"model.latent", std::string("bernoulli:60:0.5")},
        {"model.classes", std::uint64_t{10}},
        {"model.decoder", std::string("mlp_bernoulli")},
        {"model.decoder_hidden", std::string("200")},
        {"model.encoder_hidden", std::string("200")},
        {"sa.optimizer", std::string("sgd")},
        {"sa.rate", 1e-3},
        {"sa.schedule", std::string("exponential_decay")},
        {"sa.switch", std::uint64_t{1000}},
        {"sa.decay_interval", std::uint64_t{10}},
        {"sa.chain_policy", std::string("restart")},
        {"sa.warmup", std::uint64_t{10}},
        {"semi.warm_start", std::uint64_t{500}},
        {"semi.classifier_noise", 0.3}}},
      {"toy-sa",
       {{"iterations", std::uint64_t{100000}},
        {"metric_interval", std::uint64_t{10000}},
        {"sa.optimizer", std::string("sa")},
        {"sa.schedule", std::string("constant_then_inverse_t")},
        {"sa.rate", 1.0},
        {"sa.switch", std::uint64_t{1}}}},
  };
  return p;
}

const FieldSpec* find_field(const std::string& key) {
  for (const auto& f : config_schema()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

const char* kind_name(ValueKind k) {
  switch (k) {
    case K::unsigned_int: return "unsigned integer";
    case K::real: return "number";
    case K::boolean: return "boolean";
    case K::text: return "string";
  }
  return "?";
}

Value from_json(const std::string& key, ValueKind kind, const json& j) {
  auto mismatch = [&] {
    return ConfigError(key + ": expected " + kind_name(kind) + ", got " + std::string(j.type_name()) + " " + j.dump());
  };
  switch (kind) {
    case K::unsigned_int:
      if (j.is_number_unsigned()) return j.get<std::uint64_t>();
      if (j.is_number_integer()) {
        if (j.get<std::int64_t>() < 0) throw ConfigError(key + ": must be >= 0");
        return static_cast<std::uint64_t>(j.get<std::int64_t>());
      }
      throw mismatch();
    case K::real:
      if (j.is_number()) return j.get<double>();
      throw mismatch();
    case K::boolean:
      if (j.is_boolean()) return j.get<bool>();
      throw mismatch();
    case K::text:
      if (j.is_string()) return j.get<std::string>();
      throw mismatch();
  }
  throw mismatch();
}

Value from_text(const std::string& key, ValueKind kind, const std::string& text) {
  auto bad = [&] { return ConfigError(key + ": expected " + kind_name(kind) + ", got '" + text + "'"); };
  switch (kind) {
    case K::unsigned_int: {
      std::uint64_t v = 0;
      auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) throw bad();
      return v;
    }
    case K::real: {
      double v = 0;
      auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) throw bad();
      return v;
    }
    case K::boolean:
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw bad();
    case K::text: return text;
  }
  throw bad();
}

json to_json(const Value& v) {
  return std::visit([](const auto& x) { return json(x); }, v);
}

bool one_of(const std::string& v, std::initializer_list<const char*> options) {
  return std::any_of(options.begin(), options.end(), [&](const char* o) { return v == o; });
}

}  // namespace

const std::vector<FieldSpec>& config_schema() {
  static const std::vector<FieldSpec> schema = {
      T("experiment", "", "fa | gmm | cfg | semi-digits | toy-sa"),
      T("trainer", "jsa", "jsa | vae"),
      U("seed", 0, "master seed (required)"),
      U("iterations", 1000, "number of SA iterations"),
      U("metric_interval", 100, "iterations between metric rows"),
      U("checkpoint_interval", 0, "iterations between checkpoints; 0 keeps only the final one"),
      B("wallclock", false, "add a wallclock_s column (breaks byte-identical reruns)"),

      U("data.n", 100, "dataset size (fa, gmm, cfg)"),
      R("data.grid_spacing", 1.0, "gmm grid spacing"),
      R("data.std", 0.05, "gmm component std"),
      U("data.max_length", 12, "cfg sequence length"),
      R("data.p_terminal", 0.5, "cfg probability of S -> x"),
      T("data.dir", "", "directory with IDX digit files (semi-digits)"),
      U("data.labeled", 100, "labeled training images"),
      U("data.unlabeled", 1000, "unlabeled training images"),
      U("data.test", 1000, "test images"),
      T("data.binarize", "threshold", "threshold | stochastic | none"),
      R("data.target", 3.0, "toy-sa root"),
      R("data.noise_std", 1.0, "toy-sa observation noise"),

      T("model.latent", "gaussian:2", "latent factors, e.g. bernoulli:4:0.5,gaussian:1"),
      U("model.classes", 0, "class factor size (semi-supervised)"),
      T("model.decoder", "mlp_gaussian", "linear_gaussian | mlp_gaussian | mlp_bernoulli | lstm"),
      T("model.encoder", "mlp", "mlp | lstm"),
      T("model.decoder_hidden", "", "comma-separated widths"),
      T("model.encoder_hidden", "50", "comma-separated widths"),
      R("model.noise_var", 0.04, "fixed observation variance of the linear decoder"),

      T("sa.schedule", "constant", "constant | constant_then_inverse_t | exponential_decay"),
      R("sa.rate", 1e-2, "base step size"),
      U("sa.switch", 0, "1/t switch point or decay onset"),
      R("sa.decay_rate", 0.995, "exponential decay factor"),
      U("sa.decay_interval", 100, "iterations per decay step"),
      U("sa.moves", 1, "MIS moves per update"),
      U("sa.warmup", 0, "discarded MIS steps after a restart"),
      T("sa.chain_policy", "cached", "cached | restart"),
      T("sa.optimizer", "adam", "sa | sgd | adam"),
      R("sa.adam_beta1", 0.9, ""),
      R("sa.adam_beta2", 0.999, ""),
      R("sa.adam_epsilon", 1e-8, ""),
      U("sa.batch_size", 0, "minibatch size; 0 = full batch"),
      R("sa.noise_early_var", 0.0, "proposal noise variance before noise_switch"),
      R("sa.noise_late_var", 0.0, "proposal noise variance after noise_switch"),
      U("sa.noise_switch", 0, ""),

      R("semi.alpha", 1.0, "weight of log q(y|x) on labeled data"),
      R("semi.entropy_weight", 0.0, "confidence regulariser weight"),
      U("semi.unlabeled_batch", 100, ""),
      U("semi.labeled_batch", 100, ""),
      U("semi.warm_start", 0, "supervised-only iterations"),
      R("semi.classifier_noise", 0.0, "input noise std for the classifier terms"),
      B("semi.classifier_only", false, "supervised-only baseline"),

      U("eval.samples", 1000, "generated samples for gmm/cfg metrics and export"),
      U("eval.elbo_samples", 1, "Monte Carlo samples for the logged ELBO"),
  };
  return schema;
}

const std::vector<std::string>& experiment_ids() {
  static const std::vector<std::string> ids = {"fa", "gmm", "cfg", "semi-digits", "toy-sa"};
  return ids;
}

std::uint64_t RunConfig::get_uint(const std::string& key) const { return std::get<std::uint64_t>(values_.at(key)); }
double RunConfig::get_real(const std::string& key) const { return std::get<double>(values_.at(key)); }
bool RunConfig::get_bool(const std::string& key) const { return std::get<bool>(values_.at(key)); }
const std::string& RunConfig::get_text(const std::string& key) const { return std::get<std::string>(values_.at(key)); }

void RunConfig::set(const std::string& key, const std::string& text) {
  const FieldSpec* f = find_field(key);
  if (!f) throw ConfigError(key + ": unknown key");
  if (key == "experiment") throw ConfigError("experiment: cannot be overridden");
  values_[key] = from_text(key, f->kind, text);
  validate();
}

std::vector<std::size_t> RunConfig::widths(const std::string& key) const {
  std::vector<std::size_t> out;
  std::istringstream is(get_text(key));
  std::string item;
  while (std::getline(is, item, ',')) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || ptr != item.data() + item.size() || v == 0) {
      throw ConfigError(key + ": '" + get_text(key) + "' is not a comma-separated list of positive widths");
    }
    out.push_back(v);
  }
  return out;
}

SAConfig RunConfig::sa() const {
  SAConfig c;
  try {
    c.schedule = parse_schedule(get_text("sa.schedule"));
    c.chain_policy = parse_chain_policy(get_text("sa.chain_policy"));
    c.optimizer = parse_optimizer(get_text("sa.optimizer"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("sa: ") + e.what());
  }
  c.base_rate = get_real("sa.rate");
  c.switch_iteration = get_uint("sa.switch");
  c.decay_rate = get_real("sa.decay_rate");
  c.decay_interval = get_uint("sa.decay_interval");
  c.moves = get_uint("sa.moves");
  c.warmup = get_uint("sa.warmup");
  c.adam_beta1 = get_real("sa.adam_beta1");
  c.adam_beta2 = get_real("sa.adam_beta2");
  c.adam_epsilon = get_real("sa.adam_epsilon");
  return c;
}

NoiseSchedule RunConfig::proposal_noise() const {
  return {get_real("sa.noise_early_var"), get_real("sa.noise_late_var"), get_uint("sa.noise_switch")};
}

SemiConfig RunConfig::semi() const {
  SemiConfig s;
  s.alpha = get_real("semi.alpha");
  s.entropy_weight = get_real("semi.entropy_weight");
  s.unlabeled_batch = get_uint("semi.unlabeled_batch");
  s.labeled_batch = get_uint("semi.labeled_batch");
  s.warm_start = get_uint("semi.warm_start");
  s.classifier_noise = get_real("semi.classifier_noise");
  s.classifier_only = get_bool("semi.classifier_only");
  return s;
}

JsaConfig RunConfig::jsa() const {
  JsaConfig c;
  c.sa = sa();
  c.batch_size = get_uint("sa.batch_size");
  c.proposal_noise = proposal_noise();
  c.semi = semi();
  return c;
}

VaeConfig RunConfig::vae() const {
  VaeConfig c;
  c.sa = sa();
  c.batch_size = get_uint("sa.batch_size");
  c.eval_samples = get_uint("eval.elbo_samples");
  return c;
}

void RunConfig::validate() const {
  const auto& ids = experiment_ids();
  if (experiment_.empty()) throw ConfigError("experiment: required");
  if (std::find(ids.begin(), ids.end(), experiment_) == ids.end()) {
    throw ConfigError("experiment: unknown experiment '" + experiment_ + "'");
  }
  if (!one_of(get_text("trainer"), {"jsa", "vae"})) throw ConfigError("trainer: must be jsa or vae");
  if (get_uint("metric_interval") < 1) throw ConfigError("metric_interval: must be >= 1");
  const std::uint64_t ckpt = get_uint("checkpoint_interval");
  if (ckpt > 0 && ckpt % get_uint("metric_interval") != 0) {
    throw ConfigError("checkpoint_interval: must be a multiple of metric_interval");
  }

  try {
    sa().validate();
    semi().validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  for (const char* k : {"sa.noise_early_var", "sa.noise_late_var"}) {
    if (!(get_real(k) >= 0.0) || !std::isfinite(get_real(k))) throw ConfigError(std::string(k) + ": must be >= 0");
  }

  LatentSpec latent;
  try {
    latent = LatentSpec::parse(get_text("model.latent"));
  } catch (const std::exception& e) {
    throw ConfigError(std::string("model.latent: ") + e.what());
  }
  if (latent.has_classes()) throw ConfigError("model.latent: declare the class factor with model.classes");
  widths("model.encoder_hidden");
  widths("model.decoder_hidden");
  if (!one_of(get_text("model.decoder"), {"linear_gaussian", "mlp_gaussian", "mlp_bernoulli", "lstm"})) {
    throw ConfigError("model.decoder: unknown decoder '" + get_text("model.decoder") + "'");
  }
  if (!one_of(get_text("model.encoder"), {"mlp", "lstm"})) {
    throw ConfigError("model.encoder: unknown encoder '" + get_text("model.encoder") + "'");
  }
  if ((get_text("model.decoder") == "lstm") != (get_text("model.encoder") == "lstm")) {
    throw ConfigError("model.encoder: lstm encoder and decoder go together");
  }
  if (get_text("model.decoder") == "lstm" && (widths("model.decoder_hidden").size() != 2 ||
                                              widths("model.encoder_hidden").size() != 2)) {
    throw ConfigError("model.decoder_hidden: lstm models take exactly two widths per network");
  }
  if (!(get_real("model.noise_var") > 0.0)) throw ConfigError("model.noise_var: must be > 0");
  if (get_text("trainer") == "vae" && (latent.bernoulli_dim() > 0 || get_uint("model.classes") > 0)) {
    throw ConfigError("trainer: vae needs an all-Gaussian latent, got '" + get_text("model.latent") + "'");
  }

  if (experiment_ == "semi-digits") {
    if (get_uint("model.classes") < 2) throw ConfigError("model.classes: semi-digits needs >= 2 classes");
    if (get_uint("data.labeled") < 1) throw ConfigError("data.labeled: must be >= 1");
    if (get_uint("data.test") < 1) throw ConfigError("data.test: must be >= 1");
    if (!one_of(get_text("data.binarize"), {"threshold", "stochastic", "none"})) {
      throw ConfigError("data.binarize: must be threshold, stochastic or none");
    }
    if (get_text("trainer") != "jsa") throw ConfigError("trainer: semi-digits runs with jsa only");
  } else if (experiment_ != "toy-sa") {
    if (get_uint("data.n") < 1) throw ConfigError("data.n: must be >= 1");
  }
  if (experiment_ == "gmm" && !(get_real("data.std") >= 0.0)) throw ConfigError("data.std: must be >= 0");
  if (experiment_ == "cfg") {
    CFGCorpusSpec c;
    c.max_length = get_uint("data.max_length");
    c.p_terminal = get_real("data.p_terminal");
    try {
      c.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("data.p_terminal: ") + e.what());
    }
  }
  if (experiment_ == "fa" && get_text("model.decoder") == "linear_gaussian" &&
      (latent.gaussian_dim() != 2 || latent.bernoulli_dim() != 0)) {
    throw ConfigError("model.latent: the linear FA decoder needs gaussian:2");
  }
  if (experiment_ == "toy-sa" && !(get_real("data.noise_std") >= 0.0)) {
    throw ConfigError("data.noise_std: must be >= 0");
  }
  if (get_uint("eval.samples") < 1) throw ConfigError("eval.samples: must be >= 1");
  if (get_uint("eval.elbo_samples") < 1) throw ConfigError("eval.elbo_samples: must be >= 1");
}

RunConfig parse_config(const std::string& text, const std::vector<std::string>& overrides,
                       const std::map<std::string, std::string>& forced) {
  json doc;
  try {
    doc = text.find_first_not_of(" \t\r\n") == std::string::npos ? json::object() : json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config: top level must be an object");

  // Flatten one level of sections.
  std::map<std::string, json> flat;
  for (const auto& [k, v] : doc.items()) {
    if (v.is_object()) {
      for (const auto& [k2, v2] : v.items()) {
        if (v2.is_object() || v2.is_array()) throw ConfigError(k + "." + k2 + ": nesting deeper than two levels");
        if (!flat.emplace(k + "." + k2, v2).second) throw ConfigError(k + "." + k2 + ": given twice");
      }
    } else if (v.is_array()) {
      throw ConfigError(k + ": arrays are not supported; use a comma-separated string");
    } else if (!flat.emplace(k, v).second) {
      throw ConfigError(k + ": given twice");
    }
  }

  std::map<std::string, std::string> text_values;
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "': expected key=value");
    text_values[o.substr(0, eq)] = o.substr(eq + 1);
  }
  for (const auto& [k, v] : forced) text_values[k] = v;

  RunConfig c;
  if (auto it = text_values.find("experiment"); it != text_values.end()) {
    c.experiment_ = it->second;
  } else if (auto jt = flat.find("experiment"); jt != flat.end()) {
    if (!jt->second.is_string()) throw ConfigError("experiment: expected string");
    c.experiment_ = jt->second.get<std::string>();
  }
  if (c.experiment_.empty()) throw ConfigError("experiment: required");
  const auto pit = presets().find(c.experiment_);
  if (pit == presets().end()) throw ConfigError("experiment: unknown experiment '" + c.experiment_ + "'");

  for (const auto& f : config_schema()) c.values_[f.key] = f.fallback;
  for (const auto& [k, v] : pit->second) c.values_[k] = v;
  c.values_["experiment"] = c.experiment_;

  bool has_seed = false;
  for (const auto& [k, v] : flat) {
    const FieldSpec* f = find_field(k);
    if (!f) throw ConfigError(k + ": unknown key");
    if (k == "experiment") continue;
    c.values_[k] = from_json(k, f->kind, v);
    has_seed = has_seed || k == "seed";
  }
  for (const auto& [k, v] : text_values) {
    const FieldSpec* f = find_field(k);
    if (!f) throw ConfigError(k + ": unknown key");
    if (k == "experiment") continue;
    c.values_[k] = from_text(k, f->kind, v);
    has_seed = has_seed || k == "seed";
  }
  if (!has_seed) throw ConfigError("seed: required (pass it in the config or with --seed)");
  c.validate();
  return c;
}

std::string serialize(const RunConfig& config) {
  json doc = json::object();
  for (const auto& f : config_schema()) {
    const Value& v = config.values().at(f.key);
    const auto dot = f.key.find('.');
    if (dot == std::string::npos) {
      doc[f.key] = to_json(v);
    } else {
      doc[f.key.substr(0, dot)][f.key.substr(dot + 1)] = to_json(v);
    }
  }
  return doc.dump(2) + "\n";
}

std::string value_text(const Value& v) {
  return std::visit(
      [](const auto& x) -> std::string {
        using X = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<X, std::string>) {
          return x;
        } else if constexpr (std::is_same_v<X, bool>) {
          return x ? "true" : "false";
        } else if constexpr (std::is_same_v<X, double>) {
          return json(x).dump();
        } else {
          return std::to_string(x);
        }
      },
      v);
}

}  // namespace jsa::cli
