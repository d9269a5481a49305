#include "jsa/cli/run_config.hpp"
#include "jsa/cli/runner.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw jsa::cli::IoError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  namespace cli = jsa::cli;
  CLI::App app{"Joint stochastic approximation for latent-variable models"};
  app.require_subcommand(1);
  app.set_version_flag("--version", JSA_VERSION);

  std::string config_path, out_dir, experiment;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  bool resume = false;
  std::size_t count = 0;

  auto common = [&](CLI::App* sub, bool config_required) {
    auto* c = sub->add_option("--config", config_path, "JSON run configuration");
    if (config_required) c->required();
    sub->add_option("--seed", seed, "master seed (overrides the config)");
    sub->add_option("--out", out_dir, "output directory")->required();
    sub->add_option("--override", overrides, "key=value, repeatable");
  };
  auto* gen = app.add_subcommand("gen-data", "write the experiment's dataset");
  common(gen, true);
  auto* train = app.add_subcommand("train", "train and write metrics, checkpoints and summary");
  common(train, true);
  train->add_flag("--resume", resume, "continue from the latest checkpoint in --out");
  auto* eval = app.add_subcommand("eval", "recompute metrics from the final checkpoint");
  common(eval, false);
  auto* exp = app.add_subcommand("export-samples", "sample the trained generator");
  common(exp, false);
  exp->add_option("--count", count, "number of samples (default eval.samples)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::exit_config;
  }

  return cli::guarded([&] {
    // eval and export-samples default to the configuration saved with the run.
    const std::string path = config_path.empty() ? out_dir + "/config.json" : config_path;
    std::map<std::string, std::string> forced;
    if (seed) forced["seed"] = std::to_string(*seed);
    const cli::RunConfig config = cli::parse_config(read_file(path), overrides, forced);

    if (gen->parsed()) {
      cli::gen_data(config, out_dir);
    } else if (train->parsed()) {
      const cli::RunSummary s = cli::train(config, out_dir, resume);
      std::cout << "trained " << s.iterations << " iterations";
      for (const auto& [k, v] : s.final_metrics) std::cout << ' ' << k << '=' << cli::format_number(v);
      std::cout << '\n';
    } else if (eval->parsed()) {
      const cli::RunSummary s = cli::evaluate(config, out_dir);
      for (const auto& [k, v] : s.final_metrics) std::cout << k << '=' << cli::format_number(v) << '\n';
    } else if (exp->parsed()) {
      std::cout << cli::export_samples(config, out_dir, count).string() << '\n';
    }
  });
}
