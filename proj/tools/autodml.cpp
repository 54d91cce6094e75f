#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "autodml/error.hpp"
#include "cli.hpp"

namespace {

template <class F>
int guarded(F&& body) {
  using namespace autodml;
  try {
    return body();
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kValidation;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return cli::kNumerical;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return cli::kIo;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed report: " << e.what() << "\n";
    return cli::kValidation;
  }
}

int finish(const autodml::cli::RunResult& res) {
  std::cout << res.summary;
  if (res.code == autodml::cli::kNumerical)
    std::cerr << "run flagged (see flags above); pass --allow-flags to exit 0\n";
  return res.code;
}

}  // namespace

int main(int argc, char** argv) {
  namespace cli = autodml::cli;
  CLI::App app{"Automatic debiased machine learning"};
  app.require_subcommand(1);

  std::string config_path;
  bool allow_flags = false;

  auto* est = app.add_subcommand("estimate", "cross-fitted debiased estimate from a config file");
  est->add_option("-c,--config", config_path, "config file")->required();
  est->add_flag("--allow-flags", allow_flags, "exit 0 even when fits are flagged");

  auto* gmm = app.add_subcommand("gmm", "debiased GMM from a config file");
  gmm->add_option("-c,--config", config_path, "config file")->required();
  gmm->add_flag("--allow-flags", allow_flags, "exit 0 even when fits are flagged");

  cli::SimulateOptions sim;
  std::size_t n = 0;
  std::string output;
  auto* simc = app.add_subcommand("simulate", "Monte Carlo validation designs");
  simc->add_option("--design", sim.design, "appendixA3, ate_logistic, riesz_sparse, binary_choice, panel_slopes")
      ->required();
  simc->add_option("--reps", sim.reps, "replications")->capture_default_str();
  simc->add_option("--variant,--row", sim.variants, "table rows (appendixA3 only); repeatable");
  simc->add_option("--n", n, "sample size (clusters for panel_slopes)");
  simc->add_option("--seed", sim.seed, "base seed")->capture_default_str();
  simc->add_option("--threads", sim.threads, "workers (0: AUTODML_THREADS or hardware)");
  simc->add_option("-o,--output", output, "write the summary as JSON");

  std::string report_path;
  auto* rep = app.add_subcommand("report", "print a report file written by estimate or gmm");
  rep->add_option("file", report_path, "report JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : cli::kValidation;
  }

  if (*est) return guarded([&] { return finish(cli::run_estimate(cli::Config::load(config_path), allow_flags)); });
  if (*gmm) return guarded([&] { return finish(cli::run_gmm(cli::Config::load(config_path), allow_flags)); });
  if (*simc) {
    if (simc->count("--n")) sim.n = n;
    if (!output.empty()) sim.output = output;
    return guarded([&] { return finish(cli::run_simulate(sim)); });
  }
  return guarded([&] {
    std::ifstream in(report_path, std::ios::binary);
    if (!in) throw autodml::IoError("cannot open '" + report_path + "'");
    nlohmann::json j;
    in >> j;
    std::cout << cli::render_report(j);
    return cli::kOk;
  });
}
