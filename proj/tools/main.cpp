#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "cli.hpp"
#include "sheafpc/version.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Sheaf-structured predictive coding: diagnostics, training, sweeps, spectra"};
  app.set_version_flag("--version", sheafpc::kVersion);
  app.require_subcommand(1);

  struct {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
  } opts;

  void (*handler)(const sheafpc::cli::CommonArgs&) = nullptr;
  const auto add = [&](const char* name, const char* desc, auto fn) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", opts.config, "JSON run configuration")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--out", opts.out, "output directory")->required();
    sub->add_option("--seed", opts.seed, "override the config's primary seed");
    sub->callback([&handler, fn] { handler = fn; });
    return sub;
  };

  add("diagnose", "equilibrium diagnostics for one network and batch", sheafpc::cli::run_diagnose);
  add("train", "identity-task training run", sheafpc::cli::run_train);
  add("sweep", "grid of training runs over theta or network size", sheafpc::cli::run_sweep);
  add("spectrum", "eigenvalues of the clamped Laplacian", sheafpc::cli::run_spectrum);

  CLI11_PARSE(app, argc, argv);

  try {
    sheafpc::cli::CommonArgs args{opts.config, opts.out, opts.seed};
    handler(args);
  } catch (const std::exception& e) {
    std::cerr << "sheafpc: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
