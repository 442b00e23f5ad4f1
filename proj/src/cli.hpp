#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

namespace sheafpc::cli {

struct CommonArgs {
  std::filesystem::path config;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;  // overrides the config's primary seed
};

/// Each command reads a JSON config, writes its outputs under args.out, and
/// finishes with a manifest.json. Any failure throws; nothing is written
/// partially thanks to atomic file replacement.
void run_diagnose(const CommonArgs& args);
void run_train(const CommonArgs& args);
void run_sweep(const CommonArgs& args);
void run_spectrum(const CommonArgs& args);

}  // namespace sheafpc::cli
