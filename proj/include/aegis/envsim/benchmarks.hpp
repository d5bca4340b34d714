#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "aegis/envsim/env_model.hpp"

namespace aegis::envsim {

enum class BenchmarkName { pendulum, carplatoon4, carplatoon8, helicopter };

BenchmarkName parse_benchmark_name(std::string_view name);
std::string_view to_string(BenchmarkName name);

/// A plant plus the data that travels with it in its benchmark file: the
/// safety specification text, its box form, and default attack settings.
struct Benchmark {
  EnvModel env;
  std::string spec_text;
  Box safety_box;
  std::size_t attack_stride = 1;
  /// Default LQR weights for linear plants (diagonals).
  std::optional<Vector> lqr_q;
  std::optional<Vector> lqr_r;
  std::filesystem::path source;
};

/// Directory holding the bundled benchmark files; overridable with the
/// AEGIS_BENCHMARK_DIR environment variable.
std::filesystem::path default_benchmark_dir();

/// Parses one benchmark file (JSON text). The "spec" field holds either the
/// safety specification inline or the name of a sibling file.
Benchmark load_benchmark(const std::filesystem::path& file);

Benchmark make_benchmark(std::string_view name,
                         const std::filesystem::path& dir = default_benchmark_dir());
Benchmark make_benchmark(BenchmarkName name,
                         const std::filesystem::path& dir = default_benchmark_dir());

}  // namespace aegis::envsim
