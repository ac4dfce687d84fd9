// SPDX-License-Identifier: Apache-2.0
//
// Shared datasets and scratch directories for the test binaries.
#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "dpa/synthgen.hpp"

namespace fixture {

/// The reference synthetic configuration used by the end-to-end checks.
inline dpa::SynthConfig reference_synth() {
  dpa::SynthConfig c;
  c.n_classes = 10;
  c.dim = 64;
  c.n_samples = 2000;
  c.n_prompts = 4;
  c.n_views = 4;
  c.intra_class_noise = 0.25;
  c.prompt_noise = 0.05;
  c.modality_gap = 0.8;
  c.strong_view_noise = 0.1;
  c.gap_class_spread = 0.8;
  c.seed = 7;
  return c;
}

/// Small misaligned set for fast trainer tests.
inline dpa::SynthConfig toy_synth(std::size_t n = 48, std::uint64_t seed = 3) {
  dpa::SynthConfig c;
  c.n_classes = 4;
  c.dim = 12;
  c.n_samples = n;
  c.n_prompts = 2;
  c.n_views = 2;
  c.seed = seed;
  return c;
}

/// A fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("dpa_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixture
