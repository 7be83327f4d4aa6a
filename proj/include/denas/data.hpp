/*
 * Copyright 2026 The denas Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Synthetic corpora, noise models, patch datasets and image metrics.
// Images are (1, C, H, W) double tensors with values nominally in [0, 1].

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "denas/tensor.hpp"
#include "json.hpp"

namespace denas {

using Image = Tensor<double>;

inline constexpr double kSigmaMin = 5.0 / 255.0;
inline constexpr double kSigmaMax = 50.0 / 255.0;
/// Spatial map ids 1-3 are the test cases; 4 is the training map.
inline constexpr int kTrainMapCase = 4;

/// Images of smooth gradients, Gaussian blobs, rectangles and checkerboard
/// or stripe patches. Deterministic per seed.
std::vector<Image> procedural_corpus(int count, int size, std::uint64_t seed, int channels = 3);

/// 8-bit PNG (gray, gray+alpha, RGB, RGBA) or binary PGM/PPM.
Image load_image(const std::string& path);
void save_png(const std::string& path, const Image& img);
/// Every readable image in a directory, sorted by file name.
std::vector<Image> load_image_dir(const std::string& dir);

/// Smooth field in [kSigmaMin, kSigmaMax] made of Gaussian bumps; shape
/// (1, 1, h, w).
Image gen_sigma_map(int h, int w, int map_case, std::uint64_t seed);
Image constant_map(int h, int w, double sigma);

struct NoiseCase {
  enum class Kind { awgn, spatial };
  Kind kind = Kind::awgn;
  double sigma = 25.0 / 255.0;  // awgn
  int map_case = kTrainMapCase; // spatial
  std::uint64_t map_seed = 0;   // spatial
  bool clip = false;

  std::string label() const;
  nlohmann::ordered_json to_json() const;
  static NoiseCase from_json(const nlohmann::ordered_json& j);
};

/// noisy = clean + n * M with n ~ N(0, 1) drawn from `seed` alone, so the
/// realization does not depend on the clean content.
Image add_noise(const Image& clean, const NoiseCase& noise, std::uint64_t seed);
/// Same with an explicit map (broadcast over channels).
Image add_noise_map(const Image& clean, const Image& map, std::uint64_t seed, bool clip = false);

/// 10 log10(range^2 / MSE); identical inputs give the 99 dB sentinel.
double psnr(const Image& a, const Image& b, double data_range = 1.0);
inline constexpr double kPsnrSentinel = 99.0;
/// Mean local SSIM (11x11 Gaussian window, sigma 1.5, valid region),
/// averaged over channels and batch.
double ssim(const Image& a, const Image& b, double data_range = 1.0);

struct PatchPair {
  Image noisy;
  Image clean;
  int id = 0;
  int source = 0;
  int crop_y = 0;
  int crop_x = 0;
  std::uint64_t noise_seed = 0;
};

struct DataConfig {
  int patch = 32;
  int count = 128;
  double split = 0.5;  // fraction of pairs given to the operator weights
  NoiseCase noise;
  std::uint64_t seed = 0;
};

struct DatasetSplit {
  std::vector<PatchPair> w;
  std::vector<PatchPair> arch;
  std::uint64_t seed = 0;
  /// {source, crop, case, seed} per pair, enough to regenerate the split.
  nlohmann::ordered_json manifest;
};

DatasetSplit make_dataset(const std::vector<Image>& sources, const DataConfig& config);
/// Rebuilds the pairs listed by a manifest from the same sources.
DatasetSplit dataset_from_manifest(const std::vector<Image>& sources,
                                   const nlohmann::ordered_json& manifest);

/// Stacks the chosen pairs into (N, C, H, W) noisy and clean batches.
void stack_batch(const std::vector<PatchPair>& pairs, const std::vector<int>& index,
                 Image& noisy, Image& clean);

}  // namespace denas
