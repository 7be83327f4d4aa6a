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

#include "denas/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "denas/rng.hpp"

namespace denas {

namespace {

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

void check_image(const Image& img, const char* what) {
  if (img.empty() || img.shape().n != 1) throw Error(std::string(what) + ": expected one image");
}

}  // namespace

std::vector<Image> procedural_corpus(int count, int size, std::uint64_t seed, int channels) {
  if (count < 1 || size < 8 || channels < 1) throw Error("procedural corpus needs count >= 1, size >= 8");
  std::vector<Image> out;
  for (int k = 0; k < count; ++k) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    Image img(Shape{1, channels, size, size});
    auto color = [&] {
      std::vector<double> c(channels);
      for (auto& v : c) v = rng.uniform();
      return c;
    };
    // Background gradient.
    const auto c0 = color();
    const auto c1 = color();
    const double ang = rng.uniform(0.0, 2.0 * M_PI);
    const double ca = std::cos(ang), sa = std::sin(ang);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double t = 0.5 + 0.5 * ((x / double(size) - 0.5) * ca + (y / double(size) - 0.5) * sa) * 1.4;
        for (int c = 0; c < channels; ++c) img.at(0, c, y, x) = c0[c] + (c1[c] - c0[c]) * clamp01(t);
      }
    // Gaussian blobs.
    const int blobs = rng.uniform_int(2, 6);
    for (int b = 0; b < blobs; ++b) {
      const double cy = rng.uniform(0, size), cx = rng.uniform(0, size);
      const double s = rng.uniform(0.05, 0.25) * size;
      const double amp = rng.uniform(-0.6, 0.6);
      const auto col = color();
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const double e = amp * std::exp(-((y - cy) * (y - cy) + (x - cx) * (x - cx)) / (2 * s * s));
          for (int c = 0; c < channels; ++c) img.at(0, c, y, x) += e * col[c];
        }
    }
    // Flat rectangles with sharp edges.
    const int rects = rng.uniform_int(1, 4);
    for (int r = 0; r < rects; ++r) {
      const int y0 = rng.uniform_int(0, size - 4), x0 = rng.uniform_int(0, size - 4);
      const int h = rng.uniform_int(4, std::max(5, size / 2)), w = rng.uniform_int(4, std::max(5, size / 2));
      const auto col = color();
      for (int y = y0; y < std::min(size, y0 + h); ++y)
        for (int x = x0; x < std::min(size, x0 + w); ++x)
          for (int c = 0; c < channels; ++c) img.at(0, c, y, x) = col[c];
    }
    // One checkerboard or stripe patch.
    {
      const int ps = size / 2;
      const int y0 = rng.uniform_int(0, size - ps + 1), x0 = rng.uniform_int(0, size - ps + 1);
      const int period = rng.uniform_int(2, 7);
      const bool stripes = rng.uniform() < 0.5;
      const auto ca_ = color();
      const auto cb_ = color();
      for (int y = y0; y < y0 + ps; ++y)
        for (int x = x0; x < x0 + ps; ++x) {
          const bool on = stripes ? ((x / period) % 2 == 0) : (((x / period) + (y / period)) % 2 == 0);
          for (int c = 0; c < channels; ++c) img.at(0, c, y, x) = on ? ca_[c] : cb_[c];
        }
    }
    for (auto& v : img.values()) v = clamp01(v);
    out.push_back(std::move(img));
  }
  return out;
}

Image load_image(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw Error("cannot open image " + path);
  unsigned char sig[8] = {0};
  const std::size_t got = std::fread(sig, 1, 8, f);
  std::rewind(f);
  if (got == 8 && png_sig_cmp(sig, 0, 8) == 0) {
    png_image im{};
    im.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_stdio(&im, f)) {
      std::fclose(f);
      throw Error("cannot decode PNG " + path + ": " + im.message);
    }
    const bool gray = (im.format & PNG_FORMAT_FLAG_COLOR) == 0;
    im.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    const int ch = gray ? 1 : 3;
    std::vector<unsigned char> buf(PNG_IMAGE_SIZE(im));
    const bool ok = png_image_finish_read(&im, nullptr, buf.data(), 0, nullptr);
    std::fclose(f);
    if (!ok) throw Error("cannot decode PNG " + path + ": " + im.message);
    Image img(Shape{1, ch, static_cast<int>(im.height), static_cast<int>(im.width)});
    for (int y = 0; y < img.shape().h; ++y)
      for (int x = 0; x < img.shape().w; ++x)
        for (int c = 0; c < ch; ++c)
          img.at(0, c, y, x) = buf[(static_cast<std::size_t>(y) * img.shape().w + x) * ch + c] / 255.0;
    return img;
  }
  // Binary netpbm.
  std::ifstream in(path, std::ios::binary);
  std::fclose(f);
  std::string magic;
  int w = 0, h = 0, maxv = 0;
  in >> magic >> w >> h >> maxv;
  if ((magic != "P5" && magic != "P6") || w < 1 || h < 1 || maxv < 1 || maxv > 255) {
    throw Error("unsupported image format: " + path);
  }
  in.get();
  const int ch = magic == "P6" ? 3 : 1;
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * ch);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!in) throw Error("truncated image " + path);
  Image img(Shape{1, ch, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c)
        img.at(0, c, y, x) = buf[(static_cast<std::size_t>(y) * w + x) * ch + c] / double(maxv);
  return img;
}

void save_png(const std::string& path, const Image& img) {
  check_image(img, "save_png");
  const int ch = img.shape().c;
  if (ch != 1 && ch != 3) throw Error("save_png: 1 or 3 channels required");
  png_image im{};
  im.version = PNG_IMAGE_VERSION;
  im.width = static_cast<png_uint_32>(img.shape().w);
  im.height = static_cast<png_uint_32>(img.shape().h);
  im.format = ch == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(im));
  for (int y = 0; y < img.shape().h; ++y)
    for (int x = 0; x < img.shape().w; ++x)
      for (int c = 0; c < ch; ++c)
        buf[(static_cast<std::size_t>(y) * img.shape().w + x) * ch + c] =
            static_cast<unsigned char>(std::lround(clamp01(img.at(0, c, y, x)) * 255.0));
  if (!png_image_write_to_file(&im, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw Error("cannot write PNG " + path + ": " + im.message);
  }
}

std::vector<Image> load_image_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw Error("not a directory: " + dir);
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".ppm" || ext == ".pgm") files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  std::vector<Image> out;
  for (const auto& f : files) out.push_back(load_image(f));
  if (out.empty()) throw Error("no images in " + dir);
  return out;
}

Image gen_sigma_map(int h, int w, int map_case, std::uint64_t seed) {
  if (h < 8 || w < 8) throw Error("sigma map needs h, w >= 8");
  int bumps = 0;
  double bw_lo = 0, bw_hi = 0;
  switch (map_case) {
    case 1: bumps = 1; bw_lo = 0.25; bw_hi = 0.35; break;
    case 2: bumps = 3; bw_lo = 0.12; bw_hi = 0.2; break;
    case 3: bumps = 6; bw_lo = 0.06; bw_hi = 0.12; break;
    case 4: bumps = 4; bw_lo = 0.1; bw_hi = 0.3; break;
    default: throw Error("sigma map case must be 1..4, got " + std::to_string(map_case));
  }
  Rng rng(derive_seed(seed, 0x5157u + static_cast<std::uint64_t>(map_case)));
  struct Bump { double cy, cx, s, a; };
  std::vector<Bump> bs;
  for (int k = 0; k < bumps; ++k) {
    bs.push_back({rng.uniform(), rng.uniform(), rng.uniform(bw_lo, bw_hi), rng.uniform(0.3, 1.0)});
  }
  Image m(Shape{1, 1, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double py = (y + 0.5) / h, px = (x + 0.5) / w;
      double v = 0;
      for (const auto& b : bs) {
        v += b.a * std::exp(-((py - b.cy) * (py - b.cy) + (px - b.cx) * (px - b.cx)) / (2 * b.s * b.s));
      }
      m.at(0, 0, y, x) = v;
    }
  const auto [lo, hi] = std::minmax_element(m.values().begin(), m.values().end());
  const double a = *lo, span = *hi - *lo;
  for (auto& v : m.values()) {
    const double t = span > 0 ? (v - a) / span : 1.0;
    v = std::clamp(kSigmaMin + (kSigmaMax - kSigmaMin) * t, kSigmaMin, kSigmaMax);
  }
  return m;
}

Image constant_map(int h, int w, double sigma) {
  if (!(sigma >= 0.0)) throw Error("noise level must be >= 0");
  return Image(Shape{1, 1, h, w}, sigma);
}

std::string NoiseCase::label() const {
  if (kind == Kind::awgn) return "awgn" + std::to_string(static_cast<int>(std::lround(sigma * 255.0)));
  return map_case == kTrainMapCase ? "map_train" : "case" + std::to_string(map_case);
}

nlohmann::ordered_json NoiseCase::to_json() const {
  nlohmann::ordered_json j;
  j["kind"] = kind == Kind::awgn ? "awgn" : "spatial";
  if (kind == Kind::awgn) {
    j["sigma"] = sigma * 255.0;
  } else {
    j["map_case"] = map_case;
    j["map_seed"] = map_seed;
  }
  j["clip"] = clip;
  return j;
}

NoiseCase NoiseCase::from_json(const nlohmann::ordered_json& j) {
  NoiseCase n;
  const std::string kind = j.value("kind", std::string("awgn"));
  if (kind == "awgn") {
    n.kind = Kind::awgn;
    n.sigma = j.value("sigma", 25.0) / 255.0;
    if (!(n.sigma >= 0.0)) throw Error("noise sigma must be >= 0");
  } else if (kind == "spatial") {
    n.kind = Kind::spatial;
    n.map_case = j.value("map_case", kTrainMapCase);
    n.map_seed = j.value("map_seed", std::uint64_t{0});
    if (n.map_case < 1 || n.map_case > 4) throw Error("noise map_case must be 1..4");
  } else {
    throw Error("unknown noise kind '" + kind + "'");
  }
  n.clip = j.value("clip", false);
  for (const auto& [k, v] : j.items()) {
    if (k != "kind" && k != "sigma" && k != "map_case" && k != "map_seed" && k != "clip") {
      throw Error("unknown noise key '" + k + "'");
    }
  }
  return n;
}

Image add_noise_map(const Image& clean, const Image& map, std::uint64_t seed, bool clip) {
  const Shape& s = clean.shape();
  if (map.shape().n != 1 || map.shape().c != 1 || map.shape().h != s.h || map.shape().w != s.w) {
    throw Error("noise map " + map.shape().str() + " does not match image " + s.str());
  }
  Rng rng(seed);
  Image out = clean;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          double& v = out.at(n, c, y, x);
          v += rng.normal() * map.at(0, 0, y, x);
          if (clip) v = clamp01(v);
        }
  return out;
}

Image add_noise(const Image& clean, const NoiseCase& noise, std::uint64_t seed) {
  const Shape& s = clean.shape();
  const Image map = noise.kind == NoiseCase::Kind::awgn
                        ? constant_map(s.h, s.w, noise.sigma)
                        : gen_sigma_map(s.h, s.w, noise.map_case, noise.map_seed);
  return add_noise_map(clean, map, seed, noise.clip);
}

double psnr(const Image& a, const Image& b, double data_range) {
  if (a.shape() != b.shape()) throw Error("psnr: shape " + a.shape().str() + " vs " + b.shape().str());
  double mse = 0;
  for (std::size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrSentinel;
  return std::min(kPsnrSentinel, 10.0 * std::log10(data_range * data_range / mse));
}

double ssim(const Image& a, const Image& b, double data_range) {
  if (a.shape() != b.shape()) throw Error("ssim: shape " + a.shape().str() + " vs " + b.shape().str());
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  const Shape& s = a.shape();
  if (s.h < kWin || s.w < kWin) throw Error("ssim: image smaller than the 11x11 window");
  // Separable normalized Gaussian.
  std::array<double, kWin> g{};
  double gs = 0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kWin / 2;
    g[i] = std::exp(-d * d / (2 * kSigma * kSigma));
    gs += g[i];
  }
  for (auto& v : g) v /= gs;
  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  const int oh = s.h - kWin + 1, ow = s.w - kWin + 1;

  auto filter = [&](const std::vector<double>& img) {
    std::vector<double> tmp(static_cast<std::size_t>(s.h) * ow), out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < ow; ++x) {
        double acc = 0;
        for (int k = 0; k < kWin; ++k) acc += g[k] * img[static_cast<std::size_t>(y) * s.w + x + k];
        tmp[static_cast<std::size_t>(y) * ow + x] = acc;
      }
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double acc = 0;
        for (int k = 0; k < kWin; ++k) acc += g[k] * tmp[static_cast<std::size_t>(y + k) * ow + x];
        out[static_cast<std::size_t>(y) * ow + x] = acc;
      }
    return out;
  };

  double total = 0;
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const std::size_t off = a.offset(n, c, 0, 0);
      std::vector<double> x(a.data() + off, a.data() + off + plane);
      std::vector<double> y(b.data() + off, b.data() + off + plane);
      std::vector<double> xx(plane), yy(plane), xy(plane);
      for (std::size_t i = 0; i < plane; ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
      }
      const auto mx = filter(x), my = filter(y), sxx = filter(xx), syy = filter(yy), sxy = filter(xy);
      double acc = 0;
      for (std::size_t i = 0; i < mx.size(); ++i) {
        const double vx = sxx[i] - mx[i] * mx[i];
        const double vy = syy[i] - my[i] * my[i];
        const double cxy = sxy[i] - mx[i] * my[i];
        acc += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) /
               ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
      }
      total += acc / static_cast<double>(mx.size());
    }
  return total / (s.n * s.c);
}

namespace {

PatchPair make_pair(const std::vector<Image>& sources, int id, int source, int cy, int cx, int patch,
                    const NoiseCase& noise, std::uint64_t noise_seed) {
  if (source < 0 || source >= static_cast<int>(sources.size())) {
    throw Error("pair " + std::to_string(id) + " names missing source " + std::to_string(source));
  }
  const Image& src = sources[source];
  const Shape& s = src.shape();
  if (cy < 0 || cx < 0 || cy + patch > s.h || cx + patch > s.w) {
    throw Error("crop of pair " + std::to_string(id) + " leaves source " + std::to_string(source));
  }
  PatchPair p;
  p.id = id;
  p.source = source;
  p.crop_y = cy;
  p.crop_x = cx;
  p.noise_seed = noise_seed;
  p.clean = Image(Shape{1, s.c, patch, patch});
  for (int c = 0; c < s.c; ++c)
    for (int y = 0; y < patch; ++y)
      for (int x = 0; x < patch; ++x) p.clean.at(0, c, y, x) = src.at(0, c, cy + y, cx + x);
  p.noisy = add_noise(p.clean, noise, noise_seed);
  return p;
}

}  // namespace

DatasetSplit make_dataset(const std::vector<Image>& sources, const DataConfig& config) {
  if (sources.empty()) throw Error("make_dataset: no source images");
  if (config.count < 2) throw Error("make_dataset: need at least two pairs");
  if (!(config.split > 0.0 && config.split < 1.0)) throw Error("make_dataset: split must lie in (0, 1)");
  std::vector<int> usable;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const Shape& s = sources[i].shape();
    if (s.h >= config.patch && s.w >= config.patch) usable.push_back(static_cast<int>(i));
  }
  if (usable.empty()) {
    throw Error("make_dataset: insufficient source pixels for " + std::to_string(config.patch) + "px patches");
  }
  const int channels = sources[usable[0]].shape().c;
  Rng rng(derive_seed(config.seed, 0xda7a));
  std::vector<int> order(config.count);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  const int n_w = std::clamp(static_cast<int>(std::lround(config.count * config.split)), 1, config.count - 1);
  std::vector<bool> in_w(config.count, false);
  for (int i = 0; i < n_w; ++i) in_w[order[i]] = true;

  DatasetSplit out;
  out.seed = config.seed;
  out.manifest = nlohmann::ordered_json::object();
  out.manifest["patch"] = config.patch;
  out.manifest["noise"] = config.noise.to_json();
  auto& list = out.manifest["pairs"] = nlohmann::ordered_json::array();
  for (int id = 0; id < config.count; ++id) {
    const int src = usable[rng.uniform_int(0, static_cast<int>(usable.size()))];
    if (sources[src].shape().c != channels) throw Error("make_dataset: sources differ in channels");
    const int cy = rng.uniform_int(0, sources[src].shape().h - config.patch + 1);
    const int cx = rng.uniform_int(0, sources[src].shape().w - config.patch + 1);
    const std::uint64_t ns = derive_seed(config.seed, 0x10000u + static_cast<std::uint64_t>(id));
    PatchPair p = make_pair(sources, id, src, cy, cx, config.patch, config.noise, ns);
    list.push_back({{"id", id}, {"source", src}, {"crop", {cy, cx}}, {"case", config.noise.label()},
                    {"seed", ns}, {"split", in_w[id] ? "w" : "arch"}});
    (in_w[id] ? out.w : out.arch).push_back(std::move(p));
  }
  return out;
}

DatasetSplit dataset_from_manifest(const std::vector<Image>& sources, const nlohmann::ordered_json& manifest) {
  DatasetSplit out;
  try {
    const int patch = manifest.at("patch").get<int>();
    const NoiseCase noise = NoiseCase::from_json(manifest.at("noise"));
    for (const auto& e : manifest.at("pairs")) {
      const auto crop = e.at("crop").get<std::array<int, 2>>();
      PatchPair p = make_pair(sources, e.at("id").get<int>(), e.at("source").get<int>(), crop[0], crop[1],
                              patch, noise, e.at("seed").get<std::uint64_t>());
      const std::string split = e.at("split").get<std::string>();
      if (split != "w" && split != "arch") throw Error("manifest split must be w or arch");
      (split == "w" ? out.w : out.arch).push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(std::string("malformed dataset manifest: ") + ex.what());
  }
  out.manifest = manifest;
  return out;
}

void stack_batch(const std::vector<PatchPair>& pairs, const std::vector<int>& index, Image& noisy,
                 Image& clean) {
  if (index.empty()) throw Error("stack_batch: empty batch");
  const Shape one = pairs.at(index[0]).clean.shape();
  noisy = Image(Shape{static_cast<int>(index.size()), one.c, one.h, one.w});
  clean = Image(noisy.shape());
  const std::size_t per = one.numel();
  for (std::size_t b = 0; b < index.size(); ++b) {
    const PatchPair& p = pairs.at(index[b]);
    if (p.clean.shape() != one) throw Error("stack_batch: mixed patch shapes");
    std::copy(p.noisy.data(), p.noisy.data() + per, noisy.data() + b * per);
    std::copy(p.clean.data(), p.clean.data() + per, clean.data() + b * per);
  }
}

}  // namespace denas
