#include "dgsp/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dgsp/common.hpp"
#include "dgsp/image_io.hpp"

namespace dgsp {
namespace fs = std::filesystem;

namespace {

std::vector<std::string> read_id_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open split file: " + path);
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) {
      line.pop_back();
    }
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

// Mirror index without edge repetition: 0 1 2 1 0 1 2 ... for n=3.
long mirror(long i, long n) {
  if (n == 1) return 0;
  const long period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

std::vector<SamplePair> load_dataset(const std::string& root, const std::string& split) {
  const auto ids = read_id_list(root + "/" + split + ".txt");
  std::vector<SamplePair> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const std::string img_path = root + "/images/" + id + ".png";
    const std::string mask_path = root + "/masks/" + id + ".png";
    if (!fs::exists(img_path) || !fs::exists(mask_path)) {
      throw DataError("sample '" + id + "' is missing its image or mask file");
    }
    SamplePair pair;
    pair.id = id;
    pair.image = read_png_gray(img_path);
    pair.mask = read_png_gray(mask_path);
    if (pair.image.shape() != pair.mask.shape()) {
      throw DataError("sample '" + id + "' has mismatched image and mask dims");
    }
    for (long i = 0; i < pair.mask.numel(); ++i) {
      pair.mask.data()[i] = pair.mask.data()[i] > 0.0f ? 1.0f : 0.0f;
    }
    out.push_back(std::move(pair));
  }
  return out;
}

Tensor<float> reflect_pad_br(const Tensor<float>& img, long out_h, long out_w) {
  if (img.shape().size() != 2) throw ShapeError("reflect_pad_br expects a (H,W) tensor");
  const long h = img.shape()[0];
  const long w = img.shape()[1];
  const long ph = std::max(h, out_h);
  const long pw = std::max(w, out_w);
  if (ph == h && pw == w) return img;
  Tensor<float> out({ph, pw});
  for (long y = 0; y < ph; ++y) {
    const long sy = mirror(y, h);
    for (long x = 0; x < pw; ++x) {
      out.data()[y * pw + x] = img.data()[sy * w + mirror(x, w)];
    }
  }
  return out;
}

SamplePair augment(const SamplePair& pair, long crop, Rng& rng) {
  if (crop <= 0 || crop % 16 != 0) throw ConfigError("crop size must be a positive multiple of 16");
  Tensor<float> img = reflect_pad_br(pair.image, crop, crop);
  Tensor<float> mask = reflect_pad_br(pair.mask, crop, crop);
  const long ph = img.shape()[0];
  const long pw = img.shape()[1];
  const long oy = rng.randint(0, ph - crop);
  const long ox = rng.randint(0, pw - crop);
  SamplePair out;
  out.id = pair.id;
  out.image = Tensor<float>({crop, crop});
  out.mask = Tensor<float>({crop, crop});
  for (long y = 0; y < crop; ++y) {
    for (long x = 0; x < crop; ++x) {
      out.image.data()[y * crop + x] = img.data()[(oy + y) * pw + (ox + x)];
      out.mask.data()[y * crop + x] = mask.data()[(oy + y) * pw + (ox + x)];
    }
  }
  return out;
}

Batch assemble_batch(const std::vector<SamplePair>& data, const std::vector<std::size_t>& order,
                     std::size_t first, std::size_t n, long crop, Rng& rng) {
  if (n == 0) throw DataError("empty batch");
  if (first + n > order.size()) throw DataError("batch range exceeds dataset order");
  Batch batch;
  batch.images = Tensor<float>({static_cast<long>(n), 1, crop, crop});
  batch.masks = Tensor<float>({static_cast<long>(n), 1, crop, crop});
  const std::size_t plane = static_cast<std::size_t>(crop) * static_cast<std::size_t>(crop);
  for (std::size_t i = 0; i < n; ++i) {
    const SamplePair cropped = augment(data.at(order[first + i]), crop, rng);
    std::copy(cropped.image.data(), cropped.image.data() + plane, batch.images.data() + i * plane);
    std::copy(cropped.mask.data(), cropped.mask.data() + plane, batch.masks.data() + i * plane);
  }
  return batch;
}

namespace {

// Truncated box blur, radius 2, one horizontal and one vertical sweep.
void box_blur(std::vector<float>& v, long h, long w) {
  std::vector<float> tmp(v.size());
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      float s = 0.0f;
      int c = 0;
      for (long k = std::max(0L, x - 2); k <= std::min(w - 1, x + 2); ++k) {
        s += v[y * w + k];
        ++c;
      }
      tmp[y * w + x] = s / static_cast<float>(c);
    }
  }
  for (long x = 0; x < w; ++x) {
    for (long y = 0; y < h; ++y) {
      float s = 0.0f;
      int c = 0;
      for (long k = std::max(0L, y - 2); k <= std::min(h - 1, y + 2); ++k) {
        s += tmp[k * w + x];
        ++c;
      }
      v[y * w + x] = s / static_cast<float>(c);
    }
  }
}

}  // namespace

void synth_generate(const std::string& out_dir, long count, long size, std::uint64_t seed) {
  if (count < 1) throw ConfigError("synthetic dataset needs count >= 1");
  if (size < 16 || size % 16 != 0) throw ConfigError("synthetic image size must be a positive multiple of 16");
  fs::create_directories(out_dir + "/images");
  fs::create_directories(out_dir + "/masks");

  std::vector<std::string> ids;
  for (long k = 0; k < count; ++k) {
    std::ostringstream name;
    name << "img_";
    name.width(4);
    name.fill('0');
    name << k;
    const std::string id = name.str();
    ids.push_back(id);

    // Per-image stream so image k is stable no matter the total count.
    Rng rng(seed_for(seed, "synth:" + id));
    const long h = size;
    const long w = size;
    Tensor<float> img({h, w});
    Tensor<float> mask({h, w});
    mask.fill(0.0f);

    const float base = static_cast<float>(rng.uniform(0.2, 0.4));
    const float gx = static_cast<float>(rng.uniform(-0.1, 0.1));
    const float gy = static_cast<float>(rng.uniform(-0.1, 0.1));
    std::vector<float> noise(static_cast<std::size_t>(h * w));
    for (auto& v : noise) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    box_blur(noise, h, w);
    box_blur(noise, h, w);
    const float amp = static_cast<float>(rng.uniform(0.02, 0.05));
    for (long y = 0; y < h; ++y) {
      for (long x = 0; x < w; ++x) {
        const float fx = static_cast<float>(x) / static_cast<float>(w - 1) - 0.5f;
        const float fy = static_cast<float>(y) / static_cast<float>(h - 1) - 0.5f;
        img.data()[y * w + x] = base + gx * fx + gy * fy + amp * noise[y * w + x];
      }
    }

    // 1-3 hot spots, centers at least 8 px apart and 4 px inside the border.
    const long margin = 4;
    const long n_targets = rng.randint(1, 3);
    std::vector<std::pair<long, long>> centers;
    for (long t = 0; t < n_targets; ++t) {
      long cy = 0;
      long cx = 0;
      bool placed = false;
      for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
        cy = rng.randint(margin, h - 1 - margin);
        cx = rng.randint(margin, w - 1 - margin);
        placed = true;
        for (const auto& c : centers) {
          const long dy = c.first - cy;
          const long dx = c.second - cx;
          if (dy * dy + dx * dx < 64) {
            placed = false;
            break;
          }
        }
      }
      if (!placed) break;
      centers.emplace_back(cy, cx);

      const double sigma = rng.uniform(0.7, 2.5);
      double contrast = rng.uniform(0.15, 0.5);
      contrast = std::min(contrast, 0.98 - static_cast<double>(img.data()[cy * w + cx]));
      const long reach = static_cast<long>(std::ceil(4.0 * sigma));
      const double half_peak = contrast * 0.5;
      for (long y = std::max(0L, cy - reach); y <= std::min(h - 1, cy + reach); ++y) {
        for (long x = std::max(0L, cx - reach); x <= std::min(w - 1, cx + reach); ++x) {
          const double d2 = static_cast<double>((y - cy) * (y - cy) + (x - cx) * (x - cx));
          const double add = contrast * std::exp(-d2 / (2.0 * sigma * sigma));
          img.data()[y * w + x] += static_cast<float>(add);
          if (add > half_peak) mask.data()[y * w + x] = 1.0f;
        }
      }
    }

    for (long i = 0; i < img.numel(); ++i) {
      img.data()[i] = std::min(1.0f, std::max(0.0f, img.data()[i]));
    }
    write_png_gray8(out_dir + "/images/" + id + ".png", img);
    write_png_mask(out_dir + "/masks/" + id + ".png", mask);
  }

  const long n_train = std::max(1L, (4 * count) / 5);
  std::ofstream train_f(out_dir + "/train.txt", std::ios::binary);
  std::ofstream test_f(out_dir + "/test.txt", std::ios::binary);
  if (!train_f || !test_f) throw IoError("cannot write split files under " + out_dir);
  for (long k = 0; k < count; ++k) {
    (k < n_train ? train_f : test_f) << ids[static_cast<std::size_t>(k)] << "\n";
  }
}

}  // namespace dgsp
