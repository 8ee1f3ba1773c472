#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dgsp/rng.hpp"
#include "dgsp/tensor.hpp"

namespace dgsp {

struct SamplePair {
  std::string id;
  Tensor<float> image;  // (H,W), values in [0,1]
  Tensor<float> mask;   // (H,W), values in {0,1}
};

struct Batch {
  Tensor<float> images;  // (N,1,H,W)
  Tensor<float> masks;   // (N,1,H,W)
};

// Reads root/<split>.txt (one id per line) and loads images/<id>.png plus
// masks/<id>.png for each id. Masks binarize at >0.
std::vector<SamplePair> load_dataset(const std::string& root, const std::string& split);

// Mirror-pads on the bottom/right edges (no edge repetition) up to the
// requested dims. Dims smaller than the input are left unchanged.
Tensor<float> reflect_pad_br(const Tensor<float>& img, long out_h, long out_w);

// Random crop with identical geometry for image and mask; inputs smaller than
// the crop are reflect-padded first. crop must be a multiple of 16.
SamplePair augment(const SamplePair& pair, long crop, Rng& rng);

// Crops `n` samples starting at `first` in `order` and stacks them into
// (n,1,crop,crop) image/mask tensors.
Batch assemble_batch(const std::vector<SamplePair>& data, const std::vector<std::size_t>& order,
                     std::size_t first, std::size_t n, long crop, Rng& rng);

// Writes a seeded synthetic infrared-style dataset under out_dir using the
// standard layout (images/, masks/, train.txt, test.txt, 80/20 split).
// Backgrounds are smoothed noise over a gentle intensity gradient; each image
// carries 1-3 small Gaussian hot spots, and the mask marks pixels where a
// spot's contribution exceeds half its peak.
void synth_generate(const std::string& out_dir, long count, long size, std::uint64_t seed);

}  // namespace dgsp
