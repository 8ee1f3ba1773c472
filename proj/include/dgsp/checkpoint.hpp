#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dgsp/optim.hpp"
#include "dgsp/params.hpp"
#include "dgsp/tensor.hpp"

namespace dgsp {

// On-disk layout: 6-byte magic, a little-endian u64 manifest size, a JSON
// manifest, then raw little-endian f32 blobs. The first manifest entry is a
// pseudo-tensor named "__meta__" carrying run metadata (phase, step, epoch,
// opt_step, config); every other entry records name/dtype/shape plus its
// offset and byte count inside the blob region.
struct Checkpoint {
  nlohmann::json meta;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>* find(const std::string& name) const;
};

// Serializes every model parameter, plus opt.m.* / opt.v.* slots for the
// trainable ones when an optimizer is given.
void save_checkpoint(const std::string& path, const ParamStore<float>& params,
                     const AdamOpt<float>* opt, const nlohmann::json& meta);

Checkpoint load_checkpoint(const std::string& path);

// Same-phase resume: every parameter must be present with a matching shape;
// optimizer slots and step counter are restored when an optimizer is given.
void restore_strict(const Checkpoint& ckpt, ParamStore<float>& params, AdamOpt<float>* opt);

// Cross-phase transfer: copies the name intersection (shapes must agree).
// Detection-decoder parameters may be absent from the checkpoint; extra
// checkpoint entries (reconstruction head, projection, optimizer slots) are
// dropped. Any other missing model parameter is an error.
void restore_transfer(const Checkpoint& ckpt, ParamStore<float>& params);

}  // namespace dgsp
