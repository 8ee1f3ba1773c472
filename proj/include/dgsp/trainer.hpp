#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "dgsp/checkpoint.hpp"
#include "dgsp/data.hpp"
#include "dgsp/losses.hpp"
#include "dgsp/metrics.hpp"
#include "dgsp/model.hpp"
#include "dgsp/optim.hpp"
#include "dgsp/prompt.hpp"

namespace dgsp {

enum class Phase { pretrain, train };

const char* phase_name(Phase p);
Phase phase_from_string(const std::string& s);

// base * (1 - step/total)^power.
double poly_lr(long step, long total, double base, double power);

// Owns one phase of the run: model, prompt tokens, optimizer, and the epoch
// loop with logging, evaluation, and checkpointing.
class Trainer {
 public:
  Trainer(nlohmann::json cfg, Phase phase);

  // One optimizer step on a (N,1,H,W) batch. Exposed for tests; fit() is the
  // normal entry point.
  LossValue<float> pretrain_step(const Tensor<float>& images);
  LossValue<float> train_step(const Tensor<float>& images, const Tensor<float>& masks, long step,
                              long total_steps);

  // Runs the configured epochs; returns the per-step total losses.
  std::vector<double> fit();

  // Full-image probability map: reflect-pads to a multiple of 16, runs the
  // detection path, crops back.
  Tensor<float> predict_prob(const Tensor<float>& image);

  EvalReport evaluate_pairs(const std::vector<SamplePair>& pairs);

  Model<float>& model() { return model_; }
  ParamStore<float>& params() { return model_.params; }
  AdamOpt<float>& optimizer() { return opt_; }
  const nlohmann::json& config() const { return cfg_; }
  Phase phase() const { return phase_; }
  std::uint64_t seed() const { return seed_; }
  const TokenSequence& tokens() const { return tokens_; }
  const Vocabulary& vocab() const { return vocab_; }

  void save(const std::string& path, long completed_epochs, long step) const;
  void restore(const Checkpoint& ckpt, bool with_optimizer);

 private:
  TextBundle<float> bundle_for(const std::array<Var<float>, 3>& pre) const;
  void standardize_batch(Tensor<float>& images) const;

  nlohmann::json cfg_;
  Phase phase_;
  std::uint64_t seed_;
  Vocabulary vocab_;
  TokenSequence tokens_;
  Model<float> model_;
  AdamOpt<float> opt_;
  double lr_ = 1e-4;
  double lr_inv_ = 3e-4;
  double poly_power_ = 1.2;
  float lambda1_ = 1.0f;
  float lambda2_ = 1.0f;
  float tau_ = 0.07f;
  long batch_ = 4;
  long crop_ = 64;
  bool standardize_ = false;
};

}  // namespace dgsp
