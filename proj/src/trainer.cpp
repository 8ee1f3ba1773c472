#include "dgsp/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include "dgsp/config.hpp"

namespace dgsp {
namespace fs = std::filesystem;

const char* phase_name(Phase p) { return p == Phase::pretrain ? "pretrain" : "train"; }

Phase phase_from_string(const std::string& s) {
  if (s == "pretrain") return Phase::pretrain;
  if (s == "train") return Phase::train;
  throw ConfigError("unknown phase: " + s);
}

double poly_lr(long step, long total, double base, double power) {
  if (total <= 0) throw ConfigError("poly_lr needs total > 0");
  if (step < 0 || step > total) throw ConfigError("poly_lr step outside [0, total]");
  return base * std::pow(1.0 - static_cast<double>(step) / static_cast<double>(total), power);
}

namespace {

Vocabulary make_vocab(const nlohmann::json& cfg) {
  const std::string file = cfg.at("prompt").at("vocab_file").get<std::string>();
  return file.empty() ? Vocabulary::builtin() : Vocabulary::from_file(file);
}

TokenSequence make_tokens(const nlohmann::json& cfg, const Vocabulary& vocab) {
  const auto tmpl = build_template(static_cast<int>(cfg.at("model").at("n_tokens").get<long>()),
                                   cfg.at("prompt").at("scene").get<std::string>());
  return tokenize(tmpl.text, vocab, cfg.at("model").at("context_len").get<long>());
}

ModelConfig make_model_config(const nlohmann::json& cfg, const Vocabulary& vocab) {
  ModelConfig mc = model_config_from(cfg);
  mc.vocab_size = vocab.size();
  mc.validate();
  return mc;
}

}  // namespace

Trainer::Trainer(nlohmann::json cfg, Phase phase)
    : cfg_(std::move(cfg)),
      phase_(phase),
      seed_(resolve_seed(cfg_)),
      vocab_(make_vocab(cfg_)),
      tokens_(make_tokens(cfg_, vocab_)),
      model_(make_model_config(cfg_, vocab_), seed_,
             phase == Phase::pretrain ? ModelParts::pretrain() : ModelParts::train()),
      opt_(0.9, 0.999, 1e-8,
           phase == Phase::pretrain ? cfg_.at("train").at("weight_decay").get<double>() : 0.0) {
  const auto& t = cfg_.at("train");
  lr_ = t.at("lr").get<double>();
  lr_inv_ = t.at("lr_inversion").get<double>();
  poly_power_ = t.at("poly_power").get<double>();
  lambda1_ = t.at("lambda1").get<float>();
  lambda2_ = t.at("lambda2").get<float>();
  tau_ = t.at("tau").get<float>();
  batch_ = t.at("batch").get<long>();
  crop_ = cfg_.at("data").at("crop").get<long>();
  standardize_ = cfg_.at("data").at("standardize").get<bool>();
  if (batch_ < 1) throw ConfigError("train.batch must be >= 1");
  if (poly_power_ <= 0.0) throw ConfigError("train.poly_power must be > 0");
  // The inversion net only learns during pretraining; the text encoder is
  // frozen by construction.
  if (phase_ == Phase::train) model_.params.set_trainable("inversion", false);
}

TextBundle<float> Trainer::bundle_for(const std::array<Var<float>, 3>& pre) const {
  return make_bundle(model_, pre[0], pre[1], pre[2], tokens_);
}

void Trainer::standardize_batch(Tensor<float>& images) const {
  const long n = images.shape()[0];
  const long plane = images.numel() / n;
  for (long i = 0; i < n; ++i) {
    float* p = images.data() + i * plane;
    double mean = 0.0;
    for (long j = 0; j < plane; ++j) mean += p[j];
    mean /= static_cast<double>(plane);
    double var = 0.0;
    for (long j = 0; j < plane; ++j) {
      const double d = p[j] - mean;
      var += d * d;
    }
    const double inv = 1.0 / (std::sqrt(var / static_cast<double>(plane)) + 1e-6);
    for (long j = 0; j < plane; ++j) p[j] = static_cast<float>((p[j] - mean) * inv);
  }
}

LossValue<float> Trainer::pretrain_step(const Tensor<float>& images) {
  if (phase_ != Phase::pretrain) throw ConfigError("pretrain_step called outside the pretrain phase");
  const Var<float> x = Var<float>::constant(images);
  const auto pre = model_.pre_encode(x);
  const TextBundle<float> text = bundle_for(pre);
  const auto re = model_.re_encode(pre[2], text.eot);
  const Var<float> recon = model_.recon_decode(re[1]);
  LossValue<float> loss = pretrain_loss(model_, recon, x, re[1], text.eot, tau_);
  model_.params.zero_grad();
  loss.total.backward();
  opt_.step(model_.params,
            [&](const ParamStore<float>::Entry& e) { return e.group == "inversion" ? lr_inv_ : lr_; });
  return loss;
}

LossValue<float> Trainer::train_step(const Tensor<float>& images, const Tensor<float>& masks,
                                     long step, long total_steps) {
  if (phase_ != Phase::train) throw ConfigError("train_step called outside the train phase");
  const Var<float> x = Var<float>::constant(images);
  const Var<float> y = Var<float>::constant(masks);
  const auto pre = model_.pre_encode(x);
  const TextBundle<float> text = bundle_for(pre);
  const auto re = model_.re_encode(pre[2], text.eot);
  const FeaturePyramid<float> feats{{pre[0], pre[1], pre[2], re[0], re[1]}};
  const Var<float> pred = model_.decode(feats, text);
  LossValue<float> loss = train_loss(pred, y, lambda1_, lambda2_);
  model_.params.zero_grad();
  loss.total.backward();
  const double lr = poly_lr(step, total_steps, lr_, poly_power_);
  opt_.step(model_.params, [&](const ParamStore<float>::Entry&) { return lr; });
  return loss;
}

Tensor<float> Trainer::predict_prob(const Tensor<float>& image) {
  if (image.shape().size() != 2) throw ShapeError("predict expects a (H,W) image");
  const long h = image.shape()[0];
  const long w = image.shape()[1];
  const long ph = (h + 15) / 16 * 16;
  const long pw = (w + 15) / 16 * 16;
  Tensor<float> padded = reflect_pad_br(image, ph, pw);
  Tensor<float> input({1, 1, ph, pw});
  std::copy(padded.data(), padded.data() + padded.numel(), input.data());
  if (standardize_) standardize_batch(input);

  const Var<float> x = Var<float>::constant(input);
  const auto pre = model_.pre_encode(x);
  const TextBundle<float> text = bundle_for(pre);
  const auto re = model_.re_encode(pre[2], text.eot);
  const FeaturePyramid<float> feats{{pre[0], pre[1], pre[2], re[0], re[1]}};
  const Var<float> pred = model_.decode(feats, text);

  Tensor<float> out({h, w});
  const Tensor<float>& p = pred.value();
  for (long y = 0; y < h; ++y) {
    for (long xx = 0; xx < w; ++xx) out.data()[y * w + xx] = p.data()[y * pw + xx];
  }
  return out;
}

EvalReport Trainer::evaluate_pairs(const std::vector<SamplePair>& pairs) {
  std::vector<Tensor<float>> preds;
  std::vector<Tensor<float>> gts;
  preds.reserve(pairs.size());
  gts.reserve(pairs.size());
  for (const auto& pair : pairs) {
    preds.push_back(predict_prob(pair.image));
    gts.push_back(pair.mask);
  }
  const auto& m = cfg_.at("metrics");
  return evaluate_dataset(preds, gts, m.at("threshold").get<double>(), m.at("radius").get<double>(),
                          static_cast<int>(m.at("connectivity").get<long>()));
}

void Trainer::save(const std::string& path, long completed_epochs, long step) const {
  nlohmann::json meta;
  meta["phase"] = phase_name(phase_);
  meta["step"] = step;
  meta["epoch"] = completed_epochs;
  meta["config"] = cfg_;
  save_checkpoint(path, model_.params, &opt_, meta);
}

void Trainer::restore(const Checkpoint& ckpt, bool with_optimizer) {
  restore_strict(ckpt, model_.params, with_optimizer ? &opt_ : nullptr);
}

std::vector<double> Trainer::fit() {
  const std::string root = cfg_.at("data").at("root").get<std::string>();
  if (root.empty()) throw ConfigError("data.root must point at a dataset");
  auto train_data = load_dataset(root, "train");
  if (train_data.empty()) throw DataError("training split is empty");
  std::vector<SamplePair> test_data;
  if (fs::exists(root + "/test.txt")) test_data = load_dataset(root, "test");
  if (test_data.empty()) std::cerr << "[dgsp] no test split; skipping evaluation\n";

  const auto& tc = cfg_.at("train");
  const long epochs = tc.at("epochs").get<long>();
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  const long spe = static_cast<long>(train_data.size()) / batch_;
  if (spe < 1) throw ConfigError("train.batch exceeds the training split size");
  const long total_steps = epochs * spe;
  const long eval_every = tc.at("eval_every").get<long>();
  const long save_every = tc.at("save_every").get<long>();
  const std::string out_dir = tc.at("out_dir").get<std::string>();
  fs::create_directories(out_dir);

  long start_epoch = 0;
  long gstep = 0;
  const std::string resume = tc.at("resume").get<std::string>();
  const std::string init_ck = tc.at("init_checkpoint").get<std::string>();
  if (!resume.empty() && !init_ck.empty()) {
    throw ConfigError("set train.resume or train.init_checkpoint, not both");
  }
  if (!resume.empty()) {
    const Checkpoint ck = load_checkpoint(resume);
    if (ck.meta.value("phase", std::string()) != phase_name(phase_)) {
      throw ConfigError("resume checkpoint is from phase '" + ck.meta.value("phase", std::string()) +
                        "', expected '" + phase_name(phase_) + "'");
    }
    restore_strict(ck, model_.params, &opt_);
    start_epoch = ck.meta.value("epoch", 0L);
    gstep = ck.meta.value("step", 0L);
    std::cerr << "[dgsp] resumed from " << resume << " at epoch " << start_epoch << "\n";
  } else if (!init_ck.empty()) {
    if (phase_ != Phase::train) throw ConfigError("train.init_checkpoint only applies to phase train");
    restore_transfer(load_checkpoint(init_ck), model_.params);
    std::cerr << "[dgsp] initialized encoder/prompt weights from " << init_ck << "\n";
  } else if (phase_ == Phase::train) {
    std::cerr << "[dgsp] warning: cold start without a pretraining checkpoint\n";
  }

  std::ofstream log(out_dir + "/log.jsonl", resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError("cannot write metric log under " + out_dir);

  double best_iou = -1.0;
  std::vector<double> losses;
  for (long e = start_epoch; e < epochs; ++e) {
    Rng rng(seed_for(seed_, "epoch:" + std::to_string(e)));
    std::vector<std::size_t> order(train_data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);

    for (long s = 0; s < spe; ++s) {
      Batch b = assemble_batch(train_data, order, static_cast<std::size_t>(s) * batch_,
                               static_cast<std::size_t>(batch_), crop_, rng);
      if (standardize_) standardize_batch(b.images);
      const double lr =
          phase_ == Phase::train ? poly_lr(gstep, total_steps, lr_, poly_power_) : lr_;
      const LossValue<float> lv = phase_ == Phase::pretrain
                                      ? pretrain_step(b.images)
                                      : train_step(b.images, b.masks, gstep, total_steps);
      ++gstep;
      losses.push_back(static_cast<double>(lv.total.value()[0]));

      nlohmann::json row;
      row["phase"] = phase_name(phase_);
      row["epoch"] = e;
      row["step"] = gstep;
      row["lr"] = lr;
      row["loss"] = losses.back();
      for (const auto& [cname, cvar] : lv.components) {
        row[cname] = static_cast<double>(cvar.value()[0]);
      }
      log << row.dump() << "\n";
    }

    if (phase_ == Phase::train && !test_data.empty() && eval_every > 0 && (e + 1) % eval_every == 0) {
      const EvalReport rep = evaluate_pairs(test_data);
      nlohmann::json row;
      row["phase"] = phase_name(phase_);
      row["epoch"] = e;
      row["step"] = gstep;
      row["eval"] = {{"iou", rep.iou}, {"pd", rep.pd}, {"fa", rep.fa}};
      log << row.dump() << "\n";
      if (rep.iou > best_iou) {
        best_iou = rep.iou;
        save(out_dir + "/best.ckpt", e + 1, gstep);
      }
    }
    if (save_every > 0 && (e + 1) % save_every == 0) {
      // Stamped snapshots stay around so a later run can resume from any
      // period boundary; last.ckpt always mirrors the newest one.
      char stamp[32];
      std::snprintf(stamp, sizeof(stamp), "epoch_%04ld.ckpt", e + 1);
      const std::string stamped = out_dir + "/" + stamp;
      save(stamped, e + 1, gstep);
      std::filesystem::copy_file(stamped, out_dir + "/last.ckpt",
                                 std::filesystem::copy_options::overwrite_existing);
    }
    log.flush();
  }
  save(out_dir + "/final.ckpt", epochs, gstep);
  return losses;
}

}  // namespace dgsp
