#pragma once

// Two-optimizer training: each batch takes one step on L_main over
// theta_{E,E_y,E_z,D,W_y,W_z}, then one step on L_disc over theta_{C,U},
// both from the same forward pass.

#include <functional>
#include <ostream>

#include "dualdis/data.hpp"
#include "dualdis/objectives.hpp"
#include "dualdis/optim.hpp"
#include "dualdis/persist.hpp"

namespace dualdis {

class TrainingError : public Error {
 public:
  using Error::Error;
};

struct TrainConfig {
  std::string dataset = "desk";
  Variant variant = Variant::DualDis;
  LossWeights weights;
  int epochs = 30;
  int batch_size = 32;
  int labeled_per_batch = 0;  // > 0: semi-supervised batches with this many z-labeled rows
  std::uint64_t seed = 1;
  AdamConfig adam_main;
  AdamConfig adam_disc;

  void validate() const {
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (labeled_per_batch < 0 || labeled_per_batch > batch_size) throw ConfigError("labeled_per_batch must lie in [0, batch_size]");
    for (double v : {weights.rec, weights.y, weights.z, weights.adv_y, weights.adv_z, weights.orth, weights.disc_y, weights.disc_z,
                     weights.uai_adv, weights.uai_disc}) {
      if (!(v >= 0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and non-negative");
    }
    for (const AdamConfig* a : {&adam_main, &adam_disc})
      if (!(a->lr > 0) || !(a->beta1 >= 0 && a->beta1 < 1) || !(a->beta2 >= 0 && a->beta2 < 1) || !(a->eps > 0)) {
        throw ConfigError("invalid Adam settings");
      }
  }

  std::string to_text() const {
    std::ostringstream os;
    auto kv = [&os](const char* k, const std::string& v) { os << k << " = " << v << "\n"; };
    auto d = [](double v) { return format_double(v); };
    kv("dataset", dataset);
    kv("variant", to_string(variant));
    kv("lambda_rec", d(weights.rec));
    kv("lambda_y", d(weights.y));
    kv("lambda_z", d(weights.z));
    kv("lambda_adv_y", d(weights.adv_y));
    kv("lambda_adv_z", d(weights.adv_z));
    kv("lambda_orth", d(weights.orth));
    kv("lambda_disc_y", d(weights.disc_y));
    kv("lambda_disc_z", d(weights.disc_z));
    kv("lambda_uai_adv", d(weights.uai_adv));
    kv("lambda_uai_disc", d(weights.uai_disc));
    kv("adversarial_kind", to_string(weights.adv_kind));
    kv("epochs", std::to_string(epochs));
    kv("batch_size", std::to_string(batch_size));
    kv("labeled_per_batch", std::to_string(labeled_per_batch));
    kv("seed", std::to_string(seed));
    kv("lr", d(adam_main.lr));
    kv("beta1", d(adam_main.beta1));
    kv("beta2", d(adam_main.beta2));
    kv("adam_eps", d(adam_main.eps));
    kv("disc_lr", d(adam_disc.lr));
    kv("disc_beta1", d(adam_disc.beta1));
    kv("disc_beta2", d(adam_disc.beta2));
    kv("disc_adam_eps", d(adam_disc.eps));
    return os.str();
  }

  /// Overrides fields of `base` with the keys present in `kv`.
  static TrainConfig from_keys(const KeyValues& kv, TrainConfig base) {
    TrainConfig c = std::move(base);
    auto num = [&kv](const char* k, double& v) {
      if (kv.has(k)) v = kv.get_double(k);
    };
    auto integer = [&kv](const char* k, int& v) {
      if (kv.has(k)) v = kv.get_int(k);
    };
    if (kv.has("dataset")) c.dataset = kv.get("dataset");
    if (kv.has("variant")) c.variant = parse_variant(kv.get("variant"));
    num("lambda_rec", c.weights.rec);
    num("lambda_y", c.weights.y);
    num("lambda_z", c.weights.z);
    num("lambda_adv_y", c.weights.adv_y);
    num("lambda_adv_z", c.weights.adv_z);
    num("lambda_orth", c.weights.orth);
    num("lambda_disc_y", c.weights.disc_y);
    num("lambda_disc_z", c.weights.disc_z);
    num("lambda_uai_adv", c.weights.uai_adv);
    num("lambda_uai_disc", c.weights.uai_disc);
    if (kv.has("adversarial_kind")) c.weights.adv_kind = parse_adversarial_kind(kv.get("adversarial_kind"));
    integer("epochs", c.epochs);
    integer("batch_size", c.batch_size);
    integer("labeled_per_batch", c.labeled_per_batch);
    if (kv.has("seed")) c.seed = kv.get_u64("seed");
    num("lr", c.adam_main.lr);
    num("beta1", c.adam_main.beta1);
    num("beta2", c.adam_main.beta2);
    num("adam_eps", c.adam_main.eps);
    num("disc_lr", c.adam_disc.lr);
    num("disc_beta1", c.adam_disc.beta1);
    num("disc_beta2", c.adam_disc.beta2);
    num("disc_adam_eps", c.adam_disc.eps);
    return c;
  }

  static TrainConfig from_text(std::string_view text) { return from_text(text, TrainConfig()); }
  static TrainConfig from_text(std::string_view text, TrainConfig base) {
    const KeyValues kv = KeyValues::parse(text, "train config");
    TrainConfig c = from_keys(kv, std::move(base));
    kv.reject_unused("train config");
    c.validate();
    return c;
  }
};

/// Loss weights, batch size and epoch budget per dataset preset.
inline TrainConfig train_preset(const std::string& dataset, Variant variant) {
  TrainConfig c;
  c.dataset = dataset;
  c.variant = variant;
  LossWeights& w = c.weights;
  if (dataset == "celeba") {
    w.rec = 0.3;
    w.adv_y = w.adv_z = 0.1;
    c.batch_size = 32;
    c.epochs = 330;
  } else if (dataset == "yale") {
    w.rec = 1;
    w.adv_y = w.adv_z = 0.08;
    c.batch_size = 64;
    c.epochs = 400;
  } else if (dataset == "norb") {
    w.rec = 10;
    w.adv_y = w.adv_z = 0.25;
    c.batch_size = 128;
    c.epochs = 250;
  } else if (dataset == "desk") {
    // L_rec sums over 3072 pixel values; a small weight keeps it on the
    // scale of the classification terms.
    w.rec = 0.02;
    w.adv_y = 0.2;
    w.adv_z = 0.3;
    c.batch_size = 32;
    c.epochs = 30;
  } else {
    throw ConfigError("unknown dataset preset '" + dataset + "' (expected desk, yale, norb or celeba)");
  }
  w.uai_adv = 0.3;
  return c;
}

/// Weights for the semi-supervised runs, keyed by the number of labeled images.
inline void apply_ssl_preset(TrainConfig& c, int n_labeled) {
  c.weights.rec = n_labeled >= 4000 ? 0.3 : 0.5;
  c.weights.z = 0.4;
  c.weights.adv_y = 0.2;
  c.weights.adv_z = 0.1;
  c.labeled_per_batch = n_labeled >= 2000 ? 10 : 8;
}

class Trainer;

struct RunOptions {
  std::ostream* log = nullptr;
  std::string checkpoint_path;  // empty: no checkpoints
  int checkpoint_every = 1;     // epochs
  std::function<void(Trainer&)> on_epoch_end;
};

using TermValues = std::vector<std::pair<std::string, double>>;

inline Targets<float> batch_targets(const Batch& b) { return {b.y, b.z, b.has_y, b.has_z}; }

class Trainer {
 public:
  Trainer(const ModelConfig& mc, TrainConfig tc) : tc_(std::move(tc)), model_(mc) {
    tc_.validate();
    if (mc.variant != tc_.variant) {
      throw ConfigError(std::string("model variant ") + to_string(mc.variant) + " differs from training variant " + to_string(tc_.variant));
    }
    make_optimizers();
  }

  /// Resumes from a full checkpoint (model, optimizers and counters).
  explicit Trainer(const Checkpoint& ck)
      : tc_(TrainConfig::from_text(ck.train_text)), model_(restore_model(ck)) {
    make_optimizers();
    restore_optimizer(ck, "main", opt_main_);
    restore_optimizer(ck, "disc", opt_disc_);
    const std::string* e = ck.find_state("epoch");
    const std::string* s = ck.find_state("step");
    if (!e || !s) throw CheckpointError("checkpoint lacks training counters");
    epoch_ = std::stoi(*e);
    step_ = std::stol(*s);
  }

  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  Model<float>& model() { return model_; }
  const Model<float>& model() const { return model_; }
  const TrainConfig& config() const { return tc_; }
  Adam<float>& opt_main() { return opt_main_; }
  Adam<float>& opt_disc() { return opt_disc_; }
  int epoch() const { return epoch_; }
  long step() const { return step_; }

  /// Changes the epoch budget, e.g. to extend a resumed run.
  void set_epochs(int epochs) {
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    tc_.epochs = epochs;
  }

  /// One forward pass, a main step, then a discriminator step.
  TermValues train_step(const Batch& b) {
    Tape<float> tape;
    const Var<float> x = tape.constant(b.x, "x");
    Losses<float> L = total_losses(model_, x, batch_targets(b), tc_.weights, Mode::train);
    for (const auto& [name, v] : L.terms)
      if (!std::isfinite(v)) {
        throw TrainingError("non-finite loss term '" + name + "' at step " + std::to_string(step_) + " (epoch " + std::to_string(epoch_) + ")");
      }
    opt_main_.zero_grad();
    tape.backward(L.main);
    opt_main_.step();
    opt_disc_.zero_grad();
    tape.backward(L.disc);
    opt_disc_.step();
    ++step_;
    return L.terms;
  }

  /// Batches of the next epoch over the train split.
  std::vector<std::vector<int>> epoch_plan(const Dataset& d) const {
    const std::vector<int> train = d.indices(Split::train);
    if (train.empty()) throw DataError("dataset has no train split");
    if (tc_.labeled_per_batch <= 0) return epoch_batches(train, tc_.batch_size, tc_.seed, epoch_);
    std::vector<int> labeled, unlabeled;
    for (int r : train) (d.has_z[r] ? labeled : unlabeled).push_back(r);
    if (labeled.empty() && tc_.weights.z > 0) throw DataError("semi-supervised run without any attribute-labeled sample");
    return ssl_batches(labeled, unlabeled, tc_.labeled_per_batch, tc_.batch_size, tc_.seed, epoch_);
  }

  /// Trains one epoch; per-step terms go to `log` as "step,term,value".
  void train_epoch(const Dataset& d, std::ostream* log = nullptr) {
    for (const auto& rows : epoch_plan(d)) {
      const long s = step_;
      const TermValues terms = train_step(gather_batch(d, rows));
      if (log)
        for (const auto& [name, v] : terms) *log << s << ',' << name << ',' << format_double(v) << '\n';
    }
    ++epoch_;
  }

  /// Trains until `config().epochs`, continuing from the current epoch.
  void run(const Dataset& d) { run(d, RunOptions()); }
  void run(const Dataset& d, const RunOptions& opt) {
    while (epoch_ < tc_.epochs) {
      train_epoch(d, opt.log);
      if (opt.log) opt.log->flush();
      if (opt.on_epoch_end) opt.on_epoch_end(*this);
      if (!opt.checkpoint_path.empty() && (epoch_ % std::max(1, opt.checkpoint_every) == 0 || epoch_ == tc_.epochs)) {
        save_checkpoint(opt.checkpoint_path, checkpoint());
      }
    }
  }

  Checkpoint checkpoint() {
    Checkpoint ck = model_checkpoint(model_);
    ck.train_text = tc_.to_text();
    ck.set_state("epoch", std::to_string(epoch_));
    ck.set_state("step", std::to_string(step_));
    add_optimizer_tensors(ck, "main", opt_main_);
    add_optimizer_tensors(ck, "disc", opt_disc_);
    return ck;
  }

 private:
  void make_optimizers() {
    opt_main_ = Adam<float>(model_.main_parameters(), tc_.adam_main);
    opt_disc_ = Adam<float>(model_.disc_parameters(), tc_.adam_disc);
  }

  TrainConfig tc_;
  Model<float> model_;
  Adam<float> opt_main_, opt_disc_;
  int epoch_ = 0;
  long step_ = 0;
};

// ---------------------------------------------------------------------------
// Stand-alone identity classifier W_y o E_y o E.

class Classifier {
 public:
  Classifier(const ModelConfig& mc, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    E_ = Stack<float>("E", mc.encoder, StackRole::encoder, mc.image_shape(), rng);
    Ey_ = Stack<float>("E_y", mc.encoder_y, StackRole::encoder, E_.output_shape(), rng);
    Wy_ = Stack<float>("W_y", {LayerSpec::linear(mc.n_classes)}, StackRole::head, {Ey_.output_size()}, rng);
  }

  Var<float> logits(const Var<float>& x, Mode mode) const {
    const Var<float> h = flatten(Ey_.forward(E_.forward(x, mode), mode));
    return Wy_.forward(h, mode);
  }

  std::vector<Parameter<float>*> parameters() {
    std::vector<Parameter<float>*> out;
    for (Stack<float>* s : {&E_, &Ey_, &Wy_})
      for (auto* p : s->parameters()) out.push_back(p);
    return out;
  }

  std::vector<int> predict(const Tensor<float>& images, int batch = 128) const {
    std::vector<int> out;
    for (int i = 0; i < images.dim(0); i += batch) {
      Tape<float> tape(false);
      const Var<float> l = logits(tape.constant(images.slice_rows(i, std::min(images.dim(0), i + batch))), Mode::eval);
      const int K = l.dim(1);
      for (int r = 0; r < l.dim(0); ++r) {
        const float* row = l.value().data() + static_cast<std::size_t>(r) * K;
        out.push_back(static_cast<int>(std::max_element(row, row + K) - row));
      }
    }
    return out;
  }

 private:
  Stack<float> E_, Ey_, Wy_;
};

/// Trains a fresh classifier on `train_rows` of `d` and returns its accuracy
/// (percent) on `test_rows`.
inline double retrain_classifier(const ModelConfig& mc, const Dataset& d, const std::vector<int>& train_rows,
                                 const std::vector<int>& test_rows, int epochs, int batch_size, std::uint64_t seed,
                                 AdamConfig adam = {}) {
  if (train_rows.empty() || test_rows.empty()) throw DataError("retrain_classifier: empty train or test rows");
  Classifier net(mc, seed);
  Adam<float> opt(net.parameters(), adam);
  for (int e = 0; e < epochs; ++e) {
    for (const auto& rows : epoch_batches(train_rows, batch_size, seed, e)) {
      const Batch b = gather_batch(d, rows);
      Tape<float> tape;
      const Var<float> loss = loss_class(b.y, softmax(net.logits(tape.constant(b.x), Mode::train)));
      if (!std::isfinite(loss.value()[0])) throw TrainingError("retrain_classifier: non-finite loss at epoch " + std::to_string(e));
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
    }
  }
  const Dataset test = d.subset(test_rows);
  const std::vector<int> pred = net.predict(test.images);
  int correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == test.y[i];
  return 100.0 * correct / static_cast<double>(pred.size());
}

}  // namespace dualdis
