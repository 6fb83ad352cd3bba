#pragma once

// Classification and disentangling scores: acc_y (W_y on h_y), acc_z (W_z on
// h_z), dis_y / dis_z (error rates of C_y on h_z and C_z on h_y) and their
// mean, the aggregated metric.

#include <cstdio>
#include <iomanip>
#include <optional>

#include "dualdis/trainer.hpp"

namespace dualdis {

/// Mean of the four scores rounded half-up to one decimal. The guard keeps
/// exact decimal ties (e.g. 60.05) from rounding down through binary error.
inline double aggregated_metric(double acc_y, double acc_z, double dis_y, double dis_z) {
  for (double v : {acc_y, acc_z, dis_y, dis_z})
    if (!std::isfinite(v)) throw Error("aggregated metric needs four finite scores");
  const double mean = (acc_y + acc_z + dis_y + dis_z) / 4.0;
  return std::floor(mean * 10.0 + 0.5 + 1e-9) / 10.0;
}

struct MetricsReport {
  std::optional<double> acc_y, acc_z, dis_y, dis_z;
  bool probe_y = false;  // dis_y measured by a post-hoc probe
  bool probe_z = false;

  std::optional<double> aggregated() const {
    if (!acc_y || !acc_z || !dis_y || !dis_z) return std::nullopt;
    return aggregated_metric(*acc_y, *acc_z, *dis_y, *dis_z);
  }
};

inline std::string format_score(const std::optional<double>& v) {
  if (!v) return "--";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", *v);
  return buf;
}

inline std::string metrics_csv_header() { return "name,acc_y,acc_z,dis_y,dis_z,aggregated"; }

inline std::string metrics_csv_row(const std::string& name, const MetricsReport& r) {
  auto cell = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  return name + "," + cell(r.acc_y) + "," + cell(r.acc_z) + "," + cell(r.dis_y) + "," + cell(r.dis_z) + "," + cell(r.aggregated());
}

/// Fixed-width table: Model | h_y->y | h_z->z | h_z->y (dis) | h_y->z (dis) | Aggregated.
inline std::string metrics_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "Model" << std::right << std::setw(9) << "hy->y" << std::setw(9) << "hz->z" << std::setw(9)
     << "hz->y" << std::setw(9) << "hy->z" << std::setw(12) << "Aggregated" << "\n";
  for (const auto& [name, r] : rows) {
    std::string dy = format_score(r.dis_y) + (r.probe_y ? "*" : "");
    std::string dz = format_score(r.dis_z) + (r.probe_z ? "*" : "");
    os << std::left << std::setw(10) << name << std::right << std::setw(9) << format_score(r.acc_y) << std::setw(9) << format_score(r.acc_z)
       << std::setw(9) << dy << std::setw(9) << dz << std::setw(12) << format_score(r.aggregated()) << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Accuracy primitives

/// Argmax per row.
inline std::vector<int> argmax_rows(const Tensor<float>& scores) {
  const int B = scores.dim(0), K = scores.dim(1);
  std::vector<int> out(B);
  for (int r = 0; r < B; ++r) {
    const float* row = scores.data() + static_cast<std::size_t>(r) * K;
    out[r] = static_cast<int>(std::max_element(row, row + K) - row);
  }
  return out;
}

/// Top-1 accuracy in percent.
inline double accuracy_percent(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.empty() || pred.size() != truth.size()) throw Error("accuracy: empty or mismatched prediction list");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == truth[i];
  return 100.0 * static_cast<double>(correct) / static_cast<double>(pred.size());
}

/// Mean per-attribute binary accuracy (percent) at threshold 0.5 over rows
/// whose mask entry is set. `logits` are compared with 0, targets with 0.5.
inline double attribute_accuracy_percent(const Tensor<float>& logits, const Tensor<float>& targets, const Mask& mask = {}) {
  if (logits.shape() != targets.shape() || logits.rank() != 2) throw ShapeError("attribute accuracy", to_string(targets.shape()), logits.shape());
  const int B = logits.dim(0), N = logits.dim(1);
  std::size_t correct = 0, total = 0;
  for (int r = 0; r < B; ++r) {
    if (!mask.empty() && !mask[r]) continue;
    for (int a = 0; a < N; ++a) {
      correct += (logits.at(r, a) > 0.0f) == (targets.at(r, a) > 0.5f);
      ++total;
    }
  }
  if (total == 0) throw Error("attribute accuracy: no labeled rows");
  return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

/// Eval-mode outputs of every head for a set of images.
struct ModelOutputs {
  Tensor<float> h_y, h_z;
  Tensor<float> y_logits, z_logits;        // W_y(h_y), W_z(h_z)
  Tensor<float> adv_y_logits, adv_z_logits;  // C_y(h_z), C_z(h_y)
};

template <class M>
ModelOutputs model_outputs(const M& model, const Tensor<float>& images, int batch = 128) {
  const VariantSwitches& sw = model.switches();
  std::vector<Tensor<float>> hy, hz, yl, zl, ay, az;
  for (int i = 0; i < images.dim(0); i += batch) {
    Tape<float> tape(false);
    const auto h = model.encode(tape.constant(images.slice_rows(i, std::min(images.dim(0), i + batch))), Mode::eval);
    hy.push_back(h.h_y.value());
    yl.push_back(model.y_logits(h.h_y).value());
    if (sw.has_c_z) az.push_back(model.adversary_z_logits(h.h_y, true).value());
    if (sw.z_branch) {
      hz.push_back(h.h_z.value());
      zl.push_back(model.z_logits(h.h_z).value());
      if (sw.has_c_y) ay.push_back(model.adversary_y_logits(h.h_z, true).value());
    }
  }
  auto cat = [](const std::vector<Tensor<float>>& v) { return v.empty() ? Tensor<float>() : concat_rows<float>(v); };
  return {cat(hy), cat(hz), cat(yl), cat(zl), cat(ay), cat(az)};
}

// ---------------------------------------------------------------------------
// Probes: adversaries trained after the fact on frozen latents.

struct ProbeConfig {
  int epochs = 100;
  int batch_size = 64;
  AdamConfig adam;
  std::uint64_t seed = 11;
};

/// Trains a classifier with `specs` on fixed features (rows of `features`).
/// The features are constants, so nothing upstream can change.
class Probe {
 public:
  enum class Target { classes, attributes };

  Probe(std::string name, const std::vector<LayerSpec>& specs, int in_dim, Target target, std::uint64_t seed)
      : target_(target) {
    std::mt19937_64 rng(seed);
    net_ = Stack<float>(std::move(name), specs, StackRole::classifier, {in_dim}, rng);
  }

  void fit(const Tensor<float>& features, const std::vector<int>& y, const Tensor<float>& z, const Mask& has_z, const ProbeConfig& cfg) {
    std::vector<int> rows;
    for (int r = 0; r < features.dim(0); ++r)
      if (target_ == Target::classes || has_z.empty() || has_z[r]) rows.push_back(r);
    if (rows.empty()) throw Error("probe: no labeled rows");
    Adam<float> opt(net_.parameters(), cfg.adam);
    for (int e = 0; e < cfg.epochs; ++e)
      for (const auto& b : epoch_batches(rows, cfg.batch_size, cfg.seed, e)) {
        Tape<float> tape;
        const Var<float> logits = net_.forward(tape.constant(features.gather_rows(b)), Mode::train);
        Var<float> loss;
        if (target_ == Target::classes) {
          std::vector<int> yb;
          for (int r : b) yb.push_back(y[r]);
          loss = loss_class(yb, softmax(logits));
        } else {
          loss = loss_attr(z.gather_rows(b), sigmoid(logits));
        }
        opt.zero_grad();
        tape.backward(loss);
        opt.step();
      }
  }

  Tensor<float> logits(const Tensor<float>& features) const {
    Tape<float> tape(false);
    return net_.forward(tape.constant(features), Mode::eval).value();
  }

 private:
  Target target_;
  Stack<float> net_;
};

/// Scores a model on `eval_rows`. With `probe` set, dis_y/dis_z come from
/// fresh probes trained on `probe_train_rows` instead of the native C_y/C_z.
template <class M>
MetricsReport evaluate_model(const M& model, const Dataset& d, const std::vector<int>& eval_rows,
                             const ProbeConfig* probe = nullptr, const std::vector<int>* probe_train_rows = nullptr) {
  if (eval_rows.empty()) throw Error("evaluate: empty split");
  const Dataset test = d.subset(eval_rows);
  const ModelOutputs out = model_outputs(model, test.images);
  const VariantSwitches& sw = model.switches();
  MetricsReport r;
  r.acc_y = accuracy_percent(argmax_rows(out.y_logits), test.y);
  if (sw.z_branch) r.acc_z = attribute_accuracy_percent(out.z_logits, test.z, test.has_z);
  if (probe) {
    if (!probe_train_rows || probe_train_rows->empty()) throw Error("evaluate: probes need training rows");
    const Dataset train = d.subset(*probe_train_rows);
    const ModelOutputs tr = model_outputs(model, train.images);
    const ModelConfig& mc = model.config();
    if (sw.z_branch) {
      Probe py("probe_y", mc.adversary_y, model.dim_hz(), Probe::Target::classes, probe->seed);
      py.fit(tr.h_z, train.y, train.z, train.has_z, *probe);
      r.dis_y = 100.0 - accuracy_percent(argmax_rows(py.logits(out.h_z)), test.y);
      r.probe_y = true;
    }
    Probe pz("probe_z", mc.adversary_z, model.dim_hy(), Probe::Target::attributes, probe->seed + 1);
    pz.fit(tr.h_y, train.y, train.z, train.has_z, *probe);
    r.dis_z = 100.0 - attribute_accuracy_percent(pz.logits(out.h_y), test.z, test.has_z);
    r.probe_z = true;
  } else {
    if (sw.has_c_y) r.dis_y = 100.0 - accuracy_percent(argmax_rows(out.adv_y_logits), test.y);
    if (sw.has_c_z) r.dis_z = 100.0 - attribute_accuracy_percent(out.adv_z_logits, test.z, test.has_z);
  }
  return r;
}

/// Mean off-diagonal |cosine| between rows of W_z.
template <class M>
double wz_mean_abs_cosine(const M& model) {
  return mean_abs_cosine(model.stack("W_z").layers().front().weight.value());
}

}  // namespace dualdis
