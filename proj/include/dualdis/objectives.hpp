#pragma once

// Loss terms. Classification-type losses take probabilities, clamp them to
// [1e-7, 1 - 1e-7] inside logarithms, and average over the samples whose
// mask entry is set (all samples when the mask is empty).

#include <cstdint>

#include "dualdis/model.hpp"

namespace dualdis {

inline constexpr double kProbClamp = 1e-7;

using Mask = std::vector<std::uint8_t>;

enum class AdversarialKind { inverse_label, max_entropy, uniform };

inline const char* to_string(AdversarialKind k) {
  switch (k) {
    case AdversarialKind::inverse_label: return "inverse-label";
    case AdversarialKind::max_entropy: return "max-entropy";
    case AdversarialKind::uniform: return "uniform";
  }
  return "?";
}

inline AdversarialKind parse_adversarial_kind(std::string_view s) {
  if (s == "inverse-label") return AdversarialKind::inverse_label;
  if (s == "max-entropy") return AdversarialKind::max_entropy;
  if (s == "uniform" || s == "uniform-cross-entropy") return AdversarialKind::uniform;
  throw ConfigError("unknown adversarial objective '" + std::string(s) + "'");
}

struct LossWeights {
  double rec = 1;
  double y = 1;
  double z = 1;
  double adv_y = 1;
  double adv_z = 1;
  double orth = 1e-6;
  double disc_y = 1;
  double disc_z = 1;
  double uai_adv = 0.3;
  double uai_disc = 1;
  AdversarialKind adv_kind = AdversarialKind::inverse_label;
};

namespace detail {

template <class T>
std::vector<int> active_rows(const Mask& mask, int rows, const char* where) {
  if (!mask.empty() && static_cast<int>(mask.size()) != rows) {
    throw ShapeError(where, "mask of " + std::to_string(rows) + " entries", Shape{static_cast<int>(mask.size())});
  }
  std::vector<int> out;
  for (int r = 0; r < rows; ++r)
    if (mask.empty() || mask[r]) out.push_back(r);
  return out;
}

template <class T>
Var<T> zero_scalar(Tape<T>& tape) {
  return tape.constant(Tensor<T>({1}, T(0)), "zero");
}

template <class T>
T clamp_prob(T p) {
  return std::clamp(p, T(kProbClamp), T(1 - kProbClamp));
}

/// d/dp of log(clamp(p)).
template <class T>
T dlog_clamped(T p) {
  return (p > T(kProbClamp) && p < T(1 - kProbClamp)) ? T(1) / p : T(0);
}

}  // namespace detail

/// Mean over the batch of the squared L2 distance (summed over all pixels).
template <class T>
Var<T> loss_rec(const Var<T>& x, const Var<T>& x_hat) {
  if (x.shape() != x_hat.shape()) throw ShapeError("loss_rec", to_string(x.shape()), x_hat.shape());
  const int B = x.dim(0);
  T s = 0;
  for (std::size_t i = 0; i < x.value().size(); ++i) {
    const T d = x_hat.value()[i] - x.value()[i];
    s += d * d;
  }
  const T inv_b = T(1) / static_cast<T>(std::max(B, 1));
  return x.tape()->record(Tensor<T>({1}, s * inv_b), {x, x_hat}, [x, x_hat, inv_b](Node<T>& n) {
    const T g = n.grad[0] * T(2) * inv_b;
    if (auto* gh = grad_target(x_hat))
      for (std::size_t i = 0; i < gh->size(); ++i) (*gh)[i] += g * (x_hat.value()[i] - x.value()[i]);
    if (auto* gx = grad_target(x))
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] -= g * (x_hat.value()[i] - x.value()[i]);
  }, "loss_rec");
}

/// Mean squared error over all elements.
template <class T>
Var<T> loss_mse(const Var<T>& target, const Var<T>& pred) {
  if (target.shape() != pred.shape()) throw ShapeError("mse", to_string(target.shape()), pred.shape());
  const T inv_n = T(1) / static_cast<T>(std::max<std::size_t>(target.value().size(), 1));
  T s = 0;
  for (std::size_t i = 0; i < pred.value().size(); ++i) {
    const T d = pred.value()[i] - target.value()[i];
    s += d * d;
  }
  return pred.tape()->record(Tensor<T>({1}, s * inv_n), {target, pred}, [target, pred, inv_n](Node<T>& n) {
    const T g = n.grad[0] * T(2) * inv_n;
    if (auto* gp = grad_target(pred))
      for (std::size_t i = 0; i < gp->size(); ++i) (*gp)[i] += g * (pred.value()[i] - target.value()[i]);
    if (auto* gt = grad_target(target))
      for (std::size_t i = 0; i < gt->size(); ++i) (*gt)[i] -= g * (pred.value()[i] - target.value()[i]);
  }, "mse");
}

/// Cross-entropy of class labels under row probabilities `p` (B, K).
template <class T>
Var<T> loss_class(const std::vector<int>& y, const Var<T>& p, const Mask& mask = {}) {
  detail::require_rank(p, 2, "loss_class");
  const int B = p.dim(0), K = p.dim(1);
  if (static_cast<int>(y.size()) != B) throw ShapeError("loss_class", "(" + std::to_string(y.size()) + ",K) probabilities", p.shape());
  const auto rows = detail::active_rows<T>(mask, B, "loss_class");
  if (rows.empty()) return detail::zero_scalar(*p.tape());
  T s = 0;
  for (int r : rows) {
    if (y[r] < 0 || y[r] >= K) throw Error("loss_class: label " + std::to_string(y[r]) + " outside [0," + std::to_string(K) + ")");
    s -= std::log(detail::clamp_prob(p.value().at(r, y[r])));
  }
  const T inv = T(1) / static_cast<T>(rows.size());
  return p.tape()->record(Tensor<T>({1}, s * inv), {p}, [p, y, rows, inv, K](Node<T>& n) {
    if (auto* g = grad_target(p))
      for (int r : rows) (*g)[r * K + y[r]] -= n.grad[0] * inv * detail::dlog_clamped(p.value().at(r, y[r]));
  }, "loss_class");
}

/// Binary cross-entropy against soft targets `z` in [0,1], averaged over attributes.
template <class T>
Var<T> loss_attr(const Tensor<T>& z, const Var<T>& p, const Mask& mask = {}) {
  detail::require_rank(p, 2, "loss_attr");
  if (z.shape() != p.shape()) throw ShapeError("loss_attr", to_string(z.shape()), p.shape());
  const int B = p.dim(0), K = p.dim(1);
  const auto rows = detail::active_rows<T>(mask, B, "loss_attr");
  if (rows.empty()) return detail::zero_scalar(*p.tape());
  T s = 0;
  for (int r : rows)
    for (int k = 0; k < K; ++k) {
      const T t = z.at(r, k), q = detail::clamp_prob(p.value().at(r, k));
      s -= t * std::log(q) + (T(1) - t) * std::log(T(1) - q);
    }
  const T inv = T(1) / static_cast<T>(rows.size() * K);
  return p.tape()->record(Tensor<T>({1}, s * inv), {p}, [p, z, rows, inv, K](Node<T>& n) {
    if (auto* g = grad_target(p))
      for (int r : rows)
        for (int k = 0; k < K; ++k) {
          const T t = z.at(r, k), q = p.value().at(r, k);
          const T d = t * detail::dlog_clamped(q) - (T(1) - t) * detail::dlog_clamped(T(1) - q);
          (*g)[r * K + k] -= n.grad[0] * inv * d;
        }
  }, "loss_attr");
}

/// Mean over rows of sum_k p log p (negative entropy); `binary` treats each
/// entry as an independent Bernoulli and averages over entries.
template <class T>
Var<T> negative_entropy(const Var<T>& p, bool binary) {
  detail::require_rank(p, 2, "negative_entropy");
  const int B = p.dim(0), K = p.dim(1);
  auto term = [](T q) { return q * std::log(detail::clamp_prob(q)); };
  auto dterm = [](T q) { return std::log(detail::clamp_prob(q)) + q * detail::dlog_clamped(q); };
  T s = 0;
  for (std::size_t i = 0; i < p.value().size(); ++i) {
    const T q = p.value()[i];
    s += binary ? term(q) + term(T(1) - q) : term(q);
  }
  const T inv = T(1) / static_cast<T>(binary ? B * K : B);
  return p.tape()->record(Tensor<T>({1}, s * inv), {p}, [p, binary, inv, term, dterm](Node<T>& n) {
    if (auto* g = grad_target(p))
      for (std::size_t i = 0; i < g->size(); ++i) {
        const T q = p.value()[i];
        (*g)[i] += n.grad[0] * inv * (binary ? dterm(q) - dterm(T(1) - q) : dterm(q));
      }
  }, "negative_entropy");
}

/// Adversarial objective for the class adversary C_y(h_z); minimized by the encoders.
template <class T>
Var<T> loss_adv_y(const std::vector<int>& y, const Var<T>& p_adv, AdversarialKind kind, const Mask& mask = {}) {
  switch (kind) {
    case AdversarialKind::inverse_label: return scale(loss_class(y, p_adv, mask), T(-1));
    case AdversarialKind::max_entropy: return negative_entropy(p_adv, false);
    case AdversarialKind::uniform: {
      // CE(uniform, p) = -(1/K) sum_k log p_k, averaged over rows.
      const int B = p_adv.dim(0), K = p_adv.dim(1);
      T s = 0;
      for (std::size_t i = 0; i < p_adv.value().size(); ++i) s -= std::log(detail::clamp_prob(p_adv.value()[i]));
      const T inv = T(1) / static_cast<T>(B * K);
      return p_adv.tape()->record(Tensor<T>({1}, s * inv), {p_adv}, [p_adv, inv](Node<T>& n) {
        if (auto* g = grad_target(p_adv))
          for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= n.grad[0] * inv * detail::dlog_clamped(p_adv.value()[i]);
      }, "loss_adv_uniform");
    }
  }
  throw Error("loss_adv_y: unknown adversarial objective");
}

/// Adversarial objective for the attribute adversary C_z(h_y); minimized by the encoders.
template <class T>
Var<T> loss_adv_z(const Tensor<T>& z, const Var<T>& p_adv, AdversarialKind kind, const Mask& mask = {}) {
  switch (kind) {
    case AdversarialKind::inverse_label: {
      Tensor<T> inv = z;
      for (auto& v : inv.values()) v = T(1) - v;
      return loss_attr(inv, p_adv, mask);
    }
    case AdversarialKind::max_entropy: return negative_entropy(p_adv, true);
    case AdversarialKind::uniform: return loss_attr(Tensor<T>(p_adv.shape(), T(0.5)), p_adv);
  }
  throw Error("loss_adv_z: unknown adversarial objective");
}

/// Sum over i != j of cosine similarities between rows of W (N, d).
template <class T>
Var<T> loss_orth(const Var<T>& w) {
  detail::require_rank(w, 2, "loss_orth");
  const int N = w.dim(0), d = w.dim(1);
  const T eps = T(1e-8);
  auto norms = std::make_shared<std::vector<T>>(N);
  auto unit = std::make_shared<std::vector<T>>(static_cast<std::size_t>(N) * d);
  for (int i = 0; i < N; ++i) {
    T s = 0;
    for (int k = 0; k < d; ++k) s += w.value().at(i, k) * w.value().at(i, k);
    (*norms)[i] = std::max(std::sqrt(s), eps);
    for (int k = 0; k < d; ++k) (*unit)[i * d + k] = w.value().at(i, k) / (*norms)[i];
  }
  // sum_{i != j} u_i . u_j = |sum_i u_i|^2 - sum_i |u_i|^2
  std::vector<T> total(d, T(0));
  for (int i = 0; i < N; ++i)
    for (int k = 0; k < d; ++k) total[k] += (*unit)[i * d + k];
  T s = 0;
  for (int k = 0; k < d; ++k) s += total[k] * total[k];
  for (int i = 0; i < N; ++i)
    for (int k = 0; k < d; ++k) s -= (*unit)[i * d + k] * (*unit)[i * d + k];
  return w.tape()->record(Tensor<T>({1}, s), {w}, [w, norms, unit, N, d, eps](Node<T>& n) {
    auto* g = grad_target(w);
    if (!g) return;
    std::vector<T> total(d, T(0));
    for (int i = 0; i < N; ++i)
      for (int k = 0; k < d; ++k) total[k] += (*unit)[i * d + k];
    for (int i = 0; i < N; ++i) {
      const T* u = unit->data() + i * d;
      // dL/du_i = 2 (total - u_i); project through the normalization.
      std::vector<T> gu(d);
      T dot = 0;
      for (int k = 0; k < d; ++k) {
        gu[k] = T(2) * (total[k] - u[k]);
        dot += gu[k] * u[k];
      }
      const bool clamped = (*norms)[i] <= eps;
      for (int k = 0; k < d; ++k) {
        const T gk = clamped ? gu[k] / eps : (gu[k] - dot * u[k]) / (*norms)[i];
        (*g)[i * d + k] += n.grad[0] * gk;
      }
    }
  }, "loss_orth");
}

/// Mean over distinct pairs of |cos(w_i, w_j)|, the reported orthogonality score.
template <class T>
double mean_abs_cosine(const Tensor<T>& w) {
  const int N = w.dim(0), d = w.dim(1);
  if (N < 2) return 0.0;
  double s = 0;
  int pairs = 0;
  for (int i = 0; i < N; ++i)
    for (int j = i + 1; j < N; ++j) {
      double dot = 0, ni = 0, nj = 0;
      for (int k = 0; k < d; ++k) {
        dot += double(w.at(i, k)) * w.at(j, k);
        ni += double(w.at(i, k)) * w.at(i, k);
        nj += double(w.at(j, k)) * w.at(j, k);
      }
      s += std::abs(dot) / std::max(std::sqrt(ni * nj), 1e-12);
      ++pairs;
    }
  return s / pairs;
}

/// UAI predictor loss: MSE for the predictors, negated MSE for the encoders.
enum class UaiSide { disc, adv };

template <class T>
Var<T> loss_uai(const LatentPair<T>& h, const LatentPair<T>& predicted, UaiSide side) {
  Var<T> s = add(loss_mse(h.h_y, predicted.h_y), loss_mse(h.h_z, predicted.h_z));
  return side == UaiSide::disc ? s : scale(s, T(-1));
}

/// Class labels, attribute targets and supervision masks of one batch.
template <class T>
struct Targets {
  std::vector<int> y;
  Tensor<T> z;
  Mask has_y;
  Mask has_z;
};

/// Per-term values (unweighted) plus the two aggregate losses.
template <class T>
struct Losses {
  Var<T> main;
  Var<T> disc;
  std::vector<std::pair<std::string, double>> terms;
  LatentPair<T> latents;
  Var<T> x_hat;

  double term(std::string_view name) const {
    for (const auto& [n, v] : terms)
      if (n == name) return v;
    return 0.0;
  }
};

/// One forward pass of `model` producing every loss term its variant enables.
///
/// L_main reaches theta_{E,E_y,E_z,D,W_y,W_z}: adversaries and predictors
/// enter through frozen views. L_disc reaches theta_{C,U} only: its inputs
/// are detached latents. A gradient-blocked L_z (probe) trains W_z alone.
template <class T>
Losses<T> total_losses(const Model<T>& model, const Var<T>& x, const Targets<T>& t, const LossWeights& w, Mode mode) {
  Tape<T>& tape = *x.tape();
  const VariantSwitches& sw = model.switches();
  Losses<T> out;
  std::vector<std::pair<T, Var<T>>> main_terms, disc_terms;
  auto log_term = [&out](const char* name, const Var<T>& v) {
    out.terms.emplace_back(name, static_cast<double>(v.value()[0]));
    return v;
  };
  auto add_main = [&](const char* name, double weight, const Var<T>& v) {
    main_terms.emplace_back(static_cast<T>(weight), log_term(name, v));
  };
  auto add_disc = [&](const char* name, double weight, const Var<T>& v) {
    disc_terms.emplace_back(static_cast<T>(weight), log_term(name, v));
  };

  const LatentPair<T> h = model.encode(x, mode);
  out.latents = h;
  const Var<T> hy_d = detach(h.h_y);
  const Var<T> hz_d = sw.z_branch ? detach(h.h_z) : Var<T>();

  if (sw.decoder) {
    const Var<T> second = sw.mtan ? tape.constant(t.z, "z") : h.h_z;
    out.x_hat = model.decode(h.h_y, second, mode);
    add_main("rec", w.rec, loss_rec(x, out.x_hat));
  }
  add_main("y", w.y, loss_class(t.y, softmax(model.y_logits(h.h_y)), t.has_y));
  if (sw.z_branch) {
    if (sw.z_supervised) {
      add_main("z", w.z, loss_attr(t.z, sigmoid(model.z_logits(h.h_z)), t.has_z));
    } else {
      add_main("z_probe", 1.0, loss_attr(t.z, sigmoid(model.z_logits(hz_d)), t.has_z));
    }
  }
  if (sw.adv_y) add_main("adv_y", w.adv_y, loss_adv_y(t.y, softmax(model.adversary_y_logits(h.h_z, true)), w.adv_kind, t.has_y));
  if (sw.adv_z) add_main("adv_z", w.adv_z, loss_adv_z(t.z, sigmoid(model.adversary_z_logits(h.h_y, true)), w.adv_kind, t.has_z));
  if (sw.orth) {
    const auto& wz = model.stack("W_z").layers().front().weight;
    add_main("orth", w.orth, loss_orth(wz.var(tape)));
  }
  if (sw.uai) {
    add_main("uai_adv", w.uai_adv, loss_uai(h, model.uai_predict(h, true), UaiSide::adv));
    const LatentPair<T> hd{hy_d, hz_d};
    add_disc("uai_disc", w.uai_disc, loss_uai(hd, model.uai_predict(hd, false), UaiSide::disc));
  }
  if (sw.has_c_y) add_disc("disc_y", w.disc_y, loss_class(t.y, softmax(model.adversary_y_logits(hz_d, false)), t.has_y));
  if (sw.has_c_z) add_disc("disc_z", w.disc_z, loss_attr(t.z, sigmoid(model.adversary_z_logits(hy_d, false)), t.has_z));

  out.main = weighted_sum(tape, main_terms);
  out.disc = weighted_sum(tape, disc_terms);
  out.terms.emplace_back("main", static_cast<double>(out.main.value()[0]));
  out.terms.emplace_back("disc", static_cast<double>(out.disc.value()[0]));
  return out;
}

}  // namespace dualdis
