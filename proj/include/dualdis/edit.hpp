#pragma once

// Latent editing: moving h_z along rows of W_z (slide, flip), crossing h_y
// and h_z of two images (mix), and planning edited training images that
// fill missing attribute categories per class (augmentation).

#include <numeric>
#include <optional>

#include "dualdis/evaluate.hpp"

namespace dualdis {

class EditError : public Error {
 public:
  using Error::Error;
};

struct Latents {
  Tensor<float> h_y;  // (B, dim_hy)
  Tensor<float> h_z;  // (B, dim_hz)
};

inline Tensor<float> clamp01(Tensor<float> t) {
  for (auto& v : t.values()) v = std::clamp(v, 0.0f, 1.0f);
  return t;
}

template <class M>
void require_editable(const M& model, const char* what) {
  const VariantSwitches& sw = model.switches();
  if (!sw.decoder || !sw.z_branch) {
    throw EditError(std::string(what) + ": variant " + to_string(model.config().variant) + " has no decoder or no h_z branch");
  }
}

template <class M>
Latents encode_images(const M& model, const Tensor<float>& images, int batch = 128) {
  const ModelOutputs o = model_outputs(model, images, batch);
  return {o.h_y, o.h_z};
}

/// Decoded images clamped to [0,1].
template <class M>
Tensor<float> decode_latents(const M& model, const Tensor<float>& h_y, const Tensor<float>& h_z, int batch = 128) {
  require_editable(model, "decode");
  if (h_y.dim(0) != h_z.dim(0)) throw EditError("decode: h_y and h_z row counts differ");
  std::vector<Tensor<float>> parts;
  for (int i = 0; i < h_y.dim(0); i += batch) {
    const int e = std::min(h_y.dim(0), i + batch);
    Tape<float> tape(false);
    parts.push_back(model.decode(tape.constant(h_y.slice_rows(i, e)), tape.constant(h_z.slice_rows(i, e)), Mode::eval).value());
  }
  return clamp01(concat_rows<float>(parts));
}

template <class M>
Tensor<float> reconstruct(const M& model, const Tensor<float>& images) {
  const Latents h = encode_images(model, images);
  return decode_latents(model, h.h_y, h.h_z);
}

/// W_z h_z for each row.
template <class M>
Tensor<float> attribute_logits(const M& model, const Tensor<float>& h_z) {
  Tape<float> tape(false);
  return model.z_logits(tape.constant(h_z)).value();
}

/// Row i of W_z.
template <class M>
std::vector<float> attribute_direction(const M& model, int attribute) {
  const Tensor<float>& w = model.stack("W_z").layers().front().weight.value();
  if (attribute < 0 || attribute >= w.dim(0)) {
    throw EditError("attribute index " + std::to_string(attribute) + " outside 0.." + std::to_string(w.dim(0) - 1));
  }
  return {w.data() + static_cast<std::size_t>(attribute) * w.dim(1), w.data() + static_cast<std::size_t>(attribute + 1) * w.dim(1)};
}

inline double squared_norm(const std::vector<float>& v) {
  double s = 0;
  for (float x : v) s += static_cast<double>(x) * x;
  return s;
}

/// h_z + eps[r] * w_zi per row.
template <class M>
Tensor<float> shift_attribute(const M& model, Tensor<float> h_z, int attribute, std::span<const double> eps) {
  const std::vector<float> w = attribute_direction(model, attribute);
  if (h_z.rank() != 2 || h_z.dim(1) != static_cast<int>(w.size())) throw ShapeError("shift_attribute", "(B," + std::to_string(w.size()) + ")", h_z.shape());
  if (static_cast<int>(eps.size()) != h_z.dim(0)) throw EditError("shift_attribute: one epsilon per row required");
  for (int r = 0; r < h_z.dim(0); ++r)
    for (std::size_t k = 0; k < w.size(); ++k) h_z.at(r, static_cast<int>(k)) += static_cast<float>(eps[r] * w[k]);
  return h_z;
}

struct EditResult {
  Tensor<float> images;  // clamped decoder output
  Tensor<float> h_z;     // edited attribute latents
};

/// x' = D(h_y, h_z + eps * w_zi).
template <class M>
EditResult slide(const M& model, const Latents& h, int attribute, double eps) {
  require_editable(model, "slide");
  const std::vector<double> e(static_cast<std::size_t>(h.h_z.dim(0)), eps);
  Tensor<float> hz = shift_attribute(model, h.h_z, attribute, e);
  Tensor<float> img = decode_latents(model, h.h_y, hz);
  return {std::move(img), std::move(hz)};
}

/// Edits each row toward `target[r]` for one attribute. Rows already
/// predicted on the target side are left unchanged (eps = 0); the others
/// move by +-eps_star.
template <class M>
EditResult flip_to(const M& model, const Latents& h, int attribute, double eps_star, const std::vector<int>& target) {
  require_editable(model, "flip");
  if (!(eps_star > 0) || !std::isfinite(eps_star)) throw EditError("flip: attribute " + std::to_string(attribute) + " has no calibrated threshold");
  const Tensor<float> logits = attribute_logits(model, h.h_z);
  std::vector<double> eps(static_cast<std::size_t>(h.h_z.dim(0)));
  for (int r = 0; r < h.h_z.dim(0); ++r) {
    const bool now = logits.at(r, attribute) > 0.0f;
    eps[r] = now == static_cast<bool>(target[r]) ? 0.0 : (target[r] ? eps_star : -eps_star);
  }
  Tensor<float> hz = shift_attribute(model, h.h_z, attribute, eps);
  Tensor<float> img = decode_latents(model, h.h_y, hz);
  return {std::move(img), std::move(hz)};
}

/// Toggles the model's own prediction of one attribute.
template <class M>
EditResult flip(const M& model, const Latents& h, int attribute, double eps_star) {
  const Tensor<float> logits = attribute_logits(model, h.h_z);
  std::vector<int> target(static_cast<std::size_t>(h.h_z.dim(0)));
  for (int r = 0; r < h.h_z.dim(0); ++r) target[r] = logits.at(r, attribute) > 0.0f ? 0 : 1;
  return flip_to(model, h, attribute, eps_star, target);
}

/// Fraction of rows whose re-encoded prediction for `attribute` matches `target`.
template <class M>
double self_prediction_rate(const M& model, const Tensor<float>& images, int attribute, const std::vector<int>& target) {
  const Latents h = encode_images(model, images);
  const Tensor<float> logits = attribute_logits(model, h.h_z);
  int ok = 0;
  for (int r = 0; r < logits.dim(0); ++r) ok += (logits.at(r, attribute) > 0.0f) == static_cast<bool>(target[r]);
  return static_cast<double>(ok) / logits.dim(0);
}

struct Calibration {
  std::optional<double> epsilon;  // unset: no grid value reached the rate
  std::vector<std::pair<double, double>> sweep;  // (eps, flip rate)
};

/// Smallest eps on a geometric grid whose flips are confirmed by re-encoding
/// for at least `rate` of the images. The grid starts where the head logit
/// moves by 0.25 and grows by 1.25x per step.
template <class M>
Calibration calibrate_epsilon(const M& model, const Tensor<float>& images, int attribute, double rate = 0.9, int steps = 40) {
  require_editable(model, "calibrate");
  const Latents h = encode_images(model, images);
  const double norm2 = squared_norm(attribute_direction(model, attribute));
  if (!(norm2 > 0)) throw EditError("calibrate: W_z row " + std::to_string(attribute) + " is zero");
  const Tensor<float> logits = attribute_logits(model, h.h_z);
  std::vector<int> target(static_cast<std::size_t>(logits.dim(0)));
  for (int r = 0; r < logits.dim(0); ++r) target[r] = logits.at(r, attribute) > 0.0f ? 0 : 1;
  Calibration c;
  double eps = 0.25 / norm2;
  for (int k = 0; k < steps; ++k, eps *= 1.25) {
    const EditResult e = flip_to(model, h, attribute, eps, target);
    const double got = self_prediction_rate(model, e.images, attribute, target);
    c.sweep.emplace_back(eps, got);
    if (got >= rate) {
      c.epsilon = eps;
      break;
    }
  }
  return c;
}

/// D(h_y of A, h_z of B), row by row.
template <class M>
Tensor<float> mix(const M& model, const Tensor<float>& images_a, const Tensor<float>& images_b) {
  require_editable(model, "mix");
  if (images_a.shape() != images_b.shape()) throw ShapeError("mix", to_string(images_a.shape()), images_b.shape());
  const Latents a = encode_images(model, images_a);
  const Latents b = encode_images(model, images_b);
  return decode_latents(model, a.h_y, b.h_z);
}

// ---------------------------------------------------------------------------
// Guided augmentation

/// How a sample's attribute vector maps to a category.
///   one_hot: category = argmax z (Yale lighting clusters).
///   binary:  category = sum_k bit(z[attributes[k]]) << k over a chosen subset.
enum class CategoryDomain { one_hot, binary };
/// One-hot edits either only raise the target direction or also lower the source one.
enum class EditMode { target_only, target_and_source };

struct AugmentPlan {
  CategoryDomain domain = CategoryDomain::one_hot;
  std::vector<int> attributes;       // binary domain: attribute subset
  std::vector<double> distribution;  // target share per category, sums to 1
  std::vector<int> excluded;         // source categories never edited
  int n_gen = 10;                    // generated images per class
  EditMode mode = EditMode::target_only;
  std::uint64_t seed = 5;

  int n_categories() const {
    return domain == CategoryDomain::binary ? (1 << attributes.size()) : static_cast<int>(distribution.size());
  }

  void validate(int n_attributes) const {
    if (n_gen < 0) throw EditError("augment: n_gen must be >= 0");
    if (static_cast<int>(distribution.size()) != n_categories()) {
      throw EditError("augment: distribution has " + std::to_string(distribution.size()) + " entries for " + std::to_string(n_categories()) +
                      " categories");
    }
    double s = 0;
    for (double p : distribution) {
      if (!(p >= 0)) throw EditError("augment: negative category share");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-9) throw EditError("augment: distribution sums to " + format_double(s) + ", not 1");
    if (domain == CategoryDomain::one_hot && n_categories() != n_attributes) throw EditError("augment: one-hot domain needs one category per attribute");
    for (int a : attributes)
      if (a < 0 || a >= n_attributes) throw EditError("augment: attribute " + std::to_string(a) + " out of range");
    for (int e : excluded)
      if (e < 0 || e >= n_categories()) throw EditError("augment: excluded category " + std::to_string(e) + " out of range");
  }

  int category_of(const Tensor<float>& z, int row) const {
    if (domain == CategoryDomain::one_hot) {
      const float* p = z.data() + static_cast<std::size_t>(row) * z.dim(1);
      return static_cast<int>(std::max_element(p, p + z.dim(1)) - p);
    }
    int c = 0;
    for (std::size_t k = 0; k < attributes.size(); ++k) c |= (z.at(row, attributes[k]) > 0.5f ? 1 : 0) << k;
    return c;
  }

  /// Attribute vector of `row` moved into category `cat`.
  std::vector<float> relabel(const Tensor<float>& z, int row, int cat) const {
    std::vector<float> out(z.data() + static_cast<std::size_t>(row) * z.dim(1), z.data() + static_cast<std::size_t>(row + 1) * z.dim(1));
    if (domain == CategoryDomain::one_hot) {
      std::fill(out.begin(), out.end(), 0.0f);
      out[cat] = 1.0f;
    } else {
      for (std::size_t k = 0; k < attributes.size(); ++k) out[attributes[k]] = (cat >> k) & 1 ? 1.0f : 0.0f;
    }
    return out;
  }
};

/// Lighting distribution used for Yale-B augmentation and its excluded sources.
inline AugmentPlan yale_augment_plan(int n_gen) {
  AugmentPlan p;
  p.domain = CategoryDomain::one_hot;
  const std::array<double, 14> counts{1, 3, 3, 2, 5, 3, 10, 3, 5, 2, 2, 2, 2, 2};
  for (double c : counts) p.distribution.push_back(c / 45.0);
  p.excluded = {0, 4, 8, 9, 13};
  p.n_gen = n_gen;
  return p;
}

/// Integer quotas per category summing to `total` (largest remainder).
inline std::vector<int> category_quotas(const std::vector<double>& dist, int total) {
  std::vector<int> q(dist.size());
  std::vector<std::pair<double, int>> rem;
  int used = 0;
  for (std::size_t k = 0; k < dist.size(); ++k) {
    const double exact = dist[k] * total;
    q[k] = static_cast<int>(std::floor(exact));
    used += q[k];
    rem.emplace_back(exact - q[k], static_cast<int>(k));
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int i = 0; used < total; ++i, ++used) ++q[rem[static_cast<std::size_t>(i) % rem.size()].second];
  return q;
}

struct AugmentResult {
  Dataset generated;                 // tagged train; filenames gen_<class>_<n>.png
  std::vector<int> source_rows;      // dataset row each image was edited from
  std::vector<int> target_category;  // category each image was edited into
  std::vector<std::string> warnings;
};

/// Generates up to plan.n_gen edited images per class from `train_rows`.
/// Each source (non-excluded category) is visited in a shuffled cycle and
/// edited into a random category whose count is still below its quota, where
/// quotas spread (existing + n_gen) images over `plan.distribution`.
template <class M>
AugmentResult plan_augmentation(const M& model, const Dataset& d, const std::vector<int>& train_rows, const AugmentPlan& plan,
                                const std::vector<double>& eps_star) {
  require_editable(model, "augment");
  plan.validate(d.n_attributes);
  if (static_cast<int>(eps_star.size()) != d.n_attributes) throw EditError("augment: one epsilon per attribute required");
  std::mt19937_64 rng(plan.seed);
  const int K = plan.n_categories();
  AugmentResult out;
  out.generated.image_shape = d.image_shape;
  out.generated.n_classes = d.n_classes;
  out.generated.n_attributes = d.n_attributes;
  std::vector<Tensor<float>> images;
  std::vector<float> zs;

  std::vector<std::vector<int>> by_class(d.n_classes);
  for (int r : train_rows) by_class[d.y[r]].push_back(r);
  for (int c = 0; c < d.n_classes; ++c) {
    const auto& rows = by_class[c];
    if (rows.empty() || plan.n_gen == 0) continue;
    std::vector<int> count(K, 0);
    for (int r : rows) ++count[plan.category_of(d.z, r)];
    const std::vector<int> quota = category_quotas(plan.distribution, static_cast<int>(rows.size()) + plan.n_gen);
    std::vector<int> deficit(K);
    for (int k = 0; k < K; ++k) deficit[k] = std::max(0, quota[k] - count[k]);
    std::vector<int> sources;
    for (int r : rows)
      if (std::find(plan.excluded.begin(), plan.excluded.end(), plan.category_of(d.z, r)) == plan.excluded.end()) sources.push_back(r);
    if (sources.empty()) {
      out.warnings.push_back("class " + std::to_string(c) + ": no usable source images, nothing generated");
      continue;
    }
    std::shuffle(sources.begin(), sources.end(), rng);
    std::vector<int> src_rows, targets;
    int made = 0;
    for (std::size_t i = 0; made < plan.n_gen; ++i) {
      const int src = sources[i % sources.size()];
      const int cat = plan.category_of(d.z, src);
      std::vector<int> open;
      for (int k = 0; k < K; ++k)
        if (deficit[k] > 0 && k != cat) open.push_back(k);
      if (open.empty()) {
        if (i >= sources.size()) break;  // a full pass found nothing to fill
        continue;
      }
      const int k = open[std::uniform_int_distribution<std::size_t>(0, open.size() - 1)(rng)];
      --deficit[k];
      src_rows.push_back(src);
      targets.push_back(k);
      ++made;
    }
    if (made < plan.n_gen) {
      out.warnings.push_back("class " + std::to_string(c) + ": generated " + std::to_string(made) + " of " + std::to_string(plan.n_gen) +
                             " images (quotas unreachable from the available sources)");
    }
    if (src_rows.empty()) continue;

    // Edit in one batch: start from each source's latents and add one step
    // per attribute that must change.
    const Dataset src = d.subset(src_rows);
    const Latents h = encode_images(model, src.images);
    Tensor<float> hz = h.h_z;
    const Tensor<float> logits = attribute_logits(model, h.h_z);
    for (int a = 0; a < d.n_attributes; ++a) {
      std::vector<double> sign(src_rows.size(), 0.0);
      for (std::size_t j = 0; j < src_rows.size(); ++j) {
        const int from = plan.category_of(src.z, static_cast<int>(j));
        const std::vector<float> z_to = plan.relabel(src.z, static_cast<int>(j), targets[j]);
        const bool want = z_to[a] > 0.5f;
        const bool have = src.z.at(static_cast<int>(j), a) > 0.5f;
        if (plan.domain == CategoryDomain::one_hot) {
          if (a == targets[j]) sign[j] = 1;
          else if (a == from && plan.mode == EditMode::target_and_source) sign[j] = -1;
        } else if (want != have) {
          const bool predicted = logits.at(static_cast<int>(j), a) > 0.0f;
          if (predicted != want) sign[j] = want ? 1 : -1;
        }
      }
      if (std::all_of(sign.begin(), sign.end(), [](double v) { return v == 0.0; })) continue;
      if (!(eps_star[a] > 0)) throw EditError("augment: attribute " + std::to_string(a) + " has no calibrated threshold");
      for (double& v : sign) v *= eps_star[a];
      hz = shift_attribute(model, std::move(hz), a, sign);
    }
    images.push_back(decode_latents(model, h.h_y, hz));
    for (std::size_t j = 0; j < src_rows.size(); ++j) {
      const std::vector<float> z_to = plan.relabel(src.z, static_cast<int>(j), targets[j]);
      zs.insert(zs.end(), z_to.begin(), z_to.end());
      out.generated.y.push_back(c);
      out.generated.has_z.push_back(1);
      out.generated.split.push_back(Split::train);
      out.generated.filenames.push_back("gen_" + std::to_string(c) + "_" + std::to_string(j) + ".png");
      out.source_rows.push_back(src_rows[j]);
      out.target_category.push_back(targets[j]);
    }
  }
  const int n = out.generated.size();
  out.generated.images = images.empty() ? Tensor<float>([&] {
    Shape s = d.image_shape;
    s.insert(s.begin(), 0);
    return s;
  }())
                                        : concat_rows<float>(images);
  out.generated.z = Tensor<float>({n, d.n_attributes}, std::move(zs));
  return out;
}

}  // namespace dualdis
