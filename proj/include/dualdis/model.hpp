#pragma once

// The two-branch auto-encoder with its linear heads, adversarial
// classifiers and predictor networks, plus every baseline variant.
//
//   x -> E -> E_y -> h_y -> W_y -> y        C_y(h_z) -> y_adv
//        E -> E_z -> h_z -> W_z -> z        C_z(h_y) -> z_adv
//   D(h_y || h_z) -> x_hat                  U_y(h_z) -> h_y,  U_z(h_y) -> h_z

#include <array>
#include <cstdint>

#include "dualdis/keyvalue.hpp"
#include "dualdis/layers.hpp"

namespace dualdis {

enum class Variant { A, B, B_prime, C, D, D_prime, E, DualDis };

inline constexpr std::array<Variant, 8> kAllVariants = {Variant::A, Variant::B, Variant::B_prime, Variant::C,
                                                        Variant::D, Variant::D_prime, Variant::E, Variant::DualDis};

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::A: return "A";
    case Variant::B: return "B";
    case Variant::B_prime: return "B'";
    case Variant::C: return "C";
    case Variant::D: return "D";
    case Variant::D_prime: return "D'";
    case Variant::E: return "E";
    case Variant::DualDis: return "DualDis";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  for (Variant v : kAllVariants)
    if (s == to_string(v)) return v;
  if (s == "Bp" || s == "B_prime") return Variant::B_prime;
  if (s == "Dp" || s == "D_prime") return Variant::D_prime;
  if (s == "dualdis") return Variant::DualDis;
  throw ConfigError("unknown preset '" + std::string(s) + "' (expected A, B, B', C, D, D', E or DualDis)");
}

/// Which components exist and which loss terms are active for a variant.
struct VariantSwitches {
  bool decoder = true;       // D exists, L_rec active
  bool z_branch = true;      // E_z and W_z exist
  bool mtan = false;         // decoder's second input is the ground-truth z
  bool z_supervised = true;  // L_z reaches E_z; otherwise W_z is a gradient-blocked probe
  bool adv_y = false;        // L_adv,y
  bool adv_z = false;        // L_adv,z
  bool orth = false;         // L_orth
  bool uai = false;          // U_y/U_z with L_UAI,adv and L_UAI,disc
  bool has_c_y = true;       // C_y exists (native adversary or measurement probe)
  bool has_c_z = true;
};

inline VariantSwitches switches_for(Variant v) {
  VariantSwitches s;
  switch (v) {
    case Variant::A: s.decoder = false; break;
    case Variant::B: s.z_supervised = false; break;
    case Variant::B_prime: break;
    case Variant::C:
      s.z_branch = false;
      s.mtan = true;
      s.z_supervised = false;
      s.adv_z = true;
      s.has_c_y = false;
      break;
    case Variant::D: s.uai = true; s.z_supervised = false; break;
    case Variant::D_prime: s.uai = true; break;
    case Variant::E: s.adv_y = true; s.z_supervised = false; break;
    case Variant::DualDis: s.adv_y = s.adv_z = s.orth = true; break;
  }
  return s;
}

struct ModelConfig {
  std::string dataset = "desk";
  Variant variant = Variant::DualDis;
  int channels = 3;
  int image_size = 32;
  int n_classes = 5;
  int n_attributes = 6;
  std::vector<std::string> attribute_names;
  std::vector<LayerSpec> encoder, encoder_y, encoder_z, decoder;
  std::vector<LayerSpec> adversary_y, adversary_z;
  std::vector<LayerSpec> uai_y, uai_z;
  std::uint64_t init_seed = 1;

  VariantSwitches switches() const { return switches_for(variant); }
  Shape image_shape() const { return {channels, image_size, image_size}; }

  std::string to_text() const {
    std::ostringstream os;
    os << "dataset = " << dataset << "\n"
       << "variant = " << to_string(variant) << "\n"
       << "channels = " << channels << "\n"
       << "image_size = " << image_size << "\n"
       << "n_classes = " << n_classes << "\n"
       << "n_attributes = " << n_attributes << "\n"
       << "attribute_names = ";
    for (std::size_t i = 0; i < attribute_names.size(); ++i) os << (i ? ", " : "") << attribute_names[i];
    os << "\n"
       << "encoder = " << format_layer_list(encoder) << "\n"
       << "encoder_y = " << format_layer_list(encoder_y) << "\n"
       << "encoder_z = " << format_layer_list(encoder_z) << "\n"
       << "decoder = " << format_layer_list(decoder) << "\n"
       << "adversary_y = " << format_layer_list(adversary_y) << "\n"
       << "adversary_z = " << format_layer_list(adversary_z) << "\n"
       << "uai_y = " << format_layer_list(uai_y) << "\n"
       << "uai_z = " << format_layer_list(uai_z) << "\n"
       << "init_seed = " << init_seed << "\n";
    return os.str();
  }

  /// Reads the keys written by `to_text`; missing keys keep their defaults.
  static ModelConfig from_keys(const KeyValues& kv) { return from_keys(kv, ModelConfig()); }
  static ModelConfig from_keys(const KeyValues& kv, ModelConfig base) {
    ModelConfig c = std::move(base);
    auto layers = [&kv](const char* key, std::vector<LayerSpec>& out) {
      if (kv.has(key)) out = parse_layer_list(kv.get(key));
    };
    if (kv.has("dataset")) c.dataset = kv.get("dataset");
    if (kv.has("variant")) c.variant = parse_variant(kv.get("variant"));
    if (kv.has("channels")) c.channels = kv.get_int("channels");
    if (kv.has("image_size")) c.image_size = kv.get_int("image_size");
    if (kv.has("n_classes")) c.n_classes = kv.get_int("n_classes");
    if (kv.has("n_attributes")) c.n_attributes = kv.get_int("n_attributes");
    if (kv.has("attribute_names")) c.attribute_names = kv.get_list("attribute_names");
    layers("encoder", c.encoder);
    layers("encoder_y", c.encoder_y);
    layers("encoder_z", c.encoder_z);
    layers("decoder", c.decoder);
    layers("adversary_y", c.adversary_y);
    layers("adversary_z", c.adversary_z);
    layers("uai_y", c.uai_y);
    layers("uai_z", c.uai_z);
    if (kv.has("init_seed")) c.init_seed = kv.get_u64("init_seed");
    return c;
  }

  static ModelConfig from_text(std::string_view text) {
    const KeyValues kv = KeyValues::parse(text, "model config");
    ModelConfig c = from_keys(kv);
    kv.reject_unused("model config");
    return c;
  }
};

namespace detail {

inline std::vector<std::string> numbered_names(const std::string& prefix, int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

}  // namespace detail

/// Shallow-branch architecture: every branch layer but the last moves into E.
inline void make_branches_shallow(ModelConfig& c) {
  if (c.encoder_y.size() <= 1) return;
  c.encoder.insert(c.encoder.end(), c.encoder_y.begin(), c.encoder_y.end() - 1);
  c.encoder_y.erase(c.encoder_y.begin(), c.encoder_y.end() - 1);
  c.encoder_z.erase(c.encoder_z.begin(), c.encoder_z.end() - 1);
}

inline const std::vector<std::string>& desk_attribute_names() {
  static const std::vector<std::string> names = {"fill-hue", "stroke-width", "background-bright",
                                                 "h-flip",   "large-scale",  "upper-half"};
  return names;
}

/// Named architecture presets: desk (synthetic 32x32), yale, norb, celeba.
inline ModelConfig model_preset(const std::string& dataset, Variant variant) {
  ModelConfig c;
  c.dataset = dataset;
  c.variant = variant;
  const bool uai = switches_for(variant).uai;
  auto L = parse_layer_list;
  if (dataset == "desk") {
    c.channels = 3;
    c.image_size = 32;
    c.n_classes = 5;
    c.n_attributes = 6;
    c.attribute_names = desk_attribute_names();
    c.encoder = L("16k4s2, 32k4s2, 32");
    c.encoder_y = c.encoder_z = L("32k4s2, 32k4p0");
    c.decoder = L("64k2p1, dec48, dec32, dec24, dec16, 3none");
    c.adversary_y = L("l64, l64, l5");
    c.adversary_z = L("l64, l64, l6");
    c.uai_y = c.uai_z = L("l32");
    if (uai) make_branches_shallow(c);
  } else if (dataset == "yale") {
    c.channels = 3;
    c.image_size = 64;
    c.n_classes = 38;
    c.n_attributes = 14;
    c.attribute_names = detail::numbered_names("light-", 14);
    c.encoder = uai ? L("32k4s2, 40k4s2, 48k4s2, 76k4s2, 100k3p0") : L("32k4s2, 40k4s2, 48k4s2");
    c.encoder_y = c.encoder_z = uai ? L("80k2p0") : L("64k4s2, 72k3p0, 80k2p0");
    c.decoder = L("160k2p1, dec80, dec64, dec48, dec32, dec32, 32, 3none");
    c.adversary_y = L("l80, l80, l38");
    c.adversary_z = L("l80, l80, l14");
    c.uai_y = c.uai_z = L("l80");
  } else if (dataset == "norb") {
    c.channels = 1;
    c.image_size = 64;
    c.n_classes = 5;
    c.n_attributes = 8;
    c.attribute_names = {"light", "elev-35", "elev-50", "elev-65", "azim-0", "azim-90", "azim-180", "azim-270"};
    c.encoder = uai ? L("64k4s2, 64k4s2, 96k4s2, 164k4s2, 192k4s2") : L("64k4s2, 64k4s2, 96k4s2");
    c.encoder_y = c.encoder_z = uai ? L("128k2p0") : L("96k4s2, 128k3p0, 128k2p0");
    c.decoder = L("256k2p1, dec192, 128, dec128, 128, dec96, 96, dec64, 64, dec64, 64, 32, 1");
    c.adversary_y = L("l128, l128, l5");
    c.adversary_z = L("l128, l128, l8");
    c.uai_y = c.uai_z = L("l128");
  } else if (dataset == "celeba") {
    c.channels = 3;
    c.image_size = 256;
    c.n_classes = 2000;
    c.n_attributes = 40;
    c.attribute_names = detail::numbered_names("attr-", 40);
    c.encoder = uai ? L("32p0s2, 32p0s1, 64p0, maxpool2k3, 80k1, maxpool2k3, 96p0, maxpool2k3, 128p0, 160p0s2, 196p0")
                    : L("32p0s2, 32p0s1, 64p0, maxpool2k3, 80k1, maxpool2k3, 96p0, maxpool2k3");
    c.encoder_y = c.encoder_z = uai ? L("196p0") : L("96p0, 128p0s2, 196p0, 196p0");
    c.decoder = L("dec392p0s1, 392, upsample, 392, upsample, 256, upsample, 196, upsample, 128, 128, upsample, 96, 96, "
                  "upsample, 64, 64, 32, 3k1");
    c.adversary_y = uai ? L("l256, l2000") : L("l256, l256, l2000");
    c.adversary_z = uai ? L("l256, l40") : L("l256, l256, l40");
    c.uai_y = c.uai_z = L("l196");
  } else {
    throw ConfigError("unknown dataset preset '" + dataset + "' (expected desk, yale, norb or celeba)");
  }
  return c;
}

template <class T>
struct LatentPair {
  Var<T> h_y;
  Var<T> h_z;
};

template <class T>
struct NamedStack {
  const char* name;
  Stack<T>* stack;
};

template <class T>
class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)), sw_(cfg_.switches()) {
    if (cfg_.n_classes < 1 || cfg_.n_attributes < 1) throw ConfigError("model: class and attribute counts must be positive");
    if (!cfg_.attribute_names.empty() && static_cast<int>(cfg_.attribute_names.size()) != cfg_.n_attributes) {
      throw ConfigError("model: " + std::to_string(cfg_.attribute_names.size()) + " attribute names for " +
                        std::to_string(cfg_.n_attributes) + " attributes");
    }
    std::mt19937_64 rng(cfg_.init_seed);
    E_ = Stack<T>("E", cfg_.encoder, StackRole::encoder, cfg_.image_shape(), rng);
    Ey_ = Stack<T>("E_y", cfg_.encoder_y, StackRole::encoder, E_.output_shape(), rng);
    dim_hy_ = Ey_.output_size();
    if (sw_.z_branch) {
      Ez_ = Stack<T>("E_z", cfg_.encoder_z, StackRole::encoder, E_.output_shape(), rng);
      dim_hz_ = Ez_.output_size();
    }
    if (sw_.decoder) {
      const int second = sw_.mtan ? cfg_.n_attributes : dim_hz_;
      D_ = Stack<T>("D", cfg_.decoder, StackRole::decoder, {dim_hy_ + second, 1, 1}, rng);
      if (D_.output_shape() != cfg_.image_shape()) {
        throw ShapeError("D", to_string(cfg_.image_shape()) + " decoder output", D_.output_shape());
      }
    }
    Wy_ = Stack<T>("W_y", {LayerSpec::linear(cfg_.n_classes)}, StackRole::head, {dim_hy_}, rng);
    if (sw_.z_branch) Wz_ = Stack<T>("W_z", {LayerSpec::linear(cfg_.n_attributes)}, StackRole::head, {dim_hz_}, rng);
    if (sw_.has_c_y) {
      Cy_ = Stack<T>("C_y", cfg_.adversary_y, StackRole::classifier, {dim_hz_}, rng);
      check_width(Cy_, cfg_.n_classes);
    }
    if (sw_.has_c_z) {
      Cz_ = Stack<T>("C_z", cfg_.adversary_z, StackRole::classifier, {dim_hy_}, rng);
      check_width(Cz_, cfg_.n_attributes);
    }
    if (sw_.uai) {
      Uy_ = Stack<T>("U_y", cfg_.uai_y, StackRole::classifier, {dim_hz_}, rng);
      Uz_ = Stack<T>("U_z", cfg_.uai_z, StackRole::classifier, {dim_hy_}, rng);
      check_width(Uy_, dim_hy_);
      check_width(Uz_, dim_hz_);
    }
  }

  const ModelConfig& config() const { return cfg_; }
  const VariantSwitches& switches() const { return sw_; }
  int dim_hy() const { return dim_hy_; }
  int dim_hz() const { return dim_hz_; }

  LatentPair<T> encode(const Var<T>& x, Mode mode) const {
    const Var<T> h = E_.forward(x, mode);
    LatentPair<T> out;
    out.h_y = flatten(Ey_.forward(h, mode));
    if (sw_.z_branch) out.h_z = flatten(Ez_.forward(h, mode));
    return out;
  }

  /// `second` is h_z, or the ground-truth z for MTAN-conditioned decoders.
  Var<T> decode(const Var<T>& h_y, const Var<T>& second, Mode mode) const {
    if (!sw_.decoder) throw Error(std::string("decode: variant ") + to_string(cfg_.variant) + " has no decoder");
    const int want = sw_.mtan ? cfg_.n_attributes : dim_hz_;
    if (second.value().rank() != 2 || second.dim(1) != want) {
      throw ShapeError(sw_.mtan ? "D (z input)" : "D (h_z input)", "(B," + std::to_string(want) + ")", second.shape());
    }
    if (h_y.value().rank() != 2 || h_y.dim(1) != dim_hy_) {
      throw ShapeError("D (h_y input)", "(B," + std::to_string(dim_hy_) + ")", h_y.shape());
    }
    const Var<T> h = concat_cols(h_y, second);
    return D_.forward(reshape(h, Shape{h.dim(0), h.dim(1), 1, 1}), mode);
  }

  Var<T> y_logits(const Var<T>& h_y) const { return Wy_.forward(h_y, Mode::eval); }
  Var<T> z_logits(const Var<T>& h_z) const {
    require_z_branch("W_z");
    return Wz_.forward(h_z, Mode::eval);
  }

  /// C_y(h_z): predicts the class from the attribute latent.
  Var<T> adversary_y_logits(const Var<T>& h_z, bool frozen) const {
    if (!sw_.has_c_y) throw Error(std::string("variant ") + to_string(cfg_.variant) + " has no C_y");
    return Cy_.forward(h_z, Mode::eval, frozen);
  }
  /// C_z(h_y): predicts the attributes from the class latent.
  Var<T> adversary_z_logits(const Var<T>& h_y, bool frozen) const {
    if (!sw_.has_c_z) throw Error(std::string("variant ") + to_string(cfg_.variant) + " has no C_z");
    return Cz_.forward(h_y, Mode::eval, frozen);
  }

  /// (U_y(h_z), U_z(h_y)); only UAI variants have predictors.
  LatentPair<T> uai_predict(const LatentPair<T>& h, bool frozen) const {
    if (!sw_.uai) throw Error(std::string("uai_predict: variant ") + to_string(cfg_.variant) + " has no U_y/U_z");
    return {Uy_.forward(h.h_z, Mode::eval, frozen), Uz_.forward(h.h_y, Mode::eval, frozen)};
  }

  /// Every stack that exists for this variant, in a fixed order.
  std::vector<NamedStack<T>> stacks() {
    std::vector<NamedStack<T>> out;
    for (auto [name, s] : std::initializer_list<std::pair<const char*, Stack<T>*>>{
             {"E", &E_}, {"E_y", &Ey_}, {"E_z", &Ez_}, {"D", &D_}, {"W_y", &Wy_}, {"W_z", &Wz_},
             {"C_y", &Cy_}, {"C_z", &Cz_}, {"U_y", &Uy_}, {"U_z", &Uz_}}) {
      if (!s->empty()) out.push_back({name, s});
    }
    return out;
  }

  Stack<T>& stack(std::string_view name) {
    for (auto& ns : stacks())
      if (name == ns.name) return *ns.stack;
    throw Error("no stack named '" + std::string(name) + "' in variant " + to_string(cfg_.variant));
  }
  const Stack<T>& stack(std::string_view name) const { return const_cast<Model*>(this)->stack(name); }
  bool has_stack(std::string_view name) const {
    for (auto& ns : const_cast<Model*>(this)->stacks())
      if (name == ns.name) return true;
    return false;
  }

  /// theta_{E,E_y,E_z,D,W_y,W_z}
  std::vector<Parameter<T>*> main_parameters() { return collect({"E", "E_y", "E_z", "D", "W_y", "W_z"}); }
  /// theta_{C_y,C_z} (and U_y/U_z for UAI variants)
  std::vector<Parameter<T>*> disc_parameters() { return collect({"C_y", "C_z", "U_y", "U_z"}); }
  std::vector<Parameter<T>*> parameters() { return collect({"E", "E_y", "E_z", "D", "W_y", "W_z", "C_y", "C_z", "U_y", "U_z"}); }

  std::vector<std::pair<std::string, Tensor<T>*>> buffers() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (auto& ns : stacks())
      for (auto& b : ns.stack->buffers()) out.push_back(b);
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto* p : parameters()) n += p->value().size();
    return n;
  }

 private:
  static void check_width(const Stack<T>& s, int want) {
    if (s.output_size() != want) throw ShapeError(s.name(), "output width " + std::to_string(want), s.output_shape());
  }
  void require_z_branch(const char* what) const {
    if (!sw_.z_branch) throw Error(std::string(what) + ": variant " + to_string(cfg_.variant) + " has no h_z branch");
  }
  std::vector<Parameter<T>*> collect(std::initializer_list<const char*> names) {
    std::vector<Parameter<T>*> out;
    for (auto& ns : stacks())
      for (const char* n : names)
        if (std::string_view(n) == ns.name)
          for (auto* p : ns.stack->parameters()) out.push_back(p);
    return out;
  }

  ModelConfig cfg_;
  VariantSwitches sw_;
  int dim_hy_ = 0;
  int dim_hz_ = 0;
  Stack<T> E_, Ey_, Ez_, D_, Wy_, Wz_, Cy_, Cz_, Uy_, Uz_;
};

}  // namespace dualdis
