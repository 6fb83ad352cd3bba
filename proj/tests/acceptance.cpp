// Acceptance suite: one PASS/FAIL line per criterion.
//
// Trained models are cached under --work-dir keyed by a hash of their model
// config, train config and data description, so reruns only retrain what
// changed. --fresh ignores the cache.

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>

#include "dualdis/dualdis.hpp"
#include "support/gradient_suite.hpp"
#include "support/norb_reference.hpp"
#include "support/published_rows.hpp"
#include "support/routing.hpp"

namespace {

using namespace dualdis;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Options {
  fs::path work_dir = "acceptance-work";
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  int per_class = 600;
  bool fresh = false;
  bool verbose = false;
};

std::string fmt(double v, int digits = 1) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string fmt_sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2) << v;
  return os.str();
}

void info(const std::string& s) { std::cout << "  " << s << std::endl; }

/// Desk data and a cache of trained models shared by all criteria.
class Lab {
 public:
  explicit Lab(Options o) : opt_(std::move(o)) {
    SyntheticSpec s;
    s.samples_per_class = opt_.per_class;
    spec_ = s;
    base_ = synthetic_dataset(s);
    fs::create_directories(opt_.work_dir / "models");
  }

  const Options& options() const { return opt_; }
  const SyntheticSpec& spec() const { return spec_; }

  /// Full desk dataset split 60/20/20 with `seed`.
  Dataset data(std::uint64_t seed) const {
    Dataset d = base_;
    split_dataset(d, 0.2, 0.2, seed);
    return d;
  }

  std::string data_tag(std::uint64_t seed) const {
    return "synthetic per_class=" + std::to_string(spec_.samples_per_class) + " spec_seed=" + std::to_string(spec_.seed) +
           " split=0.2/0.2 seed=" + std::to_string(seed);
  }

  static ModelConfig model_config(Variant v, std::uint64_t seed) {
    ModelConfig mc = model_preset("desk", v);
    mc.init_seed = seed;
    return mc;
  }

  static TrainConfig train_config(Variant v, std::uint64_t seed) {
    TrainConfig tc = train_preset("desk", v);
    tc.seed = seed;
    return tc;
  }

  /// Trains (or loads the cached) model for this configuration.
  Model<float> train(const ModelConfig& mc, const TrainConfig& tc, const Dataset& d, const std::string& tag) {
    const std::string key = mc.to_text() + "\n--\n" + tc.to_text() + "\n--\n" + tag;
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a(key)));
    const fs::path path = opt_.work_dir / "models" / (std::string(to_string(tc.variant)) + "_" + hex + ".ddck");
    if (auto it = memo_.find(path.string()); it != memo_.end()) return it->second;
    if (!opt_.fresh && fs::exists(path)) {
      Model<float> m = restore_model(load_checkpoint(path.string(), true));
      memo_.emplace(path.string(), m);
      return m;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Trainer t(mc, tc);
    t.run(d);
    save_checkpoint(path.string(), t.checkpoint());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (opt_.verbose) info("trained " + std::string(to_string(tc.variant)) + " seed " + std::to_string(tc.seed) + " in " + fmt(secs, 0) + " s");
    memo_.emplace(path.string(), t.model());
    return t.model();
  }

  Model<float> standard(Variant v, std::uint64_t seed) {
    return train(model_config(v, seed), train_config(v, seed), data(seed), data_tag(seed));
  }

  MetricsReport standard_metrics(Variant v, std::uint64_t seed) {
    const std::string k = std::string(to_string(v)) + "/" + std::to_string(seed);
    if (auto it = metrics_.find(k); it != metrics_.end()) return it->second;
    const Dataset d = data(seed);
    const MetricsReport r = evaluate_model(standard(v, seed), d, d.indices(Split::test));
    metrics_.emplace(k, r);
    return r;
  }

  const GlyphOracle& oracle() {
    if (!oracle_) oracle_.emplace(spec_.n_classes, spec_.image_size, spec_.jitter);
    return *oracle_;
  }

 private:
  Options opt_;
  SyntheticSpec spec_;
  Dataset base_;
  std::map<std::string, Model<float>> memo_;
  std::map<std::string, MetricsReport> metrics_;
  std::optional<GlyphOracle> oracle_;
};

std::string scores(const MetricsReport& r) {
  return format_score(r.acc_y) + "/" + format_score(r.acc_z) + "/" + format_score(r.dis_y) + "/" + format_score(r.dis_z);
}

// ---------------------------------------------------------------------------

Outcome aggregated_arithmetic(Lab&) {
  int bad = 0;
  double worst = 0;
  for (const auto& r : testing::kPublishedRows) {
    const double d = std::abs(aggregated_metric(r.scores[0], r.scores[1], r.scores[2], r.scores[3]) - r.aggregate);
    worst = std::max(worst, d);
    if (d > 0.1 + 1e-9) {
      ++bad;
      info(std::string(r.dataset) + " " + r.model + " off by " + fmt(d, 3));
    }
  }
  return {bad == 0, std::to_string(testing::kPublishedRows.size()) + " rows, max |diff| " + fmt(worst, 3)};
}

Outcome gradient_suite(Lab&) {
  double worst = 0;
  std::string worst_case;
  std::size_t instances = 0;
  int bad = 0;
  auto cases = testing::layer_cases();
  for (auto& c : testing::loss_cases()) cases.push_back(std::move(c));
  for (const auto& c : cases)
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const GradCheckResult r = c.run(seed);
      ++instances;
      if (r.max_rel_error > worst) {
        worst = r.max_rel_error;
        worst_case = c.name + " seed " + std::to_string(seed) + " " + r.worst;
      }
      if (!(r.max_rel_error < 1e-4)) ++bad;
    }
  return {bad == 0, std::to_string(cases.size()) + " kinds x 20 instances = " + std::to_string(instances) + ", max rel err " + fmt_sci(worst) +
                        (worst_case.empty() ? "" : " (" + worst_case + ")")};
}

Outcome gradient_routing(Lab&) {
  std::size_t n = 0;
  for (Variant v : kAllVariants)
    for (const auto& x : testing::check_routing(v)) {
      ++n;
      info(x.variant + " " + x.term + " -> " + x.stack + ": " + x.what);
    }
  return {n == 0, std::to_string(kAllVariants.size()) + " presets, " + std::to_string(n) + " violations"};
}

Outcome ablation_ordering(Lab& lab) {
  int ok = 0;
  const auto& seeds = lab.options().seeds;
  for (std::uint64_t s : seeds) {
    const MetricsReport a = lab.standard_metrics(Variant::A, s);
    const MetricsReport bp = lab.standard_metrics(Variant::B_prime, s);
    const MetricsReport dd = lab.standard_metrics(Variant::DualDis, s);
    const bool dis = *dd.dis_y >= std::max(*a.dis_y, *bp.dis_y) + 5 && *dd.dis_z >= std::max(*a.dis_z, *bp.dis_z) + 5;
    const bool acc = std::abs(*dd.acc_y - *a.acc_y) <= 3;
    ok += dis && acc;
    info("seed " + std::to_string(s) + "  A " + scores(a) + "  B' " + scores(bp) + "  DualDis " + scores(dd) + (dis && acc ? "  ok" : "  miss"));
  }
  const int need = std::max(1, static_cast<int>(seeds.size()) - 1);
  return {ok >= need && !seeds.empty(), "ordering holds on " + std::to_string(ok) + "/" + std::to_string(seeds.size()) + " seeds (need " + std::to_string(need) + ")"};
}

Outcome adversary_chance(Lab& lab) {
  const auto& seeds = lab.options().seeds;
  double first = 0;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    const double acc = 100 - *lab.standard_metrics(Variant::DualDis, seeds[i]).dis_y;
    if (i == 0) first = acc;
    info("seed " + std::to_string(seeds[i]) + "  C_y(h_z) accuracy " + fmt(acc));
  }
  return {first <= 30.0 + 1e-9, "C_y(h_z) accuracy " + fmt(first) + "% on seed " + std::to_string(seeds.front()) + " (chance 20%, limit 30%)"};
}

Outcome orthogonality(Lab& lab) {
  const std::uint64_t s = lab.options().seeds.front();
  const Dataset d = lab.data(s);
  auto cosine_with = [&](double lambda_o) {
    TrainConfig tc = Lab::train_config(Variant::DualDis, s);
    tc.weights.orth = lambda_o;
    return wz_mean_abs_cosine(lab.train(Lab::model_config(Variant::DualDis, s), tc, d, lab.data_tag(s)));
  };
  const double off = cosine_with(0.0);
  double lambda = Lab::train_config(Variant::DualDis, s).weights.orth;
  double on = cosine_with(lambda);
  info("lambda_o " + fmt_sci(lambda) + ": mean |cos| " + fmt(on, 4) + ";  lambda_o 0: " + fmt(off, 4));
  if (!(on < 0.1 && off > on)) {
    lambda = 1e-3;
    on = cosine_with(lambda);
    info("lambda_o " + fmt_sci(lambda) + ": mean |cos| " + fmt(on, 4));
  }
  return {on < 0.1 && off > on, "lambda_o " + fmt_sci(lambda) + " gives " + fmt(on, 4) + " vs " + fmt(off, 4) + " without"};
}

Outcome editing_identity(Lab& lab) {
  const std::uint64_t s = lab.options().seeds.front();
  const Model<float> m = lab.standard(Variant::DualDis, s);
  const Dataset d = lab.data(s);
  std::vector<int> rows = d.indices(Split::test);
  rows.resize(std::min<std::size_t>(rows.size(), 64));
  const Latents h = encode_images(m, d.images.gather_rows(rows));
  const Tensor<float> base = attribute_logits(m, h.h_z);
  double worst = 0;
  int non_monotone = 0;
  for (int a = 0; a < d.n_attributes; ++a) {
    const double n2 = squared_norm(attribute_direction(m, a));
    for (double k : {-3.0, -0.5, 0.25, 1.0, 4.0}) {
      const double eps = k / n2;
      const Tensor<float> moved = attribute_logits(m, slide(m, h, a, eps).h_z);
      for (int r = 0; r < moved.dim(0); ++r) {
        const double shift = static_cast<double>(moved.at(r, a)) - base.at(r, a);
        worst = std::max(worst, std::abs(shift - eps * n2) / std::abs(eps * n2));
      }
    }
    std::vector<float> prev(static_cast<std::size_t>(base.dim(0)), -std::numeric_limits<float>::infinity());
    for (int k = 0; k <= 20; ++k) {
      const Tensor<float> l = attribute_logits(m, slide(m, h, a, (-5.0 + 0.5 * k) / n2).h_z);
      for (int r = 0; r < l.dim(0); ++r) {
        non_monotone += !(l.at(r, a) > prev[r]);
        prev[r] = l.at(r, a);
      }
    }
  }
  return {worst <= 1e-4 && non_monotone == 0,
          "max relative logit-shift error " + fmt_sci(worst) + ", " + std::to_string(non_monotone) + " non-monotone steps over 6 attributes x 21 points"};
}

Outcome flip_fidelity(Lab& lab) {
  const auto& seeds = lab.options().seeds;
  bool pass = true;
  std::string detail;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    const std::uint64_t s = seeds[i];
    if (i > 0 && !lab.options().verbose) break;
    const Model<float> m = lab.standard(Variant::DualDis, s);
    const Dataset d = lab.data(s);
    const std::vector<int> test = d.indices(Split::test);
    const Tensor<float> xv = d.images.gather_rows(d.indices(Split::val)), xt = d.images.gather_rows(test);
    const Latents h = encode_images(m, xt);
    const Tensor<float> logits = attribute_logits(m, h.h_z);
    for (int a : {0, 3}) {
      const std::string name = desk_attribute_names()[a];
      const Calibration c = calibrate_epsilon(m, xv, a);
      if (!c.epsilon) {
        info("seed " + std::to_string(s) + " " + name + ": calibration reached " + fmt(100 * c.sweep.back().second) + "% only");
        if (i == 0) pass = false, detail += name + " uncalibrated; ";
        continue;
      }
      const std::vector<GlyphParams> o = lab.oracle().classify(flip(m, h, a, *c.epsilon).images);
      int agree = 0;
      for (int r = 0; r < logits.dim(0); ++r) agree += o[r].attr[a] == (logits.at(r, a) > 0 ? 0 : 1);
      const double rate = 100.0 * agree / logits.dim(0);
      info("seed " + std::to_string(s) + " " + name + ": eps* " + fmt(*c.epsilon, 4) + ", oracle agreement " + fmt(rate) + "%");
      if (i == 0) {
        pass = pass && rate >= 85;
        detail += name + " " + fmt(rate) + "% ";
      }
    }
  }
  return {pass, detail + "(need >= 85%)"};
}

struct MixScores {
  double cls = 0, attr = 0, oracle_attr = 0;
};

MixScores mix_scores(Lab& lab, Variant v, std::uint64_t s) {
  const Model<float> m = lab.standard(v, s);
  const Dataset d = lab.data(s);
  const std::vector<int> test = d.indices(Split::test);
  const int n = static_cast<int>(test.size());
  std::vector<int> partner(test.size());
  for (int i = 0; i < n; ++i) partner[i] = test[(i + 7) % n];
  const Tensor<float> mixed = mix(m, d.images.gather_rows(test), d.images.gather_rows(partner));
  const ModelOutputs out = model_outputs(m, mixed);
  const std::vector<GlyphParams> o = lab.oracle().classify(mixed);
  const std::vector<int> pred = argmax_rows(out.y_logits);
  MixScores r;
  for (int i = 0; i < n; ++i) {
    r.cls += pred[i] == d.y[test[i]];
    for (int a = 0; a < d.n_attributes; ++a) {
      const bool want = d.z.at(partner[i], a) > 0.5f;
      r.attr += (out.z_logits.at(i, a) > 0) == want;
      r.oracle_attr += o[i].attr[a] == want;
    }
  }
  r.cls *= 100.0 / n;
  r.attr *= 100.0 / (n * d.n_attributes);
  r.oracle_attr *= 100.0 / (n * d.n_attributes);
  return r;
}

Outcome mixing_cycle(Lab& lab) {
  const std::uint64_t s = lab.options().seeds.front();
  const MixScores dd = mix_scores(lab, Variant::DualDis, s);
  const MixScores e = mix_scores(lab, Variant::E, s);
  info("DualDis: class(A) " + fmt(dd.cls) + "%, attributes(B) " + fmt(dd.attr) + "% re-encoded, " + fmt(dd.oracle_attr) + "% by oracle");
  info("E:       class(A) " + fmt(e.cls) + "%, attributes(B) " + fmt(e.attr) + "% re-encoded, " + fmt(e.oracle_attr) + "% by oracle");
  const bool pass = dd.cls >= 85 && dd.attr >= 80 && e.oracle_attr < dd.oracle_attr;
  return {pass, "class " + fmt(dd.cls) + "% (>= 85), attributes " + fmt(dd.attr) + "% (>= 80), oracle transfer E " + fmt(e.oracle_attr) + "% < DualDis " +
                    fmt(dd.oracle_attr) + "%"};
}

Outcome augmentation_trend(Lab& lab) {
  // Attributes restricted per class: fill-hue and background brightness.
  const std::vector<int> attrs{0, 2};
  const std::uint64_t s = lab.options().seeds.front();
  AugmentPlan plan;
  plan.domain = CategoryDomain::binary;
  plan.attributes = attrs;
  plan.distribution = {0.25, 0.25, 0.25, 0.25};
  plan.seed = s;

  // Train and val keep two of the four (hue, background) categories per class,
  // c mod 4 and (c + 1) mod 4, so neither attribute is a function of the class;
  // test keeps all four.
  Dataset d = lab.data(s);
  std::vector<int> keep;
  for (int r = 0; r < d.size(); ++r) {
    const int k = plan.category_of(d.z, r), c = d.y[r];
    if (d.split[r] == Split::test || k == c % 4 || k == (c + 1) % 4) keep.push_back(r);
  }
  d = d.subset(keep);
  const std::string tag = lab.data_tag(s) + " restrict=two-hue-background-categories-per-class";
  const Model<float> m = lab.train(Lab::model_config(Variant::DualDis, s), Lab::train_config(Variant::DualDis, s), d, tag);

  const std::vector<int> train = d.indices(Split::train), test = d.indices(Split::test);
  const Tensor<float> xv = d.images.gather_rows(d.indices(Split::val));
  std::vector<double> eps(static_cast<std::size_t>(d.n_attributes), 0.0);
  for (int a : attrs) {
    const Calibration c = calibrate_epsilon(m, xv, a);
    if (!c.epsilon) {
      double best = 0;
      for (const auto& [e, rate] : c.sweep) best = std::max(best, rate);
      return {false, desk_attribute_names()[a] + " calibration peaked at " + fmt(100 * best) + "% (< 90%) on the restricted val split"};
    }
    eps[a] = *c.epsilon;
  }

  const ModelConfig mc = Lab::model_config(Variant::DualDis, s);
  std::vector<double> acc;
  for (int n_gen : {0, 10, 20, 60}) {
    Dataset aug = d;
    std::vector<int> rows = train;
    if (n_gen > 0) {
      plan.n_gen = n_gen;
      const AugmentResult g = plan_augmentation(m, d, train, plan, eps);
      for (const auto& w : g.warnings) info("warning: " + w);
      for (int i = 0; i < g.generated.size(); ++i) rows.push_back(aug.size() + i);
      aug.append(g.generated);
    }
    double sum = 0;
    for (std::uint64_t cs : {11, 12, 13}) sum += retrain_classifier(mc, aug, rows, test, 30, 32, cs);
    acc.push_back(sum / 3);
  }
  info(std::to_string(train.size()) + " restricted train images; classifier accuracy averaged over 3 seeds");
  bool monotone = true;
  for (std::size_t i = 1; i < acc.size(); ++i) monotone = monotone && acc[i] >= acc[i - 1];
  const double gain = acc.back() - acc.front();
  return {monotone && gain >= 3,
          "accuracy at N_gen 0/10/20/60: " + fmt(acc[0]) + "/" + fmt(acc[1]) + "/" + fmt(acc[2]) + "/" + fmt(acc[3]) + " (gain " + fmt(gain) + ", need >= 3 and monotone)"};
}

Outcome ssl_degradation(Lab& lab) {
  const auto& seeds = lab.options().seeds;
  int ok = 0;
  for (std::uint64_t s : seeds) {
    std::vector<double> agg;
    for (double frac : {0.1, 0.25}) {
      Dataset d = lab.data(s);
      keep_label_fraction(d, d.indices(Split::train), frac, s);
      TrainConfig tc = Lab::train_config(Variant::DualDis, s);
      tc.labeled_per_batch = tc.batch_size / 4;
      const Model<float> m = lab.train(Lab::model_config(Variant::DualDis, s), tc, d, lab.data_tag(s) + " label_fraction=" + fmt(frac, 2));
      agg.push_back(*evaluate_model(m, d, d.indices(Split::test)).aggregated());
    }
    agg.push_back(*lab.standard_metrics(Variant::DualDis, s).aggregated());
    const bool good = agg[0] <= agg[1] && agg[1] <= agg[2] && agg[2] - agg[1] <= 5;
    ok += good;
    info("seed " + std::to_string(s) + "  aggregated at 10%/25%/100% labels: " + fmt(agg[0]) + "/" + fmt(agg[1]) + "/" + fmt(agg[2]) + (good ? "  ok" : "  miss"));
  }
  const int need = std::max(1, static_cast<int>(seeds.size()) - 1);
  return {ok >= need && !seeds.empty(), "monotone with 25% within 5 of 100% on " + std::to_string(ok) + "/" + std::to_string(seeds.size()) + " seeds (need " +
                                            std::to_string(need) + ")"};
}

Outcome norb_labels(Lab&) {
  int cells = 0, mismatches = 0;
  for (int light = 0; light < 6; ++light)
    for (int ie = 0; ie <= 16; ++ie)
      for (int az = 0; az <= 340; az += 20) {
        const double e = 30 + 2.5 * ie;
        const auto got = norb_soft_labels(light, e, az);
        const auto want = testing::norb_reference(light, e, az);
        ++cells;
        for (std::size_t k = 0; k < got.size(); ++k)
          if (got[k] != want[k]) {
            ++mismatches;
            info("light " + std::to_string(light) + " elev " + fmt(e) + " azim " + std::to_string(az) + " component " + std::to_string(k));
          }
      }
  return {mismatches == 0, std::to_string(cells) + " (lighting, elevation, azimuth) cells, " + std::to_string(mismatches) + " mismatching components"};
}

Outcome checkpoint_round_trip(Lab& lab) {
  SyntheticSpec spec = lab.spec();
  spec.samples_per_class = 40;
  Dataset d = synthetic_dataset(spec);
  split_dataset(d, 0.2, 0.0, 9);
  const ModelConfig mc = Lab::model_config(Variant::DualDis, 9);
  TrainConfig tc = Lab::train_config(Variant::DualDis, 9);
  tc.epochs = 3;

  std::ostringstream unbroken_log;
  Trainer unbroken(mc, tc);
  RunOptions ro;
  ro.log = &unbroken_log;
  unbroken.run(d, ro);

  tc.epochs = 1;
  std::ostringstream resumed_log;
  Trainer first(mc, tc);
  ro.log = &resumed_log;
  first.run(d, ro);
  const fs::path p1 = lab.options().work_dir / "roundtrip_a.ddck", p2 = lab.options().work_dir / "roundtrip_b.ddck";
  save_checkpoint(p1.string(), first.checkpoint());
  save_checkpoint(p2.string(), load_checkpoint(p1.string()));
  auto slurp = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
  };
  const bool bitwise = slurp(p1) == slurp(p2);
  Trainer second(load_checkpoint(p2.string()));
  second.set_epochs(3);
  second.run(d, ro);
  const bool same_log = resumed_log.str() == unbroken_log.str();
  const bool same_state = encode_checkpoint(second.checkpoint()) == encode_checkpoint(unbroken.checkpoint());
  const std::string log = unbroken_log.str();
  return {bitwise && same_log && same_state, std::string("save/load/save ") + (bitwise ? "bitwise identical" : "DIFFERS") + ", resumed log " +
                                                 (same_log ? "identical" : "DIFFERS") + " (" + std::to_string(std::count(log.begin(), log.end(), '\n')) +
                                                 " lines), final state " + (same_state ? "identical" : "DIFFERS")};
}

struct Criterion {
  std::string id;
  std::string title;
  Outcome (*run)(Lab&);
};

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all = {
      {"aggregated", "aggregated-metric arithmetic", aggregated_arithmetic},
      {"gradients", "finite-difference gradient suite", gradient_suite},
      {"routing", "gradient routing per preset", gradient_routing},
      {"ablation", "desk ablation ordering", ablation_ordering},
      {"adversary", "attribute-branch adversary near chance", adversary_chance},
      {"orth", "W_z orthogonality", orthogonality},
      {"editing", "editing identity and monotone sweep", editing_identity},
      {"flip", "flip fidelity by oracle", flip_fidelity},
      {"mixing", "mixing cycle", mixing_cycle},
      {"augment", "guided augmentation trend", augmentation_trend},
      {"ssl", "semi-supervised degradation", ssl_degradation},
      {"norb", "NORB soft labels", norb_labels},
      {"checkpoint", "checkpoint round trip and resume", checkpoint_round_trip},
  };
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  std::vector<std::string> only;
  CLI::App app{"DualDis acceptance suite"};
  app.add_option("--work-dir", opt.work_dir, "Directory for cached models")->capture_default_str();
  app.add_option("--only", only, "Run only these criteria (ids below)");
  app.add_option("--seeds", opt.seeds, "Seeds for multi-seed criteria; the first one drives single-run criteria")->capture_default_str();
  app.add_option("--per-class", opt.per_class, "Synthetic images per class")->capture_default_str()->check(CLI::Range(10, 5000));
  app.add_flag("--fresh", opt.fresh, "Retrain instead of loading cached models");
  app.add_flag("-v,--verbose", opt.verbose, "Report training times and extra seeds");
  bool list = false;
  app.add_flag("--list", list, "List criterion ids and exit");
  CLI11_PARSE(app, argc, argv);

  if (list) {
    for (const auto& c : criteria()) std::cout << c.id << "  " << c.title << "\n";
    return 0;
  }
  for (const auto& id : only)
    if (std::none_of(criteria().begin(), criteria().end(), [&](const Criterion& c) { return c.id == id; })) {
      std::cerr << "error: unknown criterion '" << id << "' (see --list)\n";
      return 2;
    }
  if (opt.seeds.empty()) {
    std::cerr << "error: --seeds needs at least one seed\n";
    return 2;
  }

  Lab lab(opt);
  int failed = 0, ran = 0;
  for (const auto& c : criteria()) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(lab);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ++ran;
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.id << ": " << c.title << " -- " << o.detail << " [" << fmt(secs, 0) << " s]" << std::endl;
  }
  std::cout << (ran - failed) << "/" << ran << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
