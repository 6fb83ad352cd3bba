// dualdis: data generation, training, evaluation, editing, augmentation and
// the HTTP service behind one command.

#include <CLI11.hpp>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "dualdis/dualdis.hpp"

namespace fs = std::filesystem;
using namespace dualdis;

namespace {

/// Strict run description: every key must be known.
struct RunSpec {
  std::string preset = "DualDis";
  std::string dataset = "desk";
  std::string data;
  std::string out_dir = "run";
  std::string model_config;
  std::string train_config;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  double label_fraction = 1.0;

  static RunSpec read(const std::string& path) {
    const KeyValues kv = KeyValues::read_file(path);
    RunSpec s;
    const fs::path base = fs::path(path).parent_path();
    auto rel = [&base](const std::string& p) { return p.empty() || fs::path(p).is_absolute() ? p : (base / p).string(); };
    if (kv.has("preset")) s.preset = kv.get("preset");
    if (kv.has("dataset")) s.dataset = kv.get("dataset");
    if (kv.has("data")) s.data = rel(kv.get("data"));
    if (kv.has("out_dir")) s.out_dir = rel(kv.get("out_dir"));
    if (kv.has("model_config")) s.model_config = rel(kv.get("model_config"));
    if (kv.has("train_config")) s.train_config = rel(kv.get("train_config"));
    if (kv.has("seed")) s.seed = kv.get_u64("seed");
    if (kv.has("epochs")) s.epochs = kv.get_int("epochs");
    if (kv.has("label_fraction")) s.label_fraction = kv.get_double("label_fraction");
    kv.reject_unused(path);
    return s;
  }
};

std::string read_text(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw Error("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw Error("write failed for '" + path.string() + "'");
}

Dataset load_data(const std::string& manifest, const ModelConfig& mc) {
  if (manifest.empty()) throw Error("no dataset manifest given (--data)");
  Dataset d = read_manifest(manifest, mc.channels, mc.n_classes);
  if (d.n_attributes != mc.n_attributes) {
    throw Error(manifest + ": " + std::to_string(d.n_attributes) + " attribute columns, the model expects " + std::to_string(mc.n_attributes));
  }
  if (d.image_shape != mc.image_shape()) {
    throw Error(manifest + ": images are " + to_string(d.image_shape) + ", the model expects " + to_string(mc.image_shape()));
  }
  return d;
}

Tensor<float> load_image_batch(const std::string& path, const ModelConfig& mc) {
  Tensor<float> img = read_png(path, mc.channels);
  if (img.shape() != mc.image_shape()) throw Error(path + ": image is " + to_string(img.shape()) + ", the model expects " + to_string(mc.image_shape()));
  return img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)});
}

void save_image(const std::string& path, const Tensor<float>& batch, int row = 0) {
  const Tensor<float> one = batch.slice_rows(row, row + 1);
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  write_png(path, one.reshaped({one.dim(1), one.dim(2), one.dim(3)}));
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  for (const auto& t : KeyValues::parse("v = " + s).get_list("v")) out.push_back(std::stoi(t));
  return out;
}

std::vector<double> parse_double_list(const std::string& s) { return KeyValues::parse("v = " + s).get_doubles("v"); }

/// Per-attribute eps* on `rows`; attributes that never reach the rate keep 0.
std::vector<double> calibrate_all(const Model<float>& model, const Dataset& d, const std::vector<int>& rows, double rate) {
  std::vector<double> eps(static_cast<std::size_t>(d.n_attributes), 0.0);
  if (!model.switches().decoder || !model.switches().z_branch || rows.empty()) return eps;
  const Tensor<float> images = d.images.gather_rows(rows);
  for (int a = 0; a < d.n_attributes; ++a) {
    const Calibration c = calibrate_epsilon(model, images, a, rate);
    if (c.epsilon) eps[a] = *c.epsilon;
    else std::cerr << "warning: attribute " << a << " did not reach a " << rate * 100 << "% flip rate; left uncalibrated\n";
  }
  return eps;
}

struct TrainOutcome {
  MetricsReport test;
  fs::path checkpoint;
};

/// Trains one model and writes checkpoint, step log and test metrics into `out`.
TrainOutcome train_one(const ModelConfig& mc, const TrainConfig& tc, Dataset d, double label_fraction, const fs::path& out,
                       const std::string& resume, std::optional<int> epochs, bool quiet) {
  fs::create_directories(out);
  const std::vector<int> train_rows = d.indices(Split::train);
  const std::vector<int> val_rows = d.indices(Split::val);
  const std::vector<int> test_rows = d.indices(Split::test);
  if (label_fraction < 1.0) keep_label_fraction(d, train_rows, label_fraction, tc.seed);
  std::unique_ptr<Trainer> trainer;
  const fs::path ckpt = out / "model.ddck";
  std::ofstream log;
  if (!resume.empty()) {
    trainer = std::make_unique<Trainer>(load_checkpoint(resume));
    if (epochs) trainer->set_epochs(*epochs);
    log.open(out / "log.csv", std::ios::app);
  } else {
    trainer = std::make_unique<Trainer>(mc, tc);
    log.open(out / "log.csv");
    log << "step,term,value\n";
  }
  if (!log) throw Error("cannot write " + (out / "log.csv").string());
  RunOptions opt;
  opt.log = &log;
  opt.checkpoint_path = ckpt.string();
  opt.on_epoch_end = [&](Trainer& t) {
    if (val_rows.empty()) return;
    const MetricsReport r = evaluate_model(t.model(), d, val_rows);
    auto put = [&](const char* name, const std::optional<double>& v) {
      if (v) log << t.step() << ",val_" << name << ',' << format_double(*v) << '\n';
    };
    put("acc_y", r.acc_y);
    put("acc_z", r.acc_z);
    put("dis_y", r.dis_y);
    put("dis_z", r.dis_z);
    put("aggregated", r.aggregated());
    if (!quiet) {
      std::cerr << "epoch " << t.epoch() << "/" << t.config().epochs << "  val: acc_y " << format_score(r.acc_y) << "  acc_z "
                << format_score(r.acc_z) << "  dis_y " << format_score(r.dis_y) << "  dis_z " << format_score(r.dis_z) << "\n";
    }
  };
  trainer->run(d, opt);
  Checkpoint ck = trainer->checkpoint();
  const std::vector<int>& calib_rows = val_rows.empty() ? train_rows : val_rows;
  set_checkpoint_epsilons(ck, calibrate_all(trainer->model(), d, calib_rows, 0.9));
  save_checkpoint(ckpt.string(), ck);
  TrainOutcome o;
  o.checkpoint = ckpt;
  if (!test_rows.empty()) {
    o.test = evaluate_model(trainer->model(), d, test_rows);
    write_text(out / "metrics.csv", metrics_csv_header() + "\n" + metrics_csv_row(to_string(trainer->config().variant), o.test) + "\n");
  }
  return o;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"DualDis: dual-branch disentangling auto-encoder toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  // gen-data ---------------------------------------------------------------
  auto* gen = app.add_subcommand("gen-data", "Render the synthetic glyph dataset (PNG files + manifest CSV)");
  SyntheticSpec spec;
  std::string gen_out = "data";
  double test_frac = 0.2, val_frac = 0.2;
  gen->add_option("--out", gen_out, "Output directory")->capture_default_str();
  gen->add_option("--classes", spec.n_classes, "Number of glyph classes (1-8)")->capture_default_str();
  gen->add_option("--size", spec.image_size, "Image side in pixels")->capture_default_str();
  gen->add_option("--per-class", spec.samples_per_class, "Images per class (even)")->capture_default_str();
  gen->add_option("--jitter", spec.jitter, "Position jitter in pixels")->capture_default_str();
  gen->add_option("--seed", spec.seed, "Generator seed")->capture_default_str();
  gen->add_option("--test-fraction", test_frac, "Per-class test share")->capture_default_str();
  gen->add_option("--val-fraction", val_frac, "Share of the remaining train images used for validation")->capture_default_str();
  gen->callback([&] {
    Dataset d = synthetic_dataset(spec);
    split_dataset(d, test_frac, val_frac, spec.seed);
    const fs::path csv = fs::path(gen_out) / "manifest.csv";
    write_manifest(d, csv.string());
    std::cout << csv.string() << ": " << d.size() << " images (" << d.indices(Split::train).size() << " train, " << d.indices(Split::val).size()
              << " val, " << d.indices(Split::test).size() << " test)\n";
  });

  // train ------------------------------------------------------------------
  auto* train = app.add_subcommand("train", "Train one preset and write checkpoint, step log and test metrics");
  std::string spec_file, preset = "DualDis", dataset = "desk", data, out_dir = "run", model_cfg, train_cfg, resume;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  double label_fraction = 1.0;
  bool quiet = false;
  train->add_option("--spec", spec_file, "Run specification file (key = value)");
  train->add_option("--preset", preset, "Variant: A, B, B', C, D, D', E or DualDis")->capture_default_str();
  train->add_option("--dataset", dataset, "Architecture/hyperparameter preset: desk, yale, norb, celeba")->capture_default_str();
  train->add_option("--data", data, "Dataset manifest CSV");
  train->add_option("--out", out_dir, "Output directory")->capture_default_str();
  train->add_option("--model-config", model_cfg, "Model configuration overrides");
  train->add_option("--train-config", train_cfg, "Training configuration overrides");
  train->add_option("--seed", seed, "Master seed (initialization, shuffling, label masking)");
  train->add_option("--epochs", epochs, "Epoch budget");
  train->add_option("--label-fraction", label_fraction, "Share of train images keeping attribute labels")->capture_default_str();
  train->add_option("--resume", resume, "Continue from a checkpoint written by train");
  train->add_flag("--quiet", quiet, "No per-epoch progress");
  train->callback([&] {
    if (!spec_file.empty()) {
      const RunSpec s = RunSpec::read(spec_file);
      preset = s.preset;
      dataset = s.dataset;
      if (data.empty()) data = s.data;
      out_dir = s.out_dir;
      model_cfg = s.model_config;
      train_cfg = s.train_config;
      if (!seed) seed = s.seed;
      if (!epochs) epochs = s.epochs;
      label_fraction = s.label_fraction;
    }
    const Variant v = parse_variant(preset);
    ModelConfig mc = model_preset(dataset, v);
    TrainConfig tc = train_preset(dataset, v);
    if (!model_cfg.empty()) {
      const KeyValues kv = KeyValues::read_file(model_cfg);
      mc = ModelConfig::from_keys(kv, mc);
      kv.reject_unused(model_cfg);
    }
    if (!train_cfg.empty()) tc = TrainConfig::from_text(read_text(train_cfg), tc);
    if (seed) {
      tc.seed = *seed;
      mc.init_seed = *seed;
    }
    if (epochs) tc.epochs = *epochs;
    if (!(label_fraction > 0 && label_fraction <= 1)) throw Error("--label-fraction must lie in (0, 1]");
    if (label_fraction < 1 && tc.labeled_per_batch == 0) tc.labeled_per_batch = std::max(1, tc.batch_size / 4);
    tc.validate();
    const Dataset d = load_data(data, mc);
    const TrainOutcome o = train_one(mc, tc, d, label_fraction, out_dir, resume, epochs, quiet);
    std::cout << "checkpoint: " << o.checkpoint.string() << "\n" << metrics_table({{to_string(v), o.test}});
  });

  // eval -------------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "Score a checkpoint: acc_y, acc_z, dis_y, dis_z, aggregated");
  std::string ckpt_path, split_name = "test";
  bool use_probe = false;
  ProbeConfig probe_cfg;
  eval->add_option("--checkpoint", ckpt_path, "Checkpoint (.ddck)")->required();
  eval->add_option("--data", data, "Dataset manifest CSV")->required();
  eval->add_option("--split", split_name, "Split to score: train, val or test")->capture_default_str();
  eval->add_flag("--probe", use_probe, "Measure dis_y/dis_z with fresh probes trained on the train split");
  eval->add_option("--probe-epochs", probe_cfg.epochs, "Probe training epochs")->capture_default_str();
  eval->callback([&] {
    const Model<float> model = restore_model(load_checkpoint(ckpt_path, true));
    const Dataset d = load_data(data, model.config());
    const std::vector<int> rows = d.indices(parse_split(split_name));
    const std::vector<int> train_rows = d.indices(Split::train);
    const MetricsReport r = evaluate_model(model, d, rows, use_probe ? &probe_cfg : nullptr, &train_rows);
    const std::string name = to_string(model.config().variant);
    std::cout << metrics_table({{name, r}}) << metrics_csv_header() << "\n" << metrics_csv_row(name, r) << "\n";
    if (r.probe_y || r.probe_z) std::cout << "* measured with post-hoc probes\n";
  });

  // edit -------------------------------------------------------------------
  auto* edit = app.add_subcommand("edit", "Move one attribute of an image along its W_z direction");
  std::string image_in, image_out = "edited.png", attribute;
  std::optional<double> epsilon;
  bool do_flip = false;
  edit->add_option("--checkpoint", ckpt_path, "Checkpoint (.ddck)")->required();
  edit->add_option("--image", image_in, "Input PNG")->required();
  edit->add_option("--attribute", attribute, "Attribute name or index")->required();
  edit->add_option("--epsilon", epsilon, "Signed edit magnitude");
  edit->add_flag("--flip", do_flip, "Flip the predicted attribute using the calibrated threshold");
  edit->add_option("--out", image_out, "Output PNG")->capture_default_str();
  edit->callback([&] {
    const Checkpoint ck = load_checkpoint(ckpt_path, true);
    const Model<float> model = restore_model(ck);
    const ModelConfig& mc = model.config();
    int a = -1;
    for (std::size_t i = 0; i < mc.attribute_names.size(); ++i)
      if (mc.attribute_names[i] == attribute) a = static_cast<int>(i);
    if (a < 0) a = std::stoi(attribute);
    const Latents h = encode_images(model, load_image_batch(image_in, mc));
    EditResult r;
    if (do_flip) {
      const std::vector<double> eps = checkpoint_epsilons(ck);
      if (a >= static_cast<int>(eps.size()) || !(eps[a] > 0)) throw Error("attribute " + attribute + " has no calibrated threshold");
      r = flip(model, h, a, eps[a]);
    } else {
      if (!epsilon) throw Error("give --epsilon or --flip");
      r = slide(model, h, a, *epsilon);
    }
    save_image(image_out, r.images);
    const Tensor<float> before = attribute_logits(model, h.h_z), after = attribute_logits(model, r.h_z);
    std::cout << image_out << ": attribute " << a << " logit " << before.at(0, a) << " -> " << after.at(0, a) << "\n";
  });

  // mix --------------------------------------------------------------------
  auto* mixc = app.add_subcommand("mix", "Decode h_y of one image with h_z of another");
  std::string identity_img, attributes_img;
  mixc->add_option("--checkpoint", ckpt_path, "Checkpoint (.ddck)")->required();
  mixc->add_option("--identity", identity_img, "PNG providing h_y")->required();
  mixc->add_option("--attributes", attributes_img, "PNG providing h_z")->required();
  mixc->add_option("--out", image_out, "Output PNG")->capture_default_str();
  mixc->callback([&] {
    const Model<float> model = restore_model(load_checkpoint(ckpt_path, true));
    const Tensor<float> out = mix(model, load_image_batch(identity_img, model.config()), load_image_batch(attributes_img, model.config()));
    save_image(image_out, out);
    std::cout << image_out << "\n";
  });

  // augment ----------------------------------------------------------------
  auto* aug = app.add_subcommand("augment", "Generate edited train images that fill attribute categories per class");
  int ngen = 10;
  std::string plan_kind = "yale", plan_attrs, plan_dist, plan_excl, plan_mode = "target-only", eps_file, aug_out = "augmented";
  std::uint64_t aug_seed = 5;
  aug->add_option("--checkpoint", ckpt_path, "Checkpoint (.ddck)")->required();
  aug->add_option("--data", data, "Dataset manifest CSV (its train split is the source)")->required();
  aug->add_option("--ngen", ngen, "Generated images per class")->capture_default_str();
  aug->add_option("--plan", plan_kind, "yale (one-hot lighting clusters) or binary (attribute subset)")->capture_default_str();
  aug->add_option("--attributes", plan_attrs, "binary plan: comma-separated attribute indices");
  aug->add_option("--distribution", plan_dist, "Category shares (default: yale table, or uniform for binary)");
  aug->add_option("--exclude", plan_excl, "Source categories never edited");
  aug->add_option("--mode", plan_mode, "target-only or target-and-source (one-hot plans)")->capture_default_str();
  aug->add_option("--epsilon-file", eps_file, "File with 'epsilon_star = e0, e1, ...' overriding the checkpoint");
  aug->add_option("--seed", aug_seed, "Planner seed")->capture_default_str();
  aug->add_option("--out", aug_out, "Output directory")->capture_default_str();
  aug->callback([&] {
    const Checkpoint ck = load_checkpoint(ckpt_path, true);
    const Model<float> model = restore_model(ck);
    const Dataset d = load_data(data, model.config());
    AugmentPlan plan;
    if (plan_kind == "yale") {
      plan = yale_augment_plan(ngen);
    } else if (plan_kind == "binary") {
      plan.domain = CategoryDomain::binary;
      plan.attributes = parse_int_list(plan_attrs);
      if (plan.attributes.empty()) throw Error("--plan binary needs --attributes");
      plan.distribution.assign(static_cast<std::size_t>(1) << plan.attributes.size(), 1.0 / (1 << plan.attributes.size()));
      plan.n_gen = ngen;
    } else {
      throw Error("unknown --plan '" + plan_kind + "'");
    }
    if (!plan_dist.empty()) {
      plan.distribution = parse_double_list(plan_dist);
      double s = 0;
      for (double p : plan.distribution) s += p;
      for (double& p : plan.distribution) p /= s;
    }
    if (!plan_excl.empty()) plan.excluded = parse_int_list(plan_excl);
    if (plan_mode == "target-and-source") plan.mode = EditMode::target_and_source;
    else if (plan_mode != "target-only") throw Error("unknown --mode '" + plan_mode + "'");
    plan.seed = aug_seed;
    std::vector<double> eps = checkpoint_epsilons(ck);
    if (!eps_file.empty()) eps = KeyValues::read_file(eps_file).get_doubles("epsilon_star");
    const AugmentResult r = plan_augmentation(model, d, d.indices(Split::train), plan, eps);
    for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
    const fs::path csv = fs::path(aug_out) / "manifest.csv";
    write_manifest(r.generated, csv.string());
    std::cout << csv.string() << ": " << r.generated.size() << " generated images\n";
  });

  // train-classifier ---------------------------------------------------------
  auto* tcls = app.add_subcommand("train-classifier", "Train W_y o E_y o E on train (+ generated) images, report test accuracy");
  std::string extra;
  int cls_epochs = 60, cls_batch = 32;
  std::uint64_t cls_seed = 1;
  tcls->add_option("--data", data, "Dataset manifest CSV")->required();
  tcls->add_option("--extra", extra, "Manifest of generated images added to the train split");
  tcls->add_option("--dataset", dataset, "Architecture preset")->capture_default_str();
  tcls->add_option("--epochs", cls_epochs, "Training epochs")->capture_default_str();
  tcls->add_option("--batch", cls_batch, "Batch size")->capture_default_str();
  tcls->add_option("--seed", cls_seed, "Seed")->capture_default_str();
  tcls->callback([&] {
    ModelConfig mc = model_preset(dataset, Variant::DualDis);
    Dataset d = load_data(data, mc);
    if (!extra.empty()) {
      Dataset g = load_data(extra, mc);
      for (auto& s : g.split) s = Split::train;
      d.append(g);
    }
    const double acc = retrain_classifier(mc, d, d.indices(Split::train), d.indices(Split::test), cls_epochs, cls_batch, cls_seed);
    std::cout << "train images: " << d.indices(Split::train).size() << "\ntest accuracy: " << format_score(acc) << "\n";
  });

  // serve ------------------------------------------------------------------
  auto* serve = app.add_subcommand("serve", "HTTP inference API over a checkpoint");
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t max_payload = 8u << 20;
  if (const char* p = std::getenv("DUALDIS_PORT")) port = std::atoi(p);
  if (const char* c = std::getenv("DUALDIS_CHECKPOINT")) ckpt_path = c;
  serve->add_option("--checkpoint", ckpt_path, "Checkpoint (.ddck); env DUALDIS_CHECKPOINT");
  serve->add_option("--host", host, "Bind address")->capture_default_str();
  serve->add_option("--port", port, "Port; env DUALDIS_PORT")->capture_default_str();
  serve->add_option("--max-payload", max_payload, "Largest accepted request body in bytes")->capture_default_str();
  serve->callback([&] {
    ServiceOptions so;
    so.max_payload_bytes = max_payload;
    Service service(so);
    if (!ckpt_path.empty()) service.load_file(ckpt_path);
    httplib::Server server;
    service.bind(server);
    std::cerr << "listening on " << host << ":" << port << (ckpt_path.empty() ? " (no checkpoint loaded)" : "") << "\n";
    if (!server.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
  });

  // eval-grid ----------------------------------------------------------------
  auto* grid = app.add_subcommand("eval-grid", "Train and score several presets on one dataset; print one table");
  std::string grid_presets = "A,B,B',C,D,D',E,DualDis", grid_seeds = "1";
  grid->add_option("--data", data, "Dataset manifest CSV")->required();
  grid->add_option("--dataset", dataset, "Architecture preset")->capture_default_str();
  grid->add_option("--presets", grid_presets, "Comma-separated variants")->capture_default_str();
  grid->add_option("--seeds", grid_seeds, "Comma-separated seeds")->capture_default_str();
  grid->add_option("--epochs", epochs, "Epoch budget per run");
  grid->add_option("--out", out_dir, "Output directory")->capture_default_str();
  grid->callback([&] {
    std::vector<std::pair<std::string, MetricsReport>> rows;
    std::string csv = "seed," + metrics_csv_header() + "\n";
    for (int s : parse_int_list(grid_seeds))
      for (const auto& name : KeyValues::parse("v = " + grid_presets).get_list("v")) {
        const Variant v = parse_variant(name);
        ModelConfig mc = model_preset(dataset, v);
        TrainConfig tc = train_preset(dataset, v);
        mc.init_seed = tc.seed = static_cast<std::uint64_t>(s);
        if (epochs) tc.epochs = *epochs;
        const Dataset d = load_data(data, mc);
        std::string tag = to_string(v);
        std::replace(tag.begin(), tag.end(), '\'', 'p');
        const TrainOutcome o = train_one(mc, tc, d, 1.0, fs::path(out_dir) / ("seed" + std::to_string(s)) / tag, "", std::nullopt, true);
        rows.emplace_back(std::string(to_string(v)) + (parse_int_list(grid_seeds).size() > 1 ? "/s" + std::to_string(s) : ""), o.test);
        csv += std::to_string(s) + "," + metrics_csv_row(to_string(v), o.test) + "\n";
        std::cerr << "done: " << to_string(v) << " seed " << s << "\n";
      }
    write_text(fs::path(out_dir) / "grid.csv", csv);
    std::cout << metrics_table(rows);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
