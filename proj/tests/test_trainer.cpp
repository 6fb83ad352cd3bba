#include <gtest/gtest.h>

#include "dualdis/trainer.hpp"

namespace dualdis {
namespace {

Dataset tiny_dataset() {
  SyntheticSpec s;
  s.samples_per_class = 24;
  Dataset d = synthetic_dataset(s);
  split_dataset(d, 0.2, 0.2, 1);
  return d;
}

TrainConfig tiny_config(Variant v, int epochs) {
  TrainConfig c = train_preset("desk", v);
  c.epochs = epochs;
  c.batch_size = 16;
  return c;
}

TEST(TrainConfig, TextRoundTripAndStrictKeys) {
  TrainConfig c = train_preset("norb", Variant::E);
  c.weights.adv_kind = AdversarialKind::max_entropy;
  c.labeled_per_batch = 4;
  c.adam_disc.lr = 3e-4;
  const TrainConfig back = TrainConfig::from_text(c.to_text());
  EXPECT_EQ(back.to_text(), c.to_text());
  EXPECT_THROW(TrainConfig::from_text("lamda_rec = 1\n"), ConfigError);
  EXPECT_THROW(TrainConfig::from_text("batch_size = 0\n"), ConfigError);
  EXPECT_THROW(TrainConfig::from_text("lambda_rec = -1\n"), ConfigError);
  EXPECT_THROW(TrainConfig::from_text("beta1 = 1\n"), ConfigError);
  EXPECT_THROW(TrainConfig::from_text("epochs = many\n"), ConfigError);
  const TrainConfig over = TrainConfig::from_text("epochs = 3\n", c);
  EXPECT_EQ(over.epochs, 3);
  EXPECT_EQ(over.batch_size, c.batch_size);
}

TEST(TrainConfig, DatasetPresets) {
  const TrainConfig celeba = train_preset("celeba", Variant::DualDis);
  EXPECT_EQ(celeba.weights.rec, 0.3);
  EXPECT_EQ(celeba.weights.adv_y, 0.1);
  EXPECT_EQ(celeba.batch_size, 32);
  const TrainConfig yale = train_preset("yale", Variant::DualDis);
  EXPECT_EQ(yale.weights.rec, 1);
  EXPECT_EQ(yale.weights.adv_z, 0.08);
  EXPECT_EQ(yale.batch_size, 64);
  const TrainConfig norb = train_preset("norb", Variant::DualDis);
  EXPECT_EQ(norb.weights.rec, 10);
  EXPECT_EQ(norb.weights.adv_y, 0.25);
  EXPECT_EQ(norb.batch_size, 128);
  EXPECT_EQ(norb.weights.orth, 1e-6);
  EXPECT_EQ(norb.weights.uai_adv, 0.3);
  TrainConfig ssl = train_preset("celeba", Variant::DualDis);
  apply_ssl_preset(ssl, 1000);
  EXPECT_EQ(ssl.weights.rec, 0.5);
  EXPECT_EQ(ssl.labeled_per_batch, 8);
  apply_ssl_preset(ssl, 4000);
  EXPECT_EQ(ssl.weights.rec, 0.3);
  EXPECT_EQ(ssl.labeled_per_batch, 10);
  EXPECT_THROW(train_preset("mnist", Variant::A), ConfigError);
}

TEST(Trainer, VariantMismatchIsRejected) {
  EXPECT_THROW(Trainer(model_preset("desk", Variant::A), train_preset("desk", Variant::E)), ConfigError);
}

TEST(Trainer, StepUpdatesBothPartitionsAndCounts) {
  const Dataset d = tiny_dataset();
  Trainer t(model_preset("desk", Variant::DualDis), tiny_config(Variant::DualDis, 1));
  const Tensor<float> enc = t.model().stack("E").parameters()[0]->value();
  const Tensor<float> adv = t.model().stack("C_y").parameters()[0]->value();
  const TermValues terms = t.train_step(gather_batch(d, t.epoch_plan(d).front()));
  EXPECT_EQ(t.step(), 1);
  EXPECT_EQ(t.opt_main().step_count(), 1);
  EXPECT_EQ(t.opt_disc().step_count(), 1);
  EXPECT_NE(t.model().stack("E").parameters()[0]->value(), enc);
  EXPECT_NE(t.model().stack("C_y").parameters()[0]->value(), adv);
  std::set<std::string> names;
  for (const auto& [n, v] : terms) names.insert(n);
  for (const char* n : {"rec", "y", "z", "adv_y", "adv_z", "orth", "disc_y", "disc_z", "main", "disc"}) EXPECT_TRUE(names.count(n)) << n;
}

TEST(Trainer, LossesDecreaseOnSmallData) {
  const Dataset d = tiny_dataset();
  Trainer t(model_preset("desk", Variant::B_prime), tiny_config(Variant::B_prime, 12));
  std::ostringstream log;
  RunOptions opt;
  opt.log = &log;
  t.run(d, opt);
  std::map<long, double> y;
  std::istringstream in(log.str());
  std::string line;
  while (std::getline(in, line)) {
    const auto cells = split_csv_line(line);
    if (cells[1] == "y") y[std::stol(cells[0])] = std::stod(cells[2]);
  }
  ASSERT_FALSE(y.empty());
  double first = 0, last = 0;
  auto it = y.begin();
  auto rit = y.rbegin();
  for (int k = 0; k < 4; ++k, ++it, ++rit) {
    first += it->second;
    last += rit->second;
  }
  EXPECT_LT(last, 0.5 * first);
  EXPECT_EQ(t.epoch(), 12);
}

TEST(Trainer, NonFiniteTermIsNamed) {
  Dataset d = tiny_dataset();
  Trainer t(model_preset("desk", Variant::DualDis), tiny_config(Variant::DualDis, 1));
  Batch b = gather_batch(d, t.epoch_plan(d).front());
  b.x[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    t.train_step(b);
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite loss term"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos);
  }
}

TEST(Trainer, SemiSupervisedPlanMixesLabeledRows) {
  Dataset d = tiny_dataset();
  keep_label_fraction(d, d.indices(Split::train), 0.25, 1);
  TrainConfig c = tiny_config(Variant::DualDis, 1);
  c.labeled_per_batch = 4;
  Trainer t(model_preset("desk", Variant::DualDis), c);
  for (const auto& b : t.epoch_plan(d)) {
    int labeled = 0;
    for (int r : b) labeled += d.has_z[r];
    EXPECT_EQ(labeled, 4);
  }
  // masked rows contribute nothing: a fully unlabeled dataset cannot train L_z
  Dataset none = tiny_dataset();
  std::fill(none.has_z.begin(), none.has_z.end(), 0);
  EXPECT_THROW(t.epoch_plan(none), DataError);
}

TEST(Trainer, ResumeReproducesUnbrokenRun) {
  const Dataset d = tiny_dataset();
  const ModelConfig mc = model_preset("desk", Variant::DualDis);
  std::ostringstream full;
  Trainer a(mc, tiny_config(Variant::DualDis, 2));
  RunOptions oa;
  oa.log = &full;
  a.run(d, oa);

  std::ostringstream part;
  Trainer b(mc, tiny_config(Variant::DualDis, 2));
  b.train_epoch(d, &part);
  const std::string bytes = encode_checkpoint(b.checkpoint());
  Trainer c(decode_checkpoint(bytes));
  EXPECT_EQ(c.epoch(), 1);
  RunOptions oc;
  oc.log = &part;
  c.run(d, oc);
  EXPECT_EQ(part.str(), full.str());
  EXPECT_EQ(encode_checkpoint(c.checkpoint()), encode_checkpoint(a.checkpoint()));
}

TEST(Classifier, RetrainLearnsAboveChance) {
  SyntheticSpec s;
  s.samples_per_class = 60;
  Dataset d = synthetic_dataset(s);
  split_dataset(d, 0.2, 0.0, 1);
  const double acc = retrain_classifier(model_preset("desk", Variant::DualDis), d, d.indices(Split::train), d.indices(Split::test), 6, 16, 1);
  EXPECT_GT(acc, 50.0);
  EXPECT_LE(acc, 100.0);
  EXPECT_THROW(retrain_classifier(model_preset("desk", Variant::DualDis), d, {}, d.indices(Split::test), 1, 16, 1), DataError);
}

}  // namespace
}  // namespace dualdis
