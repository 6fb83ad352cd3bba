#include <gtest/gtest.h>

#include "dualdis/model.hpp"

namespace dualdis {
namespace {

TEST(Variants, NamesRoundTrip) {
  for (Variant v : kAllVariants) EXPECT_EQ(parse_variant(to_string(v)), v);
  EXPECT_EQ(parse_variant("Bp"), Variant::B_prime);
  EXPECT_EQ(parse_variant("dualdis"), Variant::DualDis);
  EXPECT_THROW(parse_variant("F"), ConfigError);
}

TEST(Variants, SwitchTable) {
  EXPECT_FALSE(switches_for(Variant::A).decoder);
  EXPECT_FALSE(switches_for(Variant::B).z_supervised);
  EXPECT_TRUE(switches_for(Variant::B_prime).z_supervised);
  const VariantSwitches c = switches_for(Variant::C);
  EXPECT_FALSE(c.z_branch);
  EXPECT_TRUE(c.mtan);
  EXPECT_TRUE(c.adv_z);
  EXPECT_FALSE(c.has_c_y);
  EXPECT_TRUE(switches_for(Variant::D).uai && !switches_for(Variant::D).z_supervised);
  EXPECT_TRUE(switches_for(Variant::D_prime).uai && switches_for(Variant::D_prime).z_supervised);
  const VariantSwitches e = switches_for(Variant::E);
  EXPECT_TRUE(e.adv_y && !e.adv_z && !e.z_supervised);
  const VariantSwitches dd = switches_for(Variant::DualDis);
  EXPECT_TRUE(dd.adv_y && dd.adv_z && dd.orth && dd.z_supervised && !dd.uai);
}

TEST(Model, DeskLatentsAndStacks) {
  Model<float> m(model_preset("desk", Variant::DualDis));
  EXPECT_EQ(m.dim_hy(), 32);
  EXPECT_EQ(m.dim_hz(), 32);
  for (const char* s : {"E", "E_y", "E_z", "D", "W_y", "W_z", "C_y", "C_z"}) EXPECT_TRUE(m.has_stack(s)) << s;
  EXPECT_FALSE(m.has_stack("U_y"));
  EXPECT_EQ(m.stack("W_z").layers().front().weight.value().shape(), (Shape{6, 32}));
}

TEST(Model, VariantComponents) {
  EXPECT_FALSE(Model<float>(model_preset("desk", Variant::A)).has_stack("D"));
  const Model<float> c(model_preset("desk", Variant::C));
  EXPECT_FALSE(c.has_stack("E_z"));
  EXPECT_FALSE(c.has_stack("C_y"));
  EXPECT_EQ(c.stack("D").input_shape(), (Shape{32 + 6, 1, 1}));
  const Model<float> d(model_preset("desk", Variant::D));
  EXPECT_TRUE(d.has_stack("U_y") && d.has_stack("U_z"));
  // UAI presets use shallow branches: a single layer per branch
  EXPECT_EQ(d.config().encoder_y.size(), 1u);
}

TEST(Model, ForwardShapes) {
  Model<float> m(model_preset("desk", Variant::DualDis));
  Tape<float> tape(false);
  const Var<float> x = tape.constant(Tensor<float>({3, 3, 32, 32}, 0.5f));
  const LatentPair<float> h = m.encode(x, Mode::eval);
  EXPECT_EQ(h.h_y.shape(), (Shape{3, 32}));
  EXPECT_EQ(m.decode(h.h_y, h.h_z, Mode::eval).shape(), (Shape{3, 3, 32, 32}));
  EXPECT_EQ(m.y_logits(h.h_y).shape(), (Shape{3, 5}));
  EXPECT_EQ(m.z_logits(h.h_z).shape(), (Shape{3, 6}));
  EXPECT_EQ(m.adversary_y_logits(h.h_z, true).shape(), (Shape{3, 5}));
  EXPECT_EQ(m.adversary_z_logits(h.h_y, true).shape(), (Shape{3, 6}));
  EXPECT_THROW(m.decode(h.h_y, tape.constant(Tensor<float>({3, 7})), Mode::eval), ShapeError);
  EXPECT_THROW(m.uai_predict(h, true), Error);
}

TEST(Model, WrongImageSizeIsAShapeError) {
  Model<float> m(model_preset("desk", Variant::DualDis));
  Tape<float> tape(false);
  EXPECT_THROW(m.encode(tape.constant(Tensor<float>({1, 3, 28, 28})), Mode::eval), ShapeError);
}

TEST(Model, InitIsSeededAndCopiesAreIndependent) {
  Model<float> a(model_preset("desk", Variant::DualDis)), b(model_preset("desk", Variant::DualDis));
  ModelConfig other = model_preset("desk", Variant::DualDis);
  other.init_seed = 2;
  Model<float> c(other);
  EXPECT_EQ(a.parameters()[0]->value(), b.parameters()[0]->value());
  EXPECT_NE(a.parameters()[0]->value(), c.parameters()[0]->value());
  Model<float> copy = a;
  copy.parameters()[0]->value()[0] += 1.0f;
  EXPECT_NE(copy.parameters()[0]->value(), a.parameters()[0]->value());
}

TEST(Model, ParameterPartitionsCoverEverything) {
  Model<float> m(model_preset("desk", Variant::D_prime));
  EXPECT_EQ(m.main_parameters().size() + m.disc_parameters().size(), m.parameters().size());
  std::size_t n = 0;
  for (auto* p : m.parameters()) n += p->value().size();
  EXPECT_EQ(n, m.parameter_count());
  EXPECT_FALSE(m.buffers().empty());
}

TEST(ModelConfig, TextRoundTrip) {
  for (Variant v : kAllVariants) {
    const ModelConfig c = model_preset("desk", v);
    const ModelConfig back = ModelConfig::from_text(c.to_text());
    EXPECT_EQ(back.to_text(), c.to_text());
    EXPECT_EQ(back.encoder, c.encoder);
  }
}

TEST(ModelConfig, UnknownKeysAndBadNamesRejected) {
  EXPECT_THROW(ModelConfig::from_text("chanels = 3\n"), ConfigError);
  ModelConfig c = model_preset("desk", Variant::DualDis);
  c.attribute_names.pop_back();
  EXPECT_THROW(Model<float>{c}, ConfigError);
  EXPECT_THROW(model_preset("mnist", Variant::A), ConfigError);
}

TEST(ModelConfig, DecoderMustProduceTheImage) {
  ModelConfig c = model_preset("desk", Variant::DualDis);
  c.decoder = parse_layer_list("64k2p1, dec48, dec32, 3none");
  EXPECT_THROW(Model<float>{c}, ShapeError);
}

TEST(Presets, AllDatasetsBuild) {
  for (const char* ds : {"yale", "norb"}) {
    for (Variant v : {Variant::DualDis, Variant::D, Variant::C}) {
      const ModelConfig c = model_preset(ds, v);
      EXPECT_NO_THROW(Model<float>{c}) << ds << " " << to_string(v);
    }
  }
  const Model<float> y(model_preset("yale", Variant::DualDis));
  EXPECT_EQ(y.dim_hy(), 80);
  EXPECT_EQ(y.stack("W_z").output_size(), 14);
  const Model<float> n(model_preset("norb", Variant::DualDis));
  EXPECT_EQ(n.dim_hz(), 128);
  EXPECT_EQ(n.config().channels, 1);
}

TEST(Presets, CelebaShapesInfer) {
  // Construct the stacks' shapes only; the 2000-way heads make a full model heavy for a unit test.
  const ModelConfig c = model_preset("celeba", Variant::DualDis);
  Shape s = c.image_shape();
  for (const auto& l : c.encoder) s = infer_shape(l, s, "E");
  for (const auto& l : c.encoder_y) s = infer_shape(l, s, "E_y");
  EXPECT_EQ(s, (Shape{196, 1, 1}));
  Shape d{392, 1, 1};
  for (const auto& l : c.decoder) d = infer_shape(l, d, "D");
  EXPECT_EQ(d, c.image_shape());
}

}  // namespace
}  // namespace dualdis
