#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>
#include <map>
#include <set>

#include "dualdis/data.hpp"
#include "dualdis/labels.hpp"
#include "support/norb_reference.hpp"

namespace dualdis {
namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dualdis_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.samples_per_class = 20;
  return s;
}

TEST(Synthetic, BalancedAttributesPerClass) {
  const Dataset d = synthetic_dataset(SyntheticSpec{});
  EXPECT_EQ(d.size(), 1000);
  for (int c = 0; c < d.n_classes; ++c)
    for (int a = 0; a < kSynthAttributes; ++a) {
      int on = 0, n = 0;
      for (int i = 0; i < d.size(); ++i)
        if (d.y[i] == c) {
          ++n;
          on += d.z.at(i, a) > 0.5f;
        }
      EXPECT_EQ(2 * on, n) << "class " << c << " attribute " << a;
    }
}

TEST(Synthetic, DeterministicAndValuesInRange) {
  const Dataset a = synthetic_dataset(small_spec()), b = synthetic_dataset(small_spec());
  EXPECT_EQ(a.images, b.images);
  for (float v : a.images.values()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  SyntheticSpec other = small_spec();
  other.seed = 8;
  EXPECT_NE(synthetic_dataset(other).images, a.images);
}

TEST(Synthetic, HFlipAttributeIsAMirrorImage) {
  GlyphParams p;
  p.glyph = 2;
  p.attr = {true, false, true, false, true, false};
  GlyphParams q = p;
  q.attr[3] = true;
  EXPECT_EQ(flip_horizontal(render_glyph(p, 32)), render_glyph(q, 32));
}

TEST(Synthetic, EveryAttributeChangesTheImage) {
  GlyphParams p;
  const Tensor<float> base = render_glyph(p, 32);
  for (int a = 0; a < kSynthAttributes; ++a) {
    GlyphParams q = p;
    q.attr[a] = true;
    EXPECT_NE(render_glyph(q, 32), base) << a;
  }
}

TEST(Synthetic, SpecValidation) {
  SyntheticSpec s;
  s.n_classes = 9;
  EXPECT_THROW(synthetic_dataset(s), Error);
  s = SyntheticSpec{};
  s.samples_per_class = 3;
  EXPECT_THROW(synthetic_dataset(s), Error);
  s = SyntheticSpec{};
  s.image_size = 16;
  EXPECT_THROW(synthetic_dataset(s), Error);
}

TEST(Oracle, RecoversGroundTruthOnCleanRenders) {
  std::vector<GlyphParams> params;
  const Dataset d = synthetic_dataset(small_spec(), &params);
  const GlyphOracle oracle(5, 32, 1);
  const auto got = oracle.classify(d.images);
  for (std::size_t i = 0; i < params.size(); ++i) {
    EXPECT_EQ(got[i].glyph, params[i].glyph);
    EXPECT_EQ(got[i].attr, params[i].attr);
  }
}

TEST(Split, StratifiedSizesAndDeterminism) {
  Dataset d = synthetic_dataset(SyntheticSpec{});
  split_dataset(d, 0.2, 0.2, 1);
  EXPECT_EQ(d.indices(Split::test).size(), 200u);
  EXPECT_EQ(d.indices(Split::val).size(), 160u);
  EXPECT_EQ(d.indices(Split::train).size(), 640u);
  for (int c = 0; c < 5; ++c) {
    int t = 0;
    for (int i : d.indices(Split::test)) t += d.y[i] == c;
    EXPECT_EQ(t, 40);
  }
  Dataset e = synthetic_dataset(SyntheticSpec{});
  split_dataset(e, 0.2, 0.2, 1);
  EXPECT_EQ(d.split, e.split);
  split_dataset(e, 0.2, 0.2, 2);
  EXPECT_NE(d.split, e.split);
}

TEST(Split, DependsOnFilenamesNotRowOrder) {
  Dataset d = synthetic_dataset(small_spec());
  std::vector<int> rev(d.size());
  std::iota(rev.rbegin(), rev.rend(), 0);
  Dataset r = d.subset(rev);
  split_dataset(d, 0.3, 0.2, 4);
  split_dataset(r, 0.3, 0.2, 4);
  for (int i = 0; i < d.size(); ++i) EXPECT_EQ(r.split[d.size() - 1 - i], d.split[i]);
}

TEST(Split, RejectsTinyClassesAndBadFractions) {
  Dataset d = synthetic_dataset(small_spec());
  EXPECT_THROW(split_dataset(d, 0.0, 0.2, 1), DataError);
  EXPECT_THROW(split_dataset(d, 0.2, 1.0, 1), DataError);
  std::vector<int> rows{0, 1, 25, 26, 27};
  Dataset tiny = d.subset(rows);
  EXPECT_THROW(split_dataset(tiny, 0.2, 0.2, 1), DataError);
}

TEST(Manifest, RoundTripIsExact) {
  const fs::path dir = temp_dir("manifest");
  Dataset d = synthetic_dataset(small_spec());
  split_dataset(d, 0.2, 0.2, 1);
  d.has_z[3] = 0;
  write_manifest(d, (dir / "manifest.csv").string());
  const Dataset back = read_manifest((dir / "manifest.csv").string(), 3, 5);
  EXPECT_EQ(back.images, d.images);
  EXPECT_EQ(back.y, d.y);
  EXPECT_EQ(back.split, d.split);
  EXPECT_EQ(back.filenames, d.filenames);
  EXPECT_EQ(back.has_z[3], 0);
  EXPECT_EQ(back.has_z[4], 1);
  for (int i = 0; i < d.size(); ++i) {
    if (!d.has_z[i]) continue;
    for (int a = 0; a < 6; ++a) EXPECT_EQ(back.z.at(i, a), d.z.at(i, a));
  }
  fs::remove_all(dir);
}

TEST(Manifest, ErrorsCarryLocation) {
  const fs::path dir = temp_dir("badmanifest");
  Dataset d = synthetic_dataset(small_spec());
  write_manifest(d.subset(std::vector<int>{0, 1}), (dir / "m.csv").string());
  {
    std::ofstream f(dir / "m.csv", std::ios::app);
    f << "img_00000.png,x,1,0,1,0,1,0,train\n";
  }
  try {
    read_manifest((dir / "m.csv").string(), 3);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("m.csv:4"), std::string::npos) << e.what();
  }
  {
    std::ofstream f(dir / "h.csv");
    f << "file,y,split\n";
  }
  EXPECT_THROW(read_manifest((dir / "h.csv").string(), 3), DataError);
  EXPECT_THROW(read_manifest((dir / "missing.csv").string(), 3), DataError);
  fs::remove_all(dir);
}

TEST(Png, EncodeDecodeQuantizesTo8Bits) {
  Tensor<float> img({3, 2, 2});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i) / 11.0f;
  const Tensor<float> back = decode_png(encode_png(img), 3);
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(back[i], img[i], 0.5 / 255 + 1e-6);
  EXPECT_EQ(decode_png(encode_png(back), 3), back);
  EXPECT_THROW(decode_png("not a png", 3), ImageError);
}

TEST(Batches, EpochCoversEveryRowOnce) {
  std::vector<int> rows(70);
  std::iota(rows.begin(), rows.end(), 0);
  const auto bs = epoch_batches(rows, 32, 5, 0);
  ASSERT_EQ(bs.size(), 3u);
  EXPECT_EQ(bs.back().size(), 6u);
  std::multiset<int> seen;
  for (const auto& b : bs) seen.insert(b.begin(), b.end());
  EXPECT_EQ(seen, std::multiset<int>(rows.begin(), rows.end()));
  EXPECT_EQ(epoch_batches(rows, 32, 5, 0), bs);
  EXPECT_NE(epoch_batches(rows, 32, 5, 1), bs);
  EXPECT_EQ(epoch_batches(rows, 32, 5, 0, false).front().front(), 0);
}

TEST(Batches, SslBatchesHoldFixedLabeledCount) {
  std::vector<int> lab{0, 1, 2, 3, 4}, unl;
  for (int i = 5; i < 50; ++i) unl.push_back(i);
  for (int epoch = 0; epoch < 3; ++epoch) {
    const auto bs = ssl_batches(lab, unl, 2, 8, 9, epoch);
    EXPECT_EQ(bs.size(), 8u);  // ceil(45 / 6)
    std::set<int> u;
    for (const auto& b : bs) {
      EXPECT_LT(b[0], 5);
      EXPECT_LT(b[1], 5);
      for (std::size_t k = 2; k < b.size(); ++k) {
        EXPECT_GE(b[k], 5);
        u.insert(b[k]);
      }
    }
    EXPECT_EQ(u.size(), 45u);
    EXPECT_EQ(ssl_batches(lab, unl, 2, 8, 9, epoch), bs);  // replayable without state
  }
  EXPECT_THROW(ssl_batches(lab, unl, 0, 8, 9, 0), DataError);
  EXPECT_THROW(ssl_batches({}, unl, 2, 8, 9, 0), DataError);
}

TEST(Batches, SslLabeledStreamCyclesEvenly) {
  std::vector<int> lab{0, 1, 2}, unl;
  for (int i = 3; i < 33; ++i) unl.push_back(i);
  std::map<int, int> count;
  for (int epoch = 0; epoch < 2; ++epoch)
    for (const auto& b : ssl_batches(lab, unl, 1, 4, 1, epoch)) ++count[b[0]];
  // 20 labeled draws over 3 rows: every row appears 6 or 7 times
  for (int r : lab) EXPECT_GE(count[r], 6);
}

TEST(Batches, LabelFractionAndGather) {
  Dataset d = synthetic_dataset(small_spec());
  std::vector<int> rows(d.size());
  std::iota(rows.begin(), rows.end(), 0);
  keep_label_fraction(d, rows, 0.25, 3);
  EXPECT_EQ(std::count(d.has_z.begin(), d.has_z.end(), 1), 25);
  const Batch b = gather_batch(d, std::vector<int>{4, 7});
  EXPECT_EQ(b.x.shape(), (Shape{2, 3, 32, 32}));
  EXPECT_EQ(b.y[1], d.y[7]);
  EXPECT_EQ(b.has_z[0], d.has_z[4]);
  EXPECT_THROW(keep_label_fraction(d, rows, 0.0, 3), DataError);
}

using testing::norb_reference;

TEST(NorbLabels, ExhaustiveSweepMatchesReference) {
  int n = 0;
  for (int light = 0; light < 6; ++light)
    for (double e = 30; e <= 70; e += 2.5)
      for (double a = 0; a <= 340; a += 20) {
        EXPECT_EQ(norb_soft_labels(light, e, a), norb_reference(light, e, a)) << light << " " << e << " " << a;
        ++n;
      }
  EXPECT_EQ(n, 6 * 17 * 18);
}

TEST(NorbLabels, KnownValues) {
  const auto z = norb_soft_labels(2, 42.5, 0);
  EXPECT_DOUBLE_EQ(z[0], 0.0);
  EXPECT_DOUBLE_EQ(z[1], 0.5);
  EXPECT_DOUBLE_EQ(z[2], 0.5);
  EXPECT_DOUBLE_EQ(z[3], 0.0);
  EXPECT_DOUBLE_EQ(z[4], 1.0);
  const auto c = norb_soft_labels(5, 50, 90);
  EXPECT_EQ((std::array<double, 3>{c[1], c[2], c[3]}), (std::array<double, 3>{0, 1, 0}));
  // wraparound: 340 degrees is 20 from the 0 center (divisor configurable)
  EXPECT_NEAR(norb_soft_labels(0, 50, 340, 30)[4], 1.0 - 20.0 / 30, 1e-12);
  EXPECT_THROW(norb_soft_labels(6, 50, 0), LabelError);
  EXPECT_THROW(norb_soft_labels(0, 75, 0), LabelError);
  EXPECT_THROW(norb_soft_labels(0, 50, 350), LabelError);
}

TEST(YaleClusters, TableLookupAndErrors) {
  const LightClusterTable t = LightClusterTable::parse(
      "elevation_edges = -90, 0, 90\n"
      "azimuth_edges = -130, -20, 20, 130\n"
      "cells = 0, 1, 2, 3, 4, 5\n"
      "clusters = 6\n");
  EXPECT_EQ(t.cluster(-10, -50), 0);
  EXPECT_EQ(t.cluster(0, 0), 4);     // lower edge belongs to the upper cell
  EXPECT_EQ(t.cluster(90, 130), 5);  // last edges are closed
  const auto z = yale_light_cluster(45, -20, t);
  EXPECT_EQ(z.size(), 6u);
  EXPECT_EQ(z[4], 1.0);
  EXPECT_EQ(std::accumulate(z.begin(), z.end(), 0.0), 1.0);
  EXPECT_THROW(t.cluster(91, 0), LabelError);
  EXPECT_THROW(LightClusterTable::parse("elevation_edges = 0, 1\nazimuth_edges = 0, 1\ncells = 0, 1\n"), LabelError);
  EXPECT_THROW(LightClusterTable::parse("elevation_edges = 0, 1\nazimuth_edges = 0, 1\ncells = 14\n"), LabelError);
  EXPECT_THROW(LightClusterTable::parse("elevation_edges = 1, 0\nazimuth_edges = 0, 1\ncells = 0\n"), LabelError);
  EXPECT_THROW(LightClusterTable::parse("elevation_edges = 0, 1\nazimuth_edges = 0, 1\ncells = 0\ncolour = red\n"), ConfigError);
}

}  // namespace
}  // namespace dualdis
