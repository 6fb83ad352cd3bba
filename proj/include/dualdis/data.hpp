#pragma once

// In-memory labeled datasets, the CSV manifest format, stratified splits and
// deterministic batch streams (plain and semi-supervised).

#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "dualdis/image_io.hpp"
#include "dualdis/keyvalue.hpp"
#include "dualdis/objectives.hpp"
#include "dualdis/synthetic.hpp"

namespace dualdis {

enum class Split { train, val, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw Error("unknown split tag '" + std::string(s) + "'");
}

class DataError : public Error {
 public:
  using Error::Error;
};

/// Images with class labels, attribute targets and supervision flags.
struct Dataset {
  Shape image_shape;       // (C,H,W)
  Tensor<float> images;    // (N,C,H,W) in [0,1]
  std::vector<int> y;      // class index per sample
  Tensor<float> z;         // (N, n_attributes), soft targets in [0,1]
  Mask has_z;              // attribute labels available
  std::vector<std::string> filenames;
  std::vector<Split> split;
  int n_classes = 0;
  int n_attributes = 0;

  int size() const { return static_cast<int>(y.size()); }

  std::vector<int> indices(Split s) const {
    std::vector<int> out;
    for (int i = 0; i < size(); ++i)
      if (split[i] == s) out.push_back(i);
    return out;
  }

  Dataset subset(std::span<const int> rows) const {
    Dataset d;
    d.image_shape = image_shape;
    d.images = images.gather_rows(rows);
    d.z = z.gather_rows(rows);
    d.n_classes = n_classes;
    d.n_attributes = n_attributes;
    for (int r : rows) {
      d.y.push_back(y[r]);
      d.has_z.push_back(has_z[r]);
      d.filenames.push_back(filenames[r]);
      d.split.push_back(split[r]);
    }
    return d;
  }

  /// Appends every sample of `other` (same image shape and label widths).
  void append(const Dataset& other) {
    if (other.image_shape != image_shape || other.n_attributes != n_attributes) {
      throw DataError("append: incompatible datasets");
    }
    const std::array<Tensor<float>, 2> imgs{images, other.images};
    images = concat_rows<float>(imgs);
    const std::array<Tensor<float>, 2> zs{z, other.z};
    z = concat_rows<float>(zs);
    y.insert(y.end(), other.y.begin(), other.y.end());
    has_z.insert(has_z.end(), other.has_z.begin(), other.has_z.end());
    filenames.insert(filenames.end(), other.filenames.begin(), other.filenames.end());
    split.insert(split.end(), other.split.begin(), other.split.end());
    n_classes = std::max(n_classes, other.n_classes);
  }

  void validate() const {
    const int n = size();
    if (images.rank() != 4 || images.dim(0) != n) throw DataError("dataset: image tensor does not match label count");
    if (z.rank() != 2 || z.dim(0) != n || z.dim(1) != n_attributes) throw DataError("dataset: attribute table shape mismatch");
    for (int i = 0; i < n; ++i)
      if (y[i] < 0 || y[i] >= n_classes) throw DataError("dataset: class label " + std::to_string(y[i]) + " out of range");
    if (!z.all_finite()) throw DataError("dataset: non-finite attribute target");
  }
};

/// Synthetic dataset in memory (all samples tagged train until split).
inline Dataset synthetic_dataset(const SyntheticSpec& spec, std::vector<GlyphParams>* params = nullptr) {
  const auto samples = generate_synthetic_samples(spec);
  Dataset d;
  d.n_classes = spec.n_classes;
  d.n_attributes = kSynthAttributes;
  d.image_shape = {3, spec.image_size, spec.image_size};
  const int n = static_cast<int>(samples.size());
  d.images = Tensor<float>({n, 3, spec.image_size, spec.image_size});
  d.z = Tensor<float>({n, kSynthAttributes});
  const std::size_t per = num_elements(d.image_shape);
  for (int i = 0; i < n; ++i) {
    const auto& s = samples[i];
    std::copy(s.image.storage().begin(), s.image.storage().end(), d.images.data() + i * per);
    for (int a = 0; a < kSynthAttributes; ++a) d.z.at(i, a) = s.params.attr[a] ? 1.0f : 0.0f;
    d.y.push_back(s.params.glyph);
    d.has_z.push_back(1);
    char name[32];
    std::snprintf(name, sizeof name, "img_%05d.png", i);
    d.filenames.emplace_back(name);
    d.split.push_back(Split::train);
    if (params) params->push_back(s.params);
  }
  return d;
}

/// FNV-1a 64-bit hash.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

/// Per-class stratified split keyed by filename: within each class, samples
/// are ordered by a seeded hash of their filename; the first
/// round(n * test_fraction) become test, then round(rest * val_fraction)
/// become validation. Independent of row order.
inline void split_dataset(Dataset& d, double test_fraction, double val_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0 && test_fraction < 1) || !(val_fraction >= 0 && val_fraction < 1)) {
    throw DataError("split: fractions must lie in (0,1)");
  }
  std::vector<std::vector<int>> by_class(d.n_classes);
  for (int i = 0; i < d.size(); ++i) by_class[d.y[i]].push_back(i);
  const std::string salt = std::to_string(seed) + ":";
  for (int c = 0; c < d.n_classes; ++c) {
    auto& rows = by_class[c];
    if (rows.empty()) continue;
    if (rows.size() < 3) throw DataError("split: class " + std::to_string(c) + " has fewer than 3 samples");
    std::sort(rows.begin(), rows.end(), [&](int a, int b) {
      const auto ha = fnv1a(salt + d.filenames[a]), hb = fnv1a(salt + d.filenames[b]);
      return ha != hb ? ha < hb : d.filenames[a] < d.filenames[b];
    });
    const int n = static_cast<int>(rows.size());
    const int n_test = std::clamp(static_cast<int>(std::lround(n * test_fraction)), 1, n - 2);
    const int n_val = std::clamp(static_cast<int>(std::lround((n - n_test) * val_fraction)), val_fraction > 0 ? 1 : 0, n - n_test - 1);
    for (int k = 0; k < n; ++k) d.split[rows[k]] = k < n_test ? Split::test : (k < n_test + n_val ? Split::val : Split::train);
  }
}

/// Split fractions shipped with the dataset presets.
inline std::pair<double, double> preset_split_fractions(const std::string& dataset) {
  if (dataset == "yale") return {0.5, 0.2};
  if (dataset == "norb") return {0.5, 0.2};
  return {0.2, 0.2};  // celeba and desk
}

// ---------------------------------------------------------------------------
// Manifest CSV: filename,y,z_0,...,z_{N-1},split  (paths relative to the CSV)

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(detail::trim(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(detail::trim(cur));
  return out;
}

/// Writes images as PNG next to the manifest and the label table as CSV.
inline void write_manifest(const Dataset& d, const std::string& csv_path) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(csv_path).parent_path();
  if (!dir.empty()) fs::create_directories(dir);
  std::ofstream f(csv_path);
  if (!f) throw DataError("cannot write manifest '" + csv_path + "'");
  f << "filename,y";
  for (int a = 0; a < d.n_attributes; ++a) f << ",z_" << a;
  f << ",split\n";
  const std::size_t per = num_elements(d.image_shape);
  for (int i = 0; i < d.size(); ++i) {
    Tensor<float> img(d.image_shape, std::vector<float>(d.images.data() + i * per, d.images.data() + (i + 1) * per));
    const fs::path img_path = dir / d.filenames[i];
    if (img_path.has_parent_path()) fs::create_directories(img_path.parent_path());
    write_png(img_path.string(), img);
    f << d.filenames[i] << ',' << d.y[i];
    for (int a = 0; a < d.n_attributes; ++a) {
      f << ',';
      if (d.has_z[i]) f << format_double(d.z.at(i, a));
    }
    f << ',' << to_string(d.split[i]) << '\n';
  }
  if (!f) throw DataError("write failed for manifest '" + csv_path + "'");
}

/// Reads a manifest and decodes every referenced image. Empty attribute
/// cells mark a sample without attribute labels.
inline Dataset read_manifest(const std::string& csv_path, int channels, int n_classes = 0) {
  namespace fs = std::filesystem;
  std::ifstream f(csv_path);
  if (!f) throw DataError("cannot open manifest '" + csv_path + "'");
  std::string line;
  if (!std::getline(f, line)) throw DataError(csv_path + ": empty manifest");
  const auto header = split_csv_line(line);
  if (header.size() < 3 || header.front() != "filename" || header[1] != "y" || header.back() != "split") {
    throw DataError(csv_path + ": header must be filename,y,z_0..z_{N-1},split");
  }
  const int n_attr = static_cast<int>(header.size()) - 3;
  for (int a = 0; a < n_attr; ++a)
    if (header[2 + a] != "z_" + std::to_string(a)) throw DataError(csv_path + ": unexpected column '" + header[2 + a] + "'");
  Dataset d;
  d.n_attributes = n_attr;
  std::vector<float> zs;
  std::vector<Tensor<float>> imgs;
  const fs::path dir = fs::path(csv_path).parent_path();
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    const std::string where = csv_path + ":" + std::to_string(lineno);
    if (cells.size() != header.size()) throw DataError(where + ": expected " + std::to_string(header.size()) + " columns");
    d.filenames.push_back(cells[0]);
    try {
      d.y.push_back(std::stoi(cells[1]));
    } catch (const std::exception&) {
      throw DataError(where + ": invalid class label '" + cells[1] + "'");
    }
    bool labeled = true;
    for (int a = 0; a < n_attr; ++a) {
      const std::string& c = cells[2 + a];
      if (c.empty()) {
        labeled = false;
        zs.push_back(0.0f);
        continue;
      }
      try {
        zs.push_back(std::stof(c));
      } catch (const std::exception&) {
        throw DataError(where + ": invalid attribute value '" + c + "'");
      }
    }
    d.has_z.push_back(labeled ? 1 : 0);
    try {
      d.split.push_back(parse_split(cells.back()));
    } catch (const Error& e) {
      throw DataError(where + ": " + e.what());
    }
    imgs.push_back(read_png((dir / cells[0]).string(), channels));
    if (imgs.back().shape() != imgs.front().shape()) throw DataError((dir / cells[0]).string() + ": image size differs from the first image");
  }
  if (imgs.empty()) throw DataError(csv_path + ": no samples");
  d.image_shape = imgs.front().shape();
  const int n = static_cast<int>(imgs.size());
  Shape batch_shape = d.image_shape;
  batch_shape.insert(batch_shape.begin(), 1);
  std::vector<Tensor<float>> batched;
  for (auto& t : imgs) batched.push_back(t.reshaped(batch_shape));
  d.images = concat_rows<float>(batched);
  d.z = Tensor<float>({n, n_attr}, std::move(zs));
  d.n_classes = n_classes > 0 ? n_classes : *std::max_element(d.y.begin(), d.y.end()) + 1;
  d.validate();
  return d;
}

// ---------------------------------------------------------------------------
// Batches

/// Seed for (master seed, stream tag, counter); streams never share state.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t counter) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), static_cast<std::uint32_t>(tag),
                    static_cast<std::uint32_t>(counter), static_cast<std::uint32_t>(counter >> 32)};
  std::mt19937_64 rng(seq);
  return rng();
}

/// One epoch of batches over `rows`; shuffled by (seed, epoch) when `shuffle`.
/// The final partial batch is kept.
inline std::vector<std::vector<int>> epoch_batches(std::vector<int> rows, int batch_size, std::uint64_t seed, int epoch,
                                                   bool shuffle = true) {
  if (batch_size < 1) throw DataError("batch size must be positive");
  if (shuffle) {
    std::mt19937_64 rng(derive_seed(seed, 1, static_cast<std::uint64_t>(epoch)));
    std::shuffle(rows.begin(), rows.end(), rng);
  }
  std::vector<std::vector<int>> out;
  for (std::size_t i = 0; i < rows.size(); i += batch_size) {
    out.emplace_back(rows.begin() + i, rows.begin() + std::min(rows.size(), i + batch_size));
  }
  return out;
}

/// Semi-supervised epoch: each batch holds exactly `labeled_per_batch`
/// attribute-labeled rows plus up to batch_size - labeled_per_batch
/// unlabeled rows. The epoch ends when the unlabeled rows are exhausted; the
/// labeled rows are recycled with a fresh shuffle on every pass. Positions
/// in the labeled stream are a function of (seed, epoch), so an epoch can be
/// replayed without carried state.
inline std::vector<std::vector<int>> ssl_batches(const std::vector<int>& labeled, const std::vector<int>& unlabeled,
                                                 int labeled_per_batch, int batch_size, std::uint64_t seed, int epoch) {
  if (labeled_per_batch < 1 || labeled_per_batch > batch_size) throw DataError("ssl: labeled_per_batch must be in [1, batch_size]");
  if (labeled.empty()) throw DataError("ssl: the labeled set is empty");
  if (labeled_per_batch == batch_size || unlabeled.empty()) return epoch_batches(labeled, batch_size, seed, epoch);
  const auto u_batches = epoch_batches(unlabeled, batch_size - labeled_per_batch, seed, epoch);
  const std::uint64_t n_l = labeled.size();
  std::uint64_t pos = static_cast<std::uint64_t>(epoch) * u_batches.size() * labeled_per_batch;
  std::vector<int> pass_order;
  std::uint64_t pass = ~0ull;
  auto labeled_at = [&](std::uint64_t p) {
    if (p / n_l != pass) {
      pass = p / n_l;
      pass_order = labeled;
      std::mt19937_64 rng(derive_seed(seed, 2, pass));
      std::shuffle(pass_order.begin(), pass_order.end(), rng);
    }
    return pass_order[p % n_l];
  };
  std::vector<std::vector<int>> out;
  for (const auto& ub : u_batches) {
    std::vector<int> b;
    for (int k = 0; k < labeled_per_batch; ++k) b.push_back(labeled_at(pos++));
    b.insert(b.end(), ub.begin(), ub.end());
    out.push_back(std::move(b));
  }
  return out;
}

/// Keeps attribute labels for round(fraction * n) of `rows` (seeded choice)
/// and clears the rest.
inline void keep_label_fraction(Dataset& d, const std::vector<int>& rows, double fraction, std::uint64_t seed) {
  if (!(fraction > 0 && fraction <= 1)) throw DataError("label fraction must be in (0,1]");
  std::vector<int> order = rows;
  std::mt19937_64 rng(derive_seed(seed, 3, 0));
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t keep = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(rows.size())));
  for (std::size_t i = 0; i < order.size(); ++i) d.has_z[order[i]] = i < keep ? 1 : 0;
}

/// Batch tensors gathered from a dataset.
struct Batch {
  Tensor<float> x;
  std::vector<int> y;
  Tensor<float> z;
  Mask has_y;
  Mask has_z;
};

inline Batch gather_batch(const Dataset& d, std::span<const int> rows) {
  Batch b;
  b.x = d.images.gather_rows(rows);
  b.z = d.z.gather_rows(rows);
  for (int r : rows) {
    b.y.push_back(d.y[r]);
    b.has_y.push_back(1);
    b.has_z.push_back(d.has_z[r]);
  }
  return b;
}

}  // namespace dualdis
