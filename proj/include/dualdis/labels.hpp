#pragma once

// Attribute-label preprocessing for the NORB and Yale-B style datasets.

#include <array>
#include <cmath>

#include "dualdis/keyvalue.hpp"

namespace dualdis {

class LabelError : public Error {
 public:
  using Error::Error;
};

inline constexpr int kNorbAttributes = 8;
inline constexpr std::array<double, 6> kNorbLighting{0.6, 0.3, 0.0, 0.7, 0.4, 1.0};
inline constexpr std::array<double, 3> kNorbElevationCenters{35, 50, 65};
inline constexpr std::array<double, 4> kNorbAzimuthCenters{0, 90, 180, 270};

/// Angular distance on the 360-degree circle.
inline double circular_distance(double a, double b) {
  const double d = std::fmod(std::abs(a - b), 360.0);
  return std::min(d, 360.0 - d);
}

/// z = [lighting, 3 elevation memberships, 4 azimuth memberships].
/// Elevation membership decays linearly over 15 degrees; azimuth over
/// `azimuth_divisor` degrees of circular distance.
inline std::array<double, kNorbAttributes> norb_soft_labels(int lighting, double elevation, double azimuth,
                                                           double azimuth_divisor = 9.0) {
  if (lighting < 0 || lighting > 5) throw LabelError("norb: lighting class " + std::to_string(lighting) + " outside 0..5");
  if (!(elevation >= 30 && elevation <= 70)) throw LabelError("norb: elevation " + format_double(elevation) + " outside [30,70]");
  if (!(azimuth >= 0 && azimuth <= 340)) throw LabelError("norb: azimuth " + format_double(azimuth) + " outside [0,340]");
  if (!(azimuth_divisor > 0)) throw LabelError("norb: azimuth divisor must be positive");
  std::array<double, kNorbAttributes> z{};
  z[0] = kNorbLighting[lighting];
  for (int i = 0; i < 3; ++i) z[1 + i] = 1.0 - std::min(1.0, std::abs(elevation - kNorbElevationCenters[i]) / 15.0);
  for (int j = 0; j < 4; ++j)
    z[4 + j] = 1.0 - std::min(1.0, circular_distance(azimuth, kNorbAzimuthCenters[j]) / azimuth_divisor);
  return z;
}

/// Grid of (elevation, azimuth) cells mapped to lighting cluster ids.
/// Cells are half-open [lo, hi) except the last row/column, which is closed.
struct LightClusterTable {
  std::vector<double> elevation_edges;  // ascending, rows + 1 values
  std::vector<double> azimuth_edges;    // ascending, cols + 1 values
  std::vector<int> cells;               // row-major cluster ids
  int n_clusters = 14;

  int rows() const { return static_cast<int>(elevation_edges.size()) - 1; }
  int cols() const { return static_cast<int>(azimuth_edges.size()) - 1; }

  void validate() const {
    auto ascending = [](const std::vector<double>& e) {
      for (std::size_t i = 1; i < e.size(); ++i)
        if (!(e[i] > e[i - 1])) return false;
      return e.size() >= 2;
    };
    if (!ascending(elevation_edges) || !ascending(azimuth_edges)) throw LabelError("cluster table: edges must be strictly ascending with >= 2 values");
    if (cells.size() != static_cast<std::size_t>(rows() * cols())) {
      throw LabelError("cluster table: expected " + std::to_string(rows() * cols()) + " cells, got " + std::to_string(cells.size()));
    }
    for (int c : cells)
      if (c < 0 || c >= n_clusters) throw LabelError("cluster table: cluster id " + std::to_string(c) + " outside 0.." + std::to_string(n_clusters - 1));
  }

  /// Reads `elevation_edges`, `azimuth_edges`, `cells` and optional `clusters`.
  static LightClusterTable parse(const std::string& text, const std::string& source = "cluster table") {
    KeyValues kv = KeyValues::parse(text, source);
    LightClusterTable t;
    t.elevation_edges = kv.get_doubles("elevation_edges");
    t.azimuth_edges = kv.get_doubles("azimuth_edges");
    for (const auto& s : kv.get_list("cells")) {
      try {
        std::size_t used = 0;
        t.cells.push_back(std::stoi(s, &used));
        if (used != s.size()) throw std::invalid_argument(s);
      } catch (const std::exception&) {
        throw LabelError(source + ": invalid cluster id '" + s + "'");
      }
    }
    if (kv.has("clusters")) t.n_clusters = kv.get_int("clusters");
    kv.reject_unused(source);
    t.validate();
    return t;
  }

  int cluster(double elevation, double azimuth) const {
    auto locate = [](const std::vector<double>& edges, double v) {
      if (v < edges.front() || v > edges.back()) return -1;
      const auto it = std::upper_bound(edges.begin(), edges.end(), v);
      return std::min(static_cast<int>(it - edges.begin()) - 1, static_cast<int>(edges.size()) - 2);
    };
    const int r = locate(elevation_edges, elevation), c = locate(azimuth_edges, azimuth);
    if (r < 0 || c < 0) {
      throw LabelError("light angle (" + format_double(elevation) + ", " + format_double(azimuth) + ") lies outside the cluster table");
    }
    return cells[static_cast<std::size_t>(r * cols() + c)];
  }
};

/// One-hot lighting cluster vector.
inline std::vector<double> yale_light_cluster(double elevation, double azimuth, const LightClusterTable& table) {
  std::vector<double> z(static_cast<std::size_t>(table.n_clusters), 0.0);
  z[static_cast<std::size_t>(table.cluster(elevation, azimuth))] = 1.0;
  return z;
}

}  // namespace dualdis
