#pragma once

// Independent evaluation of the NORB assignments: linear decay over 15 (elevation)
// and 9 (azimuth, wrapped) degrees from each center.

#include <algorithm>
#include <array>
#include <cmath>

namespace dualdis::testing {

inline std::array<double, 8> norb_reference(int light, double e, double a) {
  const double lights[6] = {0.6, 0.3, 0.0, 0.7, 0.4, 1.0};
  std::array<double, 8> z{};
  z[0] = lights[light];
  const double ec[3] = {35, 50, 65};
  for (int i = 0; i < 3; ++i) {
    const double d = e > ec[i] ? e - ec[i] : ec[i] - e;
    z[1 + i] = d >= 15 ? 0.0 : 1.0 - d / 15;
  }
  const double ac[4] = {0, 90, 180, 270};
  for (int j = 0; j < 4; ++j) {
    double d = 360;
    for (double shift : {-360.0, 0.0, 360.0}) d = std::min(d, std::abs(a + shift - ac[j]));
    z[4 + j] = d >= 9 ? 0.0 : 1.0 - d / 9;
  }
  return z;
}

}  // namespace dualdis::testing
