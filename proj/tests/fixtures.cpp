#include "fixtures.hpp"

namespace covsteer::testing {

LinearGaussianSystem random_valid_system(std::mt19937_64& rng, Eigen::Index n, Eigen::Index m,
                                         Eigen::Index p) {
  for (;;) {
    LinearGaussianSystem sys(random_matrix(rng, n, n), random_matrix(rng, n, m),
                             random_matrix(rng, n, m), random_matrix(rng, p, n),
                             random_matrix(rng, p, p, 0.15) + eye(p));
    if (validate_system(sys).passed()) return sys;
  }
}

}  // namespace covsteer::testing
