#include "searchrec/recpolicy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace searchrec {

double multiset_probability(std::span<const double> row, const RecAction& r) {
  const auto& s = r.slots;
  const double p = row[s[0]] * row[s[1]] * row[s[2]];
  // Number of orderings of the multiset: 6 / (product of multiplicity factorials).
  if (s[0] == s[2]) return p;
  if (s[0] == s[1] || s[1] == s[2]) return 3.0 * p;
  return 6.0 * p;
}

Vector project_to_simplex(std::span<const double> v) {
  require(!v.empty(), "project_to_simplex: empty vector");
  Vector u(v.begin(), v.end());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0, theta = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    cum += u[i];
    const double t = (cum - 1.0) / static_cast<double>(i + 1);
    if (u[i] - t > 0.0) theta = t;
  }
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::max(0.0, v[i] - theta);
  return out;
}

void validate_stochastic(const Matrix& m, double tol) {
  require(!m.empty(), "matrix policy: empty matrix");
  for (const auto& row : m) {
    require(row.size() == m.size(), "matrix policy: matrix must be K x K");
    double s = 0.0;
    for (double x : row) {
      require(x >= -tol && std::isfinite(x), "matrix policy: negative or non-finite entry");
      s += x;
    }
    require(std::abs(s - 1.0) <= tol, "matrix policy: rows must sum to 1");
  }
}

MatrixRecPolicy::MatrixRecPolicy(Matrix m) {
  validate_stochastic(m);
  matrices_.push_back(std::move(m));
}

MatrixRecPolicy::MatrixRecPolicy(std::vector<Matrix> per_period) : matrices_(std::move(per_period)) {
  require(!matrices_.empty(), "matrix policy: no periods");
  for (const auto& m : matrices_) {
    validate_stochastic(m);
    require(m.size() == matrices_.front().size(), "matrix policy: inconsistent K across periods");
  }
}

const Matrix& MatrixRecPolicy::matrix(int t) const {
  if (matrices_.size() == 1) return matrices_.front();
  require(t >= 1 && static_cast<std::size_t>(t) <= matrices_.size(), "matrix policy: period out of range");
  return matrices_[static_cast<std::size_t>(t - 1)];
}

RecAction MatrixRecPolicy::sample(const RecState& state, Rng& rng) const {
  const auto& row = matrix(std::min<int>(state.t, static_cast<int>(matrices_.size())))[state.a];
  const int a = static_cast<int>(rng.categorical(row));
  const int b = static_cast<int>(rng.categorical(row));
  const int c = static_cast<int>(rng.categorical(row));
  return RecAction::make(a, b, c);
}

}  // namespace searchrec
