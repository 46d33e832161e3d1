#pragma once

// Hafnians of symmetric complex matrices.
//
// hafnian():          power-trace inclusion-exclusion over pair subsets,
//                     O(2^n n^3) for a 2n x 2n matrix.
// hafnian_repeated(): hafnian of the matrix obtained by repeating row/column i
//                     reps[i] times, evaluated by first-row expansion
//                     haf = sum_j B_ij * mult_j * haf(reps - e_i - e_j)
//                     memoised over multiplicity vectors; cost prod(reps_i + 1).

#include <cstdint>
#include <vector>

#include "sqz/core.hpp"

namespace sqz {

inline void require_symmetric(const MatrixXcd& a, const char* who) {
  require(a.rows() == a.cols(), std::string(who) + ": matrix must be square");
  const double scale = std::max(1.0, max_abs(a));
  require(max_abs(a - a.transpose()) <= 1e-10 * scale, std::string(who) + ": matrix must be symmetric");
}

inline cd hafnian(const MatrixXcd& a) {
  require_symmetric(a, "hafnian");
  const Eigen::Index dim = a.rows();
  if (dim == 0) return 1.0;
  if (dim % 2 != 0) return 0.0;
  const int n = static_cast<int>(dim / 2);
  require(n <= 30, "hafnian: matrix too large for exact evaluation");

  // Pairs (2k, 2k+1); X swaps within each pair.
  cd total = 0.0;
  const std::uint64_t nsub = std::uint64_t{1} << n;
  std::vector<Eigen::Index> idx;
  std::vector<cd> traces(static_cast<std::size_t>(n + 1));
  std::vector<cd> poly(static_cast<std::size_t>(n + 1)), next(static_cast<std::size_t>(n + 1));
  for (std::uint64_t mask = 1; mask < nsub; ++mask) {
    idx.clear();
    for (int k = 0; k < n; ++k)
      if (mask & (std::uint64_t{1} << k)) {
        idx.push_back(2 * k);
        idx.push_back(2 * k + 1);
      }
    const auto sz = static_cast<Eigen::Index>(idx.size());
    MatrixXcd b(sz, sz);
    for (Eigen::Index r = 0; r < sz; ++r) {
      const Eigen::Index rx = idx[static_cast<std::size_t>(r ^ 1)]; // X applied on the left
      for (Eigen::Index c = 0; c < sz; ++c) b(r, c) = a(rx, idx[static_cast<std::size_t>(c)]);
    }
    Eigen::ComplexEigenSolver<MatrixXcd> es(b, false);
    const VectorXcd ev = es.eigenvalues();
    for (int p = 1; p <= n; ++p) {
      cd s = 0.0;
      for (Eigen::Index e = 0; e < ev.size(); ++e) s += std::pow(ev(e), p);
      traces[static_cast<std::size_t>(p)] = s / (2.0 * p);
    }
    // [lambda^n] exp(sum_p traces_p lambda^p), by the recurrence for exp of a series.
    std::fill(poly.begin(), poly.end(), cd(0.0));
    poly[0] = 1.0;
    for (int k = 1; k <= n; ++k) {
      cd acc = 0.0;
      for (int p = 1; p <= k; ++p)
        acc += static_cast<double>(p) * traces[static_cast<std::size_t>(p)] * poly[static_cast<std::size_t>(k - p)];
      poly[static_cast<std::size_t>(k)] = acc / static_cast<double>(k);
    }
    const int popcount = static_cast<int>(idx.size() / 2);
    const double sign = ((n - popcount) % 2 == 0) ? 1.0 : -1.0;
    total += sign * poly[static_cast<std::size_t>(n)];
  }
  return total;
}

namespace detail {

class RepeatedHafnian {
public:
  RepeatedHafnian(const MatrixXcd& b, const std::vector<int>& reps) : b_(b), reps_(reps) {
    stride_.resize(reps.size());
    std::size_t size = 1;
    for (std::size_t i = 0; i < reps.size(); ++i) {
      stride_[i] = size;
      size *= static_cast<std::size_t>(reps[i] + 1);
    }
    memo_.assign(size, cd(0.0));
    known_.assign(size, 0);
  }

  cd eval(std::vector<int>& cur) {
    std::size_t key = 0;
    int total = 0;
    for (std::size_t i = 0; i < cur.size(); ++i) {
      key += stride_[i] * static_cast<std::size_t>(cur[i]);
      total += cur[i];
    }
    if (total == 0) return 1.0;
    if (total % 2 != 0) return 0.0;
    if (known_[key]) return memo_[key];

    std::size_t first = 0;
    while (cur[first] == 0) ++first;
    cd acc = 0.0;
    --cur[first];
    for (std::size_t j = first; j < cur.size(); ++j) {
      if (cur[j] == 0) continue;
      const cd bij = b_(static_cast<Eigen::Index>(first), static_cast<Eigen::Index>(j));
      if (bij == cd(0.0)) continue;
      const double mult = static_cast<double>(cur[j]);
      --cur[j];
      acc += bij * mult * eval(cur);
      ++cur[j];
    }
    ++cur[first];
    memo_[key] = acc;
    known_[key] = 1;
    return acc;
  }

private:
  const MatrixXcd& b_;
  std::vector<int> reps_;
  std::vector<std::size_t> stride_;
  std::vector<cd> memo_;
  std::vector<char> known_;
};

} // namespace detail

// Hafnian of the matrix with row/column i repeated reps[i] times (0 removes it).
inline cd hafnian_repeated(const MatrixXcd& b, const std::vector<int>& reps) {
  require_symmetric(b, "hafnian_repeated");
  require(static_cast<Eigen::Index>(reps.size()) == b.rows(), "hafnian_repeated: reps length must match matrix size");
  double states = 1.0;
  for (int r : reps) {
    require(r >= 0, "hafnian_repeated: negative repetition");
    states *= r + 1;
  }
  require(states <= 5e7, "hafnian_repeated: pattern too large for exact evaluation");
  detail::RepeatedHafnian h(b, reps);
  std::vector<int> cur = reps;
  return h.eval(cur);
}

// Explicitly expanded matrix with row/column i repeated reps[i] times.
inline MatrixXcd expand_repeated(const MatrixXcd& b, const std::vector<int>& reps) {
  std::vector<Eigen::Index> idx;
  for (std::size_t i = 0; i < reps.size(); ++i)
    for (int k = 0; k < reps[i]; ++k) idx.push_back(static_cast<Eigen::Index>(i));
  return b(idx, idx);
}

} // namespace sqz
