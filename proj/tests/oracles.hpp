#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

// Independent reference implementations used by the metric tests.
namespace oracle {

// Exact non-negative rational p/q.
struct Rational {
  std::int64_t p = 0;
  std::int64_t q = 1;

  Rational operator+(const Rational& o) const {
    const std::int64_t l = std::lcm(q, o.q);
    Rational r{p * (l / q) + o.p * (l / o.q), l};
    const std::int64_t g = std::gcd(r.p, r.q);
    return {r.p / g, r.q / g};
  }
  double value() const { return static_cast<double>(p) / static_cast<double>(q); }
};

// Position of gallery item j in the ranking of one similarity row: the number
// of items ahead of it under (higher similarity, then lower index).
inline std::size_t position(const std::vector<double>& row, std::size_t j) {
  std::size_t ahead = 0;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (row[i] > row[j] || (row[i] == row[j] && i < j)) ++ahead;
  }
  return ahead;
}

inline std::vector<std::size_t> ranking(const std::vector<double>& row) {
  std::vector<std::size_t> order(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) order[position(row, j)] = j;
  return order;
}

// Average precision of one query as an exact fraction, enumerating relevant positions.
inline Rational average_precision(const std::vector<double>& row, const std::vector<std::uint32_t>& gallery,
                                  std::uint32_t query) {
  std::vector<std::size_t> positions;
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (gallery[j] == query) positions.push_back(position(row, j) + 1);
  }
  Rational sum;
  for (std::size_t r : positions) {
    std::int64_t within = 0;
    for (std::size_t s : positions) within += s <= r;
    sum = sum + Rational{within, static_cast<std::int64_t>(r)};
  }
  return Rational{sum.p, sum.q * static_cast<std::int64_t>(positions.size())};
}

inline bool hit_within(const std::vector<double>& row, const std::vector<std::uint32_t>& gallery,
                       std::uint32_t query, std::size_t k) {
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (gallery[j] == query && position(row, j) < k) return true;
  }
  return false;
}

}  // namespace oracle
