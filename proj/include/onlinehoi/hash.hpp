#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace onlinehoi {

/// 64-bit FNV-1a, incrementally.
class Fnv1a {
 public:
  Fnv1a& bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) h_ = (h_ ^ p[i]) * 0x100000001b3ULL;
    return *this;
  }
  Fnv1a& str(std::string_view s) { return bytes(s.data(), s.size()); }
  template <typename T>
  Fnv1a& pod(const T& v) {
    return bytes(&v, sizeof(T));
  }
  template <typename Derived>
  Fnv1a& matrix(const Eigen::DenseBase<Derived>& m) {
    pod(static_cast<std::int64_t>(m.rows())).pod(static_cast<std::int64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) pod(static_cast<double>(m(i, j)));
    return *this;
  }
  std::uint64_t value() const { return h_; }
  std::string hex() const { return to_hex(h_); }

  static std::string to_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
  }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

}  // namespace onlinehoi
