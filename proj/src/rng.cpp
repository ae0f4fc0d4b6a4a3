#include "saef/rng.hpp"

#include <cmath>
#include <numbers>

namespace saef {

std::uint64_t mix64(std::uint64_t z) noexcept {
  // splitmix64 finalizer
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

RngStream RngStream::derive(std::uint64_t master_seed, std::uint64_t index) {
  const std::uint64_t k = mix64(mix64(master_seed ^ 0x5aef5aef5aef5aefULL) + mix64(index + 1));
  return RngStream(k, 0);
}

std::uint64_t RngStream::next_u64() noexcept {
  constexpr std::uint64_t golden = 0x9e3779b97f4a7c15ULL;
  const std::uint64_t c = counter_++;
  return mix64(mix64(key_ + c * golden) ^ key_);
}

double RngStream::uniform() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t RngStream::below(std::uint64_t n) noexcept {
  return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

double RngStream::normal() noexcept {
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double RngStream::student_t(double dof) noexcept {
  const double z = normal();
  double chi2 = 0.0;
  const int n = static_cast<int>(dof);
  for (int i = 0; i < n; ++i) {
    const double g = normal();
    chi2 += g * g;
  }
  return z / std::sqrt(chi2 / dof);
}

}  // namespace saef
