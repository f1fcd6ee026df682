#ifndef VIBENCH_SEEDING_HPP
#define VIBENCH_SEEDING_HPP

#include <cstdint>
#include <string_view>

namespace vibench {

/// splitmix64 finaliser; used to derive independent streams from one seed.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return mix_seed(master ^ mix_seed(stream));
}

/// FNV-1a of a cell identifier such as "robust_regression/d20/mf_gaussian".
constexpr std::uint64_t hash_label(std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t cell_seed(std::uint64_t master, std::string_view cell_id) {
  return derive_seed(master, hash_label(cell_id));
}

}  // namespace vibench

#endif
