#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>

namespace spectraprobe {

/// Philox4x32-10 counter-based generator (Salmon et al., Random123).
///
/// The 64-bit key selects an independent stream; the 128-bit counter is
/// laid out as (block index low, block index high, 0, substream). Each
/// block yields two 64-bit outputs. Outputs depend only on (key, substream,
/// draw index), so analyses that derive keys from (seed, group) are
/// independent of evaluation order.
class Philox4x32 {
 public:
  using result_type = std::uint64_t;
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  explicit Philox4x32(std::uint64_t key, std::uint32_t substream = 0);

  /// Stream for one analysis group: key = seed XOR group index.
  static Philox4x32 for_group(std::uint64_t seed, std::uint64_t group,
                              std::uint32_t substream = 0) {
    return Philox4x32(seed ^ group, substream);
  }

  /// The raw 10-round bijection.
  static Counter block(Counter ctr, Key key);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()();

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();

  /// Unbiased integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);

  /// Standard normal deviate (Box-Muller, pairs cached).
  double normal();

 private:
  Key key_{};
  std::uint32_t substream_ = 0;
  std::uint64_t block_index_ = 0;
  std::array<std::uint64_t, 2> buffer_{};
  int buffered_ = 0;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace spectraprobe
