#pragma once

#include <cstdint>
#include <cmath>

namespace nsum {

/**
 * Counter-based random stream (Philox 4x32-10).
 *
 * A stream is identified by (seed, stream_id).  Streams with distinct ids
 * walk disjoint counter blocks, so they are independent by construction and
 * cheap to create in bulk (one per chain, per replicate, ...).  The same
 * (seed, stream_id) always yields the same variate sequence on any platform.
 */
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id)
      : key0_(static_cast<std::uint32_t>(seed)),
        key1_(static_cast<std::uint32_t>(seed >> 32)),
        stream_lo_(static_cast<std::uint32_t>(stream_id)),
        stream_hi_(static_cast<std::uint32_t>(stream_id >> 32)) {}

  std::uint64_t seed() const {
    return (static_cast<std::uint64_t>(key1_) << 32) | key0_;
  }
  std::uint64_t stream_id() const {
    return (static_cast<std::uint64_t>(stream_hi_) << 32) | stream_lo_;
  }

  // Derived stream decorrelated from this one; used to hand substreams to
  // replicates/chains without coordinating id ranges at call sites.
  RngStream substream(std::uint64_t child_id) const;

  std::uint32_t next_u32();
  std::uint64_t next_u64();

  // Uniform on (0,1), never exactly 0 or 1.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer uniform on [0, n).
  std::uint64_t below(std::uint64_t n);

  double normal();
  double exponential() { return -std::log(uniform()); }
  double gamma(double shape, double rate);
  double beta(double a, double b);
  long poisson(double lambda);
  long binomial(long n, double p);

 private:
  void refill();

  std::uint32_t key0_, key1_;
  std::uint32_t stream_lo_, stream_hi_;
  std::uint64_t counter_ = 0;  // block index within the stream
  std::uint32_t buf_[4] = {0, 0, 0, 0};
  int buf_pos_ = 4;
  bool have_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

}  // namespace nsum
